//! Time-tag data model and file formats.
//!
//! Binary `.qtag` layout, all integers little-endian:
//!
//! ```text
//! offset 0   "QTAG"            magic
//! offset 4   u16               version (1)
//! offset 6   [u8; 10]          reserved, zero
//! offset 16  { u8 channel, i64 timestamp_ps } * n   (9 bytes each)
//! ```
//!
//! CSV layout: header `channel,timestamp_ps`, then one `channel,timestamp`
//! line per tag with integer fields.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"QTAG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 9;
pub const CSV_HEADER: &str = "channel,timestamp_ps";

#[derive(Debug, Error)]
pub enum TagError {
    #[error("bad magic {0:02x?}, expected \"QTAG\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("file shorter than the {HEADER_LEN}-byte header")]
    MissingHeader,
    #[error("truncated record at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("csv: missing `{CSV_HEADER}` header")]
    MissingCsvHeader,
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("conflicting channel roles for {role}: {a} vs {b}")]
    RoleConflict { role: Role, a: u8, b: u8 },
    #[error("stream is not sorted")]
    Unsorted,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One detector or clock event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeTag {
    pub channel: u8,
    /// Picoseconds.
    pub timestamp: i64,
}

impl TimeTag {
    pub fn new(channel: u8, timestamp: i64) -> Self {
        Self { channel, timestamp }
    }
}

impl Ord for TimeTag {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.timestamp, self.channel).cmp(&(other.timestamp, other.channel))
    }
}

impl PartialOrd for TimeTag {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Labels attached to channels of an HBT measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Clock,
    ArmA,
    ArmB,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Clock => "clock",
            Role::ArmA => "arm_a",
            Role::ArmB => "arm_b",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clock" => Ok(Role::Clock),
            "arm_a" => Ok(Role::ArmA),
            "arm_b" => Ok(Role::ArmB),
            other => Err(format!("unknown channel role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagStream {
    pub tags: Vec<TimeTag>,
    /// Set once the tags are known to be ordered by `(timestamp, channel)`.
    pub sorted: bool,
    pub roles: BTreeMap<Role, u8>,
}

impl TagStream {
    pub fn new(tags: Vec<TimeTag>) -> Self {
        Self {
            tags,
            sorted: false,
            roles: BTreeMap::new(),
        }
    }

    pub fn with_role(mut self, role: Role, channel: u8) -> Self {
        self.roles.insert(role, channel);
        self
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn channel_of(&self, role: Role) -> Option<u8> {
        self.roles.get(&role).copied()
    }

    /// Timestamps of one channel, in stream order.
    pub fn times(&self, channel: u8) -> Vec<i64> {
        self.tags
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.timestamp)
            .collect()
    }

    pub fn count(&self, channel: u8) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }

    pub fn is_ordered(&self) -> bool {
        self.tags.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Reads a `.qtag` file image.
pub fn parse_binary(bytes: &[u8]) -> Result<TagStream, TagError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(TagError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(TagError::MissingHeader);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(TagError::BadMagic(magic));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(TagError::BadVersion(version));
    }
    let body = &bytes[HEADER_LEN..];
    let whole = body.len() / RECORD_LEN * RECORD_LEN;
    if whole != body.len() {
        return Err(TagError::Truncated {
            offset: HEADER_LEN + whole,
        });
    }
    let tags = body
        .chunks_exact(RECORD_LEN)
        .map(|rec| TimeTag {
            channel: rec[0],
            timestamp: i64::from_le_bytes(rec[1..9].try_into().unwrap()),
        })
        .collect();
    Ok(TagStream::new(tags))
}

/// Serialises a stream to the `.qtag` layout.
pub fn write_binary(stream: &TagStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.tags.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&[0u8; 10]);
    for t in &stream.tags {
        out.push(t.channel);
        out.extend_from_slice(&t.timestamp.to_le_bytes());
    }
    out
}

/// Reads the CSV layout. Line numbers in errors are 1-based.
pub fn parse_csv(text: &str) -> Result<TagStream, TagError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(TagError::MissingCsvHeader),
    }
    let mut tags = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (Some(ch), Some(ts), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(TagError::Csv {
                line: line_no,
                reason: "expected exactly two fields".into(),
            });
        };
        let channel = ch.trim().parse::<u8>().map_err(|e| TagError::Csv {
            line: line_no,
            reason: format!("channel `{}`: {e}", ch.trim()),
        })?;
        let timestamp = ts.trim().parse::<i64>().map_err(|e| TagError::Csv {
            line: line_no,
            reason: format!("timestamp `{}`: {e}", ts.trim()),
        })?;
        tags.push(TimeTag { channel, timestamp });
    }
    Ok(TagStream::new(tags))
}

pub fn write_csv<W: Write>(stream: &TagStream, mut out: W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for t in &stream.tags {
        writeln!(out, "{},{}", t.channel, t.timestamp)?;
    }
    Ok(())
}

/// Stable sort by `(timestamp, channel)`.
///
/// Returns the sorted stream and the number of tags that ended up at a
/// different index than they started at (a reversed three-tag stream
/// reports 2: the middle tag stays put).
pub fn sort_and_validate(mut stream: TagStream) -> (TagStream, usize) {
    let mut indexed: Vec<(usize, TimeTag)> = stream.tags.iter().copied().enumerate().collect();
    indexed.sort_by_key(|&(_, tag)| tag);
    let moved = indexed
        .iter()
        .enumerate()
        .filter(|(pos, (orig, _))| pos != orig)
        .count();
    stream.tags = indexed.into_iter().map(|(_, t)| t).collect();
    stream.sorted = true;
    (stream, moved)
}

/// k-way merge of sorted streams; channel roles are unioned.
pub fn merge(streams: &[TagStream]) -> Result<TagStream, TagError> {
    let mut roles = BTreeMap::new();
    for s in streams {
        if !s.is_ordered() {
            return Err(TagError::Unsorted);
        }
        for (&role, &ch) in &s.roles {
            match roles.insert(role, ch) {
                Some(prev) if prev != ch => {
                    return Err(TagError::RoleConflict { role, a: prev, b: ch })
                }
                _ => {}
            }
        }
    }

    // Min-heap on (tag, stream index) so ties keep input order.
    let mut heap = BinaryHeap::new();
    for (i, s) in streams.iter().enumerate() {
        if let Some(&t) = s.tags.first() {
            heap.push(std::cmp::Reverse((t, i, 0usize)));
        }
    }
    let total = streams.iter().map(|s| s.tags.len()).sum();
    let mut tags = Vec::with_capacity(total);
    while let Some(std::cmp::Reverse((t, i, pos))) = heap.pop() {
        tags.push(t);
        if let Some(&next) = streams[i].tags.get(pos + 1) {
            heap.push(std::cmp::Reverse((next, i, pos + 1)));
        }
    }
    Ok(TagStream {
        tags,
        sorted: true,
        roles,
    })
}
