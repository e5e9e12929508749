//! Correlation, gating and fitting on sorted time-tag channels.
//!
//! Correlators take the timestamps of one channel as a sorted `&[i64]`
//! (see [`TagStream::times`](crate::tagio::TagStream::times)). Frequencies
//! in spectra are ordinary frequencies in GHz relative to `ω0`; times are
//! integer picoseconds.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detchain::FWHM_PER_SIGMA;
use crate::physmodel::rabi_from_shift;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("input timestamps are not sorted")]
    Unsorted,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no counts in the side-peak windows")]
    EmptySidePeaks,
    #[error("need at least {needed} spectrum points below -{exclusion} GHz, found {found}")]
    TooFewPoints {
        needed: usize,
        found: usize,
        exclusion: f64,
    },
    #[error("spectrum has no peak below the exclusion zone")]
    NoPeak,
    #[error("x values are degenerate")]
    DegenerateX,
    #[error("fit window holds {0} non-empty bins, need at least 10")]
    EmptyWindow(usize),
    #[error("unphysical positive shift {0} GHz")]
    PositiveShift(f64),
    #[error("scan point at {center} GHz failed: {reason}")]
    ScanPoint { center: f64, reason: String },
}

fn check_sorted(t: &[i64]) -> Result<(), AnalysisError> {
    if t.windows(2).all(|w| w[0] <= w[1]) {
        Ok(())
    } else {
        Err(AnalysisError::Unsorted)
    }
}

/// A value with a one-sigma uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Histogram of delays `t_b − t_a`; bin `k` is centered at `(k − K)·bin_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width: i64,
    /// Largest |τ| covered, a multiple of `bin_width`.
    pub span: i64,
    pub counts: Vec<u64>,
    pub events_a: usize,
    pub events_b: usize,
    /// Time between the first and last tag of either channel, ps.
    pub acquisition: i64,
}

impl CorrelationHistogram {
    fn half_bins(&self) -> i64 {
        self.span / self.bin_width
    }

    pub fn delay(&self, bin: usize) -> i64 {
        (bin as i64 - self.half_bins()) * self.bin_width
    }

    pub fn delays(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.counts.len()).map(|i| self.delay(i))
    }

    /// Counts in bins whose center lies in `[lo, hi]`.
    pub fn sum_between(&self, lo: i64, hi: i64) -> u64 {
        self.delays()
            .zip(&self.counts)
            .filter(|(d, _)| *d >= lo && *d <= hi)
            .map(|(_, c)| c)
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "# {{\"bin_width_ps\": {}, \"span_ps\": {}, \"events_a\": {}, \"events_b\": {}}}",
            self.bin_width, self.span, self.events_a, self.events_b
        )?;
        writeln!(out, "tau_ps,counts")?;
        for (d, c) in self.delays().zip(&self.counts) {
            writeln!(out, "{d},{c}")?;
        }
        Ok(())
    }
}

fn delay_bin(tau: i64, bin_width: i64) -> i64 {
    // Round half away from zero so that swapping channels mirrors the histogram exactly.
    tau.signum() * ((tau.abs() + bin_width / 2) / bin_width)
}

/// Histogram of all pairwise delays `t_b − t_a` with `|τ| ≤ span`.
pub fn cross_correlate(
    a: &[i64],
    b: &[i64],
    bin_width: i64,
    span: i64,
) -> Result<CorrelationHistogram, AnalysisError> {
    if bin_width <= 0 || span < 0 {
        return Err(AnalysisError::InvalidArgument(
            "bin_width must be positive and span non-negative".into(),
        ));
    }
    check_sorted(a)?;
    check_sorted(b)?;
    let half = span / bin_width;
    let span = half * bin_width;
    let mut counts = vec![0u64; (2 * half + 1) as usize];
    let mut lo = 0usize;
    for &ta in a {
        while lo < b.len() && b[lo] < ta - span {
            lo += 1;
        }
        for &tb in &b[lo..] {
            let tau = tb - ta;
            if tau > span {
                break;
            }
            let k = delay_bin(tau, bin_width);
            if k.abs() <= half {
                counts[(k + half) as usize] += 1;
            }
        }
    }
    let first = a.first().into_iter().chain(b.first()).min();
    let last = a.last().into_iter().chain(b.last()).max();
    let acquisition = match (first, last) {
        (Some(f), Some(l)) => l - f,
        _ => 0,
    };
    Ok(CorrelationHistogram {
        bin_width,
        span,
        counts,
        events_a: a.len(),
        events_b: b.len(),
        acquisition,
    })
}

/// Central-peak area over the mean area of the peaks at `±rep_period`.
///
/// Each window is `rep_period / 2` wide (integer ps), centered on its peak.
pub fn g2_zero(hist: &CorrelationHistogram, rep_period: i64) -> Result<Estimate, AnalysisError> {
    if rep_period <= 0 {
        return Err(AnalysisError::InvalidArgument("rep_period must be positive".into()));
    }
    if 2 * hist.span < 3 * rep_period {
        return Err(AnalysisError::InvalidArgument(format!(
            "span {} ps is shorter than 1.5 repetition periods",
            hist.span
        )));
    }
    let window = rep_period / 2;
    if window % hist.bin_width != 0 {
        return Err(AnalysisError::InvalidArgument(format!(
            "bin width {} ps does not divide the {window} ps window",
            hist.bin_width
        )));
    }
    let half = window / 2;
    let area = |c: i64| hist.sum_between(c - half, c + half) as f64;
    let center = area(0);
    let side = 0.5 * (area(-rep_period) + area(rep_period));
    if side == 0.0 {
        return Err(AnalysisError::EmptySidePeaks);
    }
    let value = center / side;
    // Poisson errors on the central area and on the sum of both side areas.
    let rel = (1.0 / center.max(1.0) + 1.0 / (2.0 * side)).sqrt();
    let error = if center > 0.0 {
        value * rel
    } else {
        1.0 / side
    };
    Ok(Estimate { value, error })
}

/// A cross-channel coincidence. Arm B is the herald in gated analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub a: i64,
    pub b: i64,
}

impl Pair {
    pub fn early(&self) -> i64 {
        self.a.min(self.b)
    }

    pub fn late(&self) -> i64 {
        self.a.max(self.b)
    }
}

/// All pairs with `|t_a − t_b| ≤ window`, ordered by `t_a` and, for each arm-A tag, by `t_b`.
pub fn coincidence_pairs(a: &[i64], b: &[i64], window: i64) -> Result<Vec<Pair>, AnalysisError> {
    if window < 0 {
        return Err(AnalysisError::InvalidArgument("window must be non-negative".into()));
    }
    check_sorted(a)?;
    check_sorted(b)?;
    let mut out = Vec::new();
    let mut lo = 0usize;
    for &ta in a {
        while lo < b.len() && b[lo] < ta - window {
            lo += 1;
        }
        for &tb in &b[lo..] {
            if tb > ta + window {
                break;
            }
            out.push(Pair { a: ta, b: tb });
        }
    }
    Ok(out)
}

/// Time since the latest clock tag at or before `t`.
pub fn since_clock(clock: &[i64], t: i64) -> Option<i64> {
    let i = clock.partition_point(|&c| c <= t);
    (i > 0).then(|| t - clock[i - 1])
}

/// Counts on a `[0, n·bin_width)` time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeHistogram {
    pub bin_width: i64,
    pub counts: Vec<u64>,
}

impl TimeHistogram {
    pub fn new(bin_width: i64) -> Self {
        Self {
            bin_width,
            counts: Vec::new(),
        }
    }

    pub fn from_times(times: impl IntoIterator<Item = i64>, bin_width: i64) -> Self {
        let mut h = Self::new(bin_width);
        for t in times {
            h.fill(t);
        }
        h
    }

    /// Adds one count; negative times are ignored.
    pub fn fill(&mut self, t: i64) {
        if t < 0 {
            return;
        }
        let i = (t / self.bin_width) as usize;
        if i >= self.counts.len() {
            self.counts.resize(i + 1, 0);
        }
        self.counts[i] += 1;
    }

    pub fn center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.bin_width as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        let n = self.total() as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(i, &c)| self.center(i) * c as f64)
            .sum::<f64>()
            / n
    }

    pub fn std_dev(&self) -> f64 {
        let n = self.total() as f64;
        let m = self.mean();
        let var = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (self.center(i) - m).powi(2) * c as f64)
            .sum::<f64>()
            / n;
        var.sqrt()
    }

    /// Center of the fullest bin.
    pub fn peak_time(&self) -> f64 {
        let i = argmax(&self.counts.iter().map(|&c| c as f64).collect::<Vec<_>>());
        self.center(i)
    }

    /// Full width at half maximum, linearly interpolated between bins.
    pub fn fwhm(&self) -> f64 {
        let y: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        half_max_width(&y) * self.bin_width as f64
    }

    /// Indices of local maxima of the boxcar-smoothed counts whose
    /// prominence exceeds `min_prominence` times the highest maximum.
    pub fn local_maxima(&self, smooth: usize, min_prominence: f64) -> Vec<usize> {
        let y = boxcar(
            &self.counts.iter().map(|&c| c as f64).collect::<Vec<_>>(),
            smooth,
        );
        prominent_maxima(&y, min_prominence)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t_ps,counts")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{c}", i as i64 * self.bin_width)?;
        }
        Ok(())
    }
}

fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = i;
        }
    }
    best
}

/// Width in samples at half the maximum of `y`.
pub fn half_max_width(y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let i = argmax(y);
    let half = y[i] / 2.0;
    let mut left = 0.0;
    let mut j = i;
    while j > 0 && y[j - 1] > half {
        j -= 1;
    }
    if j > 0 {
        left = (j - 1) as f64 + (half - y[j - 1]) / (y[j] - y[j - 1]);
    }
    let mut k = i;
    while k + 1 < y.len() && y[k + 1] > half {
        k += 1;
    }
    let right = if k + 1 < y.len() {
        k as f64 + (y[k] - half) / (y[k] - y[k + 1])
    } else {
        (y.len() - 1) as f64
    };
    right - left
}

pub fn boxcar(y: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return y.to_vec();
    }
    let h = width / 2;
    (0..y.len())
        .map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(y.len());
            y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Strict local maxima (plateaus count once) with prominence at least
/// `min_prominence` times the global maximum.
pub fn prominent_maxima(y: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = y.len();
    let top = y.iter().cloned().fold(0.0, f64::max);
    if n < 3 || top <= 0.0 {
        return Vec::new();
    }
    let mut peaks = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if y[i] > y[i - 1] {
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
        .into_iter()
        .filter(|&p| {
            let left = y[..p]
                .iter()
                .rev()
                .take_while(|&&v| v <= y[p])
                .cloned()
                .fold(y[p], f64::min);
            let right = y[p + 1..]
                .iter()
                .take_while(|&&v| v <= y[p])
                .cloned()
                .fold(y[p], f64::min);
            y[p] - left.max(right) >= min_prominence * top
        })
        .collect()
}

/// Histograms of early and late clicks relative to their latest preceding clock tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstSecond {
    pub first: TimeHistogram,
    pub second: TimeHistogram,
    /// Clicks that precede the first clock tag.
    pub dropped: usize,
}

pub fn first_second_histograms(
    pairs: &[Pair],
    clock: &[i64],
    bin_width: i64,
) -> Result<FirstSecond, AnalysisError> {
    if bin_width <= 0 {
        return Err(AnalysisError::InvalidArgument("bin_width must be positive".into()));
    }
    check_sorted(clock)?;
    let mut out = FirstSecond {
        first: TimeHistogram::new(bin_width),
        second: TimeHistogram::new(bin_width),
        dropped: 0,
    };
    for p in pairs {
        for (t, h) in [(p.early(), &mut out.first), (p.late(), &mut out.second)] {
            match since_clock(clock, t) {
                Some(dt) => h.fill(dt),
                None => out.dropped += 1,
            }
        }
    }
    Ok(out)
}

/// Keeps pairs whose arm-B (herald) click lies strictly inside `(t_min, t_max)` after its clock.
pub fn gated_pairs(
    pairs: &[Pair],
    clock: &[i64],
    gate: (f64, f64),
) -> Result<Vec<Pair>, AnalysisError> {
    if gate.0 >= gate.1 {
        return Err(AnalysisError::InvalidArgument(format!(
            "gate start {} must precede gate end {}",
            gate.0, gate.1
        )));
    }
    check_sorted(clock)?;
    let unbounded = gate.0 == f64::NEG_INFINITY && gate.1 == f64::INFINITY;
    Ok(pairs
        .iter()
        .filter(|p| {
            unbounded
                || since_clock(clock, p.b).is_some_and(|dt| {
                    let dt = dt as f64;
                    dt > gate.0 && dt < gate.1
                })
        })
        .copied()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingMode {
    /// All clicks on the filtered channel.
    Unheralded,
    /// Filtered clicks coinciding with a herald.
    TwoPhoton,
    /// Two-photon coincidences whose herald arrives after the drive.
    FirstPhoton,
}

impl GatingMode {
    pub fn name(&self) -> &'static str {
        match self {
            GatingMode::Unheralded => "unheralded",
            GatingMode::TwoPhoton => "two_photon",
            GatingMode::FirstPhoton => "first_photon",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Filter centers, GHz relative to `ω0`, strictly increasing.
    pub positions: Vec<f64>,
    pub counts: Vec<f64>,
    pub errors: Vec<f64>,
    pub mode: GatingMode,
}

impl Spectrum {
    /// Spectrum with Poisson errors.
    pub fn from_counts(positions: Vec<f64>, counts: Vec<f64>, mode: GatingMode) -> Self {
        let errors = counts.iter().map(|c| c.max(0.0).sqrt()).collect();
        Self {
            positions,
            counts,
            errors,
            mode,
        }
    }

    /// Position of the largest count among points within `[lo, hi]` GHz.
    pub fn max_position_in(&self, lo: f64, hi: f64) -> Option<f64> {
        self.positions
            .iter()
            .zip(&self.counts)
            .filter(|(p, _)| **p >= lo && **p <= hi)
            .fold(None, |best: Option<(f64, f64)>, (&p, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((p, c)),
            })
            .map(|(p, _)| p)
    }

    /// Full width at half maximum of the peak that contains the largest
    /// count within `[lo, hi]` GHz; assumes uniform spacing.
    pub fn fwhm_in(&self, lo: f64, hi: f64) -> f64 {
        let idx: Vec<usize> = (0..self.positions.len())
            .filter(|&i| self.positions[i] >= lo && self.positions[i] <= hi)
            .collect();
        if idx.len() < 2 {
            return 0.0;
        }
        let y: Vec<f64> = idx.iter().map(|&i| self.counts[i]).collect();
        let step = self.positions[idx[1]] - self.positions[idx[0]];
        half_max_width(&y) * step
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# {{\"mode\": \"{}\"}}", self.mode.name())?;
        writeln!(out, "position_GHz,counts,error")?;
        for i in 0..self.positions.len() {
            writeln!(
                out,
                "{},{},{}",
                self.positions[i], self.counts[i], self.errors[i]
            )?;
        }
        Ok(())
    }
}

/// Runs `runner` once per filter center, in parallel, and collects a spectrum.
pub fn scan_spectrum<F, E>(
    mode: GatingMode,
    centers: &[f64],
    runner: F,
) -> Result<Spectrum, AnalysisError>
where
    F: Fn(f64) -> Result<u64, E> + Sync,
    E: std::fmt::Display,
{
    if !centers.windows(2).all(|w| w[0] < w[1]) {
        return Err(AnalysisError::InvalidArgument(
            "filter centers must be strictly increasing".into(),
        ));
    }
    let counts: Vec<f64> = centers
        .par_iter()
        .map(|&c| {
            runner(c).map(|n| n as f64).map_err(|e| AnalysisError::ScanPoint {
                center: c,
                reason: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(Spectrum::from_counts(centers.to_vec(), counts, mode))
}

/// Square 2D histogram of `(t1, t2)` = (early, late) click times after the
/// clock preceding the early click, on `[0, n_bins·bin_width)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hist2D {
    pub bin_width: i64,
    pub n_bins: usize,
    /// Row-major, `counts[i1 * n_bins + i2]`.
    pub counts: Vec<u64>,
}

impl Hist2D {
    pub fn get(&self, i1: usize, i2: usize) -> u64 {
        self.counts[i1 * self.n_bins + i2]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// Diagonal cells, where both clicks fall in the same bin.
    pub fn diagonal(&self) -> Vec<u64> {
        (0..self.n_bins).map(|i| self.get(i, i)).collect()
    }

    /// Mean count per cell over cells whose bin-center separation lies in `[lo, hi]` ps.
    pub fn band_mean(&self, lo: i64, hi: i64) -> f64 {
        let mut sum = 0u64;
        let mut cells = 0usize;
        for i in 0..self.n_bins {
            for j in 0..self.n_bins {
                let d = (j as i64 - i as i64).abs() * self.bin_width;
                if d >= lo && d <= hi {
                    sum += self.get(i, j);
                    cells += 1;
                }
            }
        }
        if cells == 0 {
            0.0
        } else {
            sum as f64 / cells as f64
        }
    }

    /// Long-format CSV `t1_ps,t2_ps,counts` of the non-empty cells.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "# {{\"bin_width_ps\": {}, \"n_bins\": {}}}",
            self.bin_width, self.n_bins
        )?;
        writeln!(out, "t1_ps,t2_ps,counts")?;
        for i in 0..self.n_bins {
            for j in 0..self.n_bins {
                let c = self.get(i, j);
                if c > 0 {
                    writeln!(
                        out,
                        "{},{},{c}",
                        i as i64 * self.bin_width,
                        j as i64 * self.bin_width
                    )?;
                }
            }
        }
        Ok(())
    }
}

pub fn histogram2d(
    pairs: &[Pair],
    clock: &[i64],
    bin_width: i64,
    n_bins: usize,
) -> Result<Hist2D, AnalysisError> {
    if bin_width <= 0 {
        return Err(AnalysisError::InvalidArgument("bin_width must be positive".into()));
    }
    check_sorted(clock)?;
    let mut h = Hist2D {
        bin_width,
        n_bins,
        counts: vec![0; n_bins * n_bins],
    };
    let limit = (n_bins as i64) * bin_width;
    for p in pairs {
        let Some(t1) = since_clock(clock, p.early()) else {
            continue;
        };
        let t2 = t1 + (p.late() - p.early());
        if t1 < limit && t2 < limit {
            let (i, j) = ((t1 / bin_width) as usize, (t2 / bin_width) as usize);
            h.counts[i * n_bins + j] += 1;
        }
    }
    Ok(h)
}

/// How the side-peak maximum is refined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakRefinement {
    /// Parabola through the maximum and its neighbours.
    #[default]
    Parabolic,
    /// Parabola through the logarithms, exact for a Gaussian line.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakOptions {
    /// Points at or above `-exclusion` GHz are ignored.
    pub exclusion: f64,
    pub refinement: PeakRefinement,
    /// Boxcar width (points) applied before locating the maximum; 1 disables.
    pub smooth: usize,
}

impl Default for PeakOptions {
    fn default() -> Self {
        Self {
            exclusion: 10.0,
            refinement: PeakRefinement::Parabolic,
            smooth: 1,
        }
    }
}

/// Red side-peak position, GHz.
pub fn side_peak_position(spec: &Spectrum, exclusion: f64) -> Result<Estimate, AnalysisError> {
    side_peak_with(
        spec,
        &PeakOptions {
            exclusion,
            ..PeakOptions::default()
        },
    )
}

pub fn side_peak_with(spec: &Spectrum, opts: &PeakOptions) -> Result<Estimate, AnalysisError> {
    let idx: Vec<usize> = (0..spec.positions.len())
        .filter(|&i| spec.positions[i] < -opts.exclusion)
        .collect();
    if idx.len() < 5 {
        return Err(AnalysisError::TooFewPoints {
            needed: 5,
            found: idx.len(),
            exclusion: opts.exclusion,
        });
    }
    let x: Vec<f64> = idx.iter().map(|&i| spec.positions[i]).collect();
    let raw: Vec<f64> = idx.iter().map(|&i| spec.counts[i]).collect();
    let err: Vec<f64> = idx.iter().map(|&i| spec.errors[i]).collect();
    let y = boxcar(&raw, opts.smooth);
    let k = argmax(&y);
    if k == 0 || k + 1 == y.len() || !(y[k] > y[k - 1] || y[k] > y[k + 1]) {
        return Err(AnalysisError::NoPeak);
    }
    let h = 0.5 * (x[k + 1] - x[k - 1]);
    let transform = |v: f64| match opts.refinement {
        PeakRefinement::Parabolic => v,
        PeakRefinement::Gaussian => v.max(1e-300).ln(),
    };
    let vertex = |a: f64, b: f64, c: f64| {
        let (a, b, c) = (transform(a), transform(b), transform(c));
        let curv = a - 2.0 * b + c;
        if curv >= 0.0 {
            None
        } else {
            Some(0.5 * h * (a - c) / curv)
        }
    };
    let (a, b, c) = (y[k - 1], y[k], y[k + 1]);
    let offset = vertex(a, b, c).ok_or(AnalysisError::NoPeak)?;
    let offset = offset.clamp(-h, h);
    let value = x[k] + offset;

    // Propagate the count errors (reduced by smoothing) through the vertex formula.
    let scale = 1.0 / (opts.smooth.max(1) as f64).sqrt();
    let (ea, eb, ec) = (err[k - 1] * scale, err[k] * scale, err[k + 1] * scale);
    let mut var = 0.0;
    for (i, e) in [ea, eb, ec].into_iter().enumerate() {
        let step = (e * 1e-3).max(1e-9);
        let mut p = [a, b, c];
        p[i] += step;
        let shifted = vertex(p[0], p[1], p[2]).unwrap_or(offset).clamp(-h, h);
        let d = (shifted - offset) / step;
        var += (d * e).powi(2);
    }
    let error = var.sqrt().min(h);
    Ok(Estimate { value, error })
}

/// Peak Rabi frequency implied by the side-peak shift, GHz.
pub fn extract_rabi(spec: &Spectrum, detuning: f64) -> Result<Estimate, AnalysisError> {
    let shift = side_peak_position(spec, PeakOptions::default().exclusion)?;
    rabi_from_estimate(shift, detuning)
}

/// Propagates a shift estimate through the inverse shift relation.
pub fn rabi_from_estimate(shift: Estimate, detuning: f64) -> Result<Estimate, AnalysisError> {
    if !(detuning > 0.0) {
        return Err(AnalysisError::InvalidArgument("detuning must be positive".into()));
    }
    if shift.value > 0.0 {
        return Err(AnalysisError::PositiveShift(shift.value));
    }
    let value = rabi_from_shift(shift.value, detuning)
        .map_err(|e| AnalysisError::InvalidArgument(e.to_string()))?;
    let error = if value > 0.0 {
        (shift.value - detuning).abs() / value * shift.error
    } else {
        (2.0 * detuning * shift.error).sqrt()
    };
    Ok(Estimate { value, error })
}

/// Weighted least-squares line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// `[slope, intercept]`; intercept is 0 for through-origin fits.
    pub params: Vec<f64>,
    pub errors: Vec<f64>,
    /// Centered coefficient of determination, clamped to `[0, 1]`.
    pub r_squared: f64,
    /// Weighted sum of squared residuals.
    pub chi2: f64,
    pub max_abs_residual: f64,
}

impl FitResult {
    pub fn slope(&self) -> f64 {
        self.params[0]
    }

    pub fn intercept(&self) -> f64 {
        self.params[1]
    }
}

/// Fits `y = A·x (+ B)`. Points are weighted by `1/σ²` when every error is
/// positive, otherwise uniformly (and the errors are then scaled by the residuals).
pub fn linear_fit(
    x: &[f64],
    y: &[f64],
    y_err: &[f64],
    through_origin: bool,
) -> Result<FitResult, AnalysisError> {
    let n = x.len();
    let min_points = if through_origin { 1 } else { 2 };
    if n < min_points || y.len() != n || (!y_err.is_empty() && y_err.len() != n) {
        return Err(AnalysisError::InvalidArgument(
            "x, y and y_err must have equal lengths with enough points".into(),
        ));
    }
    let weighted = !y_err.is_empty() && y_err.iter().all(|&e| e > 0.0);
    let w: Vec<f64> = (0..n)
        .map(|i| if weighted { 1.0 / (y_err[i] * y_err[i]) } else { 1.0 })
        .collect();
    let sw: f64 = w.iter().sum();
    let (slope, intercept, var_slope, var_icpt) = if through_origin {
        let sxx: f64 = (0..n).map(|i| w[i] * x[i] * x[i]).sum();
        if sxx == 0.0 {
            return Err(AnalysisError::DegenerateX);
        }
        let sxy: f64 = (0..n).map(|i| w[i] * x[i] * y[i]).sum();
        (sxy / sxx, 0.0, 1.0 / sxx, 0.0)
    } else {
        let xm = (0..n).map(|i| w[i] * x[i]).sum::<f64>() / sw;
        let ym = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / sw;
        let sxx: f64 = (0..n).map(|i| w[i] * (x[i] - xm).powi(2)).sum();
        if sxx <= f64::EPSILON * sw * xm.abs().max(1.0).powi(2) {
            return Err(AnalysisError::DegenerateX);
        }
        let sxy: f64 = (0..n).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)).sum();
        let slope = sxy / sxx;
        (slope, ym - slope * xm, 1.0 / sxx, 1.0 / sw + xm * xm / sxx)
    };
    let resid: Vec<f64> = (0..n).map(|i| y[i] - slope * x[i] - intercept).collect();
    let chi2: f64 = (0..n).map(|i| w[i] * resid[i] * resid[i]).sum();
    let ym = (0..n).map(|i| w[i] * y[i]).sum::<f64>() / sw;
    let ss_tot: f64 = (0..n).map(|i| w[i] * (y[i] - ym).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - chi2 / ss_tot).clamp(0.0, 1.0)
    } else if chi2 == 0.0 {
        1.0
    } else {
        0.0
    };
    let dof = n as f64 - if through_origin { 1.0 } else { 2.0 };
    let scale = if weighted {
        1.0
    } else if dof > 0.0 {
        chi2 / dof
    } else {
        0.0
    };
    Ok(FitResult {
        params: vec![slope, intercept],
        errors: vec![(var_slope * scale).sqrt(), (var_icpt * scale).sqrt()],
        r_squared,
        chi2,
        max_abs_residual: resid.iter().fold(0.0, |m, r| m.max(r.abs())),
    })
}

/// Exponential decay constant from a binned tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// ps; infinite when the window shows no decay.
    pub tau: f64,
    pub error: f64,
    /// `false` when the likelihood has its maximum at zero decay rate.
    pub finite: bool,
    pub counts: u64,
}

/// Poisson maximum-likelihood fit of `exp(−t/τ)` to the bins fully inside `window` (ps).
///
/// The model is the exponential truncated to the window and integrated over
/// each bin, so the estimate is unbiased for any bin width.
pub fn decay_fit(hist: &TimeHistogram, window: (i64, i64)) -> Result<DecayFit, AnalysisError> {
    let w = hist.bin_width as f64;
    let bins: Vec<(f64, f64)> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let lo = *i as i64 * hist.bin_width;
            lo >= window.0 && lo + hist.bin_width <= window.1
        })
        .map(|(i, &c)| (i as f64 * w, c as f64))
        .collect();
    let filled = bins.iter().filter(|b| b.1 > 0.0).count();
    if filled < 10 {
        return Err(AnalysisError::EmptyWindow(filled));
    }
    let start = bins[0].0;
    let span = bins.last().unwrap().0 + w - start;
    let n: f64 = bins.iter().map(|b| b.1).sum();
    let s: f64 = bins.iter().map(|b| b.1 * (b.0 - start)).sum();

    // d/dλ of the log-likelihood; decreasing in λ.
    let g = |l: f64| -> f64 {
        if l == 0.0 {
            -s + n * (span - w) / 2.0
        } else {
            -s + n * (w / (l * w).exp_m1() - span / (l * span).exp_m1())
        }
    };
    if g(0.0) <= 0.0 {
        return Ok(DecayFit {
            tau: f64::INFINITY,
            error: f64::INFINITY,
            finite: false,
            counts: n as u64,
        });
    }
    let mut hi = 1.0 / span;
    while g(hi) > 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let l = 0.5 * (lo + hi);
    let info_term = |d: f64| {
        let e = (l * d).exp_m1();
        d * d * (e + 1.0) / (e * e)
    };
    let fisher = n * (info_term(w) - info_term(span));
    let sigma_l = 1.0 / fisher.sqrt();
    Ok(DecayFit {
        tau: 1.0 / l,
        error: sigma_l / (l * l),
        finite: true,
        counts: n as u64,
    })
}

/// FWHM of a Gaussian with the histogram's standard deviation.
pub fn gaussian_fwhm(hist: &TimeHistogram) -> f64 {
    FWHM_PER_SIGMA * hist.std_dev()
}

/// Width left after removing a Gaussian response in quadrature; 0 if the response is wider.
pub fn deconvolve_quadrature(measured: f64, response: f64) -> f64 {
    (measured * measured - response * response).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_single_tags_correlate_at_zero() {
        let h = cross_correlate(&[100], &[100], 1, 10).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.delay(10), 0);
    }

    #[test]
    fn unsorted_input_rejected() {
        assert_eq!(
            cross_correlate(&[5, 1], &[1], 1, 10),
            Err(AnalysisError::Unsorted)
        );
        assert!(coincidence_pairs(&[1], &[4, 2], 3).is_err());
    }

    #[test]
    fn periodic_clock_autocorrelation() {
        let clock: Vec<i64> = (0..100).map(|k| k * 1000).collect();
        let h = cross_correlate(&clock, &clock, 10, 3500).unwrap();
        for (d, &c) in h.delays().zip(&h.counts) {
            if c > 0 {
                assert_eq!(d % 1000, 0);
            }
        }
        assert_eq!(h.sum_between(0, 0), 100);
        assert_eq!(h.sum_between(1000, 1000), 99);
    }

    #[test]
    fn swap_mirrors_histogram() {
        let a = [0, 7, 15, 22, 40];
        let b = [3, 5, 19, 33];
        let ab = cross_correlate(&a, &b, 4, 30).unwrap();
        let mut ba = cross_correlate(&b, &a, 4, 30).unwrap().counts;
        ba.reverse();
        assert_eq!(ab.counts, ba);
    }

    #[test]
    fn g2_window_geometry() {
        let rep = 13166;
        let clock: Vec<i64> = (0..50).map(|k| k * rep).collect();
        let h = cross_correlate(&clock, &clock, 1, 2 * rep).unwrap();
        let g = g2_zero(&h, rep).unwrap();
        assert_relative_eq!(g.value, 50.0 / 49.0);
        // Window 6583 ps must be divisible by the bin width.
        let coarse = cross_correlate(&clock, &clock, 2, 2 * rep).unwrap();
        assert!(g2_zero(&coarse, rep).is_err());
        let short = cross_correlate(&clock, &clock, 1, rep).unwrap();
        assert!(g2_zero(&short, rep).is_err());
    }

    #[test]
    fn g2_without_side_peaks_is_error() {
        let h = cross_correlate(&[0], &[0], 1, 20000).unwrap();
        assert_eq!(g2_zero(&h, 13166), Err(AnalysisError::EmptySidePeaks));
    }

    #[test]
    fn pairs_window_is_inclusive() {
        assert_eq!(
            coincidence_pairs(&[10], &[10], 0).unwrap(),
            vec![Pair { a: 10, b: 10 }]
        );
        assert!(coincidence_pairs(&[0], &[3001], 3000).unwrap().is_empty());
        assert_eq!(coincidence_pairs(&[0], &[3000], 3000).unwrap().len(), 1);
        let p = coincidence_pairs(&[0, 100], &[50, 60], 100).unwrap();
        assert_eq!(p.len(), 4);
        assert!(p.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn first_second_from_known_pairs() {
        let clock = [0, 10_000];
        let pairs = [
            Pair { a: 100, b: 600 },
            Pair { a: 10_600, b: 10_100 },
            Pair { a: -5, b: 50 },
        ];
        let fs = first_second_histograms(&pairs, &clock, 10).unwrap();
        assert_eq!(fs.dropped, 1);
        assert_eq!(fs.first.counts[10], 2);
        assert_eq!(fs.second.counts[60], 2);
        assert_eq!(fs.first.peak_time(), 105.0);
        assert_eq!(fs.second.counts[5], 1);
    }

    #[test]
    fn gating() {
        let clock = [0, 10_000];
        let pairs = [
            Pair { a: 0, b: 100 },
            Pair { a: 0, b: 400 },
            Pair { a: 10_000, b: 13_500 },
        ];
        let g = gated_pairs(&pairs, &clock, (350.0, 3000.0)).unwrap();
        assert_eq!(g, vec![pairs[1]]);
        let all = gated_pairs(&pairs, &clock, (f64::NEG_INFINITY, f64::INFINITY)).unwrap();
        assert_eq!(all, pairs.to_vec());
        assert!(gated_pairs(&pairs, &clock, (3000.0, 350.0)).is_err());
        assert!(gated_pairs(&pairs, &clock, (350.0, 351.0)).unwrap().is_empty());
    }

    fn gaussian_spectrum(center: f64, width: f64, step: f64) -> Spectrum {
        let positions: Vec<f64> = (0..)
            .map(|i| -100.0 + i as f64 * step)
            .take_while(|&p| p <= 30.0)
            .collect();
        let counts = positions
            .iter()
            .map(|&p| {
                1e4 * (-0.5 * (p / 3.0).powi(2)).exp()
                    + 5e3 * (-0.5 * ((p - center) / width).powi(2)).exp()
            })
            .collect();
        Spectrum::from_counts(positions, counts, GatingMode::TwoPhoton)
    }

    #[test]
    fn planted_side_peak() {
        let s = gaussian_spectrum(-45.0, 8.0, 1.0);
        let e = side_peak_position(&s, 10.0).unwrap();
        assert!((e.value + 45.0).abs() < 0.5, "{e:?}");
        let g = side_peak_with(
            &s,
            &PeakOptions {
                refinement: PeakRefinement::Gaussian,
                ..PeakOptions::default()
            },
        )
        .unwrap();
        assert!((g.value + 45.0).abs() < 0.05, "{g:?}");
    }

    #[test]
    fn side_peak_errors() {
        let flat = Spectrum::from_counts(
            (0..40).map(|i| -60.0 + i as f64).collect(),
            vec![10.0; 40],
            GatingMode::TwoPhoton,
        );
        assert_eq!(side_peak_position(&flat, 10.0), Err(AnalysisError::NoPeak));
        assert!(matches!(
            side_peak_position(&flat, 1000.0),
            Err(AnalysisError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn rabi_from_planted_shift() {
        let r = rabi_from_estimate(
            Estimate {
                value: -45.0,
                error: 0.5,
            },
            125.0,
        )
        .unwrap();
        assert!((r.value - 115.2).abs() < 0.1);
        assert_relative_eq!(r.error, 170.0 / r.value * 0.5, max_relative = 1e-12);
        let zero = rabi_from_estimate(Estimate { value: 0.0, error: 0.0 }, 125.0).unwrap();
        assert_eq!(zero.value, 0.0);
        assert!(rabi_from_estimate(Estimate { value: 1.0, error: 0.0 }, 125.0).is_err());
    }

    #[test]
    fn exact_line() {
        let x = [0.02, 0.04, 0.09, 0.13, 0.17];
        let y: Vec<f64> = x.iter().map(|v| 0.72 * v).collect();
        let f = linear_fit(&x, &y, &[], true).unwrap();
        assert_relative_eq!(f.slope(), 0.72, max_relative = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0);
        let two = linear_fit(&[1.0, 3.0], &[2.0, 8.0], &[], false).unwrap();
        assert_relative_eq!(two.slope(), 3.0);
        assert_relative_eq!(two.intercept(), -1.0);
        assert!(linear_fit(&[2.0, 2.0], &[1.0, 3.0], &[], false).is_err());
        let zeros = linear_fit(&x, &[0.0; 5], &[], true).unwrap();
        assert_eq!(zeros.slope(), 0.0);
        let constant = linear_fit(&x, &[0.3; 5], &[], true).unwrap();
        assert!(constant.slope() != 0.0);
    }

    #[test]
    fn weighted_fit_errors() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.1, 1.9, 3.05, 4.0];
        let e = [0.1; 4];
        let f = linear_fit(&x, &y, &e, false).unwrap();
        // σ_A = σ / sqrt(Σ(x−x̄)²) = 0.1 / sqrt(5).
        assert_relative_eq!(f.errors[0], 0.1 / 5f64.sqrt(), max_relative = 1e-12);
        assert!(f.r_squared > 0.99 && f.r_squared <= 1.0);
    }

    #[test]
    fn decay_fit_on_exact_exponential() {
        let tau = 465.0;
        let mut h = TimeHistogram::new(10);
        h.counts = (0..400)
            .map(|i| {
                let t0 = i as f64 * 10.0;
                (1e6 * ((-t0 / tau).exp() - (-(t0 + 10.0) / tau).exp())).round() as u64
            })
            .collect();
        let f = decay_fit(&h, (500, 3500)).unwrap();
        assert!(f.finite);
        assert!((f.tau - tau).abs() < 0.5, "{f:?}");
        assert!(f.error > 0.0 && f.error < 5.0);
    }

    #[test]
    fn decay_fit_flat_and_empty() {
        let mut h = TimeHistogram::new(10);
        h.counts = vec![100; 100];
        let f = decay_fit(&h, (0, 1000)).unwrap();
        assert!(!f.finite && f.tau.is_infinite());
        assert_eq!(decay_fit(&h, (5000, 6000)), Err(AnalysisError::EmptyWindow(0)));
    }

    #[test]
    fn hist2d_and_diagonal() {
        let clock = [0];
        let pairs = [
            Pair { a: 100, b: 160 },
            Pair { a: 102, b: 101 },
            Pair { a: 300, b: 200 },
        ];
        let h = histogram2d(&pairs, &clock, 5, 100).unwrap();
        assert_eq!(h.total(), 3);
        assert_eq!(h.get(20, 32), 1);
        assert_eq!(h.get(40, 60), 1);
        assert_eq!(h.diagonal()[20], 1);
        assert_eq!(h.diagonal().iter().sum::<u64>(), 1);
        assert!(histogram2d(&[], &clock, 5, 10).unwrap().is_empty());
    }

    #[test]
    fn maxima_and_widths() {
        let y: Vec<f64> = (0..200)
            .map(|i| {
                let t = i as f64;
                (-0.5 * ((t - 50.0) / 5.0).powi(2)).exp()
                    + 0.8 * (-0.5 * ((t - 120.0) / 8.0).powi(2)).exp()
            })
            .collect();
        assert_eq!(prominent_maxima(&y, 0.1), vec![50, 120]);
        let single: Vec<f64> = (0..100)
            .map(|i| (-0.5 * ((i as f64 - 40.0) / 6.0).powi(2)).exp())
            .collect();
        assert_eq!(prominent_maxima(&single, 0.05), vec![40]);
        assert_relative_eq!(half_max_width(&single), 6.0 * FWHM_PER_SIGMA, max_relative = 1e-2);
    }

    #[test]
    fn spectrum_peak_helpers() {
        let s = gaussian_spectrum(-45.0, 8.0, 1.0);
        assert_eq!(s.max_position_in(-5.0, 5.0), Some(0.0));
        let main = s.fwhm_in(-8.0, 8.0);
        assert!((main - 3.0 * FWHM_PER_SIGMA).abs() < 1.0, "{main}");
    }
}
