//! Plot-ready CSV and minimal self-contained SVG renderings.
//!
//! The SVGs are quick looks, not publication figures: a polyline per
//! series or a grey-scale heat map, with the axis ranges printed as text.

use std::fmt::Write as _;
use std::io;
use std::path::PathBuf;

use crate::analysis::{CorrelationHistogram, Hist2D, Spectrum, TimeHistogram};

use super::manifest::OutputSet;

/// A product that can be emitted.
#[derive(Debug, Clone, Copy)]
pub enum Product<'a> {
    Spectrum(&'a Spectrum),
    Histogram(&'a TimeHistogram),
    Correlation(&'a CorrelationHistogram),
    Hist2D(&'a Hist2D),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlotStyle {
    /// Also write `<stem>.svg`.
    pub svg: bool,
    /// Logarithmic y axis for line plots.
    pub log_y: bool,
}

/// Writes `<stem>.csv` and, if requested, `<stem>.svg`.
pub fn emit_plotdata(
    product: Product<'_>,
    style: PlotStyle,
    out: &mut OutputSet,
    stem: &str,
) -> io::Result<Vec<PathBuf>> {
    let mut files = vec![out.write_with(&format!("{stem}.csv"), |w| match product {
        Product::Spectrum(s) => s.write_csv(w),
        Product::Histogram(h) => h.write_csv(w),
        Product::Correlation(c) => c.write_csv(w),
        Product::Hist2D(h) => h.write_csv(w),
    })?];
    if style.svg {
        let svg = match product {
            Product::Spectrum(s) => line_svg(
                &[(s.mode.name(), s.positions.iter().copied().zip(s.counts.iter().copied()).collect())],
                "detuning (GHz)",
                "counts",
                style.log_y,
            ),
            Product::Histogram(h) => line_svg(
                &[("counts", (0..h.counts.len()).map(|i| (h.center(i), h.counts[i] as f64)).collect())],
                "time after clock (ps)",
                "counts",
                style.log_y,
            ),
            Product::Correlation(c) => line_svg(
                &[("coincidences", c.delays().zip(c.counts.iter()).map(|(d, &n)| (d as f64, n as f64)).collect())],
                "delay (ps)",
                "coincidences",
                style.log_y,
            ),
            Product::Hist2D(h) => heatmap_svg(h),
        };
        files.push(out.write_bytes(&format!("{stem}.svg"), svg.as_bytes())?);
    }
    Ok(files)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f4e9c", "#c0392b", "#27864a", "#7d3c98"];

/// Polyline plot of one or more `(x, y)` series on shared axes.
pub fn line_svg(series: &[(&str, Vec<(f64, f64)>)], x_label: &str, y_label: &str, log_y: bool) -> String {
    let ty = |y: f64| if log_y { y.max(0.5).log10() } else { y };
    let points = series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(ty(y));
        y1 = y1.max(ty(y));
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (ty(y) - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = header();
    axes(&mut s, x_label, y_label, (x0, x1), (y0, y1), log_y);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}" font-size="12">{}</text>"#,
            W - MARGIN - 120.0,
            MARGIN + 15.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grey-scale heat map, darker for more counts.
pub fn heatmap_svg(h: &Hist2D) -> String {
    let n = h.n_bins.max(1);
    let cell = (W.min(H) - 2.0 * MARGIN) / n as f64;
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let span = (h.n_bins as i64 * h.bin_width) as f64;
    let mut s = header();
    axes(&mut s, "t1 (ps)", "t2 (ps)", (0.0, span), (0.0, span), false);
    for i in 0..h.n_bins {
        for j in 0..h.n_bins {
            let c = h.get(i, j);
            if c == 0 {
                continue;
            }
            let level = 255 - (255.0 * c as f64 / max).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({level},{level},{level})"/>"#,
                MARGIN + i as f64 * cell,
                H - MARGIN - (j + 1) as f64 * cell,
                cell,
                cell
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn axes(s: &mut String, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64), log_y: bool) {
    let _ = writeln!(
        s,
        r#"<path d="M{m},{t} L{m},{b} L{r},{b}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let fmt = |v: f64| if log_y { format!("1e{v:.1}") } else { format!("{v:.3}") };
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{} [{:.3}, {:.3}]</text>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label),
        x.0,
        x.1
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">{} [{}, {}]</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label),
        fmt(y.0),
        fmt(y.1)
    );
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::GatingMode;

    #[test]
    fn spectrum_csv_and_svg() {
        let dir = std::env::temp_dir().join(format!("reexcite-plot-{}", std::process::id()));
        let mut out = OutputSet::create(&dir).unwrap();
        let spec = Spectrum::from_counts(vec![-1.0, 0.0, 1.0], vec![1.0, 4.0, 1.0], GatingMode::TwoPhoton);
        let style = PlotStyle { svg: true, log_y: true };
        let files = emit_plotdata(Product::Spectrum(&spec), style, &mut out, "spec").unwrap();
        assert_eq!(files.len(), 2);
        let csv = std::fs::read_to_string(&files[0]).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("position_GHz"));
        let svg = std::fs::read_to_string(&files[1]).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn heatmap_skips_empty_cells() {
        let mut h = Hist2D {
            bin_width: 5,
            n_bins: 3,
            counts: vec![0; 9],
        };
        h.counts[1] = 4;
        let svg = heatmap_svg(&h);
        assert_eq!(svg.matches("<rect x=").count(), 1);
    }
}
