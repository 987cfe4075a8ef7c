//! Dependency-free SVG line charts.
//!
//! The emitted figures are plain line charts, so the renderer draws them
//! directly: fixed margins, linear axes with rounded tick steps, one
//! polyline per series, and a small legend. Every chart is a complete
//! standalone SVG document.

use std::fmt::Write;

const WIDTH: f64 = 840.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 78.0;
const MARGIN_RIGHT: f64 = 26.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 62.0;
const TICK_TARGET: usize = 6;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// One named polyline.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// A line chart with linear axes and automatic ranges.
#[derive(Debug, Clone)]
pub struct LineChart {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
}

impl LineChart {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn add_series(&mut self, label: impl Into<String>, points: Vec<(f64, f64)>) {
        self.series.push(Series {
            label: label.into(),
            points,
        });
    }

    /// Renders the chart; non-finite points are dropped from their series.
    pub fn render(&self) -> String {
        let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let finite: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .collect();
        let (x_lo, x_hi) = padded_range(finite.iter().map(|p| p.0), 0.0);
        let (y_lo, y_hi) = padded_range(finite.iter().map(|p| p.1), 0.05);
        let px = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let py = |y: f64| MARGIN_TOP + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h;

        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">"
        );
        let _ = writeln!(
            out,
            "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
        );

        for x in ticks(x_lo, x_hi) {
            let gx = px(x);
            let _ = writeln!(
                out,
                "  <line x1=\"{gx:.2}\" y1=\"{:.2}\" x2=\"{gx:.2}\" y2=\"{:.2}\" \
                 stroke=\"#e0e0e0\" stroke-width=\"1\"/>",
                MARGIN_TOP,
                MARGIN_TOP + plot_h
            );
            let _ = writeln!(
                out,
                "  <text x=\"{gx:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#333\" \
                 text-anchor=\"middle\">{}</text>",
                MARGIN_TOP + plot_h + 18.0,
                format_tick(x)
            );
        }
        for y in ticks(y_lo, y_hi) {
            let gy = py(y);
            let _ = writeln!(
                out,
                "  <line x1=\"{:.2}\" y1=\"{gy:.2}\" x2=\"{:.2}\" y2=\"{gy:.2}\" \
                 stroke=\"#e0e0e0\" stroke-width=\"1\"/>",
                MARGIN_LEFT,
                MARGIN_LEFT + plot_w
            );
            let _ = writeln!(
                out,
                "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#333\" \
                 text-anchor=\"end\">{}</text>",
                MARGIN_LEFT - 8.0,
                gy + 4.0,
                format_tick(y)
            );
        }
        let _ = writeln!(
            out,
            "  <rect x=\"{MARGIN_LEFT}\" y=\"{MARGIN_TOP}\" width=\"{plot_w}\" \
             height=\"{plot_h}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>"
        );

        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"26\" font-size=\"16\" fill=\"#111\" \
             text-anchor=\"middle\">{}</text>",
            WIDTH / 2.0,
            xml_escape(&self.title)
        );
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"13\" fill=\"#111\" \
             text-anchor=\"middle\">{}</text>",
            MARGIN_LEFT + plot_w / 2.0,
            HEIGHT - 16.0,
            xml_escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            "  <text x=\"20\" y=\"{:.2}\" font-size=\"13\" fill=\"#111\" text-anchor=\"middle\" \
             transform=\"rotate(-90 20 {:.2})\">{}</text>",
            MARGIN_TOP + plot_h / 2.0,
            MARGIN_TOP + plot_h / 2.0,
            xml_escape(&self.y_label)
        );

        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut pts = String::new();
            for (x, y) in &series.points {
                if x.is_finite() && y.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", px(*x), py(*y));
                }
            }
            let _ = writeln!(
                out,
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-width=\"1.5\"/>",
                pts.trim_end()
            );
        }

        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let ly = MARGIN_TOP + 16.0 + 18.0 * i as f64;
            let lx = MARGIN_LEFT + plot_w - 150.0;
            let _ = writeln!(
                out,
                "  <line x1=\"{lx:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" \
                 stroke=\"{color}\" stroke-width=\"2\"/>",
                lx + 24.0
            );
            let _ = writeln!(
                out,
                "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#333\">{}</text>",
                lx + 30.0,
                ly + 4.0,
                xml_escape(&series.label)
            );
        }

        out.push_str("</svg>\n");
        out
    }
}

/// Data range widened by `pad` of its span; degenerate or empty input falls
/// back to a unit window so the pixel mapping stays finite.
fn padded_range(values: impl Iterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        let widen = lo.abs().max(1.0) * 0.5;
        return (lo - widen, hi + widen);
    }
    let span = hi - lo;
    (lo - pad * span, hi + pad * span)
}

/// Rounded tick step: the smallest of 1, 2, 5, 10 times a power of ten that
/// keeps the tick count at or below the target.
fn tick_step(span: f64, target: usize) -> f64 {
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let mult = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    mult * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = tick_step(hi - lo, TICK_TARGET);
    let mut out = Vec::new();
    let mut k = (lo / step).ceil();
    while k * step <= hi + step * 1e-9 {
        // snap values that should be exactly zero
        let v = k * step;
        out.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        k += 1.0;
    }
    out
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            other => out.push(other),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_polyline_per_series_and_escapes_labels() {
        let mut chart = LineChart::new("a < b", "t", "value");
        chart.add_series("first", vec![(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)]);
        chart.add_series("x & y", vec![(0.0, 0.0), (2.0, 3.0)]);
        let svg = chart.render();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("x &amp; y"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn degenerate_and_empty_data_stay_finite() {
        let mut flat = LineChart::new("flat", "t", "v");
        flat.add_series("c", vec![(0.0, 3.0), (1.0, 3.0), (2.0, 3.0)]);
        let svg = flat.render();
        assert!(!svg.contains("NaN"));
        assert!(!svg.contains("inf"));

        let empty = LineChart::new("empty", "t", "v").render();
        assert!(empty.contains("</svg>"));
        assert!(!empty.contains("NaN"));
    }

    #[test]
    fn tick_formatting_is_compact() {
        assert_eq!(format_tick(0.25), "0.25");
        assert_eq!(format_tick(1500.0), "1500");
        assert_eq!(format_tick(0.0), "0");
        assert_eq!(format_tick(2.5e-7), "2.50e-7");
        let t = ticks(0.0, 10.0);
        assert!(t.contains(&0.0) && t.contains(&10.0));
        assert!(t.len() <= TICK_TARGET + 2);
    }
}
