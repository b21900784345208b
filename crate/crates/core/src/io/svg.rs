//! Minimal SVG charts: line plots and box plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1b6ca8", "#d1495b", "#2e8540", "#edae49", "#6a4c93", "#444444"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series { name: name.into(), points, dashed: false }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

/// Five-number summary used for box plots.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Some(BoxStats { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] })
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Frame { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn open(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="grey"/>"#, r - l, b - t);
    for (v, label) in [(frame.y.0, frame.y.0), (frame.y.1, frame.y.1)] {
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, l - 4.0, frame.py(v) + 4.0, tick(label));
    }
    for v in [frame.x.0, frame.x.1] {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, frame.px(v), b + 14.0, tick(v));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 8.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Line chart with one polyline per series and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let (mut xb, mut yb) = (bounds(pts().map(|p| p.0)), bounds(pts().map(|p| p.1)));
    if !xb.0.is_finite() {
        xb = (0.0, 1.0);
        yb = (0.0, 1.0);
    }
    let frame = Frame::new(xb, yb);
    let mut out = String::new();
    open(&mut out, title, &frame, x_label, y_label);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let dash = if s.dashed { r#" stroke-dasharray="4 3""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.2"{dash} points="{}"/>"#,
            escape(&s.name),
            path.join(" ")
        );
        let ly = MARGIN + 12.0 + 14.0 * k as f64;
        let lx = WIDTH - MARGIN - 110.0;
        let _ = writeln!(out, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}"{dash}/>"#, lx + 18.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, lx + 22.0, ly + 4.0, escape(&s.name));
    }
    out.push_str("</svg>\n");
    out
}

/// Box plot with whiskers at the extremes.
pub fn box_plot(title: &str, y_label: &str, groups: &[(String, BoxStats)]) -> String {
    let yb = bounds(groups.iter().flat_map(|(_, b)| [b.min, b.max]));
    let yb = if yb.0.is_finite() { yb } else { (0.0, 1.0) };
    let frame = Frame::new((0.0, groups.len().max(1) as f64), yb);
    let mut out = String::new();
    open(&mut out, title, &frame, "", y_label);
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len().max(1) as f64;
    for (k, (name, b)) in groups.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let cx = MARGIN + slot * (k as f64 + 0.5);
        let half = slot * 0.2;
        let _ = writeln!(
            out,
            r#"<g data-group="{}"><line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{color}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/></g>"#,
            escape(name),
            frame.py(b.min),
            frame.py(b.max),
            cx - half,
            frame.py(b.q3),
            2.0 * half,
            frame.py(b.q1) - frame.py(b.q3),
            cx - half,
            frame.py(b.median),
            cx + half,
            frame.py(b.median)
        );
        let _ = writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, HEIGHT - MARGIN + 28.0, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_chart_maps_extremes_to_frame() {
        let s = Series::new("a", vec![(0.0, 0.0), (1.0, 2.0)]);
        let svg = line_chart("t", "x", "y", &[s]);
        assert!(svg.contains(&format!("points=\"{:.2},{:.2} {:.2},{:.2}\"", MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN)));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn box_stats_quartiles() {
        let b = BoxStats::from_values(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(b, BoxStats { min: 1.0, q1: 2.0, median: 3.0, q3: 4.0, max: 5.0 });
        assert!(BoxStats::from_values(&[]).is_none());
    }

    #[test]
    fn escapes_text() {
        let svg = box_plot("a<b", "y", &[("x&y".into(), BoxStats::from_values(&[1.0]).unwrap())]);
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
    }
}
