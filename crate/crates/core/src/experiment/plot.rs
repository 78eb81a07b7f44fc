//! Standalone SVG charts. Every chart carries the data it was drawn from
//! as CSV inside a `<metadata>` element.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

fn open(svg: &mut String, title: &str, data_csv: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, "<metadata><![CDATA[\n{data_csv}]]></metadata>");
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(
            svg,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#,
            y1 + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            x0 - 6.0,
            py + 4.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{py:.1}" x2="{x1}" y2="{py:.1}" stroke="#ddd"/>"##
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Line chart, one polyline per series.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], data_csv: &str) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let f = Frame {
        x: range(all().map(|p| p.0)),
        y: range(all().map(|p| p.1)),
    };
    let mut svg = String::new();
    open(&mut svg, title, data_csv);
    axes(&mut svg, &f, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            pts.join(" ")
        );
        for p in &pts {
            let (cx, cy) = p.split_once(',').expect("x,y");
            let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
        }
        let ly = TOP + 18.0 * i as f64 + 10.0;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 18.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// One split violin per group: the left half is drawn from `left` counts,
/// the right half from `right` counts, both over the shared bin `edges`.
pub struct Violin {
    pub label: String,
    pub edges: Vec<f64>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

pub fn violin_chart(title: &str, y_label: &str, legend: (&str, &str), violins: &[Violin], data_csv: &str) -> String {
    let y = range(violins.iter().flat_map(|v| v.edges.iter().copied()));
    let n = violins.len().max(1) as f64;
    let f = Frame { x: (0.0, n), y };
    let mut svg = String::new();
    open(&mut svg, title, data_csv);
    let (x0, x1, y1) = (LEFT, W - RIGHT, H - BOTTOM);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{TOP} L{x0},{y1} L{x1},{y1}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let yv = y.0 + i as f64 / 4.0 * (y.1 - y.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            x0 - 6.0,
            f.py(yv) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (TOP + y1) / 2.0,
        escape(y_label)
    );
    let half = 0.45 * (f.px(1.0) - f.px(0.0));
    for (i, v) in violins.iter().enumerate() {
        let cx = f.px(i as f64 + 0.5);
        let peak = v.left.iter().chain(&v.right).copied().max().unwrap_or(0).max(1) as f64;
        for (counts, sign, color) in [(&v.left, -1.0, PALETTE[0]), (&v.right, 1.0, PALETTE[1])] {
            let mut d = format!("M{cx:.2},{:.2}", f.py(v.edges[0]));
            for (k, &c) in counts.iter().enumerate() {
                let mid = (v.edges[k] + v.edges[k + 1]) / 2.0;
                let _ = write!(d, " L{:.2},{:.2}", cx + sign * half * c as f64 / peak, f.py(mid));
            }
            let _ = write!(d, " L{cx:.2},{:.2} Z", f.py(*v.edges.last().expect("edges")));
            let _ = writeln!(
                svg,
                r#"<path d="{d}" fill="{color}" fill-opacity="0.5" stroke="{color}"/>"#
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            y1 + 16.0,
            escape(&v.label)
        );
    }
    for (k, (name, color)) in [(legend.0, PALETTE[0]), (legend.1, PALETTE[1])].into_iter().enumerate() {
        let ly = TOP + 18.0 * k as f64 + 10.0;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{}" width="14" height="10" fill="{color}" fill-opacity="0.5"/>"#,
            ly - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            ly + 4.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
