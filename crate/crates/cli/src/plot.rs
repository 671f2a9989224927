//! Hand-written SVG line charts: one series per architecture across the
//! condition grid, with optional confidence-interval whiskers.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub value: f64,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<PlotPoint>,
}

/// Affine map from (category index, value in [0, 1]) to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub n: usize,
}

impl Axes {
    pub const SVG_WIDTH: f64 = 720.0;
    pub const SVG_HEIGHT: f64 = 420.0;

    pub fn standard(n: usize) -> Self {
        Self {
            left: 60.0,
            top: 40.0,
            width: 480.0,
            height: 280.0,
            n,
        }
    }

    /// Categories sit at the centres of `n` equal slots.
    pub fn x(&self, i: usize) -> f64 {
        self.left + (i as f64 + 0.5) * self.width / self.n.max(1) as f64
    }

    /// Values are clamped to the [0, 1] axis.
    pub fn y(&self, v: f64) -> f64 {
        self.top + (1.0 - v.clamp(0.0, 1.0)) * self.height
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn line_chart(title: &str, categories: &[String], series: &[Series], note: &str) -> String {
    let ax = Axes::standard(categories.len());
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#,
        w = Axes::SVG_WIDTH,
        h = Axes::SVG_HEIGHT
    );
    if !note.is_empty() {
        let _ = writeln!(s, "<!-- {} -->", esc(note));
    }
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14">{}</text>"#, ax.left, esc(title));

    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let y = ax.y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"##,
            ax.left,
            ax.left + ax.width,
            ax.left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        ax.left, ax.top, ax.width, ax.height
    );
    for (i, c) in categories.iter().enumerate() {
        let x = ax.x(i);
        let y = ax.top + ax.height + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="end" transform="rotate(-40 {x:.2} {y:.2})">{}</text>"#,
            esc(c)
        );
    }

    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        for (i, p) in ser.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { " L" }, ax.x(i), ax.y(p.value));
        }
        let _ = writeln!(
            s,
            r#"<path class="series" data-name="{}" d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            esc(&ser.name)
        );
        for (i, p) in ser.points.iter().enumerate() {
            let (x, y) = (ax.x(i), ax.y(p.value));
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
            if let Some((lo, hi)) = p.ci {
                let _ = writeln!(
                    s,
                    r#"<path class="ci" d="M{x:.2} {:.2} L{x:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}" stroke="{color}"/>"#,
                    ax.y(lo),
                    ax.y(hi),
                    x - 4.0,
                    ax.y(lo),
                    x + 4.0,
                    ax.y(lo),
                    x - 4.0,
                    ax.y(hi),
                    x + 4.0,
                    ax.y(hi)
                );
            }
        }
        let ly = ax.top + 14.0 + 18.0 * k as f64;
        let lx = ax.left + ax.width + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
