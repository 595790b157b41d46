//! Static scatter plot of a 2-D layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;

const SIZE: f64 = 800.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 220.0;

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const UNLABELED: &str = "#b0b0b0";

pub struct Point<'a> {
    pub id: &'a str,
    pub title: &'a str,
    pub x: f64,
    pub y: f64,
    pub label: Option<&'a str>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Points colored by label (sorted label order picks palette slots; labels
/// past the palette reuse it). Coordinates are printed with fixed precision
/// so identical layouts give identical files.
pub fn scatter(title: &str, points: &[Point<'_>]) -> String {
    let labels: Vec<&str> = {
        let mut l: Vec<&str> = points.iter().filter_map(|p| p.label).collect();
        l.sort_unstable();
        l.dedup();
        l
    };
    let color: BTreeMap<&str, &str> = labels.iter().enumerate().map(|(i, l)| (*l, PALETTE[i % PALETTE.len()])).collect();

    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |x: f64| MARGIN + (x - x0) * scale;
    // SVG y grows downward
    let py = |y: f64| SIZE - MARGIN - (y - y0) * scale;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{SIZE}" viewBox="0 0 {w} {SIZE}" font-family="sans-serif">"#,
        w = SIZE + LEGEND_WIDTH
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="24" font-size="16">{}</text>"#, escape(title));
    for p in points {
        let fill = p.label.and_then(|l| color.get(l)).copied().unwrap_or(UNLABELED);
        let _ = writeln!(
            out,
            r#"<circle cx="{:.3}" cy="{:.3}" r="4" fill="{fill}" fill-opacity="0.85"><title>{} {}</title></circle>"#,
            px(p.x),
            py(p.y),
            escape(p.id),
            escape(p.title)
        );
    }
    for (i, l) in labels.iter().enumerate() {
        let y = MARGIN + 20.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<circle cx="{:.1}" cy="{y:.1}" r="5" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            SIZE + 10.0,
            color[l],
            SIZE + 22.0,
            y + 4.0,
            escape(l)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_escaped() {
        let pts = [
            Point { id: "a", title: "A & B", x: 0.0, y: 0.0, label: Some("x") },
            Point { id: "b", title: "<c>", x: 1.0, y: 2.0, label: Some("y") },
            Point { id: "c", title: "", x: -1.0, y: 0.5, label: None },
        ];
        let s = scatter("t", &pts);
        assert_eq!(s, scatter("t", &pts));
        assert!(s.contains("A &amp; B") && s.contains("&lt;c&gt;"));
        assert_eq!(s.matches("<circle").count(), 5);
        assert!(s.contains(UNLABELED));
    }
}
