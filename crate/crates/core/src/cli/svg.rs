//! Minimal scatter plots of 2D embeddings.

use std::fmt::Write;

use crate::embedding::{EmbeddingMatrix, LabelVector};

const SIZE: f64 = 400.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Points colored by label inside a square viewport fitted to the data,
/// with axes through the origin and the unit circle for reference. Only the
/// first two columns are drawn.
pub fn scatter(points: &EmbeddingMatrix, labels: &LabelVector, title: &str) -> String {
    let extent = points
        .iter_rows()
        .flat_map(|r| r.iter().take(2))
        .fold(1.0_f64, |m, v| m.max(v.abs()))
        * 1.1;
    let scale = SIZE / (2.0 * extent);
    let px = |v: f64| SIZE / 2.0 + v * scale;
    let py = |v: f64| SIZE / 2.0 - v * scale;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(s, "<title>{}</title>", escape(title)).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    let mid = SIZE / 2.0;
    writeln!(s, r##"<line x1="0" y1="{mid}" x2="{SIZE}" y2="{mid}" stroke="#999" stroke-width="1"/>"##).unwrap();
    writeln!(s, r##"<line x1="{mid}" y1="0" x2="{mid}" y2="{SIZE}" stroke="#999" stroke-width="1"/>"##).unwrap();
    writeln!(
        s,
        r##"<circle cx="{mid}" cy="{mid}" r="{:.3}" fill="none" stroke="#ccc" stroke-dasharray="4 3"/>"##,
        scale
    )
    .unwrap();
    for (row, &y) in points.iter_rows().zip(labels.as_slice()) {
        let (a, b) = (row[0], row.get(1).copied().unwrap_or(0.0));
        writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{:.3}" r="3" fill="{}" fill-opacity="0.8"/>"#,
            px(a),
            py(b),
            PALETTE[y as usize % PALETTE.len()]
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
