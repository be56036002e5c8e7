//! Minimal SVG output for 2-D decision regions.

use std::fmt::Write as _;

use unlearn_core::Dataset;

const PALETTE: [&str; 10] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
];

fn colour(class: usize) -> &'static str {
    PALETTE[class % PALETTE.len()]
}

/// Renders a predicted-class grid (row 0 at the top) over `[lo, hi]^2`,
/// with `points` drawn as outlined dots. Each row is run-length merged.
pub fn decision_svg(grid: &[Vec<usize>], lo: f64, hi: f64, points: Option<&Dataset>, title: &str) -> String {
    let n = grid.len();
    let px = 2usize;
    let size = n * px;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{h}" viewBox="0 0 {size} {h}">"#,
        h = size + 20
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="14" font-family="sans-serif" font-size="12">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(s, r#"<g transform="translate(0,20)" fill-opacity="0.35">"#);
    for (r, row) in grid.iter().enumerate() {
        let mut c = 0;
        while c < row.len() {
            let class = row[c];
            let start = c;
            while c < row.len() && row[c] == class {
                c += 1;
            }
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{}" height="{px}" fill="{}"/>"#,
                start * px,
                r * px,
                (c - start) * px,
                colour(class)
            );
        }
    }
    let _ = writeln!(s, "</g>");
    if let Some(data) = points {
        let scale = size as f64 / (hi - lo);
        let _ = writeln!(
            s,
            r##"<g transform="translate(0,20)" stroke="#000" stroke-width="0.4">"##
        );
        for i in 0..data.len() {
            let (x, y) = (data.inputs[(i, 0)], data.inputs[(i, 1)]);
            if !(lo..=hi).contains(&x) || !(lo..=hi).contains(&y) {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{}"/>"#,
                (x - lo) * scale,
                (hi - y) * scale,
                colour(data.labels[i])
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
