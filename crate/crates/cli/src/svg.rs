//! Static SVG preview: three orthographic scatter projections side by side.

use std::fmt::Write as _;

use topoprior::PointCloud;

const PANEL: f64 = 240.0;
const MARGIN: f64 = 12.0;
const TITLE: f64 = 20.0;
/// Fixed view extent so that every preview shares the same scale.
const EXTENT: f64 = 1.1;

/// Axis pairs drawn left to right.
pub const PROJECTIONS: [(&str, usize, usize); 3] = [("xy", 0, 1), ("xz", 0, 2), ("yz", 1, 2)];

fn to_px(v: f64) -> f64 {
    let t = (v.clamp(-EXTENT, EXTENT) + EXTENT) / (2.0 * EXTENT);
    t * (PANEL - 2.0 * MARGIN) + MARGIN
}

pub fn render_cloud_svg(pc: &PointCloud, title: &str) -> String {
    let width = PANEL * PROJECTIONS.len() as f64;
    let height = PANEL + TITLE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##);
    for (panel, (label, a, b)) in PROJECTIONS.iter().enumerate() {
        let x0 = panel as f64 * PANEL;
        let _ = writeln!(s, r#"<g transform="translate({x0},{TITLE})">"#);
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN}" y="{MARGIN}" width="{w}" height="{w}" fill="none" stroke="#cccccc"/>"##,
            w = PANEL - 2.0 * MARGIN
        );
        let _ = writeln!(
            s,
            r##"<text x="{cx}" y="-4" font-family="sans-serif" font-size="12" text-anchor="middle" fill="#333333">{label}</text>"##,
            cx = PANEL / 2.0
        );
        let _ = writeln!(s, r##"<g fill="#1f5fa8" fill-opacity="0.6">"##);
        for row in pc.points().outer_iter() {
            // SVG's y axis points down.
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.2"/>"#, to_px(row[*a]), PANEL - to_px(row[*b]));
        }
        s.push_str("</g>\n</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
