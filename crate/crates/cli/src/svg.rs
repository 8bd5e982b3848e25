use std::fmt::Write as _;

use relgan::autodiff::Tensor;

const SIZE: f64 = 600.0;
const BOUND: f64 = 3.0;

fn to_px(x: f64, y: f64) -> (f64, f64) {
    let s = SIZE / (2.0 * BOUND);
    ((x + BOUND) * s, (BOUND - y) * s)
}

fn points(out: &mut String, samples: &Tensor, limit: usize, fill: &str) {
    for i in 0..samples.rows().min(limit) {
        let r = samples.row(i);
        if r[0].abs() > BOUND || r[1].abs() > BOUND {
            continue;
        }
        let (px, py) = to_px(r[0], r[1]);
        writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="1.6" fill="{fill}" fill-opacity="0.5"/>"#)
            .expect("write to string");
    }
}

/// Scatter plot of real (gray) and generated (blue) points on [-3, 3]².
/// Points outside the viewport are dropped.
pub fn scatter(real: &Tensor, generated: &Tensor, limit: usize) -> String {
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .expect("write to string");
    writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white" stroke="black"/>"#).expect("write to string");
    points(&mut out, real, limit, "#888888");
    points(&mut out, generated, limit, "#1f77b4");
    out.push_str("</svg>\n");
    out
}
