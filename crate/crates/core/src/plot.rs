//! Minimal self-contained SVG scatter of experiment fits.
//!
//! Left panel: fitted `g` (x) against `s` (y), with the `s + g = 1` line.
//! Right panel: fitted `l0` (x) against `r` (y). Baum-Welch fits are filled
//! red, constrained fits hollow black; upward triangles satisfy every
//! constraint, downward triangles violate at least one. The generating
//! parameters are marked with a blue cross.

use std::fmt::Write;

use crate::experiment::RunRecord;
use crate::fit::Algorithm;
use crate::params::ParamSet;

const PANEL: f64 = 320.0;
const PAD: f64 = 40.0;
const MARKER: f64 = 5.0;

struct Panel {
    x0: f64,
    label_x: &'static str,
    label_y: &'static str,
}

impl Panel {
    fn point(&self, x: f64, y: f64) -> (f64, f64) {
        (self.x0 + PAD + x * PANEL, PAD + (1.0 - y) * PANEL)
    }
}

fn triangle(cx: f64, cy: f64, up: bool) -> String {
    let h = if up { -MARKER } else { MARKER };
    format!("{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}", cx, cy + h, cx - MARKER, cy - h, cx + MARKER, cy - h)
}

pub fn scatter_svg(records: &[RunRecord], truth: Option<&ParamSet>) -> String {
    let width = 2.0 * (PANEL + 2.0 * PAD);
    let height = PANEL + 2.0 * PAD;
    let panels = [
        Panel { x0: 0.0, label_x: "P(G)", label_y: "P(S)" },
        Panel { x0: PANEL + 2.0 * PAD, label_x: "P(L0)", label_y: "P(R)" },
    ];
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    for (k, panel) in panels.iter().enumerate() {
        let (left, bottom) = panel.point(0.0, 0.0);
        let (right, top) = panel.point(1.0, 1.0);
        let _ = writeln!(
            svg,
            r##"<rect x="{left}" y="{top}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#444"/>"##
        );
        for tick in 0..=4 {
            let v = tick as f64 / 4.0;
            let (tx, _) = panel.point(v, 0.0);
            let (_, ty) = panel.point(0.0, v);
            let _ = writeln!(svg, r#"<text x="{tx:.1}" y="{:.1}" text-anchor="middle">{v}</text>"#, bottom + 14.0);
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v}</text>"#, left - 4.0, ty + 4.0);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (left + right) / 2.0,
            bottom + 30.0,
            panel.label_x
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
            left - 26.0,
            (top + bottom) / 2.0,
            left - 26.0,
            (top + bottom) / 2.0,
            panel.label_y
        );
        if k == 0 {
            let (ax, ay) = panel.point(0.0, 1.0);
            let (bx, by) = panel.point(1.0, 0.0);
            let _ = writeln!(
                svg,
                r##"<line x1="{ax}" y1="{ay}" x2="{bx}" y2="{by}" stroke="#999" stroke-dasharray="4 3"/>"##
            );
        }

        for r in records {
            let (Some(theta), Some(ok)) = (r.fitted_theta, r.satisfied) else { continue };
            let (x, y) = if k == 0 { (theta.g(), theta.s()) } else { (theta.l0(), theta.r()) };
            let (cx, cy) = panel.point(x, y);
            let style = match r.algorithm {
                Algorithm::BaumWelch => r##"fill="#d62728" fill-opacity="0.7" stroke="none""##,
                Algorithm::Constrained => r#"fill="none" stroke="black""#,
            };
            let _ = writeln!(svg, r#"<polygon points="{}" {style}/>"#, triangle(cx, cy, ok));
        }

        if let Some(t) = truth {
            let (x, y) = if k == 0 { (t.g(), t.s()) } else { (t.l0(), t.r()) };
            let (cx, cy) = panel.point(x, y);
            let _ = writeln!(
                svg,
                r##"<path d="M{:.1} {cy:.1}H{:.1}M{cx:.1} {:.1}V{:.1}" stroke="#1f77b4" stroke-width="2"/>"##,
                cx - 7.0,
                cx + 7.0,
                cy - 7.0,
                cy + 7.0
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}
