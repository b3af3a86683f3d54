//! Static BEV visualization as standalone SVG documents.
//!
//! Output bytes are a pure function of the input: colors come from a stable
//! hash of the track id, floats are printed with fixed precision, and point
//! subsampling above the budget uses a deterministic stride.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geom::{Box3D, PointCloud};
use crate::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    /// Pixels per meter.
    pub scale: Scalar,
    /// Half extent of the rendered square, meters (ego at the center).
    pub half_extent: Scalar,
    pub point_radius: Scalar,
    /// Maximum number of cloud points drawn.
    pub point_budget: usize,
    pub box_stroke_width: Scalar,
    pub trajectory_stroke_width: Scalar,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            scale: 8.0,
            half_extent: 50.0,
            point_radius: 0.6,
            point_budget: 20_000,
            box_stroke_width: 1.5,
            trajectory_stroke_width: 1.0,
        }
    }
}

/// Stable per-track color: an FNV-1a hash of the id picks a hue.
pub fn track_color(track_id: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in track_id.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("hsl({},70%,50%)", h % 360)
}

/// One box to draw, with its track id (drives the color) and an optional
/// predicted trajectory (BEV centers, same frame as the box).
#[derive(Debug, Clone)]
pub struct RenderBox {
    pub track_id: String,
    pub box3d: Box3D<Scalar>,
    pub trajectory: Vec<[Scalar; 2]>,
}

fn fmt_f(v: Scalar) -> String {
    // fixed precision keeps the output byte-stable across platforms
    format!("{:.2}", v)
}

/// Render one frame's cloud and boxes (all in the same BEV frame) to SVG.
pub fn render_bev(points: &PointCloud, boxes: &[RenderBox], style: &RenderStyle) -> String {
    let side = 2.0 * style.half_extent * style.scale;
    let px = |x: Scalar| fmt_f((x + style.half_extent) * style.scale);
    let py = |y: Scalar| fmt_f((style.half_extent - y) * style.scale);

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
        fmt_f(side)
    );
    let _ = write!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{0}\" fill=\"#101418\"/>\n",
        fmt_f(side)
    );

    // points, deterministically strided down to the budget
    let stride = if points.len() > style.point_budget {
        points.len().div_ceil(style.point_budget)
    } else {
        1
    };
    for p in points.points.iter().step_by(stride) {
        let _ = write!(
            svg,
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"#9aa7b0\"/>\n",
            px(p[0] as Scalar),
            py(p[1] as Scalar),
            fmt_f(style.point_radius)
        );
    }

    for rb in boxes {
        let color = track_color(&rb.track_id);
        let corners = rb.box3d.bev_corners();
        let pts: Vec<String> = corners
            .iter()
            .map(|c| format!("{},{}", px(c[0]), py(c[1])))
            .collect();
        let _ = write!(
            svg,
            "<polygon points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\"/>\n",
            pts.join(" "),
            color,
            fmt_f(style.box_stroke_width)
        );
        if !rb.trajectory.is_empty() {
            let mut line: Vec<String> = vec![format!(
                "{},{}",
                px(rb.box3d.center[0]),
                py(rb.box3d.center[1])
            )];
            line.extend(rb.trajectory.iter().map(|c| format!("{},{}", px(c[0]), py(c[1]))));
            let _ = write!(
                svg,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\" stroke-dasharray=\"4 3\"/>\n",
                line.join(" "),
                color,
                fmt_f(style.trajectory_stroke_width)
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"{}\">{}</text>\n",
            px(rb.box3d.center[0]),
            py(rb.box3d.center[1]),
            color,
            rb.track_id
        );
    }

    svg.push_str("</svg>\n");
    svg
}
