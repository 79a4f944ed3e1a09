//! Minimal SVG plots: bound outlines over point clouds, and the heatmap.

use std::fmt::Write;

use stealth_reach::bound::{Method, ReachBound};
use stealth_reach::montecarlo::HeatmapResult;

use crate::meta::Metadata;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 60.0;
const MAX_POINTS: usize = 20_000;

fn colour(method: Method) -> &'static str {
    match method {
        Method::Lmi => "#1f4fd1",
        Method::Geometric => "#d1261f",
    }
}

struct Frame {
    x0: f64,
    y0: f64,
    span: f64,
}

impl Frame {
    fn fit(pts: impl Iterator<Item = [f64; 2]>) -> Frame {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        if !lo[0].is_finite() {
            return Frame { x0: -1.0, y0: -1.0, span: 2.0 };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12) * 1.05;
        Frame {
            x0: 0.5 * (lo[0] + hi[0]) - span / 2.0,
            y0: 0.5 * (lo[1] + hi[1]) - span / 2.0,
            span,
        }
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        let w = SIZE - 2.0 * MARGIN;
        (
            MARGIN + (p[0] - self.x0) / self.span * w,
            SIZE - MARGIN - (p[1] - self.y0) / self.span * w,
        )
    }
}

fn open(meta: &Metadata, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    s.push_str(&meta.svg_comment());
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, SIZE / 2.0);
    s
}

fn axes(s: &mut String, frame: &Frame, xlabel: &str, ylabel: &str) {
    let (l, b, r, t) = (MARGIN, SIZE - MARGIN, SIZE - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="grey"/>"#, r - l, b - t);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x0 + f * frame.span;
        let yv = frame.y0 + f * frame.span;
        let (x, _) = frame.px([xv, frame.y0]);
        let (_, y) = frame.px([frame.x0, yv]);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#, b + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#, l - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xlabel}</text>"#, SIZE / 2.0, SIZE - 18.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{ylabel}</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    );
}

/// Ellipse outlines (blue = LMI, red = geometric) over an optional cloud.
/// Returns `None` unless every bound is two-dimensional.
pub fn bounds_plot(meta: &Metadata, title: &str, bounds: &[&ReachBound], cloud: &[[f64; 2]]) -> Option<String> {
    let outlines: Vec<(Method, String, Vec<[f64; 2]>)> = bounds
        .iter()
        .map(|b| Some((b.method, b.target.name().to_string(), b.shape.outline(180).ok()?)))
        .collect::<Option<_>>()?;
    let stride = cloud.len().div_ceil(MAX_POINTS).max(1);
    let shown: Vec<[f64; 2]> = cloud.iter().step_by(stride).copied().collect();
    let frame = Frame::fit(outlines.iter().flat_map(|(_, _, o)| o.iter().copied()).chain(shown.iter().copied()));

    let mut s = open(meta, title);
    axes(&mut s, &frame, "x1", "x2");
    s.push_str(r#"<g fill="black" fill-opacity="0.35">"#);
    for p in &shown {
        let (x, y) = frame.px(*p);
        let _ = write!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="1"/>"#);
    }
    s.push_str("</g>\n");
    for (i, (method, target, pts)) in outlines.iter().enumerate() {
        let path: Vec<String> = pts
            .iter()
            .map(|p| {
                let (x, y) = frame.px(*p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let dash = if target.starts_with("total") { r#" stroke-dasharray="6 3""# } else { "" };
        let c = colour(*method);
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.6"{dash}/>"#, path.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{c}">{} {}</text>"#,
            MARGIN + 8.0,
            SIZE - MARGIN - 10.0 - 15.0 * (outlines.len() - 1 - i) as f64,
            method.name(),
            target
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Triangle-domain heatmap; darker blue means larger volume.
pub fn heatmap_plot(meta: &Metadata, map: &HeatmapResult) -> String {
    let alpha = map.alpha;
    let step = alpha / (map.resolution - 1) as f64;
    let frame = Frame {
        x0: -step / 2.0,
        y0: -step / 2.0,
        span: alpha + step,
    };
    let vmax = map.cells.iter().map(|c| c.volume).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut s = open(meta, "attack-state cloud volume over (c1, w1)");
    axes(&mut s, &frame, "c1", "w1");
    for c in &map.cells {
        let t = c.volume / vmax;
        let shade = |lo: f64, hi: f64| (lo + (hi - lo) * t).round() as u8;
        let fill = format!("#{:02x}{:02x}{:02x}", shade(255.0, 8.0), shade(255.0, 29.0), shade(255.0, 120.0));
        let (x, y) = frame.px([c.c1 - step / 2.0, c.w1 + step / 2.0]);
        let w = step / frame.span * (SIZE - 2.0 * MARGIN);
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{w:.2}" fill="{fill}"><title>c1={:.4} w1={:.4} volume={:.5}</title></rect>"#,
            c.c1, c.w1, c.volume
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">max volume {vmax:.4}</text>"#, SIZE - MARGIN, MARGIN - 8.0);
    s.push_str("</svg>\n");
    s
}
