//! SVG figures: filled region, hatched hull, sample points.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::hhull::HHull;
use crate::region::{Raster, Window};

const REGION_FILL: &str = "#9ecae1";
const REGION_STROKE: &str = "#08519c";
const HULL_STROKE: &str = "#a50f15";
const SAMPLE_FILL: &str = "#000000";

/// Fixed-viewBox SVG canvas over a complex-plane window.
pub struct Figure {
    window: Window,
    width: f64,
    height: f64,
    defs: String,
    body: String,
}

impl Figure {
    pub fn new(window: Window, width_px: f64) -> Self {
        let height = width_px * window.height() / window.width();
        Self {
            window,
            width: width_px,
            height,
            defs: String::new(),
            body: String::new(),
        }
    }

    fn px(&self, z: Complex64) -> (f64, f64) {
        let w = &self.window;
        (
            (z.re - w.re_min) / w.width() * self.width,
            (w.im_max - z.im) / w.height() * self.height,
        )
    }

    fn path(&self, pts: &[Complex64], close: bool) -> String {
        let mut d = String::new();
        for (k, z) in pts.iter().enumerate() {
            let (x, y) = self.px(*z);
            let _ = write!(d, "{}{x:.2},{y:.2}", if k == 0 { "M" } else { " L" });
        }
        if close {
            d.push_str(" Z");
        }
        d
    }

    /// Axes through the origin, when visible.
    pub fn axes(mut self) -> Self {
        let w = self.window;
        if w.im_min <= 0.0 && w.im_max >= 0.0 {
            let d = self.path(
                &[Complex64::new(w.re_min, 0.0), Complex64::new(w.re_max, 0.0)],
                false,
            );
            let _ = writeln!(
                self.body,
                r##"<path d="{d}" stroke="#888" stroke-width="0.5" fill="none"/>"##
            );
        }
        if w.re_min <= 0.0 && w.re_max >= 0.0 {
            let d = self.path(
                &[Complex64::new(0.0, w.im_min), Complex64::new(0.0, w.im_max)],
                false,
            );
            let _ = writeln!(
                self.body,
                r##"<path d="{d}" stroke="#888" stroke-width="0.5" fill="none"/>"##
            );
        }
        self
    }

    /// Raster cells as filled row runs plus the boundary polylines.
    pub fn region(mut self, raster: &Raster) -> Self {
        let res = raster.res;
        let w = raster.window;
        let dx = w.width() / (res - 1) as f64;
        let dy = w.height() / (res - 1) as f64;
        let mut d = String::new();
        for (j, row) in raster.mask.iter().enumerate() {
            let mut i = 0;
            while i < res {
                if !row[i] {
                    i += 1;
                    continue;
                }
                let start = i;
                while i < res && row[i] {
                    i += 1;
                }
                let lo = Complex64::new(
                    w.re_min + (start as f64 - 0.5) * dx,
                    w.im_min + (j as f64 - 0.5) * dy,
                );
                let hi = Complex64::new(
                    w.re_min + (i as f64 - 0.5) * dx,
                    w.im_min + (j as f64 + 0.5) * dy,
                );
                let (x0, y1) = self.px(lo);
                let (x1, y0) = self.px(hi);
                let _ = write!(d, "M{x0:.2},{y0:.2} H{x1:.2} V{y1:.2} H{x0:.2} Z ");
            }
        }
        let _ = writeln!(
            self.body,
            r#"<path d="{}" fill="{REGION_FILL}" stroke="none"/>"#,
            d.trim_end()
        );
        for line in &raster.polylines {
            let d = self.path(line, false);
            let _ = writeln!(
                self.body,
                r#"<path d="{d}" stroke="{REGION_STROKE}" stroke-width="1" fill="none"/>"#
            );
        }
        self
    }

    /// Hull and its mirror image, hatched.
    pub fn hull(mut self, hull: &HHull) -> Self {
        if !self.defs.contains("hatch") {
            let _ = writeln!(
                self.defs,
                r#"<pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="6" stroke="{HULL_STROKE}" stroke-width="1"/></pattern>"#
            );
        }
        let per_edge = 32;
        let mut upper = Vec::new();
        if hull.edges.len() <= 1 {
            upper = hull.edge_points(per_edge);
        } else {
            for e in &hull.edges {
                for s in 0..per_edge {
                    upper.push(e.geodesic.point(s as f64 / per_edge as f64));
                }
            }
        }
        let lower: Vec<Complex64> = upper.iter().map(|z| z.conj()).collect();
        for pts in [upper, lower] {
            let d = self.path(&pts, hull.edges.len() > 1);
            let _ = writeln!(
                self.body,
                r#"<path d="{d}" fill="url(#hatch)" stroke="{HULL_STROKE}" stroke-width="1"/>"#
            );
        }
        self
    }

    pub fn samples(mut self, points: &[Complex64]) -> Self {
        for z in points {
            for p in [*z, z.conj()] {
                let (x, y) = self.px(p);
                let _ = writeln!(
                    self.body,
                    r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5" fill="{SAMPLE_FILL}"/>"#
                );
            }
        }
        self
    }

    pub fn render(&self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.2} {h:.2}\" width=\"{w:.0}\" height=\"{h:.0}\">\n<defs>\n{defs}</defs>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            defs = self.defs,
            body = self.body,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hhull::hhull;
    use crate::region::{DiscConstraint, RegionSG};

    #[test]
    fn region_and_hull_render_deterministically() {
        let w = Window::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let r = RegionSG::new(vec![DiscConstraint::interior(0.0, 0.5)])
            .raster(&w, 40)
            .unwrap();
        let h = hhull(&[
            Complex64::new(0.1, 0.2),
            Complex64::new(0.3, 0.1),
            Complex64::new(-0.2, 0.3),
        ])
        .unwrap();
        let svg = |r: &Raster| {
            Figure::new(w, 400.0)
                .axes()
                .region(r)
                .hull(&h)
                .samples(&h.vertices)
                .render()
        };
        let a = svg(&r);
        assert_eq!(a, svg(&r));
        assert!(a.starts_with("<svg") && a.contains("viewBox=\"0 0 400.00 400.00\""));
        assert!(a.contains("url(#hatch)"));
        assert_eq!(a.matches("<circle").count(), 6);
    }
}
