//! Hyperbolic convex hulls in the upper half-plane.
//!
//! The lift `z ↦ (Re z, |z|²)` sends every geodesic (vertical line or circle
//! centered on the real axis) to a straight line, so the h-hull of a finite
//! set is the preimage of the Euclidean convex hull of the lifted points.
//! Hulls are symmetric: points are folded into ℂ₊ and membership folds too.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::region::{RegionSG, Window};

/// Dedup and boundary tolerance in lifted coordinates.
pub const LIFT_TOL: f64 = 1e-12;

/// Reflects into the closed upper half-plane.
pub fn fold(z: Complex64) -> Complex64 {
    Complex64::new(z.re, z.im.abs())
}

/// Paraboloid lift `(Re z, (Re z)² + (Im z)²)`.
pub fn lift(z: Complex64) -> [f64; 2] {
    [z.re, z.re * z.re + z.im * z.im]
}

/// Inverse of [`lift`] on `v ≥ u²` (clamped onto the parabola below it).
pub fn unlift(p: [f64; 2]) -> Complex64 {
    Complex64::new(p[0], (p[1] - p[0] * p[0]).max(0.0).sqrt())
}

/// The geodesic through two points of ℂ₊.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Geodesic {
    /// Segment of the vertical line Re z = `re`.
    Vertical { re: f64, im_from: f64, im_to: f64 },
    /// Arc of the circle |z − center| = radius, angles in [0, π].
    Arc {
        center: f64,
        radius: f64,
        angle_from: f64,
        angle_to: f64,
    },
    /// Both endpoints coincide.
    Point { z: Complex64 },
}

/// Geodesic between `a` and `b` (both folded into ℂ₊ first).
pub fn geodesic(a: Complex64, b: Complex64) -> Geodesic {
    let (a, b) = (fold(a), fold(b));
    let scale = 1.0 + a.norm().max(b.norm());
    if (a - b).norm() <= 1e-14 * scale {
        return Geodesic::Point { z: a };
    }
    if (a.re - b.re).abs() <= 1e-14 * scale {
        return Geodesic::Vertical {
            re: 0.5 * (a.re + b.re),
            im_from: a.im,
            im_to: b.im,
        };
    }
    // |a − c|² = |b − c|²  ⇒  c = (|b|² − |a|²) / (2 (b.re − a.re))
    let center = (b.norm_sqr() - a.norm_sqr()) / (2.0 * (b.re - a.re));
    let radius = 0.5 * ((a - center).norm() + (b - center).norm());
    Geodesic::Arc {
        center,
        radius,
        angle_from: (a.im).atan2(a.re - center),
        angle_to: (b.im).atan2(b.re - center),
    }
}

impl Geodesic {
    /// Point at parameter t ∈ [0, 1] (linear in angle for arcs).
    pub fn point(&self, t: f64) -> Complex64 {
        match *self {
            Geodesic::Point { z } => z,
            Geodesic::Vertical { re, im_from, im_to } => {
                Complex64::new(re, im_from + t * (im_to - im_from))
            }
            Geodesic::Arc {
                center,
                radius,
                angle_from,
                angle_to,
            } => {
                let a = angle_from + t * (angle_to - angle_from);
                Complex64::new(center + radius * a.cos(), radius * a.sin())
            }
        }
    }
}

/// Point at parameter t along the geodesic from `a` to `b`.
pub fn geodesic_point(a: Complex64, b: Complex64, t: f64) -> Complex64 {
    geodesic(a, b).point(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullEdge {
    pub from: Complex64,
    pub to: Complex64,
    pub geodesic: Geodesic,
}

/// Symmetric h-hull of a finite point set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HHull {
    /// Upper-half vertices in counterclockwise lifted order.
    pub vertices: Vec<Complex64>,
    /// Lifted polygon, same order as `vertices`.
    pub lifted: Vec<[f64; 2]>,
    pub edges: Vec<HullEdge>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; returns strictly convex vertices counterclockwise.
/// Inputs must be deduplicated.
fn monotone_chain(mut pts: Vec<([f64; 2], Complex64)>) -> Vec<([f64; 2], Complex64)> {
    pts.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])));
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<([f64; 2], Complex64)> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2].0, hull[hull.len() - 1].0, p.0) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(hull[hull.len() - 2].0, hull[hull.len() - 1].0, p.0) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// h-hull of `points` (any half-plane; conjugates are folded together).
pub fn hhull(points: &[Complex64]) -> Result<HHull> {
    if points.is_empty() {
        return Err(Error::InvalidProblem("h-hull of an empty set".into()));
    }
    let mut lifted: Vec<([f64; 2], Complex64)> = Vec::with_capacity(points.len());
    for &z in points {
        let z = fold(z);
        if !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::InvalidProblem(format!("non-finite point {z}")));
        }
        let l = lift(z);
        let scale = 1.0 + l[0].abs() + l[1].abs();
        let dup = lifted.iter().any(|(q, _)| {
            (q[0] - l[0]).abs() <= LIFT_TOL * scale && (q[1] - l[1]).abs() <= LIFT_TOL * scale
        });
        if !dup {
            lifted.push((l, z));
        }
    }
    let hull = monotone_chain(lifted);
    let vertices: Vec<Complex64> = hull.iter().map(|h| h.1).collect();
    let lifted: Vec<[f64; 2]> = hull.iter().map(|h| h.0).collect();
    let edges = match vertices.len() {
        1 => Vec::new(),
        2 => vec![edge(vertices[0], vertices[1])],
        k => (0..k)
            .map(|i| edge(vertices[i], vertices[(i + 1) % k]))
            .collect(),
    };
    Ok(HHull {
        vertices,
        lifted,
        edges,
    })
}

fn edge(from: Complex64, to: Complex64) -> HullEdge {
    HullEdge {
        from,
        to,
        geodesic: geodesic(from, to),
    }
}

impl HHull {
    /// Membership of `z` or its conjugate.
    pub fn contains(&self, z: Complex64) -> bool {
        let p = lift(fold(z));
        let tol = LIFT_TOL * (1.0 + p[0].abs() + p[1].abs());
        match self.lifted.len() {
            0 => false,
            1 => dist(p, self.lifted[0]) <= tol,
            2 => segment_distance(p, self.lifted[0], self.lifted[1]) <= tol,
            k => (0..k).all(|i| {
                let a = self.lifted[i];
                let b = self.lifted[(i + 1) % k];
                let len = dist(a, b);
                cross(a, b, p) / len >= -tol
            }),
        }
    }

    /// Points spread along every edge, endpoints included.
    pub fn edge_points(&self, per_edge: usize) -> Vec<Complex64> {
        let mut out = self.vertices.clone();
        for e in &self.edges {
            for s in 1..per_edge {
                out.push(e.geodesic.point(s as f64 / per_edge as f64));
            }
        }
        out
    }

    /// Lifted polygon area (zero for degenerate hulls).
    pub fn lifted_area(&self) -> f64 {
        let k = self.lifted.len();
        if k < 3 {
            return 0.0;
        }
        0.5 * (0..k)
            .map(|i| {
                let a = self.lifted[i];
                let b = self.lifted[(i + 1) % k];
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Containment slack `absolute + relative·(1 + |z|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Slack {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for Slack {
    fn default() -> Self {
        Self {
            relative: 1e-6,
            absolute: 0.0,
        }
    }
}

impl Slack {
    pub fn at(&self, z: Complex64) -> f64 {
        self.absolute + self.relative * (1.0 + z.norm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMargin {
    pub index: usize,
    pub z: Complex64,
    /// Smallest constraint margin; negative means outside.
    pub margin: f64,
    pub inside: bool,
    /// Most violated constraint, when any constraint exists.
    pub worst_constraint: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionCertificate {
    pub verdict: bool,
    pub slack: Slack,
    pub samples: Vec<SampleMargin>,
    pub violations: Vec<usize>,
    pub min_margin: f64,
    pub spot_checks: usize,
    pub spot_failures: Vec<Complex64>,
}

/// Checks that the h-hull of the samples lies in the region. The region's
/// upper half is an intersection of hyperbolic half-planes, hence h-convex,
/// so inclusion reduces to sample membership; hull edges are spot-checked
/// as an independent geometric test.
pub fn certify_inclusion(
    samples: &[Complex64],
    region: &RegionSG,
    slack: Slack,
) -> InclusionCertificate {
    let margins: Vec<SampleMargin> = samples
        .iter()
        .enumerate()
        .map(|(index, &z)| {
            let worst = region.worst(z);
            let margin = worst.map_or(f64::INFINITY, |w| w.1);
            SampleMargin {
                index,
                z,
                margin,
                inside: margin >= -slack.at(z),
                worst_constraint: worst.map(|w| w.0),
            }
        })
        .collect();
    let violations: Vec<usize> = margins
        .iter()
        .filter(|m| !m.inside)
        .map(|m| m.index)
        .collect();
    let min_margin = margins
        .iter()
        .map(|m| m.margin)
        .fold(f64::INFINITY, f64::min);
    let (spot_checks, spot_failures) = match hhull(samples) {
        Ok(h) => {
            let pts = h.edge_points(16);
            let fails = pts
                .iter()
                .filter(|&&z| !region.contains(z, slack.at(z)))
                .cloned()
                .collect();
            (pts.len(), fails)
        }
        Err(_) => (0, Vec::new()),
    };
    InclusionCertificate {
        verdict: violations.is_empty() && spot_failures.is_empty(),
        slack,
        samples: margins,
        violations,
        min_margin,
        spot_checks,
        spot_failures,
    }
}

/// Share of the region's area (inside the window) covered by the hull.
/// Values near 1 mean the over-bound is close to the smallest one any
/// quadratic supply rate can certify.
pub fn gap_metric(hull: &HHull, region: &RegionSG, window: &Window, res: usize) -> Result<f64> {
    let region_area = region.area(window, res)?;
    if region_area <= 0.0 {
        return Err(Error::ZeroArea);
    }
    let covered = window.cell_area(res, |z| region.contains(z, 0.0) && hull.contains(z))?;
    Ok((covered / region_area).clamp(0.0, 1.0))
}
