//! Intersections of disc interiors and exteriors centered on the real axis.

use std::collections::HashMap;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the circle a constraint keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sigma {
    /// σ = −1: |z − c| ≤ r
    Interior,
    /// σ = +1: |z − c| ≥ r
    Exterior,
}

impl Sigma {
    pub fn value(self) -> f64 {
        match self {
            Sigma::Interior => -1.0,
            Sigma::Exterior => 1.0,
        }
    }
}

impl From<Sigma> for i8 {
    fn from(s: Sigma) -> i8 {
        match s {
            Sigma::Interior => -1,
            Sigma::Exterior => 1,
        }
    }
}

impl TryFrom<i8> for Sigma {
    type Error = String;
    fn try_from(v: i8) -> std::result::Result<Self, String> {
        match v {
            -1 => Ok(Sigma::Interior),
            1 => Ok(Sigma::Exterior),
            other => Err(format!("sigma must be -1 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscConstraint {
    pub sigma: Sigma,
    pub center: f64,
    pub radius: f64,
}

impl DiscConstraint {
    pub fn interior(center: f64, radius: f64) -> Self {
        Self {
            sigma: Sigma::Interior,
            center,
            radius,
        }
    }

    pub fn exterior(center: f64, radius: f64) -> Self {
        Self {
            sigma: Sigma::Exterior,
            center,
            radius,
        }
    }

    /// Signed distance-like margin: nonnegative iff the constraint holds.
    pub fn margin(&self, z: Complex64) -> f64 {
        let d = (z - self.center).norm();
        match self.sigma {
            Sigma::Interior => self.radius - d,
            Sigma::Exterior => d - self.radius,
        }
    }
}

/// Window [re_min, re_max] × [im_min, im_max] in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Window {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Result<Self> {
        let w = Self {
            re_min,
            re_max,
            im_min,
            im_max,
        };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.re_max > self.re_min && self.im_max > self.im_min) {
            return Err(Error::EmptyWindow);
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    pub fn height(&self) -> f64 {
        self.im_max - self.im_min
    }

    /// Grid node (i, j) of a res × res lattice including the edges.
    pub fn node(&self, i: usize, j: usize, res: usize) -> Complex64 {
        let dx = self.width() / (res - 1) as f64;
        let dy = self.height() / (res - 1) as f64;
        Complex64::new(self.re_min + i as f64 * dx, self.im_min + j as f64 * dy)
    }

    /// Midpoint-rule area of the subset where `inside` holds, on res × res cells.
    pub fn cell_area(&self, res: usize, inside: impl Fn(Complex64) -> bool + Sync) -> Result<f64> {
        self.check()?;
        if res == 0 {
            return Err(Error::EmptyWindow);
        }
        let dx = self.width() / res as f64;
        let dy = self.height() / res as f64;
        let count: usize = (0..res)
            .into_par_iter()
            .map(|j| {
                let y = self.im_min + (j as f64 + 0.5) * dy;
                (0..res)
                    .filter(|&i| inside(Complex64::new(self.re_min + (i as f64 + 0.5) * dx, y)))
                    .count()
            })
            .sum();
        Ok(count as f64 * dx * dy)
    }
}

/// Over-bound as an intersection of disc constraints. An empty list is the
/// whole plane.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionSG {
    pub constraints: Vec<DiscConstraint>,
}

/// Sample-containment slack 1e-6·(1 + |z|).
pub fn sample_slack(z: Complex64) -> f64 {
    1e-6 * (1.0 + z.norm())
}

impl RegionSG {
    pub fn new(constraints: Vec<DiscConstraint>) -> Self {
        Self { constraints }
    }

    /// Smallest constraint margin (+∞ for the empty intersection).
    pub fn margin(&self, z: Complex64) -> f64 {
        self.constraints
            .iter()
            .map(|c| c.margin(z))
            .fold(f64::INFINITY, f64::min)
    }

    /// Index and margin of the most violated constraint.
    pub fn worst(&self, z: Complex64) -> Option<(usize, f64)> {
        self.constraints
            .iter()
            .enumerate()
            .map(|(k, c)| (k, c.margin(z)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn contains(&self, z: Complex64, slack: f64) -> bool {
        self.constraints.iter().all(|c| c.margin(z) >= -slack)
    }

    pub fn push(&mut self, c: DiscConstraint) {
        self.constraints.push(c);
    }

    pub fn raster(&self, window: &Window, res: usize) -> Result<Raster> {
        window.check()?;
        if res < 2 {
            return Err(Error::InvalidProblem(
                "raster resolution must be at least 2".into(),
            ));
        }
        let margins: Vec<Vec<f64>> = (0..res)
            .into_par_iter()
            .map(|j| {
                (0..res)
                    .map(|i| self.margin(window.node(i, j, res)))
                    .collect()
            })
            .collect();
        let mask: Vec<Vec<bool>> = margins
            .iter()
            .map(|row| row.iter().map(|&m| m >= 0.0).collect())
            .collect();
        let polylines = marching_squares(&mask, &margins, window, |z| self.margin(z));
        Ok(Raster {
            window: *window,
            res,
            mask,
            polylines,
        })
    }

    pub fn area(&self, window: &Window, res: usize) -> Result<f64> {
        window.cell_area(res, |z| self.contains(z, 0.0))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Boolean grid (row j = imaginary index, column i = real index) plus
/// boundary polylines in complex coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub window: Window,
    pub res: usize,
    pub mask: Vec<Vec<bool>>,
    pub polylines: Vec<Vec<Complex64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    /// between nodes (i, j) and (i+1, j)
    H(usize, usize),
    /// between nodes (i, j) and (i, j+1)
    V(usize, usize),
}

/// Boundary polylines of a mask. Crossing points are placed by linear
/// interpolation of the margin field along each cell edge; saddles are
/// resolved with the margin at the cell center.
pub fn marching_squares(
    mask: &[Vec<bool>],
    field: &[Vec<f64>],
    window: &Window,
    center_field: impl Fn(Complex64) -> f64,
) -> Vec<Vec<Complex64>> {
    let res = mask.len();
    if res < 2 {
        return Vec::new();
    }
    let point = |e: Edge| -> Complex64 {
        let (a, b) = match e {
            Edge::H(i, j) => ((i, j), (i + 1, j)),
            Edge::V(i, j) => ((i, j), (i, j + 1)),
        };
        let fa = field[a.1][a.0];
        let fb = field[b.1][b.0];
        let t = if (fa - fb).abs() > 0.0 {
            (fa / (fa - fb)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let za = window.node(a.0, a.1, res);
        let zb = window.node(b.0, b.1, res);
        za + (zb - za) * t
    };
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..res - 1 {
        for i in 0..res - 1 {
            let bl = mask[j][i];
            let br = mask[j][i + 1];
            let tr = mask[j + 1][i + 1];
            let tl = mask[j + 1][i];
            let case = (bl as u8) | (br as u8) << 1 | (tr as u8) << 2 | (tl as u8) << 3;
            let bottom = Edge::H(i, j);
            let top = Edge::H(i, j + 1);
            let left = Edge::V(i, j);
            let right = Edge::V(i + 1, j);
            match case {
                0 | 15 => {}
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 | 10 => {
                    let mid = (window.node(i, j, res) + window.node(i + 1, j + 1, res)) * 0.5;
                    let center_in = center_field(mid) >= 0.0;
                    // case 5: bl & tr inside
                    if (case == 5) == center_in {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    } else {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    chain_segments(&segments)
        .into_iter()
        .map(|edges| edges.into_iter().map(point).collect())
        .collect()
}

fn chain_segments(segments: &[(Edge, Edge)]) -> Vec<Vec<Edge>> {
    let mut adj: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adj.entry(*a).or_default().push(k);
        adj.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    // open chains first (start at edges with a single segment), then loops
    let mut starts: Vec<Edge> = adj
        .iter()
        .filter(|(_, v)| v.len() == 1)
        .map(|(e, _)| *e)
        .collect();
    starts.sort_by_key(edge_key);
    let mut loop_starts: Vec<usize> = (0..segments.len()).collect();
    loop_starts.sort_by_key(|&k| edge_key(&segments[k].0));
    let walk = |start: Edge, used: &mut Vec<bool>| -> Vec<Edge> {
        let mut line = vec![start];
        let mut cur = start;
        while let Some(&k) = adj[&cur].iter().find(|&&k| !used[k]) {
            used[k] = true;
            let (a, b) = segments[k];
            cur = if a == cur { b } else { a };
            line.push(cur);
        }
        line
    };
    for s in starts {
        if adj[&s].iter().any(|&k| !used[k]) {
            lines.push(walk(s, &mut used));
        }
    }
    for k in loop_starts {
        if !used[k] {
            lines.push(walk(segments[k].0, &mut used));
        }
    }
    lines
}

fn edge_key(e: &Edge) -> (u8, usize, usize) {
    match *e {
        Edge::H(i, j) => (0, j, i),
        Edge::V(i, j) => (1, j, i),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn unit_disc() -> RegionSG {
        RegionSG::new(vec![DiscConstraint::interior(0.0, 1.0)])
    }

    fn annulus() -> RegionSG {
        RegionSG::new(vec![
            DiscConstraint::interior(0.0, 1.0),
            DiscConstraint::exterior(0.0, 0.3),
        ])
    }

    #[test]
    fn membership_examples() {
        assert!(unit_disc().contains(c(0.5, 0.0), 0.0));
        assert!(!unit_disc().contains(c(2.0, 0.0), 0.0));
        assert!(!annulus().contains(c(0.1, 0.0), 0.0));
        assert!(annulus().contains(c(0.5, 0.2), 0.0));
        assert!(RegionSG::default().contains(c(1e6, -3.0), 0.0));
        // slack admits near misses
        assert!(unit_disc().contains(c(1.0 + 1e-7, 0.0), 1e-6));
    }

    #[test]
    fn raster_circle_boundary() {
        let w = Window::new(-2.0, 2.0, -2.0, 2.0).unwrap();
        let r = unit_disc().raster(&w, 401).unwrap();
        let cell = 4.0 / 400.0;
        assert_eq!(r.polylines.len(), 1);
        let line = &r.polylines[0];
        // boundary → circle
        assert!(line.iter().all(|z| (z.norm() - 1.0).abs() <= 2.0 * cell));
        // circle → boundary
        for k in 0..720 {
            let a = k as f64 * PI / 360.0;
            let p = Complex64::from_polar(1.0, a);
            let d = line
                .iter()
                .map(|z| (z - p).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 2.0 * cell, "angle {a}: {d}");
        }
    }

    #[test]
    fn raster_edge_cases() {
        let w = Window::new(-1.0, 1.0, -1.0, 1.0).unwrap();
        let full = RegionSG::default().raster(&w, 11).unwrap();
        assert!(full.mask.iter().flatten().all(|&b| b));
        assert!(full.polylines.is_empty());
        let ring = annulus()
            .raster(&Window::new(-2.0, 2.0, -2.0, 2.0).unwrap(), 201)
            .unwrap();
        assert_eq!(ring.polylines.len(), 2);
        assert!(Window::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(unit_disc().raster(&w, 1).is_err());
    }

    #[test]
    fn area_examples() {
        let w = Window::new(-2.0, 2.0, -2.0, 2.0).unwrap();
        assert!((unit_disc().area(&w, 1001).unwrap() - PI).abs() < 0.02);
        let empty = RegionSG::new(vec![DiscConstraint::interior(0.0, 0.0)]);
        assert_eq!(empty.area(&w, 100).unwrap(), 0.0);
        assert!((annulus().area(&w, 1001).unwrap() - PI * (1.0 - 0.09)).abs() < 0.02);
    }

    #[test]
    fn adding_constraints_shrinks() {
        let w = Window::new(-2.0, 2.0, -2.0, 2.0).unwrap();
        let mut reg = unit_disc();
        let before = reg.raster(&w, 81).unwrap().mask;
        reg.push(DiscConstraint::exterior(0.5, 0.4));
        let after = reg.raster(&w, 81).unwrap().mask;
        for (rb, ra) in before.iter().zip(&after) {
            for (b, a) in rb.iter().zip(ra) {
                assert!(!a || *b);
            }
        }
    }

    #[test]
    fn conjugate_symmetry_and_h_convexity() {
        use rand::{Rng, SeedableRng};
        let reg = RegionSG::new(vec![
            DiscConstraint::interior(0.3, 1.2),
            DiscConstraint::exterior(-0.8, 0.5),
            DiscConstraint::exterior(2.0, 1.1),
        ]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut inside = Vec::new();
        for _ in 0..4000 {
            let z = c(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            assert_eq!(reg.contains(z, 0.0), reg.contains(z.conj(), 0.0));
            if reg.contains(z, 0.0) && z.im > 0.0 {
                inside.push(z);
            }
        }
        assert!(inside.len() > 100);
        for pair in inside.chunks(2).filter(|p| p.len() == 2) {
            let mid = crate::hhull::geodesic_point(pair[0], pair[1], 0.5);
            assert!(
                reg.contains(mid, 1e-9),
                "{:?} {:?} -> {mid}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn json_sigma_encoding() {
        let reg = annulus();
        let text = serde_json::to_string(&reg).unwrap();
        assert!(text.contains("\"sigma\":-1"));
        assert!(text.contains("\"sigma\":1"));
        let back: RegionSG = serde_json::from_str(&text).unwrap();
        assert_eq!(back, reg);
        assert!(serde_json::from_str::<RegionSG>(
            r#"{"constraints":[{"sigma":0,"center":0,"radius":1}]}"#
        )
        .is_err());
    }
}
