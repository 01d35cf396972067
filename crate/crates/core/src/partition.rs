//! Polytopic conical partitions of the flow and jump sets.
//!
//! Each cell is a closed cone `{x : E x ≥ 0}`. The continuity matrices `F`
//! give a piecewise-quadratic storage `xᵀ Fᵢᵀ Φ Fᵢ x` that agrees on shared
//! boundaries for every symmetric Φ.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on ‖F_k x − F_l x‖∞ for unit x on a shared ray.
pub const CONTINUITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Flow,
    Jump,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Cone description `{x : E x ≥ 0}`.
    pub e: DMatrix<f64>,
    /// Continuity matrix; `rows == ConicalPartition::phi_dim`.
    pub f: DMatrix<f64>,
    pub kind: CellKind,
    /// Indices of the bounding rays (lower, upper) in counterclockwise order.
    pub rays: Option<(usize, usize)>,
}

impl Cell {
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (&self.e * x).iter().all(|&v| v >= -tol)
    }

    /// Storage matrix Fᵀ Φ F of this cell.
    pub fn storage(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        self.f.transpose() * phi * &self.f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicalPartition {
    dim: usize,
    phi_dim: usize,
    /// Unit rays in counterclockwise order (2-D builder only).
    rays: Vec<Vector2<f64>>,
    cells: Vec<Cell>,
    flow_idx: Vec<usize>,
    jump_idx: Vec<usize>,
    /// Each cell stands for itself and its mirror image −X. Only valid with a
    /// common storage matrix, where every quadratic form is even.
    mirrored: bool,
}

impl ConicalPartition {
    /// Assembles a partition from user-supplied cells of any dimension.
    pub fn from_cells(cells: Vec<Cell>, mirrored: bool) -> Result<Self> {
        let first = cells
            .first()
            .ok_or_else(|| Error::Partition("partition has no cells".into()))?;
        let dim = first.e.ncols();
        let phi_dim = first.f.nrows();
        for (k, c) in cells.iter().enumerate() {
            if c.e.ncols() != dim || c.f.ncols() != dim || c.f.nrows() != phi_dim {
                return Err(Error::Partition(format!("cell {k} has inconsistent shape")));
            }
        }
        let flow_idx = (0..cells.len())
            .filter(|&k| cells[k].kind == CellKind::Flow)
            .collect();
        let jump_idx = (0..cells.len())
            .filter(|&k| cells[k].kind == CellKind::Jump)
            .collect();
        Ok(Self {
            dim,
            phi_dim,
            rays: Vec::new(),
            cells,
            flow_idx,
            jump_idx,
            mirrored,
        })
    }

    /// Single flow cell covering ℝⁿ, used when the jump set is empty.
    pub fn trivial(dim: usize) -> Self {
        Self {
            dim,
            phi_dim: dim,
            rays: Vec::new(),
            cells: vec![Cell {
                e: DMatrix::zeros(dim, dim),
                f: DMatrix::identity(dim, dim),
                kind: CellKind::Flow,
                rays: None,
            }],
            flow_idx: vec![0],
            jump_idx: Vec::new(),
            mirrored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn phi_dim(&self) -> usize {
        self.phi_dim
    }
    pub fn rays(&self) -> &[Vector2<f64>] {
        &self.rays
    }
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }
    pub fn flow_idx(&self) -> &[usize] {
        &self.flow_idx
    }
    pub fn jump_idx(&self) -> &[usize] {
        &self.jump_idx
    }
    pub fn is_mirrored(&self) -> bool {
        self.mirrored
    }
    pub fn len(&self) -> usize {
        self.cells.len()
    }
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Storage matrices Pᵢ = Fᵢᵀ Φ Fᵢ for all cells.
    pub fn storage_matrices(&self, phi: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        self.cells.iter().map(|c| c.storage(phi)).collect()
    }

    /// Index of the lowest cell containing `x`. The origin belongs to every
    /// cell and maps to index 0.
    pub fn cell_of(&self, x: &DVector<f64>) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!(
                "point has length {}, partition dimension is {}",
                x.len(),
                self.dim
            )));
        }
        let scale = x.amax();
        if scale == 0.0 {
            return Ok(0);
        }
        let xs = x / scale;
        let tol = 1e-12;
        if let Some(k) = self.cells.iter().position(|c| c.contains(&xs, tol)) {
            return Ok(k);
        }
        if self.mirrored {
            let neg = -&xs;
            if let Some(k) = self.cells.iter().position(|c| c.contains(&neg, tol)) {
                return Ok(k);
            }
        }
        Err(Error::Partition("point not covered by any cell".into()))
    }

    /// Pairs of cells sharing a boundary ray, with the ray (2-D only).
    pub fn shared_rays(&self) -> Vec<(usize, usize, Vector2<f64>)> {
        if self.dim != 2 {
            return Vec::new();
        }
        let bounds: Vec<Option<[Vector2<f64>; 2]>> = self.cells.iter().map(boundary_rays).collect();
        let mut out = Vec::new();
        for k in 0..self.cells.len() {
            for l in k + 1..self.cells.len() {
                let (Some(bk), Some(bl)) = (&bounds[k], &bounds[l]) else {
                    continue;
                };
                for rk in bk {
                    if bl.iter().any(|rl| (rk - rl).norm() < 1e-9) {
                        out.push((k, l, *rk));
                    }
                }
            }
        }
        out
    }

    /// Samples random points on every shared ray and checks `F_k x = F_l x`.
    pub fn check_continuity(&self, trials: usize, seed: u64) -> bool {
        self.max_continuity_defect(trials, seed) <= CONTINUITY_TOL
    }

    /// Largest ‖F_k x − F_l x‖∞ over sampled unit points on shared rays.
    pub fn max_continuity_defect(&self, trials: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for (k, l, ray) in self.shared_rays() {
            for _ in 0..trials.max(1) {
                let alpha: f64 = rng.gen_range(1e-3..1e3);
                let x = DVector::from_column_slice(&[ray.x * alpha, ray.y * alpha]);
                let diff = &self.cells[k].f * &x - &self.cells[l].f * &x;
                worst = worst.max(diff.amax() / alpha);
            }
        }
        worst
    }

    /// Largest |xᵀP_k x − xᵀP_l x| over `points` random unit vectors drawn
    /// on shared rays, for the storage built from `phi`.
    pub fn storage_defect(&self, phi: &DMatrix<f64>, points: usize, seed: u64) -> f64 {
        let shared = self.shared_rays();
        if shared.is_empty() {
            return 0.0;
        }
        let ps = self.storage_matrices(phi);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let (k, l, ray) = shared[rng.gen_range(0..shared.len())];
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let x = DVector::from_column_slice(&[ray.x, ray.y]) * (sign / ray.norm());
            let vk = (x.transpose() * &ps[k] * &x)[0];
            let vl = (x.transpose() * &ps[l] * &x)[0];
            worst = worst.max((vk - vl).abs());
        }
        worst
    }

    pub fn to_file_repr(&self) -> PartitionFile {
        PartitionFile {
            dim: self.dim,
            phi_dim: self.phi_dim,
            mirrored: self.mirrored,
            ray_angles: self.rays.iter().map(|r| r.y.atan2(r.x)).collect(),
            cells: self
                .cells
                .iter()
                .map(|c| CellFile {
                    e: linalg::to_rows(&c.e),
                    f: linalg::to_rows(&c.f),
                    kind: c.kind,
                    rays: c.rays,
                })
                .collect(),
        }
    }

    pub fn from_file_repr(file: &PartitionFile) -> Result<Self> {
        let cells = file
            .cells
            .iter()
            .map(|c| {
                Ok(Cell {
                    e: linalg::from_rows(&c.e)?,
                    f: linalg::from_rows(&c.f)?,
                    kind: c.kind,
                    rays: c.rays,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut part = Self::from_cells(cells, file.mirrored)?;
        if part.dim != file.dim || part.phi_dim != file.phi_dim {
            return Err(Error::Partition(
                "declared dimensions disagree with cells".into(),
            ));
        }
        part.rays = file
            .ray_angles
            .iter()
            .map(|a| Vector2::new(a.cos(), a.sin()))
            .collect();
        Ok(part)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: PartitionFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file_repr(&file)
    }
}

/// JSON dump of a partition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionFile {
    pub dim: usize,
    pub phi_dim: usize,
    #[serde(default)]
    pub mirrored: bool,
    #[serde(default)]
    pub ray_angles: Vec<f64>,
    pub cells: Vec<CellFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellFile {
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    pub kind: CellKind,
    #[serde(default)]
    pub rays: Option<(usize, usize)>,
}

/// Bounding rays of a 2-D cone cell, oriented into the cone. None for E = 0.
fn boundary_rays(cell: &Cell) -> Option<[Vector2<f64>; 2]> {
    if cell.e.nrows() != 2 || cell.e.ncols() != 2 || cell.e.norm() == 0.0 {
        return None;
    }
    let mut out = [Vector2::zeros(); 2];
    for (r, slot) in out.iter_mut().enumerate() {
        let row = Vector2::new(cell.e[(r, 0)], cell.e[(r, 1)]);
        let other = Vector2::new(cell.e[(1 - r, 0)], cell.e[(1 - r, 1)]);
        let mut dir = Vector2::new(-row.y, row.x).normalize();
        if other.dot(&dir) < 0.0 {
            dir = -dir;
        }
        *slot = dir;
    }
    Some(out)
}

fn unit(angle: f64) -> Vector2<f64> {
    Vector2::new(angle.cos(), angle.sin())
}

fn wrap(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Cell spanned counterclockwise from `va` to `vb` (angle < π).
fn cone_cell(
    va: &Vector2<f64>,
    vb: &Vector2<f64>,
    ia: usize,
    ib: usize,
    phi_dim: usize,
    kind: CellKind,
) -> Result<Cell> {
    let na = Vector2::new(-va.y, va.x);
    let nb = Vector2::new(vb.y, -vb.x);
    let e = DMatrix::from_row_slice(2, 2, &[na.x, na.y, nb.x, nb.y]);
    let basis = Matrix2::from_columns(&[*va, *vb]);
    let inv = basis
        .try_inverse()
        .ok_or_else(|| Error::Partition("degenerate cone (parallel rays)".into()))?;
    let mut f = DMatrix::zeros(phi_dim, 2);
    for j in 0..2 {
        f[(ia, j)] += inv[(0, j)];
        f[(ib, j)] += inv[(1, j)];
    }
    Ok(Cell {
        e,
        f,
        kind,
        rays: Some((ia, ib)),
    })
}

/// Conical partition of ℝ² for the sets `xᵀMx ≥ 0` (flow) and `xᵀMx < 0`
/// (jump). The two flow fans are each split into `(n_cells − 2)/2`
/// equal-angle cones; each jump fan is one cone. An empty jump set yields
/// [`ConicalPartition::trivial`].
pub fn build_partition(m: &DMatrix<f64>, n_cells: usize) -> Result<ConicalPartition> {
    let (neg_dir, pos_dir, lam_neg, lam_pos) = split_form(m)?;
    if lam_neg >= 0.0 {
        return Ok(ConicalPartition::trivial(2));
    }
    if n_cells < 4 {
        return Err(Error::Partition(format!(
            "need at least 4 cells, got {n_cells}"
        )));
    }
    if !n_cells.is_multiple_of(2) {
        return Err(Error::Partition(format!(
            "N − 2 must be even, got N = {n_cells}"
        )));
    }
    let per_fan = (n_cells - 2) / 2;

    // boundary directions d± = √λ₊ q₋ ± √(−λ₋) q₊, and their negatives
    let d_plus = (neg_dir * lam_pos.sqrt() + pos_dir * (-lam_neg).sqrt()).normalize();
    let d_minus = (neg_dir * lam_pos.sqrt() - pos_dir * (-lam_neg).sqrt()).normalize();
    let mut boundary: Vec<f64> = [d_plus, d_minus, -d_plus, -d_minus]
        .iter()
        .map(|d| wrap(d.y.atan2(d.x)))
        .collect();
    boundary.sort_by(f64::total_cmp);

    let form = |v: &Vector2<f64>| {
        let mv = DVector::from_column_slice(&[v.x, v.y]);
        mv.dot(&(m * &mv))
    };
    let mut angles = Vec::with_capacity(n_cells);
    let mut fan_kinds = Vec::with_capacity(4);
    for k in 0..4 {
        let lo = boundary[k];
        let hi = if k == 3 {
            boundary[0] + TAU
        } else {
            boundary[k + 1]
        };
        let kind = if form(&unit(0.5 * (lo + hi))) >= 0.0 {
            CellKind::Flow
        } else {
            CellKind::Jump
        };
        fan_kinds.push(kind);
        let pieces = if kind == CellKind::Flow { per_fan } else { 1 };
        for s in 0..pieces {
            angles.push(lo + (hi - lo) * s as f64 / pieces as f64);
        }
    }
    debug_assert_eq!(angles.len(), n_cells);
    if fan_kinds.iter().filter(|&&k| k == CellKind::Flow).count() != 2 {
        return Err(Error::Partition(
            "jump set is not a union of two opposite cones".into(),
        ));
    }

    // cell k spans angles[k] .. angles[k+1]
    let kinds: Vec<CellKind> = (0..n_cells)
        .map(|k| {
            let lo = angles[k];
            let hi = if k + 1 == n_cells {
                angles[0] + TAU
            } else {
                angles[k + 1]
            };
            if form(&unit(0.5 * (lo + hi))) >= 0.0 {
                CellKind::Flow
            } else {
                CellKind::Jump
            }
        })
        .collect();
    let rays: Vec<Vector2<f64>> = angles.iter().map(|&a| unit(a)).collect();
    let mut cells = Vec::with_capacity(n_cells);
    for k in 0..n_cells {
        let next = (k + 1) % n_cells;
        cells.push(cone_cell(
            &rays[k],
            &rays[next],
            k,
            next,
            n_cells,
            kinds[k],
        )?);
    }
    let mut part = ConicalPartition::from_cells(cells, false)?;
    part.rays = rays;
    Ok(part)
}

/// Common-quadratic storage on the same sets: one flow cone and one jump
/// cone with `F = I`, each standing for itself and its mirror image.
pub fn common_quadratic(m: &DMatrix<f64>) -> Result<ConicalPartition> {
    let full = build_partition(m, 4)?;
    if full.jump_idx.is_empty() {
        return Ok(full);
    }
    let pick = |kind: CellKind| {
        full.cells
            .iter()
            .find(|c| c.kind == kind)
            .map(|c| Cell {
                e: c.e.clone(),
                f: DMatrix::identity(2, 2),
                kind,
                rays: c.rays,
            })
            .expect("builder yields both kinds")
    };
    let mut part =
        ConicalPartition::from_cells(vec![pick(CellKind::Flow), pick(CellKind::Jump)], true)?;
    part.rays = full.rays;
    Ok(part)
}

/// Eigen-split of a symmetric 2×2 form: (direction of smaller eigenvalue,
/// direction of larger, smaller, larger). Rejects forms whose flow set has
/// empty interior.
fn split_form(m: &DMatrix<f64>) -> Result<(Vector2<f64>, Vector2<f64>, f64, f64)> {
    if m.nrows() != 2 || m.ncols() != 2 {
        return Err(Error::Partition(format!(
            "conical builder supports n = 2 only, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if linalg::asymmetry(m) > crate::reset_model::SYMMETRY_TOL {
        return Err(Error::Partition("M is not symmetric".into()));
    }
    let eig = linalg::symmetrize(m).symmetric_eigen();
    let (i_lo, i_hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let lam_lo = eig.eigenvalues[i_lo];
    let lam_hi = eig.eigenvalues[i_hi];
    let col = |i: usize| Vector2::new(eig.eigenvectors[(0, i)], eig.eigenvectors[(1, i)]);
    let scale = lam_lo.abs().max(lam_hi.abs()).max(1e-300);
    if lam_hi <= 1e-14 * scale {
        return Err(Error::Partition(
            "flow set has empty interior (M negative semidefinite)".into(),
        ));
    }
    let lam_lo = if lam_lo.abs() <= 1e-14 * scale {
        0.0
    } else {
        lam_lo
    };
    Ok((col(i_lo), col(i_hi), lam_lo, lam_hi))
}

/// Angular width of a 2-D cell in radians (π for the trivial cell).
pub fn cell_angle(part: &ConicalPartition, k: usize) -> f64 {
    match part.cells[k].rays {
        Some((a, b)) if !part.rays.is_empty() => {
            let (ra, rb) = (part.rays[a], part.rays[b]);
            wrap(rb.y.atan2(rb.x) - ra.y.atan2(ra.x))
        }
        _ => PI,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reset_model::presets;
    use proptest::prelude::{prop_assert_eq, prop_assume, proptest};

    fn v2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_column_slice(&[x, y])
    }

    /// Boundary angles of 0.81 x₁² − x₂² = 0 solved directly.
    fn siso_boundary_angles() -> Vec<f64> {
        let b = 0.9f64.atan();
        let mut a = vec![wrap(b), wrap(PI - b), wrap(PI + b), wrap(-b)];
        a.sort_by(f64::total_cmp);
        a
    }

    #[test]
    fn four_cells_sit_on_boundary_rays() {
        let part = build_partition(presets::siso().m(), 4).unwrap();
        assert_eq!(part.len(), 4);
        let angles: Vec<f64> = part.rays().iter().map(|r| wrap(r.y.atan2(r.x))).collect();
        for (got, want) in angles.iter().zip(siso_boundary_angles()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((0.9f64.atan().to_degrees() - 41.987).abs() < 1e-3);
        assert_eq!(part.flow_idx().len(), 2);
        assert_eq!(part.jump_idx().len(), 2);
        let k = part.cell_of(&v2(1.0, 0.0)).unwrap();
        assert_eq!(part.cells()[k].kind, CellKind::Flow);
        let k = part.cell_of(&v2(-1.0, 0.0)).unwrap();
        assert_eq!(part.cells()[k].kind, CellKind::Flow);
        let k = part.cell_of(&v2(0.0, 1.0)).unwrap();
        assert_eq!(part.cells()[k].kind, CellKind::Jump);
    }

    #[test]
    fn forty_cells() {
        let part = build_partition(presets::siso().m(), 40).unwrap();
        assert_eq!(part.flow_idx().len(), 38);
        assert_eq!(part.jump_idx().len(), 2);
        assert_eq!(part.phi_dim(), 40);
        let w: Vec<f64> = part
            .flow_idx()
            .iter()
            .map(|&k| cell_angle(&part, k))
            .collect();
        let expect = 2.0 * 0.9f64.atan() / 19.0;
        assert!(w.iter().all(|a| (a - expect).abs() < 1e-12));
        assert!(part.check_continuity(50, 1));
    }

    #[test]
    fn psd_form_gives_trivial_partition() {
        let part = build_partition(&DMatrix::identity(2, 2), 8).unwrap();
        assert_eq!(part.len(), 1);
        assert_eq!(part.flow_idx(), &[0]);
        assert!(part.jump_idx().is_empty());
        assert_eq!(part.cells()[0].f, DMatrix::identity(2, 2));
        assert!(part.check_continuity(10, 0));
        assert_eq!(part.cell_of(&v2(-3.0, 2.0)).unwrap(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = presets::siso().m().clone();
        assert!(build_partition(&m, 5).is_err());
        assert!(build_partition(&m, 2).is_err());
        assert!(build_partition(&(-DMatrix::identity(2, 2)), 6).is_err());
        assert!(build_partition(&DMatrix::identity(3, 3), 6).is_err());
    }

    #[test]
    fn interior_points_are_strictly_inside() {
        let part = build_partition(presets::siso().m(), 8).unwrap();
        for (k, cell) in part.cells().iter().enumerate() {
            let (a, b) = cell.rays.unwrap();
            let mid = (part.rays()[a] + part.rays()[b]).normalize();
            let ex = &cell.e * v2(mid.x, mid.y);
            assert!(ex.iter().all(|&v| v > 0.0), "cell {k}");
            let on_ray = &cell.e * v2(part.rays()[a].x, part.rays()[a].y);
            assert_eq!(on_ray.iter().filter(|v| v.abs() < 1e-12).count(), 1);
        }
    }

    #[test]
    fn boundary_tie_goes_to_lowest_index() {
        let part = build_partition(presets::siso().m(), 4).unwrap();
        for (k, l, ray) in part.shared_rays() {
            let x = v2(ray.x, ray.y);
            assert_eq!(part.cell_of(&x).unwrap(), k.min(l));
        }
        assert_eq!(part.cell_of(&v2(0.0, 0.0)).unwrap(), 0);
    }

    #[test]
    fn continuity_holds_by_construction() {
        let part = build_partition(presets::siso().m(), 8).unwrap();
        assert!(part.check_continuity(100, 7));
        // every shared ray borders exactly two cells, and there are N of them
        assert_eq!(part.shared_rays().len(), 8);
    }

    #[test]
    fn random_continuity_matrices_fail() {
        let mut part = build_partition(presets::siso().m(), 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for cell in part.cells.iter_mut() {
            cell.f = DMatrix::from_fn(8, 2, |_, _| rng.gen_range(-1.0..1.0));
        }
        assert!(!part.check_continuity(10, 7));
    }

    #[test]
    fn union_of_cells_matches_sets() {
        let sys = presets::siso();
        let part = build_partition(sys.m(), 12).unwrap();
        for k in 0..3600 {
            let a = (k as f64 + 0.37) * TAU / 3600.0;
            let x = v2(a.cos(), a.sin());
            let cell = part.cell_of(&x).unwrap();
            let flow = sys.in_flow(&x).unwrap();
            let g = sys.set_function(&x).unwrap();
            if g.abs() > 1e-9 {
                assert_eq!(part.cells()[cell].kind == CellKind::Flow, flow, "angle {a}");
            }
        }
    }

    #[test]
    fn common_quadratic_mirrors_cover_plane() {
        let part = common_quadratic(presets::siso().m()).unwrap();
        assert_eq!(part.len(), 2);
        assert!(part.is_mirrored());
        for k in 0..360 {
            let a = (k as f64 + 0.5).to_radians();
            part.cell_of(&v2(a.cos(), a.sin())).unwrap();
        }
        assert!(part.check_continuity(10, 1));
    }

    #[test]
    fn json_round_trip() {
        let part = build_partition(presets::siso().m(), 6).unwrap();
        let text = serde_json::to_string(&part.to_file_repr()).unwrap();
        let back = ConicalPartition::from_file_repr(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.len(), part.len());
        for (a, b) in back.cells().iter().zip(part.cells()) {
            assert!((&a.e - &b.e).norm() < 1e-15);
            assert!((&a.f - &b.f).norm() < 1e-15);
        }
        assert!(back.check_continuity(10, 0));
    }

    #[test]
    fn pwq_storage_is_continuous() {
        let part = build_partition(presets::siso().m(), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let raw = DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-1.0..1.0));
        let phi = linalg::symmetrize(&raw);
        let ps = part.storage_matrices(&phi);
        let shared = part.shared_rays();
        for t in 0..10_000 {
            let (k, l, ray) = shared[t % shared.len()];
            let s: f64 = rng.gen_range(0.1..10.0);
            let x = v2(ray.x * s, ray.y * s);
            let vk = x.dot(&(&ps[k] * &x));
            let vl = x.dot(&(&ps[l] * &x));
            assert!((vk - vl).abs() <= 1e-9 * phi.norm() * x.norm_squared());
        }
    }

    proptest! {
        #[test]
        fn cell_of_is_homogeneous(a in 0.0f64..TAU, s in 1e-3f64..1e3, n in 2usize..12) {
            let part = build_partition(presets::siso().m(), 2 * n).unwrap();
            let x = v2(a.cos(), a.sin());
            // stay off the rays where rounding can flip the tie-break
            let near_ray = part.rays().iter().any(|r| (r.y.atan2(r.x) - a).rem_euclid(TAU).min((a - r.y.atan2(r.x)).rem_euclid(TAU)) < 1e-9);
            prop_assume!(!near_ray);
            prop_assert_eq!(part.cell_of(&x).unwrap(), part.cell_of(&(x.clone() * s)).unwrap());
        }
    }
}
