//! Dissipativity LMIs certifying disc over-bounds of the scaled graph.
//!
//! A supply rate `Π(σ, λc, r) = σ [[1, −λc], [−λc, λc² − r²]]` describes the
//! disc interior (σ = −1) or exterior (σ = +1) of radius r around λc. The
//! storage is piecewise quadratic, `Pᵢ = FᵢᵀΦFᵢ` on each partition cell, and
//! the radius enters every block affinely through `ρ = r²`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::partition::ConicalPartition;
use crate::region::{DiscConstraint, RegionSG, Sigma};
use crate::reset_model::ResetSystem;
use crate::sdp::{
    self, Block, Direction, Objective, SdpProblem, SdpSolution, SolverOptions, Status,
};

/// Exterior radii with ρ at or below this exclude nothing worth keeping.
pub const TRIVIAL_RHO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiMatrix {
    pub sigma: Sigma,
    pub lambda_c: f64,
    pub r: f64,
}

impl PiMatrix {
    pub fn new(sigma: Sigma, lambda_c: f64, r: f64) -> Result<Self> {
        if !lambda_c.is_finite() || !r.is_finite() || r < 0.0 {
            return Err(Error::InvalidProblem(format!(
                "supply rate needs finite center and nonnegative radius, got λc = {lambda_c}, r = {r}"
            )));
        }
        Ok(Self { sigma, lambda_c, r })
    }

    pub fn rho(&self) -> f64 {
        self.r * self.r
    }

    /// The 2×2 matrix σ[[1, −λc], [−λc, λc² − r²]].
    pub fn matrix(&self) -> DMatrix<f64> {
        let s = self.sigma.value();
        let l = self.lambda_c;
        DMatrix::from_row_slice(2, 2, &[s, -s * l, -s * l, s * (l * l - self.rho())])
    }

    /// The region S(Π) this supply rate certifies.
    pub fn disc(&self) -> DiscConstraint {
        DiscConstraint {
            sigma: self.sigma,
            center: self.lambda_c,
            radius: self.r,
        }
    }
}

/// `[C D; 0 I]ᵀ (Π ⊗ I_p) [C D; 0 I]`.
pub fn theta(pi: &PiMatrix, sys: &ResetSystem) -> DMatrix<f64> {
    theta_of(&pi.matrix(), sys)
}

/// [`theta`] for an arbitrary 2×2 supply-rate matrix.
pub fn theta_of(pi: &DMatrix<f64>, sys: &ResetSystem) -> DMatrix<f64> {
    let g = output_map(sys);
    g.transpose() * linalg::kron(pi, &DMatrix::identity(sys.p(), sys.p())) * g
}

fn output_map(sys: &ResetSystem) -> DMatrix<f64> {
    let (n, p) = (sys.n(), sys.p());
    let mut g = DMatrix::zeros(2 * p, n + p);
    g.view_mut((0, 0), (p, n)).copy_from(sys.c());
    g.view_mut((0, n), (p, p)).copy_from(sys.d());
    g.view_mut((p, n), (p, p)).fill_with_identity();
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Scalar-objective SDP, falling back to bisection on numerical failure.
    Direct,
    /// Bisection on ρ over feasibility problems.
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTask {
    pub sigma: Sigma,
    pub lambda_c: f64,
    /// Adds `P_k ⪰ 0` for every cell.
    pub hard_sg: bool,
    /// Keeps only the flow/jump pairs the reset map can connect.
    pub prune_pairs: bool,
    pub strategy: Strategy,
    pub opts: SolverOptions,
}

impl BoundTask {
    pub fn new(sigma: Sigma, lambda_c: f64) -> Self {
        Self {
            sigma,
            lambda_c,
            hard_sg: false,
            prune_pairs: false,
            strategy: Strategy::Direct,
            opts: SolverOptions::default(),
        }
    }
}

/// Offset and size of a symmetric matrix variable stored as its upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymVar {
    pub start: usize,
    pub dim: usize,
}

impl SymVar {
    pub fn len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }

    /// (variable index, row, column) with row ≤ column.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let d = self.dim;
        (0..d)
            .flat_map(move |a| (a..d).map(move |b| (a, b)))
            .enumerate()
            .map(move |(k, (a, b))| (self.start + k, a, b))
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (k, a, b) in self.entries() {
            m[(a, b)] = x[k];
            m[(b, a)] = x[k];
        }
        m
    }
}

fn sym_basis(dim: usize, a: usize, b: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    m[(a, b)] = 1.0;
    m[(b, a)] = 1.0;
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarLayout {
    pub phi: SymVar,
    /// Indexed by position in the flow index set.
    pub u1: Vec<SymVar>,
    pub u2: Vec<SymVar>,
    /// Indexed by position in the jump index set.
    pub u3: Vec<SymVar>,
    pub u4: Vec<SymVar>,
    pub rho: usize,
    pub m: usize,
}

impl VarLayout {
    fn new(part: &ConicalPartition) -> Self {
        let mut next = 0;
        let mut take = |dim: usize| {
            let v = SymVar { start: next, dim };
            next += v.len();
            v
        };
        let phi = take(part.phi_dim());
        let rows = |k: usize| part.cells()[k].e.nrows();
        let mut u1 = Vec::new();
        let mut u2 = Vec::new();
        for &i in part.flow_idx() {
            u1.push(take(rows(i)));
            u2.push(take(rows(i)));
        }
        let mut u3 = Vec::new();
        let mut u4 = Vec::new();
        for &j in part.jump_idx() {
            u3.push(take(rows(j)));
            u4.push(take(rows(j)));
        }
        let rho = take(1).start;
        Self {
            phi,
            u1,
            u2,
            u3,
            u4,
            rho,
            m: next,
        }
    }

    fn multipliers(&self) -> impl Iterator<Item = &SymVar> {
        self.u1
            .iter()
            .chain(&self.u2)
            .chain(&self.u3)
            .chain(&self.u4)
    }

    pub fn phi_value(&self, x: &[f64]) -> DMatrix<f64> {
        self.phi.value(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    Flow { cell: usize },
    Jump { cell: usize },
    Pair { flow: usize, jump: usize },
    Storage { cell: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockCounts {
    pub flow: usize,
    pub jump: usize,
    pub pair: usize,
    pub storage: usize,
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub sdp: SdpProblem,
    pub layout: VarLayout,
    /// Origin of each block of `sdp`.
    pub kinds: Vec<BlockKind>,
}

impl LmiProblem {
    pub fn counts(&self) -> BlockCounts {
        let mut c = BlockCounts::default();
        for k in &self.kinds {
            match k {
                BlockKind::Flow { .. } => c.flow += 1,
                BlockKind::Jump { .. } => c.jump += 1,
                BlockKind::Pair { .. } => c.pair += 1,
                BlockKind::Storage { .. } => c.storage += 1,
            }
        }
        c
    }

    /// Feasibility of the LMIs with ρ frozen.
    pub fn feasible_at(&self, rho: f64, opts: &SolverOptions) -> Result<bool> {
        Ok(sdp::feasible(&self.sdp.fix_variable(self.layout.rho, rho), opts)?.feasible)
    }
}

/// Builds the SDP for one (σ, λc) task.
pub fn assemble(
    sys: &ResetSystem,
    part: &ConicalPartition,
    task: &BoundTask,
) -> Result<LmiProblem> {
    let (n, p) = (sys.n(), sys.p());
    if part.dim() != n {
        return Err(Error::Dimension(format!(
            "partition dimension {} differs from state dimension {n}",
            part.dim()
        )));
    }
    if part.flow_idx().is_empty() {
        return Err(Error::Partition("partition has no flow cell".into()));
    }
    if !task.lambda_c.is_finite() {
        return Err(Error::InvalidProblem(format!(
            "disc center {} is not finite",
            task.lambda_c
        )));
    }
    for (k, c) in part.cells().iter().enumerate() {
        if c.e.ncols() != n || c.f.ncols() != n || c.f.nrows() != part.phi_dim() {
            return Err(Error::Dimension(format!(
                "cell {k} matrices do not match n = {n}, N = {}",
                part.phi_dim()
            )));
        }
    }
    let layout = VarLayout::new(part);
    let cells = part.cells();
    let (a, b, r) = (sys.a(), sys.b(), sys.r());
    let nphi = part.phi_dim();
    let phi_basis: Vec<(usize, DMatrix<f64>)> = layout
        .phi
        .entries()
        .map(|(k, i, j)| (k, sym_basis(nphi, i, j)))
        .collect();
    let storage = |cell: usize, basis: &DMatrix<f64>| {
        let f = &cells[cell].f;
        f.transpose() * basis * f
    };
    let cone_term = |cell: usize, u: &SymVar| -> Vec<(usize, DMatrix<f64>)> {
        let e = &cells[cell].e;
        u.entries()
            .map(|(k, i, j)| (k, e.transpose() * sym_basis(u.dim, i, j) * e))
            .collect()
    };

    let sigma = task.sigma.value();
    let pi0 = PiMatrix::new(task.sigma, task.lambda_c, 0.0)?;
    let theta0 = theta(&pi0, sys);
    let mut rho_coeff = DMatrix::zeros(n + p, n + p);
    rho_coeff.view_mut((n, n), (p, p)).fill_with_identity();
    rho_coeff *= sigma;

    let mut blocks = Vec::new();
    let mut kinds = Vec::new();
    let mut push = |blk: Block, kind: BlockKind| {
        if !blk.is_zero() {
            blocks.push(blk);
            kinds.push(kind);
        }
    };

    for (fi, &i) in part.flow_idx().iter().enumerate() {
        let mut blk = Block::new(-&theta0);
        for (k, basis) in &phi_basis {
            let pk = storage(i, basis);
            let mut g = DMatrix::zeros(n + p, n + p);
            g.view_mut((0, 0), (n, n))
                .copy_from(&(a.transpose() * &pk + &pk * a));
            let pb = &pk * b;
            g.view_mut((0, n), (n, p)).copy_from(&pb);
            g.view_mut((n, 0), (p, n)).copy_from(&pb.transpose());
            blk.add_term(*k, g);
        }
        for (k, g) in cone_term(i, &layout.u1[fi]) {
            let mut big = DMatrix::zeros(n + p, n + p);
            big.view_mut((0, 0), (n, n)).copy_from(&g);
            blk.add_term(k, big);
        }
        blk.add_term(layout.rho, rho_coeff.clone());
        push(blk, BlockKind::Flow { cell: i });
    }

    for (ji, &j) in part.jump_idx().iter().enumerate() {
        let mut blk = Block::new(DMatrix::zeros(n, n));
        for (k, basis) in &phi_basis {
            let pk = storage(j, basis);
            blk.add_term(*k, r.transpose() * &pk * r - pk);
        }
        for (k, g) in cone_term(j, &layout.u3[ji]) {
            blk.add_term(k, g);
        }
        push(blk, BlockKind::Jump { cell: j });
    }

    for (fi, &i) in part.flow_idx().iter().enumerate() {
        for (ji, &j) in part.jump_idx().iter().enumerate() {
            if task.prune_pairs && !reachable(part, r, j, i) {
                continue;
            }
            let mut blk = Block::new(DMatrix::zeros(n, n));
            for (k, basis) in &phi_basis {
                blk.add_term(
                    *k,
                    r.transpose() * storage(i, basis) * r - storage(j, basis),
                );
            }
            for (k, g) in cone_term(j, &layout.u4[ji]) {
                blk.add_term(k, g);
            }
            for (k, g) in cone_term(i, &layout.u2[fi]) {
                blk.add_term(k, r.transpose() * g * r);
            }
            push(blk, BlockKind::Pair { flow: i, jump: j });
        }
    }

    if task.hard_sg {
        for k in 0..cells.len() {
            let mut blk = Block::new(DMatrix::zeros(n, n));
            for (v, basis) in &phi_basis {
                blk.add_term(*v, -storage(k, basis));
            }
            push(blk, BlockKind::Storage { cell: k });
        }
    }

    let mut nonneg: Vec<usize> = layout
        .multipliers()
        .flat_map(|u| u.start..u.start + u.len())
        .collect();
    nonneg.push(layout.rho);
    let direction = match task.sigma {
        Sigma::Interior => Direction::Min,
        Sigma::Exterior => Direction::Max,
    };
    let sdp = SdpProblem {
        m: layout.m,
        blocks,
        nonneg,
        objective: Some(Objective {
            direction,
            target: layout.rho,
        }),
    };
    Ok(LmiProblem { sdp, layout, kinds })
}

/// Whether `R` maps some point of jump cell `j` into flow cell `i`. Exact
/// for 2-D cells with known rays; any other case counts as reachable.
fn reachable(part: &ConicalPartition, r: &DMatrix<f64>, j: usize, i: usize) -> bool {
    let cells = part.cells();
    let (Some((ja, jb)), Some((ia, ib))) = (cells[j].rays, cells[i].rays) else {
        return true;
    };
    if part.dim() != 2 || part.rays().is_empty() {
        return true;
    }
    let ray = |k: usize| DVector::from_column_slice(&[part.rays()[k].x, part.rays()[k].y]);
    let (va, vb) = (r * ray(ja), r * ray(jb));
    let scale = va.norm().max(vb.norm());
    if scale <= 1e-12 {
        // R collapses the cell onto the origin, which lies in every cell
        return true;
    }
    let in_flow = |x: &DVector<f64>| {
        let x = x / x.norm().max(1e-300);
        cells[i].contains(&x, 1e-12) || (part.is_mirrored() && cells[i].contains(&-x, 1e-12))
    };
    // corners and midpoint of the image cone
    let mid = (&va / va.norm().max(1e-300)) + (&vb / vb.norm().max(1e-300));
    if [&va, &vb, &mid]
        .into_iter()
        .any(|v| v.norm() > 1e-12 * scale && in_flow(v))
    {
        return true;
    }
    // a boundary ray of cell i inside the image cone
    let basis = nalgebra::Matrix2::new(va[0], vb[0], va[1], vb[1]);
    let Some(inv) = basis.try_inverse() else {
        return false;
    };
    let signs: &[f64] = if part.is_mirrored() {
        &[1.0, -1.0]
    } else {
        &[1.0]
    };
    [ia, ib].iter().any(|&k| {
        signs.iter().any(|&s| {
            let w = inv * (part.rays()[k] * s);
            w[0] >= -1e-12 && w[1] >= -1e-12
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    /// A disc constraint with a finite radius was certified.
    Certified,
    /// Only a zero-radius exterior disc is certified.
    Trivial,
    Infeasible,
    Unbounded,
    NumericFailure,
}

#[derive(Debug, Clone)]
pub struct Bound {
    pub status: BoundStatus,
    pub sigma: Sigma,
    pub lambda_c: f64,
    /// Certified radius; present when the status is certified or trivial.
    pub r: Option<f64>,
    pub phi: Option<DMatrix<f64>>,
    pub solution: SdpSolution,
    /// True when the bisection fallback produced the answer.
    pub used_bisection: bool,
}

impl Bound {
    pub fn disc(&self) -> Option<DiscConstraint> {
        match (self.status, self.r) {
            (BoundStatus::Certified, Some(r)) => Some(DiscConstraint {
                sigma: self.sigma,
                center: self.lambda_c,
                radius: r,
            }),
            _ => None,
        }
    }
}

/// Tightest radius at `task.lambda_c`: smallest covering disc for σ = −1,
/// largest excluded disc for σ = +1.
pub fn bound_radius(sys: &ResetSystem, part: &ConicalPartition, task: &BoundTask) -> Result<Bound> {
    let lp = assemble(sys, part, task)?;
    let opts = task.opts;
    let mut used_bisection = task.strategy == Strategy::Bisection;
    let first = match task.strategy {
        Strategy::Direct => sdp::solve(&lp.sdp, &opts),
        Strategy::Bisection => sdp::solve_bisection(&lp.sdp, &bisect_opts(&opts)),
    };
    let mut sol = match first {
        Ok(s) if s.status != Status::NumericFailure => s,
        _ if task.strategy == Strategy::Direct => {
            log::debug!(
                "direct solve failed at λc = {}, bisecting on ρ",
                task.lambda_c
            );
            used_bisection = true;
            match sdp::solve_bisection(&lp.sdp, &bisect_opts(&opts)) {
                Ok(s) => s,
                Err(e) => return Ok(failure(task, lp.layout.m, e, used_bisection)),
            }
        }
        Ok(s) => s,
        Err(e) => return Ok(failure(task, lp.layout.m, e, used_bisection)),
    };

    let status = match sol.status {
        Status::Infeasible => BoundStatus::Infeasible,
        Status::Unbounded => BoundStatus::Unbounded,
        Status::NumericFailure => BoundStatus::NumericFailure,
        Status::Optimal => {
            let mut rho = sol.objective.max(0.0);
            if task.sigma == Sigma::Interior && rho <= TRIVIAL_RHO {
                // the barrier stops short of ρ = 0; test the endpoint itself
                let f = sdp::feasible(&lp.sdp.fix_variable(lp.layout.rho, 0.0), &opts)?;
                if f.feasible {
                    sol.x = f.x;
                    sol.x[lp.layout.rho] = 0.0;
                    sol.max_violation = lp.sdp.max_violation(&sol.x);
                    sol.objective = 0.0;
                    sol.strict = false;
                    rho = 0.0;
                }
            }
            sol.objective = rho;
            if task.sigma == Sigma::Exterior && rho <= TRIVIAL_RHO {
                BoundStatus::Trivial
            } else {
                BoundStatus::Certified
            }
        }
    };
    let certified = matches!(status, BoundStatus::Certified | BoundStatus::Trivial);
    Ok(Bound {
        status,
        sigma: task.sigma,
        lambda_c: task.lambda_c,
        r: certified.then(|| sol.objective.sqrt()),
        phi: certified.then(|| lp.layout.phi_value(&sol.x)),
        solution: sol,
        used_bisection,
    })
}

fn bisect_opts(opts: &SolverOptions) -> SolverOptions {
    SolverOptions {
        bisect_tol: opts.bisect_tol.min(1e-6),
        ..*opts
    }
}

fn failure(task: &BoundTask, m: usize, err: Error, used_bisection: bool) -> Bound {
    log::warn!(
        "solver failure at σ = {}, λc = {}: {err}",
        task.sigma.value(),
        task.lambda_c
    );
    Bound {
        status: BoundStatus::NumericFailure,
        sigma: task.sigma,
        lambda_c: task.lambda_c,
        r: None,
        phi: None,
        solution: SdpSolution {
            status: Status::NumericFailure,
            x: vec![0.0; m],
            objective: f64::NAN,
            max_violation: f64::NAN,
            gap: f64::INFINITY,
            iterations: 0,
            strict: false,
        },
        used_bisection,
    }
}

/// Settings shared by every task of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub hard_sg: bool,
    pub prune_pairs: bool,
    pub strategy: Strategy,
    pub solver: SolverOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            hard_sg: false,
            prune_pairs: false,
            strategy: Strategy::Direct,
            solver: SolverOptions::default(),
        }
    }
}

impl SweepOptions {
    pub fn task(&self, sigma: Sigma, lambda_c: f64) -> BoundTask {
        BoundTask {
            sigma,
            lambda_c,
            hard_sg: self.hard_sg,
            prune_pairs: self.prune_pairs,
            strategy: self.strategy,
            opts: self.solver,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub sigma: Sigma,
    pub lambda_c: f64,
    pub status: BoundStatus,
    pub r: Option<f64>,
    pub iterations: usize,
    /// Duality gap, or bracket width when bisection produced the radius.
    pub gap: Option<f64>,
    pub max_violation: Option<f64>,
    pub used_bisection: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub certified: usize,
    pub omitted: usize,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub region: RegionSG,
    pub report: SweepReport,
    /// One bound per task, interior centers first.
    pub bounds: Vec<Bound>,
}

/// Solves every (σ, λc) task and intersects the certified discs. Tasks run
/// in parallel; results keep task order.
pub fn sweep(
    sys: &ResetSystem,
    part: &ConicalPartition,
    interior: &[f64],
    exterior: &[f64],
    opts: &SweepOptions,
) -> Result<Sweep> {
    if interior.is_empty() && exterior.is_empty() {
        return Err(Error::InvalidProblem(
            "sweep needs at least one disc center".into(),
        ));
    }
    let tasks: Vec<BoundTask> = interior
        .iter()
        .map(|&l| opts.task(Sigma::Interior, l))
        .chain(exterior.iter().map(|&l| opts.task(Sigma::Exterior, l)))
        .collect();
    // validate once so assembly errors are not mistaken for solver failures
    assemble(sys, part, &tasks[0])?;
    let bounds: Vec<Bound> = tasks
        .par_iter()
        .map(|t| bound_radius(sys, part, t))
        .collect::<Result<Vec<_>>>()?;

    let mut region = RegionSG::default();
    let mut report = SweepReport::default();
    for (index, b) in bounds.iter().enumerate() {
        match b.disc() {
            Some(d) => {
                region.push(d);
                report.certified += 1;
            }
            None if b.status == BoundStatus::NumericFailure => report.failed += 1,
            None => {
                log::info!(
                    "σ = {}, λc = {}: {:?}, omitted",
                    b.sigma.value(),
                    b.lambda_c,
                    b.status
                );
                report.omitted += 1;
            }
        }
        let finite = |v: f64| v.is_finite().then_some(v);
        report.entries.push(SweepEntry {
            index,
            sigma: b.sigma,
            lambda_c: b.lambda_c,
            status: b.status,
            r: b.r,
            iterations: b.solution.iterations,
            gap: finite(b.solution.gap),
            max_violation: finite(b.solution.max_violation),
            used_bisection: b.used_bisection,
        });
    }
    if report.failed == bounds.len() {
        return Err(Error::AllFailed(bounds.len()));
    }
    Ok(Sweep {
        region,
        report,
        bounds,
    })
}

/// Evenly spaced centers `start + step·k`, k = 0..count.
pub fn grid(start: f64, step: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start + step * k as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{build_partition, common_quadratic};
    use crate::reset_model::presets;
    use proptest::prelude::{prop_assert, proptest};

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn theta_examples() {
        let sys = presets::siso();
        let pi = PiMatrix::new(Sigma::Interior, 0.0, 1.0).unwrap();
        assert!(close(
            &pi.matrix(),
            &DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]),
            0.0
        ));
        let th = theta(&pi, &sys);
        assert!(close(
            &th,
            &DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -1.0, 1.0])),
            1e-15
        ));

        let pi = PiMatrix::new(Sigma::Exterior, 2.0, 1.0).unwrap();
        assert!(close(
            &pi.matrix(),
            &DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -2.0, 3.0]),
            0.0
        ));

        assert_eq!(theta_of(&DMatrix::zeros(2, 2), &sys), DMatrix::zeros(3, 3));
        let a = theta(&PiMatrix::new(Sigma::Interior, 0.5, 0.3).unwrap(), &sys);
        let b = theta(&PiMatrix::new(Sigma::Exterior, 0.5, 0.3).unwrap(), &sys);
        assert!((a + b).amax() == 0.0);
        assert!(PiMatrix::new(Sigma::Interior, 0.0, -1.0).is_err());
    }

    #[test]
    fn theta_uses_output_dimension() {
        let sys = presets::mimo();
        let th = theta(&PiMatrix::new(Sigma::Interior, 0.0, 1.0).unwrap(), &sys);
        assert_eq!(th.nrows(), 4);
        // y = x, so Θ = diag(−I, I)
        assert!(close(
            &th,
            &DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0, 1.0, 1.0])),
            1e-15
        ));
    }

    #[test]
    fn block_counts_n40() {
        let sys = presets::siso();
        let part = build_partition(sys.m(), 40).unwrap();
        let lp = assemble(&sys, &part, &BoundTask::new(Sigma::Interior, 0.0)).unwrap();
        assert_eq!(
            lp.counts(),
            BlockCounts {
                flow: 38,
                jump: 2,
                pair: 76,
                storage: 0
            }
        );
        let mut task = BoundTask::new(Sigma::Interior, 0.0);
        task.hard_sg = true;
        assert_eq!(assemble(&sys, &part, &task).unwrap().counts().storage, 40);
    }

    #[test]
    fn common_quadratic_layout() {
        let sys = presets::siso();
        let part = common_quadratic(sys.m()).unwrap();
        let lp = assemble(&sys, &part, &BoundTask::new(Sigma::Interior, 0.0)).unwrap();
        assert_eq!(
            lp.counts(),
            BlockCounts {
                flow: 1,
                jump: 1,
                pair: 1,
                storage: 0
            }
        );
        assert_eq!(lp.sdp.blocks[0].size(), 3);
        assert_eq!(lp.layout.phi.len(), 3);
        assert_eq!(lp.layout.u1[0].len(), 3);
        assert_eq!(lp.layout.rho, lp.layout.m - 1);
        assert_eq!(lp.layout.m, 3 + 4 * 3 + 1);
        assert_eq!(lp.sdp.nonneg.len(), 4 * 3 + 1);
    }

    #[test]
    fn no_jump_blocks_without_jumps() {
        let sys = ResetSystem::from_rows(
            &[vec![-1.0, 0.0], vec![1.0, -1.0]],
            &[vec![1.0], vec![0.0]],
            &[vec![0.0, 1.0]],
            &[vec![0.0]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
            &[vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let lp = assemble(
            &sys,
            &ConicalPartition::trivial(2),
            &BoundTask::new(Sigma::Interior, 0.0),
        )
        .unwrap();
        assert_eq!(
            lp.counts(),
            BlockCounts {
                flow: 1,
                jump: 0,
                pair: 0,
                storage: 0
            }
        );
    }

    #[test]
    fn assembly_errors() {
        let sys = presets::siso();
        let t = BoundTask::new(Sigma::Interior, 0.0);
        assert!(matches!(
            assemble(&sys, &ConicalPartition::trivial(3), &t),
            Err(Error::Dimension(_))
        ));
        let bad = BoundTask::new(Sigma::Interior, f64::NAN);
        assert!(assemble(&sys, &ConicalPartition::trivial(2), &bad).is_err());
    }

    #[test]
    fn lti_bounded_real() {
        let sys = presets::first_order_lti();
        let b = bound_radius(
            &sys,
            &ConicalPartition::trivial(1),
            &BoundTask::new(Sigma::Interior, 0.0),
        )
        .unwrap();
        assert_eq!(b.status, BoundStatus::Certified);
        assert!((b.r.unwrap() - 1.0).abs() < 1e-3, "{:?}", b.r);

        let mut t = BoundTask::new(Sigma::Interior, 0.0);
        t.strategy = Strategy::Bisection;
        let b = bound_radius(&sys, &ConicalPartition::trivial(1), &t).unwrap();
        assert!((b.r.unwrap() - 1.0).abs() < 1e-3, "{:?}", b.r);
    }

    #[test]
    fn static_gain_discs() {
        let sys = presets::static_gain(2.0);
        let part = ConicalPartition::trivial(1);
        let b = bound_radius(&sys, &part, &BoundTask::new(Sigma::Interior, 2.0)).unwrap();
        assert_eq!(b.status, BoundStatus::Certified);
        assert!(b.r.unwrap() <= 1e-6, "{:?}", b.r);
        let b = bound_radius(&sys, &part, &BoundTask::new(Sigma::Exterior, 0.0)).unwrap();
        assert_eq!(b.status, BoundStatus::Certified);
        assert!((b.r.unwrap() - 2.0).abs() < 1e-3, "{:?}", b.r);
        // center on the graph: nothing can be excluded
        let b = bound_radius(&sys, &part, &BoundTask::new(Sigma::Exterior, 2.0)).unwrap();
        assert_eq!(b.status, BoundStatus::Trivial);
        assert!(b.disc().is_none());
    }

    #[test]
    fn feasible_rho_is_a_ray() {
        let sys = presets::siso();
        let part = common_quadratic(sys.m()).unwrap();
        let opts = SolverOptions::default();
        for (sigma, lc) in [(Sigma::Interior, 0.5), (Sigma::Exterior, -0.5)] {
            let task = BoundTask::new(sigma, lc);
            let b = bound_radius(&sys, &part, &task).unwrap();
            assert_eq!(b.status, BoundStatus::Certified, "{sigma:?} {lc}");
            let rho = b.r.unwrap().powi(2);
            let lp = assemble(&sys, &part, &task).unwrap();
            let d = 1e-3 * rho.max(1.0);
            let (inside, outside) = match sigma {
                Sigma::Interior => (rho + d, rho - d),
                Sigma::Exterior => (rho - d, rho + d),
            };
            assert!(lp.feasible_at(inside, &opts).unwrap());
            let deeper = inside - sigma.value() * 10.0 * d;
            if deeper >= 0.0 {
                assert!(lp.feasible_at(deeper, &opts).unwrap());
            }
            if outside >= 0.0 {
                assert!(!lp.feasible_at(outside, &opts).unwrap());
            }
        }
    }

    #[test]
    fn pwq_is_no_worse_than_common_quadratic() {
        let sys = presets::siso();
        let cq = common_quadratic(sys.m()).unwrap();
        let pwq = build_partition(sys.m(), 8).unwrap();
        for lc in [0.0, 0.5, 1.0] {
            let t = BoundTask::new(Sigma::Interior, lc);
            let r_cq = bound_radius(&sys, &cq, &t).unwrap().r.unwrap();
            let r_pwq = bound_radius(&sys, &pwq, &t).unwrap().r.unwrap();
            assert!(r_pwq <= r_cq + 1e-6, "λc = {lc}: {r_pwq} > {r_cq}");
        }
    }

    #[test]
    fn certificate_storage_is_continuous() {
        let sys = presets::siso();
        let part = build_partition(sys.m(), 8).unwrap();
        let b = bound_radius(&sys, &part, &BoundTask::new(Sigma::Interior, 0.5)).unwrap();
        let phi = b.phi.unwrap();
        assert!(part.storage_defect(&phi, 2000, 3) <= 1e-9 * phi.norm());
    }

    #[test]
    fn pruning_keeps_reachable_pairs() {
        let sys = presets::siso();
        let part = build_partition(sys.m(), 8).unwrap();
        let mut t = BoundTask::new(Sigma::Interior, 0.0);
        t.prune_pairs = true;
        // R = 0 sends every jump cell to the origin, which every cell holds
        assert_eq!(assemble(&sys, &part, &t).unwrap().counts().pair, 12);
    }

    #[test]
    fn sweep_lti_single_disc() {
        let sys = presets::first_order_lti();
        let s = sweep(
            &sys,
            &ConicalPartition::trivial(1),
            &[0.0],
            &[],
            &SweepOptions::default(),
        )
        .unwrap();
        assert_eq!(s.region.constraints.len(), 1);
        let d = s.region.constraints[0];
        assert_eq!(d.sigma, Sigma::Interior);
        assert!((d.radius - 1.0).abs() < 1e-3);
        assert_eq!(s.report.certified, 1);
        assert!(sweep(
            &sys,
            &ConicalPartition::trivial(1),
            &[],
            &[],
            &SweepOptions::default()
        )
        .is_err());
    }

    #[test]
    fn grid_values() {
        let g = grid(-1.0, 0.25, 9);
        assert_eq!(g.len(), 9);
        assert_eq!(g[8], 1.0);
    }

    proptest! {
        #[test]
        fn pi_materialization(l in -5.0f64..5.0, r in 0.0f64..5.0, ext in proptest::bool::ANY) {
            let sigma = if ext { Sigma::Exterior } else { Sigma::Interior };
            let pi = PiMatrix::new(sigma, l, r).unwrap();
            let s = sigma.value();
            let want = DMatrix::from_row_slice(2, 2, &[s, -s * l, -s * l, s * (l * l - r * r)]);
            prop_assert!(close(&pi.matrix(), &want, 0.0));
            // Θ is affine in ρ with slope −σ·diag(0, I_p)
            let sys = presets::siso();
            let t0 = theta(&PiMatrix::new(sigma, l, 0.0).unwrap(), &sys);
            let t1 = theta(&pi, &sys);
            let mut slope = DMatrix::zeros(3, 3);
            slope[(2, 2)] = -s;
            prop_assert!(close(&(t1 - t0), &(slope * (r * r)), 1e-12 * (1.0 + r * r)));
        }
    }
}
