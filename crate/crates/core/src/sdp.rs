//! Small dense semidefinite programs in LMI form:
//!
//! ```text
//! find / optimize x ∈ ℝᵐ  s.t.  G_b0 + Σₖ xₖ G_bk ⪯ 0  for every block b,
//!                              xₖ ≥ 0 for k in the nonnegative set.
//! ```
//!
//! The kernel is a log-barrier method with damped Newton steps. A phase-1
//! problem `min t s.t. G_b(x) ⪯ tI` decides feasibility; a phase-2 barrier
//! run on the scalar objective starts from a strictly feasible phase-1 point.
//! Problems without a strict interior fall back to bisection over the
//! feasibility oracle. Witnesses are re-checked with a symmetric eigensolver
//! before they are reported.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub direction: Direction,
    pub target: usize,
}

/// One block `G0 + Σ xₖ Gₖ ⪯ 0`; only nonzero coefficient matrices are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl Block {
    pub fn new(constant: DMatrix<f64>) -> Self {
        Self {
            constant,
            terms: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Adds `coeff` to the coefficient of variable `var`, merging repeats.
    pub fn add_term(&mut self, var: usize, coeff: DMatrix<f64>) {
        if coeff.iter().all(|&v| v == 0.0) {
            return;
        }
        if let Some((_, m)) = self.terms.iter_mut().find(|(k, _)| *k == var) {
            *m += coeff;
        } else {
            self.terms.push((var, coeff));
        }
    }

    /// Evaluates `G0 + Σ xₖ Gₖ`.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (k, g) in &self.terms {
            out += g * x[*k];
        }
        out
    }

    /// Frobenius norm of the stacked data.
    fn data_norm(&self) -> f64 {
        let mut s = self.constant.norm_squared();
        for (_, g) in &self.terms {
            s += g.norm_squared();
        }
        s.sqrt()
    }

    /// True when the block carries no data at all.
    pub fn is_zero(&self) -> bool {
        self.data_norm() == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdpProblem {
    pub m: usize,
    pub blocks: Vec<Block>,
    pub nonneg: Vec<usize>,
    pub objective: Option<Objective>,
}

impl SdpProblem {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (b, block) in self.blocks.iter().enumerate() {
            let s = block.constant.nrows();
            if block.constant.ncols() != s {
                return Err(Error::InvalidProblem(format!(
                    "block {b}: constant not square"
                )));
            }
            if linalg::asymmetry(&block.constant) > 1e-12 {
                return Err(Error::InvalidProblem(format!(
                    "block {b}: constant not symmetric"
                )));
            }
            for (k, g) in &block.terms {
                if *k >= self.m {
                    return Err(Error::InvalidProblem(format!(
                        "block {b}: variable {k} out of range"
                    )));
                }
                if g.nrows() != s || g.ncols() != s {
                    return Err(Error::InvalidProblem(format!(
                        "block {b}: coefficient {k} has wrong size"
                    )));
                }
                if linalg::asymmetry(g) > 1e-12 {
                    return Err(Error::InvalidProblem(format!(
                        "block {b}: coefficient {k} not symmetric"
                    )));
                }
            }
        }
        if let Some(k) = self.nonneg.iter().find(|&&k| k >= self.m) {
            return Err(Error::InvalidProblem(format!(
                "nonnegative index {k} out of range"
            )));
        }
        if let Some(obj) = self.objective {
            if obj.target >= self.m {
                return Err(Error::InvalidProblem(
                    "objective target out of range".into(),
                ));
            }
        }
        Ok(())
    }

    /// Largest eigenvalue of each block at `x`, computed with a full
    /// symmetric eigensolver, each divided by the block's data norm.
    pub fn block_violations(&self, x: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|b| {
                let scale = b.data_norm();
                if scale == 0.0 || b.size() == 0 {
                    return f64::NEG_INFINITY;
                }
                let g = linalg::symmetrize(&b.eval(x));
                g.symmetric_eigenvalues().max() / scale
            })
            .collect()
    }

    /// Worst scaled block eigenvalue and sign-constraint violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let blocks = self
            .block_violations(x)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let signs = self
            .nonneg
            .iter()
            .map(|&k| -x[k])
            .fold(f64::NEG_INFINITY, f64::max);
        blocks.max(signs)
    }

    /// Copy with variable `k` frozen at `value`: its coefficients move into the
    /// constants. Index `k` stays in place but no longer appears anywhere.
    pub fn fix_variable(&self, k: usize, value: f64) -> SdpProblem {
        let mut out = self.clone();
        for block in &mut out.blocks {
            if let Some(pos) = block.terms.iter().position(|(j, _)| *j == k) {
                let (_, g) = block.terms.remove(pos);
                block.constant += g * value;
            }
        }
        out.nonneg.retain(|&j| j != k);
        out.objective = None;
        out
    }

    pub fn to_file_repr(&self) -> SdpFile {
        SdpFile {
            m: self.m,
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockFile {
                    size: b.size(),
                    constant: linalg::to_rows(&b.constant),
                    terms: b
                        .terms
                        .iter()
                        .map(|(k, g)| TermFile {
                            var: *k,
                            matrix: linalg::to_rows(g),
                        })
                        .collect(),
                })
                .collect(),
            nonneg: self.nonneg.clone(),
            objective: self.objective,
        }
    }

    pub fn from_file_repr(file: &SdpFile) -> Result<Self> {
        let blocks = file
            .blocks
            .iter()
            .map(|bf| {
                let constant = if bf.constant.is_empty() {
                    DMatrix::zeros(bf.size, bf.size)
                } else {
                    linalg::from_rows(&bf.constant)?
                };
                let mut block = Block::new(constant);
                for t in &bf.terms {
                    block.add_term(t.var, linalg::from_rows(&t.matrix)?);
                }
                Ok(block)
            })
            .collect::<Result<Vec<_>>>()?;
        let p = SdpProblem {
            m: file.m,
            blocks,
            nonneg: file.nonneg.clone(),
            objective: file.objective,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: SdpFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file_repr(&file)
    }
}

/// JSON interchange form: dense row-major symmetric matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpFile {
    pub m: usize,
    pub blocks: Vec<BlockFile>,
    pub nonneg: Vec<usize>,
    pub objective: Option<Objective>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockFile {
    pub size: usize,
    pub constant: Vec<Vec<f64>>,
    pub terms: Vec<TermFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermFile {
    pub var: usize,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Absolute tolerance on λ_max of each unit-scaled block.
    pub feas_tol: f64,
    /// Objective gap tolerance, relative to max(1, |objective|).
    pub gap_tol: f64,
    /// Newton-step budget per barrier run.
    pub max_iter: usize,
    /// Box |xₖ| ≤ var_bound keeping the barrier problems bounded.
    pub var_bound: f64,
    /// Final bracket width for bisection.
    pub bisect_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            gap_tol: 1e-9,
            max_iter: 500,
            var_bound: 1e6,
            bisect_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Most positive scaled block eigenvalue (or sign violation) at `x`.
    pub max_violation: f64,
    pub gap: f64,
    pub iterations: usize,
    /// True when the point is strictly feasible (phase-2 interior point).
    pub strict: bool,
}

impl SdpSolution {
    fn failed(status: Status, m: usize, iterations: usize) -> Self {
        Self {
            status,
            x: vec![0.0; m],
            objective: f64::NAN,
            max_violation: f64::NAN,
            gap: f64::INFINITY,
            iterations,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Witness when feasible; best phase-1 point otherwise.
    pub x: Vec<f64>,
    /// Phase-1 slack value at the returned point (≤ feas_tol when feasible).
    pub slack: f64,
    /// Certified lower bound on the optimal phase-1 slack.
    pub slack_lower: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    /// Feasible end of the final bracket.
    pub value: f64,
    pub feasible_end: f64,
    pub infeasible_end: f64,
    pub witness: Vec<f64>,
    pub iterations: usize,
    pub solves: usize,
}

// ---------------------------------------------------------------------------
// presolve

#[derive(Debug, Clone)]
struct RBlock {
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl RBlock {
    fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Slack S(y) = −(C + Σ yₖ Aₖ).
    fn slack(&self, y: &[f64]) -> DMatrix<f64> {
        let mut s = -&self.constant;
        for (k, a) in &self.terms {
            s -= a * y[*k];
        }
        s
    }
}

#[derive(Debug, Clone)]
struct Reduced {
    /// reduced index → original index
    map: Vec<usize>,
    blocks: Vec<RBlock>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

enum Presolved {
    Ready(Reduced),
    /// A constant block is violated.
    Infeasible,
}

fn presolve(p: &SdpProblem, opts: &SolverOptions) -> Presolved {
    let mut used = vec![false; p.m];
    for b in &p.blocks {
        for (k, _) in &b.terms {
            used[*k] = true;
        }
    }
    let map: Vec<usize> = (0..p.m).filter(|&k| used[k]).collect();
    let mut back = vec![usize::MAX; p.m];
    for (i, &k) in map.iter().enumerate() {
        back[k] = i;
    }
    let mut blocks = Vec::new();
    for b in &p.blocks {
        let scale = b.data_norm();
        if scale == 0.0 || b.size() == 0 {
            continue;
        }
        // rows/cols that are zero in every matrix carry no information
        let s = b.size();
        let keep: Vec<usize> = (0..s)
            .filter(|&i| {
                (0..s).any(|j| b.constant[(i, j)] != 0.0)
                    || b.terms
                        .iter()
                        .any(|(_, g)| (0..s).any(|j| g[(i, j)] != 0.0))
            })
            .collect();
        let pick = |m: &DMatrix<f64>| {
            DMatrix::from_fn(keep.len(), keep.len(), |i, j| m[(keep[i], keep[j])] / scale)
        };
        let constant = linalg::symmetrize(&pick(&b.constant));
        if b.terms.is_empty() {
            if linalg::max_eig(&constant) > opts.feas_tol {
                return Presolved::Infeasible;
            }
            continue;
        }
        let terms = b
            .terms
            .iter()
            .map(|(k, g)| (back[*k], linalg::symmetrize(&pick(g))))
            .collect();
        blocks.push(RBlock { constant, terms });
    }
    let mut lower = vec![-opts.var_bound; map.len()];
    let upper = vec![opts.var_bound; map.len()];
    for &k in &p.nonneg {
        if used[k] {
            lower[back[k]] = 0.0;
        }
    }
    Presolved::Ready(Reduced {
        map,
        blocks,
        lower,
        upper,
    })
}

// ---------------------------------------------------------------------------
// barrier engine

struct Engine<'a> {
    blocks: &'a [RBlock],
    lower: &'a [f64],
    upper: &'a [f64],
    c: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunEnd {
    Converged,
    Stopped,
    Exhausted,
    Breakdown,
}

struct RunResult {
    y: Vec<f64>,
    gap: f64,
    iterations: usize,
    end: RunEnd,
}

const CENTERING_TOL: f64 = 1e-7;
/// Line-search stalls below this squared decrement count as centered.
const STALL_DECREMENT: f64 = 1e-3;
const TAU_GROWTH: f64 = 10.0;

impl<'a> Engine<'a> {
    fn nu(&self) -> f64 {
        let blocks: usize = self.blocks.iter().map(RBlock::size).sum();
        let bounds = self.lower.iter().filter(|v| v.is_finite()).count()
            + self.upper.iter().filter(|v| v.is_finite()).count();
        (blocks + bounds) as f64
    }

    /// Newton direction and squared decrement for τ·cᵀy + barrier.
    fn newton(&self, y: &[f64], tau: f64) -> Option<(Vec<f64>, f64)> {
        let m = y.len();
        let mut g = DVector::from_iterator(m, self.c.iter().map(|v| v * tau));
        let mut h = DMatrix::<f64>::zeros(m, m);
        for k in 0..m {
            if self.lower[k].is_finite() {
                let d = y[k] - self.lower[k];
                g[k] -= 1.0 / d;
                h[(k, k)] += 1.0 / (d * d);
            }
            if self.upper[k].is_finite() {
                let d = self.upper[k] - y[k];
                g[k] += 1.0 / d;
                h[(k, k)] += 1.0 / (d * d);
            }
        }
        for b in self.blocks {
            let chol = b.slack(y).cholesky()?;
            let sinv = chol.inverse();
            let w: Vec<(usize, DMatrix<f64>)> =
                b.terms.iter().map(|(k, a)| (*k, &sinv * a)).collect();
            for (i, (ki, wi)) in w.iter().enumerate() {
                g[*ki] += wi.trace();
                for (kj, wj) in w.iter().skip(i) {
                    // tr(Wᵢ Wⱼ)
                    let v = wi.component_mul(&wj.transpose()).sum();
                    h[(*ki, *kj)] += v;
                    if ki != kj {
                        h[(*kj, *ki)] += v;
                    }
                }
            }
        }
        let dy = solve_spd(h, &g)?;
        let lam2 = -g.dot(&dy);
        if !lam2.is_finite() {
            return None;
        }
        Some((dy.iter().cloned().collect(), lam2.max(0.0)))
    }

    /// τ·cᵀy plus the barrier; `None` outside the interior.
    fn value(&self, y: &[f64], tau: f64) -> Option<f64> {
        let mut f = tau * self.c.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        for (k, &v) in y.iter().enumerate() {
            if self.lower[k].is_finite() {
                let d = v - self.lower[k];
                if d <= 0.0 {
                    return None;
                }
                f -= d.ln();
            }
            if self.upper[k].is_finite() {
                let d = self.upper[k] - v;
                if d <= 0.0 {
                    return None;
                }
                f -= d.ln();
            }
        }
        for b in self.blocks {
            let ch = b.slack(y).cholesky()?;
            f -= 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        }
        f.is_finite().then_some(f)
    }

    fn max_bound_step(&self, y: &[f64], dy: &[f64]) -> f64 {
        let mut a = f64::INFINITY;
        for k in 0..y.len() {
            if dy[k] < 0.0 && self.lower[k].is_finite() {
                a = a.min((self.lower[k] - y[k]) / dy[k]);
            }
            if dy[k] > 0.0 && self.upper[k].is_finite() {
                a = a.min((self.upper[k] - y[k]) / dy[k]);
            }
        }
        a
    }

    fn run(
        &self,
        y0: Vec<f64>,
        tau0: f64,
        gap_target: impl Fn(&[f64]) -> f64,
        max_iter: usize,
        mut monitor: impl FnMut(&[f64], Option<f64>) -> Control,
    ) -> RunResult {
        let nu = self.nu();
        let mut y = y0;
        let mut tau = tau0;
        let mut iterations = 0;
        loop {
            // centering
            loop {
                if iterations >= max_iter {
                    return RunResult {
                        y,
                        gap: nu / tau,
                        iterations,
                        end: RunEnd::Exhausted,
                    };
                }
                let Some((dy, lam2)) = self.newton(&y, tau) else {
                    return RunResult {
                        y,
                        gap: nu / tau,
                        iterations,
                        end: RunEnd::Breakdown,
                    };
                };
                if lam2 * 0.5 <= CENTERING_TOL {
                    break;
                }
                let Some(f0) = self.value(&y, tau) else {
                    return RunResult {
                        y,
                        gap: nu / tau,
                        iterations,
                        end: RunEnd::Breakdown,
                    };
                };
                // backtracking line search on the barrier objective; the
                // directional derivative along dy is −λ²
                let mut alpha: f64 = 1.0f64.min(0.99 * self.max_bound_step(&y, &dy));
                let mut trial: Vec<f64>;
                let mut tries = 0;
                let accepted = loop {
                    trial = y.iter().zip(&dy).map(|(a, b)| a + alpha * b).collect();
                    if let Some(f) = self.value(&trial, tau) {
                        if f <= f0 - 0.25 * alpha * lam2 {
                            break true;
                        }
                    }
                    alpha *= 0.5;
                    tries += 1;
                    if tries > 30 {
                        break false;
                    }
                };
                if !accepted {
                    if lam2 <= STALL_DECREMENT {
                        // rounding noise dominates the decrease test
                        break;
                    }
                    return RunResult {
                        y,
                        gap: nu / tau,
                        iterations,
                        end: RunEnd::Breakdown,
                    };
                }
                let moved = y.iter().zip(&trial).any(|(a, b)| a != b);
                y = trial;
                iterations += 1;
                if monitor(&y, None) == Control::Stop {
                    return RunResult {
                        y,
                        gap: nu / tau,
                        iterations,
                        end: RunEnd::Stopped,
                    };
                }
                if !moved {
                    // numerically stalled: the step no longer changes the iterate
                    break;
                }
            }
            let gap = nu / tau;
            if monitor(&y, Some(gap)) == Control::Stop {
                return RunResult {
                    y,
                    gap,
                    iterations,
                    end: RunEnd::Stopped,
                };
            }
            if gap <= gap_target(&y) {
                return RunResult {
                    y,
                    gap,
                    iterations,
                    end: RunEnd::Converged,
                };
            }
            tau *= TAU_GROWTH;
        }
    }
}

/// Solves H d = −g for symmetric positive (semi)definite H. The system is
/// equilibrated by its diagonal first; the diagonal is regularized if
/// Cholesky still breaks down.
fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = h[(i, i)];
            if v > 0.0 && v.is_finite() {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let mut hs = DMatrix::from_fn(n, n, |i, j| h[(i, j)] * d[i] * d[j]);
    let gs = DVector::from_fn(n, |i, _| g[i] * d[i]);
    let mut shift = 0.0;
    for _ in 0..12 {
        if let Some(ch) = hs.clone().cholesky() {
            let z = -ch.solve(&gs);
            if z.iter().all(|v| v.is_finite()) {
                return Some(DVector::from_fn(n, |i, _| z[i] * d[i]));
            }
        }
        let next = if shift == 0.0 { 1e-14 } else { shift * 100.0 };
        for i in 0..n {
            hs[(i, i)] += next - shift;
        }
        shift = next;
    }
    None
}

// ---------------------------------------------------------------------------
// phase 1

struct PhaseOne {
    y: Vec<f64>,
    t: f64,
    t_lower: f64,
    iterations: usize,
    end: RunEnd,
}

/// `min t  s.t.  G_b(y) ⪯ t·I, bounds on y, t ≥ −1` on the reduced problem.
/// Stops early once t ≤ `stop_below` or once the certified lower bound on
/// t* exceeds `stop_above`.
fn phase_one(red: &Reduced, opts: &SolverOptions, stop_below: f64, stop_above: f64) -> PhaseOne {
    let m = red.map.len();
    let t_idx = m;
    let blocks: Vec<RBlock> = red
        .blocks
        .iter()
        .map(|b| {
            let mut terms = b.terms.clone();
            terms.push((t_idx, -DMatrix::identity(b.size(), b.size())));
            RBlock {
                constant: b.constant.clone(),
                terms,
            }
        })
        .collect();
    let mut lower = red.lower.clone();
    let mut upper = red.upper.clone();
    lower.push(-1.0);
    upper.push(f64::INFINITY);
    let mut c = vec![0.0; m + 1];
    c[t_idx] = 1.0;

    let mut y0: Vec<f64> = (0..m)
        .map(|k| {
            if red.lower[k] == 0.0 {
                1.0f64.min(0.5 * red.upper[k])
            } else {
                0.0
            }
        })
        .collect();
    let worst = red
        .blocks
        .iter()
        .map(|b| linalg::max_eig(&(-b.slack(&y0))))
        .fold(f64::NEG_INFINITY, f64::max);
    let t0 = if worst.is_finite() {
        (worst + 1.0).max(-0.5)
    } else {
        -0.5
    };
    y0.push(t0);

    let engine = Engine {
        blocks: &blocks,
        lower: &lower,
        upper: &upper,
        c: &c,
    };
    let nu = engine.nu();
    let mut lower_bound = f64::NEG_INFINITY;
    let result = engine.run(
        y0,
        1.0,
        |_| 1e-9,
        opts.max_iter,
        |y, gap| {
            let t = y[t_idx];
            if t <= stop_below {
                return Control::Stop;
            }
            if let Some(gap) = gap {
                lower_bound = lower_bound.max(t - gap);
                if lower_bound > stop_above {
                    return Control::Stop;
                }
            }
            Control::Continue
        },
    );
    let t = result.y[t_idx];
    if result.end == RunEnd::Converged {
        lower_bound = lower_bound.max(t - nu * 0.0 - result.gap);
    }
    let mut y = result.y;
    y.truncate(m);
    PhaseOne {
        y,
        t,
        t_lower: lower_bound,
        iterations: result.iterations,
        end: result.end,
    }
}

fn expand(red: &Reduced, y: &[f64], m: usize) -> Vec<f64> {
    let mut x = vec![0.0; m];
    for (i, &k) in red.map.iter().enumerate() {
        x[k] = y[i];
    }
    x
}

/// Interior margin required before phase 2 is attempted.
const INTERIOR_MARGIN: f64 = 1e-7;

/// Decides `G_b(x) ⪯ feas_tol·I` (unit-scaled blocks) with `x ≥ 0` on the
/// nonnegative set. Inconclusive runs report infeasible, which only ever
/// loosens a bound computed on top of this oracle.
pub fn feasible(p: &SdpProblem, opts: &SolverOptions) -> Result<Feasibility> {
    p.validate()?;
    let red = match presolve(p, opts) {
        Presolved::Infeasible => {
            return Ok(Feasibility {
                feasible: false,
                x: vec![0.0; p.m],
                slack: f64::INFINITY,
                slack_lower: f64::INFINITY,
                iterations: 0,
            })
        }
        Presolved::Ready(r) => r,
    };
    if red.blocks.is_empty() {
        return Ok(Feasibility {
            feasible: true,
            x: vec![0.0; p.m],
            slack: f64::NEG_INFINITY,
            slack_lower: f64::NEG_INFINITY,
            iterations: 0,
        });
    }
    let ph = phase_one(&red, opts, opts.feas_tol * 0.5, opts.feas_tol);
    if ph.end == RunEnd::Breakdown && ph.t > opts.feas_tol && ph.iterations == 0 {
        return Err(Error::Solver("phase-1 Newton system breakdown".into()));
    }
    let x = expand(&red, &ph.y, p.m);
    let verified = p.max_violation(&x) <= opts.feas_tol;
    Ok(Feasibility {
        feasible: ph.t <= opts.feas_tol && verified,
        x,
        slack: ph.t,
        slack_lower: ph.t_lower,
        iterations: ph.iterations,
    })
}

/// Solves the problem. With no objective this is a feasibility solve.
pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    p.validate()?;
    let Some(obj) = p.objective else {
        let f = feasible(p, opts)?;
        let status = if f.feasible {
            Status::Optimal
        } else {
            Status::Infeasible
        };
        let max_violation = p.max_violation(&f.x);
        return Ok(SdpSolution {
            status,
            objective: 0.0,
            max_violation,
            gap: 0.0,
            iterations: f.iterations,
            strict: f.slack < 0.0,
            x: f.x,
        });
    };
    let red = match presolve(p, opts) {
        Presolved::Infeasible => return Ok(SdpSolution::failed(Status::Infeasible, p.m, 0)),
        Presolved::Ready(r) => r,
    };
    let sign = match obj.direction {
        Direction::Min => 1.0,
        Direction::Max => -1.0,
    };
    let Some(target) = red.map.iter().position(|&k| k == obj.target) else {
        return Ok(free_target(p, obj, opts));
    };

    let ph = phase_one(&red, opts, -0.5, opts.feas_tol);
    let mut iterations = ph.iterations;
    if ph.t_lower > opts.feas_tol {
        return Ok(SdpSolution::failed(Status::Infeasible, p.m, iterations));
    }
    if ph.t >= -INTERIOR_MARGIN {
        // no usable interior: optimize through the feasibility oracle
        return solve_by_bisection(p, obj, opts, iterations);
    }

    let mut c = vec![0.0; red.map.len()];
    c[target] = sign;
    let engine = Engine {
        blocks: &red.blocks,
        lower: &red.lower,
        upper: &red.upper,
        c: &c,
    };
    let gap_tol = opts.gap_tol;
    let run = engine.run(
        ph.y,
        1.0,
        |y| gap_tol * y[target].abs().max(1.0),
        opts.max_iter,
        |_, _| Control::Continue,
    );
    iterations += run.iterations;
    let x = expand(&red, &run.y, p.m);
    let value = x[obj.target];
    let max_violation = p.max_violation(&x);
    let status = match run.end {
        RunEnd::Converged | RunEnd::Stopped => {
            let at_box = value.abs() >= 0.99 * opts.var_bound;
            if at_box {
                Status::Unbounded
            } else if max_violation <= opts.feas_tol {
                Status::Optimal
            } else {
                Status::NumericFailure
            }
        }
        RunEnd::Exhausted | RunEnd::Breakdown => {
            if max_violation <= opts.feas_tol && run.gap <= 1e-6 * value.abs().max(1.0) {
                Status::Optimal
            } else {
                Status::NumericFailure
            }
        }
    };
    Ok(SdpSolution {
        status,
        objective: value,
        max_violation,
        gap: run.gap,
        iterations,
        strict: true,
        x,
    })
}

/// Target variable that appears in no block.
fn free_target(p: &SdpProblem, obj: Objective, opts: &SolverOptions) -> SdpSolution {
    let nonneg = p.nonneg.contains(&obj.target);
    let Ok(f) = feasible(p, opts) else {
        return SdpSolution::failed(Status::NumericFailure, p.m, 0);
    };
    if !f.feasible {
        return SdpSolution::failed(Status::Infeasible, p.m, f.iterations);
    }
    if obj.direction == Direction::Min && nonneg {
        let mut x = f.x;
        x[obj.target] = 0.0;
        let max_violation = p.max_violation(&x);
        return SdpSolution {
            status: Status::Optimal,
            objective: 0.0,
            max_violation,
            gap: 0.0,
            iterations: f.iterations,
            strict: false,
            x,
        };
    }
    SdpSolution::failed(Status::Unbounded, p.m, f.iterations)
}

fn solve_by_bisection(
    p: &SdpProblem,
    obj: Objective,
    opts: &SolverOptions,
    prior_iters: usize,
) -> Result<SdpSolution> {
    let nonneg = p.nonneg.contains(&obj.target);
    let out = match bracket_and_bisect(p, obj, nonneg, opts)? {
        BracketOutcome::Found(b) => b,
        BracketOutcome::Infeasible(it) => {
            return Ok(SdpSolution::failed(
                Status::Infeasible,
                p.m,
                prior_iters + it,
            ))
        }
        BracketOutcome::Unbounded(it) => {
            return Ok(SdpSolution::failed(
                Status::Unbounded,
                p.m,
                prior_iters + it,
            ))
        }
    };
    let x = out.witness;
    let max_violation = p.max_violation(&x);
    Ok(SdpSolution {
        status: Status::Optimal,
        objective: out.value,
        max_violation,
        gap: (out.feasible_end - out.infeasible_end).abs(),
        iterations: prior_iters + out.iterations,
        strict: false,
        x,
    })
}

enum BracketOutcome {
    Found(Bisection),
    Infeasible(usize),
    Unbounded(usize),
}

fn bracket_and_bisect(
    p: &SdpProblem,
    obj: Objective,
    nonneg: bool,
    opts: &SolverOptions,
) -> Result<BracketOutcome> {
    let mut iters = 0;
    let mut probe = |v: f64, iters: &mut usize| -> Result<Feasibility> {
        let f = feasible(&p.fix_variable(obj.target, v), opts)?;
        *iters += f.iterations;
        Ok(f)
    };
    // toward the objective is "infeasible side", away from it "feasible side"
    let toward = match obj.direction {
        Direction::Min => -1.0,
        Direction::Max => 1.0,
    };
    let start = 0.0;
    let f0 = probe(start, &mut iters)?;
    let (mut feas, mut infeas, mut witness);
    if f0.feasible {
        if nonneg && obj.direction == Direction::Min {
            let mut x = f0.x;
            x[obj.target] = 0.0;
            return Ok(BracketOutcome::Found(Bisection {
                value: 0.0,
                feasible_end: 0.0,
                infeasible_end: 0.0,
                witness: x,
                iterations: iters,
                solves: 1,
            }));
        }
        feas = start;
        witness = f0.x;
        // walk toward the objective until infeasible
        let mut step = 1.0;
        loop {
            let v = start + toward * step;
            if v.abs() > opts.var_bound {
                return Ok(BracketOutcome::Unbounded(iters));
            }
            let f = probe(v, &mut iters)?;
            if f.feasible {
                feas = v;
                witness = f.x;
                step *= 2.0;
            } else {
                infeas = v;
                break;
            }
        }
    } else {
        infeas = start;
        let mut step = 1.0;
        loop {
            let v = start - toward * step;
            if v.abs() > opts.var_bound || (nonneg && v < 0.0) {
                return Ok(BracketOutcome::Infeasible(iters));
            }
            let f = probe(v, &mut iters)?;
            if f.feasible {
                feas = v;
                witness = f.x;
                break;
            }
            infeas = v;
            step *= 2.0;
        }
    }
    let res = bisect_bracket(
        p, obj.target, feas, infeas, witness, opts, &mut probe, &mut iters,
    )?;
    Ok(BracketOutcome::Found(res))
}

#[allow(clippy::too_many_arguments)]
fn bisect_bracket(
    _p: &SdpProblem,
    target: usize,
    mut feas: f64,
    mut infeas: f64,
    mut witness: Vec<f64>,
    opts: &SolverOptions,
    probe: &mut impl FnMut(f64, &mut usize) -> Result<Feasibility>,
    iters: &mut usize,
) -> Result<Bisection> {
    let mut solves = 0;
    while (feas - infeas).abs() > opts.bisect_tol {
        let mid = 0.5 * (feas + infeas);
        let f = probe(mid, iters)?;
        solves += 1;
        if f.feasible {
            feas = mid;
            witness = f.x;
        } else {
            infeas = mid;
        }
    }
    witness[target] = feas;
    Ok(Bisection {
        value: feas,
        feasible_end: feas,
        infeasible_end: infeas,
        witness,
        iterations: *iters,
        solves,
    })
}

/// Bisection on variable `target` between a known feasible and a known
/// infeasible value. The bracket invariant feasible(feasible_end) ∧
/// ¬feasible(infeasible_end) is kept until the width is at most
/// `opts.bisect_tol`.
pub fn bisect(
    p: &SdpProblem,
    target: usize,
    feasible_end: f64,
    infeasible_end: f64,
    opts: &SolverOptions,
) -> Result<Bisection> {
    p.validate()?;
    let mut iters = 0;
    let mut probe = |v: f64, iters: &mut usize| -> Result<Feasibility> {
        let f = feasible(&p.fix_variable(target, v), opts)?;
        *iters += f.iterations;
        Ok(f)
    };
    let f = probe(feasible_end, &mut iters)?;
    if !f.feasible {
        return Err(Error::Solver(format!(
            "bisection: {feasible_end} is not feasible"
        )));
    }
    if probe(infeasible_end, &mut iters)?.feasible {
        return Err(Error::Solver(format!(
            "bisection: {infeasible_end} is not infeasible"
        )));
    }
    bisect_bracket(
        p,
        target,
        feasible_end,
        infeasible_end,
        f.x,
        opts,
        &mut probe,
        &mut iters,
    )
}

/// Optimizes the objective purely by bisection over the feasibility oracle.
pub fn solve_bisection(p: &SdpProblem, opts: &SolverOptions) -> Result<SdpSolution> {
    p.validate()?;
    let obj = p
        .objective
        .ok_or_else(|| Error::InvalidProblem("bisection needs an objective".into()))?;
    solve_by_bisection(p, obj, opts, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    /// minimize x s.t. [[−x, 1], [1, −x]] ⪯ 0  (λ_max = 1 − x).
    fn unit_two_by_two() -> SdpProblem {
        let mut b = Block::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        b.add_term(0, -DMatrix::identity(2, 2));
        SdpProblem {
            m: 1,
            blocks: vec![b],
            nonneg: vec![],
            objective: Some(Objective {
                direction: Direction::Min,
                target: 0,
            }),
        }
    }

    #[test]
    fn analytic_two_by_two() {
        let sol = solve(&unit_two_by_two(), &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-6, "{}", sol.objective);
        assert!(sol.max_violation <= 1e-8);
    }

    #[test]
    fn constant_only_block() {
        let p = SdpProblem {
            m: 0,
            blocks: vec![Block::new(-DMatrix::identity(2, 2))],
            nonneg: vec![],
            objective: None,
        };
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!(sol.x.is_empty());
    }

    #[test]
    fn boundary_optimum_without_interior() {
        let mut b = Block::new(DMatrix::zeros(2, 2));
        b.add_term(0, DMatrix::identity(2, 2));
        let p = SdpProblem {
            m: 1,
            blocks: vec![b],
            nonneg: vec![0],
            objective: Some(Objective {
                direction: Direction::Min,
                target: 0,
            }),
        };
        let sol = solve(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!(sol.objective.abs() < 1e-6);
    }

    #[test]
    fn scalar_feasibility() {
        let opts = SolverOptions::default();
        let mut le2 = Block::new(m1(-2.0));
        le2.add_term(0, m1(1.0));
        let p = SdpProblem {
            m: 1,
            blocks: vec![le2.clone()],
            nonneg: vec![],
            objective: None,
        };
        let f = feasible(&p, &opts).unwrap();
        assert!(f.feasible);
        assert!(f.x[0] <= 2.0 + 1e-8);

        let mut ge3 = Block::new(m1(3.0));
        ge3.add_term(0, m1(-1.0));
        let p = SdpProblem {
            m: 1,
            blocks: vec![le2, ge3],
            nonneg: vec![],
            objective: None,
        };
        assert!(!feasible(&p, &opts).unwrap().feasible);
    }

    #[test]
    fn scale_invariance_of_verdicts() {
        let opts = SolverOptions::default();
        let scale = |p: &SdpProblem, s: f64| {
            let mut q = p.clone();
            for b in &mut q.blocks {
                b.constant *= s;
                for (_, g) in &mut b.terms {
                    *g *= s;
                }
            }
            q
        };
        let base = unit_two_by_two();
        let a = solve(&base, &opts).unwrap();
        let b = solve(&scale(&base, 10.0), &opts).unwrap();
        assert_eq!(a.status, b.status);
        assert!((a.objective - b.objective).abs() < 1e-6);

        let mut le2 = Block::new(m1(-2.0));
        le2.add_term(0, m1(1.0));
        let mut ge3 = Block::new(m1(3.0));
        ge3.add_term(0, m1(-1.0));
        let p = SdpProblem {
            m: 1,
            blocks: vec![le2, ge3],
            nonneg: vec![],
            objective: None,
        };
        assert_eq!(
            feasible(&p, &opts).unwrap().feasible,
            feasible(&scale(&p, 10.0), &opts).unwrap().feasible
        );
    }

    #[test]
    fn bisection_keeps_bracket() {
        let opts = SolverOptions {
            bisect_tol: 1e-6,
            ..Default::default()
        };
        let b = bisect(&unit_two_by_two(), 0, 4.0, -3.0, &opts).unwrap();
        assert!((b.feasible_end - b.infeasible_end).abs() <= 1e-6);
        assert!(b.feasible_end >= 1.0 - 1e-6);
        assert!(b.infeasible_end <= 1.0);
        assert!((b.value - 1.0).abs() < 1e-6);
        assert!(bisect(&unit_two_by_two(), 0, 0.0, -3.0, &opts).is_err());
    }

    #[test]
    fn unbounded_and_infeasible_status() {
        let opts = SolverOptions::default();
        // minimize x s.t. x ≤ 2 → unbounded below
        let mut le2 = Block::new(m1(-2.0));
        le2.add_term(0, m1(1.0));
        let p = SdpProblem {
            m: 1,
            blocks: vec![le2.clone()],
            nonneg: vec![],
            objective: Some(Objective {
                direction: Direction::Min,
                target: 0,
            }),
        };
        assert_eq!(solve(&p, &opts).unwrap().status, Status::Unbounded);
        // maximize x s.t. x ≤ 2
        let p = SdpProblem {
            objective: Some(Objective {
                direction: Direction::Max,
                target: 0,
            }),
            ..p
        };
        let sol = solve(&p, &opts).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-6);
        // x ≤ 2 and x ≥ 3
        let mut ge3 = Block::new(m1(3.0));
        ge3.add_term(0, m1(-1.0));
        let p = SdpProblem {
            blocks: vec![le2, ge3],
            ..p
        };
        assert_eq!(solve(&p, &opts).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn interchange_round_trip() {
        let p = unit_two_by_two();
        let text = serde_json::to_string(&p.to_file_repr()).unwrap();
        let back = SdpProblem::from_file_repr(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut p = unit_two_by_two();
        p.blocks[0].terms[0].1 = DMatrix::identity(3, 3);
        assert!(p.validate().is_err());
        let mut p = unit_two_by_two();
        p.objective = Some(Objective {
            direction: Direction::Min,
            target: 4,
        });
        assert!(p.validate().is_err());
        let mut p = unit_two_by_two();
        p.blocks[0].constant[(0, 1)] = 3.0;
        assert!(p.validate().is_err());
    }
}
