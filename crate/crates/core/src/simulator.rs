//! Trajectories of reset systems, L2 quantities and scaled-graph samples.
//!
//! Flow is integrated with the Dormand–Prince 5(4) pair and its dense
//! output. Crossings of `g(x) = xᵀMx` from the flow set into the jump set are
//! located on the dense output by bisection and followed by `x⁺ = Rx`.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reset_model::ResetSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sine {
    pub amplitude: f64,
    pub omega: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signal {
    /// Per channel: `e^{−εs} Σ aₖ sin(ωₖ s + φₖ)`.
    Multisine {
        channels: Vec<Vec<Sine>>,
        epsilon: f64,
    },
    /// `e^{−μs} / (1 + e^{−as + ν})` along a fixed input direction.
    Sigmoid {
        mu: f64,
        a: f64,
        nu: f64,
        direction: Vec<f64>,
    },
    /// `amplitude · e^{−rate·s}`.
    Exponential { amplitude: Vec<f64>, rate: f64 },
}

/// Argument fed to the signal: absolute time, or time since the last jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    Absolute,
    TimerReset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    pub signal: Signal,
    pub clock: Clock,
    /// The input is zero from this absolute time on.
    pub horizon: f64,
    pub seed: Option<u64>,
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl InputSpec {
    /// Multisine with envelope `e^{−εt}`, cut where the envelope reaches `tail`.
    pub fn multisine(channels: Vec<Vec<Sine>>, epsilon: f64, tail: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 || tail.is_nan() || tail <= 0.0 || tail >= 1.0 {
            return Err(Error::InvalidProblem(
                "multisine needs ε > 0 and a tail level in (0, 1)".into(),
            ));
        }
        Ok(Self {
            signal: Signal::Multisine { channels, epsilon },
            clock: Clock::Absolute,
            horizon: -tail.ln() / epsilon,
            seed: None,
        })
    }

    /// Single-channel sine held for a whole number of periods.
    pub fn sine(omega: f64, periods: f64) -> Self {
        Self {
            signal: Signal::Multisine {
                channels: vec![vec![Sine {
                    amplitude: 1.0,
                    omega,
                    phase: 0.0,
                }]],
                epsilon: 0.0,
            },
            clock: Clock::Absolute,
            horizon: periods * TAU / omega,
            seed: None,
        }
    }

    pub fn sigmoid(
        mu: f64,
        a: f64,
        nu: f64,
        direction: Vec<f64>,
        clock: Clock,
        horizon: f64,
    ) -> Self {
        Self {
            signal: Signal::Sigmoid {
                mu,
                a,
                nu,
                direction,
            },
            clock,
            horizon,
            seed: None,
        }
    }

    /// Decaying exponential, cut where it reaches `tail` of its peak.
    pub fn exponential(amplitude: Vec<f64>, rate: f64, tail: f64) -> Self {
        Self {
            signal: Signal::Exponential { amplitude, rate },
            clock: Clock::Absolute,
            horizon: -tail.ln() / rate,
            seed: None,
        }
    }

    pub fn channels(&self) -> usize {
        match &self.signal {
            Signal::Multisine { channels, .. } => channels.len(),
            Signal::Sigmoid { direction, .. } => direction.len(),
            Signal::Exponential { amplitude, .. } => amplitude.len(),
        }
    }

    /// Signal value at clock argument `s`, ignoring the horizon.
    pub fn shape(&self, s: f64, out: &mut [f64]) {
        match &self.signal {
            Signal::Multisine { channels, epsilon } => {
                let env = (-epsilon * s).exp();
                for (o, ch) in out.iter_mut().zip(channels) {
                    *o = env
                        * ch.iter()
                            .map(|c| c.amplitude * (c.omega * s + c.phase).sin())
                            .sum::<f64>();
                }
            }
            Signal::Sigmoid {
                mu,
                a,
                nu,
                direction,
            } => {
                let v = (-mu * s - softplus(nu - a * s)).exp();
                for (o, d) in out.iter_mut().zip(direction) {
                    *o = v * d;
                }
            }
            Signal::Exponential { amplitude, rate } => {
                let v = (-rate * s).exp();
                for (o, a) in out.iter_mut().zip(amplitude) {
                    *o = v * a;
                }
            }
        }
    }

    /// Short label and parameter string for sample files.
    pub fn describe(&self) -> (&'static str, String) {
        let clock = match self.clock {
            Clock::Absolute => "absolute",
            Clock::TimerReset => "timer_reset",
        };
        match &self.signal {
            Signal::Multisine { channels, epsilon } => {
                let comps: Vec<String> = channels
                    .iter()
                    .map(|ch| {
                        ch.iter()
                            .map(|c| format!("{:.6}@{:.6}/{:.4}", c.amplitude, c.omega, c.phase))
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect();
                (
                    "multisine",
                    format!(
                        "eps={epsilon};T={:.3};clock={clock};{}",
                        self.horizon,
                        comps.join("|")
                    ),
                )
            }
            Signal::Sigmoid { mu, a, nu, .. } => (
                "sigmoid",
                format!(
                    "mu={mu};a={a:.6};nu={nu:.6};T={:.3};clock={clock}",
                    self.horizon
                ),
            ),
            Signal::Exponential { rate, .. } => (
                "exponential",
                format!("rate={rate};T={:.3};clock={clock}", self.horizon),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub rtol: f64,
    /// Absolute tolerance relative to the current state/input scale.
    pub atol: f64,
    pub t_max: f64,
    /// Settled once ‖x‖ ≤ settle_tol · max ‖x‖ after the input ends.
    pub settle_tol: f64,
    pub max_consecutive_jumps: usize,
    pub max_jumps_per_unit_time: usize,
    pub max_steps: usize,
    /// Keep the sampled time series in the trajectory.
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            t_max: 1e4,
            settle_tol: 1e-6,
            max_consecutive_jumps: 100,
            max_jumps_per_unit_time: 10_000,
            max_steps: 20_000_000,
            record: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub t: f64,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    /// `g(pre)`, negative by construction.
    pub g: f64,
}

/// `∫‖u‖², ∫‖y‖², ∫⟨u, y⟩` over the simulated interval.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct L2Sums {
    pub uu: f64,
    pub yy: f64,
    pub uy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub tau: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    pub jump_count: usize,
    pub l2: L2Sums,
    pub peak_state: f64,
    pub final_state: f64,
    pub end_time: f64,
    pub input_end: f64,
    pub settled: bool,
    pub steps: usize,
}

// Dormand–Prince 5(4) tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];
const GAUSS_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];
/// Dense-output probes per step when scanning for crossings.
const EVENT_PROBES: usize = 8;

/// Row-major copies of the system matrices for allocation-free stepping.
struct Plant {
    n: usize,
    p: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    r: Vec<f64>,
    m: Vec<f64>,
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
        .collect()
}

fn matvec(m: &[f64], rows: usize, v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for i in 0..rows {
        out[i] = m[i * cols..(i + 1) * cols]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum();
    }
}

/// `out = P x + Q u` for row-major P, Q.
fn affine(p: &[f64], q: &[f64], x: &[f64], u: &[f64], out: &mut [f64]) {
    let dot = |row: &[f64], v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    for (k, o) in out.iter_mut().enumerate() {
        *o =
            dot(&p[k * x.len()..(k + 1) * x.len()], x) + dot(&q[k * u.len()..(k + 1) * u.len()], u);
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Plant {
    fn new(sys: &ResetSystem) -> Self {
        Self {
            n: sys.n(),
            p: sys.p(),
            a: row_major(sys.a()),
            b: row_major(sys.b()),
            c: row_major(sys.c()),
            d: row_major(sys.d()),
            r: row_major(sys.r()),
            m: row_major(sys.m()),
        }
    }

    fn f(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        affine(&self.a, &self.b, x, u, out);
    }

    fn output(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        affine(&self.c, &self.d, x, u, out);
    }

    fn g(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += x[i] * self.m[i * n + j] * x[j];
            }
        }
        s
    }

    fn g_scale(&self, x: &[f64]) -> f64 {
        let mn = self.m.iter().map(|v| v * v).sum::<f64>().sqrt();
        mn * x.iter().map(|v| v * v).sum::<f64>()
    }

    fn reset(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        matvec(&self.r, self.n, x, &mut out);
        out
    }
}

struct Integrator<'a> {
    plant: &'a Plant,
    input: &'a InputSpec,
    opts: &'a SimOptions,
    t_jump: f64,
}

impl Integrator<'_> {
    fn clock(&self, t: f64) -> f64 {
        match self.input.clock {
            Clock::Absolute => t,
            Clock::TimerReset => t - self.t_jump,
        }
    }

    /// Input on a step that starts at `t0`; the horizon is applied per step
    /// so a step ending exactly on it still sees the left limit.
    fn input(&self, t0: f64, t: f64, out: &mut [f64]) {
        if t0 < self.input.horizon {
            self.input.shape(self.clock(t), out);
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

struct Step {
    k: [Vec<f64>; 7],
    x1: Vec<f64>,
    err: f64,
}

fn dense(x0: &[f64], st: &Step, h: f64, theta: f64, out: &mut [f64]) {
    let s1 = 1.0 - theta;
    for i in 0..x0.len() {
        let r2 = st.x1[i] - x0[i];
        let r3 = h * st.k[0][i] - r2;
        let r4 = r2 - h * st.k[6][i] - r3;
        let r5 = h * (0..7).map(|s| D[s] * st.k[s][i]).sum::<f64>();
        out[i] = x0[i] + theta * (r2 + s1 * (r3 + theta * (r4 + s1 * r5)));
    }
}

/// Simulates the reset system from the origin.
pub fn simulate(sys: &ResetSystem, inp: &InputSpec, opts: &SimOptions) -> Result<Trajectory> {
    simulate_from(sys, inp, &vec![0.0; sys.n()], opts)
}

/// Simulates the reset system from `x0`.
pub fn simulate_from(
    sys: &ResetSystem,
    inp: &InputSpec,
    x0: &[f64],
    opts: &SimOptions,
) -> Result<Trajectory> {
    if inp.channels() != sys.p() {
        return Err(Error::Dimension(format!(
            "input has {} channels, system has {}",
            inp.channels(),
            sys.p()
        )));
    }
    if x0.len() != sys.n() {
        return Err(Error::Dimension(format!(
            "initial state has length {}, system has {}",
            x0.len(),
            sys.n()
        )));
    }
    if inp.horizon.is_nan() || inp.horizon < 0.0 || opts.t_max.is_nan() || opts.t_max <= 0.0 {
        return Err(Error::InvalidProblem(
            "input horizon and T_max must be positive".into(),
        ));
    }
    let plant = Plant::new(sys);
    let (n, p) = (plant.n, plant.p);
    let mut sim = Integrator {
        plant: &plant,
        input: inp,
        opts,
        t_jump: 0.0,
    };
    let mut traj = Trajectory {
        t: Vec::new(),
        x: Vec::new(),
        u: Vec::new(),
        y: Vec::new(),
        tau: Vec::new(),
        jumps: Vec::new(),
        jump_count: 0,
        l2: L2Sums::default(),
        peak_state: 0.0,
        final_state: 0.0,
        end_time: 0.0,
        input_end: inp.horizon,
        settled: false,
        steps: 0,
    };
    let mut recent: VecDeque<f64> = VecDeque::new();
    let mut u = vec![0.0; p];
    let mut y = vec![0.0; p];

    let record = |traj: &mut Trajectory, sim: &Integrator, t0: f64, t: f64, x: &[f64]| {
        if !opts.record {
            return;
        }
        let mut u = vec![0.0; p];
        let mut y = vec![0.0; p];
        sim.input(t0, t, &mut u);
        plant.output(x, &u, &mut y);
        traj.t.push(t);
        traj.x.push(x.to_vec());
        traj.u.push(u);
        traj.y.push(y);
        traj.tau.push(t - sim.t_jump);
    };

    let mut t = 0.0;
    let mut x = x0.to_vec();
    traj.peak_state = norm(&x);
    record(&mut traj, &sim, t, t, &x);
    jump_while_in_jump_set(&plant, &mut sim, &mut traj, &mut recent, t, &mut x, opts)?;

    let mut h = initial_step(inp);
    let mut xt = vec![0.0; n];
    loop {
        let xn = norm(&x);
        traj.peak_state = traj.peak_state.max(xn);
        if t >= inp.horizon {
            let settled = xn == 0.0 || xn <= opts.settle_tol * traj.peak_state;
            if settled {
                traj.settled = true;
                break;
            }
        }
        if t >= opts.t_max {
            break;
        }
        if traj.steps >= opts.max_steps {
            return Err(Error::StepFailure {
                time: t,
                reason: format!("step budget of {} exhausted", opts.max_steps),
            });
        }
        let mut t_end = opts.t_max;
        if t < inp.horizon {
            t_end = t_end.min(inp.horizon);
        }
        let mut last = false;
        if t + h >= t_end {
            h = t_end - t;
            last = true;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            if last {
                t = t_end;
                continue;
            }
            return Err(Error::StepFailure {
                time: t,
                reason: format!("step size {h:e} underflow"),
            });
        }

        sim.input(t, t, &mut u);
        let scale = xn.max(norm(&u) * plant.b.iter().map(|v| v.abs()).fold(0.0, f64::max));
        let st = dp_step(&sim, t, &x, h, scale);
        traj.steps += 1;
        if !st.err.is_finite() || st.err > 1.0 {
            let fac = if st.err.is_finite() {
                (0.9 * st.err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= fac;
            continue;
        }

        // crossing from the flow set into the jump set
        let mut event = None;
        let mut g_prev = plant.g(&x);
        let mut th_prev = 0.0;
        for k in 1..=EVENT_PROBES {
            let th = k as f64 / EVENT_PROBES as f64;
            dense(&x, &st, h, th, &mut xt);
            let g = plant.g(&xt);
            if g_prev >= 0.0 && g < 0.0 {
                event = Some((th_prev, th));
                break;
            }
            g_prev = g;
            th_prev = th;
        }
        let theta_end = match event {
            Some((lo, hi)) => locate(&plant, &x, &st, h, t, lo, hi),
            None => 1.0,
        };

        // L2 integrals over [t, t + θ_end·h]
        let span = theta_end * h;
        for (node, w) in GAUSS_NODES.iter().zip(GAUSS_WEIGHTS) {
            let th = 0.5 * (node + 1.0) * theta_end;
            dense(&x, &st, h, th, &mut xt);
            sim.input(t, t + th * h, &mut u);
            plant.output(&xt, &u, &mut y);
            let wt = 0.5 * span * w;
            traj.l2.uu += wt * u.iter().map(|v| v * v).sum::<f64>();
            traj.l2.yy += wt * y.iter().map(|v| v * v).sum::<f64>();
            traj.l2.uy += wt * u.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
        }

        let t0 = t;
        if event.is_some() {
            dense(&x, &st, h, theta_end, &mut xt);
            t = if theta_end == 1.0 { t0 + h } else { t0 + span };
            x.copy_from_slice(&xt);
            traj.peak_state = traj.peak_state.max(norm(&x));
            record(&mut traj, &sim, t0, t, &x);
            apply_jump(&plant, &mut sim, &mut traj, &mut recent, t, &mut x, opts, 1)?;
            jump_while_in_jump_set(&plant, &mut sim, &mut traj, &mut recent, t, &mut x, opts)?;
        } else {
            t = if last { t_end } else { t0 + h };
            x = st.x1;
            record(&mut traj, &sim, t0, t, &x);
        }
        let fac = if st.err > 0.0 {
            (0.9 * st.err.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        if !last {
            h *= fac;
        } else {
            h = initial_step(inp).max(h);
        }
    }
    traj.final_state = norm(&x);
    traj.end_time = t;
    Ok(traj)
}

fn initial_step(inp: &InputSpec) -> f64 {
    let fastest = match &inp.signal {
        Signal::Multisine { channels, .. } => channels
            .iter()
            .flatten()
            .map(|c| c.omega)
            .fold(0.0, f64::max),
        Signal::Sigmoid { a, .. } => *a,
        Signal::Exponential { rate, .. } => *rate,
    };
    (0.01 / fastest.max(1.0)).min(0.01)
}

fn dp_step(sim: &Integrator, t: f64, x: &[f64], h: f64, scale: f64) -> Step {
    let n = x.len();
    let p = sim.plant.p;
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut xs = vec![0.0; n];
    let mut u = vec![0.0; p];
    for s in 0..7 {
        for i in 0..n {
            xs[i] = x[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
        }
        sim.input(t, t + C[s] * h, &mut u);
        let mut out = vec![0.0; n];
        sim.plant.f(&xs, &u, &mut out);
        k[s] = out;
    }
    // the last stage is evaluated at the 5th-order solution
    let x1 = xs;
    let atol = sim.opts.atol * scale;
    let mut acc = 0.0;
    for i in 0..n {
        let e = h * (0..7).map(|s| E[s] * k[s][i]).sum::<f64>();
        let sc = atol + sim.opts.rtol * x[i].abs().max(x1[i].abs());
        let r = if sc > 0.0 {
            e / sc
        } else if e == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        acc += r * r;
    }
    Step {
        k,
        x1,
        err: (acc / n.max(1) as f64).sqrt(),
    }
}

/// Bisects the dense output for the first point with g < 0.
fn locate(plant: &Plant, x0: &[f64], st: &Step, h: f64, t: f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut xt = vec![0.0; x0.len()];
    for _ in 0..200 {
        if (hi - lo) * h <= 4.0 * f64::EPSILON * t.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        dense(x0, st, h, mid, &mut xt);
        let g = plant.g(&xt);
        if g < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        // stop once g is at rounding level on the jump side
        dense(x0, st, h, hi, &mut xt);
        if plant.g(&xt).abs() <= 1e-15 * plant.g_scale(&xt) {
            break;
        }
    }
    hi
}

#[allow(clippy::too_many_arguments)]
fn apply_jump(
    plant: &Plant,
    sim: &mut Integrator,
    traj: &mut Trajectory,
    recent: &mut VecDeque<f64>,
    t: f64,
    x: &mut Vec<f64>,
    opts: &SimOptions,
    consecutive: usize,
) -> Result<()> {
    if consecutive > opts.max_consecutive_jumps {
        return Err(Error::ZenoDetected {
            time: t,
            reason: format!(
                "more than {} consecutive jumps at one instant",
                opts.max_consecutive_jumps
            ),
        });
    }
    recent.push_back(t);
    while recent.front().is_some_and(|&s| s < t - 1.0) {
        recent.pop_front();
    }
    if recent.len() > opts.max_jumps_per_unit_time {
        return Err(Error::ZenoDetected {
            time: t,
            reason: format!(
                "more than {} jumps within one time unit",
                opts.max_jumps_per_unit_time
            ),
        });
    }
    let post = plant.reset(x);
    let g = plant.g(x);
    traj.jump_count += 1;
    if opts.record {
        traj.jumps.push(JumpEvent {
            t,
            pre: x.clone(),
            post: post.clone(),
            g,
        });
    }
    *x = post;
    sim.t_jump = t;
    if opts.record {
        let mut u = vec![0.0; plant.p];
        let mut y = vec![0.0; plant.p];
        sim.input(t, t, &mut u);
        plant.output(x, &u, &mut y);
        traj.t.push(t);
        traj.x.push(x.clone());
        traj.u.push(u);
        traj.y.push(y);
        traj.tau.push(0.0);
    }
    Ok(())
}

fn jump_while_in_jump_set(
    plant: &Plant,
    sim: &mut Integrator,
    traj: &mut Trajectory,
    recent: &mut VecDeque<f64>,
    t: f64,
    x: &mut Vec<f64>,
    opts: &SimOptions,
) -> Result<()> {
    let mut consecutive = 1;
    while plant.g(x) < 0.0 {
        consecutive += 1;
        apply_jump(plant, sim, traj, recent, t, x, opts, consecutive)?;
    }
    Ok(())
}

/// One point of the scaled graph, stored in the closed upper half-plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgSample {
    pub rho: f64,
    pub theta: f64,
    pub z: Complex64,
    pub kind: String,
    pub seed: Option<u64>,
    pub params: String,
    /// ‖x(T)‖ relative to the state peak when the run stopped.
    pub truncation_error: f64,
    /// `|⟨u,y⟩| / (‖u‖‖y‖) − 1` before clamping (positive means excess).
    pub cauchy_schwarz_excess: f64,
}

impl SgSample {
    pub fn from_sums(l2: &L2Sums) -> Result<(f64, f64, f64)> {
        if l2.uu.is_nan() || l2.uu <= 0.0 {
            return Err(Error::ZeroInput);
        }
        let rho = (l2.yy / l2.uu).sqrt();
        if l2.yy == 0.0 {
            return Ok((0.0, 0.0, -1.0));
        }
        let c = l2.uy / (l2.uu.sqrt() * l2.yy.sqrt());
        Ok((rho, c.clamp(-1.0, 1.0).acos(), c.abs() - 1.0))
    }
}

/// Gain/phase sample of a settled trajectory.
pub fn sg_sample(traj: &Trajectory, inp: &InputSpec) -> Result<SgSample> {
    if !traj.settled {
        return Err(Error::TailNotSettled(format!(
            "‖x‖ = {:e} at t = {} (peak {:e}); extend T_max",
            traj.final_state, traj.end_time, traj.peak_state
        )));
    }
    let (rho, theta, excess) = SgSample::from_sums(&traj.l2)?;
    let (kind, params) = inp.describe();
    Ok(SgSample {
        rho,
        theta,
        z: Complex64::from_polar(rho, theta),
        kind: kind.into(),
        seed: inp.seed,
        params,
        truncation_error: if traj.peak_state > 0.0 {
            traj.final_state / traj.peak_state
        } else {
            0.0
        },
        cauchy_schwarz_excess: excess,
    })
}

/// Which inputs a battery draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatterySpec {
    pub multisines: usize,
    pub max_components: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    pub epsilon: f64,
    /// Relative envelope level at which multisines are cut.
    pub tail: f64,
    /// Grid sizes over the sigmoid slope `a` and offset `ν`.
    pub sigmoid_a: usize,
    pub sigmoid_nu: usize,
    pub mu: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    /// Time after which timer-reset sigmoids are switched off.
    pub sigmoid_horizon: f64,
    pub seed: u64,
}

impl Default for BatterySpec {
    fn default() -> Self {
        Self {
            multisines: 100,
            max_components: 5,
            omega_min: 1e-2,
            omega_max: 1e2,
            epsilon: 0.01,
            tail: 1e-6,
            sigmoid_a: 10,
            sigmoid_nu: 10,
            mu: 0.001,
            a_min: 0.05,
            a_max: 10.0,
            nu_min: 0.1,
            nu_max: 100.0,
            sigmoid_horizon: 200.0,
            seed: 0,
        }
    }
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![(lo * hi).sqrt()],
        _ => (0..count)
            .map(|k| (lo.ln() + (hi / lo).ln() * k as f64 / (count - 1) as f64).exp())
            .collect(),
    }
}

impl BatterySpec {
    /// Member inputs for a system with `p` input channels, in battery order.
    pub fn members(&self, p: usize) -> Result<Vec<InputSpec>> {
        let mut out = Vec::new();
        for k in 0..self.multisines {
            let seed = self
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let channels = (0..p)
                .map(|_| {
                    let count = rng.gen_range(1..=self.max_components.max(1));
                    let mut comps: Vec<Sine> = (0..count)
                        .map(|_| Sine {
                            amplitude: rng.gen_range(0.05..1.0),
                            omega: (rng.gen_range(self.omega_min.ln()..=self.omega_max.ln())).exp(),
                            phase: rng.gen_range(0.0..TAU),
                        })
                        .collect();
                    let s = comps
                        .iter()
                        .map(|c| c.amplitude * c.amplitude)
                        .sum::<f64>()
                        .sqrt();
                    comps.iter_mut().for_each(|c| c.amplitude /= s);
                    comps
                })
                .collect();
            let mut spec = InputSpec::multisine(channels, self.epsilon, self.tail)?;
            spec.seed = Some(seed);
            out.push(spec);
        }
        let direction = vec![1.0 / (p as f64).sqrt(); p];
        for a in log_grid(self.a_min, self.a_max, self.sigmoid_a) {
            for nu in log_grid(self.nu_min, self.nu_max, self.sigmoid_nu) {
                out.push(InputSpec::sigmoid(
                    self.mu,
                    a,
                    nu,
                    direction.clone(),
                    Clock::TimerReset,
                    self.sigmoid_horizon,
                ));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Battery {
    pub samples: Vec<SgSample>,
    /// (member index, error message) for members without a sample.
    pub failures: Vec<(usize, String)>,
    pub zeno: usize,
}

/// Simulates each input in parallel; results keep input order.
pub fn run_inputs(
    sys: &ResetSystem,
    inputs: &[InputSpec],
    opts: &SimOptions,
) -> Vec<Result<SgSample>> {
    let opts = SimOptions {
        record: false,
        ..*opts
    };
    inputs
        .par_iter()
        .map(|inp| simulate(sys, inp, &opts).and_then(|tr| sg_sample(&tr, inp)))
        .collect()
}

/// Runs every battery member; fails only when no member yields a sample.
pub fn battery(sys: &ResetSystem, spec: &BatterySpec, opts: &SimOptions) -> Result<Battery> {
    let members = spec.members(sys.p())?;
    let results = run_inputs(sys, &members, opts);
    let mut out = Battery {
        samples: Vec::new(),
        failures: Vec::new(),
        zeno: 0,
    };
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => out.samples.push(s),
            Err(e) => {
                if matches!(e, Error::ZenoDetected { .. }) {
                    out.zeno += 1;
                }
                log::warn!("battery member {k}: {e}");
                out.failures.push((k, e.to_string()));
            }
        }
    }
    if out.samples.is_empty() && !members.is_empty() {
        return Err(Error::AllFailed(members.len()));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    rho: f64,
    theta: f64,
    re: f64,
    im: f64,
    kind: String,
    seed: Option<u64>,
    params: String,
    truncation_error: f64,
}

/// Writes samples as CSV; `comments` become leading `#` lines.
pub fn write_samples_csv<W: Write>(
    mut w: W,
    samples: &[SgSample],
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut wr = csv::Writer::from_writer(w);
    for s in samples {
        wr.serialize(SampleRow {
            rho: s.rho,
            theta: s.theta,
            re: s.z.re,
            im: s.z.im,
            kind: s.kind.clone(),
            seed: s.seed,
            params: s.params.clone(),
            truncation_error: s.truncation_error,
        })
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<SgSample>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize::<SampleRow>() {
        let row = row.map_err(csv_err)?;
        out.push(SgSample {
            rho: row.rho,
            theta: row.theta,
            z: Complex64::new(row.re, row.im),
            kind: row.kind,
            seed: row.seed,
            params: row.params,
            truncation_error: row.truncation_error,
            cauchy_schwarz_excess: f64::NAN,
        });
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidProblem(format!("samples csv: {e}"))
}

/// Writes the recorded time series as CSV (t, τ, x…, u…, y…).
pub fn write_trajectory_csv<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let (n, p) = (
        traj.x.first().map_or(0, Vec::len),
        traj.u.first().map_or(0, Vec::len),
    );
    let mut header = vec!["t".to_string(), "tau".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..p).map(|i| format!("u{i}")));
    header.extend((0..p).map(|i| format!("y{i}")));
    wr.write_record(&header).map_err(csv_err)?;
    for k in 0..traj.t.len() {
        let mut rec = vec![traj.t[k].to_string(), traj.tau[k].to_string()];
        rec.extend(
            traj.x[k]
                .iter()
                .chain(&traj.u[k])
                .chain(&traj.y[k])
                .map(f64::to_string),
        );
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reset_model::presets;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn e_t() -> InputSpec {
        InputSpec::exponential(vec![1.0], 1.0, 1e-6)
    }

    #[test]
    fn lti_convolution_closed_form() {
        let tr = simulate(&presets::first_order_lti(), &e_t(), &SimOptions::default()).unwrap();
        assert!(tr.jumps.is_empty());
        let worst =
            tr.t.iter()
                .zip(&tr.y)
                .map(|(t, y)| (y[0] - t * (-t).exp()).abs())
                .fold(0.0, f64::max);
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn lti_sample_closed_form() {
        let inp = e_t();
        let tr = simulate(&presets::first_order_lti(), &inp, &SimOptions::default()).unwrap();
        // ‖u‖² = 1/2, ‖y‖² = 1/4, ⟨u, y⟩ = 1/4 up to the cut at e^{-T} = 1e-6
        assert!((tr.l2.uu - 0.5).abs() < 1e-9);
        assert!((tr.l2.yy - 0.25).abs() < 1e-9);
        assert!((tr.l2.uy - 0.25).abs() < 1e-9);
        let s = sg_sample(&tr, &inp).unwrap();
        assert!((s.rho - 0.5f64.sqrt()).abs() < 1e-6);
        assert!((s.theta - FRAC_PI_4).abs() < 1e-6);
        assert!(s.cauchy_schwarz_excess <= 1e-9);
    }

    #[test]
    fn static_gains() {
        let inp = InputSpec::sine(1.0, 3.0);
        let s = sg_sample(
            &simulate(&presets::static_gain(2.0), &inp, &SimOptions::default()).unwrap(),
            &inp,
        )
        .unwrap();
        assert!((s.rho - 2.0).abs() < 1e-9 && s.theta.abs() < 1e-6);
        let s = sg_sample(
            &simulate(&presets::static_gain(-1.0), &inp, &SimOptions::default()).unwrap(),
            &inp,
        )
        .unwrap();
        assert!((s.rho - 1.0).abs() < 1e-9 && (s.theta - PI).abs() < 1e-6);
        let s = sg_sample(
            &simulate(&presets::static_gain(0.0), &inp, &SimOptions::default()).unwrap(),
            &inp,
        )
        .unwrap();
        assert_eq!((s.rho, s.theta), (0.0, 0.0));
    }

    #[test]
    fn zero_input_stays_at_rest() {
        let inp = InputSpec::exponential(vec![0.0], 1.0, 1e-6);
        let tr = simulate(&presets::siso(), &inp, &SimOptions::default()).unwrap();
        assert!(tr.jumps.is_empty());
        assert!(tr.x.iter().all(|x| x.iter().all(|&v| v == 0.0)));
        assert!(matches!(sg_sample(&tr, &inp), Err(Error::ZeroInput)));
    }

    #[test]
    fn siso_jumps_reset_to_origin() {
        let inp = InputSpec::multisine(
            vec![vec![
                Sine {
                    amplitude: 0.8,
                    omega: 0.7,
                    phase: 0.0,
                },
                Sine {
                    amplitude: 0.6,
                    omega: 3.0,
                    phase: 1.0,
                },
            ]],
            0.05,
            1e-6,
        )
        .unwrap();
        let sys = presets::siso();
        let tr = simulate(&sys, &inp, &SimOptions::default()).unwrap();
        assert!(!tr.jumps.is_empty());
        for j in &tr.jumps {
            assert!(j.g < 0.0);
            assert!(j.g.abs() <= 1e-8 * (1.0 + j.pre.iter().map(|v| v * v).sum::<f64>()));
            assert_eq!(j.post, vec![0.0, 0.0]);
        }
        assert!(tr.settled);
    }

    #[test]
    fn zeno_guard() {
        let s = |v: f64| nalgebra::DMatrix::from_element(1, 1, v);
        let sys = ResetSystem::new(
            nalgebra::DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            nalgebra::DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            nalgebra::DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            s(0.0),
            nalgebra::DMatrix::identity(2, 2),
            nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0])),
        );
        let r = simulate_from(&sys, &e_t(), &[0.0, 1.0], &SimOptions::default());
        assert!(matches!(r, Err(Error::ZenoDetected { .. })), "{r:?}");
    }

    #[test]
    fn sigmoid_value_at_zero() {
        let inp = InputSpec::sigmoid(0.001, 1.0, 0.1, vec![1.0], Clock::TimerReset, 10.0);
        let mut u = [0.0];
        inp.shape(0.0, &mut u);
        assert!((u[0] - 1.0 / (1.0 + 0.1f64.exp())).abs() < 1e-15);
        assert!((u[0] - 0.4750).abs() < 1e-4);
        // large offsets stay finite
        let inp = InputSpec::sigmoid(0.001, 0.05, 1000.0, vec![1.0], Clock::TimerReset, 10.0);
        inp.shape(0.0, &mut u);
        assert!(u[0] >= 0.0 && u[0].is_finite());
    }

    #[test]
    fn timer_resets_at_jumps() {
        let sys = presets::siso();
        let inp = InputSpec::sigmoid(0.001, 0.5, 2.0, vec![1.0], Clock::TimerReset, 60.0);
        let tr = simulate(&sys, &inp, &SimOptions::default()).unwrap();
        assert!(tr.jump_count > 1);
        for j in &tr.jumps {
            let k = tr.t.iter().rposition(|&t| t == j.t).unwrap();
            assert_eq!(tr.tau[k], 0.0);
        }
    }

    #[test]
    fn sine_sample_approaches_nyquist_point() {
        let sys = presets::first_order_lti();
        for omega in [0.5, 1.0, 3.0] {
            let inp = InputSpec::sine(omega, 50.0);
            let s =
                sg_sample(&simulate(&sys, &inp, &SimOptions::default()).unwrap(), &inp).unwrap();
            let g = sys.transfer_at(omega).unwrap()[(0, 0)];
            let g = Complex64::new(g.re, g.im.abs());
            assert!((s.z - g).norm() <= 0.05, "ω = {omega}: {} vs {g}", s.z);
        }
    }

    #[test]
    fn halving_tolerances_changes_little() {
        let sys = presets::siso();
        let spec = BatterySpec {
            multisines: 4,
            sigmoid_a: 2,
            sigmoid_nu: 2,
            a_max: 1.0,
            nu_max: 20.0,
            ..BatterySpec::default()
        };
        let mut members = spec.members(1).unwrap();
        members.push(InputSpec::sigmoid(
            0.001,
            0.2,
            5.0,
            vec![1.0],
            Clock::TimerReset,
            100.0,
        ));
        let base = SimOptions::default();
        let fine = SimOptions {
            rtol: base.rtol / 2.0,
            atol: base.atol / 2.0,
            ..base
        };
        let a = run_inputs(&sys, &members, &base);
        let b = run_inputs(&sys, &members, &fine);
        for (a, b) in a.into_iter().zip(b) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!(
                (a.rho - b.rho).abs() <= 1e-5 && (a.theta - b.theta).abs() <= 1e-5,
                "{}: {} vs {}",
                a.params,
                a.z,
                b.z
            );
        }
    }

    #[test]
    fn sample_identities_hold() {
        let sys = presets::siso();
        let spec = BatterySpec {
            multisines: 4,
            sigmoid_a: 2,
            sigmoid_nu: 2,
            ..BatterySpec::default()
        };
        let opts = SimOptions::default();
        for inp in spec.members(1).unwrap() {
            let tr = simulate(
                &sys,
                &inp,
                &SimOptions {
                    record: false,
                    ..opts
                },
            )
            .unwrap();
            let s = sg_sample(&tr, &inp).unwrap();
            assert!(
                s.cauchy_schwarz_excess <= 1e-9,
                "{}",
                s.cauchy_schwarz_excess
            );
            assert!(s.rho >= 0.0 && (0.0..=PI).contains(&s.theta));
            let lhs = s.theta.cos() * s.rho * tr.l2.uu;
            assert!(
                (lhs - tr.l2.uy).abs() <= 1e-9 * tr.l2.uu.max(tr.l2.yy),
                "{lhs} vs {}",
                tr.l2.uy
            );
        }
    }

    #[test]
    fn battery_is_deterministic() {
        let spec = BatterySpec {
            multisines: 3,
            sigmoid_a: 2,
            sigmoid_nu: 2,
            ..BatterySpec::default()
        };
        let m1 = spec.members(1).unwrap();
        let m2 = spec.members(1).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.len(), 7);
        let other = BatterySpec { seed: 9, ..spec }.members(1).unwrap();
        assert_ne!(m1[0], other[0]);
        for m in &m1[..3] {
            let Signal::Multisine { channels, epsilon } = &m.signal else {
                panic!()
            };
            assert_eq!(*epsilon, 0.01);
            let c = &channels[0];
            assert!((1..=5).contains(&c.len()));
            assert!(c.iter().all(|s| (1e-2..=1e2).contains(&s.omega)));
            assert!((c.iter().map(|s| s.amplitude.powi(2)).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_csv_round_trip() {
        let s = SgSample {
            rho: 0.5,
            theta: 0.25,
            z: Complex64::from_polar(0.5, 0.25),
            kind: "sigmoid".into(),
            seed: None,
            params: "mu=0.001;a=1;nu=2".into(),
            truncation_error: 1e-9,
            cauchy_schwarz_excess: -0.1,
        };
        let mut buf = Vec::new();
        write_samples_csv(
            &mut buf,
            std::slice::from_ref(&s),
            &["config_hash=abc".into()],
        )
        .unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text
            .starts_with("# config_hash=abc\nrho,theta,re,im,kind,seed,params,truncation_error"));
        let back = read_samples_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0].z, s.z);
        assert_eq!(back[0].params, s.params);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cauchy_schwarz_and_angle_range(rate in 0.2..5.0f64, amp in -3.0..3.0f64, omega in 0.1..5.0f64) {
            prop_assume!(amp.abs() > 1e-3);
            let inputs = [
                InputSpec::exponential(vec![amp], rate, 1e-6),
                InputSpec::multisine(vec![vec![Sine { amplitude: amp, omega, phase: 0.3 }]], rate / 10.0, 1e-6).unwrap(),
            ];
            for sys in [presets::siso(), presets::first_order_lti(), presets::static_gain(-amp)] {
                for inp in &inputs {
                    let tr = simulate(&sys, inp, &SimOptions { record: false, ..SimOptions::default() }).unwrap();
                    let s = sg_sample(&tr, inp).unwrap();
                    prop_assert!(s.cauchy_schwarz_excess <= 1e-9);
                    prop_assert!(s.rho >= 0.0 && (0.0..=PI).contains(&s.theta));
                    prop_assert!(s.z.im >= 0.0);
                }
            }
        }
    }
}
