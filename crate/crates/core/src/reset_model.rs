//! Reset systems with state-based resetting:
//!
//! ```text
//! ẋ = Ax + Bu      if xᵀMx ≥ 0   (flow set)
//! x⁺ = Rx          if xᵀMx < 0   (jump set)
//! y = Cx + Du
//! ```

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Symmetry tolerance on M (relative Frobenius).
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ResetSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    r: DMatrix<f64>,
    m: DMatrix<f64>,
}

/// Outcome of the static checks. `ok` covers symmetry and dimensions only;
/// a non-Hurwitz A is reported but does not fail the model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub symmetric: bool,
    pub hurwitz: bool,
    pub dims_ok: bool,
    pub ok: bool,
    pub messages: Vec<String>,
}

/// On-disk layout: row-major nested arrays under keys "A".."M".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
}

impl ResetSystem {
    /// Stores the matrices as given. Use [`ResetSystem::validate`] for checks;
    /// this constructor does not reject anything.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        r: DMatrix<f64>,
        m: DMatrix<f64>,
    ) -> Self {
        Self { a, b, c, d, r, m }
    }

    /// Row-major convenience constructor.
    pub fn from_rows(
        a: &[Vec<f64>],
        b: &[Vec<f64>],
        c: &[Vec<f64>],
        d: &[Vec<f64>],
        r: &[Vec<f64>],
        m: &[Vec<f64>],
    ) -> Result<Self> {
        Ok(Self::new(
            linalg::from_rows(a)?,
            linalg::from_rows(b)?,
            linalg::from_rows(c)?,
            linalg::from_rows(d)?,
            linalg::from_rows(r)?,
            linalg::from_rows(m)?,
        ))
    }

    /// Builds and validates; rejects when the report is not ok.
    pub fn from_file_repr(file: &SystemFile) -> Result<Self> {
        let sys = Self::from_rows(&file.a, &file.b, &file.c, &file.d, &file.r, &file.m)?;
        let report = sys.validate();
        if !report.ok {
            return Err(Error::InvalidSystem(report.messages.join("; ")));
        }
        if !report.hurwitz {
            warn!("A is not Hurwitz; stability of trajectories is not guaranteed");
        }
        Ok(sys)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: SystemFile = serde_json::from_str(s)?;
        Self::from_file_repr(&file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_repr(&self) -> SystemFile {
        SystemFile {
            a: linalg::to_rows(&self.a),
            b: linalg::to_rows(&self.b),
            c: linalg::to_rows(&self.c),
            d: linalg::to_rows(&self.d),
            r: linalg::to_rows(&self.r),
            m: linalg::to_rows(&self.m),
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input/output dimension.
    pub fn p(&self) -> usize {
        self.d.nrows()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut messages = Vec::new();
        let n = self.a.nrows();
        let p = self.d.nrows();
        let shape_ok =
            |name: &str, m: &DMatrix<f64>, r: usize, c: usize, msgs: &mut Vec<String>| {
                let ok = m.nrows() == r && m.ncols() == c;
                if !ok {
                    msgs.push(format!(
                        "{name} is {}x{}, expected {r}x{c}",
                        m.nrows(),
                        m.ncols()
                    ));
                }
                ok
            };
        let mut dims_ok = n > 0 && p > 0;
        if !dims_ok {
            messages.push("state and input dimensions must be positive".into());
        }
        dims_ok &= shape_ok("A", &self.a, n, n, &mut messages);
        dims_ok &= shape_ok("B", &self.b, n, p, &mut messages);
        dims_ok &= shape_ok("C", &self.c, p, n, &mut messages);
        dims_ok &= shape_ok("D", &self.d, p, p, &mut messages);
        dims_ok &= shape_ok("R", &self.r, n, n, &mut messages);
        dims_ok &= shape_ok("M", &self.m, n, n, &mut messages);

        let symmetric =
            self.m.nrows() == self.m.ncols() && linalg::asymmetry(&self.m) <= SYMMETRY_TOL;
        if !symmetric {
            messages.push("M is not symmetric".into());
        }

        let hurwitz = self.a.nrows() == self.a.ncols()
            && n > 0
            && self
                .a
                .clone()
                .complex_eigenvalues()
                .iter()
                .all(|ev| ev.re < 0.0);
        if !hurwitz {
            messages.push("A is not Hurwitz (warning)".into());
        }

        ValidationReport {
            symmetric,
            hurwitz,
            dims_ok,
            ok: symmetric && dims_ok,
            messages,
        }
    }

    /// Quadratic form xᵀMx; positive-or-zero means flow.
    pub fn set_function(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.n() {
            return Err(Error::Dimension(format!(
                "state has length {}, expected {}",
                x.len(),
                self.n()
            )));
        }
        Ok(x.dot(&(&self.m * x)))
    }

    /// Membership in the flow set xᵀMx ≥ 0. The boundary belongs to the flow set.
    pub fn in_flow(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(self.set_function(x)? >= 0.0)
    }

    pub fn in_jump(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(!self.in_flow(x)?)
    }

    /// Complex transfer matrix C(jωI − A)⁻¹B + D.
    pub fn transfer_at(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let n = self.n();
        let cplx = |m: &DMatrix<f64>| m.map(|v| Complex64::new(v, 0.0));
        let resolvent = DMatrix::<Complex64>::from_fn(n, n, |i, j| {
            let diag = if i == j {
                Complex64::new(0.0, omega)
            } else {
                Complex64::new(0.0, 0.0)
            };
            diag - self.a[(i, j)]
        });
        let lu = resolvent.lu();
        let rhs = cplx(&self.b);
        let x = lu.solve(&rhs).ok_or(Error::SingularResolvent(omega))?;
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::SingularResolvent(omega));
        }
        Ok(cplx(&self.c) * x + cplx(&self.d))
    }

    /// Largest singular value of the LTI part at frequency ω.
    pub fn lti_gain_at(&self, omega: f64) -> Result<f64> {
        let g = self.transfer_at(omega)?;
        Ok(g.singular_values().iter().cloned().fold(0.0, f64::max))
    }
}

/// Systems used throughout the examples and tests.
pub mod presets {
    use super::*;

    /// SISO reset system: second-order low-pass flow, full reset to zero,
    /// jump set |x₂| > 0.9|x₁|.
    pub fn siso() -> ResetSystem {
        ResetSystem::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, -1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(2, 2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.81, -1.0])),
        )
    }

    /// Two-input two-output variant of [`siso`] with C = I₂.
    pub fn mimo() -> ResetSystem {
        ResetSystem::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, -1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.81, -1.0])),
        )
    }

    /// First-order low-pass 1/(s+1) with an empty jump set.
    pub fn first_order_lti() -> ResetSystem {
        scalar(-1.0, 1.0, 1.0, 0.0)
    }

    /// Static gain y = k·u realised with a decoupled stable state.
    pub fn static_gain(k: f64) -> ResetSystem {
        scalar(-1.0, 0.0, 0.0, k)
    }

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> ResetSystem {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        ResetSystem::new(s(a), s(b), s(c), s(d), s(1.0), s(1.0))
    }
}
