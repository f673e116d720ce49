//! Data containers shared by the synthesis routines, the simulator and the
//! pipeline.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::opb::{chain_factor, DiffOperator};

/// Exosystem `v' = S v` with an optional leader output `y0 = C0 v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExoSpec {
    #[serde(with = "crate::matrix_serde")]
    pub s: DMatrix<f64>,
    /// Leader output map. When absent the leader output is zero and each
    /// follower output equals its tracking error.
    #[serde(with = "crate::matrix_serde::opt", default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<DMatrix<f64>>,
}

impl ExoSpec {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        let e = Self { s, c0: None };
        e.validate()?;
        Ok(e)
    }

    pub fn with_output(mut self, c0: DMatrix<f64>) -> Result<Self> {
        self.c0 = Some(c0);
        self.validate()?;
        Ok(self)
    }

    pub fn q(&self) -> usize {
        self.s.nrows()
    }

    /// Eigenvalues of `S` as `(re, im)` pairs.
    pub fn spectrum(&self) -> Vec<(f64, f64)> {
        linalg::eigenvalues(&self.s)
    }

    pub fn max_re_lambda(&self) -> f64 {
        linalg::max_real_eig(&self.s)
    }

    /// Shape checks plus the requirement that no eigenvalue of `S` lies in
    /// the open left half-plane.
    pub fn validate(&self) -> Result<()> {
        let q = self.s.nrows();
        if q == 0 || self.s.ncols() != q {
            return Err(Error::Dimension(format!("S must be square and nonempty, got {}x{}", q, self.s.ncols())));
        }
        if !linalg::all_finite(&self.s) {
            return Err(Error::InvalidInput("S has non-finite entries".into()));
        }
        if let Some(c0) = &self.c0 {
            if c0.ncols() != q {
                return Err(Error::Dimension(format!("C0 has {} columns, expected {q}", c0.ncols())));
            }
        }
        let tol = 1e-9 * (1.0 + self.s.amax());
        if let Some((re, im)) = self.spectrum().into_iter().find(|(re, _)| *re < -tol) {
            return Err(Error::InvalidInput(format!(
                "exosystem eigenvalue {re}{im:+}i lies in the open left half-plane"
            )));
        }
        Ok(())
    }
}

/// Chebyshev coefficient data of one follower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentData {
    /// State coefficients `X` (`n x (N+1)`).
    #[serde(with = "crate::matrix_serde")]
    pub x: DMatrix<f64>,
    /// Input coefficients `U` (`m x (N+1)`).
    #[serde(with = "crate::matrix_serde")]
    pub u: DMatrix<f64>,
    /// Tracking-error coefficients (`p x (N+1)`).
    #[serde(with = "crate::matrix_serde")]
    pub err: DMatrix<f64>,
    /// Exosystem coefficients `V` (`q x (N+1)`).
    #[serde(with = "crate::matrix_serde")]
    pub exo: DMatrix<f64>,
    /// Known exosystem-to-state matrix `E` (`n x q`).
    #[serde(with = "crate::matrix_serde")]
    pub e_mat: DMatrix<f64>,
    /// Known exosystem-to-error matrix `F` (`p x q`).
    #[serde(with = "crate::matrix_serde")]
    pub f_mat: DMatrix<f64>,
    /// Noise level `c` with `W W^T <= c I`; `None` means exact data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_c: Option<f64>,
    /// Collection window `[t0, t1]`.
    pub window: (f64, f64),
}

impl AgentData {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.err.nrows()
    }

    pub fn q(&self) -> usize {
        self.exo.nrows()
    }

    /// Number of coefficients `N + 1`.
    pub fn cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn degree(&self) -> usize {
        self.cols() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.x.ncols();
        if k < 2 {
            return Err(Error::Dimension("data need at least two coefficients".into()));
        }
        for (name, mat) in [("U", &self.u), ("error", &self.err), ("V", &self.exo)] {
            if mat.ncols() != k {
                return Err(Error::Dimension(format!("{name} has {} coefficients, X has {k}", mat.ncols())));
            }
        }
        if self.e_mat.shape() != (self.n(), self.q()) {
            return Err(Error::Dimension(format!(
                "E is {:?}, expected ({}, {})",
                self.e_mat.shape(),
                self.n(),
                self.q()
            )));
        }
        if self.f_mat.shape() != (self.p(), self.q()) {
            return Err(Error::Dimension(format!(
                "F is {:?}, expected ({}, {})",
                self.f_mat.shape(),
                self.p(),
                self.q()
            )));
        }
        if let Some(c) = self.noise_c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::InvalidInput(format!("noise level must be finite and >= 0, got {c}")));
            }
        }
        let (t0, t1) = self.window;
        if !(t0 < t1) {
            return Err(Error::DegenerateInterval { t0, t1 });
        }
        Ok(())
    }

    /// `d11` scaled by the interval chain factor, checked against the data size.
    pub fn scaled_d11(&self, diff: &DiffOperator) -> Result<DMatrix<f64>> {
        if diff.block() != self.cols() {
            return Err(Error::Dimension(format!(
                "differentiation operator block {} does not match {} coefficients",
                diff.block(),
                self.cols()
            )));
        }
        Ok(diff.d11() * chain_factor(self.window.0, self.window.1))
    }

    /// `Phi = X d11 - E V`, the data image of `A X + B U`.
    pub fn phi(&self, diff: &DiffOperator) -> Result<DMatrix<f64>> {
        Ok(&self.x * self.scaled_d11(diff)? - &self.e_mat * &self.exo)
    }

    /// `G = err - F V`, the data image of `C X + D U`.
    pub fn output_data(&self) -> DMatrix<f64> {
        &self.err - &self.f_mat * &self.exo
    }

    /// Stacked `[X; U]`.
    pub fn xu(&self) -> DMatrix<f64> {
        linalg::vstack(&[&self.x, &self.u])
    }
}

/// Evidence behind one agent's feedback gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum K1Certificate {
    /// Exact-data LMI: `X theta = P` symmetric positive definite.
    Exact {
        #[serde(with = "crate::matrix_serde")]
        theta: DMatrix<f64>,
        #[serde(with = "crate::matrix_serde")]
        p: DMatrix<f64>,
        lmi_residual: f64,
        lmi_iterations: usize,
        /// Largest real part of `Phi theta P^-1`, the data closed loop.
        closed_loop_max_re: f64,
    },
    /// Noisy-data LMI with multipliers.
    Noisy {
        #[serde(with = "crate::matrix_serde")]
        p: DMatrix<f64>,
        #[serde(with = "crate::matrix_serde")]
        j: DMatrix<f64>,
        alpha: f64,
        beta: f64,
        lmi_residual: f64,
        lmi_iterations: usize,
    },
    /// Gain supplied from outside the pipeline.
    Injected,
}

/// Evidence behind one agent's feedforward gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegulatorCertificate {
    #[serde(with = "crate::matrix_serde")]
    pub m: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub pi: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub gamma: DMatrix<f64>,
    pub residual: f64,
}

/// Controller gains of every follower together with their evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    #[serde(with = "crate::matrix_serde::list")]
    pub k1: Vec<DMatrix<f64>>,
    #[serde(with = "crate::matrix_serde::list")]
    pub k2: Vec<DMatrix<f64>>,
    pub mu: f64,
    #[serde(default)]
    pub k1_certificates: Vec<K1Certificate>,
    #[serde(default)]
    pub regulator_certificates: Vec<RegulatorCertificate>,
}

impl GainSet {
    /// Gains without certificates, e.g. loaded for a verification run.
    pub fn bare(k1: Vec<DMatrix<f64>>, k2: Vec<DMatrix<f64>>, mu: f64) -> Self {
        Self { k1, k2, mu, k1_certificates: Vec::new(), regulator_certificates: Vec::new() }
    }

    pub fn n_agents(&self) -> usize {
        self.k1.len()
    }
}
