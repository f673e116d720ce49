//! Feasibility of affine symmetric-matrix inequalities.
//!
//! A problem is a list of blocks `M_b(z) = C_b + sum_k z_k A_bk`, each of which
//! must satisfy `M_b(z) >= margin_b * I`. The solver alternates between the
//! affine set of matrices reachable by some `z` and the shifted PSD cone,
//! projecting in the Frobenius norm. Each cone projection aims slightly above
//! the required margin so that a strictly feasible problem is solved in a
//! finite number of steps; the offset grows in stages when progress stalls,
//! and each projection step is extended while it keeps improving the
//! residual. A point is reported feasible only after a direct eigenvalue
//! check of every block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default strictness margin for strict inequalities.
pub const DEFAULT_MARGIN: f64 = 1e-6;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 20_000;
/// Default feasibility tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Number of cone offsets tried, each a factor of 10 above the previous.
const OVERSHOOT_LEVELS: usize = 5;
/// Cap on step doublings per iteration.
const MAX_DOUBLINGS: usize = 40;

/// Required sense of a block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "margin")]
pub enum Sense {
    /// `M(z) >= margin * I` with `margin > 0`.
    PsdStrict(f64),
    /// `M(z) >= 0`.
    Psd,
}

impl Sense {
    pub fn margin(&self) -> f64 {
        match self {
            Sense::PsdStrict(m) => *m,
            Sense::Psd => 0.0,
        }
    }
}

/// One matrix inequality `constant + sum z_k * coeff_k >= margin * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
    pub sense: Sense,
}

impl LmiBlock {
    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Evaluates the block at `z`.
    pub fn eval(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, a) in &self.terms {
            m += a * z[*k];
        }
        linalg::symmetrize(&m)
    }
}

/// A conjunction of affine matrix inequalities over `n_vars` scalars.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineLMI {
    n_vars: usize,
    blocks: Vec<LmiBlock>,
}

impl AffineLMI {
    pub fn new(n_vars: usize) -> Self {
        Self { n_vars, blocks: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    /// Adds a block after checking shapes, symmetry and the margin.
    pub fn add_block(
        &mut self,
        constant: DMatrix<f64>,
        terms: Vec<(usize, DMatrix<f64>)>,
        sense: Sense,
    ) -> Result<usize> {
        let n = constant.nrows();
        if constant.ncols() != n || n == 0 {
            return Err(Error::Dimension(format!(
                "constant term must be square and nonempty, got {}x{}",
                n,
                constant.ncols()
            )));
        }
        if let Sense::PsdStrict(m) = sense {
            if !(m > 0.0) {
                return Err(Error::InvalidInput(format!("strict margin must be positive, got {m}")));
            }
        }
        let sym_tol = |m: &DMatrix<f64>| 1e-9 * (1.0 + m.amax());
        if (&constant - constant.transpose()).amax() > sym_tol(&constant) {
            return Err(Error::InvalidInput("constant term is not symmetric".into()));
        }
        for (k, a) in &terms {
            if *k >= self.n_vars {
                return Err(Error::Dimension(format!("variable {k} out of range (n_vars = {})", self.n_vars)));
            }
            if a.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "coefficient of variable {k} is {}x{}, expected {n}x{n}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if (a - a.transpose()).amax() > sym_tol(a) {
                return Err(Error::InvalidInput(format!("coefficient of variable {k} is not symmetric")));
            }
        }
        self.blocks.push(LmiBlock {
            constant: linalg::symmetrize(&constant),
            terms: terms.into_iter().map(|(k, a)| (k, linalg::symmetrize(&a))).collect(),
            sense,
        });
        Ok(self.blocks.len() - 1)
    }

    /// Adds the scalar constraint `z_k >= lower` (plus the sense margin).
    pub fn add_lower_bound(&mut self, var: usize, lower: f64, sense: Sense) -> Result<usize> {
        self.add_block(DMatrix::from_element(1, 1, -lower), vec![(var, DMatrix::from_element(1, 1, 1.0))], sense)
    }

    /// Minimum eigenvalue of every block at `z`.
    pub fn block_min_eigs(&self, z: &DVector<f64>) -> Vec<f64> {
        self.blocks.iter().map(|b| linalg::min_sym_eig(&b.eval(z))).collect()
    }

    /// `min_b (lambda_min(M_b(z)) - margin_b)`.
    pub fn residual(&self, z: &DVector<f64>) -> f64 {
        self.blocks.iter().zip(self.block_min_eigs(z)).map(|(b, e)| e - b.sense.margin()).fold(f64::INFINITY, f64::min)
    }
}

/// Outcome of a feasibility search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmiStatus {
    Feasible,
    InfeasibleEvidence,
    MaxIter,
}

/// Result of [`solve_feasibility`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LMICertificate {
    #[serde(with = "crate::matrix_serde::vector")]
    pub z: DVector<f64>,
    /// `min_b (lambda_min(M_b(z)) - margin_b)`.
    pub residual: f64,
    pub iterations: usize,
    pub status: LmiStatus,
}

impl LMICertificate {
    pub fn is_feasible(&self) -> bool {
        self.status == LmiStatus::Feasible
    }
}

/// `svec` with off-diagonal entries weighted by `sqrt(2)`, so that Euclidean
/// distance equals Frobenius distance.
fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.nrows();
    let mut idx = 0;
    for j in 0..n {
        for i in j..n {
            out[idx] = if i == j { m[(i, j)] } else { std::f64::consts::SQRT_2 * m[(i, j)] };
            idx += 1;
        }
    }
}

fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Alternating-projection feasibility search.
pub fn solve_feasibility(problem: &AffineLMI, max_iter: usize, tol: f64) -> Result<LMICertificate> {
    let nv = problem.n_vars;
    let z0 = DVector::zeros(nv);
    if problem.blocks.is_empty() {
        return Ok(LMICertificate { z: z0, residual: f64::INFINITY, iterations: 0, status: LmiStatus::Feasible });
    }

    // Blocks that no variable influences decide infeasibility on their own.
    for b in &problem.blocks {
        let inert = b.terms.iter().all(|(_, a)| a.amax() == 0.0);
        if inert && linalg::min_sym_eig(&b.constant) < b.sense.margin() - tol {
            let residual = problem.residual(&z0);
            return Ok(LMICertificate { z: z0, residual, iterations: 0, status: LmiStatus::InfeasibleEvidence });
        }
    }

    let offsets: Vec<usize> = problem
        .blocks
        .iter()
        .scan(0, |acc, b| {
            let o = *acc;
            *acc += svec_len(b.size());
            Some(o)
        })
        .collect();
    let total: usize = problem.blocks.iter().map(|b| svec_len(b.size())).sum();
    let mut g = DMatrix::zeros(total, nv);
    let mut s0 = DVector::zeros(total);
    for (b, &off) in problem.blocks.iter().zip(&offsets) {
        let len = svec_len(b.size());
        svec_into(&b.constant, &mut s0.as_mut_slice()[off..off + len]);
        let mut buf = vec![0.0; len];
        for (k, a) in &b.terms {
            svec_into(a, &mut buf);
            for (r, v) in buf.iter().enumerate() {
                g[(off + r, *k)] += v;
            }
        }
    }
    let g_pinv = linalg::pinv(&g);

    // The cone target sits above the margin so that iterates land inside.
    // Thin interiors are reached with the smallest offset; when that runs out
    // of budget the offset grows by a factor of 10.
    let scale = problem.blocks.iter().map(|b| b.sense.margin()).fold(0.0f64, f64::max).max(1e-9);
    let base = 10.0 * scale + 100.0 * tol;
    let per_level = (max_iter / OVERSHOOT_LEVELS).max(1);

    let mut z = z0;
    let mut best = (problem.residual(&z), z.clone());
    let mut target = DVector::zeros(total);
    let mut iterations = 0;
    for level in 0..OVERSHOOT_LEVELS {
        let overshoot = base * 10f64.powi(level as i32);
        for _ in 0..per_level {
            let residual = problem.residual(&z);
            if residual > best.0 {
                best = (residual, z.clone());
            }
            if residual >= -tol {
                return Ok(LMICertificate { z, residual, iterations, status: LmiStatus::Feasible });
            }
            for (b, &off) in problem.blocks.iter().zip(&offsets) {
                let len = svec_len(b.size());
                let proj = project_psd(&b.eval(&z), b.sense.margin() + overshoot);
                svec_into(&proj, &mut target.as_mut_slice()[off..off + len]);
            }
            let next = &g_pinv * (&target - &s0);
            let dir = &next - &z;
            if dir.norm() <= f64::EPSILON * (1.0 + z.norm()) {
                // Stalled: the affine set and the shifted cone are not getting closer.
                break;
            }
            z = extrapolate(problem, &z, next, &dir, tol);
            iterations += 1;
        }
    }
    let residual = problem.residual(&z);
    if residual >= -tol {
        return Ok(LMICertificate { z, residual, iterations, status: LmiStatus::Feasible });
    }
    if residual > best.0 {
        best = (residual, z);
    }
    Ok(LMICertificate { z: best.1, residual: best.0, iterations, status: LmiStatus::MaxIter })
}

/// Doubles the step along `dir` while the residual keeps improving. Plain
/// projections creep along recession directions of homogeneous problems at a
/// rate set by the overshoot; the doubling covers that distance in a
/// logarithmic number of trials.
fn extrapolate(
    problem: &AffineLMI,
    z: &DVector<f64>,
    next: DVector<f64>,
    dir: &DVector<f64>,
    tol: f64,
) -> DVector<f64> {
    let mut best_res = problem.residual(&next);
    let mut best = next;
    let mut factor = 2.0;
    for _ in 0..MAX_DOUBLINGS {
        if best_res >= -tol {
            // Going further only inflates the scale of a feasible point.
            break;
        }
        let trial = z + dir * factor;
        let r = problem.residual(&trial);
        if !(r > best_res) {
            break;
        }
        best_res = r;
        best = trial;
        factor *= 2.0;
    }
    best
}

/// Whether the symmetric part of `m` has every eigenvalue `>= margin`.
pub fn psd_check(m: &DMatrix<f64>, margin: f64) -> bool {
    linalg::min_sym_eig(&linalg::symmetrize(m)) >= margin
}

/// Frobenius-nearest matrix to `m` with every eigenvalue `>= floor`.
pub fn project_psd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = linalg::symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return linalg::symmetrize(m);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let q = &eig.eigenvectors;
    linalg::symmetrize(&(q * DMatrix::from_diagonal(&clamped) * q.transpose()))
}
