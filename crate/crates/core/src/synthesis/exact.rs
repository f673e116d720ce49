//! Synthesis from exact (noise-free) coefficient data.
//!
//! With `Phi = X d11 - E V` the data satisfy `Phi = A X + B U` for the
//! unknown plant, so closed-loop and regulator conditions can be written in
//! terms of `X`, `U`, `Phi` and the error data alone.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::types::{AgentData, ExoSpec, K1Certificate, RegulatorCertificate};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lmi::{self, AffineLMI, LmiStatus, Sense};
use crate::opb::{chain_factor, ChebSeries, DiffOperator};

/// How the feedback gain is chosen from the feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum K1Mode {
    /// Any point returned by the LMI solver.
    #[default]
    Lmi,
    /// The minimum-norm right inverse of `X`, i.e. `K1 = U X^+`.
    Canonical,
}

/// Numerical settings shared by the synthesis routines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisOptions {
    pub margin: f64,
    pub beta_floor: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Required decay rate `d >= 0`: the closed loop must satisfy
    /// `Phi theta + theta^T Phi^T + 2 d P < 0`. Zero gives plain stability.
    pub decay_rate: f64,
    pub k1_mode: K1Mode,
    /// Relative singular-value threshold for rank decisions; `None` uses
    /// `max(dim) * eps * sigma_max`.
    pub rank_tol: Option<f64>,
    /// Residual tolerance for the regulator equations.
    pub residual_tol: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            margin: lmi::DEFAULT_MARGIN,
            beta_floor: 1e-6,
            max_iter: lmi::DEFAULT_MAX_ITER,
            tol: lmi::DEFAULT_TOL,
            decay_rate: 0.0,
            k1_mode: K1Mode::Lmi,
            rank_tol: None,
            residual_tol: 1e-8,
        }
    }
}

impl SynthesisOptions {
    pub(crate) fn rank(&self, m: &DMatrix<f64>) -> usize {
        let tol = self.rank_tol.map(|r| r * linalg::spectral_norm(m));
        linalg::numerical_rank(m, tol)
    }
}

/// Outcome of the data-based stabilizability test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizabilityReport {
    pub ok: bool,
    /// The right inverse of `X` that was tested.
    #[serde(with = "crate::matrix_serde")]
    pub x_pinv: DMatrix<f64>,
    pub rank_x: usize,
    /// Largest real part of `Phi X^+` with the minimum-norm right inverse.
    pub min_norm_max_re: f64,
    /// Largest real part of `Phi X^+` with the returned right inverse.
    pub max_re: f64,
    /// Whether the returned right inverse came from the LMI search.
    pub via_lmi: bool,
    /// Solver status of the LMI search, when it ran. `max_iter` means no
    /// certificate was found within the budget, not that none exists.
    pub lmi_status: Option<LmiStatus>,
}

fn require_full_row_rank(data: &AgentData, opts: &SynthesisOptions) -> Result<usize> {
    let rank = opts.rank(&data.x);
    if rank < data.n() {
        return Err(Error::NotInformative(format!(
            "state data have rank {rank} < n = {}; no right inverse exists",
            data.n()
        )));
    }
    Ok(rank)
}

/// Searches for a right inverse `X^+` of the state data with `Phi X^+`
/// Hurwitz. The minimum-norm right inverse is tried first; if it fails the
/// LMI over all right inverses decides.
pub fn stabilizability_check(
    data: &AgentData,
    diff: &DiffOperator,
    opts: &SynthesisOptions,
) -> Result<StabilizabilityReport> {
    data.validate()?;
    let rank_x = require_full_row_rank(data, opts)?;
    let phi = data.phi(diff)?;
    let x_mp = linalg::pinv(&data.x);
    let min_norm_max_re = linalg::max_real_eig(&(&phi * &x_mp));
    if min_norm_max_re < 0.0 {
        return Ok(StabilizabilityReport {
            ok: true,
            x_pinv: x_mp,
            rank_x,
            min_norm_max_re,
            max_re: min_norm_max_re,
            via_lmi: false,
            lmi_status: None,
        });
    }
    let plain = SynthesisOptions { decay_rate: 0.0, ..opts.clone() };
    match solve_k1_lmi(data, &phi, &plain)? {
        LmiOutcome::Solved(sol) => {
            let x_pinv = &sol.theta * linalg::pinv(&sol.p);
            let max_re = linalg::max_real_eig(&(&phi * &x_pinv));
            Ok(StabilizabilityReport {
                ok: max_re < 0.0,
                x_pinv,
                rank_x,
                min_norm_max_re,
                max_re,
                via_lmi: true,
                lmi_status: Some(LmiStatus::Feasible),
            })
        }
        LmiOutcome::Uncertified { status, .. } => Ok(StabilizabilityReport {
            ok: false,
            x_pinv: x_mp,
            rank_x,
            min_norm_max_re,
            max_re: min_norm_max_re,
            via_lmi: true,
            lmi_status: Some(status),
        }),
    }
}

struct LmiSolution {
    theta: DMatrix<f64>,
    p: DMatrix<f64>,
    residual: f64,
    iterations: usize,
}

enum LmiOutcome {
    Solved(LmiSolution),
    Uncertified { status: LmiStatus, residual: f64, iterations: usize },
}

/// Basis of symmetric `n x n` matrices: `E_ii` and `E_ij + E_ji`.
pub(crate) fn sym_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in j..n {
            let mut e = DMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            out.push(e);
        }
    }
    out
}

/// Null-space basis of `X` restricted to directions that the input data `U`
/// does not annihilate. For exact data `Phi z = B U z` on the null space, so
/// directions with `U z = 0` move `Phi` only by truncation residue; letting
/// the LMI use them can certify a gain `U theta P^-1` that does not
/// stabilize the plant.
fn reduced_null_space(x: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let z = linalg::null_space(x);
    if z.ncols() == 0 || u.nrows() == 0 {
        return DMatrix::zeros(x.ncols(), 0);
    }
    let uz = u * &z;
    let keep = linalg::numerical_rank(&uz, None);
    let svd = uz.svd(false, true);
    let v_t = svd.v_t.expect("right factor requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut basis = DMatrix::zeros(z.ncols(), keep);
    for (j, &k) in order.iter().take(keep).enumerate() {
        basis.set_column(j, &v_t.row(k).transpose());
    }
    z * basis
}

/// LMI over `theta = X^+ P + Z Y` (`Z` spanning the null space of `X`), which
/// makes `X theta = P` symmetric by construction.
fn solve_k1_lmi(data: &AgentData, phi: &DMatrix<f64>, opts: &SynthesisOptions) -> Result<LmiOutcome> {
    let n = data.n();
    let x_pinv = linalg::pinv(&data.x);
    let z = reduced_null_space(&data.x, &data.u);
    let r = z.ncols();
    let p_basis = sym_basis(n);
    let np = p_basis.len();
    let nvars = np + r * n;
    let phi_xp = phi * &x_pinv;
    let phi_z = phi * &z;
    let mut lmi = AffineLMI::new(nvars);
    let mut pos = Vec::with_capacity(np);
    let mut lyap = Vec::with_capacity(nvars);
    for (k, e) in p_basis.iter().enumerate() {
        pos.push((k, e.clone()));
        let t = &phi_xp * e;
        lyap.push((k, -(&t + t.transpose()) - e * (2.0 * opts.decay_rate)));
    }
    for row in 0..r {
        for col in 0..n {
            let t = phi_z.column(row) * DMatrix::<f64>::from_fn(1, n, |_, j| if j == col { 1.0 } else { 0.0 });
            lyap.push((np + row * n + col, -(&t + t.transpose())));
        }
    }
    lmi.add_block(DMatrix::zeros(n, n), pos, Sense::PsdStrict(opts.margin))?;
    lmi.add_block(DMatrix::zeros(n, n), lyap, Sense::PsdStrict(opts.margin))?;
    let cert = lmi::solve_feasibility(&lmi, opts.max_iter, opts.tol)?;
    if cert.status != LmiStatus::Feasible {
        return Ok(LmiOutcome::Uncertified {
            status: cert.status,
            residual: cert.residual,
            iterations: cert.iterations,
        });
    }
    let mut p = DMatrix::zeros(n, n);
    for (k, e) in p_basis.iter().enumerate() {
        p += e * cert.z[k];
    }
    let y = DMatrix::from_fn(r, n, |row, col| cert.z[np + row * n + col]);
    let theta = &x_pinv * &p + &z * y;
    Ok(LmiOutcome::Solved(LmiSolution { theta, p, residual: cert.residual, iterations: cert.iterations }))
}

/// Data-based feedback gain `K1 = U theta (X theta)^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactK1 {
    pub k1: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub certificate: K1Certificate,
}

pub fn synthesize_k1_exact(data: &AgentData, diff: &DiffOperator, opts: &SynthesisOptions) -> Result<ExactK1> {
    data.validate()?;
    require_full_row_rank(data, opts)?;
    let phi = data.phi(diff)?;
    let n = data.n();
    let sol = match opts.k1_mode {
        K1Mode::Lmi => match solve_k1_lmi(data, &phi, opts)? {
            LmiOutcome::Solved(sol) => sol,
            LmiOutcome::Uncertified { status: LmiStatus::InfeasibleEvidence, .. } => {
                return Err(Error::NotInformative(
                    "no right inverse of the state data stabilizes the data closed loop".into(),
                ))
            }
            LmiOutcome::Uncertified { iterations, residual, .. } => {
                return Err(Error::Numerical(format!(
                    "feedback LMI not certified after {iterations} iterations (residual {residual:.3e})"
                )))
            }
        },
        K1Mode::Canonical => {
            let x_pinv = linalg::pinv(&data.x);
            let acl = &phi * &x_pinv;
            if !linalg::is_hurwitz(&acl) {
                return Err(Error::Numerical(
                    "the minimum-norm right inverse does not stabilize the data closed loop".into(),
                ));
            }
            let p = linalg::lyapunov(&acl, &DMatrix::identity(n, n))?;
            LmiSolution { theta: &x_pinv * &p, p, residual: 0.0, iterations: 0 }
        }
    };
    let p_inv = sol.p.clone().try_inverse().ok_or_else(|| Error::Numerical("X theta is singular".into()))?;
    let k1 = &data.u * &sol.theta * &p_inv;
    let closed_loop_max_re = linalg::max_real_eig(&(&phi * &sol.theta * &p_inv));
    if closed_loop_max_re >= 0.0 {
        return Err(Error::Numerical(format!(
            "certified point yields a data closed loop with max real part {closed_loop_max_re}"
        )));
    }
    Ok(ExactK1 {
        k1,
        certificate: K1Certificate::Exact {
            theta: sol.theta.clone(),
            p: sol.p,
            lmi_residual: sol.residual,
            lmi_iterations: sol.iterations,
            closed_loop_max_re,
        },
        theta: sol.theta,
    })
}

/// Rank of the data pencil at one exosystem eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PencilRank {
    pub lambda: (f64, f64),
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionZeroReport {
    pub ok: bool,
    pub required: usize,
    pub ranks: Vec<PencilRank>,
}

/// Rank of `[Phi - lambda X; err - F V]` at each eigenvalue of `S`
/// (conjugate pairs once); full rank `n + p` everywhere is required.
pub fn transmission_zero_check(
    data: &AgentData,
    exo: &ExoSpec,
    diff: &DiffOperator,
    opts: &SynthesisOptions,
) -> TransmissionZeroReport {
    let required = data.n() + data.p();
    let fail = TransmissionZeroReport { ok: false, required, ranks: Vec::new() };
    if data.validate().is_err() || exo.q() != data.q() {
        return fail;
    }
    let Ok(phi) = data.phi(diff) else { return fail };
    let g = data.output_data();
    let mut ranks = Vec::new();
    for (re, im) in exo.spectrum() {
        if im < 0.0 {
            continue;
        }
        let real = linalg::vstack(&[&(&phi - &data.x * re), &g]);
        let imag = linalg::vstack(&[&(&data.x * -im), &DMatrix::zeros(g.nrows(), g.ncols())]);
        let tol = opts.rank_tol.map(|r| r * linalg::spectral_norm(&linalg::hstack(&[&real, &imag])));
        ranks.push(PencilRank { lambda: (re, im), rank: linalg::complex_rank(&real, &imag, tol) });
    }
    TransmissionZeroReport { ok: ranks.iter().all(|r| r.rank == required), required, ranks }
}

/// Solves `Phi M - X M S = -E`, `G M = -F` (with `G = err - F V`) in the
/// least-squares sense via Kronecker vectorisation.
pub fn solve_regulator_data(
    data: &AgentData,
    exo: &ExoSpec,
    diff: &DiffOperator,
    opts: &SynthesisOptions,
) -> Result<RegulatorCertificate> {
    data.validate()?;
    if exo.q() != data.q() {
        return Err(Error::Dimension(format!("exosystem order {} but data have q = {}", exo.q(), data.q())));
    }
    let phi = data.phi(diff)?;
    let m = solve_sylvester_pair(&phi, &data.x, &exo.s, &data.e_mat, &data.output_data(), &data.f_mat, opts)?;
    let pi = &data.x * &m.0;
    let gamma = &data.u * &m.0;
    Ok(RegulatorCertificate { m: m.0, pi, gamma, residual: m.1 })
}

/// Least-squares solution of `a M - x M s = -e`, `g M = -f`; fails if the
/// relative residual exceeds the tolerance.
fn solve_sylvester_pair(
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    s: &DMatrix<f64>,
    e: &DMatrix<f64>,
    g: &DMatrix<f64>,
    f: &DMatrix<f64>,
    opts: &SynthesisOptions,
) -> Result<(DMatrix<f64>, f64)> {
    let q = s.nrows();
    let k = a.ncols();
    let iq = DMatrix::<f64>::identity(q, q);
    let top = iq.kronecker(a) - s.transpose().kronecker(x);
    let bottom = iq.kronecker(g);
    let op = linalg::vstack(&[&top, &bottom]);
    let rhs = DVector::from_iterator(e.len() + f.len(), e.iter().chain(f.iter()).map(|v| -v));
    let sol = &linalg::pinv(&op) * &rhs;
    let residual = (&op * &sol - &rhs).norm() / rhs.norm().max(1.0);
    if !(residual <= opts.residual_tol) {
        return Err(Error::NotInformative(format!(
            "regulator equations have no solution from the data (relative residual {residual:.3e})"
        )));
    }
    Ok((linalg::unvec(&sol, k, q), residual))
}

/// Feedforward gain `K2 = (U - K1 X) M`.
pub fn synthesize_k2(data: &AgentData, k1: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if k1.shape() != (data.m(), data.n()) {
        return Err(Error::Dimension(format!("K1 is {:?}, expected ({}, {})", k1.shape(), data.m(), data.n())));
    }
    if m.nrows() != data.cols() {
        return Err(Error::Dimension(format!("M has {} rows, expected {}", m.nrows(), data.cols())));
    }
    Ok((&data.u - k1 * &data.x) * m)
}

/// Regulator for output synchronisation with a leader known only through
/// its state data `X0` and output data `Y0`:
/// `X d11 M = X M (X0 d11 X0^+)`, `Y M = Y0 X0^+`, with `Y = err + Y0`.
pub fn output_sync_regulator(
    follower: &AgentData,
    leader_x0: &ChebSeries,
    leader_y0: &ChebSeries,
    diff: &DiffOperator,
    opts: &SynthesisOptions,
) -> Result<RegulatorCertificate> {
    follower.validate()?;
    let k = follower.cols();
    if leader_x0.degree() + 1 != k || leader_y0.degree() + 1 != k {
        return Err(Error::Dimension("leader data must have as many coefficients as the follower data".into()));
    }
    if leader_y0.dim() != follower.p() {
        return Err(Error::Dimension("leader output dimension differs from the follower's".into()));
    }
    let x0 = leader_x0.coeffs();
    let rank = opts.rank(x0);
    if rank < x0.nrows() {
        return Err(Error::NotInformative(format!(
            "leader state data have rank {rank} < {}; the leader dynamics cannot be recovered",
            x0.nrows()
        )));
    }
    let (t0, t1) = leader_x0.interval();
    let x0_pinv = linalg::pinv(x0);
    let s0 = x0 * diff.d11() * chain_factor(t0, t1) * &x0_pinv;
    let a = &follower.x * follower.scaled_d11(diff)?;
    let y = &follower.err + leader_y0.coeffs();
    let target = leader_y0.coeffs() * &x0_pinv;
    let n = follower.n();
    let (m, residual) =
        solve_sylvester_pair(&a, &follower.x, &s0, &DMatrix::zeros(n, s0.nrows()), &y, &(-target), opts)?;
    let pi = &follower.x * &m;
    let gamma = &follower.u * &m;
    Ok(RegulatorCertificate { m, pi, gamma, residual })
}
