//! Synthesis from coefficient data corrupted by truncation noise.
//!
//! The noisy data satisfy `Phi = A X + B U + W` with `W W^T <= c I`. Every
//! `(A, B)` compatible with this description lies in a matrix ellipsoid
//! described by the quadratic form `N` below; gains are certified for the
//! whole set.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::exact::{sym_basis, SynthesisOptions};
use super::types::{AgentData, ExoSpec, K1Certificate};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lmi::{self, AffineLMI, LmiStatus, Sense};
use crate::opb::DiffOperator;

/// Quadratic description of the systems consistent with noisy data:
/// `[I A B] N [I A B]^T >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseQuadratic {
    #[serde(with = "crate::matrix_serde")]
    pub n_mat: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    pub c: f64,
}

impl NoiseQuadratic {
    pub fn n11(&self) -> DMatrix<f64> {
        self.n_mat.view((0, 0), (self.n, self.n)).into_owned()
    }

    pub fn n12(&self) -> DMatrix<f64> {
        self.n_mat.view((0, self.n), (self.n, self.n + self.m)).into_owned()
    }

    pub fn n22(&self) -> DMatrix<f64> {
        let k = self.n + self.m;
        self.n_mat.view((self.n, self.n), (k, k)).into_owned()
    }

    /// `[I A B] N [I A B]^T`.
    pub fn evaluate(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let row = linalg::hstack(&[&DMatrix::identity(self.n, self.n), a, b]);
        linalg::symmetrize(&(&row * &self.n_mat * row.transpose()))
    }
}

/// Builds `N = [[c I - Phi Phi^T, Phi Psi^T], [Psi Phi^T, -Psi Psi^T]]` with
/// `Psi = [X; U]`.
pub fn build_noise_quadratic(data: &AgentData, diff: &DiffOperator) -> Result<NoiseQuadratic> {
    data.validate()?;
    let c = data.noise_c.ok_or_else(|| Error::InvalidInput("noise quadratic requires a noise level c".into()))?;
    let phi = data.phi(diff)?;
    let psi = data.xu();
    let (n, m) = (data.n(), data.m());
    let n11 = DMatrix::identity(n, n) * c - &phi * phi.transpose();
    let n12 = &phi * psi.transpose();
    let n22 = -(&psi * psi.transpose());
    let n_mat = linalg::symmetrize(&linalg::vstack(&[
        &linalg::hstack(&[&n11, &n12]),
        &linalg::hstack(&[&n12.transpose(), &n22]),
    ]));
    // N22 = -Psi Psi^T is negative semidefinite by construction; the kernel of
    // N22 must lie in the kernel of N12.
    let ker = linalg::null_space(&psi.transpose());
    if ker.ncols() > 0 {
        let leak = (&n12 * &ker).amax();
        if leak > 1e-9 * (1.0 + n12.amax()) {
            return Err(Error::NotInformative(format!(
                "kernel of the data Gram matrix is not contained in the kernel of the cross term (leak {leak:.3e})"
            )));
        }
    }
    Ok(NoiseQuadratic { n_mat, n, m, c })
}

/// Whether a strictly consistent system was exhibited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SlaterCheck {
    /// The witness satisfies the quadratic form strictly.
    Verified { min_eig: f64 },
    /// The witness does not satisfy it strictly.
    Violated { min_eig: f64 },
    /// No witness available; the condition is assumed.
    Assumed,
}

/// Gain certified for every system consistent with the noisy data.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyK1 {
    pub k1: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub slater: SlaterCheck,
    pub certificate: K1Certificate,
}

/// Solves for `P > 0`, `J`, `alpha >= 0`, `beta > 0` with
/// `[[-beta I, -P, -J^T], [-P, 0, 0], [-J, 0, 0]] - alpha N >= 0`; then
/// `K1 = J P^-1`.
///
/// `witness` is a system known to generate the data, used to check the
/// strict-feasibility hypothesis of the multiplier argument.
pub fn synthesize_k1_noisy(
    nq: &NoiseQuadratic,
    witness: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
    opts: &SynthesisOptions,
) -> Result<NoisyK1> {
    let (n, m) = (nq.n, nq.m);
    let slater = match witness {
        Some((a, b)) => {
            if a.shape() != (n, n) || b.shape() != (n, m) {
                return Err(Error::Dimension("witness system does not match the data".into()));
            }
            let min_eig = linalg::min_sym_eig(&nq.evaluate(a, b));
            if min_eig > 0.0 {
                SlaterCheck::Verified { min_eig }
            } else {
                SlaterCheck::Violated { min_eig }
            }
        }
        None => SlaterCheck::Assumed,
    };

    let size = 2 * n + m;
    let p_basis = sym_basis(n);
    let np = p_basis.len();
    let nj = m * n;
    let (ia, ib) = (np + nj, np + nj + 1);
    let mut lmi = AffineLMI::new(np + nj + 2);
    let mut main = Vec::with_capacity(np + nj + 2);
    let mut pos = Vec::with_capacity(np);
    for (k, e) in p_basis.iter().enumerate() {
        let mut blk = DMatrix::zeros(size, size);
        blk.view_mut((0, n), (n, n)).copy_from(&(-e));
        blk.view_mut((n, 0), (n, n)).copy_from(&(-e));
        main.push((k, blk));
        pos.push((k, e.clone()));
    }
    for r in 0..m {
        for col in 0..n {
            let mut blk = DMatrix::zeros(size, size);
            // J = e_r e_col^T sits in the (3,1) block and J^T in (1,3).
            blk[(2 * n + r, col)] = -1.0;
            blk[(col, 2 * n + r)] = -1.0;
            main.push((np + r * n + col, blk));
        }
    }
    main.push((ia, -nq.n_mat.clone()));
    let mut beta_blk = DMatrix::zeros(size, size);
    beta_blk.view_mut((0, 0), (n, n)).fill_with_identity();
    main.push((ib, -beta_blk));
    lmi.add_block(DMatrix::zeros(size, size), main, Sense::Psd)?;
    lmi.add_block(DMatrix::zeros(n, n), pos, Sense::PsdStrict(opts.margin))?;
    lmi.add_lower_bound(ia, 0.0, Sense::Psd)?;
    lmi.add_lower_bound(ib, opts.beta_floor, Sense::Psd)?;
    let cert = lmi::solve_feasibility(&lmi, opts.max_iter, opts.tol)?;
    match cert.status {
        LmiStatus::Feasible => {}
        LmiStatus::InfeasibleEvidence => {
            return Err(Error::NotInformative("noisy data do not admit a common quadratic Lyapunov gain".into()))
        }
        LmiStatus::MaxIter => {
            return Err(Error::Numerical(format!(
                "quadratic stabilization LMI not certified after {} iterations (residual {:.3e})",
                cert.iterations, cert.residual
            )))
        }
    }
    let mut p = DMatrix::zeros(n, n);
    for (k, e) in p_basis.iter().enumerate() {
        p += e * cert.z[k];
    }
    let j = DMatrix::from_fn(m, n, |r, col| cert.z[np + r * n + col]);
    let p_inv = p.clone().try_inverse().ok_or_else(|| Error::Numerical("P is singular".into()))?;
    let k1 = &j * p_inv;
    let (alpha, beta) = (cert.z[ia], cert.z[ib]);
    Ok(NoisyK1 {
        k1,
        certificate: K1Certificate::Noisy {
            p: p.clone(),
            j: j.clone(),
            alpha,
            beta,
            lmi_residual: cert.residual,
            lmi_iterations: cert.iterations,
        },
        p,
        j,
        alpha,
        beta,
        slater,
    })
}

/// The two norms of the disturbance bound at a given `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaBound {
    /// Evaluated with spectral norms.
    pub two_norm: f64,
    /// Evaluated with Frobenius norms (the optimised surrogate).
    pub frobenius: f64,
}

struct RegulatorTerms {
    /// `Psi^+`.
    psi_pinv: DMatrix<f64>,
    /// `Phi Psi^+`.
    phi_psi_pinv: DMatrix<f64>,
    /// `X Psi^+`.
    x_psi_pinv: DMatrix<f64>,
    /// `(err - F V) Psi^+`.
    g_psi_pinv: DMatrix<f64>,
    sqrt_c: f64,
}

fn regulator_terms(data: &AgentData, diff: &DiffOperator) -> Result<RegulatorTerms> {
    let psi = data.xu();
    let psi_pinv = linalg::pinv(&psi);
    let phi = data.phi(diff)?;
    Ok(RegulatorTerms {
        phi_psi_pinv: &phi * &psi_pinv,
        x_psi_pinv: &data.x * &psi_pinv,
        g_psi_pinv: data.output_data() * &psi_pinv,
        psi_pinv,
        sqrt_c: data.noise_c.unwrap_or(0.0).sqrt(),
    })
}

/// Bound `||Phi Psi^+ Psi M + E - X M S|| + sqrt(c) ||Psi^+ Psi M||` on the
/// disturbance left by an approximate regulator `M`.
pub fn omega_bound(data: &AgentData, m: &DMatrix<f64>, exo: &ExoSpec, diff: &DiffOperator) -> Result<OmegaBound> {
    data.validate()?;
    if m.shape() != (data.cols(), data.q()) || exo.q() != data.q() {
        return Err(Error::Dimension(format!("M is {:?}, expected ({}, {})", m.shape(), data.cols(), data.q())));
    }
    let t = regulator_terms(data, diff)?;
    let z = data.xu() * m;
    let r1 = &t.phi_psi_pinv * &z + &data.e_mat - &data.x * m * &exo.s;
    let mp = &t.psi_pinv * &z;
    Ok(OmegaBound {
        two_norm: linalg::spectral_norm(&r1) + t.sqrt_c * linalg::spectral_norm(&mp),
        frobenius: r1.norm() + t.sqrt_c * mp.norm(),
    })
}

/// Approximate regulator for noisy data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxRegulator {
    #[serde(with = "crate::matrix_serde")]
    pub m: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub pi: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub gamma: DMatrix<f64>,
    pub omega: OmegaBound,
    /// Relative residual of the output constraint.
    pub constraint_residual: f64,
    pub iterations: usize,
}

/// Minimises the Frobenius-norm objective
/// `||Phi Psi^+ Psi M + E - X M S||_F + sqrt(c) ||Psi^+ Psi M||_F`
/// subject to `(err - F V) M = -F`.
///
/// Only `Z = Psi M` enters the problem, so the search runs over `Z` with
/// `M = Psi^+ Z`. The sum of norms is handled by iteratively reweighted
/// least squares, each step an equality-constrained least-squares problem
/// solved through its KKT system.
pub fn approx_regulator_noisy(
    data: &AgentData,
    exo: &ExoSpec,
    diff: &DiffOperator,
    opts: &SynthesisOptions,
) -> Result<ApproxRegulator> {
    const MAX_ROUNDS: usize = 500;
    const WEIGHT_FLOOR: f64 = 1e-14;

    data.validate()?;
    if exo.q() != data.q() {
        return Err(Error::Dimension(format!("exosystem order {} but data have q = {}", exo.q(), data.q())));
    }
    let psi = data.xu();
    let rank = opts.rank(&psi);
    if rank < psi.nrows() {
        return Err(Error::NotInformative(format!("stacked state/input data have rank {rank} < {}", psi.nrows())));
    }
    let t = regulator_terms(data, diff)?;
    let (q, k) = (data.q(), psi.nrows());
    let iq = DMatrix::<f64>::identity(q, q);
    // vec(R1) = a1 z + b1, vec(M) = a2 z, constraint c_op z = d.
    let a1 = iq.kronecker(&t.phi_psi_pinv) - exo.s.transpose().kronecker(&t.x_psi_pinv);
    let b1 = linalg::vec_of(&data.e_mat);
    let a2 = iq.kronecker(&t.psi_pinv);
    let c_op = iq.kronecker(&t.g_psi_pinv);
    let d = -linalg::vec_of(&data.f_mat);

    let nz = k * q;
    let nc = c_op.nrows();
    let objective = |z: &nalgebra::DVector<f64>| (&a1 * z + &b1).norm() + t.sqrt_c * (&a2 * z).norm();
    let a1ta1 = a1.transpose() * &a1;
    let a2ta2 = a2.transpose() * &a2;
    let a1tb1 = a1.transpose() * &b1;
    let solve = |w1: f64, w2: f64| -> nalgebra::DVector<f64> {
        let h = &a1ta1 / w1 + &a2ta2 * (t.sqrt_c / w2);
        let g = &a1tb1 / w1;
        let mut kkt = DMatrix::zeros(nz + nc, nz + nc);
        kkt.view_mut((0, 0), (nz, nz)).copy_from(&h);
        kkt.view_mut((0, nz), (nz, nc)).copy_from(&c_op.transpose());
        kkt.view_mut((nz, 0), (nc, nz)).copy_from(&c_op);
        let mut rhs = nalgebra::DVector::zeros(nz + nc);
        rhs.rows_mut(0, nz).copy_from(&(-g));
        rhs.rows_mut(nz, nc).copy_from(&d);
        let sol = linalg::pinv(&kkt) * rhs;
        sol.rows(0, nz).into_owned()
    };

    let mut z = solve(1.0, 1.0);
    let mut value = objective(&z);
    let mut rounds = 1;
    while rounds < MAX_ROUNDS {
        let w1 = (&a1 * &z + &b1).norm().max(WEIGHT_FLOOR);
        let w2 = (&a2 * &z).norm().max(WEIGHT_FLOOR);
        let next = solve(w1, w2);
        let next_value = objective(&next);
        rounds += 1;
        let done = (value - next_value).abs() <= 1e-13 * (1.0 + value);
        if next_value <= value {
            z = next;
            value = next_value;
        }
        if done {
            break;
        }
    }
    // Extreme IRLS weights degrade the KKT solve; a minimal-norm correction
    // restores the affine constraint.
    let c_pinv = linalg::pinv(&c_op);
    z -= &c_pinv * (&c_op * &z - &d);
    let constraint_residual = (&c_op * &z - &d).norm() / d.norm().max(1.0);
    if !(constraint_residual <= opts.residual_tol) {
        return Err(Error::NotInformative(format!(
            "no M satisfies the output constraint (relative residual {constraint_residual:.3e})"
        )));
    }
    let m = &t.psi_pinv * linalg::unvec(&z, k, q);
    let omega = omega_bound(data, &m, exo, diff)?;
    Ok(ApproxRegulator { pi: &data.x * &m, gamma: &data.u * &m, m, omega, constraint_residual, iterations: rounds })
}

/// Draws systems `(A, B)` from the set consistent with noisy data.
///
/// Writing `[A B] = Phi Psi^+ + Delta`, the implied noise is
/// `W = W0 - Delta Psi` with `W0 = Phi (I - Psi^+ Psi)`, and
/// `W W^T = W0 W0^T + Delta Psi Psi^T Delta^T`. Random directions `Delta` are
/// scaled to a random fraction of the largest admissible size; a quarter of
/// the draws sit on the boundary.
pub fn sample_consistent_systems<R: Rng + ?Sized>(
    data: &AgentData,
    diff: &DiffOperator,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
    let c = data
        .noise_c
        .ok_or_else(|| Error::InvalidInput("sampling the consistency set requires a noise level".into()))?;
    let (n, m) = (data.n(), data.m());
    let psi = data.xu();
    let psi_pinv = linalg::pinv(&psi);
    let phi = data.phi(diff)?;
    let center = &phi * &psi_pinv;
    let w0 = &phi - &center * &psi;
    let base = &w0 * w0.transpose();
    let lam = |s: f64, delta: &DMatrix<f64>| {
        let dp = delta * &psi;
        linalg::symmetrize(&(&base + &dp * dp.transpose() * (s * s))).symmetric_eigenvalues().max()
    };
    if lam(0.0, &DMatrix::zeros(n, n + m)) > c {
        return Err(Error::NotInformative("data are inconsistent with the stated noise level".into()));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let delta = DMatrix::from_fn(n, n + m, |_, _| rng.sample::<f64, _>(StandardNormal));
        // Largest admissible scale by bisection on the monotone eigenvalue.
        let (mut lo, mut hi) = (0.0, 1.0);
        while lam(hi, &delta) <= c {
            hi *= 2.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if lam(mid, &delta) <= c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let frac = if i % 4 == 0 { 1.0 } else { rng.gen::<f64>() };
        let ab = &center + delta * (lo * frac);
        out.push((ab.columns(0, n).into_owned(), ab.columns(n, m).into_owned()));
    }
    Ok(out)
}
