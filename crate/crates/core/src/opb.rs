//! Chebyshev encoding of trajectories.
//!
//! A signal `f: [t0, t1] -> R^d` is represented by the coefficient matrix of
//! its expansion in Chebyshev polynomials `C_k(tau)`, where `tau` is the affine
//! image of `t` on `[-1, 1]`. Column `k` holds the coefficient vector of `C_k`,
//! so a `d`-dimensional signal truncated at degree `N` is a `d x (N+1)` matrix.
//! In this layout differentiation is right-multiplication by the operator
//! returned from [`cheb_diff_operator`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default truncation degree (16 coefficients).
pub const DEFAULT_DEGREE: usize = 15;

/// Node-matching tolerance used to recognise Chebyshev–Gauss–Lobatto samples.
const CGL_MATCH_TOL: f64 = 1e-12;

/// Truncated Chebyshev series of a vector-valued signal on `[t0, t1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebSeries {
    coeffs: DMatrix<f64>,
    t0: f64,
    t1: f64,
}

impl ChebSeries {
    pub fn new(coeffs: DMatrix<f64>, t0: f64, t1: f64) -> Result<Self> {
        check_interval(t0, t1)?;
        if coeffs.ncols() == 0 {
            return Err(Error::InvalidInput("a series needs at least one coefficient".into()));
        }
        Ok(Self { coeffs, t0, t1 })
    }

    /// Zero series of the given dimension and degree.
    pub fn zeros(dim: usize, degree: usize, t0: f64, t1: f64) -> Result<Self> {
        Self::new(DMatrix::zeros(dim, degree + 1), t0, t1)
    }

    pub fn coeffs(&self) -> &DMatrix<f64> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DMatrix<f64> {
        self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.ncols() - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    /// Evaluates the series at time `t`; extrapolation is rejected.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let tau = map_interval(t, self.t0, self.t1)?;
        let slack = 1e-12;
        if !(-1.0 - slack..=1.0 + slack).contains(&tau) {
            return Err(Error::OutOfInterval { t, t0: self.t0, t1: self.t1 });
        }
        Ok(self.eval_tau(tau.clamp(-1.0, 1.0)))
    }

    /// Clenshaw evaluation at a point of the reference interval.
    pub fn eval_tau(&self, tau: f64) -> DVector<f64> {
        DVector::from_fn(self.dim(), |r, _| clenshaw(self.coeffs.row(r).iter().cloned(), tau))
    }

    /// Keeps the first `degree + 1` coefficients (zero-padding if needed).
    pub fn truncate(&self, degree: usize) -> ChebSeries {
        let mut c = DMatrix::zeros(self.dim(), degree + 1);
        let keep = (degree + 1).min(self.coeffs.ncols());
        c.view_mut((0, 0), (self.dim(), keep)).copy_from(&self.coeffs.view((0, 0), (self.dim(), keep)));
        ChebSeries { coeffs: c, t0: self.t0, t1: self.t1 }
    }

    /// Coefficients of index `> degree` (the truncation tail).
    pub fn tail(&self, degree: usize) -> DMatrix<f64> {
        let total = self.coeffs.ncols();
        if total <= degree + 1 {
            return DMatrix::zeros(self.dim(), 0);
        }
        self.coeffs.columns(degree + 1, total - degree - 1).into_owned()
    }
}

fn clenshaw(coeffs: impl DoubleEndedIterator<Item = f64>, tau: f64) -> f64 {
    let c: Vec<f64> = coeffs.collect();
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for k in (1..c.len()).rev() {
        let b0 = c[k] + 2.0 * tau * b1 - b2;
        b2 = b1;
        b1 = b0;
    }
    c.first().cloned().unwrap_or(0.0) + tau * b1 - b2
}

fn check_interval(t0: f64, t1: f64) -> Result<()> {
    if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
        return Err(Error::DegenerateInterval { t0, t1 });
    }
    Ok(())
}

/// Affine map of `[t0, t1]` onto `[-1, 1]`.
pub fn map_interval(t: f64, t0: f64, t1: f64) -> Result<f64> {
    check_interval(t0, t1)?;
    Ok((2.0 * t - (t1 + t0)) / (t1 - t0))
}

/// Inverse of [`map_interval`].
pub fn unmap_interval(tau: f64, t0: f64, t1: f64) -> f64 {
    0.5 * (tau * (t1 - t0) + t1 + t0)
}

/// `d tau / d t` for the interval map.
pub fn chain_factor(t0: f64, t1: f64) -> f64 {
    2.0 / (t1 - t0)
}

/// Chebyshev–Gauss–Lobatto nodes `cos(j pi / N)`, `j = 0..=N`, on `[-1, 1]`.
pub fn cgl_nodes(degree: usize) -> Vec<f64> {
    if degree == 0 {
        return vec![0.0];
    }
    (0..=degree).map(|j| (PI * j as f64 / degree as f64).cos()).collect()
}

/// CGL nodes mapped onto `[t0, t1]`.
pub fn cgl_times(degree: usize, t0: f64, t1: f64) -> Vec<f64> {
    cgl_nodes(degree).into_iter().map(|tau| unmap_interval(tau, t0, t1)).collect()
}

/// Fits a degree-`degree` series to samples on `[t0, t1]`.
///
/// Samples sitting exactly on the `degree + 1` CGL nodes (in any order) are
/// transformed with the discrete cosine transform, which interpolates; any
/// other sample set is fitted by least squares.
pub fn fit_series(samples: &[(f64, DVector<f64>)], degree: usize, t0: f64, t1: f64) -> Result<ChebSeries> {
    check_interval(t0, t1)?;
    let needed = degree + 1;
    if samples.len() < needed {
        return Err(Error::TooFewSamples { needed, got: samples.len() });
    }
    let dim = samples[0].1.len();
    if samples.iter().any(|(_, v)| v.len() != dim) {
        return Err(Error::Dimension("samples have differing dimensions".into()));
    }
    let span = t1 - t0;
    let mut taus = Vec::with_capacity(samples.len());
    for (t, _) in samples {
        if *t < t0 - 1e-12 * span || *t > t1 + 1e-12 * span {
            return Err(Error::OutOfInterval { t: *t, t0, t1 });
        }
        taus.push(map_interval(*t, t0, t1)?.clamp(-1.0, 1.0));
    }

    if let Some(order) = match_cgl(&taus, degree) {
        let values: Vec<&DVector<f64>> = order.iter().map(|&i| &samples[i].1).collect();
        return ChebSeries::new(cosine_transform(&values, degree, dim), t0, t1);
    }

    // Least squares on the Chebyshev–Vandermonde matrix.
    let m = samples.len();
    let mut vander = DMatrix::zeros(m, needed);
    for (i, &tau) in taus.iter().enumerate() {
        let mut prev = 1.0;
        let mut cur = tau;
        vander[(i, 0)] = 1.0;
        if needed > 1 {
            vander[(i, 1)] = tau;
        }
        for k in 2..needed {
            let next = 2.0 * tau * cur - prev;
            vander[(i, k)] = next;
            prev = cur;
            cur = next;
        }
    }
    let rank = linalg::numerical_rank(&vander, Some(1e-10 * linalg::spectral_norm(&vander)));
    if rank < needed {
        return Err(Error::RankDeficient(format!("sample times support rank {rank} < {needed} coefficients")));
    }
    let rhs = DMatrix::from_fn(m, dim, |i, r| samples[i].1[r]);
    let sol = vander.svd(true, true).solve(&rhs, 0.0).map_err(|e| Error::Numerical(e.to_string()))?;
    ChebSeries::new(sol.transpose(), t0, t1)
}

/// Returns, for each CGL node `j`, the index of the sample lying on it.
fn match_cgl(taus: &[f64], degree: usize) -> Option<Vec<usize>> {
    if taus.len() != degree + 1 {
        return None;
    }
    let nodes = cgl_nodes(degree);
    let mut order = Vec::with_capacity(nodes.len());
    let mut used = vec![false; taus.len()];
    for node in nodes {
        let hit = taus.iter().enumerate().find(|(i, &tau)| !used[*i] && (tau - node).abs() <= CGL_MATCH_TOL)?;
        used[hit.0] = true;
        order.push(hit.0);
    }
    Some(order)
}

/// Type-I discrete cosine transform of values sampled at `cos(j pi / N)`.
fn cosine_transform(values: &[&DVector<f64>], degree: usize, dim: usize) -> DMatrix<f64> {
    let n = degree;
    let mut out = DMatrix::zeros(dim, n + 1);
    if n == 0 {
        out.set_column(0, values[0]);
        return out;
    }
    for k in 0..=n {
        for (j, v) in values.iter().enumerate() {
            let mut w = (PI * (j * k) as f64 / n as f64).cos();
            if j == 0 || j == n {
                w *= 0.5;
            }
            for r in 0..dim {
                out[(r, k)] += w * v[r];
            }
        }
        let mut scale = 2.0 / n as f64;
        if k == 0 || k == n {
            scale *= 0.5;
        }
        for r in 0..dim {
            out[(r, k)] *= scale;
        }
    }
    out
}

/// Fits `f` by sampling it at the CGL nodes of `[t0, t1]`.
pub fn fit_function<F>(f: F, degree: usize, t0: f64, t1: f64) -> Result<ChebSeries>
where
    F: Fn(f64) -> DVector<f64>,
{
    let samples: Vec<(f64, DVector<f64>)> = cgl_times(degree, t0, t1).into_iter().map(|t| (t, f(t))).collect();
    fit_series(&samples, degree, t0, t1)
}

/// Chebyshev differentiation operator with its 2x2 partition.
///
/// Row `k` of `full` holds the Chebyshev coefficients of `d C_k / d tau`.
/// The partition splits at `block = N + 1`: `d11` maps the kept coefficients
/// onto the kept derivative coefficients, `d21` maps the truncation tail onto
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffOperator {
    full: DMatrix<f64>,
    block: usize,
}

impl DiffOperator {
    /// Operator for degree `n` sized `2 (n + 1)`.
    pub fn for_degree(n: usize) -> Self {
        cheb_diff_operator(2 * (n + 1), n + 1).expect("sizes are valid by construction")
    }

    pub fn full(&self) -> &DMatrix<f64> {
        &self.full
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn degree(&self) -> usize {
        self.block - 1
    }

    pub fn size(&self) -> usize {
        self.full.nrows()
    }

    pub fn d11(&self) -> DMatrix<f64> {
        self.full.view((0, 0), (self.block, self.block)).into_owned()
    }

    pub fn d12(&self) -> DMatrix<f64> {
        let s = self.size();
        self.full.view((0, self.block), (self.block, s - self.block)).into_owned()
    }

    pub fn d21(&self) -> DMatrix<f64> {
        let s = self.size();
        self.full.view((self.block, 0), (s - self.block, self.block)).into_owned()
    }

    pub fn d22(&self) -> DMatrix<f64> {
        let s = self.size();
        self.full.view((self.block, self.block), (s - self.block, s - self.block)).into_owned()
    }
}

/// Builds the `size x size` Chebyshev differentiation operator partitioned
/// after the first `block` rows and columns.
///
/// Entry `(k, j)` is `k` for `j = 0` and `2k` for `0 < j < k`, whenever
/// `k - j` is odd; all other entries vanish.
pub fn cheb_diff_operator(size: usize, block: usize) -> Result<DiffOperator> {
    if size < 2 || block < 2 || block > size {
        return Err(Error::InvalidInput(format!(
            "differentiation operator needs size >= block >= 2 (got size {size}, block {block})"
        )));
    }
    let full = DMatrix::from_fn(size, size, |k, j| {
        if j >= k || (k - j) % 2 == 0 {
            0.0
        } else if j == 0 {
            k as f64
        } else {
            2.0 * k as f64
        }
    });
    Ok(DiffOperator { full, block })
}

/// Coefficients of `d/dt` of the truncated series: `coeffs * d11 * 2/(t1-t0)`.
pub fn differentiate_coeffs(series: &ChebSeries, op: &DiffOperator) -> Result<ChebSeries> {
    if op.block() != series.degree() + 1 {
        return Err(Error::Dimension(format!(
            "operator block {} does not match series with {} coefficients",
            op.block(),
            series.degree() + 1
        )));
    }
    let (t0, t1) = series.interval();
    let d = series.coeffs() * op.d11() * chain_factor(t0, t1);
    ChebSeries::new(d, t0, t1)
}

/// Repeated differentiation with respect to the reference variable `tau`.
fn differentiate_tau(coeffs: &DMatrix<f64>, times: usize) -> DMatrix<f64> {
    let n = coeffs.ncols();
    if n < 2 {
        return DMatrix::zeros(coeffs.nrows(), n);
    }
    let op = cheb_diff_operator(n, n).expect("n >= 2");
    let d = op.d11();
    let mut c = coeffs.clone();
    for _ in 0..times {
        c = &c * &d;
    }
    c
}

/// Lemma-type bound on the truncation noise of a Chebyshev derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBound {
    /// Total variation of the second derivative.
    pub v_f2: f64,
    /// Truncation degree.
    pub n: usize,
    /// Squared bound `c = (2 v_f2 / (sqrt(pi) (n - 1)))^2`.
    pub c: f64,
}

impl NoiseBound {
    /// Bound on `|| tail * d21 ||_2`, i.e. `sqrt(c)`.
    pub fn norm_bound(&self) -> f64 {
        self.c.sqrt()
    }
}

pub fn truncation_noise_bound(v_f2: f64, n: usize) -> Result<NoiseBound> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("truncation degree must be >= 2, got {n}")));
    }
    if !(v_f2 >= 0.0 && v_f2.is_finite()) {
        return Err(Error::InvalidInput(format!("total variation must be finite and >= 0, got {v_f2}")));
    }
    let b = 2.0 * v_f2 / (PI.sqrt() * (n as f64 - 1.0));
    Ok(NoiseBound { v_f2, n, c: b * b })
}

/// Total variation of the second `tau`-derivative of each row of the series,
/// `int_{-1}^{1} |g'''(tau)| d tau`, by composite Gauss–Legendre quadrature.
pub fn second_derivative_variation(series: &ChebSeries) -> Vec<f64> {
    const PANELS: usize = 512;
    // 5-point Gauss–Legendre rule.
    const X: [f64; 5] =
        [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let third = differentiate_tau(series.coeffs(), 3);
    let h = 2.0 / PANELS as f64;
    (0..series.dim())
        .map(|r| {
            let row: Vec<f64> = third.row(r).iter().cloned().collect();
            let mut acc = 0.0;
            for p in 0..PANELS {
                let mid = -1.0 + (p as f64 + 0.5) * h;
                for (x, w) in X.iter().zip(W.iter()) {
                    acc += w * clenshaw(row.iter().cloned(), mid + 0.5 * h * x).abs();
                }
            }
            acc * 0.5 * h
        })
        .collect()
}

/// `|| tail * d21 ||_2` in `tau` units: the coefficients beyond `degree` of
/// `reference`, pushed through the lower-left block of the differentiation
/// operator.
pub fn tail_derivative_norm(reference: &ChebSeries, degree: usize) -> f64 {
    let total = reference.degree() + 1;
    if total <= degree + 1 {
        return 0.0;
    }
    let op = cheb_diff_operator(total, degree + 1).expect("sizes checked");
    let prod = reference.tail(degree) * op.d21();
    linalg::spectral_norm(&prod)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(f: impl Fn(f64) -> f64) -> impl Fn(f64) -> DVector<f64> {
        move |t| DVector::from_element(1, f(t))
    }

    #[test]
    fn diff_operator_rows_match_chebyshev_derivatives() {
        let op = cheb_diff_operator(8, 4).unwrap();
        let f = op.full();
        assert!(f.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(f[(1, 0)], 1.0);
        assert_eq!((f[(2, 0)], f[(2, 1)]), (0.0, 4.0));
        assert_eq!((f[(3, 0)], f[(3, 1)], f[(3, 2)]), (3.0, 0.0, 6.0));
        assert_eq!((f[(4, 1)], f[(4, 3)]), (8.0, 8.0));
        assert_eq!((f[(5, 0)], f[(5, 2)], f[(5, 4)]), (5.0, 10.0, 10.0));
        assert_eq!(op.d11().shape(), (4, 4));
        assert_eq!(op.d21().shape(), (4, 4));
        assert_eq!(op.d21()[(1, 0)], 5.0);
        assert_eq!(op.d21()[(0, 0)], 0.0);
    }

    #[test]
    fn diff_operator_rejects_small_sizes() {
        assert!(cheb_diff_operator(1, 1).is_err());
        assert!(cheb_diff_operator(4, 5).is_err());
    }

    #[test]
    fn interval_map_endpoints_and_midpoint() {
        assert_eq!(map_interval(2.0, 2.0, 5.0).unwrap(), -1.0);
        assert_eq!(map_interval(5.0, 2.0, 5.0).unwrap(), 1.0);
        assert_eq!(map_interval(3.5, 2.0, 5.0).unwrap(), 0.0);
        assert_eq!(map_interval(0.5, 0.0, 2.0).unwrap(), -0.5);
        assert!(matches!(map_interval(0.0, 1.0, 1.0), Err(Error::DegenerateInterval { .. })));
        assert!(map_interval(0.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn fit_constant_and_identity() {
        let c = fit_function(scalar(|_| 5.0), 6, -1.0, 1.0).unwrap();
        assert!((c.coeffs()[(0, 0)] - 5.0).abs() < 1e-14);
        assert!(c.coeffs().columns(1, 6).iter().all(|v| v.abs() < 1e-14));
        let id = fit_function(scalar(|t| t), 6, -1.0, 1.0).unwrap();
        assert!(id.coeffs()[(0, 0)].abs() < 1e-14);
        assert!((id.coeffs()[(0, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn fit_rejects_too_few_and_collinear_samples() {
        let s = vec![(0.0, DVector::from_element(1, 1.0)); 2];
        assert!(matches!(fit_series(&s, 3, -1.0, 1.0), Err(Error::TooFewSamples { .. })));
        let dup = vec![(0.1, DVector::from_element(1, 1.0)); 5];
        assert!(matches!(fit_series(&dup, 3, -1.0, 1.0), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn least_squares_path_recovers_polynomial() {
        // 3 t^2 - t + 2 = 3.5 C0 - C1 + 1.5 C2 sampled at uniform times.
        let samples: Vec<_> = (0..11)
            .map(|i| {
                let t = -1.0 + 0.2 * i as f64;
                (t, DVector::from_element(1, 3.0 * t * t - t + 2.0))
            })
            .collect();
        let s = fit_series(&samples, 4, -1.0, 1.0).unwrap();
        let expect = [3.5, -1.0, 1.5, 0.0, 0.0];
        for (k, e) in expect.iter().enumerate() {
            assert!((s.coeffs()[(0, k)] - e).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn eval_examples() {
        let s = ChebSeries::new(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), -1.0, 1.0).unwrap();
        assert!((s.eval(0.3).unwrap()[0] - 0.3).abs() < 1e-15);
        let s = ChebSeries::new(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 1.0]), -1.0, 1.0).unwrap();
        assert!((s.eval(1.0).unwrap()[0] - 2.0).abs() < 1e-15);
        assert!(matches!(s.eval(1.5), Err(Error::OutOfInterval { .. })));
    }

    #[test]
    fn exp_fit_evaluates_to_one_at_origin() {
        let s = fit_function(scalar(|t| (-t).exp()), 15, -1.0, 1.0).unwrap();
        assert!((s.eval(0.0).unwrap()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn differentiate_examples() {
        let op = DiffOperator::for_degree(2);
        let sq = ChebSeries::new(DMatrix::from_row_slice(1, 3, &[0.5, 0.0, 0.5]), -1.0, 1.0).unwrap();
        let d = differentiate_coeffs(&sq, &op).unwrap();
        assert_eq!(d.coeffs().as_slice(), &[0.0, 2.0, 0.0]);
        let c = ChebSeries::new(DMatrix::from_row_slice(1, 3, &[4.0, 0.0, 0.0]), -1.0, 1.0).unwrap();
        assert!(differentiate_coeffs(&c, &op).unwrap().coeffs().iter().all(|&v| v == 0.0));
        assert!(differentiate_coeffs(&c, &DiffOperator::for_degree(3)).is_err());

        let e = fit_function(scalar(|t| (-t).exp()), 15, -1.0, 1.0).unwrap();
        let de = differentiate_coeffs(&e, &DiffOperator::for_degree(15)).unwrap();
        assert!((de.eval(0.0).unwrap()[0] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn chain_rule_on_general_interval() {
        // f(t) = t^2 on [1, 3]; f'(2) = 4.
        let s = fit_function(scalar(|t| t * t), 4, 1.0, 3.0).unwrap();
        let d = differentiate_coeffs(&s, &DiffOperator::for_degree(4)).unwrap();
        assert!((d.eval(2.0).unwrap()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn noise_bound_examples() {
        assert_eq!(truncation_noise_bound(0.0, 5).unwrap().c, 0.0);
        assert!(truncation_noise_bound(1.0, 1).is_err());
        assert!(truncation_noise_bound(-1.0, 4).is_err());
        let v = std::f64::consts::E - (-1.0f64).exp();
        let b = truncation_noise_bound(v, 16).unwrap();
        assert!((b.norm_bound() - 0.1768).abs() < 5e-5);
    }

    #[test]
    fn variation_of_exponential() {
        let s = fit_function(scalar(|t| (-t).exp()), 30, -1.0, 1.0).unwrap();
        let v = second_derivative_variation(&s)[0];
        assert!((v - (std::f64::consts::E - (-1.0f64).exp())).abs() < 1e-9);
    }
}
