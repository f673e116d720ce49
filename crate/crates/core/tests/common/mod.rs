//! Fixtures shared by the integration tests: the four-follower example
//! system, its graphs and independent model-based oracles.
#![allow(dead_code)]

use coopreg::graph::GraphSpec;
use coopreg::opb::DiffOperator;
use coopreg::sim::{collect_data, simulate_open_loop, InputSignal, InputTerm, NoiseMode, PlantModel, TimeSpan};
use coopreg::synthesis::{AgentData, ExoSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// Double integrator (agents 1 and 2).
pub fn plant_a() -> PlantModel {
    PlantModel {
        a: m(2, 2, &[0., 1., 0., 0.]),
        b: m(2, 1, &[0., 1.]),
        c: m(1, 2, &[1., 0.]),
        d: m(1, 1, &[0.]),
        e: DMatrix::identity(2, 2),
        f: m(1, 2, &[-1., 0.]),
    }
}

/// Saddle plant (agents 3 and 4).
pub fn plant_b() -> PlantModel {
    PlantModel {
        a: m(2, 2, &[0., 1., 1., 0.]),
        b: m(2, 1, &[1., 0.]),
        c: m(1, 2, &[0., 1.]),
        d: m(1, 1, &[0.]),
        e: DMatrix::zeros(2, 2),
        f: m(1, 2, &[-1., 0.]),
    }
}

pub fn plants() -> Vec<PlantModel> {
    vec![plant_a(), plant_a(), plant_b(), plant_b()]
}

pub fn exo_identity() -> ExoSpec {
    ExoSpec::new(DMatrix::identity(2, 2)).unwrap()
}

pub fn exo_rotation() -> ExoSpec {
    ExoSpec::new(m(2, 2, &[0., 1., -1., 0.])).unwrap()
}

pub fn exp_inputs(k: usize) -> Vec<InputSignal> {
    vec![InputSignal { terms: vec![vec![InputTerm { amp: 1.0, rate: -1.0, freq: 0.0, phase: 0.0 }]] }; k]
}

pub fn x0s(k: usize) -> Vec<DVector<f64>> {
    vec![DVector::from_vec(vec![1.0, 1.0]); k]
}

pub fn v0() -> DVector<f64> {
    DVector::from_vec(vec![0.5, 0.5])
}

fn from_l(rows: &[f64], eps1: f64, eps2: f64) -> GraphSpec {
    GraphSpec::from_laplacian(&m(5, 5, rows), eps1, eps2).unwrap()
}

pub fn graph_g1() -> GraphSpec {
    from_l(
        &[
            0., 0., 0., 0., 0., //
            -2., 2., 0., 0., 0., //
            0., -2., 4., 0., -2., //
            0., 0., -2., 4., -2., //
            0., -2., -2., 0., 4.,
        ],
        2.0,
        4.0,
    )
}

/// Follower blocks of the switching pair, with the leader weights implied by
/// the zero row sums of the full Laplacian.
pub fn graph_from_h(h: &[f64], eps1: f64, eps2: f64) -> GraphSpec {
    let hm = m(4, 4, h);
    let mut l = DMatrix::zeros(5, 5);
    l.view_mut((1, 1), (4, 4)).copy_from(&hm);
    for i in 1..5 {
        l[(i, 0)] = -hm.row(i - 1).sum();
    }
    GraphSpec::from_laplacian(&l, eps1, eps2).unwrap()
}

pub fn graph_g2() -> GraphSpec {
    graph_from_h(&[3., 0., -3., 0., -2., 4., -2., 0., 0., 0., 2., -2., 0., 0., 0., 2.], 2.0, 4.0)
}

pub fn graph_g3() -> GraphSpec {
    graph_from_h(&[3., 0., -3., 0., -2., 4., 0., -2., 0., 0., 4., -2., 0., -2., -2., 4.], 2.0, 4.0)
}

/// Model-based regulator equations `Pi S = A Pi + B Gamma + E`,
/// `0 = C Pi + D Gamma + F`, solved by Kronecker vectorisation with a plain
/// LU/QR-free normal-equation solve (independent of the library code path).
pub fn model_regulator(p: &PlantModel, s: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, mm, q) = (p.n(), p.m(), s.nrows());
    let iq = DMatrix::<f64>::identity(q, q);
    let rows = n * q + p.p() * q;
    let cols = n * q + mm * q;
    let mut op = DMatrix::zeros(rows, cols);
    // vec(A Pi - Pi S + B Gamma) = -vec(E)
    op.view_mut((0, 0), (n * q, n * q))
        .copy_from(&(iq.kronecker(&p.a) - s.transpose().kronecker(&DMatrix::<f64>::identity(n, n))));
    op.view_mut((0, n * q), (n * q, mm * q)).copy_from(&iq.kronecker(&p.b));
    op.view_mut((n * q, 0), (p.p() * q, n * q)).copy_from(&iq.kronecker(&p.c));
    op.view_mut((n * q, n * q), (p.p() * q, mm * q)).copy_from(&iq.kronecker(&p.d));
    let mut rhs = DVector::zeros(rows);
    for (k, v) in p.e.iter().enumerate() {
        rhs[k] = -v;
    }
    for (k, v) in p.f.iter().enumerate() {
        rhs[n * q + k] = -v;
    }
    let normal = op.transpose() * &op;
    let sol = normal.cholesky().expect("regulator equations have a unique solution").solve(&(op.transpose() * rhs));
    let pi = DMatrix::from_column_slice(n, q, &sol.as_slice()[..n * q]);
    let gamma = DMatrix::from_column_slice(mm, q, &sol.as_slice()[n * q..]);
    (pi, gamma)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(lo..hi))
}

/// A random single-input, single-output plant. An unstabilizable plant has
/// an unstable mode outside the reach of the input, hidden by a similarity.
pub fn random_plant(rng: &mut ChaCha8Rng, unstabilizable: bool) -> PlantModel {
    let (n, q) = if unstabilizable { (rng.gen_range(2..=3), 2) } else { (rng.gen_range(1..=3), 2) };
    let (mut a, mut b) = (uniform(rng, n, n, -1.0, 1.0), uniform(rng, n, 1, -1.0, 1.0));
    let mut c = uniform(rng, 1, n, -1.0, 1.0);
    if unstabilizable {
        a.row_mut(n - 1).fill(0.0);
        a[(n - 1, n - 1)] = rng.gen_range(0.2..0.8);
        b[(n - 1, 0)] = 0.0;
        let t = DMatrix::identity(n, n) + uniform(rng, n, n, -0.3, 0.3);
        let t_inv = t.clone().try_inverse().expect("near-identity similarity");
        a = &t * a * &t_inv;
        b = &t * b;
        c *= t_inv;
    }
    let d = if rng.gen_bool(0.5) { uniform(rng, 1, 1, -0.5, 0.5) } else { DMatrix::zeros(1, 1) };
    PlantModel { a, b, c, d, e: uniform(rng, n, q, -1.0, 1.0), f: uniform(rng, 1, q, -1.0, 1.0) }
}

/// Random digraph with a leader-rooted spanning tree whose weights and
/// in-degrees all lie in `[eps1, eps2]`.
pub fn random_admissible_graph(rng: &mut ChaCha8Rng) -> GraphSpec {
    let n = rng.gen_range(3..=8);
    let eps1: f64 = rng.gen_range(0.5..3.0);
    let eps2: f64 = eps1 * rng.gen_range(1.0..5.0);
    let mut order: Vec<usize> = (1..=n).collect();
    for k in (1..order.len()).rev() {
        order.swap(k, rng.gen_range(0..=k));
    }
    let mut a = DMatrix::zeros(n + 1, n + 1);
    for (pos, &i) in order.iter().enumerate() {
        let parent =
            if pos == 0 { 0 } else { [0].iter().chain(&order[..pos]).nth(rng.gen_range(0..=pos)).copied().unwrap() };
        let max_edges = ((eps2 / eps1).floor() as usize).max(1);
        let mut sources = vec![parent];
        let mut others: Vec<usize> = (0..=n).filter(|&j| j != i && j != parent).collect();
        let extra = rng.gen_range(0..max_edges).min(others.len());
        for _ in 0..extra {
            sources.push(others.swap_remove(rng.gen_range(0..others.len())));
        }
        let slack = (eps2 - sources.len() as f64 * eps1).max(0.0) * rng.gen_range(0.0..1.0);
        let shares: Vec<f64> = sources.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = shares.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        for (&j, share) in sources.iter().zip(shares) {
            a[(i, j)] = eps1 + slack * share / total;
        }
    }
    GraphSpec::new(a, eps1, eps2).expect("generated graph is admissible")
}

/// Rotation exosystem `[[0, w], [-w, 0]]`.
pub fn exo_rotation_at(w: f64) -> ExoSpec {
    ExoSpec::new(m(2, 2, &[0.0, w, -w, 0.0])).unwrap()
}

/// Exact coefficient data of one plant driven by two random input terms on
/// `[-1, 1]`.
pub fn random_experiment(rng: &mut ChaCha8Rng, plant: &PlantModel, exo: &ExoSpec, degree: usize) -> AgentData {
    let terms = (0..2)
        .map(|_| InputTerm {
            amp: rng.gen_range(0.5..1.5),
            rate: rng.gen_range(-1.0..1.0),
            freq: rng.gen_range(0.0..4.0),
            phase: rng.gen_range(0.0..std::f64::consts::PI),
        })
        .collect();
    let inputs = vec![InputSignal { terms: vec![terms] }];
    let x0 = vec![DVector::from_fn(plant.n(), |_, _| rng.gen_range(-1.0..1.0))];
    let v0 = DVector::from_fn(exo.q(), |i, _| if i == 0 { 1.0 } else { rng.gen_range(-1.0..1.0) });
    let plants = vec![plant.clone()];
    let run = simulate_open_loop(&plants, exo, &inputs, &x0, &v0, TimeSpan::forward(-1.0, 1.0, 1e-3)).unwrap();
    let mut data = collect_data(&run, &plants, degree, (-1.0, 1.0), &NoiseMode::Exact).unwrap();
    data.remove(0)
}

pub fn diff_for(data: &AgentData) -> DiffOperator {
    DiffOperator::for_degree(data.degree())
}

/// Rank of the complex matrix `re + i im` via its real embedding.
pub fn complex_rank(re: &DMatrix<f64>, im: &DMatrix<f64>) -> usize {
    let (r, c) = re.shape();
    let mut big = DMatrix::zeros(2 * r, 2 * c);
    big.view_mut((0, 0), (r, c)).copy_from(re);
    big.view_mut((0, c), (r, c)).copy_from(&-im);
    big.view_mut((r, 0), (r, c)).copy_from(im);
    big.view_mut((r, c), (r, c)).copy_from(re);
    let sv = big.singular_values();
    let tol = 1e-9 * sv.max().max(1.0);
    sv.iter().filter(|&&s| s > tol).count() / 2
}

/// Rank of `[A - lambda I, B; C, D]`.
pub fn rosenbrock_rank(p: &PlantModel, lambda: nalgebra::Complex<f64>) -> usize {
    let (n, mm, pp) = (p.n(), p.m(), p.p());
    let mut re = DMatrix::zeros(n + pp, n + mm);
    let mut im = DMatrix::zeros(n + pp, n + mm);
    re.view_mut((0, 0), (n, n)).copy_from(&(&p.a - DMatrix::identity(n, n) * lambda.re));
    im.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) * -lambda.im));
    re.view_mut((0, n), (n, mm)).copy_from(&p.b);
    re.view_mut((n, 0), (pp, n)).copy_from(&p.c);
    re.view_mut((n, n), (pp, mm)).copy_from(&p.d);
    complex_rank(&re, &im)
}

/// Smallest singular value of `[A - lambda I, B]` over the eigenvalues of `A`
/// in the closed right half-plane; infinite when there are none.
pub fn pbh_margin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    a.clone().complex_eigenvalues().iter().filter(|l| l.re >= -1e-9).fold(f64::INFINITY, |acc, l| {
        let m = n + b.ncols();
        // Real embedding of the complex matrix doubles every singular value.
        let mut big = DMatrix::zeros(2 * n, 2 * m);
        big.view_mut((0, 0), (n, n)).copy_from(&(a - DMatrix::identity(n, n) * l.re));
        big.view_mut((n, m), (n, n)).copy_from(&(a - DMatrix::identity(n, n) * l.re));
        big.view_mut((0, m), (n, n)).copy_from(&(DMatrix::identity(n, n) * l.im));
        big.view_mut((n, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) * -l.im));
        big.view_mut((0, n), (n, b.ncols())).copy_from(b);
        big.view_mut((n, m + n), (n, b.ncols())).copy_from(b);
        acc.min(big.singular_values().min())
    })
}

/// Hautus test: `[A - lambda I, B]` has full row rank at every eigenvalue of
/// `A` in the closed right half-plane.
pub fn pbh_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    a.clone().complex_eigenvalues().iter().cloned().filter(|l| l.re >= -1e-9).all(|l| {
        let mut re = DMatrix::zeros(n, n + b.ncols());
        let mut im = DMatrix::zeros(n, n + b.ncols());
        re.view_mut((0, 0), (n, n)).copy_from(&(a - DMatrix::identity(n, n) * l.re));
        im.view_mut((0, 0), (n, n)).copy_from(&(DMatrix::identity(n, n) * -l.im));
        re.view_mut((0, n), (n, b.ncols())).copy_from(b);
        complex_rank(&re, &im) == n
    })
}
