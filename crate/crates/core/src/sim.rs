//! Reference simulator for followers, exosystem and distributed controller.
//!
//! Integration is classic fixed-step RK4. Every emitted sample stores values
//! and time derivatives of all channels, which makes cubic Hermite dense
//! output available at arbitrary times (used to sample at Chebyshev nodes).
//! At a topology switch two samples share the switch time: the first carries
//! the derivatives under the old graph, the second under the new one.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_laplacian, has_leader_rooted_spanning_tree, GraphSpec};
use crate::opb::{self, ChebSeries};
use crate::synthesis::types::{AgentData, ExoSpec, GainSet};

/// Default integration step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// States beyond this magnitude are treated as divergence.
const DIVERGENCE_LIMIT: f64 = 1e12;

/// Follower plant `x' = A x + B u + E v`, `e = C x + D u + F v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    #[serde(with = "crate::matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub c: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub d: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub e: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub f: DMatrix<f64>,
}

impl PlantModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let (n, m, p) = (self.n(), self.m(), self.p());
        let checks = [
            ("A", self.a.shape(), (n, n)),
            ("B", self.b.shape(), (n, m)),
            ("C", self.c.shape(), (p, n)),
            ("D", self.d.shape(), (p, m)),
            ("E", self.e.shape(), (n, q)),
            ("F", self.f.shape(), (p, q)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Dimension(format!("plant matrix {name} is {got:?}, expected {want:?}")));
            }
        }
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::Dimension("plant dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// One term `amp * exp(rate t) * cos(freq t + phase)` of an input signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputTerm {
    pub amp: f64,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub freq: f64,
    #[serde(default)]
    pub phase: f64,
}

impl InputTerm {
    pub fn value(&self, t: f64) -> f64 {
        self.amp * (self.rate * t).exp() * (self.freq * t + self.phase).cos()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let arg = self.freq * t + self.phase;
        self.amp * (self.rate * t).exp() * (self.rate * arg.cos() - self.freq * arg.sin())
    }
}

/// Open-loop input of one agent: component `k` is the sum of `terms[k]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputSignal {
    pub terms: Vec<Vec<InputTerm>>,
}

impl InputSignal {
    pub fn value(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|c| c.iter().map(|s| s.value(t)).sum()))
    }

    pub fn derivative(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(self.terms.len(), self.terms.iter().map(|c| c.iter().map(|s| s.derivative(t)).sum()))
    }
}

/// Time span of a run. Initial conditions hold at `t_init`, which may lie
/// inside the span; the part before it is integrated backwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub t_start: f64,
    pub t_end: f64,
    pub t_init: f64,
    pub step: f64,
}

impl TimeSpan {
    pub fn forward(t_start: f64, t_end: f64, step: f64) -> Self {
        Self { t_start, t_end, t_init: t_start, step }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidInput(format!("step must be positive, got {}", self.step)));
        }
        if !(self.t_start < self.t_end && (self.t_start..=self.t_end).contains(&self.t_init)) {
            return Err(Error::InvalidInput(format!(
                "need t_start < t_end with t_init inside, got ({}, {}, {})",
                self.t_start, self.t_end, self.t_init
            )));
        }
        Ok(())
    }
}

/// Recorded channels of one follower.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AgentTrace {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub e: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
    pub dx: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub dy: Vec<DVector<f64>>,
    pub de: Vec<DVector<f64>>,
    pub deta: Vec<DVector<f64>>,
}

/// Selects a recorded channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    State,
    Input,
    Output,
    Error,
    Eta,
}

/// Trajectories of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub times: Vec<f64>,
    pub v: Vec<DVector<f64>>,
    pub dv: Vec<DVector<f64>>,
    pub y0: Vec<DVector<f64>>,
    pub agents: Vec<AgentTrace>,
    /// Topology switch instants inside the span.
    pub events: Vec<f64>,
}

impl SimResult {
    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().expect("nonempty run"))
    }

    fn segment(&self, t: f64) -> Result<usize> {
        let (t0, t1) = self.span();
        let slack = 1e-12 * (1.0 + t1.abs().max(t0.abs()));
        if t < t0 - slack || t > t1 + slack {
            return Err(Error::OutOfInterval { t, t0, t1 });
        }
        let idx = self.times.partition_point(|&s| s <= t);
        let mut k = idx.saturating_sub(1).min(self.times.len() - 2);
        // Skip zero-length segments created by duplicate switch samples.
        while self.times[k + 1] <= self.times[k] && k + 2 < self.times.len() {
            k += 1;
        }
        Ok(k)
    }

    fn hermite(&self, vals: &[DVector<f64>], ders: &[DVector<f64>], t: f64) -> Result<DVector<f64>> {
        let k = self.segment(t)?;
        let (ta, tb) = (self.times[k], self.times[k + 1]);
        let h = tb - ta;
        let s = ((t - ta) / h).clamp(0.0, 1.0);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        Ok(&vals[k] * h00 + &ders[k] * (h10 * h) + &vals[k + 1] * h01 + &ders[k + 1] * (h11 * h))
    }

    /// Dense-output value of an agent channel at `t`.
    pub fn channel_at(&self, agent: usize, channel: Channel, t: f64) -> Result<DVector<f64>> {
        let a = self.agents.get(agent).ok_or_else(|| Error::InvalidInput(format!("no agent {agent}")))?;
        let (vals, ders) = match channel {
            Channel::State => (&a.x, &a.dx),
            Channel::Input => (&a.u, &a.du),
            Channel::Output => (&a.y, &a.dy),
            Channel::Error => (&a.e, &a.de),
            Channel::Eta => (&a.eta, &a.deta),
        };
        self.hermite(vals, ders, t)
    }

    /// Dense-output exosystem state at `t`.
    pub fn exo_at(&self, t: f64) -> Result<DVector<f64>> {
        self.hermite(&self.v, &self.dv, t)
    }

    /// Writes the run as CSV; at switch instants only the post-switch row is
    /// kept.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let to_err = |e: csv::Error| Error::InvalidInput(format!("CSV: {e}"));
        let mut out = csv::Writer::from_path(path).map_err(to_err)?;
        let q = self.v.first().map_or(0, |v| v.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=q).map(|k| format!("v_{k}")));
        for (i, a) in self.agents.iter().enumerate() {
            let i = i + 1;
            for (name, ch) in [("x", &a.x), ("u", &a.u), ("y", &a.y), ("e", &a.e), ("eta", &a.eta)] {
                let dim = ch.first().map_or(0, |v| v.len());
                header.extend((1..=dim).map(|k| format!("{name}_{i}_{k}")));
            }
        }
        out.write_record(&header).map_err(to_err)?;
        for r in 0..self.times.len() {
            if r + 1 < self.times.len() && self.times[r + 1] == self.times[r] {
                continue;
            }
            let mut row = vec![self.times[r]];
            row.extend(self.v[r].iter());
            for a in &self.agents {
                for ch in [&a.x, &a.u, &a.y, &a.e, &a.eta] {
                    row.extend(ch[r].iter());
                }
            }
            out.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(to_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Dimensions and events of the run.
    pub fn manifest(&self) -> SimManifest {
        let dim = |v: &[DVector<f64>]| v.first().map_or(0, |x| x.len());
        SimManifest {
            t_start: self.span().0,
            t_end: self.span().1,
            samples: self.times.len(),
            q: dim(&self.v),
            agents: self
                .agents
                .iter()
                .map(|a| AgentDims { n: dim(&a.x), m: dim(&a.u), p: dim(&a.e), eta: dim(&a.eta) })
                .collect(),
            events: self.events.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub eta: usize,
}

/// JSON companion of the CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub t_start: f64,
    pub t_end: f64,
    pub samples: usize,
    pub q: usize,
    pub agents: Vec<AgentDims>,
    pub events: Vec<f64>,
}

/// Piecewise-constant topology: graph `k` is active after `schedule[k].0`.
pub type GraphSchedule = Vec<(f64, GraphSpec)>;

enum Mode<'a> {
    Open(&'a [InputSignal]),
    Closed {
        gains: &'a GainSet,
        /// Per schedule entry: follower block `H` and leader weights.
        couplings: Vec<(DMatrix<f64>, DVector<f64>)>,
    },
}

struct Interconnection<'a> {
    plants: &'a [PlantModel],
    exo: &'a ExoSpec,
    mode: Mode<'a>,
    x_off: Vec<usize>,
    eta_off: usize,
    v_off: usize,
    dim: usize,
}

struct Sample {
    v: DVector<f64>,
    dv: DVector<f64>,
    agents: Vec<[DVector<f64>; 10]>,
}

impl<'a> Interconnection<'a> {
    fn new(plants: &'a [PlantModel], exo: &'a ExoSpec, mode: Mode<'a>) -> Self {
        let q = exo.q();
        let mut x_off = Vec::with_capacity(plants.len());
        let mut off = 0;
        for p in plants {
            x_off.push(off);
            off += p.n();
        }
        let eta_off = off;
        if matches!(mode, Mode::Closed { .. }) {
            off += q * plants.len();
        }
        let v_off = off;
        Self { plants, exo, mode, x_off, eta_off, v_off, dim: off + q }
    }

    fn x<'z>(&self, z: &'z DVector<f64>, i: usize) -> nalgebra::DVectorView<'z, f64> {
        z.rows(self.x_off[i], self.plants[i].n())
    }

    fn eta<'z>(&self, z: &'z DVector<f64>, i: usize) -> nalgebra::DVectorView<'z, f64> {
        let q = self.exo.q();
        z.rows(self.eta_off + i * q, q)
    }

    fn v<'z>(&self, z: &'z DVector<f64>) -> nalgebra::DVectorView<'z, f64> {
        z.rows(self.v_off, self.exo.q())
    }

    fn inputs(&self, t: f64, z: &DVector<f64>) -> Vec<DVector<f64>> {
        match &self.mode {
            Mode::Open(sig) => sig.iter().map(|s| s.value(t)).collect(),
            Mode::Closed { gains, .. } => {
                (0..self.plants.len()).map(|i| &gains.k1[i] * self.x(z, i) + &gains.k2[i] * self.eta(z, i)).collect()
            }
        }
    }

    fn deriv(&self, t: f64, z: &DVector<f64>, seg: usize) -> DVector<f64> {
        let mut dz = DVector::zeros(self.dim);
        let s = &self.exo.s;
        let v = self.v(z).into_owned();
        let u = self.inputs(t, z);
        for (i, p) in self.plants.iter().enumerate() {
            let dx = &p.a * self.x(z, i) + &p.b * &u[i] + &p.e * &v;
            dz.rows_mut(self.x_off[i], p.n()).copy_from(&dx);
        }
        if let Mode::Closed { gains, couplings } = &self.mode {
            let (h, lead) = &couplings[seg];
            let q = self.exo.q();
            for i in 0..self.plants.len() {
                // -sum_j H_ij eta_j + a_i0 v equals sum_j a_ij (eta_j - eta_i) + a_i0 (v - eta_i).
                let mut coupling = &v * lead[i];
                for j in 0..self.plants.len() {
                    if h[(i, j)] != 0.0 {
                        coupling -= self.eta(z, j) * h[(i, j)];
                    }
                }
                let deta = s * self.eta(z, i) + coupling * gains.mu;
                dz.rows_mut(self.eta_off + i * q, q).copy_from(&deta);
            }
        }
        dz.rows_mut(self.v_off, self.exo.q()).copy_from(&(s * &v));
        dz
    }

    fn observe(&self, t: f64, z: &DVector<f64>, seg: usize) -> Sample {
        let dz = self.deriv(t, z, seg);
        let v = self.v(z).into_owned();
        let dv = self.v(&dz).into_owned();
        let u = self.inputs(t, z);
        let agents = self
            .plants
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let x = self.x(z, i).into_owned();
                let dx = self.x(&dz, i).into_owned();
                let (eta, deta, du) = match &self.mode {
                    Mode::Open(sig) => (DVector::zeros(0), DVector::zeros(0), sig[i].derivative(t)),
                    Mode::Closed { gains, .. } => {
                        let eta = self.eta(z, i).into_owned();
                        let deta = self.eta(&dz, i).into_owned();
                        let du = &gains.k1[i] * &dx + &gains.k2[i] * &deta;
                        (eta, deta, du)
                    }
                };
                let e = &p.c * &x + &p.d * &u[i] + &p.f * &v;
                let de = &p.c * &dx + &p.d * &du + &p.f * &dv;
                let (y, dy) = match &self.exo.c0 {
                    Some(c0) => (&e + c0 * &v, &de + c0 * &dv),
                    None => (e.clone(), de.clone()),
                };
                [x, u[i].clone(), y, e, eta, dx, du, dy, de, deta]
            })
            .collect();
        Sample { v, dv, agents }
    }

    /// RK4 from `a` to `b` (either direction) under graph `seg`, recording
    /// every step after the start.
    fn integrate(
        &self,
        z: &mut DVector<f64>,
        a: f64,
        b: f64,
        step: f64,
        seg: usize,
        out: &mut Vec<(f64, Sample)>,
    ) -> Result<()> {
        let n = ((b - a).abs() / step - 1e-9).ceil().max(1.0) as usize;
        let h = (b - a) / n as f64;
        for k in 0..n {
            let t = a + k as f64 * h;
            let k1 = self.deriv(t, z, seg);
            let k2 = self.deriv(t + 0.5 * h, &(&*z + &k1 * (0.5 * h)), seg);
            let k3 = self.deriv(t + 0.5 * h, &(&*z + &k2 * (0.5 * h)), seg);
            let k4 = self.deriv(t + h, &(&*z + &k3 * h), seg);
            *z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            let tn = if k + 1 == n { b } else { a + (k + 1) as f64 * h };
            if let Some(bad) = z.iter().find(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
                return Err(Error::Diverged { t: tn, detail: format!("state component reached {bad}") });
            }
            out.push((tn, self.observe(tn, z, seg)));
        }
        Ok(())
    }
}

fn check_setup(plants: &[PlantModel], exo: &ExoSpec, x0: &[DVector<f64>], v0: &DVector<f64>) -> Result<()> {
    exo.validate()?;
    if plants.is_empty() {
        return Err(Error::InvalidInput("at least one follower is required".into()));
    }
    if x0.len() != plants.len() {
        return Err(Error::Dimension(format!("{} initial states for {} plants", x0.len(), plants.len())));
    }
    for (i, (p, x)) in plants.iter().zip(x0).enumerate() {
        p.validate(exo.q())?;
        if x.len() != p.n() {
            return Err(Error::Dimension(format!("initial state {i} has length {}, expected {}", x.len(), p.n())));
        }
        if let Some(c0) = &exo.c0 {
            if c0.nrows() != p.p() {
                return Err(Error::Dimension(format!(
                    "leader output has {} rows, plant {i} has p = {}",
                    c0.nrows(),
                    p.p()
                )));
            }
        }
    }
    if v0.len() != exo.q() {
        return Err(Error::Dimension(format!("v0 has length {}, expected {}", v0.len(), exo.q())));
    }
    Ok(())
}

fn assemble(
    sys: &Interconnection<'_>,
    z0: DVector<f64>,
    span: TimeSpan,
    first_graph: usize,
    switches: &[(f64, usize)],
) -> Result<SimResult> {
    // Switches are strictly inside (t_init, t_end); graph `g` of a switch is
    // active on the half-open interval after it.
    let mut samples: Vec<(f64, Sample)> = Vec::new();
    if span.t_init > span.t_start {
        let mut z = z0.clone();
        sys.integrate(&mut z, span.t_init, span.t_start, span.step, first_graph, &mut samples)?;
        samples.reverse();
    }
    samples.push((span.t_init, sys.observe(span.t_init, &z0, first_graph)));

    let mut z = z0;
    let mut t = span.t_init;
    let mut graph = first_graph;
    for &(ts, next) in switches {
        sys.integrate(&mut z, t, ts, span.step, graph, &mut samples)?;
        samples.push((ts, sys.observe(ts, &z, next)));
        t = ts;
        graph = next;
    }
    sys.integrate(&mut z, t, span.t_end, span.step, graph, &mut samples)?;
    let events = switches.iter().map(|s| s.0).collect();

    let mut result = SimResult {
        times: Vec::with_capacity(samples.len()),
        v: Vec::with_capacity(samples.len()),
        dv: Vec::with_capacity(samples.len()),
        y0: Vec::with_capacity(samples.len()),
        agents: vec![AgentTrace::default(); sys.plants.len()],
        events,
    };
    for (t, s) in samples {
        result.times.push(t);
        result.y0.push(match &sys.exo.c0 {
            Some(c0) => c0 * &s.v,
            None => DVector::zeros(sys.plants[0].p()),
        });
        result.v.push(s.v);
        result.dv.push(s.dv);
        for (trace, [x, u, y, e, eta, dx, du, dy, de, deta]) in result.agents.iter_mut().zip(s.agents) {
            trace.x.push(x);
            trace.u.push(u);
            trace.y.push(y);
            trace.e.push(e);
            trace.eta.push(eta);
            trace.dx.push(dx);
            trace.du.push(du);
            trace.dy.push(dy);
            trace.de.push(de);
            trace.deta.push(deta);
        }
    }
    Ok(result)
}

/// Integrates the followers and exosystem under prescribed inputs.
pub fn simulate_open_loop(
    plants: &[PlantModel],
    exo: &ExoSpec,
    inputs: &[InputSignal],
    x0: &[DVector<f64>],
    v0: &DVector<f64>,
    span: TimeSpan,
) -> Result<SimResult> {
    check_setup(plants, exo, x0, v0)?;
    span.validate()?;
    if inputs.len() != plants.len() {
        return Err(Error::Dimension(format!("{} input signals for {} plants", inputs.len(), plants.len())));
    }
    for (i, (sig, p)) in inputs.iter().zip(plants).enumerate() {
        if sig.terms.len() != p.m() {
            return Err(Error::Dimension(format!("input {i} has {} components, expected {}", sig.terms.len(), p.m())));
        }
    }
    let sys = Interconnection::new(plants, exo, Mode::Open(inputs));
    let mut z0 = DVector::zeros(sys.dim);
    for (i, x) in x0.iter().enumerate() {
        z0.rows_mut(sys.x_off[i], x.len()).copy_from(x);
    }
    z0.rows_mut(sys.v_off, exo.q()).copy_from(v0);
    assemble(&sys, z0, span, 0, &[])
}

/// Integrates the full interconnection with the distributed controller
/// `u_i = K1_i x_i + K2_i eta_i` and observer coupling gain `mu`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_closed_loop(
    plants: &[PlantModel],
    exo: &ExoSpec,
    schedule: &GraphSchedule,
    gains: &GainSet,
    x0: &[DVector<f64>],
    eta0: Option<&[DVector<f64>]>,
    v0: &DVector<f64>,
    span: TimeSpan,
) -> Result<SimResult> {
    check_setup(plants, exo, x0, v0)?;
    span.validate()?;
    if span.t_init != span.t_start {
        return Err(Error::InvalidInput("closed-loop runs start at their initial time".into()));
    }
    let n_agents = plants.len();
    if gains.k1.len() != n_agents || gains.k2.len() != n_agents {
        return Err(Error::Dimension(format!("gains for {} agents, {} plants", gains.k1.len(), n_agents)));
    }
    for (i, p) in plants.iter().enumerate() {
        if gains.k1[i].shape() != (p.m(), p.n()) || gains.k2[i].shape() != (p.m(), exo.q()) {
            return Err(Error::Dimension(format!("gain shapes of agent {i} do not match its plant")));
        }
    }
    if !(gains.mu > 0.0) {
        return Err(Error::InvalidInput(format!("coupling gain must be positive, got {}", gains.mu)));
    }
    validate_schedule(schedule, n_agents, span)?;

    let couplings = schedule
        .iter()
        .map(|(_, g)| {
            let parts = build_laplacian(g)?;
            Ok((parts.h, DVector::from_vec(parts.leader_column)))
        })
        .collect::<Result<Vec<_>>>()?;
    let sys = Interconnection::new(plants, exo, Mode::Closed { gains, couplings });
    let q = exo.q();
    let mut z0 = DVector::zeros(sys.dim);
    for (i, x) in x0.iter().enumerate() {
        z0.rows_mut(sys.x_off[i], x.len()).copy_from(x);
    }
    if let Some(eta0) = eta0 {
        if eta0.len() != n_agents || eta0.iter().any(|e| e.len() != q) {
            return Err(Error::Dimension("initial controller states do not match the exosystem".into()));
        }
        for (i, e) in eta0.iter().enumerate() {
            z0.rows_mut(sys.eta_off + i * q, q).copy_from(e);
        }
    }
    z0.rows_mut(sys.v_off, q).copy_from(v0);

    let mut first_graph = 0;
    let mut switches = Vec::new();
    for (k, (ts, _)) in schedule.iter().enumerate() {
        if *ts <= span.t_start {
            first_graph = k;
        } else if *ts < span.t_end {
            switches.push((*ts, k));
        }
    }
    assemble(&sys, z0, span, first_graph, &switches)
}

/// Switch times must increase strictly, the first graph must cover the start
/// of the run, and every graph needs a leader-rooted spanning tree.
pub fn validate_schedule(schedule: &GraphSchedule, n_agents: usize, span: TimeSpan) -> Result<()> {
    let first = schedule.first().ok_or_else(|| Error::Scenario("empty graph schedule".into()))?;
    if first.0 > span.t_start {
        return Err(Error::Scenario(format!(
            "graph schedule starts at {} after the run start {}",
            first.0, span.t_start
        )));
    }
    for w in schedule.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(Error::Scenario(format!("switch times {} and {} are not increasing", w[0].0, w[1].0)));
        }
    }
    for (k, (_, g)) in schedule.iter().enumerate() {
        if g.n_followers() != n_agents {
            return Err(Error::Scenario(format!("graph {k} has {} followers, expected {n_agents}", g.n_followers())));
        }
        if !has_leader_rooted_spanning_tree(g) {
            return Err(Error::Scenario(format!("graph {k} has no spanning tree rooted at the leader")));
        }
    }
    Ok(())
}

/// How the noise level of collected data is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum NoiseMode {
    /// Exact data (`c` absent).
    Exact,
    /// Explicit `c` per agent.
    Explicit(Vec<f64>),
    /// `c` estimated from a degree-`2N` reference fit of each state.
    Estimated,
}

/// Samples a run at the CGL nodes of `window` and fits degree-`degree`
/// coefficient data for every agent. Only the known matrices `E`, `F` are
/// read from the plant models.
pub fn collect_data(
    result: &SimResult,
    plants: &[PlantModel],
    degree: usize,
    window: (f64, f64),
    noise: &NoiseMode,
) -> Result<Vec<AgentData>> {
    let (t0, t1) = window;
    let (s0, s1) = result.span();
    if !(t0 < t1) {
        return Err(Error::DegenerateInterval { t0, t1 });
    }
    if t0 < s0 || t1 > s1 {
        return Err(Error::InvalidInput(format!("window [{t0}, {t1}] exceeds the simulated span [{s0}, {s1}]")));
    }
    let needed = degree + 1;
    let available = result.times.iter().filter(|&&t| t >= t0 && t <= t1).count();
    if available < needed {
        return Err(Error::TooFewSamples { needed, got: available });
    }
    if plants.len() != result.agents.len() {
        return Err(Error::Dimension("plant list does not match the run".into()));
    }
    if let NoiseMode::Explicit(c) = noise {
        if c.len() != plants.len() {
            return Err(Error::Dimension(format!("{} noise levels for {} agents", c.len(), plants.len())));
        }
    }
    let times = opb::cgl_times(degree, t0, t1);
    let exo_samples: Vec<_> = times.iter().map(|&t| Ok((t, result.exo_at(t)?))).collect::<Result<_>>()?;
    let exo = opb::fit_series(&exo_samples, degree, t0, t1)?;
    let fit = |agent: usize, ch: Channel, deg: usize| -> Result<ChebSeries> {
        let samples: Vec<_> = opb::cgl_times(deg, t0, t1)
            .into_iter()
            .map(|t| Ok((t, result.channel_at(agent, ch, t)?)))
            .collect::<Result<_>>()?;
        opb::fit_series(&samples, deg, t0, t1)
    };
    plants
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let x = fit(i, Channel::State, degree)?;
            let noise_c = match noise {
                NoiseMode::Exact => None,
                NoiseMode::Explicit(c) => Some(c[i]),
                NoiseMode::Estimated => Some(estimate_noise_c(&fit(i, Channel::State, 2 * degree)?, degree)?),
            };
            let data = AgentData {
                x: x.into_coeffs(),
                u: fit(i, Channel::Input, degree)?.into_coeffs(),
                err: fit(i, Channel::Error, degree)?.into_coeffs(),
                exo: exo.coeffs().clone(),
                e_mat: p.e.clone(),
                f_mat: p.f.clone(),
                noise_c,
                window,
            };
            data.validate()?;
            Ok(data)
        })
        .collect()
}

/// Noise level `c` for the derivative data of a vector signal truncated at
/// `degree`, from a higher-degree reference fit: the per-component bounds are
/// squared and summed, then rescaled to time units.
pub fn estimate_noise_c(reference: &ChebSeries, degree: usize) -> Result<f64> {
    let (t0, t1) = reference.interval();
    let kappa = opb::chain_factor(t0, t1);
    let mut c = 0.0;
    for v in opb::second_derivative_variation(reference) {
        c += opb::truncation_noise_bound(v, degree)?.c;
    }
    Ok(kappa * kappa * c)
}

/// Sup-norm tracking error over a trailing part of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub t_from: f64,
    pub t_to: f64,
    pub sup_tail: f64,
    pub per_agent: Vec<f64>,
}

/// Largest Euclidean norm of each agent's error over the last
/// `tail_fraction` of the horizon.
pub fn tracking_error_metrics(result: &SimResult, tail_fraction: f64) -> Result<TrackingMetrics> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("tail fraction must lie in (0, 1), got {tail_fraction}")));
    }
    let (t0, t1) = result.span();
    tracking_error_window(result, t1 - tail_fraction * (t1 - t0), t1)
}

/// Largest Euclidean norm of each agent's error over `[t_from, t_to]`.
pub fn tracking_error_window(result: &SimResult, t_from: f64, t_to: f64) -> Result<TrackingMetrics> {
    let per_agent: Vec<f64> = result
        .agents
        .iter()
        .map(|a| {
            result
                .times
                .iter()
                .zip(&a.e)
                .filter(|(t, _)| **t >= t_from && **t <= t_to)
                .map(|(_, e)| e.norm())
                .fold(0.0, f64::max)
        })
        .collect();
    let sup_tail = per_agent.iter().cloned().fold(0.0, f64::max);
    Ok(TrackingMetrics { t_from, t_to, sup_tail, per_agent })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent1() -> PlantModel {
        PlantModel {
            a: DMatrix::from_row_slice(2, 2, &[0., 1., 0., 0.]),
            b: DMatrix::from_row_slice(2, 1, &[0., 1.]),
            c: DMatrix::from_row_slice(1, 2, &[1., 0.]),
            d: DMatrix::zeros(1, 1),
            e: DMatrix::identity(2, 2),
            f: DMatrix::from_row_slice(1, 2, &[-1., 0.]),
        }
    }

    fn exp_input() -> InputSignal {
        InputSignal { terms: vec![vec![InputTerm { amp: 1.0, rate: -1.0, freq: 0.0, phase: 0.0 }]] }
    }

    fn x1_exact(t: f64) -> [f64; 2] {
        [1.5 * t + 2.0 * t.cosh() - 1.0, 0.5 * t.exp() - (-t).exp() + 1.5]
    }

    fn run(step: f64, span: TimeSpan) -> SimResult {
        let exo = ExoSpec::new(DMatrix::identity(2, 2)).unwrap();
        simulate_open_loop(
            &[agent1()],
            &exo,
            &[exp_input()],
            &[DVector::from_vec(vec![1.0, 1.0])],
            &DVector::from_vec(vec![0.5, 0.5]),
            TimeSpan { step, ..span },
        )
        .unwrap()
    }

    #[test]
    fn open_loop_matches_closed_form() {
        let r = run(1e-3, TimeSpan::forward(0.0, 1.0, 1e-3));
        let x = r.agents[0].x.last().unwrap();
        let want = x1_exact(1.0);
        assert!((x[0] - want[0]).abs() < 1e-6 && (x[1] - want[1]).abs() < 1e-6);
        let v = r.v.last().unwrap();
        assert!((v[0] - 0.5 * 1f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn backward_integration_from_interior_start() {
        let r = run(1e-3, TimeSpan { t_start: -1.0, t_end: 1.0, t_init: 0.0, step: 1e-3 });
        assert_eq!(r.times[0], -1.0);
        assert!(r.times.windows(2).all(|w| w[1] > w[0]));
        for t in [-1.0, -0.37, 0.0, 0.81] {
            let x = r.channel_at(0, Channel::State, t).unwrap();
            let want = x1_exact(t);
            assert!((x[0] - want[0]).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |h: f64| {
            let r = run(h, TimeSpan::forward(0.0, 1.0, h));
            (r.agents[0].x.last().unwrap()[0] - x1_exact(1.0)[0]).abs()
        };
        let (e1, e2, e3) = (err(1e-2), err(5e-3), err(2.5e-3));
        for ratio in [e1 / e2, e2 / e3] {
            assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn zero_dynamics_hold_state() {
        let mut p = agent1();
        p.a = DMatrix::zeros(2, 2);
        p.e = DMatrix::zeros(2, 2);
        let exo = ExoSpec::new(DMatrix::zeros(2, 2)).unwrap();
        let sig = InputSignal { terms: vec![vec![]] };
        let r = simulate_open_loop(
            &[p],
            &exo,
            &[sig],
            &[DVector::from_vec(vec![3.0, -2.0])],
            &DVector::from_vec(vec![1.0, 1.0]),
            TimeSpan::forward(0.0, 2.0, 0.1),
        )
        .unwrap();
        assert!(r.agents[0].x.iter().all(|x| x[0] == 3.0 && x[1] == -2.0));
    }

    #[test]
    fn error_is_output_minus_leader_output() {
        let exo = ExoSpec::new(DMatrix::identity(2, 2))
            .unwrap()
            .with_output(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]))
            .unwrap();
        let r = simulate_open_loop(
            &[agent1()],
            &exo,
            &[exp_input()],
            &[DVector::from_vec(vec![1.0, 1.0])],
            &DVector::from_vec(vec![0.5, 0.5]),
            TimeSpan::forward(0.0, 1.0, 0.01),
        )
        .unwrap();
        for k in 0..r.times.len() {
            let a = &r.agents[0];
            assert!((&a.e[k] - (&a.y[k] - &r.y0[k])).amax() < 1e-15);
        }
    }

    #[test]
    fn dimension_errors() {
        let exo = ExoSpec::new(DMatrix::identity(2, 2)).unwrap();
        let bad = simulate_open_loop(
            &[agent1()],
            &exo,
            &[exp_input()],
            &[DVector::from_vec(vec![1.0])],
            &DVector::from_vec(vec![0.5, 0.5]),
            TimeSpan::forward(0.0, 1.0, 0.01),
        );
        assert!(matches!(bad, Err(Error::Dimension(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let mut p = agent1();
        p.a = DMatrix::from_row_slice(2, 2, &[40., 0., 0., 40.]);
        let exo = ExoSpec::new(DMatrix::identity(2, 2)).unwrap();
        let r = simulate_open_loop(
            &[p],
            &exo,
            &[exp_input()],
            &[DVector::from_vec(vec![1.0, 1.0])],
            &DVector::from_vec(vec![0.5, 0.5]),
            TimeSpan::forward(0.0, 5.0, 0.01),
        );
        assert!(matches!(r, Err(Error::Diverged { .. })));
    }

    #[test]
    fn collected_coefficients_of_exponential_input() {
        let r = run(1e-3, TimeSpan { t_start: -1.0, t_end: 1.0, t_init: 0.0, step: 1e-3 });
        let data = collect_data(&r, &[agent1()], 15, (-1.0, 1.0), &NoiseMode::Exact).unwrap();
        // Chebyshev coefficients of exp(-t) are 2 (-1)^k I_k(1).
        let expect = [1.266_065_877_752_008, -1.130_318_207_984_97, 0.271_495_339_534_077];
        for (k, e) in expect.iter().enumerate() {
            assert!((data[0].u[(0, k)] - e).abs() < 1e-12);
        }
        assert!((data[0].exo[(0, 0)] - 0.5 * 1.266_065_877_752_008).abs() < 1e-8);
    }
}
