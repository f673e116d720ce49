//! The end-to-end pipeline: collect data, encode it, choose the coupling
//! gain, synthesize both gains for every follower, then close the loop on
//! the simulated plants and verify.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scenario::{vectors, Mode, Scenario};
use crate::error::{Error, Result};
use crate::graph::{self, build_laplacian};
use crate::linalg;
use crate::lmi::LmiStatus;
use crate::opb::DiffOperator;
use crate::sim::{self, NoiseMode, PlantModel, TimeSpan, TrackingMetrics};
use crate::synthesis::{
    self, AgentData, ApproxRegulator, ExoSpec, GainSet, K1Certificate, OmegaBound, RegulatorCertificate, SlaterCheck,
    StabilizabilityReport, SynthesisOptions, TransmissionZeroReport,
};

/// Coefficient data of all followers plus the exosystem they share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    pub exo: ExoSpec,
    pub agents: Vec<AgentData>,
}

impl DataSet {
    pub fn load(path: &Path) -> Result<Self> {
        let d: DataSet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        d.exo.validate()?;
        for a in &d.agents {
            a.validate()?;
            if a.q() != d.exo.q() {
                return Err(Error::Dimension("agent data and exosystem disagree on q".into()));
            }
        }
        Ok(d)
    }
}

/// Sampled check of a noisy-data gain over the consistency set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundnessReport {
    pub samples: usize,
    pub passed: usize,
    /// Largest eigenvalue of `(A+BK) P + P (A+BK)^T` over the samples.
    pub worst_lyapunov_eig: f64,
}

/// Checks against the plant model, available only when the harness knows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheck {
    /// Largest real part of `A + B K1`.
    pub closed_loop_max_re: f64,
    /// `||A Pi + B Gamma + E - Pi S||_2`.
    pub omega_true: f64,
    /// `||C Pi + D Gamma + F||_2`.
    pub output_residual: f64,
}

/// Synthesis evidence of one follower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stabilizability: Option<StabilizabilityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transmission_zero: Option<TransmissionZeroReport>,
    #[serde(with = "crate::matrix_serde")]
    pub k1: DMatrix<f64>,
    pub k1_certificate: K1Certificate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater: Option<SlaterCheck>,
    pub regulator: RegulatorCertificate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<OmegaBound>,
    #[serde(with = "crate::matrix_serde")]
    pub k2: DMatrix<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soundness: Option<SoundnessReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_check: Option<ModelCheck>,
}

/// Bounds on the follower block and the selected coupling gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub eps1: f64,
    pub eps2: f64,
    pub n_followers: usize,
    pub direct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combinatorial: Option<f64>,
    pub selected: f64,
    pub max_re_lambda_s: f64,
    pub safety: f64,
    pub mu: f64,
    /// Smallest real part of the follower block of each scheduled graph.
    pub true_min_re_lambda_h: Vec<f64>,
}

/// Where a failed run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
    pub exit_code: i32,
}

/// Output of [`run_pipeline`]. Everything except `meta` is a deterministic
/// function of the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scenario: String,
    pub mode: Mode,
    pub completed_stages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<GainReport>,
    pub agents: Vec<AgentReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingMetrics>,
    #[serde(default)]
    pub files: Vec<PathBuf>,
    pub meta: Meta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub generated_unix_s: u64,
    pub version: String,
}

impl Meta {
    fn now() -> Self {
        let generated_unix_s =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self { generated_unix_s, version: env!("CARGO_PKG_VERSION").to_string() }
    }
}

impl PipelineReport {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }

    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, |f| f.exit_code)
    }

    /// Assembled gains of a completed synthesis stage.
    pub fn gains(&self) -> Option<GainSet> {
        let mu = self.gain.as_ref()?.mu;
        if self.agents.is_empty() {
            return None;
        }
        Some(GainSet {
            k1: self.agents.iter().map(|a| a.k1.clone()).collect(),
            k2: self.agents.iter().map(|a| a.k2.clone()).collect(),
            mu,
            k1_certificates: self.agents.iter().map(|a| a.k1_certificate.clone()).collect(),
            regulator_certificates: self.agents.iter().map(|a| a.regulator.clone()).collect(),
        })
    }

    /// JSON without the `meta` field, for reproducibility comparisons.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("meta");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Options that do not affect the numbers.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for CSV exports of the data and closed-loop runs.
    pub csv_dir: Option<PathBuf>,
}

/// Simulates the data experiment and encodes it.
pub fn collect_stage(s: &Scenario) -> Result<(sim::SimResult, DataSet)> {
    let run = sim::simulate_open_loop(
        &s.plants,
        &s.exo,
        &s.data.inputs,
        &vectors(&s.data.x0),
        &nalgebra::DVector::from_vec(s.data.v0.clone()),
        s.data_span(),
    )?;
    let noise = s.data.noise.clone().unwrap_or(NoiseMode::Exact);
    let agents = sim::collect_data(&run, &s.plants, s.data.degree, s.data.window, &noise)?;
    Ok((run, DataSet { exo: s.exo.clone(), agents }))
}

/// Bounds on `min Re lambda(H)` from the weight bounds and the resulting gain.
pub fn gain_stage(s: &Scenario) -> Result<GainReport> {
    let (eps1, eps2) = s.weight_bounds();
    let n = s.n_agents();
    let direct = graph::lambda_min_lower_bound(eps1, eps2, n)?;
    let combinatorial = if n >= 3 { Some(graph::lambda_min_lower_bound_combinatorial(eps1, eps2, n)?) } else { None };
    let selected = combinatorial.map_or(direct, |c| c.max(direct));
    let max_re_lambda_s = s.exo.max_re_lambda();
    let mu = graph::coupling_gain_mu(max_re_lambda_s, selected, s.gain.safety)?;
    let true_min_re_lambda_h = s
        .graph_schedule
        .iter()
        .map(|e| Ok(linalg::min_real_eig(&build_laplacian(&e.graph)?.h)))
        .collect::<Result<Vec<_>>>()?;
    Ok(GainReport {
        eps1,
        eps2,
        n_followers: n,
        direct,
        combinatorial,
        selected,
        max_re_lambda_s,
        safety: s.gain.safety,
        mu,
        true_min_re_lambda_h,
    })
}

/// Synthesis of every follower's gains from coefficient data.
///
/// `k1_overrides[i]` replaces the synthesized feedback gain of agent `i`;
/// `witnesses[i]` is a data-generating `(A, B)` for the noisy-mode
/// strict-feasibility check.
pub fn synthesis_stage(
    data: &DataSet,
    mode: Mode,
    opts: &SynthesisOptions,
    k1_overrides: &[Option<DMatrix<f64>>],
    witnesses: &[(DMatrix<f64>, DMatrix<f64>)],
) -> Result<Vec<AgentReport>> {
    let exo = &data.exo;
    data.agents
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let diff = DiffOperator::for_degree(d.degree());
            let injected = k1_overrides.get(i).cloned().flatten();
            let mut report = match mode {
                Mode::Exact => exact_agent(i, d, exo, &diff, opts, injected)?,
                Mode::Noisy => noisy_agent(i, d, exo, &diff, opts, injected, witnesses.get(i))?,
            };
            report.noise_c = d.noise_c;
            Ok(report)
        })
        .collect()
}

fn exact_agent(
    index: usize,
    d: &AgentData,
    exo: &ExoSpec,
    diff: &DiffOperator,
    opts: &SynthesisOptions,
    injected: Option<DMatrix<f64>>,
) -> Result<AgentReport> {
    let stab = synthesis::stabilizability_check(d, diff, opts)?;
    if !stab.ok {
        let search = match stab.lmi_status {
            Some(LmiStatus::MaxIter) => "; the LMI search ran out of iterations",
            _ => "",
        };
        return Err(Error::NotInformative(format!(
            "agent {}: no stabilizing right inverse of the state data found (max real part {:.4}{search})",
            index + 1,
            stab.max_re
        )));
    }
    let tz = synthesis::transmission_zero_check(d, exo, diff, opts);
    if !tz.ok {
        return Err(Error::NotInformative(format!(
            "agent {}: data pencil loses rank at an exosystem eigenvalue ({:?})",
            index + 1,
            tz.ranks
        )));
    }
    let (k1, k1_certificate) = match injected {
        Some(k1) => (k1, K1Certificate::Injected),
        None => {
            let s = synthesis::synthesize_k1_exact(d, diff, opts)?;
            (s.k1, s.certificate)
        }
    };
    let regulator = synthesis::solve_regulator_data(d, exo, diff, opts)?;
    let k2 = synthesis::synthesize_k2(d, &k1, &regulator.m)?;
    Ok(AgentReport {
        index,
        noise_c: None,
        stabilizability: Some(stab),
        transmission_zero: Some(tz),
        k1,
        k1_certificate,
        slater: None,
        regulator,
        omega: None,
        k2,
        soundness: None,
        model_check: None,
    })
}

fn noisy_agent(
    index: usize,
    d: &AgentData,
    exo: &ExoSpec,
    diff: &DiffOperator,
    opts: &SynthesisOptions,
    injected: Option<DMatrix<f64>>,
    witness: Option<&(DMatrix<f64>, DMatrix<f64>)>,
) -> Result<AgentReport> {
    let nq = synthesis::build_noise_quadratic(d, diff)?;
    let (k1, k1_certificate, slater) = match injected {
        Some(k1) => (k1, K1Certificate::Injected, None),
        None => {
            let s = synthesis::synthesize_k1_noisy(&nq, witness.map(|(a, b)| (a, b)), opts)?;
            (s.k1, s.certificate, Some(s.slater))
        }
    };
    let ApproxRegulator { m, pi, gamma, omega, constraint_residual, .. } =
        synthesis::approx_regulator_noisy(d, exo, diff, opts)?;
    let k2 = synthesis::synthesize_k2(d, &k1, &m)?;
    Ok(AgentReport {
        index,
        noise_c: None,
        stabilizability: None,
        transmission_zero: None,
        k1,
        k1_certificate,
        slater,
        regulator: RegulatorCertificate { m, pi, gamma, residual: constraint_residual },
        omega: Some(omega),
        k2,
        soundness: None,
        model_check: None,
    })
}

/// Samples the consistency set and checks the common Lyapunov inequality
/// `(A+BK) P + P (A+BK)^T < 0` with the certificate's `P`.
pub fn soundness_check(
    d: &AgentData,
    k1: &DMatrix<f64>,
    p: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<SoundnessReport> {
    let diff = DiffOperator::for_degree(d.degree());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let systems = synthesis::sample_consistent_systems(d, &diff, samples, &mut rng)?;
    let mut passed = 0;
    let mut worst = f64::NEG_INFINITY;
    for (a, b) in &systems {
        let acl = a + b * k1;
        let lyap = &acl * p + p * acl.transpose();
        let e = linalg::symmetrize(&lyap).symmetric_eigenvalues().max();
        worst = worst.max(e);
        if e < 0.0 {
            passed += 1;
        }
    }
    Ok(SoundnessReport { samples: systems.len(), passed, worst_lyapunov_eig: worst })
}

/// Model-based checks of synthesized gains (test oracle).
pub fn model_check(p: &PlantModel, exo: &ExoSpec, k1: &DMatrix<f64>, reg: &RegulatorCertificate) -> ModelCheck {
    let (pi, gamma) = (&reg.pi, &reg.gamma);
    ModelCheck {
        closed_loop_max_re: linalg::max_real_eig(&(&p.a + &p.b * k1)),
        omega_true: linalg::spectral_norm(&(&p.a * pi + &p.b * gamma + &p.e - pi * &exo.s)),
        output_residual: linalg::spectral_norm(&(&p.c * pi + &p.d * gamma + &p.f)),
    }
}

/// Closes the loop on the scenario plants with the given gains.
pub fn verify_stage(s: &Scenario, gains: &GainSet) -> Result<(sim::SimResult, TrackingMetrics)> {
    let cl = s.closed_loop.as_ref().ok_or_else(|| Error::Scenario("scenario has no closed-loop section".into()))?;
    let eta0 = cl.eta0.as_ref().map(|e| vectors(e));
    let run = sim::simulate_closed_loop(
        &s.plants,
        &s.exo,
        &s.schedule(),
        gains,
        &vectors(&cl.x0),
        eta0.as_deref(),
        &nalgebra::DVector::from_vec(cl.v0.clone()),
        TimeSpan::forward(cl.horizon.0, cl.horizon.1, cl.step),
    )?;
    let metrics = sim::tracking_error_window(&run, cl.metric_window.0, cl.metric_window.1)?;
    Ok((run, metrics))
}

/// Runs every stage in order. Failures stop the run and are recorded in the
/// report together with the stage that raised them.
pub fn run_pipeline(s: &Scenario, run_opts: &RunOptions) -> PipelineReport {
    let mut report = PipelineReport {
        scenario: s.name.clone(),
        mode: s.mode,
        completed_stages: Vec::new(),
        failure: None,
        gain: None,
        agents: Vec::new(),
        tracking: None,
        files: Vec::new(),
        meta: Meta::now(),
    };
    if let Err((stage, e)) = pipeline_body(s, run_opts, &mut report) {
        report.failure = Some(Failure { stage: stage.to_string(), message: e.to_string(), exit_code: e.exit_code() });
    }
    report
}

fn pipeline_body(
    s: &Scenario,
    run_opts: &RunOptions,
    report: &mut PipelineReport,
) -> std::result::Result<(), (&'static str, Error)> {
    fn at<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, (&'static str, Error)> {
        r.map_err(|e| (stage, e))
    }

    let (data_run, data) = at("collect", collect_stage(s))?;
    if let Some(dir) = &run_opts.csv_dir {
        report.files.extend(at("collect", write_data_files(dir, &data_run, &data))?);
    }
    report.completed_stages.push("collect".into());

    let gain = at("coupling_gain", gain_stage(s))?;
    let mu = gain.mu;
    report.gain = Some(gain);
    report.completed_stages.push("coupling_gain".into());

    let overrides = at("synthesis", (0..s.n_agents()).map(|i| s.k1_override(i)).collect::<Result<Vec<_>>>())?;
    let witnesses: Vec<_> = s.plants.iter().map(|p| (p.a.clone(), p.b.clone())).collect();
    let mut agents = at("synthesis", synthesis_stage(&data, s.mode, &s.synthesis, &overrides, &witnesses))?;
    for (a, p) in agents.iter_mut().zip(&s.plants) {
        a.model_check = Some(model_check(p, &s.exo, &a.k1, &a.regulator));
    }
    if s.mode == Mode::Noisy {
        for (a, d) in agents.iter_mut().zip(&data.agents) {
            if let K1Certificate::Noisy { p, .. } = &a.k1_certificate {
                let seed = s.soundness.seed.wrapping_add(a.index as u64);
                a.soundness = Some(at("soundness", soundness_check(d, &a.k1, p, s.soundness.samples, seed))?);
            }
        }
    }
    report.agents = agents;
    report.completed_stages.push("synthesis".into());
    if let Some(dir) = &run_opts.csv_dir {
        let path = dir.join("gains.json");
        let gains = report.gains().expect("synthesis stage completed");
        at("synthesis", write_json(&path, &gains))?;
        report.files.push(path);
    }

    if s.closed_loop.is_some() {
        let gains = report.gains().expect("synthesis stage completed");
        let gains = GainSet { mu, ..gains };
        let (run, metrics) = at("closed_loop", verify_stage(s, &gains))?;
        if let Some(dir) = &run_opts.csv_dir {
            let path = dir.join("closed_loop.csv");
            at("closed_loop", run.write_csv(&path))?;
            report.files.push(path);
        }
        report.tracking = Some(metrics);
        report.completed_stages.push("closed_loop".into());
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Writes the data run as CSV plus its manifest, and the encoded data set.
fn write_data_files(dir: &Path, run: &sim::SimResult, data: &DataSet) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("data_run.csv");
    run.write_csv(&csv)?;
    let manifest = dir.join("data_run.manifest.json");
    write_json(&manifest, &run.manifest())?;
    let encoded = dir.join("data.json");
    write_json(&encoded, data)?;
    Ok(vec![csv, manifest, encoded])
}

/// Runs the data experiment of a scenario and writes the trajectory CSV, its
/// manifest and the encoded data set into `dir`.
pub fn run_simulate(s: &Scenario, dir: &Path) -> Result<Vec<PathBuf>> {
    let (run, data) = collect_stage(s)?;
    write_data_files(dir, &run, &data)
}

/// Output of [`run_synthesize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    pub agents: Vec<AgentReport>,
    /// Gains with `mu = 0`, since a data set carries no graph; a verification
    /// run fills in the coupling gain from its scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainSet>,
}

impl SynthesisReport {
    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, |f| f.exit_code)
    }
}

/// Synthesis on a stored data set, without plants or a graph.
pub fn run_synthesize(
    data: &DataSet,
    mode: Mode,
    opts: &SynthesisOptions,
    k1_overrides: &[Option<DMatrix<f64>>],
) -> SynthesisReport {
    match synthesis_stage(data, mode, opts, k1_overrides, &[]) {
        Ok(agents) => {
            let gains = GainSet {
                k1: agents.iter().map(|a| a.k1.clone()).collect(),
                k2: agents.iter().map(|a| a.k2.clone()).collect(),
                mu: 0.0,
                k1_certificates: agents.iter().map(|a| a.k1_certificate.clone()).collect(),
                regulator_certificates: agents.iter().map(|a| a.regulator.clone()).collect(),
            };
            SynthesisReport { mode, failure: None, agents, gains: Some(gains) }
        }
        Err(e) => SynthesisReport {
            mode,
            failure: Some(Failure { stage: "synthesis".into(), message: e.to_string(), exit_code: e.exit_code() }),
            agents: Vec::new(),
            gains: None,
        },
    }
}

/// Output of [`run_verify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingMetrics>,
    #[serde(default)]
    pub files: Vec<PathBuf>,
}

impl VerifyReport {
    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, |f| f.exit_code)
    }
}

/// Closes the loop of a scenario with externally supplied gains. A
/// non-positive `mu` in the gain set is replaced by the scenario's coupling
/// gain.
pub fn run_verify(s: &Scenario, gains: &GainSet, run_opts: &RunOptions) -> VerifyReport {
    let mut report =
        VerifyReport { scenario: s.name.clone(), mu: gains.mu, failure: None, tracking: None, files: Vec::new() };
    let body = |report: &mut VerifyReport| -> Result<()> {
        if gains.n_agents() != s.n_agents() {
            return Err(Error::Dimension(format!(
                "gain file has {} agents, scenario has {}",
                gains.n_agents(),
                s.n_agents()
            )));
        }
        if !(gains.mu > 0.0) {
            report.mu = gain_stage(s)?.mu;
        }
        let gains = GainSet { mu: report.mu, ..gains.clone() };
        let (run, metrics) = verify_stage(s, &gains)?;
        if let Some(dir) = &run_opts.csv_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("closed_loop.csv");
            run.write_csv(&path)?;
            report.files.push(path);
        }
        report.tracking = Some(metrics);
        Ok(())
    };
    if let Err(e) = body(&mut report) {
        report.failure =
            Some(Failure { stage: "closed_loop".into(), message: e.to_string(), exit_code: e.exit_code() });
    }
    report
}
