//! Scenario files: everything needed to reproduce one pipeline run.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{has_leader_rooted_spanning_tree, GraphSpec, DEFAULT_SAFETY};
use crate::sim::{validate_schedule, GraphSchedule, InputSignal, NoiseMode, PlantModel, TimeSpan, DEFAULT_STEP};
use crate::synthesis::{ExoSpec, SynthesisOptions};

/// Exact or noisy data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Noisy,
}

/// One entry of the topology schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    /// Time after which the graph is active.
    pub t: f64,
    pub graph: GraphSpec,
}

/// Open-loop experiment that produces the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    /// Collection window `[t0, t1]`.
    pub window: (f64, f64),
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Time at which the initial conditions hold (inside the window).
    pub t_init: f64,
    pub x0: Vec<Vec<f64>>,
    pub v0: Vec<f64>,
    pub inputs: Vec<InputSignal>,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Noise description; required in noisy mode, forbidden in exact mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseMode>,
}

fn default_degree() -> usize {
    crate::opb::DEFAULT_DEGREE
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

fn default_safety() -> f64 {
    DEFAULT_SAFETY
}

fn default_samples() -> usize {
    50
}

fn default_seed() -> u64 {
    7
}

/// Closed-loop verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSpec {
    pub horizon: (f64, f64),
    #[serde(default = "default_step")]
    pub step: f64,
    pub x0: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<Vec<Vec<f64>>>,
    pub v0: Vec<f64>,
    /// Window over which the sup of the tracking error is reported.
    pub metric_window: (f64, f64),
}

/// Coupling-gain selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSpec {
    #[serde(default = "default_safety")]
    pub safety: f64,
    /// Weight bounds used for the gain; defaults to those of the first graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_bounds: Option<(f64, f64)>,
}

impl Default for GainSpec {
    fn default() -> Self {
        Self { safety: DEFAULT_SAFETY, weight_bounds: None }
    }
}

/// Gains fixed from outside, per agent (`null` entries are synthesized).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GainOverrides {
    #[serde(default)]
    pub k1: Vec<Option<Vec<Vec<f64>>>>,
}

/// Sampled soundness check of noisy-data gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundnessSpec {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SoundnessSpec {
    fn default() -> Self {
        Self { samples: default_samples(), seed: default_seed() }
    }
}

/// A complete, validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub exo: ExoSpec,
    /// Follower plants. Used to generate data and as test oracle only.
    pub plants: Vec<PlantModel>,
    pub graph_schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub gain: GainSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub synthesis: SynthesisOptions,
    #[serde(default)]
    pub overrides: GainOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_loop: Option<ClosedLoopSpec>,
    #[serde(default)]
    pub soundness: SoundnessSpec,
}

pub(crate) fn vectors(rows: &[Vec<f64>]) -> Vec<DVector<f64>> {
    rows.iter().map(|r| DVector::from_vec(r.clone())).collect()
}

impl Scenario {
    /// Reads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario =
            serde_json::from_str(text).map_err(|e| Error::Scenario(format!("cannot parse scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn n_agents(&self) -> usize {
        self.plants.len()
    }

    pub fn schedule(&self) -> GraphSchedule {
        self.graph_schedule.iter().map(|e| (e.t, e.graph.clone())).collect()
    }

    pub fn data_span(&self) -> TimeSpan {
        TimeSpan {
            t_start: self.data.window.0,
            t_end: self.data.window.1,
            t_init: self.data.t_init,
            step: self.data.step,
        }
    }

    /// Weight bounds used for the coupling gain.
    pub fn weight_bounds(&self) -> (f64, f64) {
        self.gain.weight_bounds.unwrap_or_else(|| {
            let g = &self.graph_schedule[0].graph;
            (g.eps1(), g.eps2())
        })
    }

    /// Injected `K1` of agent `i`, if any.
    pub fn k1_override(&self, i: usize) -> Result<Option<DMatrix<f64>>> {
        match self.overrides.k1.get(i) {
            Some(Some(rows)) => Ok(Some(crate::linalg::from_rows(rows)?)),
            _ => Ok(None),
        }
    }

    /// Fail-fast checks of dimensions and standing assumptions.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Scenario(msg));
        self.exo.validate().map_err(|e| Error::Scenario(format!("exosystem: {e}")))?;
        let n = self.plants.len();
        if n == 0 {
            return bad("scenario has no followers".into());
        }
        for (i, p) in self.plants.iter().enumerate() {
            p.validate(self.exo.q()).map_err(|e| Error::Scenario(format!("plant {i}: {e}")))?;
        }
        if self.graph_schedule.is_empty() {
            return bad("graph schedule is empty".into());
        }
        for (k, e) in self.graph_schedule.iter().enumerate() {
            if !has_leader_rooted_spanning_tree(&e.graph) {
                return bad(format!("graph {k} has no spanning tree rooted at the leader"));
            }
        }
        let (e1, e2) = self.weight_bounds();
        if !(e1 > 0.0 && e2 >= e1) {
            return bad(format!("invalid weight bounds ({e1}, {e2})"));
        }
        let d = &self.data;
        if !(d.window.0 < d.window.1 && d.t_init >= d.window.0 && d.t_init <= d.window.1) {
            return bad(format!("data window {:?} must contain t_init = {}", d.window, d.t_init));
        }
        if d.degree < 2 {
            return bad("data degree must be at least 2".into());
        }
        if d.x0.len() != n || d.inputs.len() != n {
            return bad("data initial states and inputs must list every follower".into());
        }
        match (self.mode, &d.noise) {
            (Mode::Exact, Some(NoiseMode::Exact) | None) => {}
            (Mode::Exact, Some(_)) => return bad("exact mode forbids a noise level".into()),
            (Mode::Noisy, None | Some(NoiseMode::Exact)) => {
                return bad("noisy mode requires explicit or estimated noise levels".into())
            }
            (Mode::Noisy, Some(NoiseMode::Explicit(c))) => {
                if c.len() != n || c.iter().any(|v| !(*v >= 0.0)) {
                    return bad("noisy mode needs one nonnegative noise level per follower".into());
                }
            }
            (Mode::Noisy, Some(NoiseMode::Estimated)) => {}
        }
        if !self.overrides.k1.is_empty() && self.overrides.k1.len() != n {
            return bad("K1 overrides must list every follower (use null to synthesize)".into());
        }
        for i in 0..n {
            if let Some(k1) = self.k1_override(i)? {
                if k1.shape() != (self.plants[i].m(), self.plants[i].n()) {
                    return bad(format!("K1 override of agent {i} has shape {:?}", k1.shape()));
                }
            }
        }
        if let Some(cl) = &self.closed_loop {
            let span = TimeSpan::forward(cl.horizon.0, cl.horizon.1, cl.step);
            validate_schedule(&self.schedule(), n, span)?;
            if cl.x0.len() != n {
                return bad("closed-loop initial states must list every follower".into());
            }
            if !(cl.metric_window.0 >= cl.horizon.0 && cl.metric_window.1 <= cl.horizon.1) {
                return bad("metric window must lie inside the closed-loop horizon".into());
            }
        }
        Ok(())
    }
}
