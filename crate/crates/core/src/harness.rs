//! Policies, experiment configuration and orchestration.
//!
//! The replica count comes from the analytic plan and the per-task choice of
//! SeVs from the chosen policy.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, NetworkConditions, ReplicaPlan};
use crate::bandit::{self, ArmId, BanditError, DelayLaw, Learner, LearnerConfig, RegretReport};
use crate::simcore::{
    self, derive_seed, DecisionContext, FeedbackDelay, McPoint, MetricsRow, OffloadPolicy,
    RecordingScope, RunSummary, Scenario, SimError, Spread,
};
use crate::traffic::{self, ChannelParams, RoadSpec, SpeedLaw, Topology, TrafficError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: `{field}` {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("output error: {0}")]
    Output(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn config_err(field: &str, reason: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// Uniformly random single SeV.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn pick(&mut self, candidates: &[u64]) -> u64 {
        assert!(!candidates.is_empty(), "no candidates");
        candidates[self.rng.random_range(0..candidates.len())]
    }
}

impl OffloadPolicy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn replicas(&self) -> u32 {
        1
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Vec<u64> {
        let ids: Vec<u64> = ctx.candidates.iter().map(|c| c.sev_id).collect();
        vec![self.pick(&ids)]
    }
}

/// Single SeV minimizing `upload + (backlog + 1)/μ + feedback` under the
/// true state; ties go to the smallest id.
#[derive(Debug, Default)]
pub struct GeniePolicy;

impl GeniePolicy {
    pub fn score(c: &simcore::CandidateView) -> f64 {
        c.upload_delay_s + (c.backlog as f64 + 1.0) / c.mu + c.mean_feedback_s
    }
}

impl OffloadPolicy for GeniePolicy {
    fn name(&self) -> &str {
        "genie"
    }

    fn replicas(&self) -> u32 {
        1
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Vec<u64> {
        let best = ctx
            .candidates
            .iter()
            .min_by(|a, b| {
                Self::score(a)
                    .total_cmp(&Self::score(b))
                    .then(a.sev_id.cmp(&b.sev_id))
            })
            .expect("no candidates");
        vec![best.sev_id]
    }
}

/// One LTRA learner per TaV.
pub struct LtraPolicy {
    name: String,
    config: LearnerConfig,
    learners: HashMap<u64, Learner>,
    /// `(tav, task)` → (learner task index, replicas not yet observed).
    pending: HashMap<(u64, u64), (u64, usize)>,
}

impl LtraPolicy {
    pub fn new(config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        let name = if config.k_replicas == 1 {
            "single"
        } else {
            "ltra"
        };
        Ok(Self {
            name: name.to_string(),
            config,
            learners: HashMap::new(),
            pending: HashMap::new(),
        })
    }

    /// Reports as `name` regardless of `K`.
    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn learner(&self, tav: u64) -> Option<&Learner> {
        self.learners.get(&tav)
    }
}

impl OffloadPolicy for LtraPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn replicas(&self) -> u32 {
        self.config.k_replicas as u32
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Vec<u64> {
        let config = self.config;
        let learner = self
            .learners
            .entry(ctx.tav_id)
            .or_insert_with(|| Learner::new(config).expect("validated config"));
        let arms: Vec<ArmId> = ctx.candidates.iter().map(|c| ArmId(c.sev_id)).collect();
        let d = learner.decide(&arms);
        self.pending
            .insert((ctx.tav_id, ctx.task_id), (d.task_index, d.subset.len()));
        d.subset.into_iter().map(|a| a.0).collect()
    }

    fn observe(&mut self, tav_id: u64, task_id: u64, sev_id: u64, delay_s: f64) {
        let key = (tav_id, task_id);
        let Some((t, remaining)) = self.pending.get_mut(&key) else {
            return;
        };
        let t = *t;
        *remaining -= 1;
        if *remaining == 0 {
            self.pending.remove(&key);
        }
        self.learners
            .get_mut(&tav_id)
            .expect("learner exists for a pending task")
            .observe(t, ArmId(sev_id), delay_s)
            .expect("replica was selected");
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Genie,
    Random,
    Single,
    Ltra,
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "genie" => Ok(Self::Genie),
            "random" => Ok(Self::Random),
            "single" => Ok(Self::Single),
            "ltra" => Ok(Self::Ltra),
            other => Err(format!(
                "unknown policy `{other}` (expected genie, random, single or ltra)"
            )),
        }
    }
}

/// Network conditions as configured. Densities are given either as a total
/// plus the TaV:SeV ratio, or as `gamma_t` and `gamma_s` directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsSpec {
    pub lambda0: f64,
    #[serde(default = "default_mu")]
    pub mu_c: f64,
    #[serde(default = "default_pe")]
    pub p_e: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_s: Option<f64>,
    #[serde(default = "default_range")]
    pub range_km: f64,
    #[serde(default = "default_theta")]
    pub theta_f: f64,
}

fn default_mu() -> f64 {
    10.0
}
fn default_pe() -> f64 {
    0.02
}
fn default_range() -> f64 {
    0.2
}
fn default_theta() -> f64 {
    1.0
}

pub const DEFAULT_TOTAL_DENSITY: f64 = 25.0;

impl ConditionsSpec {
    /// Conditions of the published replica grid: total density 25/km, `μ = 10`, `p_e = 0.02`,
    /// `R = 200 m`.
    pub fn table1(lambda0: f64, ratio: f64) -> Self {
        Self {
            lambda0,
            mu_c: default_mu(),
            p_e: default_pe(),
            total_density: Some(DEFAULT_TOTAL_DENSITY),
            ratio: Some(ratio),
            gamma_t: None,
            gamma_s: None,
            range_km: default_range(),
            theta_f: default_theta(),
        }
    }

    pub fn resolve(&self) -> Result<NetworkConditions> {
        let explicit = self.gamma_t.is_some() || self.gamma_s.is_some();
        let split = self.total_density.is_some() || self.ratio.is_some();
        let cond = match (explicit, split) {
            (true, true) => {
                return Err(config_err(
                    "conditions",
                    "give either total_density/ratio or gamma_t/gamma_s, not both",
                ))
            }
            (true, false) => {
                let gt = self
                    .gamma_t
                    .ok_or_else(|| config_err("conditions.gamma_t", "is required with gamma_s"))?;
                let gs = self
                    .gamma_s
                    .ok_or_else(|| config_err("conditions.gamma_s", "is required with gamma_t"))?;
                NetworkConditions::new(
                    self.lambda0,
                    self.mu_c,
                    self.p_e,
                    gt,
                    gs,
                    self.range_km,
                    self.theta_f,
                )
            }
            (false, _) => {
                let ratio = self
                    .ratio
                    .ok_or_else(|| config_err("conditions.ratio", "is required"))?;
                let total = self.total_density.unwrap_or(DEFAULT_TOTAL_DENSITY);
                if !(total > 0.0) {
                    return Err(config_err(
                        "conditions.total_density",
                        format!("must be positive, got {total}"),
                    ));
                }
                NetworkConditions::from_total_density(
                    self.lambda0,
                    self.mu_c,
                    self.p_e,
                    total,
                    ratio,
                    self.range_km,
                    self.theta_f,
                )
            }
        };
        cond.map_err(|e| match e {
            AnalyticsError::InvalidConditions { field, reason } => {
                config_err(&format!("conditions.{field}"), reason)
            }
            other => other.into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// PPP placement from the configured densities, then constant-velocity
    /// motion.
    Synthetic {
        #[serde(default = "default_road")]
        road_km: f64,
        #[serde(default = "default_true")]
        ring: bool,
        #[serde(default = "default_timestep")]
        timestep_s: f64,
        #[serde(default = "default_speed")]
        speed: SpeedLaw,
    },
    /// A trace CSV.
    Trace {
        path: PathBuf,
        /// Closes the road into a ring of this length.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ring_length_m: Option<f64>,
    },
    /// Fixed arms with known delay laws and no queueing.
    Stationary { arms: Vec<DelayLaw> },
}

fn default_road() -> f64 {
    10.0
}
fn default_true() -> bool {
    true
}
fn default_timestep() -> f64 {
    1.0
}
fn default_speed() -> SpeedLaw {
    SpeedLaw::Uniform {
        max_mps: traffic::MAX_SPEED_MPS,
    }
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::Synthetic {
            road_km: default_road(),
            ring: true,
            timestep_s: default_timestep(),
            speed: default_speed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_d_max")]
    pub d_max: f64,
    /// Defaults to the analytic plan's `K*` for `ltra`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_replicas: Option<u32>,
}

fn default_alpha() -> f64 {
    0.5
}
fn default_levels() -> usize {
    100
}
fn default_d_max() -> f64 {
    0.5
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            levels: default_levels(),
            d_max: default_d_max(),
            k_replicas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_service")]
    pub service_rate: Spread,
    #[serde(default = "default_erasure")]
    pub erasure: Spread,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub feedback: FeedbackDelay,
    #[serde(default = "default_scope")]
    pub scope: RecordingScope,
}

fn default_service() -> Spread {
    Spread::Uniform {
        low: 8.0,
        high: 12.0,
    }
}
fn default_erasure() -> Spread {
    Spread::Uniform {
        low: 0.01,
        high: 0.03,
    }
}
fn default_scope() -> RecordingScope {
    RecordingScope::AllTavs
}

impl Default for SimulationSpec {
    fn default() -> Self {
        Self {
            service_rate: default_service(),
            erasure: default_erasure(),
            channel: ChannelParams::default(),
            feedback: FeedbackDelay::Zero,
            scope: default_scope(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Horizon {
    Seconds(f64),
    /// Recorded tasks (approximately, for DES scenarios).
    Tasks(u64),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_json: Option<PathBuf>,
}

/// A complete, reproducible experiment description.
///
/// ```json
/// {
///   "scenario": {"kind": "synthetic", "road_km": 10.0},
///   "conditions": {"lambda0": 4.0, "ratio": 0.25},
///   "learner": {"alpha": 0.5, "levels": 100, "d_max": 0.5},
///   "policy": "ltra",
///   "horizon": {"seconds": 300.0},
///   "seed": 1,
///   "output": {"metrics_csv": "metrics.csv", "summary_json": "summary.json"}
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scenario: ScenarioSpec,
    pub conditions: ConditionsSpec,
    #[serde(default)]
    pub learner: LearnerSpec,
    pub policy: PolicyKind,
    pub horizon: Horizon,
    pub seed: u64,
    #[serde(default)]
    pub simulation: SimulationSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_err("config", e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every field and returns the resolved conditions.
    pub fn validate(&self) -> Result<NetworkConditions> {
        let cond = self.conditions.resolve()?;
        let l = &self.learner;
        if !(l.alpha > 0.0 && l.alpha.is_finite()) {
            return Err(config_err(
                "learner.alpha",
                format!("must be positive, got {}", l.alpha),
            ));
        }
        if l.levels < 2 {
            return Err(config_err(
                "learner.levels",
                format!("must be at least 2, got {}", l.levels),
            ));
        }
        if !(l.d_max > 0.0 && l.d_max.is_finite()) {
            return Err(config_err(
                "learner.d_max",
                format!("must be positive, got {}", l.d_max),
            ));
        }
        if l.k_replicas == Some(0) {
            return Err(config_err("learner.k_replicas", "must be at least 1"));
        }
        match self.horizon {
            Horizon::Seconds(s) if !(s > 0.0 && s.is_finite()) => {
                return Err(config_err(
                    "horizon.seconds",
                    format!("must be positive, got {s}"),
                ))
            }
            Horizon::Tasks(0) => return Err(config_err("horizon.tasks", "must be positive")),
            _ => {}
        }
        match &self.scenario {
            ScenarioSpec::Synthetic {
                road_km,
                timestep_s,
                ..
            } => {
                if !(*road_km > 0.0 && road_km.is_finite()) {
                    return Err(config_err(
                        "scenario.road_km",
                        format!("must be positive, got {road_km}"),
                    ));
                }
                if *road_km * 1000.0 <= 2.0 * cond.range_km * 1000.0 {
                    return Err(config_err(
                        "scenario.road_km",
                        "must exceed twice the range",
                    ));
                }
                if !(*timestep_s > 0.0) {
                    return Err(config_err(
                        "scenario.timestep_s",
                        format!("must be positive, got {timestep_s}"),
                    ));
                }
            }
            ScenarioSpec::Trace {
                ring_length_m: Some(len),
                ..
            } if !(*len > 0.0) => {
                return Err(config_err(
                    "scenario.ring_length_m",
                    format!("must be positive, got {len}"),
                ));
            }
            ScenarioSpec::Stationary { arms } => {
                if arms.is_empty() {
                    return Err(config_err("scenario.arms", "must not be empty"));
                }
                if arms.iter().any(|a| !(a.shift >= 0.0 && a.rate > 0.0)) {
                    return Err(config_err("scenario.arms", "need shift ≥ 0 and rate > 0"));
                }
                if self.policy == PolicyKind::Genie {
                    return Err(config_err("policy", "genie has no meaning without queues"));
                }
            }
            _ => {}
        }
        let s = &self.simulation;
        let (low, high) = s.service_rate.bounds();
        if !(low > 0.0 && high >= low && high.is_finite()) {
            return Err(config_err(
                "simulation.service_rate",
                "needs 0 < low ≤ high",
            ));
        }
        let (low, high) = s.erasure.bounds();
        if !(low >= 0.0 && high <= 1.0 && high >= low) {
            return Err(config_err("simulation.erasure", "needs 0 ≤ low ≤ high ≤ 1"));
        }
        s.channel
            .validate()
            .map_err(|e| config_err("simulation.channel", e.to_string()))?;
        Ok(cond)
    }

    /// The replica count the policy will use.
    pub fn replicas(&self, plan: &ReplicaPlan) -> u32 {
        match self.policy {
            PolicyKind::Genie | PolicyKind::Random | PolicyKind::Single => 1,
            PolicyKind::Ltra => self.learner.k_replicas.unwrap_or(plan.k_star),
        }
    }
}

/// Everything a finished experiment reports.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub plan: ReplicaPlan,
    #[serde(rename = "K")]
    pub k: u32,
    pub summary: RunSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regret: Option<RegretReport>,
    #[serde(skip)]
    pub metrics: Vec<MetricsRow>,
}

/// Builds the policy a config asks for with `K` replicas.
pub fn build_policy(
    kind: PolicyKind,
    learner: &LearnerSpec,
    k: u32,
    seed: u64,
) -> Result<Box<dyn OffloadPolicy + Send>> {
    let cfg = LearnerConfig {
        alpha: learner.alpha,
        levels: learner.levels,
        d_max: learner.d_max,
        k_replicas: k as usize,
    };
    Ok(match kind {
        PolicyKind::Genie => Box::new(GeniePolicy),
        PolicyKind::Random => Box::new(RandomPolicy::new(seed)),
        PolicyKind::Single => Box::new(
            LtraPolicy::new(LearnerConfig {
                k_replicas: 1,
                ..cfg
            })?
            .named("single"),
        ),
        PolicyKind::Ltra => Box::new(LtraPolicy::new(cfg)?.named("ltra")),
    })
}

const SEED_GEOMETRY: u64 = 11;
const SEED_MOBILITY: u64 = 12;
const SEED_POLICY: u64 = 13;
const SEED_RUN: u64 = 14;

/// Builds the DES scenario for a synthetic or trace config.
pub fn build_scenario(config: &ExperimentConfig, cond: &NetworkConditions) -> Result<Scenario> {
    let (trace, topology) = match &config.scenario {
        ScenarioSpec::Synthetic {
            road_km,
            ring,
            timestep_s,
            speed,
        } => {
            let road = RoadSpec {
                length_km: *road_km,
                gamma_t: cond.gamma_t,
                gamma_s: cond.gamma_s,
            };
            let snapshot =
                traffic::generate_ppp_snapshot(&road, derive_seed(config.seed, SEED_GEOMETRY))?;
            if !snapshot.iter().any(|v| v.role == traffic::Role::Tav) {
                return Err(config_err(
                    "conditions",
                    "synthetic road holds no TaV; raise the TaV density or road length",
                ));
            }
            let topology = if *ring {
                Topology::Ring {
                    length_m: road_km * 1000.0,
                }
            } else {
                Topology::Open
            };
            let tavs = snapshot
                .iter()
                .filter(|v| v.role == traffic::Role::Tav)
                .count();
            let seconds = horizon_seconds(config, cond, tavs);
            let trace = traffic::generate_synthetic_trace(
                &snapshot,
                seconds + config.learner.d_max,
                *timestep_s,
                *speed,
                topology,
                derive_seed(config.seed, SEED_MOBILITY),
            )?;
            (trace, topology)
        }
        ScenarioSpec::Trace {
            path,
            ring_length_m,
        } => {
            let trace = traffic::load_trace(path)?;
            if trace.frames.is_empty() {
                return Err(config_err("scenario.path", "trace is empty"));
            }
            let topology =
                ring_length_m.map_or(Topology::Open, |length_m| Topology::Ring { length_m });
            (trace, topology)
        }
        ScenarioSpec::Stationary { .. } => {
            return Err(config_err(
                "scenario",
                "stationary scenarios do not use the event simulator",
            ))
        }
    };
    let tavs = trace.frames[0].by_role(traffic::Role::Tav).count().max(1);
    Ok(Scenario {
        trace,
        topology,
        range_m: cond.range_km * 1000.0,
        lambda0: cond.lambda0,
        service_rate: config.simulation.service_rate,
        erasure: config.simulation.erasure,
        channel: config.simulation.channel,
        feedback: config.simulation.feedback,
        d_max: config.learner.d_max,
        horizon_s: horizon_seconds(config, cond, tavs),
        scope: config.simulation.scope,
    })
}

fn horizon_seconds(config: &ExperimentConfig, cond: &NetworkConditions, tavs: usize) -> f64 {
    match config.horizon {
        Horizon::Seconds(s) => s,
        Horizon::Tasks(n) => {
            let recorders = match config.simulation.scope {
                RecordingScope::Tagged { .. } => 1,
                RecordingScope::AllTavs => tavs.max(1),
            };
            n as f64 / (cond.lambda0 * recorders as f64)
        }
    }
}

/// Outcome of a stationary-arm run.
#[derive(Debug, Clone)]
pub struct StationaryRun {
    pub losses: Vec<f64>,
    pub choices: Vec<Vec<ArmId>>,
    pub metrics: Vec<MetricsRow>,
    pub summary: RunSummary,
    pub regret: RegretReport,
}

/// Runs a policy against fixed arms `0..N` whose delays follow `laws`; the
/// loss of a task is its minimum clipped replica delay.
pub fn run_stationary(
    kind: PolicyKind,
    learner: LearnerConfig,
    laws: &[DelayLaw],
    tasks: u64,
    seed: u64,
) -> Result<StationaryRun> {
    learner.validate()?;
    let arms: Vec<ArmId> = (0..laws.len() as u64).map(ArmId).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SEED_RUN));
    let mut pick = ChaCha8Rng::seed_from_u64(derive_seed(seed, SEED_POLICY));
    let k = match kind {
        PolicyKind::Single | PolicyKind::Random => 1,
        PolicyKind::Ltra => learner.k_replicas,
        PolicyKind::Genie => {
            return Err(config_err("policy", "genie has no meaning without queues"))
        }
    };
    let mut learner = Learner::new(LearnerConfig {
        k_replicas: k,
        ..learner
    })?;
    let d_max = learner.config().d_max;
    let name = match kind {
        PolicyKind::Single => "single",
        PolicyKind::Random => "random",
        _ => "ltra",
    };
    let mut losses = Vec::with_capacity(tasks as usize);
    let mut choices = Vec::with_capacity(tasks as usize);
    let mut metrics = Vec::with_capacity(tasks as usize);
    let (mut total, mut completed) = (0.0, 0u64);
    for i in 0..tasks {
        let subset: Vec<ArmId> = match kind {
            PolicyKind::Random => sample(&mut pick, arms.len(), k.min(arms.len()))
                .into_iter()
                .map(|j| arms[j])
                .collect(),
            _ => learner.decide(&arms).subset,
        };
        let mut loss = d_max;
        let mut outcomes = Vec::with_capacity(subset.len());
        for a in &subset {
            let d = laws[a.0 as usize]
                .sample(&mut rng)
                .min(d_max)
                .max(f64::MIN_POSITIVE);
            loss = loss.min(d);
            outcomes.push((*a, d));
        }
        if kind != PolicyKind::Random {
            learner.observe_outcomes(i + 1, &outcomes)?;
        }
        total += loss;
        if loss < d_max {
            completed += 1;
        }
        let n = i + 1;
        metrics.push(MetricsRow {
            task_index: n,
            policy: name.to_string(),
            k: k as u32,
            inst_delay_s: loss,
            mean_delay_s: total / n as f64,
            completion_ratio: completed as f64 / n as f64,
            failed: false,
        });
        losses.push(loss);
        choices.push(subset);
    }
    let regret = bandit::empirical_regret(
        &losses,
        &bandit::GroundTruth::Stationary(laws.to_vec()),
        k,
        d_max,
    )?;
    let n = tasks.max(1) as f64;
    let summary = RunSummary {
        policy: name.to_string(),
        k: k as u32,
        tasks,
        completed,
        deadline_misses: tasks - completed,
        failures: 0,
        unserved: 0,
        mean_delay_s: total / n,
        completion_ratio: completed as f64 / n,
        mean_replicas: k.min(laws.len()) as f64,
    };
    Ok(StationaryRun {
        losses,
        choices,
        metrics,
        summary,
        regret,
    })
}

/// Validates, runs and (if configured) writes the metrics CSV and summary
/// JSON.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let cond = config.validate()?;
    let plan = analytics::optimal_replicas(&cond)?;
    let k = config.replicas(&plan);
    let policy_seed = derive_seed(config.seed, SEED_POLICY);
    let (summary, metrics, regret) = match &config.scenario {
        ScenarioSpec::Stationary { arms } => {
            let tasks = match config.horizon {
                Horizon::Tasks(n) => n,
                Horizon::Seconds(s) => (s * cond.lambda0).round().max(1.0) as u64,
            };
            let lc = LearnerConfig {
                alpha: config.learner.alpha,
                levels: config.learner.levels,
                d_max: config.learner.d_max,
                k_replicas: k as usize,
            };
            let r = run_stationary(config.policy, lc, arms, tasks, config.seed)?;
            (r.summary, r.metrics, Some(r.regret))
        }
        _ => {
            let scenario = build_scenario(config, &cond)?;
            let mut policy = build_policy(config.policy, &config.learner, k, policy_seed)?;
            let out = simcore::run(
                &scenario,
                policy.as_mut(),
                derive_seed(config.seed, SEED_RUN),
            )?;
            (out.summary, out.metrics, None)
        }
    };
    let report = ExperimentReport {
        config: config.clone(),
        seed: config.seed,
        plan,
        k,
        summary,
        regret,
        metrics,
    };
    if let Some(path) = &config.output.metrics_csv {
        let file = create(path)?;
        write_metrics_csv(&report.metrics, file)?;
    }
    if let Some(path) = &config.output.summary_json {
        let mut file = create(path)?;
        serde_json::to_writer_pretty(&mut file, &report)
            .map_err(|e| HarnessError::Output(e.to_string()))?;
        writeln!(file).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(report)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|source| HarnessError::Io {
            path: path.into(),
            source,
        })
}

pub const METRICS_HEADER: &str =
    "task_index,policy,K,inst_delay_s,mean_delay_s,completion_ratio,failed";

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(METRICS_HEADER.split(','))
        .map_err(|e| HarnessError::Output(e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| HarnessError::Output(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Output(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[serde(rename = "K")]
    K,
    Lambda0,
    Ratio,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "K" | "k" => Ok(Self::K),
            "lambda0" => Ok(Self::Lambda0),
            "ratio" => Ok(Self::Ratio),
            other => Err(format!(
                "unknown axis `{other}` (expected K, lambda0 or ratio)"
            )),
        }
    }
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::K => "K",
            SweepAxis::Lambda0 => "lambda0",
            SweepAxis::Ratio => "ratio",
        }
    }

    /// `base` with the axis set to `value`, outputs cleared and the seed
    /// derived from `(base seed, value)`.
    pub fn apply(&self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        c.output = OutputSpec::default();
        c.seed = derive_seed(base.seed, value.to_bits());
        match self {
            SweepAxis::K => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(config_err(
                        "values",
                        format!("K must be a positive integer, got {value}"),
                    ));
                }
                c.learner.k_replicas = Some(value as u32);
            }
            SweepAxis::Lambda0 => c.conditions.lambda0 = value,
            SweepAxis::Ratio => {
                if c.conditions.gamma_t.is_some() {
                    return Err(config_err(
                        "conditions",
                        "a ratio sweep needs total_density/ratio densities",
                    ));
                }
                c.conditions.ratio = Some(value);
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ExperimentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }

    /// Axis value with the lowest final mean delay among successful points.
    pub fn best(&self) -> Option<f64> {
        self.points
            .iter()
            .filter_map(|p| p.report.as_ref().map(|r| (p.value, r.summary.mean_delay_s)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(v, _)| v)
    }
}

/// Runs `base` once per value, in parallel. Failed points are reported, not
/// fatal.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(config_err("values", "must not be empty"));
    }
    let configs = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let points = configs
        .par_iter()
        .zip(values.par_iter())
        .map(|(c, &value)| match run_experiment(c) {
            Ok(report) => SweepPoint {
                value,
                seed: c.seed,
                report: Some(report),
                error: None,
            },
            Err(e) => SweepPoint {
                value,
                seed: c.seed,
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(SweepReport { axis, points })
}

/// Merged metrics of every successful point, prefixed by a `sweep_<axis>`
/// column.
pub fn write_sweep_csv<W: Write>(report: &SweepReport, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    let err = |e: csv::Error| HarnessError::Output(e.to_string());
    let axis = format!("sweep_{}", report.axis.label());
    let mut header = vec![axis.as_str()];
    header.extend(METRICS_HEADER.split(','));
    w.write_record(&header).map_err(err)?;
    for p in &report.points {
        let Some(r) = &p.report else { continue };
        for m in &r.metrics {
            w.serialize((p.value, m)).map_err(err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::Output(e.to_string()))
}

/// One row of the published replica table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Row {
    pub lambda0: f64,
    /// `γ_t/γ_s = 1/ratio_den`.
    pub ratio_den: u32,
    pub k_theory: u32,
    pub k_sim: u32,
    pub k_tilde: f64,
    pub k_tilde_round: u32,
}

impl Table1Row {
    pub fn ratio(&self) -> f64 {
        1.0 / f64::from(self.ratio_den)
    }

    pub fn conditions(&self) -> NetworkConditions {
        ConditionsSpec::table1(self.lambda0, self.ratio())
            .resolve()
            .expect("valid table conditions")
    }
}

const fn row(
    lambda0: f64,
    ratio_den: u32,
    k_theory: u32,
    k_sim: u32,
    k_tilde: f64,
    k_tilde_round: u32,
) -> Table1Row {
    Table1Row {
        lambda0,
        ratio_den,
        k_theory,
        k_sim,
        k_tilde,
        k_tilde_round,
    }
}

/// The 42 published rows, left block then right block.
pub const TABLE1: [Table1Row; 42] = [
    row(2.0, 1, 2, 2, 1.68, 2),
    row(2.0, 2, 4, 4, 3.28, 3),
    row(2.0, 3, 5, 5, 4.65, 5),
    row(2.0, 4, 7, 7, 5.84, 6),
    row(2.0, 5, 8, 8, 6.89, 7),
    row(2.0, 6, 8, 8, 7.81, 8),
    row(2.0, 7, 8, 8, 8.62, 9),
    row(3.0, 1, 1, 1, 1.12, 1),
    row(3.0, 2, 2, 2, 2.19, 2),
    row(3.0, 3, 3, 3, 3.10, 3),
    row(3.0, 4, 4, 4, 3.89, 4),
    row(3.0, 5, 5, 5, 4.59, 5),
    row(3.0, 6, 6, 6, 5.20, 5),
    row(3.0, 7, 6, 6, 5.75, 6),
    row(4.0, 1, 1, 1, 0.84, 1),
    row(4.0, 2, 2, 2, 1.64, 2),
    row(4.0, 3, 2, 2, 2.33, 2),
    row(4.0, 4, 3, 3, 2.92, 3),
    row(4.0, 5, 4, 4, 3.44, 3),
    row(4.0, 6, 4, 4, 3.90, 4),
    row(4.0, 7, 4, 4, 4.31, 4),
    row(2.0, 1, 2, 2, 1.68, 2),
    row(2.5, 1, 1, 1, 1.34, 1),
    row(3.0, 1, 1, 1, 1.12, 1),
    row(3.5, 1, 1, 1, 0.96, 1),
    row(4.0, 1, 1, 1, 0.84, 1),
    row(4.5, 1, 1, 1, 0.74, 1),
    row(5.0, 1, 1, 1, 0.67, 1),
    row(2.0, 3, 5, 5, 4.65, 5),
    row(2.5, 3, 4, 4, 3.72, 4),
    row(3.0, 3, 3, 3, 3.10, 3),
    row(3.5, 3, 3, 3, 2.66, 3),
    row(4.0, 3, 2, 2, 2.33, 2),
    row(4.5, 3, 2, 2, 2.07, 2),
    row(5.0, 3, 2, 2, 1.86, 2),
    row(2.0, 4, 7, 7, 5.84, 6),
    row(2.5, 4, 5, 5, 4.68, 5),
    row(3.0, 4, 4, 4, 3.89, 4),
    row(3.5, 4, 3, 3, 3.34, 3),
    row(4.0, 4, 3, 3, 2.92, 3),
    row(4.5, 4, 3, 3, 2.60, 3),
    row(5.0, 4, 2, 2, 2.34, 2),
];

/// Replica counts searched when reproducing the table.
pub const TABLE1_K_MAX: u32 = 8;
/// Road length of the table's Monte Carlo.
pub const TABLE1_ROAD_KM: f64 = 10.0;

/// This artifact's reproduction of one table row.
#[derive(Debug, Clone, Serialize)]
pub struct Table1Check {
    pub row: Table1Row,
    pub k_tilde: f64,
    pub k_tilde_round: u32,
    pub k_theory: u32,
    pub k_sim: Option<u32>,
    pub sweep: Vec<McPoint>,
}

impl Table1Check {
    pub fn sim_matches_theory(&self) -> bool {
        self.k_sim == Some(self.k_theory)
    }
}

/// Theory and Monte Carlo argmins for every row, `n_tasks` per row.
pub fn validate_table1(rows: &[Table1Row], n_tasks: u64, seed: u64) -> Result<Vec<Table1Check>> {
    let ks: Vec<u32> = (1..=TABLE1_K_MAX).collect();
    rows.par_iter()
        .enumerate()
        .map(|(i, row)| {
            let cond = row.conditions();
            let k_tilde = analytics::near_optimal_replicas(&cond);
            let k_theory = analytics::theoretical_optimum_search(&cond, TABLE1_K_MAX)?;
            let sweep = simcore::monte_carlo_sweep(
                &cond,
                &ks,
                n_tasks,
                TABLE1_ROAD_KM,
                derive_seed(seed, i as u64),
            )?;
            Ok(Table1Check {
                row: *row,
                k_tilde,
                k_tilde_round: (k_tilde.round() as u32).max(1),
                k_theory,
                k_sim: simcore::monte_carlo_argmin(&sweep),
                sweep,
            })
        })
        .collect()
}
