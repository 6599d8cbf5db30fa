//! Discrete-event simulation of replicated task offloading.
//!
//! Two engines live here. [`run`] is the full pipeline: TaVs generate
//! Poisson tasks, a policy picks SeVs, the input is multicast and erased
//! independently per receiver, and every surviving replica is served by a
//! FCFS M/M/1 server. [`monte_carlo_sweep`] is the reduced model the analytic
//! delay formula describes: PPP geometry with random replica placement and
//! sojourns drawn from a homogeneous M/M/1 queue.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, NetworkConditions};
use crate::traffic::{self, ChannelParams, RoadSpec, Role, Topology, Trace, TrafficError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("tagged TaV {tav} has no candidate SeV at t = {time_s} s")]
    NoCandidates { tav: u64, time_s: f64 },
    #[error("policy `{policy}` made an invalid selection for task {task}: {reason}")]
    Policy {
        policy: String,
        task: u64,
        reason: String,
    },
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

pub type Result<T> = std::result::Result<T, SimError>;

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for an independent sub-stream of `base` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix64(mix64(base).wrapping_add(stream))
}

fn stream_rng(base: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream))
}

struct Entry<E> {
    time: f64,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Pending events ordered by `(time, insertion sequence)`.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    seq: u64,
    now: f64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics when scheduling into the past.
    pub fn push(&mut self, time: f64, event: E) {
        assert!(
            time >= self.now,
            "event at {time} scheduled before now = {}",
            self.now
        );
        self.heap.push(Entry {
            time,
            seq: self.seq,
            event,
        });
        self.seq += 1;
    }

    pub fn pop(&mut self) -> Option<(f64, E)> {
        let e = self.heap.pop()?;
        self.now = e.time;
        Some((e.time, e.event))
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Service {
    pub start: f64,
    pub completion: f64,
    pub sojourn: f64,
}

/// A FCFS single-server queue.
#[derive(Debug, Clone)]
pub struct SevServer {
    pub sev_id: u64,
    pub mu: f64,
    busy_until: f64,
    last_arrival: f64,
    /// Completion times of jobs that may still be in the system.
    departures: VecDeque<f64>,
    served: u64,
}

impl SevServer {
    pub fn new(sev_id: u64, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(SimError::Scenario(format!(
                "service rate of SeV {sev_id} must be positive, got {mu}"
            )));
        }
        Ok(Self {
            sev_id,
            mu,
            busy_until: 0.0,
            last_arrival: 0.0,
            departures: VecDeque::new(),
            served: 0,
        })
    }

    pub fn busy_until(&self) -> f64 {
        self.busy_until
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    /// Enqueues a job with a given service requirement. Arrivals must be
    /// presented in time order.
    pub fn serve(&mut self, arrival: f64, service_time: f64) -> Service {
        assert!(
            arrival >= self.last_arrival,
            "FCFS arrivals must be time-ordered"
        );
        self.last_arrival = arrival;
        while self.departures.front().is_some_and(|&d| d <= arrival) {
            self.departures.pop_front();
        }
        let start = arrival.max(self.busy_until);
        let completion = start + service_time;
        self.busy_until = completion;
        self.departures.push_back(completion);
        self.served += 1;
        Service {
            start,
            completion,
            sojourn: completion - arrival,
        }
    }

    /// [`serve`](Self::serve) with an exponential service time.
    pub fn serve_random<R: Rng + ?Sized>(&mut self, arrival: f64, rng: &mut R) -> Service {
        let s: f64 = Exp1.sample(rng);
        self.serve(arrival, s / self.mu)
    }

    /// Jobs in the system (queued or in service) at time `t`.
    pub fn backlog_at(&self, t: f64) -> usize {
        self.departures.len() - self.departures.partition_point(|&d| d <= t)
    }

    /// Unfinished work at time `t` in seconds.
    pub fn residual_work(&self, t: f64) -> f64 {
        (self.busy_until - t).max(0.0)
    }
}

/// Poisson arrival instants on `[0, horizon)`.
pub fn generate_arrivals(rate: f64, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    sample_arrivals(rate, horizon, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn sample_arrivals<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite()) || !(horizon > 0.0) {
        return Err(SimError::Scenario(format!(
            "need rate > 0 and horizon > 0, got {rate} and {horizon}"
        )));
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut out = Vec::new();
    let mut t = gap.sample(rng);
    while t < horizon {
        out.push(t);
        t += gap.sample(rng);
    }
    Ok(out)
}

/// Mean sojourn of `n_tasks` Poisson(λ) arrivals at one M/M/1(μ) server,
/// starting empty.
pub fn mm1_mean_sojourn(lambda: f64, mu: f64, n_tasks: u64, seed: u64) -> Result<f64> {
    if !(lambda > 0.0) || n_tasks == 0 {
        return Err(SimError::Scenario(
            "need λ > 0 and at least one task".into(),
        ));
    }
    let mut server = SevServer::new(0, mu)?;
    let mut arrivals = stream_rng(seed, 1);
    let mut services = stream_rng(seed, 2);
    let gap = Exp::new(lambda).expect("positive rate");
    let mut t = 0.0;
    let mut total = 0.0;
    for _ in 0..n_tasks {
        t += gap.sample(&mut arrivals);
        total += server.serve_random(t, &mut services).sojourn;
    }
    Ok(total / n_tasks as f64)
}

/// Independent erasure draws; returns the members that received the input.
pub fn offload<R: Rng + ?Sized>(selected: &[u64], p_e: &[f64], rng: &mut R) -> Vec<u64> {
    assert_eq!(
        selected.len(),
        p_e.len(),
        "one erasure probability per member"
    );
    selected
        .iter()
        .zip(p_e)
        .filter(|(_, &p)| rng.random::<f64>() >= p)
        .map(|(&id, _)| id)
        .collect()
}

/// Execution plus feedback delay of one received replica.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaOutcome {
    pub sev_id: u64,
    pub execution_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// Task delay clipped at `d_max`.
    pub delay_s: f64,
    pub deadline_miss: bool,
    /// Per-member delay clipped at `d_max`; erased members get `d_max`.
    pub per_sev: Vec<(u64, f64)>,
}

/// Task delay `upload + min(execution)` over received replicas. `None` when
/// nothing was received.
pub fn complete(
    upload_s: f64,
    selected: &[u64],
    received: &[ReplicaOutcome],
    d_max: f64,
) -> Option<Completion> {
    let best = received.iter().map(|r| r.execution_s).reduce(f64::min)?;
    let per_sev = selected
        .iter()
        .map(|&id| {
            let d = received
                .iter()
                .find(|r| r.sev_id == id)
                .map_or(d_max, |r| (upload_s + r.execution_s).min(d_max));
            (id, d)
        })
        .collect();
    let raw = upload_s + best;
    Some(Completion {
        delay_s: raw.min(d_max),
        deadline_miss: raw > d_max,
        per_sev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum TaskOutcome {
    Completed {
        delay_s: f64,
    },
    DeadlineMiss,
    /// Every replica was erased.
    Failed,
    /// The TaV had no candidate SeV.
    Unserved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: u64,
    pub tav_id: u64,
    pub gen_time: f64,
    pub selected: Vec<u64>,
    pub received: Vec<u64>,
    pub per_sev_delay: Vec<(u64, f64)>,
    pub upload_delay: f64,
    pub outcome: TaskOutcome,
}

impl TaskRecord {
    pub fn completion_delay(&self) -> Option<f64> {
        match self.outcome {
            TaskOutcome::Completed { delay_s } => Some(delay_s),
            _ => None,
        }
    }

    /// Delay charged to the task: its completion delay, or `d_max` for a
    /// miss or failure.
    pub fn charged_delay(&self, d_max: f64) -> f64 {
        self.completion_delay().unwrap_or(d_max)
    }

    pub fn failed(&self) -> bool {
        self.outcome == TaskOutcome::Failed
    }
}

/// One point of a Monte Carlo sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McPoint {
    pub k: u32,
    pub tasks: u64,
    /// Mean execution delay of non-failed tasks, averaged analytically over
    /// the sojourn draw.
    pub mean_delay_s: f64,
    /// Mean of the sampled first-finishing sojourn.
    pub sampled_delay_s: f64,
    pub failure_ratio: f64,
    /// Per-SeV arrival rate driving the queues.
    pub arrival_rate: f64,
    /// Replica arrival rate per SeV realized by the placement geometry.
    pub measured_arrival_rate: f64,
    pub stable: bool,
}

/// [`monte_carlo_sweep`] at a single `K`.
pub fn monte_carlo_validation(
    cond: &NetworkConditions,
    k: u32,
    n_tasks: u64,
    road_km: f64,
    seed: u64,
) -> Result<McPoint> {
    Ok(monte_carlo_sweep(cond, &[k], n_tasks, road_km, seed)?.remove(0))
}

/// Monte Carlo of the analytic model for every `K` in `ks`, with common
/// random numbers across `K`.
///
/// Vehicles are placed by PPP on a ring of `road_km`; every TaV with at
/// least one candidate contributes one task. The task's candidates are
/// shuffled and the first `K` receive replicas, each erased with probability
/// `p_e`. Sojourns are exponential with rate `μ − λ_c(K)`. Results for a
/// given `K` do not depend on the other entries of `ks`.
pub fn monte_carlo_sweep(
    cond: &NetworkConditions,
    ks: &[u32],
    n_tasks: u64,
    road_km: f64,
    seed: u64,
) -> Result<Vec<McPoint>> {
    cond.validate()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(SimError::Scenario(
            "replica counts must be at least 1".into(),
        ));
    }
    if n_tasks == 0 {
        return Err(SimError::Scenario("n_tasks must be positive".into()));
    }
    let range_m = cond.range_km * 1000.0;
    if !(road_km * 1000.0 > 2.0 * range_m) {
        return Err(SimError::Scenario(format!(
            "road of {road_km} km is too short for a {} km range",
            cond.range_km
        )));
    }
    let road = RoadSpec {
        length_km: road_km,
        gamma_t: cond.gamma_t,
        gamma_s: cond.gamma_s,
    };
    let ring = Topology::Ring {
        length_m: road_km * 1000.0,
    };

    struct Acc {
        k: usize,
        rate: f64,
        gap: f64,
        ok_tasks: u64,
        delay_sum: f64,
        sampled_sum: f64,
        failures: u64,
        replicas: u64,
    }
    let mut acc = ks
        .iter()
        .map(|&k| {
            let rate = analytics::mean_arrival_rate(cond, k)?;
            Ok(Acc {
                k: k as usize,
                rate,
                gap: cond.mu_c - rate,
                ok_tasks: 0,
                delay_sum: 0.0,
                sampled_sum: 0.0,
                failures: 0,
                replicas: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut geometry = stream_rng(seed, 0);
    let mut draws = stream_rng(seed, 1);
    let mut tasks = 0u64;
    let mut sev_total = 0u64;
    let mut erased: Vec<bool> = Vec::new();
    let mut sojourn: Vec<f64> = Vec::new();
    let mut empty_snapshots = 0u32;
    while tasks < n_tasks {
        let snapshot = traffic::sample_ppp_snapshot(&road, &mut geometry)?;
        let sevs: Vec<_> = snapshot
            .iter()
            .filter(|v| v.role == Role::Sev)
            .copied()
            .collect();
        let tavs: Vec<_> = snapshot.iter().filter(|v| v.role == Role::Tav).collect();
        let mut served_any = false;
        for tav in &tavs {
            let mut cands = traffic::candidate_set(tav, &sevs, range_m, ring);
            let n = cands.len();
            for a in acc.iter_mut() {
                a.replicas += a.k.min(n) as u64;
            }
            if n == 0 || tasks >= n_tasks {
                continue;
            }
            served_any = true;
            tasks += 1;
            cands.shuffle(&mut draws);
            erased.clear();
            sojourn.clear();
            for _ in 0..n {
                erased.push(draws.random::<f64>() < cond.p_e);
                sojourn.push(Exp1.sample(&mut draws));
            }
            for a in acc.iter_mut() {
                let m = a.k.min(n);
                let mut got = 0u32;
                let mut best = f64::INFINITY;
                for j in 0..m {
                    if !erased[j] {
                        got += 1;
                        best = best.min(sojourn[j]);
                    }
                }
                if got == 0 {
                    a.failures += 1;
                } else if a.gap > 0.0 {
                    a.ok_tasks += 1;
                    a.delay_sum += 1.0 / (f64::from(got) * a.gap);
                    a.sampled_sum += best / a.gap;
                }
            }
        }
        sev_total += sevs.len() as u64;
        if !served_any {
            empty_snapshots += 1;
            if empty_snapshots > 10_000 && tasks == 0 {
                return Err(SimError::Scenario(
                    "densities too low to place any served TaV".into(),
                ));
            }
        }
    }
    Ok(acc
        .into_iter()
        .zip(ks)
        .map(|(a, &k)| {
            let stable = a.gap > 0.0;
            let mean = |s: f64| {
                if stable && a.ok_tasks > 0 {
                    s / a.ok_tasks as f64
                } else {
                    f64::INFINITY
                }
            };
            McPoint {
                k,
                tasks,
                mean_delay_s: mean(a.delay_sum),
                sampled_delay_s: mean(a.sampled_sum),
                failure_ratio: a.failures as f64 / tasks as f64,
                arrival_rate: a.rate,
                measured_arrival_rate: if sev_total == 0 {
                    0.0
                } else {
                    cond.lambda0 * a.replicas as f64 / sev_total as f64
                },
                stable,
            }
        })
        .collect())
}

/// `K` with the smallest finite mean delay; ties go to the smaller `K`.
pub fn monte_carlo_argmin(points: &[McPoint]) -> Option<u32> {
    points
        .iter()
        .filter(|p| p.mean_delay_s.is_finite())
        .min_by(|a, b| {
            a.mean_delay_s
                .total_cmp(&b.mean_delay_s)
                .then(a.k.cmp(&b.k))
        })
        .map(|p| p.k)
}

/// A fixed value or a uniform range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Spread {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Spread {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Spread::Fixed { value } => value,
            Spread::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Spread::Fixed { value } => value,
            Spread::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Spread::Fixed { value } => (value, value),
            Spread::Uniform { low, high } => (low, high),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackDelay {
    #[default]
    Zero,
    Constant {
        seconds: f64,
    },
    Exponential {
        mean_s: f64,
    },
}

impl FeedbackDelay {
    pub fn mean(&self) -> f64 {
        match *self {
            FeedbackDelay::Zero => 0.0,
            FeedbackDelay::Constant { seconds } => seconds,
            FeedbackDelay::Exponential { mean_s } => mean_s,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            FeedbackDelay::Zero => 0.0,
            FeedbackDelay::Constant { seconds } => seconds,
            FeedbackDelay::Exponential { mean_s } => {
                let e: f64 = Exp1.sample(rng);
                e * mean_s
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordingScope {
    /// Records only this TaV's tasks; it must always have a candidate.
    Tagged { vehicle_id: u64 },
    /// Records every TaV's tasks; tasks without candidates are unserved.
    AllTavs,
}

/// Everything [`run`] needs besides the policy.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub trace: Trace,
    pub topology: Topology,
    pub range_m: f64,
    pub lambda0: f64,
    /// Drawn once per SeV.
    pub service_rate: Spread,
    /// Drawn per task and SeV.
    pub erasure: Spread,
    pub channel: ChannelParams,
    pub feedback: FeedbackDelay,
    pub d_max: f64,
    pub horizon_s: f64,
    pub scope: RecordingScope,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::Scenario(m));
        if self.trace.frames.is_empty() {
            return bad("trace has no frames".into());
        }
        if !(self.range_m > 0.0) {
            return bad(format!("range must be positive, got {}", self.range_m));
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        let (lo, _) = self.service_rate.bounds();
        if !(lo > 0.0) {
            return bad("service rates must be positive".into());
        }
        let (lo, hi) = self.erasure.bounds();
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad("erasure probabilities must lie in [0, 1]".into());
        }
        if !(self.d_max > 0.0) {
            return bad(format!("d_max must be positive, got {}", self.d_max));
        }
        if !(self.horizon_s > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon_s));
        }
        if !(self.feedback.mean() >= 0.0) {
            return bad("feedback delay must be non-negative".into());
        }
        self.channel.validate()?;
        Ok(())
    }
}

/// What a policy may see about one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateView {
    pub sev_id: u64,
    /// Jobs currently at the SeV (true global state).
    pub backlog: usize,
    pub mu: f64,
    /// Unicast upload delay to this SeV alone.
    pub upload_delay_s: f64,
    pub mean_feedback_s: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub tav_id: u64,
    pub task_id: u64,
    pub now: f64,
    /// Sorted by `sev_id`.
    pub candidates: &'a [CandidateView],
}

/// An offloading policy driven by [`run`].
pub trait OffloadPolicy {
    fn name(&self) -> &str;

    /// Nominal number of replicas, for reporting.
    fn replicas(&self) -> u32;

    /// Non-empty subset of the candidate ids.
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Vec<u64>;

    /// Delay of one replica, clipped at `d_max`; erased or late replicas
    /// report `d_max`. Delivered at `gen_time + delay`.
    fn observe(&mut self, _tav_id: u64, _task_id: u64, _sev_id: u64, _delay_s: f64) {}
}

/// Per-task metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub task_index: u64,
    pub policy: String,
    #[serde(rename = "K")]
    pub k: u32,
    pub inst_delay_s: f64,
    pub mean_delay_s: f64,
    pub completion_ratio: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: String,
    #[serde(rename = "K")]
    pub k: u32,
    /// Recorded tasks that had at least one candidate.
    pub tasks: u64,
    pub completed: u64,
    pub deadline_misses: u64,
    pub failures: u64,
    pub unserved: u64,
    pub mean_delay_s: f64,
    pub completion_ratio: f64,
    pub mean_replicas: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TaskRecord>,
    pub metrics: Vec<MetricsRow>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Generate { tav: u64 },
    Arrive { task: usize, slot: usize },
    Done { task: usize, slot: usize },
    Deadline { task: usize },
}

struct Replica {
    sev_id: u64,
    received: bool,
    feedback_extra: f64,
    execution: Option<f64>,
    reported: bool,
}

struct InFlight {
    task_id: u64,
    tav_id: u64,
    gen_time: f64,
    upload: f64,
    replicas: Vec<Replica>,
    recorded: bool,
}

const STREAM_ARRIVALS: u64 = 1 << 40;
const STREAM_SERVICE_RATE: u64 = 2 << 40;
const STREAM_SERVICE: u64 = 1;
const STREAM_ERASURE: u64 = 2;
const STREAM_FEEDBACK: u64 = 3;

struct Engine<'a> {
    sc: &'a Scenario,
    policy: &'a mut dyn OffloadPolicy,
    seed: u64,
    queue: EventQueue<Event>,
    servers: HashMap<u64, SevServer>,
    arrivals: HashMap<u64, (ChaCha8Rng, Exp<f64>)>,
    service_rng: ChaCha8Rng,
    erasure_rng: ChaCha8Rng,
    feedback_rng: ChaCha8Rng,
    tasks: Vec<InFlight>,
    records: Vec<TaskRecord>,
    unserved: u64,
    next_task_id: u64,
}

impl Engine<'_> {
    fn server(&mut self, id: u64) -> Result<&mut SevServer> {
        if !self.servers.contains_key(&id) {
            let mu = self
                .sc
                .service_rate
                .sample(&mut stream_rng(self.seed, STREAM_SERVICE_RATE ^ id));
            self.servers.insert(id, SevServer::new(id, mu)?);
        }
        Ok(self.servers.get_mut(&id).expect("just inserted"))
    }

    fn records_tav(&self, tav: u64) -> bool {
        match self.sc.scope {
            RecordingScope::Tagged { vehicle_id } => vehicle_id == tav,
            RecordingScope::AllTavs => true,
        }
    }

    fn schedule_next_task(&mut self, tav: u64, now: f64) {
        let (rng, gap) = self.arrivals.get_mut(&tav).expect("registered TaV");
        let t = now + gap.sample(rng);
        if t < self.sc.horizon_s {
            self.queue.push(t, Event::Generate { tav });
        }
    }

    fn generate(&mut self, tav_id: u64, now: f64) -> Result<()> {
        self.schedule_next_task(tav_id, now);
        let sc = self.sc;
        let frame = sc.trace.frame_at(now).expect("non-empty trace");
        let Some(tav) = frame.vehicle(tav_id).filter(|v| v.role == Role::Tav) else {
            return Ok(());
        };
        let ids = traffic::candidate_set(tav, &frame.vehicles, sc.range_m, sc.topology);
        let task_id = self.next_task_id;
        self.next_task_id += 1;
        if ids.is_empty() {
            return match sc.scope {
                RecordingScope::Tagged { vehicle_id } if vehicle_id == tav_id => {
                    Err(SimError::NoCandidates {
                        tav: tav_id,
                        time_s: now,
                    })
                }
                RecordingScope::Tagged { .. } => Ok(()),
                RecordingScope::AllTavs => {
                    self.unserved += 1;
                    self.records.push(TaskRecord {
                        task_id,
                        tav_id,
                        gen_time: now,
                        selected: Vec::new(),
                        received: Vec::new(),
                        per_sev_delay: Vec::new(),
                        upload_delay: 0.0,
                        outcome: TaskOutcome::Unserved,
                    });
                    Ok(())
                }
            };
        }
        let mut views = Vec::with_capacity(ids.len());
        let mut rates = HashMap::with_capacity(ids.len());
        for &id in &ids {
            let sev = frame.vehicle(id).expect("candidate is in frame");
            let rate = traffic::uplink_rate(tav, sev, &sc.channel, sc.topology);
            rates.insert(id, rate);
            let server = self.server(id)?;
            views.push(CandidateView {
                sev_id: id,
                backlog: server.backlog_at(now),
                mu: server.mu,
                upload_delay_s: sc.channel.input_bits / rate,
                mean_feedback_s: sc.feedback.mean() + sc.channel.output_bits / rate,
            });
        }
        let ctx = DecisionContext {
            tav_id,
            task_id,
            now,
            candidates: &views,
        };
        let selected = self.policy.decide(&ctx);
        let invalid = |reason: String| SimError::Policy {
            policy: self.policy.name().to_string(),
            task: task_id,
            reason,
        };
        if selected.is_empty() {
            return Err(invalid("empty selection".into()));
        }
        let mut seen = selected.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != selected.len() {
            return Err(invalid("duplicate SeV".into()));
        }
        if let Some(bad) = selected.iter().find(|id| !rates.contains_key(id)) {
            return Err(invalid(format!("SeV {bad} is not a candidate")));
        }
        let sel_rates: Vec<f64> = selected.iter().map(|id| rates[id]).collect();
        let (_, upload) =
            traffic::multicast_rate_and_upload_delay(&sel_rates, sc.channel.input_bits)
                .expect("non-empty selection");
        let p_e: Vec<f64> = selected
            .iter()
            .map(|_| sc.erasure.sample(&mut self.erasure_rng))
            .collect();
        let received = offload(&selected, &p_e, &mut self.erasure_rng);

        let index = self.tasks.len();
        let replicas = selected
            .iter()
            .map(|&id| Replica {
                sev_id: id,
                received: received.contains(&id),
                feedback_extra: sc.channel.output_bits / rates[&id],
                execution: None,
                reported: false,
            })
            .collect::<Vec<_>>();
        for (slot, r) in replicas.iter().enumerate() {
            if r.received {
                self.queue
                    .push(now + upload, Event::Arrive { task: index, slot });
            }
        }
        self.queue
            .push(now + sc.d_max, Event::Deadline { task: index });
        let recorded = self.records_tav(tav_id);
        self.tasks.push(InFlight {
            task_id,
            tav_id,
            gen_time: now,
            upload,
            replicas,
            recorded,
        });
        Ok(())
    }

    fn arrive(&mut self, task: usize, slot: usize, now: f64) -> Result<()> {
        let sev = self.tasks[task].replicas[slot].sev_id;
        let service: f64 = Exp1.sample(&mut self.service_rng);
        let feedback = self.sc.feedback.sample(&mut self.feedback_rng);
        let server = self.server(sev)?;
        let done = server.serve(now, service / server.mu).completion;
        let extra = self.tasks[task].replicas[slot].feedback_extra;
        self.queue
            .push(done + feedback + extra, Event::Done { task, slot });
        Ok(())
    }

    fn done(&mut self, task: usize, slot: usize, now: f64) {
        let d_max = self.sc.d_max;
        let t = &mut self.tasks[task];
        let delay = now - t.gen_time;
        let r = &mut t.replicas[slot];
        r.execution = Some(now - t.gen_time - t.upload);
        if !r.reported && delay <= d_max {
            r.reported = true;
            let (tav, id, sev) = (t.tav_id, t.task_id, r.sev_id);
            self.policy.observe(tav, id, sev, delay);
        }
    }

    fn deadline(&mut self, task: usize) {
        let d_max = self.sc.d_max;
        let t = &mut self.tasks[task];
        let mut late = Vec::new();
        for r in &mut t.replicas {
            if !r.reported {
                r.reported = true;
                late.push(r.sev_id);
            }
        }
        let (tav, id) = (t.tav_id, t.task_id);
        for sev in late {
            self.policy.observe(tav, id, sev, d_max);
        }
        let t = &self.tasks[task];
        if !t.recorded {
            return;
        }
        let selected: Vec<u64> = t.replicas.iter().map(|r| r.sev_id).collect();
        let received: Vec<u64> = t
            .replicas
            .iter()
            .filter(|r| r.received)
            .map(|r| r.sev_id)
            .collect();
        let finished: Vec<ReplicaOutcome> = t
            .replicas
            .iter()
            .filter_map(|r| {
                r.execution.map(|e| ReplicaOutcome {
                    sev_id: r.sev_id,
                    execution_s: e,
                })
            })
            .collect();
        let (outcome, per_sev_delay) = if received.is_empty() {
            (
                TaskOutcome::Failed,
                selected.iter().map(|&s| (s, d_max)).collect(),
            )
        } else {
            match complete(t.upload, &selected, &finished, d_max) {
                Some(c) if !c.deadline_miss => {
                    (TaskOutcome::Completed { delay_s: c.delay_s }, c.per_sev)
                }
                Some(c) => (TaskOutcome::DeadlineMiss, c.per_sev),
                None => (
                    TaskOutcome::DeadlineMiss,
                    selected.iter().map(|&s| (s, d_max)).collect(),
                ),
            }
        };
        self.records.push(TaskRecord {
            task_id: t.task_id,
            tav_id: t.tav_id,
            gen_time: t.gen_time,
            selected,
            received,
            per_sev_delay,
            upload_delay: t.upload,
            outcome,
        });
    }
}

/// Runs the full offloading pipeline until every task generated before the
/// horizon has passed its deadline.
pub fn run(scenario: &Scenario, policy: &mut dyn OffloadPolicy, seed: u64) -> Result<RunOutput> {
    scenario.validate()?;
    let mut engine = Engine {
        sc: scenario,
        policy: &mut *policy,
        seed,
        queue: EventQueue::new(),
        servers: HashMap::new(),
        arrivals: HashMap::new(),
        service_rng: stream_rng(seed, STREAM_SERVICE),
        erasure_rng: stream_rng(seed, STREAM_ERASURE),
        feedback_rng: stream_rng(seed, STREAM_FEEDBACK),
        tasks: Vec::new(),
        records: Vec::new(),
        unserved: 0,
        next_task_id: 0,
    };
    let mut tavs: Vec<u64> = scenario
        .trace
        .rows()
        .filter(|v| v.role == Role::Tav)
        .map(|v| v.vehicle_id)
        .collect();
    tavs.sort_unstable();
    tavs.dedup();
    if let RecordingScope::Tagged { vehicle_id } = scenario.scope {
        if tavs.binary_search(&vehicle_id).is_err() {
            return Err(SimError::Scenario(format!(
                "tagged vehicle {vehicle_id} is never a TaV"
            )));
        }
    }
    let gap = Exp::new(scenario.lambda0).expect("validated rate");
    for &tav in &tavs {
        engine
            .arrivals
            .insert(tav, (stream_rng(seed, STREAM_ARRIVALS ^ tav), gap));
        engine.schedule_next_task(tav, 0.0);
    }
    while let Some((now, event)) = engine.queue.pop() {
        match event {
            Event::Generate { tav } => engine.generate(tav, now)?,
            Event::Arrive { task, slot } => engine.arrive(task, slot, now)?,
            Event::Done { task, slot } => engine.done(task, slot, now),
            Event::Deadline { task } => engine.deadline(task),
        }
    }
    let Engine {
        records, unserved, ..
    } = engine;
    Ok(summarize(
        scenario,
        policy_name_k(policy),
        records,
        unserved,
    ))
}

fn policy_name_k(policy: &dyn OffloadPolicy) -> (String, u32) {
    (policy.name().to_string(), policy.replicas())
}

fn summarize(
    sc: &Scenario,
    (name, k): (String, u32),
    records: Vec<TaskRecord>,
    unserved: u64,
) -> RunOutput {
    let mut metrics = Vec::new();
    let (mut total, mut completed, mut misses, mut failures, mut replicas) =
        (0.0, 0u64, 0u64, 0u64, 0u64);
    for r in records
        .iter()
        .filter(|r| r.outcome != TaskOutcome::Unserved)
    {
        let inst = r.charged_delay(sc.d_max);
        match r.outcome {
            TaskOutcome::Completed { .. } => completed += 1,
            TaskOutcome::DeadlineMiss => misses += 1,
            TaskOutcome::Failed => failures += 1,
            TaskOutcome::Unserved => unreachable!(),
        }
        total += inst;
        replicas += r.selected.len() as u64;
        let n = metrics.len() as u64 + 1;
        metrics.push(MetricsRow {
            task_index: n,
            policy: name.clone(),
            k,
            inst_delay_s: inst,
            mean_delay_s: total / n as f64,
            completion_ratio: completed as f64 / n as f64,
            failed: r.failed(),
        });
    }
    let n = metrics.len() as u64;
    let ratio = |x: f64| if n == 0 { f64::NAN } else { x / n as f64 };
    let summary = RunSummary {
        policy: name,
        k,
        tasks: n,
        completed,
        deadline_misses: misses,
        failures,
        unserved,
        mean_delay_s: ratio(total),
        completion_ratio: ratio(completed as f64),
        mean_replicas: ratio(replicas as f64),
    };
    RunOutput {
        records,
        metrics,
        summary,
    }
}
