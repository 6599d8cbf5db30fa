//! Property checks and generators shared by the property suites and the
//! acceptance runner.
#![allow(dead_code)]

use std::collections::HashMap;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use vecrep_core::analytics::{self, NetworkConditions, SeriesMode};
use vecrep_core::bandit::{ArmId, ArmState, Candidate, DiscreteCdf};
use vecrep_core::harness::{
    build_policy, run_experiment, ConditionsSpec, ExperimentConfig, Horizon, LearnerSpec,
    OutputSpec, PolicyKind, ScenarioSpec, SimulationSpec,
};
use vecrep_core::simcore::{
    self, DecisionContext, FeedbackDelay, MetricsRow, OffloadPolicy, RecordingScope, RunOutput,
    Scenario, Spread, TaskOutcome,
};
use vecrep_core::traffic::{self, ChannelParams, RoadSpec, SpeedLaw, Topology};

pub type CaseResult = Result<(), TestCaseError>;

pub const CASES: u32 = 1000;

pub fn config() -> ProptestConfig {
    ProptestConfig {
        cases: CASES,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Conditions with `γ̄_s` set directly (R = 0.2 km).
pub fn conditions_with(
    gamma_bar_s: f64,
    gamma_bar_t: f64,
    lambda0: f64,
    p_e: f64,
) -> NetworkConditions {
    NetworkConditions::new(
        lambda0,
        10.0,
        p_e,
        gamma_bar_t / 0.4,
        gamma_bar_s / 0.4,
        0.2,
        1.0,
    )
    .unwrap()
}

/// CDF on `l` levels from non-negative integer weights over the `l + 1`
/// reward points.
pub fn cdf_from_weights(weights: &[u32]) -> DiscreteCdf {
    let total: u32 = weights.iter().sum();
    assert!(total > 0);
    let mut acc = 0u32;
    let mut values: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            f64::from(acc) / f64::from(total)
        })
        .collect();
    *values.last_mut().unwrap() = 1.0;
    DiscreteCdf::from_values(values)
}

/// Weights for a CDF on `levels` levels, never all zero.
pub fn weights(levels: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..6, levels + 1).prop_map(|mut w| {
        if w.iter().all(|x| *x == 0) {
            w[0] = 1;
        }
        w
    })
}

/// `d_max·(1 − E[max reward])` by enumerating every joint outcome.
pub fn brute_force_min_delay(cdfs: &[&DiscreteCdf], d_max: f64) -> f64 {
    let l = cdfs[0].levels();
    let mut idx = vec![0usize; cdfs.len()];
    let mut expected_max = 0.0;
    loop {
        let p: f64 = idx.iter().zip(cdfs).map(|(&j, c)| c.mass(j)).product();
        let best = *idx.iter().max().unwrap();
        expected_max += p * best as f64 / l as f64;
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return d_max * (1.0 - expected_max);
            }
            idx[pos] += 1;
            if idx[pos] <= l {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

pub fn check_lowered_dominance(histogram: Vec<u64>, gap: u64, alpha: f64) -> CaseResult {
    let levels = histogram.len();
    let k_count = histogram.iter().sum();
    prop_assume!(k_count > 0);
    let arm = ArmState {
        arm_id: ArmId(1),
        t_n: 5,
        k_count,
        histogram,
    };
    let hat = arm.empirical_cdf();
    let low = arm
        .lowered_cdf(5 + gap, alpha)
        .map_err(|e| TestCaseError::fail(e.to_string()))?;
    for j in 0..levels {
        prop_assert!(
            low.at(j) <= hat.at(j),
            "F̲({j}) = {} > F̂ = {}",
            low.at(j),
            hat.at(j)
        );
        prop_assert!(low.at(j) >= 0.0);
    }
    prop_assert!(low.values().windows(2).all(|w| w[0] <= w[1]));
    prop_assert_eq!(low.at(levels), 1.0);
    prop_assert_eq!(hat.at(levels), 1.0);
    Ok(())
}

pub fn dominance_inputs() -> impl Strategy<Value = (Vec<u64>, u64, f64)> {
    (2usize..=100)
        .prop_flat_map(|l| prop::collection::vec(0u64..40, l))
        .prop_flat_map(|h| (Just(h), 1u64..1_000_000, 0.01f64..2.0))
}

pub fn check_failure_lower_bound(gamma_bar_s: f64, p_e: f64, k: u32) -> CaseResult {
    let cond = conditions_with(gamma_bar_s, 2.0, 2.0, p_e);
    let p_f =
        analytics::failure_probability(&cond, k).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let bound = (1.0 - (-gamma_bar_s).exp()) * p_e.powi(k as i32);
    prop_assert!(p_f >= bound * (1.0 - 1e-9), "P_f {p_f} below {bound}");
    prop_assert!((0.0..1.0).contains(&p_f));
    let next = analytics::failure_probability(&cond, k + 1).unwrap();
    prop_assert!(
        next <= p_f * (1.0 + 1e-12),
        "P_f rises from {p_f} to {next}"
    );
    Ok(())
}

pub fn failure_inputs() -> impl Strategy<Value = (f64, f64, u32)> {
    (0.05f64..40.0, 0.0f64..0.99, 1u32..=20)
}

pub fn check_approximation_quality(gamma_bar_s: f64) -> CaseResult {
    let exact = analytics::mean_inverse_candidates(gamma_bar_s, SeriesMode::Exact).unwrap();
    let approx = analytics::mean_inverse_candidates(gamma_bar_s, SeriesMode::Approx).unwrap();
    let rel = (approx - exact).abs() / exact;
    prop_assert!(rel <= 0.10, "relative error {rel} at {gamma_bar_s}");
    Ok(())
}

/// A small ring road for event-simulation properties.
#[derive(Debug, Clone)]
pub struct DesCase {
    pub seed: u64,
    pub lambda0: f64,
    pub gamma_t: f64,
    pub gamma_s: f64,
    pub erasure: f64,
    pub horizon_s: f64,
    pub policy: PolicyKind,
    pub k: u32,
}

pub fn des_cases() -> impl Strategy<Value = DesCase> {
    let policy = prop_oneof![
        Just(PolicyKind::Genie),
        Just(PolicyKind::Random),
        Just(PolicyKind::Single),
        Just(PolicyKind::Ltra),
    ];
    (
        any::<u64>(),
        0.5f64..6.0,
        2.0f64..10.0,
        5.0f64..30.0,
        0.0f64..0.6,
        2.0f64..15.0,
        policy,
        1u32..=4,
    )
        .prop_map(
            |(seed, lambda0, gamma_t, gamma_s, erasure, horizon_s, policy, k)| DesCase {
                seed,
                lambda0,
                gamma_t,
                gamma_s,
                erasure,
                horizon_s,
                policy,
                k,
            },
        )
}

pub fn des_scenario(case: &DesCase) -> Option<Scenario> {
    let road = RoadSpec {
        length_km: 1.0,
        gamma_t: case.gamma_t,
        gamma_s: case.gamma_s,
    };
    let snapshot = traffic::generate_ppp_snapshot(&road, case.seed).unwrap();
    if !snapshot.iter().any(|v| v.role == traffic::Role::Tav) {
        return None;
    }
    let topology = Topology::Ring { length_m: 1000.0 };
    let trace = traffic::generate_synthetic_trace(
        &snapshot,
        case.horizon_s + 1.0,
        1.0,
        SpeedLaw::Uniform { max_mps: 20.0 },
        topology,
        case.seed ^ 1,
    )
    .unwrap();
    Some(Scenario {
        trace,
        topology,
        range_m: 200.0,
        lambda0: case.lambda0,
        service_rate: Spread::Uniform {
            low: 8.0,
            high: 12.0,
        },
        erasure: Spread::Uniform {
            low: 0.0,
            high: case.erasure,
        },
        channel: ChannelParams::default(),
        feedback: FeedbackDelay::Exponential { mean_s: 0.01 },
        d_max: 0.5,
        horizon_s: case.horizon_s,
        scope: RecordingScope::AllTavs,
    })
}

/// Counts what the simulator asks of and reports to a policy.
pub struct Ledger {
    inner: Box<dyn OffloadPolicy + Send>,
    pub decisions: HashMap<u64, Vec<u64>>,
    pub observations: HashMap<u64, Vec<(u64, f64)>>,
}

impl Ledger {
    pub fn new(inner: Box<dyn OffloadPolicy + Send>) -> Self {
        Self {
            inner,
            decisions: HashMap::new(),
            observations: HashMap::new(),
        }
    }
}

impl OffloadPolicy for Ledger {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn replicas(&self) -> u32 {
        self.inner.replicas()
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Vec<u64> {
        let s = self.inner.decide(ctx);
        self.decisions.insert(ctx.task_id, s.clone());
        s
    }

    fn observe(&mut self, tav_id: u64, task_id: u64, sev_id: u64, delay_s: f64) {
        self.observations
            .entry(task_id)
            .or_default()
            .push((sev_id, delay_s));
        self.inner.observe(tav_id, task_id, sev_id, delay_s);
    }
}

pub fn run_case(case: &DesCase, scenario: &Scenario) -> (RunOutput, Ledger) {
    let policy = build_policy(case.policy, &LearnerSpec::default(), case.k, case.seed).unwrap();
    let mut ledger = Ledger::new(policy);
    let out = simcore::run(scenario, &mut ledger, case.seed).unwrap();
    (out, ledger)
}

pub fn check_des_determinism(case: DesCase) -> CaseResult {
    let Some(scenario) = des_scenario(&case) else {
        return Ok(());
    };
    let (a, _) = run_case(&case, &scenario);
    let (b, _) = run_case(&case, &scenario);
    prop_assert_eq!(&a.records, &b.records);
    prop_assert_eq!(&a.metrics, &b.metrics);
    prop_assert_eq!(format!("{:?}", a.summary), format!("{:?}", b.summary));
    Ok(())
}

pub fn check_des_conservation(case: DesCase) -> CaseResult {
    let Some(scenario) = des_scenario(&case) else {
        return Ok(());
    };
    let (out, ledger) = run_case(&case, &scenario);
    let d_max = scenario.d_max;
    let mut seen = std::collections::HashSet::new();
    let mut unserved = 0u64;
    for r in &out.records {
        prop_assert!(seen.insert(r.task_id), "task {} recorded twice", r.task_id);
        if r.outcome == TaskOutcome::Unserved {
            unserved += 1;
            prop_assert!(r.selected.is_empty());
            prop_assert!(!ledger.decisions.contains_key(&r.task_id));
            continue;
        }
        prop_assert_eq!(ledger.decisions.get(&r.task_id), Some(&r.selected));
        prop_assert!(r.received.iter().all(|s| r.selected.contains(s)));
        prop_assert_eq!(r.received.is_empty(), r.outcome == TaskOutcome::Failed);
        if let Some(d) = r.completion_delay() {
            prop_assert!(d >= r.upload_delay && d <= d_max);
        }
        prop_assert!(r.per_sev_delay.iter().all(|(_, d)| *d <= d_max));
        let mut observed: Vec<u64> = ledger
            .observations
            .get(&r.task_id)
            .into_iter()
            .flatten()
            .map(|o| o.0)
            .collect();
        observed.sort_unstable();
        let mut selected = r.selected.clone();
        selected.sort_unstable();
        prop_assert_eq!(observed, selected, "observations of task {}", r.task_id);
        prop_assert!(ledger.observations[&r.task_id]
            .iter()
            .all(|(_, d)| *d > 0.0 && *d <= d_max));
    }
    prop_assert_eq!(
        ledger.decisions.len() as u64 + unserved,
        out.records.len() as u64
    );
    let s = &out.summary;
    prop_assert_eq!(s.completed + s.deadline_misses + s.failures, s.tasks);
    prop_assert_eq!(s.unserved, unserved);
    Ok(())
}

/// Synthetic 10 km ring scenario at a published grid cell.
pub fn realistic(
    lambda0: f64,
    ratio: f64,
    policy: PolicyKind,
    k: Option<u32>,
    seconds: f64,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        scenario: ScenarioSpec::default(),
        conditions: ConditionsSpec::table1(lambda0, ratio),
        learner: LearnerSpec {
            k_replicas: k,
            ..LearnerSpec::default()
        },
        policy,
        horizon: Horizon::Seconds(seconds),
        seed,
        simulation: SimulationSpec::default(),
        output: OutputSpec::default(),
    }
}

/// Mean charged delay over `seeds` runs of `config`.
pub fn mean_over_seeds(config: &ExperimentConfig, seeds: &[u64]) -> (f64, f64) {
    let (mut d, mut c) = (0.0, 0.0);
    for &seed in seeds {
        let r = run_experiment(&ExperimentConfig {
            seed,
            ..config.clone()
        })
        .unwrap();
        d += r.summary.mean_delay_s;
        c += r.summary.completion_ratio;
    }
    (d / seeds.len() as f64, c / seeds.len() as f64)
}

/// Batch-means estimate (20 batches) of a run's mean delay and its standard error.
pub fn batch_stats(metrics: &[MetricsRow], d_max: f64) -> (f64, f64) {
    let d: Vec<f64> = metrics.iter().map(|m| m.inst_delay_s).collect();
    let b = d.len() / 20;
    let means: Vec<f64> = d
        .chunks(b)
        .take(20)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let m = means.iter().sum::<f64>() / 20.0;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 19.0;
    assert!(m <= d_max);
    (m, (var / 20.0).sqrt())
}

pub fn candidates_from(ws: &[Vec<u32>], t_ns: &[u64]) -> Vec<Candidate> {
    ws.iter()
        .zip(t_ns)
        .enumerate()
        .map(|(i, (w, &t_n))| Candidate {
            arm_id: ArmId(100 - i as u64),
            t_n,
            cdf: cdf_from_weights(w),
        })
        .collect()
}

/// Best subset by brute-force expectation, scanning subsets of the ranked
/// candidates in lexicographic order; returns it with its value and the
/// runner-up value.
pub fn oracle_subset(cands: &[Candidate], k: usize, d_max: f64) -> (Vec<ArmId>, f64, f64) {
    let mut ranked: Vec<&Candidate> = cands.iter().collect();
    ranked.sort_by_key(|c| (c.t_n, c.arm_id));
    let n = ranked.len();
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut second = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let cdfs: Vec<&DiscreteCdf> = idx.iter().map(|&i| &ranked[i].cdf).collect();
        let v = brute_force_min_delay(&cdfs, d_max);
        match &best {
            Some((b, bv)) if v > *bv || (v == *bv && b < &idx) => second = second.min(v),
            Some((_, bv)) => {
                second = second.min(*bv);
                best = Some((idx, v));
            }
            None => best = Some((idx, v)),
        }
    }
    let (idx, v) = best.unwrap();
    (idx.iter().map(|&i| ranked[i].arm_id).collect(), v, second)
}

pub fn value_of(cands: &[Candidate], subset: &[ArmId], d_max: f64) -> f64 {
    let cdfs: Vec<&DiscreteCdf> = subset
        .iter()
        .map(|id| &cands.iter().find(|c| c.arm_id == *id).unwrap().cdf)
        .collect();
    brute_force_min_delay(&cdfs, d_max)
}

pub fn instances(
    n: std::ops::RangeInclusive<usize>,
    l: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = (Vec<Vec<u32>>, Vec<u64>)> {
    (n, l).prop_flat_map(|(n, l)| {
        (
            prop::collection::vec(weights(l), n),
            prop::collection::vec(0u64..4, n),
        )
    })
}
