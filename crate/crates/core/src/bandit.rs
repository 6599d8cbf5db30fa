//! Learning-based task replication (LTRA).
//!
//! Each candidate SeV is an arm. Normalized per-replica delays are turned
//! into rewards `1 - d/d_max`, bucketed on the grid `{0, 1/l, …, (l-1)/l}`,
//! and kept as a histogram. Before every decision each arm's empirical CDF is
//! lowered by a confidence radius, which moves mass towards reward 1 for arms
//! with few observations. The subset minimizing the expected minimum delay
//! under the product of the lowered distributions is offloaded to.
//!
//! Arms that leave the candidate set keep their statistics; nothing decays.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Subsets are enumerated exhaustively up to this many combinations.
pub const EXHAUSTIVE_LIMIT: u128 = 10_000;

/// Exploration constant under which the regret bound holds.
pub const BOUND_ALPHA: f64 = 2.0 / 3.0;
/// Constant `C₁` of the regret bound.
pub const REGRET_C1: f64 = 2136.0;

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid learner config: `{field}` {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("task {task} is at or before arm {arm}'s first appearance (task {first_seen})")]
    Sequencing {
        task: u64,
        arm: ArmId,
        first_seen: u64,
    },
    #[error("arm {arm} was not selected for task {task}")]
    NotSelected { task: u64, arm: ArmId },
    #[error("regret is undefined for a non-stationary environment")]
    NonStationary,
    #[error("invalid learner state: {0}")]
    InvalidState(String),
}

pub type Result<T> = std::result::Result<T, BanditError>;

/// Opaque SeV identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArmId(pub u64);

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub alpha: f64,
    /// Discretization level `l`.
    pub levels: usize,
    pub d_max: f64,
    pub k_replicas: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            levels: 100,
            d_max: 0.5,
            k_replicas: 1,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(BanditError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be positive");
        }
        if self.levels < 2 {
            return bad("levels", "must be at least 2");
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return bad("d_max", "must be positive");
        }
        if self.k_replicas < 1 {
            return bad("k_replicas", "must be at least 1");
        }
        Ok(())
    }
}

/// Normalized delay `min(d, d_max)/d_max`.
pub fn normalize_delay(d: f64, d_max: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(BanditError::Domain(format!(
            "delay must be positive, got {d}"
        )));
    }
    if !(d_max > 0.0) {
        return Err(BanditError::Domain(format!(
            "d_max must be positive, got {d_max}"
        )));
    }
    Ok(d.min(d_max) / d_max)
}

/// Reward bucket `floor((1 - d̃)·l)` clamped to `[0, l-1]`.
pub fn reward_bucket(normalized: f64, levels: usize) -> usize {
    let reward = 1.0 - normalized;
    // Absorb representation error so that e.g. 0.8·100 lands in bucket 80.
    let j = (reward * levels as f64 + 1e-9).floor();
    if j <= 0.0 {
        0
    } else {
        (j as usize).min(levels - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayObservation {
    pub task_index: u64,
    pub arm_id: ArmId,
    pub raw_delay: f64,
    pub normalized: f64,
}

impl DelayObservation {
    pub fn new(task_index: u64, arm_id: ArmId, delay: f64, d_max: f64) -> Result<Self> {
        let normalized = normalize_delay(delay, d_max)?;
        Ok(Self {
            task_index,
            arm_id,
            raw_delay: delay.min(d_max),
            normalized,
        })
    }
}

/// CDF over the reward grid `{0, 1/l, …, 1}`; `values[j] = F(j/l)` and
/// `values[l] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCdf {
    values: Vec<f64>,
}

impl DiscreteCdf {
    /// Panics if `values` is not a non-decreasing sequence in `[0, 1]`
    /// ending at 1.
    pub fn from_values(values: Vec<f64>) -> Self {
        assert!(values.len() >= 3, "need at least two grid levels");
        assert!(
            values.windows(2).all(|w| w[0] <= w[1]),
            "CDF must be non-decreasing"
        );
        assert!(
            values[0] >= 0.0 && *values.last().unwrap() == 1.0,
            "CDF must end at 1"
        );
        Self { values }
    }

    /// Point mass at reward `bucket / l`.
    pub fn point_mass(levels: usize, bucket: usize) -> Self {
        let values = (0..=levels)
            .map(|j| if j >= bucket { 1.0 } else { 0.0 })
            .collect();
        Self { values }
    }

    pub fn levels(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `F(j/l)`.
    pub fn at(&self, j: usize) -> f64 {
        self.values[j]
    }

    /// Probability mass at reward `j/l`.
    pub fn mass(&self, j: usize) -> f64 {
        if j == 0 {
            self.values[0]
        } else {
            self.values[j] - self.values[j - 1]
        }
    }

    pub fn mean_reward(&self) -> f64 {
        let l = self.levels() as f64;
        self.values[..self.levels()]
            .iter()
            .map(|f| 1.0 - f)
            .sum::<f64>()
            / l
    }
}

/// Learning state of one SeV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub arm_id: ArmId,
    /// Task index at which the arm first appeared.
    pub t_n: u64,
    pub k_count: u64,
    pub histogram: Vec<u64>,
}

impl ArmState {
    pub fn new(arm_id: ArmId, t_n: u64, levels: usize) -> Self {
        Self {
            arm_id,
            t_n,
            k_count: 0,
            histogram: vec![0; levels],
        }
    }

    pub fn levels(&self) -> usize {
        self.histogram.len()
    }

    /// Adds one observation and returns the bucket it landed in.
    pub fn record(&mut self, obs: &DelayObservation) -> usize {
        let j = reward_bucket(obs.normalized, self.levels());
        self.histogram[j] += 1;
        self.k_count += 1;
        j
    }

    /// Empirical CDF `F̂`. With no observations every value below 1 is 0.
    pub fn empirical_cdf(&self) -> DiscreteCdf {
        let l = self.levels();
        let mut values = Vec::with_capacity(l + 1);
        if self.k_count == 0 {
            values.resize(l, 0.0);
        } else {
            let k = self.k_count as f64;
            let mut acc = 0u64;
            for &h in &self.histogram {
                acc += h;
                values.push(acc as f64 / k);
            }
        }
        values.push(1.0);
        DiscreteCdf { values }
    }

    /// Confidence-lowered CDF `F̲` for a decision at task `t`.
    pub fn lowered_cdf(&self, t: u64, alpha: f64) -> Result<DiscreteCdf> {
        if t <= self.t_n {
            return Err(BanditError::Sequencing {
                task: t,
                arm: self.arm_id,
                first_seen: self.t_n,
            });
        }
        let pad = confidence_radius(alpha, ((t - self.t_n) as f64).ln(), self.k_count);
        let mut cdf = self.empirical_cdf();
        let l = cdf.levels();
        for v in &mut cdf.values[..l] {
            *v = (*v - pad).max(0.0);
        }
        Ok(cdf)
    }
}

/// `sqrt(α·max(ln_elapsed, 0)/k)`, infinite for `k = 0`.
pub fn confidence_radius(alpha: f64, ln_elapsed: f64, k_count: u64) -> f64 {
    if k_count == 0 {
        return f64::INFINITY;
    }
    (alpha * ln_elapsed.max(0.0) / k_count as f64).sqrt()
}

/// `E[max reward]` for independent arms whose product CDF is `product`.
fn expected_max_from_product(product: &[f64]) -> f64 {
    let l = product.len() - 1;
    product[..l].iter().map(|p| 1.0 - p).sum::<f64>() / l as f64
}

/// Expected minimum delay `d_max·(1 − E[max reward])` of a subset whose
/// members are independent with the given CDFs.
pub fn expected_min_delay(cdfs: &[&DiscreteCdf], d_max: f64) -> Result<f64> {
    let first = cdfs
        .first()
        .ok_or_else(|| BanditError::Domain("expected_min_delay of an empty set".into()))?;
    let l = first.levels();
    if cdfs.iter().any(|c| c.levels() != l) {
        return Err(BanditError::Domain("CDFs are on different grids".into()));
    }
    let mut product = first.values.clone();
    for c in &cdfs[1..] {
        for (p, v) in product.iter_mut().zip(&c.values) {
            *p *= v;
        }
    }
    Ok(d_max * (1.0 - expected_max_from_product(&product)))
}

/// One arm offered to [`select_subset`].
#[derive(Debug, Clone)]
pub struct Candidate {
    pub arm_id: ArmId,
    pub t_n: u64,
    pub cdf: DiscreteCdf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionStrategy {
    /// Exhaustive when `C(N, K) ≤ 10⁴`, greedy otherwise.
    #[default]
    Auto,
    Exhaustive,
    Greedy,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// Subset of size `min(N, K)` minimizing the expected minimum delay.
///
/// Candidates are ranked by `(t_n, arm_id)` and every tie resolves to the
/// earliest-ranked choice, so the result is deterministic. The returned ids
/// follow that rank order.
pub fn select_subset(
    candidates: &[Candidate],
    k: usize,
    strategy: SelectionStrategy,
) -> Vec<ArmId> {
    let mut ranked: Vec<&Candidate> = candidates.iter().collect();
    ranked.sort_by_key(|c| (c.t_n, c.arm_id));
    let size = k.min(ranked.len());
    if size == ranked.len() {
        return ranked.iter().map(|c| c.arm_id).collect();
    }
    if size == 0 {
        return Vec::new();
    }
    let exhaustive = match strategy {
        SelectionStrategy::Exhaustive => true,
        SelectionStrategy::Greedy => false,
        SelectionStrategy::Auto => binomial(ranked.len(), size) <= EXHAUSTIVE_LIMIT,
    };
    let picked = if exhaustive {
        exhaustive_best(&ranked, size)
    } else {
        greedy_best(&ranked, size)
    };
    picked.into_iter().map(|i| ranked[i].arm_id).collect()
}

/// Expected max reward is monotone in the product CDF, so minimizing the
/// product's sum is equivalent and cheaper.
fn product_score(product: &[f64]) -> f64 {
    product[..product.len() - 1].iter().sum()
}

fn greedy_best(ranked: &[&Candidate], size: usize) -> Vec<usize> {
    let l = ranked[0].cdf.levels();
    let mut product = vec![1.0; l + 1];
    let mut chosen: Vec<usize> = Vec::with_capacity(size);
    let mut taken = vec![false; ranked.len()];
    let mut scratch = vec![0.0; l + 1];
    for _ in 0..size {
        let mut best: Option<(usize, f64)> = None;
        for (i, cand) in ranked.iter().enumerate() {
            if taken[i] {
                continue;
            }
            for ((s, p), v) in scratch.iter_mut().zip(&product).zip(&cand.cdf.values) {
                *s = p * v;
            }
            let score = product_score(&scratch);
            if best.is_none_or(|(_, b)| score < b) {
                best = Some((i, score));
            }
        }
        let (i, _) = best.expect("fewer candidates than requested");
        taken[i] = true;
        chosen.push(i);
        for (p, v) in product.iter_mut().zip(&ranked[i].cdf.values) {
            *p *= v;
        }
    }
    chosen.sort_unstable();
    chosen
}

fn exhaustive_best(ranked: &[&Candidate], size: usize) -> Vec<usize> {
    struct Search<'a> {
        ranked: &'a [&'a Candidate],
        size: usize,
        stack: Vec<usize>,
        products: Vec<Vec<f64>>,
        best: Option<(Vec<usize>, f64)>,
    }

    impl Search<'_> {
        fn descend(&mut self, start: usize) {
            let depth = self.stack.len();
            if depth == self.size {
                let score = product_score(&self.products[depth]);
                if self.best.as_ref().is_none_or(|(_, b)| score < *b) {
                    self.best = Some((self.stack.clone(), score));
                }
                return;
            }
            let remaining = self.size - depth;
            for i in start..=self.ranked.len() - remaining {
                let (head, tail) = self.products.split_at_mut(depth + 1);
                for ((dst, p), v) in tail[0]
                    .iter_mut()
                    .zip(&head[depth])
                    .zip(&self.ranked[i].cdf.values)
                {
                    *dst = p * v;
                }
                self.stack.push(i);
                self.descend(i + 1);
                self.stack.pop();
            }
        }
    }

    let l = ranked[0].cdf.levels();
    let mut search = Search {
        ranked,
        size,
        stack: Vec::with_capacity(size),
        products: vec![vec![1.0; l + 1]; size + 1],
        best: None,
    };
    search.descend(0);
    search.best.expect("at least one subset").0
}

/// Outcome of one [`Learner::decide`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub task_index: u64,
    pub subset: Vec<ArmId>,
    /// Whether the subset was forced to include never-observed arms.
    pub initialization: bool,
}

/// Per-TaV LTRA learner.
#[derive(Debug, Clone)]
pub struct Learner {
    config: LearnerConfig,
    arms: BTreeMap<ArmId, ArmState>,
    last_task: u64,
    pending: HashMap<u64, Vec<ArmId>>,
    strategy: SelectionStrategy,
}

impl Learner {
    pub fn new(config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            arms: BTreeMap::new(),
            last_task: 0,
            pending: HashMap::new(),
            strategy: SelectionStrategy::Auto,
        })
    }

    pub fn with_strategy(mut self, strategy: SelectionStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn arm(&self, id: ArmId) -> Option<&ArmState> {
        self.arms.get(&id)
    }

    pub fn arms(&self) -> impl Iterator<Item = &ArmState> {
        self.arms.values()
    }

    /// Index of the last decided task (0 before the first decision).
    pub fn task_index(&self) -> u64 {
        self.last_task
    }

    /// Decides the subset for the next task, numbered `task_index() + 1`.
    pub fn decide(&mut self, candidates: &[ArmId]) -> Decision {
        let t = self.last_task + 1;
        self.decide_at(t, candidates)
            .expect("task index advances monotonically")
    }

    /// Decides the subset for task `t`.
    ///
    /// Arms never observed so far force an initialization subset that
    /// contains all of them (all of them even if that exceeds `K`), padded to
    /// `K` with the best known arms. Otherwise the subset minimizing the
    /// expected minimum delay under the lowered CDFs is returned.
    pub fn decide_at(&mut self, t: u64, candidates: &[ArmId]) -> Result<Decision> {
        if t <= self.last_task {
            return Err(BanditError::Domain(format!(
                "task {t} does not follow task {}",
                self.last_task
            )));
        }
        self.last_task = t;
        let levels = self.config.levels;
        let mut unique: Vec<ArmId> = candidates.to_vec();
        unique.sort_unstable();
        unique.dedup();
        for &id in &unique {
            self.arms
                .entry(id)
                .or_insert_with(|| ArmState::new(id, t, levels));
        }
        let k = self.config.k_replicas;
        let (fresh, known): (Vec<ArmId>, Vec<ArmId>) =
            unique.iter().partition(|id| self.arms[id].k_count == 0);

        let (subset, initialization) = if fresh.is_empty() {
            (self.select_among(t, &known, k)?, false)
        } else if fresh.len() >= k {
            (self.ranked(&fresh), true)
        } else {
            let mut subset = self.ranked(&fresh);
            subset.extend(self.select_among(t, &known, k - fresh.len())?);
            (subset, true)
        };
        self.pending.insert(t, subset.clone());
        Ok(Decision {
            task_index: t,
            subset,
            initialization,
        })
    }

    fn ranked(&self, ids: &[ArmId]) -> Vec<ArmId> {
        let mut v = ids.to_vec();
        v.sort_by_key(|id| (self.arms[id].t_n, *id));
        v
    }

    fn select_among(&self, t: u64, ids: &[ArmId], k: usize) -> Result<Vec<ArmId>> {
        if ids.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let candidates = ids
            .iter()
            .map(|id| {
                let arm = &self.arms[id];
                Ok(Candidate {
                    arm_id: *id,
                    t_n: arm.t_n,
                    cdf: arm.lowered_cdf(t, self.config.alpha)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(select_subset(&candidates, k, self.strategy))
    }

    /// Records the delay of one replica of task `task`. Erased or late
    /// replicas are reported as `d_max`.
    pub fn observe(&mut self, task: u64, arm: ArmId, delay: f64) -> Result<()> {
        let subset = self
            .pending
            .get_mut(&task)
            .ok_or(BanditError::NotSelected { task, arm })?;
        let pos = subset
            .iter()
            .position(|a| *a == arm)
            .ok_or(BanditError::NotSelected { task, arm })?;
        let obs = DelayObservation::new(task, arm, delay, self.config.d_max)?;
        subset.swap_remove(pos);
        if subset.is_empty() {
            self.pending.remove(&task);
        }
        self.arms
            .get_mut(&arm)
            .expect("selected arms are registered")
            .record(&obs);
        Ok(())
    }

    /// Records every replica of a task at once.
    pub fn observe_outcomes(&mut self, task: u64, delays: &[(ArmId, f64)]) -> Result<()> {
        for &(arm, d) in delays {
            self.observe(task, arm, d)?;
        }
        Ok(())
    }

    pub fn export_state(&self) -> LearnerSnapshot {
        LearnerSnapshot {
            config: self.config,
            task_index: self.last_task,
            arms: self.arms.values().cloned().collect(),
        }
    }

    pub fn import_state(snapshot: LearnerSnapshot) -> Result<Self> {
        let mut learner = Self::new(snapshot.config)?;
        learner.last_task = snapshot.task_index;
        for arm in snapshot.arms {
            if arm.histogram.len() != snapshot.config.levels {
                return Err(BanditError::InvalidState(format!(
                    "arm {} has {} buckets, expected {}",
                    arm.arm_id,
                    arm.histogram.len(),
                    snapshot.config.levels
                )));
            }
            if arm.histogram.iter().sum::<u64>() != arm.k_count {
                return Err(BanditError::InvalidState(format!(
                    "arm {} histogram does not sum to k_count",
                    arm.arm_id
                )));
            }
            if learner.arms.insert(arm.arm_id, arm.clone()).is_some() {
                return Err(BanditError::InvalidState(format!(
                    "duplicate arm {}",
                    arm.arm_id
                )));
            }
        }
        Ok(learner)
    }
}

/// Checkpoint format:
///
/// ```json
/// {
///   "config": {"alpha": 0.5, "levels": 100, "d_max": 0.5, "k_replicas": 3},
///   "task_index": 1200,
///   "arms": [{"arm_id": 17, "t_n": 4, "k_count": 311, "histogram": [0, 2, ...]}]
/// }
/// ```
///
/// In-flight tasks are not part of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSnapshot {
    pub config: LearnerConfig,
    pub task_index: u64,
    pub arms: Vec<ArmState>,
}

/// Delay law `shift + Exp(rate)`; `rate = ∞` is a point mass at `shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayLaw {
    pub shift: f64,
    pub rate: f64,
}

impl DelayLaw {
    pub fn exponential(mean: f64) -> Self {
        Self {
            shift: 0.0,
            rate: 1.0 / mean,
        }
    }

    pub fn shifted_exponential(shift: f64, mean: f64) -> Self {
        Self {
            shift,
            rate: 1.0 / mean,
        }
    }

    pub fn point(delay: f64) -> Self {
        Self {
            shift: delay,
            rate: f64::INFINITY,
        }
    }

    pub fn survival(&self, x: f64) -> f64 {
        if x < self.shift {
            1.0
        } else if self.rate.is_infinite() {
            0.0
        } else {
            (-self.rate * (x - self.shift)).exp()
        }
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.rate.is_infinite() {
            self.shift
        } else {
            let u: f64 = rng.random();
            self.shift - (1.0 - u).ln() / self.rate
        }
    }
}

/// `E[min(min_n D_n, d_max)] = ∫₀^{d_max} Π_n P(D_n > x) dx`, in closed form
/// on each segment between consecutive shifts.
pub fn expected_clipped_min(laws: &[DelayLaw], d_max: f64) -> f64 {
    let mut breaks: Vec<f64> = laws.iter().map(|l| l.shift.clamp(0.0, d_max)).collect();
    breaks.push(0.0);
    breaks.push(d_max);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let s_a: f64 = laws.iter().map(|l| l.survival(a)).product();
        if s_a == 0.0 {
            break;
        }
        let rate: f64 = laws.iter().filter(|l| l.shift <= a).map(|l| l.rate).sum();
        total += if rate == 0.0 {
            s_a * (b - a)
        } else {
            s_a * (1.0 - (-rate * (b - a)).exp()) / rate
        };
    }
    total
}

/// Ground truth of a synthetic environment.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Stationary(Vec<DelayLaw>),
    NonStationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub horizon: u64,
    pub cumulative_loss: f64,
    pub mu_s_star: f64,
    pub optimal_subset: Vec<usize>,
    pub empirical_regret: f64,
    pub bound: f64,
    /// `Δ_n` per arm; `+∞` when no suboptimal subset contains the arm.
    pub gap_table: Vec<f64>,
}

fn for_each_subset(n: usize, size: usize, mut f: impl FnMut(&[usize])) {
    fn rec(n: usize, size: usize, start: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == size {
            f(cur);
            return;
        }
        for i in start..=n - (size - cur.len()) {
            cur.push(i);
            rec(n, size, i + 1, cur, f);
            cur.pop();
        }
    }
    rec(n, size, 0, &mut Vec::with_capacity(size), &mut f);
}

/// Expected loss `μ_S` of every subset of size `min(N, K)`, in lexicographic
/// order.
pub fn subset_losses(laws: &[DelayLaw], k: usize, d_max: f64) -> Vec<(Vec<usize>, f64)> {
    let size = k.min(laws.len());
    let mut out = Vec::new();
    for_each_subset(laws.len(), size, |s| {
        let members: Vec<DelayLaw> = s.iter().map(|&i| laws[i]).collect();
        out.push((s.to_vec(), expected_clipped_min(&members, d_max)));
    });
    out
}

/// `d_max·(C₁·K·Σ_n ln T/Δ_n + C₂)` with `C₂ = (π²/3 + 1)·N`.
pub fn regret_bound(d_max: f64, k: usize, gaps: &[f64], horizon: u64) -> f64 {
    let n = gaps.len() as f64;
    let ln_t = (horizon as f64).ln();
    let c2 = (std::f64::consts::PI.powi(2) / 3.0 + 1.0) * n;
    let sum: f64 = gaps
        .iter()
        .filter(|g| g.is_finite())
        .map(|g| ln_t / g)
        .sum();
    d_max * (REGRET_C1 * k as f64 * sum + c2)
}

/// Regret of a loss history against the best fixed subset.
pub fn empirical_regret(
    losses: &[f64],
    truth: &GroundTruth,
    k: usize,
    d_max: f64,
) -> Result<RegretReport> {
    let laws = match truth {
        GroundTruth::Stationary(laws) if !laws.is_empty() => laws,
        GroundTruth::Stationary(_) => return Err(BanditError::Domain("no arms".into())),
        GroundTruth::NonStationary => return Err(BanditError::NonStationary),
    };
    let table = subset_losses(laws, k, d_max);
    let (optimal_subset, mu_s_star) = table
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, m)| (s.clone(), *m))
        .expect("at least one subset");
    let mut gap_table = vec![f64::INFINITY; laws.len()];
    for (s, mu) in &table {
        let gap = (mu - mu_s_star) / d_max;
        if gap > 0.0 {
            for &i in s {
                gap_table[i] = gap_table[i].min(gap);
            }
        }
    }
    let horizon = losses.len() as u64;
    let cumulative_loss: f64 = losses.iter().sum();
    Ok(RegretReport {
        horizon,
        cumulative_loss,
        mu_s_star,
        optimal_subset,
        empirical_regret: cumulative_loss - horizon as f64 * mu_s_star,
        bound: regret_bound(d_max, k.min(laws.len()), &gap_table, horizon.max(1)),
        gap_table,
    })
}
