//! Closed-form replica planning.
//!
//! Everything here is a pure function of a [`NetworkConditions`] value: the
//! per-SeV arrival rate seen by a typical candidate SeV, the expected task
//! execution delay as a Poisson mixture over the number of candidates, the
//! failure probability, and the replica count that balances diversity gain
//! against the extra load replicas put on shared SeVs.
//!
//! Infinite Poisson series are truncated once the cumulative mass exceeds
//! `1 - 1e-12`, with a hard cap of `max(200, 20 * mean)` terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cumulative Poisson mass after which series are truncated.
pub const POISSON_MASS_CUTOFF: f64 = 1.0 - 1e-12;

/// Default upper end of the replica sweep in [`theoretical_optimum_search`].
pub const DEFAULT_K_MAX: u32 = 16;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid network conditions: `{field}` {reason}")]
    InvalidConditions { field: &'static str, reason: String },
    #[error("no stable replica count in 1..={k_max}")]
    NoStableReplicaCount { k_max: u32 },
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;

/// How `Σ_{k≥1} (1/k)·Poisson(k; γ̄_s)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesMode {
    /// Truncated series.
    Exact,
    /// `1/γ̄_s + 1/γ̄_s²`.
    Approx,
}

/// Which per-SeV arrival rate drives the M/M/1 sojourn in the delay series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    /// `(γ̄_t + 1)·λ₀·E[min(K, Y)/Y]`, the expectation itself.
    #[default]
    Wald,
    /// `(γ̄_t + 1)·λ₀·K·Σ_{k≥1} (1/k)·Poisson(k)`, an upper bound of the above.
    UpperBound,
}

/// Homogeneous scenario used by the closed forms.
///
/// Densities are per km and the range is in km, so `2R·γ` is the mean number
/// of vehicles of a role inside one communication window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConditions {
    /// Task arrival rate per TaV (tasks/s).
    pub lambda0: f64,
    /// Mean SeV service rate (tasks/s).
    pub mu_c: f64,
    /// Packet erasure probability. Zero models an erasure-free channel.
    pub p_e: f64,
    /// TaV density (vehicles/km).
    pub gamma_t: f64,
    /// SeV density (vehicles/km).
    pub gamma_s: f64,
    /// Communication range (km).
    pub range_km: f64,
    /// Failure-probability threshold. `1.0` disables the reliability floor.
    pub theta_f: f64,
}

impl NetworkConditions {
    pub fn new(
        lambda0: f64,
        mu_c: f64,
        p_e: f64,
        gamma_t: f64,
        gamma_s: f64,
        range_km: f64,
        theta_f: f64,
    ) -> Result<Self> {
        let cond = Self {
            lambda0,
            mu_c,
            p_e,
            gamma_t,
            gamma_s,
            range_km,
            theta_f,
        };
        cond.validate()?;
        Ok(cond)
    }

    /// Splits a total vehicle density by the TaV:SeV ratio `γ_t/γ_s`.
    pub fn from_total_density(
        lambda0: f64,
        mu_c: f64,
        p_e: f64,
        total_density: f64,
        tav_to_sev_ratio: f64,
        range_km: f64,
        theta_f: f64,
    ) -> Result<Self> {
        if !(tav_to_sev_ratio >= 0.0) || !tav_to_sev_ratio.is_finite() {
            return Err(AnalyticsError::InvalidConditions {
                field: "ratio",
                reason: format!("must be a finite non-negative number, got {tav_to_sev_ratio}"),
            });
        }
        let gamma_s = total_density / (1.0 + tav_to_sev_ratio);
        let gamma_t = total_density - gamma_s;
        Self::new(lambda0, mu_c, p_e, gamma_t, gamma_s, range_km, theta_f)
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: &'static str, reason: &str, value: f64) -> AnalyticsError {
            AnalyticsError::InvalidConditions {
                field,
                reason: format!("{reason}, got {value}"),
            }
        }
        let positive = |field, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(field, "must be positive and finite", v))
            }
        };
        positive("lambda0", self.lambda0)?;
        positive("mu_c", self.mu_c)?;
        positive("gamma_s", self.gamma_s)?;
        positive("range_km", self.range_km)?;
        if !(self.gamma_t >= 0.0 && self.gamma_t.is_finite()) {
            return Err(bad(
                "gamma_t",
                "must be non-negative and finite",
                self.gamma_t,
            ));
        }
        if !(0.0..1.0).contains(&self.p_e) {
            return Err(bad("p_e", "must lie in [0, 1)", self.p_e));
        }
        if !(self.theta_f > 0.0 && self.theta_f <= 1.0) {
            return Err(bad("theta_f", "must lie in (0, 1]", self.theta_f));
        }
        Ok(())
    }

    /// Mean number of TaVs within a window of length `2R`.
    pub fn gamma_bar_t(&self) -> f64 {
        2.0 * self.range_km * self.gamma_t
    }

    /// Mean number of SeVs within a window of length `2R`.
    pub fn gamma_bar_s(&self) -> f64 {
        2.0 * self.range_km * self.gamma_s
    }
}

/// The planned replica count and the quantities it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaPlan {
    pub k_tilde: f64,
    pub k_tilde_round: u32,
    pub k_min: u32,
    pub k_star: u32,
    /// Upper bound of the per-SeV arrival rate at `k_star`.
    pub lambda_hat_c: f64,
    /// Conservative execution delay at `k_star`; `+∞` when unstable.
    pub d_hat_c: f64,
    pub stable: bool,
}

/// Iterator over `(k, P[N = k])` for `N ~ Poisson(mean)`, truncated by the
/// module-wide rule.
#[derive(Debug, Clone)]
pub struct PoissonTerms {
    mean_ln: f64,
    next_k: u64,
    ln_pmf: f64,
    cumulative: f64,
    cap: u64,
    done: bool,
}

pub fn poisson_terms(mean: f64) -> PoissonTerms {
    PoissonTerms {
        mean_ln: mean.ln(),
        next_k: 0,
        ln_pmf: -mean,
        cumulative: 0.0,
        cap: 200u64.max((20.0 * mean).ceil() as u64),
        done: false,
    }
}

impl Iterator for PoissonTerms {
    type Item = (u64, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let k = self.next_k;
        if k > 0 {
            self.ln_pmf += self.mean_ln - (k as f64).ln();
        }
        let pmf = self.ln_pmf.exp();
        self.cumulative += pmf;
        self.next_k += 1;
        if self.cumulative > POISSON_MASS_CUTOFF || self.next_k > self.cap {
            self.done = true;
        }
        Some((k, pmf))
    }
}

fn require_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(AnalyticsError::Domain(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn require_replicas(k: u32) -> Result<()> {
    if k >= 1 {
        Ok(())
    } else {
        Err(AnalyticsError::Domain(
            "replica count must be at least 1".into(),
        ))
    }
}

/// `E[1/Y · 1{Y ≥ 1}]` for `Y ~ Poisson(γ̄_s)`.
pub fn mean_inverse_candidates(gamma_bar_s: f64, mode: SeriesMode) -> Result<f64> {
    require_positive("gamma_bar_s", gamma_bar_s)?;
    Ok(match mode {
        SeriesMode::Approx => 1.0 / gamma_bar_s + 1.0 / (gamma_bar_s * gamma_bar_s),
        SeriesMode::Exact => poisson_terms(gamma_bar_s)
            .skip(1)
            .map(|(k, p)| p / k as f64)
            .sum(),
    })
}

/// `E[min(K, Y)/Y · 1{Y ≥ 1}]`: the probability a given candidate is picked
/// by a TaV that replicates to `K` of its `Y` candidates uniformly at random.
pub fn selection_share(gamma_bar_s: f64, k: u32) -> Result<f64> {
    require_positive("gamma_bar_s", gamma_bar_s)?;
    require_replicas(k)?;
    let k = k as u64;
    Ok(poisson_terms(gamma_bar_s)
        .skip(1)
        .map(|(n, p)| if n <= k { p } else { p * k as f64 / n as f64 })
        .sum())
}

/// Upper bound `λ̂_c` on the mean per-SeV arrival rate.
pub fn arrival_rate_upper_bound(cond: &NetworkConditions, k: u32) -> Result<f64> {
    require_replicas(k)?;
    let c = mean_inverse_candidates(cond.gamma_bar_s(), SeriesMode::Exact)?;
    Ok((cond.gamma_bar_t() + 1.0) * cond.lambda0 * k as f64 * c)
}

/// Mean per-SeV arrival rate `λ_c` without the `min(K, Y) ≤ K` relaxation.
pub fn mean_arrival_rate(cond: &NetworkConditions, k: u32) -> Result<f64> {
    let share = selection_share(cond.gamma_bar_s(), k)?;
    Ok((cond.gamma_bar_t() + 1.0) * cond.lambda0 * share)
}

pub fn arrival_rate(cond: &NetworkConditions, k: u32, model: ArrivalModel) -> Result<f64> {
    match model {
        ArrivalModel::Wald => mean_arrival_rate(cond, k),
        ArrivalModel::UpperBound => arrival_rate_upper_bound(cond, k),
    }
}

/// `E[1/S · 1{S ≥ 1}]` for `S ~ Binomial(n, 1 - p_e)`.
fn mean_inverse_receivers(n: u64, p_e: f64) -> f64 {
    let q = 1.0 - p_e;
    let mut total = 0.0;
    let mut binom = 1.0;
    for k in 1..=n {
        binom *= (n - k + 1) as f64 / k as f64;
        total += binom * q.powi(k as i32) * p_e.powi((n - k) as i32) / k as f64;
    }
    total
}

/// Expected task execution delay for `K` replicas under the given arrival
/// model: an outer Poisson mixture over the candidate count `N_s ≥ 1`, an
/// inner binomial over receivers among `min(K, N_s)` selected SeVs, and the
/// mean `1/(S(μ_c − λ_c))` of the fastest of `S` exponential sojourns.
///
/// Returns `+∞` when `μ_c − λ_c ≤ 0`.
pub fn expected_execution_delay_with(
    cond: &NetworkConditions,
    k: u32,
    model: ArrivalModel,
) -> Result<f64> {
    let lambda_c = arrival_rate(cond, k, model)?;
    let headroom = cond.mu_c - lambda_c;
    if headroom <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let k = k as u64;
    let mut cache: Vec<f64> = Vec::new();
    let mut mixture = 0.0;
    for (n, p) in poisson_terms(cond.gamma_bar_s()).skip(1) {
        let ks = n.min(k) as usize;
        while cache.len() < ks {
            cache.push(mean_inverse_receivers(cache.len() as u64 + 1, cond.p_e));
        }
        mixture += p * cache[ks - 1];
    }
    Ok(mixture / headroom)
}

/// Expected execution delay with the mean per-SeV arrival rate.
pub fn expected_execution_delay(cond: &NetworkConditions, k: u32) -> Result<f64> {
    expected_execution_delay_with(cond, k, ArrivalModel::Wald)
}

/// Conservative execution delay `D̂_c`: the arrival rate is replaced by its
/// upper bound, so a finite value also certifies stability.
pub fn conservative_execution_delay(cond: &NetworkConditions, k: u32) -> Result<f64> {
    expected_execution_delay_with(cond, k, ArrivalModel::UpperBound)
}

/// Real-valued near-optimal replica count `μ_c / (2ĉ)` with `ĉ` in closed form.
pub fn near_optimal_replicas(cond: &NetworkConditions) -> f64 {
    let gs = cond.gamma_bar_s();
    let c_hat = cond.lambda0 * (cond.gamma_bar_t() + 1.0) * (1.0 / gs + 1.0 / (gs * gs));
    cond.mu_c / (2.0 * c_hat)
}

/// Probability that every selected SeV loses the upload.
pub fn failure_probability(cond: &NetworkConditions, k: u32) -> Result<f64> {
    require_replicas(k)?;
    let k = k as u64;
    let mut below = 0.0;
    let mut mass_le_k = 0.0;
    for (n, p) in poisson_terms(cond.gamma_bar_s()) {
        if n > k {
            break;
        }
        mass_le_k += p;
        if n >= 1 {
            below += p * cond.p_e.powi(n as i32);
        }
    }
    let tail = (1.0 - mass_le_k).max(0.0);
    Ok(below + tail * cond.p_e.powi(k as i32))
}

/// Smallest `K ≥ 1` with `p_e^K ≤ θ_f`, i.e. `⌈ln θ_f / ln p_e⌉`.
pub fn min_replicas_for_reliability(theta_f: f64, p_e: f64) -> Result<u32> {
    for (name, v) in [("theta_f", theta_f), ("p_e", p_e)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(AnalyticsError::Domain(format!(
                "{name} must lie in (0, 1), got {v}"
            )));
        }
    }
    let k = (theta_f.ln() / p_e.ln()).ceil();
    Ok((k as u32).max(1))
}

/// Replica plan: the rounded closed-form optimum, raised to the reliability
/// floor when the failure threshold demands it.
pub fn optimal_replicas(cond: &NetworkConditions) -> Result<ReplicaPlan> {
    cond.validate()?;
    let k_tilde = near_optimal_replicas(cond);
    let k_tilde_round = (k_tilde.round() as u32).max(1);
    let k_min = if cond.theta_f >= 1.0 || cond.p_e == 0.0 {
        1
    } else {
        min_replicas_for_reliability(cond.theta_f, cond.p_e)?
    };
    let k_star = k_tilde_round.max(k_min);
    let lambda_hat_c = arrival_rate_upper_bound(cond, k_star)?;
    let d_hat_c = conservative_execution_delay(cond, k_star)?;
    Ok(ReplicaPlan {
        k_tilde,
        k_tilde_round,
        k_min,
        k_star,
        lambda_hat_c,
        d_hat_c,
        stable: cond.mu_c - lambda_hat_c > 0.0,
    })
}

/// Argmin of [`expected_execution_delay`] over `K ∈ 1..=k_max`, ties to the
/// smaller `K`.
pub fn theoretical_optimum_search(cond: &NetworkConditions, k_max: u32) -> Result<u32> {
    theoretical_optimum_search_with(cond, k_max, ArrivalModel::Wald)
}

pub fn theoretical_optimum_search_with(
    cond: &NetworkConditions,
    k_max: u32,
    model: ArrivalModel,
) -> Result<u32> {
    require_replicas(k_max)?;
    let mut best: Option<(u32, f64)> = None;
    for k in 1..=k_max {
        let d = expected_execution_delay_with(cond, k, model)?;
        if !d.is_finite() {
            continue;
        }
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
        .ok_or(AnalyticsError::NoStableReplicaCount { k_max })
}
