//! The off-policy estimator spectrum.
//!
//! Seven families operate on a [`Dataset`] plus optional ratio/q inputs:
//!
//! - `IS` / `PDIS`: trajectory importance sampling, full-product and
//!   per-decision.
//! - `SIS`: each reward reweighted by the state-action occupancy ratio.
//! - `SOPE(n)`: the occupancy ratio n steps in the past times the last n
//!   action likelihood ratios; n = 0 is SIS and n = horizon is PDIS.
//! - `CWPDIS`: per-time self-normalized PDIS.
//! - `WSOPE(n)`: per-time self-normalized SOPE; n = 0 is weighted-SIS and
//!   n = horizon is CWPDIS.
//! - `DRSOPE(n)`: SOPE with a q-function control variate.
//!
//! The endpoint identities above hold bit-for-bit because every family
//! draws its per-step weights from the same `step_weights` routine and
//! accumulates in the same order.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::StaticPolicy;
use crate::qvalue::QTable;
use crate::ratio::{RatioKind, RatioTable};
use crate::sampling::{Dataset, Trajectory};

/// Incremental window products are rebuilt from scratch instead of updated
/// in place whenever the incoming factor drops below this.
const WINDOW_MUL_GUARD: f64 = 1e-300;
/// ... or the outgoing factor would mean dividing by something below this.
const WINDOW_DIV_GUARD: f64 = 1e-12;

/// The estimator families this crate implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EstimatorFamily {
    Is,
    Pdis,
    Sis,
    Sope,
    Cwpdis,
    Wsope,
    Drsope,
}

impl EstimatorFamily {
    pub const ALL: [EstimatorFamily; 7] = [
        EstimatorFamily::Is,
        EstimatorFamily::Pdis,
        EstimatorFamily::Sis,
        EstimatorFamily::Sope,
        EstimatorFamily::Cwpdis,
        EstimatorFamily::Wsope,
        EstimatorFamily::Drsope,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorFamily::Is => "IS",
            EstimatorFamily::Pdis => "PDIS",
            EstimatorFamily::Sis => "SIS",
            EstimatorFamily::Sope => "SOPE",
            EstimatorFamily::Cwpdis => "CWPDIS",
            EstimatorFamily::Wsope => "WSOPE",
            EstimatorFamily::Drsope => "DRSOPE",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "IS" => Ok(EstimatorFamily::Is),
            "PDIS" => Ok(EstimatorFamily::Pdis),
            "SIS" => Ok(EstimatorFamily::Sis),
            "SOPE" => Ok(EstimatorFamily::Sope),
            "CWPDIS" => Ok(EstimatorFamily::Cwpdis),
            "WSOPE" => Ok(EstimatorFamily::Wsope),
            "DRSOPE" => Ok(EstimatorFamily::Drsope),
            other => Err(Error::InvalidArgument(format!("unknown estimator family `{other}`"))),
        }
    }

    /// Spectrum families take a meaningful n; the fixed families sit at a
    /// single point of it.
    pub fn is_spectrum(&self) -> bool {
        matches!(self, EstimatorFamily::Sope | EstimatorFamily::Wsope | EstimatorFamily::Drsope)
    }
}

impl fmt::Display for EstimatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Whether the supplied ratio covers the full horizon (the default,
/// matching a single shared estimate) or only the leading `horizon - n`
/// steps (the exactness-preserving variant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioWindowMode {
    Average,
    Truncated,
}

/// How the doubly-robust correction picks next-step actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrNextAction {
    /// Use v(s') = sum_a pi_e(a|s') q(s', a). Deterministic; weakly lower
    /// variance. The default.
    Expectation,
    /// Draw a' ~ pi_e(.|s') with the given seed.
    Sampled { seed: u64 },
}

/// Diagnostics accompanying an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Largest importance weight applied to any reward.
    pub max_weight: f64,
    /// Effective sample size per time step; present for the self-normalized
    /// families.
    pub ess_per_step: Option<Vec<f64>>,
}

/// The output of an estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Per-trajectory contributions; present for the unweighted families,
    /// whose value is exactly their mean. Self-normalized families do not
    /// decompose per trajectory.
    pub per_trajectory: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

/// w(t, n) for a single 1-based time step `t` of one trajectory, straight
/// from its three-case definition:
///
/// - t = 0: 1;
/// - 1 <= t <= n: the product of the first t likelihood ratios;
/// - t > n: the occupancy ratio at step t-n times the last n likelihood
///   ratios.
///
/// This is the plain-product reference; the estimators themselves use the
/// incremental [`step_weights`] path, which must agree with this to
/// rounding error.
pub fn weight_wtn(
    traj: &Trajectory,
    t: usize,
    n: usize,
    ratio: Option<&RatioTable>,
) -> Result<f64> {
    if t > traj.len() {
        return Err(Error::InvalidArgument(format!(
            "time step {t} exceeds trajectory length {}",
            traj.len()
        )));
    }
    if t == 0 {
        return Ok(1.0);
    }
    if t <= n {
        return Ok(traj.rhos[..t].iter().product());
    }
    let ratio = ratio.ok_or_else(|| {
        Error::MissingInput("w(t, n) with t > n needs a ratio table".into())
    })?;
    let anchor = t - n - 1; // 0-based index of step t-n
    let w = ratio.value(traj.states[anchor], traj.actions[anchor])?;
    let window: f64 = traj.rhos[anchor + 1..t].iter().product();
    Ok(w * window)
}

/// Per-step weights w(t, n) for every step of one trajectory, with the
/// trailing window of likelihood ratios maintained incrementally in O(1)
/// per step. A multiply below `WINDOW_MUL_GUARD` or a divide below
/// `WINDOW_DIV_GUARD` triggers a from-scratch rebuild of the window product
/// instead.
fn step_weights(traj: &Trajectory, n: usize, ratio: Option<&RatioTable>) -> Result<Vec<f64>> {
    let horizon = traj.len();
    let mut weights = Vec::with_capacity(horizon);
    let mut full = 1.0f64;
    for k in 0..n.min(horizon) {
        full *= traj.rhos[k];
        weights.push(full);
    }
    if n < horizon {
        let ratio = ratio.ok_or_else(|| {
            Error::MissingInput(format!(
                "spectrum weights with n = {n} < horizon = {horizon} need a ratio table"
            ))
        })?;
        // Window of the last n ratios ending at step k; enters the loop as
        // the product of the first n ratios.
        let mut window = full;
        for k in n..horizon {
            // For n = 0 the incoming ratio leaves the window immediately
            // (k - n = k), so the product stays exactly 1.
            let incoming = traj.rhos[k];
            let outgoing = traj.rhos[k - n];
            if incoming < WINDOW_MUL_GUARD || outgoing < WINDOW_DIV_GUARD {
                window = traj.rhos[k + 1 - n..=k].iter().product();
            } else {
                window = window * incoming / outgoing;
            }
            let anchor = ratio.value(traj.states[k - n], traj.actions[k - n])?;
            weights.push(anchor * window);
        }
    }
    Ok(weights)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn max_of(weights: &[Vec<f64>]) -> f64 {
    weights
        .iter()
        .flat_map(|row| row.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Discount-weighted dot product of weights and rewards for one trajectory,
/// accumulated in time order. Every unweighted family funnels through this
/// so the endpoint identities hold bitwise.
fn discounted_weighted_return(traj: &Trajectory, weights: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut disc = 1.0;
    for k in 0..traj.len() {
        acc += disc * weights[k] * traj.rewards[k];
        disc *= gamma;
    }
    acc
}

fn unweighted_estimate(dataset: &Dataset, weights: Vec<Vec<f64>>) -> Estimate {
    let gamma = dataset.gamma();
    let per: Vec<f64> = dataset
        .trajectories
        .iter()
        .zip(&weights)
        .map(|(traj, w)| discounted_weighted_return(traj, w, gamma))
        .collect();
    Estimate {
        value: mean(&per),
        diagnostics: Diagnostics { max_weight: max_of(&weights), ess_per_step: None },
        per_trajectory: Some(per),
    }
}

/// Per-time self-normalized combination shared by CWPDIS and W-SOPE.
fn self_normalized_estimate(dataset: &Dataset, weights: Vec<Vec<f64>>) -> Result<Estimate> {
    let gamma = dataset.gamma();
    let horizon = dataset.horizon();
    let mut acc = 0.0;
    let mut disc = 1.0;
    let mut ess = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut sq = 0.0;
        for (traj, w) in dataset.trajectories.iter().zip(&weights) {
            num += w[k] * traj.rewards[k];
            den += w[k];
            sq += w[k] * w[k];
        }
        if den <= 0.0 {
            return Err(Error::ZeroDenominator { step: k + 1 });
        }
        acc += disc * (num / den);
        disc *= gamma;
        ess.push(den * den / sq);
    }
    Ok(Estimate {
        value: acc,
        per_trajectory: None,
        diagnostics: Diagnostics { max_weight: max_of(&weights), ess_per_step: Some(ess) },
    })
}

/// Full-trajectory importance sampling: the entire discounted return
/// reweighted by the length-L likelihood-ratio product.
pub fn estimate_is(dataset: &Dataset) -> Result<Estimate> {
    let gamma = dataset.gamma();
    let mut per = Vec::with_capacity(dataset.len());
    let mut max_weight = f64::NEG_INFINITY;
    for traj in &dataset.trajectories {
        let full: f64 = traj.rhos.iter().product();
        max_weight = max_weight.max(full);
        let mut ret = 0.0;
        let mut disc = 1.0;
        for &r in &traj.rewards {
            ret += disc * r;
            disc *= gamma;
        }
        per.push(full * ret);
    }
    Ok(Estimate {
        value: mean(&per),
        per_trajectory: Some(per),
        diagnostics: Diagnostics { max_weight, ess_per_step: None },
    })
}

/// Per-decision importance sampling: each reward reweighted by the ratio
/// product up to its own step.
pub fn estimate_pdis(dataset: &Dataset) -> Result<Estimate> {
    let n = dataset.horizon();
    let weights = dataset
        .trajectories
        .iter()
        .map(|traj| step_weights(traj, n, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(unweighted_estimate(dataset, weights))
}

/// Stationary-distribution importance sampling: each reward reweighted by
/// the occupancy ratio at its own state-action pair.
pub fn estimate_sis(dataset: &Dataset, ratio: &RatioTable) -> Result<Estimate> {
    let weights = dataset
        .trajectories
        .iter()
        .map(|traj| step_weights(traj, 0, Some(ratio)))
        .collect::<Result<Vec<_>>>()?;
    Ok(unweighted_estimate(dataset, weights))
}

fn check_ratio_window(
    dataset: &Dataset,
    n: usize,
    ratio: &RatioTable,
    mode: Option<RatioWindowMode>,
) -> Result<()> {
    let horizon = dataset.horizon();
    if n > horizon {
        return Err(Error::InvalidArgument(format!(
            "spectrum index n = {n} exceeds horizon {horizon}"
        )));
    }
    if n == horizon {
        return Ok(()); // ratio unused
    }
    let accepts = |expected: usize, want_average: bool| match ratio.kind() {
        RatioKind::OracleAverage => want_average,
        RatioKind::OracleTruncated(t) => t == expected,
        RatioKind::ModelBased { horizon: h } | RatioKind::MinmaxTabular { horizon: h } => {
            h == expected
        }
        RatioKind::OracleTimeIndexed(_) => false,
    };
    let ok = match mode {
        Some(RatioWindowMode::Average) => accepts(horizon, true),
        Some(RatioWindowMode::Truncated) => accepts(horizon - n, false),
        // Either flavor is coherent when the caller does not pin one.
        None => accepts(horizon, true) || accepts(horizon - n, false),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "ratio kind {:?} does not fit window mode {mode:?} for n = {n} over horizon {horizon}",
            ratio.kind()
        )))
    }
}

/// The spectrum estimator: reward at step t is reweighted by the occupancy
/// ratio n steps back times the last n likelihood ratios (full products for
/// the first n steps).
pub fn estimate_sope(
    dataset: &Dataset,
    n: usize,
    ratio: &RatioTable,
    mode: RatioWindowMode,
) -> Result<Estimate> {
    check_ratio_window(dataset, n, ratio, Some(mode))?;
    let weights = dataset
        .trajectories
        .iter()
        .map(|traj| step_weights(traj, n, Some(ratio)))
        .collect::<Result<Vec<_>>>()?;
    Ok(unweighted_estimate(dataset, weights))
}

/// Per-time self-normalized PDIS.
pub fn estimate_cwpdis(dataset: &Dataset) -> Result<Estimate> {
    let n = dataset.horizon();
    let weights = dataset
        .trajectories
        .iter()
        .map(|traj| step_weights(traj, n, None))
        .collect::<Result<Vec<_>>>()?;
    self_normalized_estimate(dataset, weights)
}

/// Per-time self-normalized SIS: the n = 0 endpoint of the weighted
/// spectrum.
pub fn estimate_weighted_sis(dataset: &Dataset, ratio: &RatioTable) -> Result<Estimate> {
    let weights = dataset
        .trajectories
        .iter()
        .map(|traj| step_weights(traj, 0, Some(ratio)))
        .collect::<Result<Vec<_>>>()?;
    self_normalized_estimate(dataset, weights)
}

/// Per-time self-normalized spectrum estimator.
pub fn estimate_wsope(
    dataset: &Dataset,
    n: usize,
    ratio: &RatioTable,
    mode: RatioWindowMode,
) -> Result<Estimate> {
    check_ratio_window(dataset, n, ratio, Some(mode))?;
    let weights = dataset
        .trajectories
        .iter()
        .map(|traj| step_weights(traj, n, Some(ratio)))
        .collect::<Result<Vec<_>>>()?;
    self_normalized_estimate(dataset, weights)
}

/// Doubly-robust spectrum estimator: the q-function control variate is
/// applied per step under the same w(t, n) weights as SOPE.
///
/// In `Expectation` mode the next-step value is v(s') and the leading term
/// is v(s_1); in `Sampled` mode both draw an action from pi_e instead. The
/// step at the horizon edge uses a next-step value of 0, consistent with
/// absorbing padding (q vanishes on absorbing states).
pub fn estimate_dr_sope(
    dataset: &Dataset,
    n: usize,
    ratio: &RatioTable,
    q: &QTable,
    next_action: DrNextAction,
) -> Result<Estimate> {
    check_ratio_window(dataset, n, ratio, None)?;
    if q.n_states() != dataset.meta.n_states || q.n_actions() != dataset.meta.n_actions {
        return Err(Error::MissingInput(format!(
            "q table shape {}x{} does not match dataset {}x{}",
            q.n_states(),
            q.n_actions(),
            dataset.meta.n_states,
            dataset.meta.n_actions
        )));
    }
    let gamma = dataset.gamma();
    let horizon = dataset.horizon();
    // Sampled mode draws from pi_e with uniform rows on absorbing states,
    // matching how the data was annotated.
    let pi_e = effective_for_meta(dataset)?;

    let mut per = Vec::with_capacity(dataset.len());
    let mut max_weight = f64::NEG_INFINITY;
    for (i, traj) in dataset.trajectories.iter().enumerate() {
        let weights = step_weights(traj, n, Some(ratio))?;
        max_weight = max_weight.max(weights.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let mut rng = match next_action {
            DrNextAction::Expectation => None,
            DrNextAction::Sampled { seed } => {
                Some(ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)))
            }
        };
        let value_at = |s: usize, rng: &mut Option<ChaCha8Rng>| -> f64 {
            match rng {
                None => q.v[s],
                Some(rng) => {
                    let a = sample_action(rng, &pi_e, s);
                    q.q.get(s, a)
                }
            }
        };
        let mut acc = value_at(traj.states[0], &mut rng);
        let mut disc = 1.0;
        for k in 0..horizon {
            let next = if k + 1 < horizon { value_at(traj.states[k + 1], &mut rng) } else { 0.0 };
            let correction =
                traj.rewards[k] + gamma * next - q.q.get(traj.states[k], traj.actions[k]);
            acc += disc * weights[k] * correction;
            disc *= gamma;
        }
        per.push(acc);
    }
    Ok(Estimate {
        value: mean(&per),
        per_trajectory: Some(per),
        diagnostics: Diagnostics { max_weight, ess_per_step: None },
    })
}

fn effective_for_meta(dataset: &Dataset) -> Result<StaticPolicy> {
    let pi = &dataset.pi_e;
    if pi.n_states() != dataset.meta.n_states || pi.n_actions() != dataset.meta.n_actions {
        return Err(Error::InvalidArgument("dataset policy shape mismatch".into()));
    }
    let u = 1.0 / dataset.meta.n_actions as f64;
    let probs = crate::tables::SaTable::from_fn(pi.n_states(), pi.n_actions(), |s, a| {
        if dataset.meta.absorbing.contains(&s) {
            u
        } else {
            pi.prob(s, a)
        }
    });
    StaticPolicy::new(probs)
}

fn sample_action(rng: &mut ChaCha8Rng, policy: &StaticPolicy, s: usize) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for a in 0..policy.n_actions() {
        let p = policy.prob(s, a);
        if p > 0.0 {
            last = a;
            acc += p;
            if u < acc {
                return a;
            }
        }
    }
    last
}

/// A fully specified estimator: family plus its spectrum index and input
/// modes. The harness builds these from its configuration and evaluates
/// them against shared inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSpec {
    pub family: EstimatorFamily,
    /// Spectrum index; ignored by the fixed families.
    pub n: usize,
    pub ratio_mode: RatioWindowMode,
    pub dr_next_action: DrNextAction,
}

impl EstimatorSpec {
    pub fn new(family: EstimatorFamily, n: usize) -> Self {
        EstimatorSpec {
            family,
            n,
            ratio_mode: RatioWindowMode::Average,
            dr_next_action: DrNextAction::Expectation,
        }
    }

    /// Evaluates this spec. `ratio` is required for SIS and for the
    /// spectrum families whenever n < horizon; `q` is required for DRSOPE.
    pub fn evaluate(
        &self,
        dataset: &Dataset,
        ratio: Option<&RatioTable>,
        q: Option<&QTable>,
    ) -> Result<Estimate> {
        let need_ratio = || {
            ratio.ok_or_else(|| {
                Error::MissingInput(format!("{} needs a ratio table", self.family))
            })
        };
        match self.family {
            EstimatorFamily::Is => estimate_is(dataset),
            EstimatorFamily::Pdis => estimate_pdis(dataset),
            EstimatorFamily::Cwpdis => estimate_cwpdis(dataset),
            EstimatorFamily::Sis => estimate_sis(dataset, need_ratio()?),
            EstimatorFamily::Sope => estimate_sope(dataset, self.n, need_ratio()?, self.ratio_mode),
            EstimatorFamily::Wsope => {
                estimate_wsope(dataset, self.n, need_ratio()?, self.ratio_mode)
            }
            EstimatorFamily::Drsope => {
                let q = q.ok_or_else(|| {
                    Error::MissingInput("DRSOPE needs a q table".into())
                })?;
                estimate_dr_sope(dataset, self.n, need_ratio()?, q, self.dr_next_action)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumerate::expectation_over_trajectories;
    use crate::envs::{build_graph_env, make_static_policy};
    use crate::occupancy::exact_j;
    use crate::qvalue::{exact_q, HorizonMode};
    use crate::ratio::{oracle_ratio, RatioKind};
    use crate::sampling::{sample_dataset, DatasetMeta};
    use crate::tables::SaTable;
    use std::collections::BTreeSet;

    fn graph_dataset(chain: usize, m: usize, seed: u64) -> (crate::mdp::TabularMdp, Dataset) {
        let mdp = build_graph_env(chain, 0.98).unwrap();
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let data = sample_dataset(&mdp, &pi_b, &pi_e, m, seed).unwrap();
        (mdp, data)
    }

    /// A dataset with known plain contents for arithmetic checks.
    fn synthetic_dataset(
        rhos: Vec<Vec<f64>>,
        rewards: Vec<Vec<f64>>,
        gamma: f64,
    ) -> Dataset {
        let horizon = rhos[0].len();
        let trajectories: Vec<Trajectory> = rhos
            .into_iter()
            .zip(rewards)
            .map(|(r, rw)| Trajectory {
                states: vec![0; horizon],
                actions: vec![0; horizon],
                rewards: rw,
                rhos: r,
            })
            .collect();
        let pi = crate::mdp::StaticPolicy::uniform(1, 1);
        let meta = DatasetMeta {
            gamma,
            horizon,
            n_states: 1,
            n_actions: 1,
            absorbing: BTreeSet::new(),
        };
        Dataset::from_parts(trajectories, pi.clone(), pi, meta, 0).unwrap()
    }

    fn unit_ratio(n_states: usize, n_actions: usize, value: f64) -> RatioTable {
        RatioTable::new(
            SaTable::from_fn(n_states, n_actions, |_, _| value),
            RatioKind::OracleAverage,
            vec![true; n_states * n_actions],
        )
        .unwrap()
    }

    #[test]
    fn wtn_three_cases() {
        let traj = Trajectory {
            states: vec![0, 0, 0],
            actions: vec![0, 0, 0],
            rewards: vec![0.0; 3],
            rhos: vec![2.0, 0.5, 3.0],
        };
        let ratio = unit_ratio(1, 1, 1.5);
        assert_eq!(weight_wtn(&traj, 0, 1, Some(&ratio)).unwrap(), 1.0);
        // n >= horizon: plain running products.
        for t in 1..=3 {
            let expected: f64 = traj.rhos[..t].iter().product();
            assert_eq!(weight_wtn(&traj, t, 3, None).unwrap(), expected);
            assert_eq!(weight_wtn(&traj, t, 7, None).unwrap(), expected);
        }
        // t = 3, n = 1: ratio at step 2 times the last ratio.
        assert_eq!(weight_wtn(&traj, 3, 1, Some(&ratio)).unwrap(), 1.5 * 3.0);
        assert!(weight_wtn(&traj, 4, 1, Some(&ratio)).is_err());
    }

    #[test]
    fn incremental_weights_match_direct_products() {
        let (_, data) = graph_dataset(6, 32, 5);
        let mdp = build_graph_env(6, 0.98).unwrap();
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        for n in 0..=data.horizon() {
            for traj in &data.trajectories {
                let fast = step_weights(traj, n, Some(&ratio)).unwrap();
                for (k, &w) in fast.iter().enumerate() {
                    let direct = weight_wtn(traj, k + 1, n, Some(&ratio)).unwrap();
                    let tol = 1e-12 * direct.abs().max(1.0);
                    assert!(
                        (w - direct).abs() <= tol,
                        "n={n} k={k}: incremental {w} vs direct {direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn window_guard_survives_zero_ratios() {
        // rho hits exactly zero mid-stream; the incremental window must
        // recover once the zero leaves the window.
        let traj = Trajectory {
            states: vec![0; 5],
            actions: vec![0; 5],
            rewards: vec![1.0; 5],
            rhos: vec![2.0, 0.0, 0.5, 4.0, 1.5],
        };
        let ratio = unit_ratio(1, 1, 1.0);
        let weights = step_weights(&traj, 2, Some(&ratio)).unwrap();
        for (k, &w) in weights.iter().enumerate() {
            let direct = weight_wtn(&traj, k + 1, 2, Some(&ratio)).unwrap();
            assert_eq!(w, direct, "k={k}");
        }
        assert_eq!(weights[2], 0.0); // window still contains the zero
        assert_eq!(weights[3], 0.5 * 4.0); // zero left the window
    }

    #[test]
    fn is_and_pdis_on_policy_reduce_to_mean_return() {
        let mdp = build_graph_env(4, 0.98).unwrap();
        let pi = make_static_policy(mdp.n_states(), 0.6).unwrap();
        let data = sample_dataset(&mdp, &pi, &pi, 64, 9).unwrap();
        let mean_return: f64 = data
            .trajectories
            .iter()
            .map(|t| {
                let mut acc = 0.0;
                let mut disc = 1.0;
                for &r in &t.rewards {
                    acc += disc * r;
                    disc *= data.gamma();
                }
                acc
            })
            .sum::<f64>()
            / data.len() as f64;
        let is = estimate_is(&data).unwrap();
        let pdis = estimate_pdis(&data).unwrap();
        assert!((is.value - mean_return).abs() < 1e-12);
        assert!((pdis.value - mean_return).abs() < 1e-12);
        let per = is.per_trajectory.unwrap();
        assert!((is.value - mean(&per)).abs() < 1e-12);
    }

    #[test]
    fn single_short_trajectory_arithmetic() {
        let data = synthetic_dataset(vec![vec![2.0]], vec![vec![3.0]], 1.0);
        assert_eq!(estimate_is(&data).unwrap().value, 6.0);
        assert_eq!(estimate_pdis(&data).unwrap().value, 6.0);
    }

    #[test]
    fn sope_hand_arithmetic() {
        // L=2, n=1, gamma=0.5, rho=(2, 0.5), R=(1, 4), ratio = 1.5:
        // 2*1 + 0.5*1.5*0.5*4 = 3.5.
        let data = synthetic_dataset(vec![vec![2.0, 0.5]], vec![vec![1.0, 4.0]], 0.5);
        let ratio = unit_ratio(1, 1, 1.5);
        let est = estimate_sope(&data, 1, &ratio, RatioWindowMode::Average).unwrap();
        assert!((est.value - 3.5).abs() < 1e-15);
    }

    #[test]
    fn pdis_brute_force_expectation_is_unbiased() {
        let mdp = build_graph_env(2, 0.98).unwrap();
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let meta = DatasetMeta::of(&mdp);
        let truth = exact_j(&mdp, &pi_e).unwrap();
        for f in [estimate_is as fn(&Dataset) -> Result<Estimate>, estimate_pdis] {
            let expect = expectation_over_trajectories(&mdp, &pi_b, &pi_e, 100_000, |traj| {
                let single = Dataset::from_parts(
                    vec![traj.clone()],
                    pi_b.clone(),
                    pi_e.clone(),
                    meta.clone(),
                    0,
                )?;
                Ok(f(&single)?.value)
            })
            .unwrap();
            assert!((expect - truth).abs() < 1e-10, "gap {}", (expect - truth).abs());
        }
    }

    #[test]
    fn sis_with_unit_ratio_is_mean_return() {
        let mdp = build_graph_env(3, 0.98).unwrap();
        let pi = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let data = sample_dataset(&mdp, &pi, &pi, 32, 1).unwrap();
        let ratio = unit_ratio(mdp.n_states(), 2, 1.0);
        let sis = estimate_sis(&data, &ratio).unwrap();
        let pdis = estimate_pdis(&data).unwrap();
        assert!((sis.value - pdis.value).abs() < 1e-12);
    }

    #[test]
    fn sis_with_time_indexed_ratios_is_exactly_unbiased() {
        // Substituting the time-t ratio at each step makes the change of
        // measure exact even at finite horizon.
        let mdp = build_graph_env(2, 0.98).unwrap();
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let tables: Vec<_> = (1..=mdp.horizon())
            .map(|t| oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleTimeIndexed(t)).unwrap())
            .collect();
        let truth = exact_j(&mdp, &pi_e).unwrap();
        let expect = expectation_over_trajectories(&mdp, &pi_b, &pi_e, 100_000, |traj| {
            let mut acc = 0.0;
            let mut disc = 1.0;
            for k in 0..traj.len() {
                acc += disc * tables[k].value(traj.states[k], traj.actions[k])? * traj.rewards[k];
                disc *= mdp.gamma();
            }
            Ok(acc)
        })
        .unwrap();
        assert!((expect - truth).abs() < 1e-10, "gap {}", (expect - truth).abs());
    }

    #[test]
    fn sope_endpoints_are_bitwise_identities() {
        let (mdp, data) = graph_dataset(6, 48, 3);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        let sope0 = estimate_sope(&data, 0, &ratio, RatioWindowMode::Average).unwrap();
        let sis = estimate_sis(&data, &ratio).unwrap();
        assert_eq!(sope0.value.to_bits(), sis.value.to_bits());
        assert_eq!(sope0.per_trajectory, sis.per_trajectory);
        let sope_l =
            estimate_sope(&data, data.horizon(), &ratio, RatioWindowMode::Average).unwrap();
        let pdis = estimate_pdis(&data).unwrap();
        assert_eq!(sope_l.value.to_bits(), pdis.value.to_bits());
        assert_eq!(sope_l.per_trajectory, pdis.per_trajectory);
    }

    #[test]
    fn wsope_endpoints_are_bitwise_identities() {
        let (mdp, data) = graph_dataset(6, 48, 4);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        let w0 = estimate_wsope(&data, 0, &ratio, RatioWindowMode::Average).unwrap();
        let wsis = estimate_weighted_sis(&data, &ratio).unwrap();
        assert_eq!(w0.value.to_bits(), wsis.value.to_bits());
        let wl = estimate_wsope(&data, data.horizon(), &ratio, RatioWindowMode::Average).unwrap();
        let cw = estimate_cwpdis(&data).unwrap();
        assert_eq!(wl.value.to_bits(), cw.value.to_bits());
    }

    #[test]
    fn sope_truncated_expectation_is_exact_for_every_n() {
        let mdp = build_graph_env(2, 0.98).unwrap().with_horizon(3).unwrap();
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let meta = DatasetMeta::of(&mdp);
        let truth = exact_j(&mdp, &pi_e).unwrap();
        for n in 0..=mdp.horizon() {
            let ratio = if n < mdp.horizon() {
                oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleTruncated(mdp.horizon() - n))
                    .unwrap()
            } else {
                // Unused at n = horizon.
                oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleTruncated(1)).unwrap()
            };
            let expect = expectation_over_trajectories(&mdp, &pi_b, &pi_e, 1_000_000, |traj| {
                let single = Dataset::from_parts(
                    vec![traj.clone()],
                    pi_b.clone(),
                    pi_e.clone(),
                    meta.clone(),
                    0,
                )?;
                Ok(estimate_sope(&single, n, &ratio, RatioWindowMode::Truncated)?.value)
            })
            .unwrap();
            assert!(
                (expect - truth).abs() < 1e-10,
                "n={n}: expectation {expect} vs J {truth}"
            );
        }
    }

    #[test]
    fn cwpdis_degenerate_cases() {
        // m = 1: self-normalization collapses to the plain discounted return.
        let data = synthetic_dataset(vec![vec![2.0, 0.25, 3.0]], vec![vec![1.0, 2.0, -1.0]], 0.9);
        let cw = estimate_cwpdis(&data).unwrap();
        let expected = 1.0 + 0.9 * 2.0 + 0.81 * -1.0;
        assert!((cw.value - expected).abs() < 1e-12);
        assert!(cw.per_trajectory.is_none());

        // Constant rewards: exactly c * sum of discounts, any weights.
        let data = synthetic_dataset(
            vec![vec![2.0, 0.25, 3.0], vec![0.5, 1.5, 0.75]],
            vec![vec![2.5; 3], vec![2.5; 3]],
            0.9,
        );
        let cw = estimate_cwpdis(&data).unwrap();
        let z = 1.0 + 0.9 + 0.81;
        assert!((cw.value - 2.5 * z).abs() < 1e-12 * cw.value.abs());
    }

    #[test]
    fn cwpdis_zero_denominator_names_the_step() {
        // pi_e gives zero probability to every sampled action at step 2.
        let data = synthetic_dataset(
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            1.0,
        );
        match estimate_cwpdis(&data) {
            Err(Error::ZeroDenominator { step }) => assert_eq!(step, 2),
            other => panic!("expected zero-denominator error, got {other:?}"),
        }
    }

    #[test]
    fn wsope_constant_rewards_for_every_n() {
        let (mdp, data) = graph_dataset(5, 16, 8);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        let constant = 1.75;
        let mut flat = data.clone();
        for traj in &mut flat.trajectories {
            for r in &mut traj.rewards {
                *r = constant;
            }
        }
        let z: f64 = (0..flat.horizon()).map(|t| flat.gamma().powi(t as i32)).sum();
        for n in 0..=flat.horizon() {
            let est = estimate_wsope(&flat, n, &ratio, RatioWindowMode::Average).unwrap();
            assert!(
                (est.value - constant * z).abs() < 1e-12 * (constant * z).abs(),
                "n={n}: {} vs {}",
                est.value,
                constant * z
            );
        }
    }

    #[test]
    fn masked_ratio_is_a_hard_estimator_error() {
        let (mdp, data) = graph_dataset(3, 8, 2);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let good = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        // Rebuild the table with the start state masked out; every
        // trajectory touches it.
        let mut support = vec![true; mdp.n_states() * 2];
        let mut w = SaTable::zeros(mdp.n_states(), 2);
        for (s, a, v) in good.table().iter() {
            if s == 0 {
                support[w.flat_index(s, a)] = false;
            } else {
                w.set(s, a, v);
            }
        }
        let masked = RatioTable::new(w, RatioKind::OracleAverage, support).unwrap();
        let err = estimate_sis(&data, &masked);
        assert!(matches!(err, Err(Error::MaskedRatio { state: 0, .. })));
        let err = estimate_sope(&data, 1, &masked, RatioWindowMode::Average);
        assert!(matches!(err, Err(Error::MaskedRatio { state: 0, .. })));
    }

    #[test]
    fn dr_with_zero_q_reduces_to_sope_bitwise() {
        let (mdp, data) = graph_dataset(6, 32, 6);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        let zero_q = QTable::zeros(mdp.n_states(), 2);
        for n in [0, 1, 3, data.horizon()] {
            let dr = estimate_dr_sope(&data, n, &ratio, &zero_q, DrNextAction::Expectation)
                .unwrap();
            let plain = estimate_sope(&data, n, &ratio, RatioWindowMode::Average).unwrap();
            assert_eq!(dr.value.to_bits(), plain.value.to_bits(), "n={n}");
            assert_eq!(dr.per_trajectory, plain.per_trajectory);
        }
    }

    #[test]
    fn dr_with_exact_q_has_zero_variance_on_deterministic_chain() {
        // Deterministic 2-state micro-MDP: state 0 pays 1 and falls into the
        // absorbing state 1.
        let n_states = 2;
        let mut transition = vec![0.0; n_states * 2 * n_states];
        for a in 0..2 {
            transition[a * n_states + 1] = 1.0; // s = 0
            transition[(2 + a) * n_states + 1] = 1.0; // s = 1 self-loop
        }
        let reward = SaTable::from_fn(n_states, 2, |s, _| if s == 0 { 1.0 } else { 0.0 });
        let mdp = crate::mdp::TabularMdp::new(
            n_states,
            2,
            transition,
            reward,
            vec![1.0, 0.0],
            0.9,
            4,
            BTreeSet::from([1]),
        )
        .unwrap();
        let pi_b = make_static_policy(n_states, 0.5).unwrap();
        let pi_e = make_static_policy(n_states, 0.9).unwrap();
        let data = sample_dataset(&mdp, &pi_b, &pi_e, 16, 0).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        let q = exact_q(&mdp, &pi_e, HorizonMode::Infinite).unwrap();
        let truth = exact_j(&mdp, &pi_e).unwrap();
        for n in 0..=data.horizon() {
            let dr =
                estimate_dr_sope(&data, n, &ratio, &q, DrNextAction::Expectation).unwrap();
            for (i, v) in dr.per_trajectory.unwrap().iter().enumerate() {
                assert!(
                    (v - truth).abs() < 1e-10,
                    "n={n}, trajectory {i}: {v} vs J {truth}"
                );
            }
        }
    }

    /// Classic trajectory-wise doubly-robust estimator, written directly
    /// from its own formula as an independent reference.
    fn trajectory_wise_dr(data: &Dataset, q: &QTable) -> f64 {
        let gamma = data.gamma();
        let per: Vec<f64> = data
            .trajectories
            .iter()
            .map(|traj| {
                let mut acc = 0.0;
                let mut disc = 1.0;
                let mut rho_prev = 1.0; // rho_{1:t-1}
                for k in 0..traj.len() {
                    let rho_to_t = rho_prev * traj.rhos[k];
                    acc += disc
                        * (rho_prev * q.v[traj.states[k]]
                            + rho_to_t
                                * (traj.rewards[k] - q.q.get(traj.states[k], traj.actions[k])));
                    rho_prev = rho_to_t;
                    disc *= gamma;
                }
                acc
            })
            .collect();
        mean(&per)
    }

    /// State-action-distribution doubly-robust estimator, the direct
    /// formula with a single occupancy-ratio weight per step.
    fn distribution_dr(data: &Dataset, ratio: &RatioTable, q: &QTable) -> f64 {
        let gamma = data.gamma();
        let per: Vec<f64> = data
            .trajectories
            .iter()
            .map(|traj| {
                let mut acc = q.v[traj.states[0]];
                let mut disc = 1.0;
                for k in 0..traj.len() {
                    let w = ratio.value(traj.states[k], traj.actions[k]).unwrap();
                    let next = if k + 1 < traj.len() { q.v[traj.states[k + 1]] } else { 0.0 };
                    acc += disc
                        * w
                        * (traj.rewards[k] + gamma * next
                            - q.q.get(traj.states[k], traj.actions[k]));
                    disc *= gamma;
                }
                acc
            })
            .collect();
        mean(&per)
    }

    #[test]
    fn dr_endpoints_match_standalone_references() {
        let (mdp, data) = graph_dataset(5, 24, 12);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        let q = exact_q(&mdp, &pi_e, HorizonMode::Infinite).unwrap();
        let dr_l =
            estimate_dr_sope(&data, data.horizon(), &ratio, &q, DrNextAction::Expectation)
                .unwrap();
        let reference_l = trajectory_wise_dr(&data, &q);
        assert!(
            (dr_l.value - reference_l).abs() < 1e-10,
            "{} vs {}",
            dr_l.value,
            reference_l
        );
        let dr_0 = estimate_dr_sope(&data, 0, &ratio, &q, DrNextAction::Expectation).unwrap();
        let reference_0 = distribution_dr(&data, &ratio, &q);
        assert!((dr_0.value - reference_0).abs() < 1e-10);
    }

    #[test]
    fn dr_sampled_mode_is_seed_deterministic() {
        let (mdp, data) = graph_dataset(4, 16, 3);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        let q = exact_q(&mdp, &pi_e, HorizonMode::Infinite).unwrap();
        let a = estimate_dr_sope(&data, 2, &ratio, &q, DrNextAction::Sampled { seed: 42 })
            .unwrap();
        let b = estimate_dr_sope(&data, 2, &ratio, &q, DrNextAction::Sampled { seed: 42 })
            .unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        let c = estimate_dr_sope(&data, 2, &ratio, &q, DrNextAction::Sampled { seed: 43 })
            .unwrap();
        assert_ne!(a.value.to_bits(), c.value.to_bits());
    }

    #[test]
    fn spectrum_weights_are_positive_on_positive_inputs() {
        let (mdp, data) = graph_dataset(5, 16, 1);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        for n in 0..=data.horizon() {
            for traj in &data.trajectories {
                let weights = step_weights(traj, n, Some(&ratio)).unwrap();
                assert!(weights.iter().all(|&w| w > 0.0), "n={n}");
            }
        }
    }

    #[test]
    fn ratio_window_mode_is_validated() {
        let (mdp, data) = graph_dataset(4, 8, 2);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let avg = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        let tr2 = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleTruncated(2)).unwrap();
        // Average-mode ratio rejected in truncated mode and vice versa.
        assert!(estimate_sope(&data, 2, &avg, RatioWindowMode::Truncated).is_err());
        assert!(estimate_sope(&data, 2, &tr2, RatioWindowMode::Average).is_err());
        assert!(estimate_sope(&data, 2, &tr2, RatioWindowMode::Truncated).is_ok());
        // Wrong window length rejected.
        assert!(estimate_sope(&data, 1, &tr2, RatioWindowMode::Truncated).is_err());
        // n out of range rejected.
        assert!(estimate_sope(&data, 5, &avg, RatioWindowMode::Average).is_err());
    }

    #[test]
    fn estimator_spec_dispatch() {
        let (mdp, data) = graph_dataset(4, 8, 2);
        let pi_b = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let pi_e = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage).unwrap();
        let q = exact_q(&mdp, &pi_e, HorizonMode::Infinite).unwrap();
        for family in EstimatorFamily::ALL {
            let spec = EstimatorSpec::new(family, 2);
            let est = spec.evaluate(&data, Some(&ratio), Some(&q)).unwrap();
            assert!(est.value.is_finite(), "{family}");
        }
        // Missing inputs are named errors.
        let spec = EstimatorSpec::new(EstimatorFamily::Drsope, 1);
        assert!(matches!(spec.evaluate(&data, Some(&ratio), None), Err(Error::MissingInput(_))));
        let spec = EstimatorSpec::new(EstimatorFamily::Sis, 0);
        assert!(matches!(spec.evaluate(&data, None, None), Err(Error::MissingInput(_))));
    }

    #[test]
    fn family_names_round_trip() {
        for family in EstimatorFamily::ALL {
            assert_eq!(EstimatorFamily::parse(family.name()).unwrap(), family);
        }
        assert!(EstimatorFamily::parse("nope").is_err());
    }
}
