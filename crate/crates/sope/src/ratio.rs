//! State-action distribution correction ratios: exact oracles and
//! data-driven estimates.
//!
//! A [`RatioTable`] holds w(s, a) = d^{pi_e}(s, a) / d^{pi_b}(s, a) for one
//! flavor of occupancy (time-indexed, leading-window average, or the full
//! discounted average), plus a support mask over d^{pi_b} > 0. Entries off
//! the support are stored as 0 and flagged; estimators that touch them get
//! a hard error rather than a silent 1, because a masked hit always means a
//! support or estimation inconsistency.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{StaticPolicy, TabularMdp};
use crate::occupancy::{occupancy_avg, occupancy_t, occupancy_trunc};
use crate::sampling::Dataset;
use crate::tables::SaTable;

/// Default pseudo-count per (s, a, s') triple when fitting transition
/// models; 0 gives the plain maximum-likelihood estimate.
pub const MODEL_SMOOTHING: f64 = 0.01;

/// Ridge coefficient for the tabular stationarity solve.
pub const MINMAX_RIDGE: f64 = 1e-3;

/// Which occupancy ratio a table holds, and for estimated kinds, how many
/// leading time steps of the data informed it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioKind {
    /// Exact d^{pi_e} / d^{pi_b} over the full horizon.
    OracleAverage,
    /// Exact ratio of leading-window averages d_{1:T}.
    OracleTruncated(usize),
    /// Exact ratio of the time-t distributions (t is 1-based).
    OracleTimeIndexed(usize),
    /// Occupancy DP on a model fit from data; `horizon` leading steps.
    ModelBased { horizon: usize },
    /// Tabular stationarity linear solve on empirical quantities; `horizon`
    /// leading steps.
    MinmaxTabular { horizon: usize },
}

impl RatioKind {
    /// The leading-window length this table was built for, if the kind is
    /// window-structured.
    pub fn window(&self) -> Option<usize> {
        match *self {
            RatioKind::OracleTruncated(t) => Some(t),
            RatioKind::ModelBased { horizon } | RatioKind::MinmaxTabular { horizon } => {
                Some(horizon)
            }
            RatioKind::OracleAverage | RatioKind::OracleTimeIndexed(_) => None,
        }
    }
}

/// A distribution-correction table with its provenance and support mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    w: SaTable,
    kind: RatioKind,
    support: Vec<bool>,
}

impl RatioTable {
    pub fn new(w: SaTable, kind: RatioKind, support: Vec<bool>) -> Result<Self> {
        if support.len() != w.n_states() * w.n_actions() {
            return Err(Error::InvalidArgument("support mask length mismatch".into()));
        }
        for (s, a, v) in w.iter() {
            let on = support[w.flat_index(s, a)];
            if on && !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "ratio ({s},{a}) on support is not finite"
                )));
            }
            if !on && v != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "masked ratio ({s},{a}) must be stored as 0"
                )));
            }
        }
        Ok(RatioTable { w, kind, support })
    }

    pub fn kind(&self) -> RatioKind {
        self.kind
    }

    /// The ratio at (s, a); hard error if the entry is masked.
    #[inline]
    pub fn value(&self, s: usize, a: usize) -> Result<f64> {
        if self.support[self.w.flat_index(s, a)] {
            Ok(self.w.get(s, a))
        } else {
            Err(Error::MaskedRatio { state: s, action: a })
        }
    }

    /// The stored entry without the mask check (masked entries read 0).
    #[inline]
    pub fn raw(&self, s: usize, a: usize) -> f64 {
        self.w.get(s, a)
    }

    #[inline]
    pub fn on_support(&self, s: usize, a: usize) -> bool {
        self.support[self.w.flat_index(s, a)]
    }

    pub fn table(&self) -> &SaTable {
        &self.w
    }

    pub fn n_states(&self) -> usize {
        self.w.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.w.n_actions()
    }
}

fn ratio_of(d_e: &SaTable, d_b: &SaTable, kind: RatioKind) -> Result<RatioTable> {
    let ns = d_b.n_states();
    let na = d_b.n_actions();
    let mut w = SaTable::zeros(ns, na);
    let mut support = vec![false; ns * na];
    for (s, a, mass_b) in d_b.iter() {
        let mass_e = d_e.get(s, a);
        if mass_b > 0.0 {
            support[w.flat_index(s, a)] = true;
            w.set(s, a, mass_e / mass_b);
        } else if mass_e > 0.0 {
            return Err(Error::SupportViolation(format!(
                "evaluation policy puts occupancy {mass_e} on ({s},{a}) where the behavior \
                 occupancy is zero"
            )));
        }
        // Zero over zero: leave masked at 0.
    }
    RatioTable::new(w, kind, support)
}

/// Exact occupancy ratio computed by dynamic programming on the known MDP.
pub fn oracle_ratio(
    mdp: &TabularMdp,
    pi_e: &StaticPolicy,
    pi_b: &StaticPolicy,
    kind: RatioKind,
) -> Result<RatioTable> {
    match kind {
        RatioKind::OracleAverage => {
            let d_e = occupancy_avg(mdp, pi_e)?;
            let d_b = occupancy_avg(mdp, pi_b)?;
            ratio_of(&d_e, &d_b, kind)
        }
        RatioKind::OracleTruncated(t) => {
            let d_e = occupancy_trunc(mdp, pi_e, t)?;
            let d_b = occupancy_trunc(mdp, pi_b, t)?;
            ratio_of(&d_e, &d_b, kind)
        }
        RatioKind::OracleTimeIndexed(t) => {
            if t < 1 || t > mdp.horizon() {
                return Err(Error::InvalidArgument(format!(
                    "time index {t} out of range 1..={}",
                    mdp.horizon()
                )));
            }
            let d_e = occupancy_t(mdp, pi_e)?;
            let d_b = occupancy_t(mdp, pi_b)?;
            ratio_of(&d_e[t - 1], &d_b[t - 1], kind)
        }
        RatioKind::ModelBased { .. } | RatioKind::MinmaxTabular { .. } => {
            Err(Error::InvalidArgument(
                "oracle_ratio only produces oracle kinds; use estimate_ratio for data-driven \
                 tables"
                    .into(),
            ))
        }
    }
}

/// A transition/reward model fit from data, with bookkeeping about which
/// rows were actually observed.
#[derive(Debug, Clone)]
pub struct EstimatedModel {
    pub mdp: TabularMdp,
    /// Number of observed transitions out of each (s, a).
    pub transition_counts: SaTable,
    /// (s, a) rows that were never observed and fell back to a reward-0
    /// self-loop.
    pub fallback: Vec<bool>,
}

impl EstimatedModel {
    pub fn is_fallback(&self, s: usize, a: usize) -> bool {
        self.fallback[self.transition_counts.flat_index(s, a)]
    }
}

/// Maximum-likelihood model with additive smoothing `alpha` per
/// (s, a, s') triple. Rewards are empirical means. Absorbing rows from the
/// dataset metadata are pinned to their known reward-0 self-loops, and
/// unobserved rows fall back to a flagged reward-0 self-loop.
///
/// Transition counts use the observed (s_t, a_t, s_{t+1}) pairs, so the
/// final step of each trajectory contributes reward evidence only.
pub fn estimate_model(dataset: &Dataset, alpha: f64) -> Result<EstimatedModel> {
    if alpha < 0.0 {
        return Err(Error::InvalidArgument(format!("smoothing alpha must be >= 0, got {alpha}")));
    }
    let ns = dataset.meta.n_states;
    let na = dataset.meta.n_actions;
    let mut trans_counts = vec![0.0f64; ns * na * ns];
    let mut out_counts = SaTable::zeros(ns, na);
    let mut reward_sum = SaTable::zeros(ns, na);
    let mut reward_count = SaTable::zeros(ns, na);
    let mut initial_counts = vec![0.0f64; ns];

    for traj in &dataset.trajectories {
        initial_counts[traj.states[0]] += 1.0;
        for k in 0..traj.len() {
            let (s, a) = (traj.states[k], traj.actions[k]);
            reward_sum.add(s, a, traj.rewards[k]);
            reward_count.add(s, a, 1.0);
            if k + 1 < traj.len() {
                trans_counts[(s * na + a) * ns + traj.states[k + 1]] += 1.0;
                out_counts.add(s, a, 1.0);
            }
        }
    }

    let mut transition = vec![0.0f64; ns * na * ns];
    let mut reward = SaTable::zeros(ns, na);
    let mut fallback = vec![false; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let base = (s * na + a) * ns;
            if dataset.meta.absorbing.contains(&s) {
                transition[base + s] = 1.0;
                continue;
            }
            let total = out_counts.get(s, a);
            if total == 0.0 {
                transition[base + s] = 1.0;
                fallback[s * na + a] = true;
            } else {
                let denom = total + alpha * ns as f64;
                for s2 in 0..ns {
                    transition[base + s2] = (trans_counts[base + s2] + alpha) / denom;
                }
            }
            if reward_count.get(s, a) > 0.0 {
                reward.set(s, a, reward_sum.get(s, a) / reward_count.get(s, a));
            }
        }
    }

    let m = dataset.len() as f64;
    let initial_dist: Vec<f64> = initial_counts.iter().map(|c| c / m).collect();
    let mdp = TabularMdp::new(
        ns,
        na,
        transition,
        reward,
        initial_dist,
        dataset.meta.gamma,
        dataset.meta.horizon,
        dataset.meta.absorbing.clone(),
    )?;
    Ok(EstimatedModel { mdp, transition_counts: out_counts, fallback })
}

/// How to turn a dataset into a ratio estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioMethod {
    /// Fit a model, run the occupancy DP for both policies on it, and take
    /// the elementwise ratio.
    ModelBased,
    /// Solve the tabular discounted stationarity system for w directly on
    /// empirical transition frequencies, with ridge regularization, then
    /// clip negatives and rescale so the reweighted behavior occupancy has
    /// unit mass.
    MinmaxTabular,
}

/// Estimate the average-occupancy correction ratio from data over the full
/// horizon.
pub fn estimate_ratio(dataset: &Dataset, method: RatioMethod) -> Result<RatioTable> {
    estimate_ratio_truncated(dataset, method, dataset.horizon())
}

/// Estimate the correction ratio for the leading `t_max` time steps only,
/// discarding the rest of each trajectory.
pub fn estimate_ratio_truncated(
    dataset: &Dataset,
    method: RatioMethod,
    t_max: usize,
) -> Result<RatioTable> {
    if t_max < 1 || t_max > dataset.horizon() {
        return Err(Error::InvalidArgument(format!(
            "ratio estimation window {t_max} out of range 1..={}",
            dataset.horizon()
        )));
    }
    match method {
        RatioMethod::ModelBased => model_based_ratio(dataset, t_max),
        RatioMethod::MinmaxTabular => minmax_tabular_ratio(dataset, t_max),
    }
}

fn model_based_ratio(dataset: &Dataset, t_max: usize) -> Result<RatioTable> {
    let model = estimate_model(dataset, MODEL_SMOOTHING)?;
    let mdp = model.mdp.with_horizon(t_max)?;
    let d_e = occupancy_avg(&mdp, &dataset.pi_e)?;
    let d_b = occupancy_avg(&mdp, &dataset.pi_b)?;
    ratio_of(&d_e, &d_b, RatioKind::ModelBased { horizon: t_max })
}

/// Empirical discounted-average occupancy of the data over its first
/// `t_max` steps.
fn empirical_occupancy(dataset: &Dataset, t_max: usize) -> SaTable {
    let ns = dataset.meta.n_states;
    let na = dataset.meta.n_actions;
    let gamma = dataset.gamma();
    let mut d = SaTable::zeros(ns, na);
    let mut z = 0.0;
    let mut disc = 1.0;
    for _ in 0..t_max {
        z += disc;
        disc *= gamma;
    }
    for traj in &dataset.trajectories {
        let mut disc = 1.0;
        for k in 0..t_max {
            d.add(traj.states[k], traj.actions[k], disc);
            disc *= gamma;
        }
    }
    d.scale(1.0 / (dataset.len() as f64 * z));
    d
}

fn minmax_tabular_ratio(dataset: &Dataset, t_max: usize) -> Result<RatioTable> {
    let gamma = dataset.gamma();
    if gamma >= 1.0 {
        return Err(Error::InvalidArgument(
            "the discounted stationarity solve requires gamma < 1".into(),
        ));
    }
    let ns = dataset.meta.n_states;
    let na = dataset.meta.n_actions;

    // Empirical ingredients, restricted to the leading window.
    let d_b = empirical_occupancy(dataset, t_max);
    let model = {
        // Reuse the transition counter, truncating each trajectory.
        let truncated: Vec<_> = dataset
            .trajectories
            .iter()
            .map(|t| {
                let mut short = t.clone();
                short.states.truncate(t_max);
                short.actions.truncate(t_max);
                short.rewards.truncate(t_max);
                short.rhos.truncate(t_max);
                short
            })
            .collect();
        let mut meta = dataset.meta.clone();
        meta.horizon = t_max;
        let short = Dataset::from_parts(
            truncated,
            dataset.pi_b.clone(),
            dataset.pi_e.clone(),
            meta,
            dataset.seed,
        )?;
        estimate_model(&short, MODEL_SMOOTHING)?
    };
    let pi_e = model.mdp.effective_policy(&dataset.pi_e)?;

    // Support = visited (s, a) pairs.
    let support_idx: Vec<(usize, usize)> = d_b
        .iter()
        .filter(|&(_, _, v)| v > 0.0)
        .map(|(s, a, _)| (s, a))
        .collect();
    let k = support_idx.len();
    if k == 0 {
        return Err(Error::InvalidArgument("dataset visits no state-action pairs".into()));
    }

    // Discounted stationarity rows: substituting d^{pi_e}(s,a) =
    // w(s,a) d_b(s,a) into the flow equation
    //   d = (1 - gamma) d_1 pi_e + gamma P_{pi_e} d
    // gives one linear equation per supported (s, a), with the behavior
    // occupancy taken from the data. This targets the infinite-horizon
    // stationary ratio, so on short effective horizons (gamma^L far from 0)
    // the estimate carries a systematic finite-horizon mismatch on top of
    // sampling noise. Rows are divided by d_b(s,a) and by (1 - gamma), the
    // operator's smallest scale, so the system is O(1) in ratio units and
    // the ridge perturbs w on its own scale.
    let mut a_mat = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (row, &(s, a)) in support_idx.iter().enumerate() {
        let scale = 1.0 / (d_b.get(s, a) * (1.0 - gamma));
        a_mat[(row, row)] += 1.0 / (1.0 - gamma);
        for (col, &(sp, ap)) in support_idx.iter().enumerate() {
            let flow = model.mdp.trans(sp, ap, s) * pi_e.prob(s, a);
            if flow > 0.0 {
                a_mat[(row, col)] -= gamma * flow * d_b.get(sp, ap) * scale;
            }
        }
        b[row] = model.mdp.initial_dist()[s] * pi_e.prob(s, a) / d_b.get(s, a);
    }

    // Ridge-regularized normal equations.
    let at = a_mat.transpose();
    let mut normal = &at * &a_mat;
    for i in 0..k {
        normal[(i, i)] += MINMAX_RIDGE;
    }
    let rhs = &at * b;
    let solution = normal
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("stationarity system singular after ridge".into()))?;

    // Clip negatives, then rescale so sum d_b * w = 1.
    let mut w_vals: Vec<f64> = solution.iter().map(|&v| v.max(0.0)).collect();
    let mass: f64 = support_idx
        .iter()
        .zip(&w_vals)
        .map(|(&(s, a), &w)| d_b.get(s, a) * w)
        .sum();
    if !(mass > 1e-12) {
        return Err(Error::SingularSystem(format!(
            "reweighted behavior mass {mass} too small to normalize"
        )));
    }
    for w in &mut w_vals {
        *w /= mass;
    }

    let mut w = SaTable::zeros(ns, na);
    let mut support = vec![false; ns * na];
    for (&(s, a), &val) in support_idx.iter().zip(&w_vals) {
        w.set(s, a, val);
        support[w.flat_index(s, a)] = true;
    }
    RatioTable::new(w, RatioKind::MinmaxTabular { horizon: t_max }, support)
}
