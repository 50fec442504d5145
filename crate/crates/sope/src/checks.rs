//! Built-in verification suite.
//!
//! Machine-checkable identities behind the estimator spectrum, run on desk-
//! scale instances: the conditional-expectation identity for likelihood
//! ratio products, the spectrum endpoint identities, exactness of the
//! truncated-window spectrum in brute-force expectation, and the stationary
//! flow fixed point. The `check` subcommand prints one pass/fail line per
//! item; the acceptance tests assert them.

use crate::enumerate::{conditional_ratio_bruteforce, expectation_over_trajectories};
use crate::envs::{build_graph_env, build_toy_mc_env, make_static_policy};
use crate::error::Result;
use crate::estimators::{
    estimate_cwpdis, estimate_dr_sope, estimate_pdis, estimate_sis, estimate_sope,
    estimate_weighted_sis, estimate_wsope, DrNextAction, RatioWindowMode,
};
use crate::occupancy::{
    bellman_flow_residual, exact_j, occupancy_avg, occupancy_t, stationary_occupancy,
};
use crate::qvalue::QTable;
use crate::ratio::{oracle_ratio, RatioKind};
use crate::sampling::sample_dataset;

/// Outcome of one verification item.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn pass(name: &'static str, detail: String) -> Self {
        CheckOutcome { name, passed: true, detail }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        CheckOutcome { name, passed: false, detail }
    }

    fn from_run(name: &'static str, run: Result<(bool, String)>) -> Self {
        match run {
            Ok((true, detail)) => CheckOutcome::pass(name, detail),
            Ok((false, detail)) => CheckOutcome::fail(name, detail),
            Err(e) => CheckOutcome::fail(name, format!("error: {e}")),
        }
    }
}

/// E[rho_{1:t} | S_t, A_t] from exhaustive enumeration equals the
/// time-indexed occupancy ratio for every reachable (t, s, a) with t up to
/// `t_max`, within `tol`. Runs on the two-chain graph with the horizon
/// extended to `t_max` so padded steps are covered too.
pub fn check_conditional_ratio_identity(t_max: usize, tol: f64) -> CheckOutcome {
    let name = "conditional-ratio-identity";
    let run = || -> Result<(bool, String)> {
        let mdp = build_graph_env(2, 0.98)?.with_horizon(t_max)?;
        let pi_e = make_static_policy(mdp.n_states(), 0.9)?;
        let pi_b = make_static_policy(mdp.n_states(), 0.5)?;
        let d_e = occupancy_t(&mdp, &pi_e)?;
        let d_b = occupancy_t(&mdp, &pi_b)?;
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        for t in 1..=t_max {
            for s in 0..mdp.n_states() {
                for a in 0..mdp.n_actions() {
                    let mass = d_b[t - 1].get(s, a);
                    if mass == 0.0 {
                        continue;
                    }
                    let brute = conditional_ratio_bruteforce(&mdp, &pi_e, &pi_b, t, s, a, 1_000_000)?;
                    let dp = d_e[t - 1].get(s, a) / mass;
                    worst = worst.max((brute - dp).abs());
                    checked += 1;
                }
            }
        }
        Ok((worst < tol, format!("{checked} reachable (t,s,a) pairs, worst gap {worst:.3e}")))
    };
    CheckOutcome::from_run(name, run())
}

/// SOPE_0 = SIS, SOPE_L = PDIS, W-SOPE_0 = weighted-SIS, W-SOPE_L = CWPDIS,
/// and DR-SOPE with q = 0 = SOPE, each within `tol` absolute, across
/// `seeds` seeded datasets drawn from both benchmark environments.
pub fn check_endpoint_identities(seeds: u64, tol: f64) -> CheckOutcome {
    let name = "endpoint-identities";
    let run = || -> Result<(bool, String)> {
        let mut worst: f64 = 0.0;
        let mut datasets = 0;
        for env_idx in 0..2 {
            let mdp = if env_idx == 0 { build_graph_env(6, 0.98)? } else { build_toy_mc_env(0.99)? };
            let pi_e = make_static_policy(mdp.n_states(), if env_idx == 0 { 0.9 } else { 0.5 })?;
            let pi_b = make_static_policy(mdp.n_states(), if env_idx == 0 { 0.5 } else { 0.6 })?;
            let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage)?;
            let zero_q = QTable::zeros(mdp.n_states(), mdp.n_actions());
            for seed in 0..seeds {
                let data = sample_dataset(&mdp, &pi_b, &pi_e, 16, seed * 1000)?;
                let horizon = data.horizon();
                let mut log = |a: f64, b: f64| worst = worst.max((a - b).abs());
                log(
                    estimate_sope(&data, 0, &ratio, RatioWindowMode::Average)?.value,
                    estimate_sis(&data, &ratio)?.value,
                );
                log(
                    estimate_sope(&data, horizon, &ratio, RatioWindowMode::Average)?.value,
                    estimate_pdis(&data)?.value,
                );
                log(
                    estimate_wsope(&data, 0, &ratio, RatioWindowMode::Average)?.value,
                    estimate_weighted_sis(&data, &ratio)?.value,
                );
                log(
                    estimate_wsope(&data, horizon, &ratio, RatioWindowMode::Average)?.value,
                    estimate_cwpdis(&data)?.value,
                );
                for n in [0, horizon / 2, horizon] {
                    log(
                        estimate_dr_sope(&data, n, &ratio, &zero_q, DrNextAction::Expectation)?
                            .value,
                        estimate_sope(&data, n, &ratio, RatioWindowMode::Average)?.value,
                    );
                }
                datasets += 1;
            }
        }
        Ok((worst <= tol, format!("{datasets} datasets, worst endpoint gap {worst:.3e}")))
    };
    CheckOutcome::from_run(name, run())
}

/// Brute-force expectation of SOPE_n with leading-window oracle ratios
/// equals the exact policy value for every n, on the two-chain graph with
/// horizon `horizon`, within `tol`.
pub fn check_truncated_exactness(horizon: usize, tol: f64) -> CheckOutcome {
    let name = "truncated-window-exactness";
    let run = || -> Result<(bool, String)> {
        let mdp = build_graph_env(2, 0.98)?.with_horizon(horizon)?;
        let pi_e = make_static_policy(mdp.n_states(), 0.9)?;
        let pi_b = make_static_policy(mdp.n_states(), 0.5)?;
        let meta = crate::sampling::DatasetMeta::of(&mdp);
        let truth = exact_j(&mdp, &pi_e)?;
        let mut worst: f64 = 0.0;
        for n in 0..=horizon {
            let window = if n < horizon { horizon - n } else { 1 };
            let ratio = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleTruncated(window))?;
            let expect = expectation_over_trajectories(&mdp, &pi_b, &pi_e, 1_000_000, |traj| {
                let single = crate::sampling::Dataset::from_parts(
                    vec![traj.clone()],
                    pi_b.clone(),
                    pi_e.clone(),
                    meta.clone(),
                    0,
                )?;
                Ok(estimate_sope(&single, n, &ratio, RatioWindowMode::Truncated)?.value)
            })?;
            worst = worst.max((expect - truth).abs());
        }
        Ok((
            worst < tol,
            format!("n = 0..={horizon}, J = {truth:.6}, worst expectation gap {worst:.3e}"),
        ))
    };
    CheckOutcome::from_run(name, run())
}

/// The stationary flow fixed point solves its equation to `residual_tol`,
/// and the long-horizon window average lands within the geometric tail
/// bound of it, on both benchmark environments at their standard discounts.
pub fn check_flow_fixed_point(long_horizon: usize, residual_tol: f64) -> CheckOutcome {
    let name = "stationary-flow-fixed-point";
    let run = || -> Result<(bool, String)> {
        let mut detail = String::new();
        let mut ok = true;
        for (label, mdp, p_e) in [
            ("graph", build_graph_env(20, 0.98)?, 0.9),
            ("toy_mc", build_toy_mc_env(0.99)?, 0.5),
        ] {
            let pi = make_static_policy(mdp.n_states(), p_e)?;
            let fixed = stationary_occupancy(&mdp, &pi)?;
            let residual = bellman_flow_residual(&mdp, &pi, &fixed)?;
            let long = mdp.with_horizon(long_horizon)?;
            let avg = occupancy_avg(&long, &pi)?;
            let gap = fixed
                .iter()
                .map(|(s, a, v)| (v - avg.get(s, a)).abs())
                .fold(0.0f64, f64::max);
            let bound = mdp.gamma().powi(long_horizon as i32) / (1.0 - mdp.gamma());
            ok &= residual < residual_tol && gap <= bound;
            detail.push_str(&format!(
                "{label}: residual {residual:.3e}, window gap {gap:.3e} (bound {bound:.3e}); "
            ));
        }
        Ok((ok, detail.trim_end_matches("; ").to_string()))
    };
    CheckOutcome::from_run(name, run())
}

/// Occupancy slices and window averages are normalized distributions.
pub fn check_occupancy_normalization(tol: f64) -> CheckOutcome {
    let name = "occupancy-normalization";
    let run = || -> Result<(bool, String)> {
        let mut worst: f64 = 0.0;
        for (mdp, p) in [(build_graph_env(6, 0.98)?, 0.8), (build_toy_mc_env(0.99)?, 0.4)] {
            let pi = make_static_policy(mdp.n_states(), p)?;
            for slice in occupancy_t(&mdp, &pi)? {
                worst = worst.max((slice.sum() - 1.0).abs());
            }
            worst = worst.max((occupancy_avg(&mdp, &pi)?.sum() - 1.0).abs());
        }
        Ok((worst < tol, format!("worst normalization gap {worst:.3e}")))
    };
    CheckOutcome::from_run(name, run())
}

/// The verification items `sope check` runs, in order.
pub fn run_builtin_checks() -> Vec<CheckOutcome> {
    vec![
        check_conditional_ratio_identity(4, 1e-10),
        check_endpoint_identities(5, 1e-12),
        check_truncated_exactness(3, 1e-10),
        check_flow_fixed_point(500, 1e-10),
        check_occupancy_normalization(1e-10),
    ]
}
