//! Exact dynamic-programming oracles for state-action occupancies and
//! policy value.
//!
//! These are the ground truth everything else is checked against: the
//! time-indexed visitation distributions d_t, their discounted averages
//! over a leading window, the infinite-horizon stationary fixed point, and
//! the exact policy value J. State spaces here are tiny, so the
//! infinite-horizon quantities use direct dense solves rather than
//! iteration.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{StaticPolicy, TabularMdp};
use crate::tables::SaTable;

/// Time-indexed state-action distributions d_t for t = 1..=horizon.
///
/// d_1(s, a) = d_1(s) pi(a|s), and
/// d_{t+1}(s', a') = sum_{s,a} d_t(s, a) T(s'|s, a) pi(a'|s').
pub fn occupancy_t(mdp: &TabularMdp, policy: &StaticPolicy) -> Result<Vec<SaTable>> {
    let pi = mdp.effective_policy(policy)?;
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let mut out = Vec::with_capacity(mdp.horizon());
    let mut current = SaTable::from_fn(ns, na, |s, a| mdp.initial_dist()[s] * pi.prob(s, a));
    for _ in 0..mdp.horizon() {
        out.push(current.clone());
        let mut next_state = vec![0.0; ns];
        for (s, a, mass) in current.iter() {
            if mass == 0.0 {
                continue;
            }
            for (s2, &p) in mdp.trans_row(s, a).iter().enumerate() {
                if p > 0.0 {
                    next_state[s2] += mass * p;
                }
            }
        }
        current = SaTable::from_fn(ns, na, |s, a| next_state[s] * pi.prob(s, a));
    }
    Ok(out)
}

/// Discounted time-average of d_1..d_T, normalized by sum_{t=1..T} gamma^{t-1}.
pub fn occupancy_trunc(mdp: &TabularMdp, policy: &StaticPolicy, t_max: usize) -> Result<SaTable> {
    if t_max < 1 || t_max > mdp.horizon() {
        return Err(Error::InvalidArgument(format!(
            "truncation horizon {t_max} out of range 1..={}",
            mdp.horizon()
        )));
    }
    let d_t = occupancy_t(mdp, policy)?;
    Ok(average_of(&d_t[..t_max], mdp.gamma()))
}

/// The gamma-discounted average state-action distribution over the full
/// horizon.
pub fn occupancy_avg(mdp: &TabularMdp, policy: &StaticPolicy) -> Result<SaTable> {
    occupancy_trunc(mdp, policy, mdp.horizon())
}

fn average_of(slices: &[SaTable], gamma: f64) -> SaTable {
    let ns = slices[0].n_states();
    let na = slices[0].n_actions();
    let mut acc = SaTable::zeros(ns, na);
    let mut disc = 1.0;
    let mut z = 0.0;
    for d in slices {
        for (s, a, v) in d.iter() {
            acc.add(s, a, disc * v);
        }
        z += disc;
        disc *= gamma;
    }
    acc.scale(1.0 / z);
    acc
}

/// Infinite-horizon discounted occupancy: the unique fixed point of
///
/// d(s, a) = (1 - gamma) d_1(s) pi(a|s)
///           + gamma * sum_{s',a'} T(s|s',a') pi(a|s) d(s', a'),
///
/// computed by a direct dense linear solve. Requires gamma < 1.
pub fn stationary_occupancy(mdp: &TabularMdp, policy: &StaticPolicy) -> Result<SaTable> {
    let gamma = mdp.gamma();
    if gamma >= 1.0 {
        return Err(Error::InvalidArgument(
            "stationary occupancy requires gamma < 1".into(),
        ));
    }
    let pi = mdp.effective_policy(policy)?;
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let k = ns * na;
    let mut a_mat = DMatrix::<f64>::identity(k, k);
    for s in 0..ns {
        for a in 0..na {
            let row = s * na + a;
            for s_prev in 0..ns {
                for a_prev in 0..na {
                    let col = s_prev * na + a_prev;
                    let flow = mdp.trans(s_prev, a_prev, s) * pi.prob(s, a);
                    a_mat[(row, col)] -= gamma * flow;
                }
            }
        }
    }
    let mut b = DVector::<f64>::zeros(k);
    for s in 0..ns {
        for a in 0..na {
            b[s * na + a] = (1.0 - gamma) * mdp.initial_dist()[s] * pi.prob(s, a);
        }
    }
    let solution = a_mat
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("stationary occupancy solve failed".into()))?;
    Ok(SaTable::from_fn(ns, na, |s, a| solution[s * na + a]))
}

/// Max-norm residual of the stationary flow equation evaluated at `d`.
/// Zero (to solver precision) when `d` is the fixed point; decreasing in
/// the horizon when `d` is a truncated average.
pub fn bellman_flow_residual(mdp: &TabularMdp, policy: &StaticPolicy, d: &SaTable) -> Result<f64> {
    let pi = mdp.effective_policy(policy)?;
    let gamma = mdp.gamma();
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let mut worst: f64 = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let mut inflow = 0.0;
            for s_prev in 0..ns {
                for a_prev in 0..na {
                    inflow += mdp.trans(s_prev, a_prev, s) * d.get(s_prev, a_prev);
                }
            }
            let rhs =
                (1.0 - gamma) * mdp.initial_dist()[s] * pi.prob(s, a) + gamma * pi.prob(s, a) * inflow;
            worst = worst.max((d.get(s, a) - rhs).abs());
        }
    }
    Ok(worst)
}

/// Exact policy value J(pi) = sum_t gamma^{t-1} sum_{s,a} d_t(s,a) r(s,a).
pub fn exact_j(mdp: &TabularMdp, policy: &StaticPolicy) -> Result<f64> {
    let pi = mdp.effective_policy(policy)?;
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let mut current = SaTable::from_fn(ns, na, |s, a| mdp.initial_dist()[s] * pi.prob(s, a));
    let mut j = 0.0;
    let mut disc = 1.0;
    for step in 0..mdp.horizon() {
        for (s, a, mass) in current.iter() {
            if mass > 0.0 {
                j += disc * mass * mdp.reward(s, a);
            }
        }
        disc *= mdp.gamma();
        if step + 1 == mdp.horizon() {
            break;
        }
        let mut next_state = vec![0.0; ns];
        for (s, a, mass) in current.iter() {
            if mass == 0.0 {
                continue;
            }
            for (s2, &p) in mdp.trans_row(s, a).iter().enumerate() {
                if p > 0.0 {
                    next_state[s2] += mass * p;
                }
            }
        }
        current = SaTable::from_fn(ns, na, |s, a| next_state[s] * pi.prob(s, a));
    }
    Ok(j)
}

/// Bundle of every occupancy oracle for one (MDP, policy) pair.
#[derive(Debug, Clone)]
pub struct OccupancyTables {
    /// d_t for t = 1..=horizon, in order.
    pub d_t: Vec<SaTable>,
    /// Discounted average over the full horizon.
    pub d_avg: SaTable,
    /// Discounted averages over leading windows, keyed by window length.
    pub d_trunc: BTreeMap<usize, SaTable>,
    /// Exact policy value.
    pub j_value: f64,
}

impl OccupancyTables {
    /// Computes all tables in one forward pass. `trunc_lens` selects which
    /// leading-window averages to materialize (the full horizon is always
    /// included).
    pub fn compute(mdp: &TabularMdp, policy: &StaticPolicy, trunc_lens: &[usize]) -> Result<Self> {
        let d_t = occupancy_t(mdp, policy)?;
        let gamma = mdp.gamma();
        let d_avg = average_of(&d_t, gamma);
        let mut d_trunc = BTreeMap::new();
        for &t in trunc_lens {
            if t < 1 || t > mdp.horizon() {
                return Err(Error::InvalidArgument(format!(
                    "truncation horizon {t} out of range 1..={}",
                    mdp.horizon()
                )));
            }
            d_trunc.insert(t, average_of(&d_t[..t], gamma));
        }
        d_trunc.insert(mdp.horizon(), d_avg.clone());
        let j_value = exact_j(mdp, policy)?;
        Ok(OccupancyTables { d_t, d_avg, d_trunc, j_value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{build_graph_env, make_static_policy};
    use crate::mdp::StaticPolicy;
    use std::collections::BTreeSet;

    fn one_state_mdp(gamma: f64, horizon: usize) -> TabularMdp {
        let reward = SaTable::from_fn(1, 2, |_, _| 1.0);
        TabularMdp::new(1, 2, vec![1.0, 1.0], reward, vec![1.0], gamma, horizon, BTreeSet::new())
            .unwrap()
    }

    #[test]
    fn one_state_occupancy_is_the_policy() {
        let mdp = one_state_mdp(0.9, 5);
        let pi = make_static_policy(1, 0.3).unwrap();
        let d = occupancy_t(&mdp, &pi).unwrap();
        assert_eq!(d.len(), 5);
        for slice in &d {
            assert!((slice.get(0, 0) - 0.3).abs() < 1e-15);
            assert!((slice.get(0, 1) - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn slices_are_normalized() {
        let mdp = build_graph_env(5, 0.98).unwrap();
        let pi = make_static_policy(mdp.n_states(), 0.8).unwrap();
        for slice in occupancy_t(&mdp, &pi).unwrap() {
            assert!((slice.sum() - 1.0).abs() < 1e-10);
        }
        assert!((occupancy_avg(&mdp, &pi).unwrap().sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn graph2_time_slice_matches_enumeration() {
        // All length-2 prefixes of Graph(2) under the uniform policy can be
        // listed by hand: start at 0, pick a row, slip or not.
        let mdp = build_graph_env(2, 0.98).unwrap();
        let pi = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let d = occupancy_t(&mdp, &pi).unwrap();
        // At t=2 the state is 1 or 2 with probability 1/2 each (0.5*0.75 +
        // 0.5*0.25 for either row), and each action has probability 1/2.
        for s in [1usize, 2] {
            for a in [0usize, 1] {
                assert!((d[1].get(s, a) - 0.25).abs() < 1e-12);
            }
        }
        assert_eq!(d[1].get(0, 0), 0.0);
    }

    #[test]
    fn trunc_full_equals_avg_bitwise() {
        let mdp = build_graph_env(4, 0.98).unwrap();
        let pi = make_static_policy(mdp.n_states(), 0.6).unwrap();
        let avg = occupancy_avg(&mdp, &pi).unwrap();
        let trunc = occupancy_trunc(&mdp, &pi, mdp.horizon()).unwrap();
        assert_eq!(avg, trunc);
    }

    #[test]
    fn gamma_one_is_plain_time_average() {
        let mdp = one_state_mdp(1.0, 4);
        let pi = make_static_policy(1, 0.25).unwrap();
        let avg = occupancy_avg(&mdp, &pi).unwrap();
        assert!((avg.get(0, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn stationary_fixed_point_has_tiny_residual() {
        let mdp = build_graph_env(4, 0.9).unwrap();
        let pi = make_static_policy(mdp.n_states(), 0.7).unwrap();
        let d = stationary_occupancy(&mdp, &pi).unwrap();
        let r = bellman_flow_residual(&mdp, &pi, &d).unwrap();
        assert!(r < 1e-10, "residual {r}");
        assert!((d.sum() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn stationary_rejects_undiscounted() {
        let mdp = one_state_mdp(1.0, 4);
        let pi = make_static_policy(1, 0.5).unwrap();
        assert!(stationary_occupancy(&mdp, &pi).is_err());
    }

    #[test]
    fn one_state_stationary_is_the_policy() {
        let mdp = one_state_mdp(0.5, 4);
        let pi = make_static_policy(1, 0.3).unwrap();
        let d = stationary_occupancy(&mdp, &pi).unwrap();
        assert!((d.get(0, 0) - 0.3).abs() < 1e-12);
        assert!(bellman_flow_residual(&mdp, &pi, &d).unwrap() < 1e-14);
    }

    #[test]
    fn truncated_average_approaches_fixed_point_geometrically() {
        let mdp = build_graph_env(4, 0.9).unwrap().with_horizon(100).unwrap();
        let pi = make_static_policy(mdp.n_states(), 0.7).unwrap();
        let fixed = stationary_occupancy(&mdp, &pi).unwrap();
        let avg = occupancy_avg(&mdp, &pi).unwrap();
        let bound = 0.9f64.powi(100) / (1.0 - 0.9);
        let gap = fixed
            .iter()
            .map(|(s, a, v)| (v - avg.get(s, a)).abs())
            .fold(0.0f64, f64::max);
        assert!(gap <= bound, "gap {gap} exceeds tail bound {bound}");
    }

    #[test]
    fn exact_j_zero_rewards() {
        let ns = 2;
        let reward = SaTable::zeros(ns, 2);
        let mut transition = vec![0.0; ns * 2 * ns];
        for s in 0..ns {
            for a in 0..2 {
                transition[(s * 2 + a) * ns + s] = 1.0;
            }
        }
        let mdp = TabularMdp::new(
            ns,
            2,
            transition,
            reward,
            vec![0.5, 0.5],
            0.9,
            6,
            BTreeSet::new(),
        )
        .unwrap();
        let pi = make_static_policy(ns, 0.5).unwrap();
        assert_eq!(exact_j(&mdp, &pi).unwrap(), 0.0);
    }

    #[test]
    fn exact_j_geometric_sum() {
        let mdp = one_state_mdp(0.5, 10);
        let pi = make_static_policy(1, 0.5).unwrap();
        let expected: f64 = (0..10).map(|t| 0.5f64.powi(t)).sum();
        assert!((exact_j(&mdp, &pi).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn graph2_value_matches_hand_enumeration() {
        // Uniform policy on Graph(2): step 1 pays +-0.5 with equal chance
        // (expectation 0), step 2 always pays -1.
        let mdp = build_graph_env(2, 0.98).unwrap();
        let pi = make_static_policy(mdp.n_states(), 0.5).unwrap();
        let expected = 0.0 + 0.98 * (-1.0);
        assert!((exact_j(&mdp, &pi).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn tables_bundle_is_consistent() {
        let mdp = build_graph_env(3, 0.98).unwrap();
        let pi = make_static_policy(mdp.n_states(), 0.9).unwrap();
        let tables = OccupancyTables::compute(&mdp, &pi, &[1, 2]).unwrap();
        assert_eq!(tables.d_t.len(), 3);
        assert_eq!(tables.d_trunc[&3], tables.d_avg);
        assert!((tables.j_value - exact_j(&mdp, &pi).unwrap()).abs() < 1e-15);
        let rebuilt = occupancy_trunc(&mdp, &pi, 2).unwrap();
        assert_eq!(tables.d_trunc[&2], rebuilt);
    }

    #[test]
    fn effective_policy_matters_on_absorbing_rows() {
        // A policy that is degenerate on absorbing states must not skew
        // occupancy there: the absorbing rows are forced uniform.
        let mdp = build_graph_env(2, 0.98).unwrap().with_horizon(4).unwrap();
        let skewed = make_static_policy(mdp.n_states(), 1.0).unwrap();
        let d = occupancy_t(&mdp, &skewed).unwrap();
        let abs = 4;
        let mass_a0 = d[3].get(abs, 0);
        let mass_a1 = d[3].get(abs, 1);
        assert!(mass_a0 > 0.0);
        assert!((mass_a0 - mass_a1).abs() < 1e-12);
    }

    #[test]
    fn uniform_policy_helper_matches_static() {
        let u = StaticPolicy::uniform(3, 2);
        let p = make_static_policy(3, 0.5).unwrap();
        assert_eq!(u.probs(), p.probs());
    }
}
