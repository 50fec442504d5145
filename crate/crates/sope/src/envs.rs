//! The two benchmark environments and static-policy construction.
//!
//! Both environments are small tabular MDPs with two actions and
//! deterministic expected rewards; all stochasticity lives in the
//! transitions (and, for the mountain chain, in the random restart).

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::mdp::{StaticPolicy, TabularMdp};
use crate::tables::SaTable;

/// Probability that a chain move in the graph environment lands on the
/// intended row rather than slipping to the other one.
pub const GRAPH_SUCCESS_PROB: f64 = 0.75;

/// Two-chain graph environment.
///
/// States: `0` is the start, odd labels `1, 3, ..., 2*chain_len-3` form the
/// top chain, even labels `2, 4, ..., 2*chain_len-2` the bottom chain, and
/// `2*chain_len` is absorbing (label `2*chain_len - 1` is an unreachable
/// filler so the absorbing state keeps its conventional index). Action 0
/// aims for the next top-chain state and action 1 for the next bottom-chain
/// state; the move succeeds with probability 0.75 and slips to the other
/// row with probability 0.25. Entering a top-chain state pays +1, entering
/// any other state pays -1 (this includes the final move into the absorbing
/// state), and the absorbing state itself pays 0. Rewards are stored as
/// their expectation over the slip, so r(s, a=0) = 0.5 and r(s, a=1) = -0.5
/// on the chains. The horizon equals `chain_len`.
pub fn build_graph_env(chain_len: usize, gamma: f64) -> Result<TabularMdp> {
    if chain_len < 2 {
        return Err(Error::InvalidArgument(format!(
            "graph chain_len must be at least 2, got {chain_len}"
        )));
    }
    let n_states = 2 * chain_len + 1;
    let n_actions = 2;
    let absorbing_state = 2 * chain_len;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = SaTable::zeros(n_states, n_actions);
    let mut set = |s: usize, a: usize, s2: usize, p: f64| {
        transition[(s * n_actions + a) * n_states + s2] = p;
    };

    // Depth-d states for d = 0..chain_len-1; the states at depth d >= 1 are
    // (2d-1, 2d). Every state at depth chain_len-1 moves into the absorbing
    // state on either action.
    for depth in 0..chain_len {
        let here: Vec<usize> = if depth == 0 { vec![0] } else { vec![2 * depth - 1, 2 * depth] };
        for &s in &here {
            if depth + 1 == chain_len {
                for a in 0..n_actions {
                    set(s, a, absorbing_state, 1.0);
                    reward.set(s, a, -1.0);
                }
            } else {
                let top = 2 * (depth + 1) - 1;
                let bottom = 2 * (depth + 1);
                set(s, 0, top, GRAPH_SUCCESS_PROB);
                set(s, 0, bottom, 1.0 - GRAPH_SUCCESS_PROB);
                set(s, 1, bottom, GRAPH_SUCCESS_PROB);
                set(s, 1, top, 1.0 - GRAPH_SUCCESS_PROB);
                // Expected reward over the slip: +1 on the top row, -1 on the bottom.
                reward.set(s, 0, GRAPH_SUCCESS_PROB - (1.0 - GRAPH_SUCCESS_PROB));
                reward.set(s, 1, (1.0 - GRAPH_SUCCESS_PROB) - GRAPH_SUCCESS_PROB);
            }
        }
    }
    // Unreachable filler state and the absorbing state both self-loop with
    // reward 0.
    for s in [2 * chain_len - 1, absorbing_state] {
        for a in 0..n_actions {
            set(s, a, s, 1.0);
        }
    }

    let mut initial = vec![0.0; n_states];
    initial[0] = 1.0;
    TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        initial,
        gamma,
        chain_len,
        BTreeSet::from([absorbing_state]),
    )
}

/// Number of states in the tabular mountain chain.
pub const TOY_MC_STATES: usize = 21;

/// Default horizon of the tabular mountain chain.
pub const TOY_MC_HORIZON: usize = 100;

/// Tabular mountain-car chain: 21 states laid out left to right, with the
/// valley at index 10 and the goal at the rightmost index 20, which is
/// terminal-absorbing. Action 0 moves right, action 1 moves left; moving
/// left from the leftmost state stays in place. Every step costs -1 until
/// the goal is reached, after which rewards are 0. Episodes restart
/// uniformly over the 20 non-terminal states and run for 100 steps.
pub fn build_toy_mc_env(gamma: f64) -> Result<TabularMdp> {
    let n_states = TOY_MC_STATES;
    let n_actions = 2;
    let terminal = n_states - 1;
    let mut transition = vec![0.0; n_states * n_actions * n_states];
    let mut reward = SaTable::zeros(n_states, n_actions);
    let mut set = |s: usize, a: usize, s2: usize, p: f64| {
        transition[(s * n_actions + a) * n_states + s2] = p;
    };
    for s in 0..n_states {
        if s == terminal {
            set(s, 0, s, 1.0);
            set(s, 1, s, 1.0);
        } else {
            set(s, 0, s + 1, 1.0);
            set(s, 1, s.saturating_sub(1), 1.0);
            reward.set(s, 0, -1.0);
            reward.set(s, 1, -1.0);
        }
    }
    let p0 = 1.0 / (n_states - 1) as f64;
    let mut initial = vec![p0; n_states];
    initial[terminal] = 0.0;
    TabularMdp::new(
        n_states,
        n_actions,
        transition,
        reward,
        initial,
        gamma,
        TOY_MC_HORIZON,
        BTreeSet::from([terminal]),
    )
}

/// A policy that takes action 0 with probability `p_action0` and action 1
/// otherwise, in every state. Only defined for two-action MDPs.
pub fn make_static_policy(n_states: usize, p_action0: f64) -> Result<StaticPolicy> {
    if !(0.0..=1.0).contains(&p_action0) {
        return Err(Error::InvalidArgument(format!(
            "p_action0 must lie in [0, 1], got {p_action0}"
        )));
    }
    let probs =
        SaTable::from_fn(n_states, 2, |_, a| if a == 0 { p_action0 } else { 1.0 - p_action0 });
    StaticPolicy::new(probs)
}
