//! Tabular MDP and static policy types.
//!
//! An MDP here is fully known: finite state and action sets, a transition
//! tensor, an expected-reward table, an initial state distribution, a
//! discount factor, and a fixed horizon. Episodes that reach an absorbing
//! state are padded by self-looping there with reward 0, so every
//! trajectory has exactly `horizon` steps.
//!
//! Policies are stationary per-state action distributions. On absorbing
//! states both the behavior and evaluation policies are treated as uniform,
//! so padding steps never contribute importance-weight noise; every routine
//! in this crate that consumes a policy applies that convention through
//! [`TabularMdp::effective_policy`].

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tables::SaTable;

/// Tolerance for probability normalization checks at construction time.
pub const PROB_TOL: f64 = 1e-12;

/// A stationary policy: one action distribution per state.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticPolicy {
    probs: SaTable,
}

impl StaticPolicy {
    /// Validates that every row is a distribution (entries >= 0, sums to 1
    /// within [`PROB_TOL`]).
    pub fn new(probs: SaTable) -> Result<Self> {
        for s in 0..probs.n_states() {
            let mut row_sum = 0.0;
            for a in 0..probs.n_actions() {
                let p = probs.get(s, a);
                if p < 0.0 || !p.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "policy probability for state {s}, action {a} is {p}"
                    )));
                }
                row_sum += p;
            }
            if (row_sum - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidModel(format!(
                    "policy row {s} sums to {row_sum}, expected 1"
                )));
            }
        }
        Ok(StaticPolicy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        StaticPolicy { probs: SaTable::from_fn(n_states, n_actions, |_, _| p) }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs.get(s, a)
    }

    pub fn n_states(&self) -> usize {
        self.probs.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.n_actions()
    }

    pub fn probs(&self) -> &SaTable {
        &self.probs
    }
}

/// A finite MDP with a fixed evaluation horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flat (s, a, s') transition probabilities.
    transition: Vec<f64>,
    /// Expected reward for taking action a in state s.
    reward: SaTable,
    initial_dist: Vec<f64>,
    gamma: f64,
    horizon: usize,
    absorbing: BTreeSet<usize>,
}

impl TabularMdp {
    /// Builds an MDP and checks its invariants:
    ///
    /// - every transition row sums to 1 within [`PROB_TOL`];
    /// - the initial distribution sums to 1 within [`PROB_TOL`];
    /// - every absorbing state self-loops with probability 1 and has reward 0.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: SaTable,
        initial_dist: Vec<f64>,
        gamma: f64,
        horizon: usize,
        absorbing: BTreeSet<usize>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidModel("state and action sets must be nonempty".into()));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidModel(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.n_states() != n_states || reward.n_actions() != n_actions {
            return Err(Error::InvalidModel("reward table shape mismatch".into()));
        }
        if initial_dist.len() != n_states {
            return Err(Error::InvalidModel("initial distribution length mismatch".into()));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidModel(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be positive".into()));
        }
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
            initial_dist,
            gamma,
            horizon,
            absorbing,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.trans_row(s, a);
                let mut sum = 0.0;
                for (s2, &p) in row.iter().enumerate() {
                    if p < 0.0 || !p.is_finite() {
                        return Err(Error::InvalidModel(format!(
                            "transition({s},{a},{s2}) is {p}"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidModel(format!(
                        "transition row ({s},{a}) sums to {sum}, expected 1"
                    )));
                }
            }
        }
        let init_sum: f64 = self.initial_dist.iter().sum();
        if (init_sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidModel(format!(
                "initial distribution sums to {init_sum}, expected 1"
            )));
        }
        if self.initial_dist.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidModel("initial distribution has an invalid entry".into()));
        }
        for &s in &self.absorbing {
            if s >= self.n_states {
                return Err(Error::InvalidModel(format!("absorbing state {s} out of range")));
            }
            for a in 0..self.n_actions {
                if (self.trans(s, a, s) - 1.0).abs() > PROB_TOL {
                    return Err(Error::InvalidModel(format!(
                        "absorbing state {s} does not self-loop under action {a}"
                    )));
                }
                if self.reward.get(s, a) != 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "absorbing state {s} has nonzero reward under action {a}"
                    )));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn trans(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s2]
    }

    #[inline]
    pub fn trans_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward.get(s, a)
    }

    pub fn reward_table(&self) -> &SaTable {
        &self.reward
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn absorbing(&self) -> &BTreeSet<usize> {
        &self.absorbing
    }

    #[inline]
    pub fn is_absorbing(&self, s: usize) -> bool {
        self.absorbing.contains(&s)
    }

    /// The same dynamics evaluated over a different horizon. Useful for
    /// convergence studies and for checks that need rollouts longer or
    /// shorter than the environment's default.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        let mut out = self.clone();
        out.horizon = horizon;
        Ok(out)
    }

    /// The policy actually used everywhere in this crate: rows on absorbing
    /// states are replaced by the uniform distribution so padded steps carry
    /// likelihood ratio 1.
    pub fn effective_policy(&self, policy: &StaticPolicy) -> Result<StaticPolicy> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::InvalidArgument(format!(
                "policy shape {}x{} does not match MDP {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        let u = 1.0 / self.n_actions as f64;
        let probs = SaTable::from_fn(self.n_states, self.n_actions, |s, a| {
            if self.is_absorbing(s) {
                u
            } else {
                policy.prob(s, a)
            }
        });
        StaticPolicy::new(probs)
    }
}
