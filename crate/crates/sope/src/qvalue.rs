//! Exact q-value evaluation for a fixed policy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mdp::{StaticPolicy, TabularMdp};
use crate::tables::SaTable;

/// Which Bellman evaluation problem to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonMode {
    /// Backward recursion over the MDP's horizon; returns the first-step
    /// slice q_1.
    Finite,
    /// Stationary evaluation q = r + gamma T pi q by direct linear solve.
    /// Requires gamma < 1.
    Infinite,
}

/// q(s, a) together with its policy expectation v(s) = sum_a pi(a|s) q(s, a).
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub q: SaTable,
    pub v: Vec<f64>,
}

impl QTable {
    /// The all-zero q function; turns a doubly-robust estimator back into
    /// its plain importance-sampling form.
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable { q: SaTable::zeros(n_states, n_actions), v: vec![0.0; n_states] }
    }

    pub fn from_q(q: SaTable, policy: &StaticPolicy) -> Self {
        let v = (0..q.n_states())
            .map(|s| (0..q.n_actions()).map(|a| policy.prob(s, a) * q.get(s, a)).sum())
            .collect();
        QTable { q, v }
    }

    pub fn n_states(&self) -> usize {
        self.q.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.q.n_actions()
    }
}

/// Evaluates the q function of `policy` on `mdp`.
pub fn exact_q(mdp: &TabularMdp, policy: &StaticPolicy, mode: HorizonMode) -> Result<QTable> {
    let pi = mdp.effective_policy(policy)?;
    match mode {
        HorizonMode::Finite => Ok(finite_q(mdp, &pi)),
        HorizonMode::Infinite => infinite_q(mdp, &pi),
    }
}

fn finite_q(mdp: &TabularMdp, pi: &StaticPolicy) -> QTable {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.gamma();
    let mut v_next = vec![0.0; ns];
    let mut q = SaTable::zeros(ns, na);
    for _ in 0..mdp.horizon() {
        q = SaTable::from_fn(ns, na, |s, a| {
            let mut future = 0.0;
            for (s2, &p) in mdp.trans_row(s, a).iter().enumerate() {
                if p > 0.0 {
                    future += p * v_next[s2];
                }
            }
            mdp.reward(s, a) + gamma * future
        });
        v_next = (0..ns)
            .map(|s| (0..na).map(|a| pi.prob(s, a) * q.get(s, a)).sum())
            .collect();
    }
    QTable { q, v: v_next }
}

fn infinite_q(mdp: &TabularMdp, pi: &StaticPolicy) -> Result<QTable> {
    let gamma = mdp.gamma();
    if gamma >= 1.0 {
        return Err(Error::InvalidArgument(
            "infinite-horizon q evaluation requires gamma < 1".into(),
        ));
    }
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let k = ns * na;
    let mut a_mat = DMatrix::<f64>::identity(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for s in 0..ns {
        for a in 0..na {
            let row = s * na + a;
            b[row] = mdp.reward(s, a);
            for (s2, &p) in mdp.trans_row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    a_mat[(row, s2 * na + a2)] -= gamma * p * pi.prob(s2, a2);
                }
            }
        }
    }
    let solution = a_mat
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::SingularSystem("q evaluation solve failed".into()))?;
    let q = SaTable::from_fn(ns, na, |s, a| solution[s * na + a]);
    Ok(QTable::from_q(q, pi))
}

/// q evaluated on a deliberately corrupted model: every non-absorbing
/// transition row is mixed with the uniform distribution at weight
/// `epsilon`. Gives a controlled "imperfect model" knob for doubly-robust
/// studies.
pub fn perturbed_q(
    mdp: &TabularMdp,
    policy: &StaticPolicy,
    epsilon: f64,
    mode: HorizonMode,
) -> Result<QTable> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidArgument(format!(
            "perturbation epsilon must lie in [0, 1], got {epsilon}"
        )));
    }
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let uniform = 1.0 / ns as f64;
    let mut transition = Vec::with_capacity(ns * na * ns);
    for s in 0..ns {
        for a in 0..na {
            for s2 in 0..ns {
                let p = mdp.trans(s, a, s2);
                if mdp.is_absorbing(s) {
                    transition.push(p);
                } else {
                    transition.push((1.0 - epsilon) * p + epsilon * uniform);
                }
            }
        }
    }
    let noisy = TabularMdp::new(
        ns,
        na,
        transition,
        mdp.reward_table().clone(),
        mdp.initial_dist().to_vec(),
        mdp.gamma(),
        mdp.horizon(),
        mdp.absorbing().clone(),
    )?;
    exact_q(&noisy, policy, mode)
}

/// Max-norm residual of the stationary Bellman evaluation equation at `q`.
pub fn bellman_q_residual(mdp: &TabularMdp, policy: &StaticPolicy, table: &QTable) -> Result<f64> {
    let pi = mdp.effective_policy(policy)?;
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let mut future = 0.0;
            for (s2, &p) in mdp.trans_row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let v2: f64 =
                    (0..mdp.n_actions()).map(|a2| pi.prob(s2, a2) * table.q.get(s2, a2)).sum();
                future += p * v2;
            }
            let rhs = mdp.reward(s, a) + mdp.gamma() * future;
            worst = worst.max((table.q.get(s, a) - rhs).abs());
        }
    }
    Ok(worst)
}
