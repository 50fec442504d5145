//! Exhaustive trajectory enumeration for small MDPs.
//!
//! These routines walk every positive-probability rollout of an MDP and are
//! deliberately independent of the dynamic-programming code: they recompute
//! probabilities straight from the transition tensor and policy tables, so
//! they can serve as a second route when verifying occupancy identities and
//! estimator expectations.

use crate::error::{Error, Result};
use crate::mdp::{StaticPolicy, TabularMdp};
use crate::sampling::Trajectory;

/// Expectation over behavior-policy rollouts of an arbitrary trajectory
/// functional: sum over every positive-probability length-`horizon`
/// trajectory of `p(trajectory) * f(trajectory)`.
///
/// Trajectories are annotated against `pi_e` exactly as sampled ones are.
/// Fails if more than `cap` trajectories would need to be visited.
pub fn expectation_over_trajectories<F>(
    mdp: &TabularMdp,
    pi_b: &StaticPolicy,
    pi_e: &StaticPolicy,
    cap: usize,
    mut f: F,
) -> Result<f64>
where
    F: FnMut(&Trajectory) -> Result<f64>,
{
    let pi_b = mdp.effective_policy(pi_b)?;
    let pi_e = mdp.effective_policy(pi_e)?;
    let horizon = mdp.horizon();
    let mut total = 0.0;
    let mut visited = 0usize;

    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        rhos: Vec::with_capacity(horizon),
    };

    fn recurse<F>(
        mdp: &TabularMdp,
        pi_b: &StaticPolicy,
        pi_e: &StaticPolicy,
        state: usize,
        prob: f64,
        traj: &mut Trajectory,
        total: &mut f64,
        visited: &mut usize,
        cap: usize,
        f: &mut F,
    ) -> Result<()>
    where
        F: FnMut(&Trajectory) -> Result<f64>,
    {
        if traj.states.len() == mdp.horizon() {
            *visited += 1;
            if *visited > cap {
                return Err(Error::EnumerationTooLarge { cap });
            }
            *total += prob * f(traj)?;
            return Ok(());
        }
        for a in 0..mdp.n_actions() {
            let pb = pi_b.prob(state, a);
            if pb == 0.0 {
                continue;
            }
            let rho = pi_e.prob(state, a) / pb;
            for (s2, &pt) in mdp.trans_row(state, a).iter().enumerate() {
                if pt == 0.0 {
                    continue;
                }
                traj.states.push(state);
                traj.actions.push(a);
                traj.rewards.push(mdp.reward(state, a));
                traj.rhos.push(rho);
                let res = recurse(
                    mdp,
                    pi_b,
                    pi_e,
                    s2,
                    prob * pb * pt,
                    traj,
                    total,
                    visited,
                    cap,
                    f,
                );
                traj.states.pop();
                traj.actions.pop();
                traj.rewards.pop();
                traj.rhos.pop();
                res?;
            }
        }
        Ok(())
    }

    for (s1, &p1) in mdp.initial_dist().iter().enumerate() {
        if p1 == 0.0 {
            continue;
        }
        recurse(mdp, &pi_b, &pi_e, s1, p1, &mut traj, &mut total, &mut visited, cap, &mut f)?;
    }
    Ok(total)
}

/// E[rho_{1:t} | S_t = s, A_t = a] under behavior rollouts, computed by
/// exhaustive enumeration of all length-`t` prefixes. The test oracle for
/// the conditional-expectation identity behind stationary importance
/// sampling.
///
/// `t` is 1-based and may exceed the MDP horizon (the dynamics extend
/// through absorbing padding). Fails if the prefix count exceeds `cap`, or
/// if (s, a) is unreachable at time t under `pi_b`.
pub fn conditional_ratio_bruteforce(
    mdp: &TabularMdp,
    pi_e: &StaticPolicy,
    pi_b: &StaticPolicy,
    t: usize,
    s: usize,
    a: usize,
    cap: usize,
) -> Result<f64> {
    if t < 1 {
        return Err(Error::InvalidArgument("conditional ratio needs t >= 1".into()));
    }
    if s >= mdp.n_states() || a >= mdp.n_actions() {
        return Err(Error::InvalidArgument(format!("state {s} / action {a} out of range")));
    }
    let pi_b = mdp.effective_policy(pi_b)?;
    let pi_e = mdp.effective_policy(pi_e)?;
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut visited = 0usize;

    // Stack of (state, depth, prob, rho-product); depth counts completed
    // steps, so a frame at depth t-1 is choosing the t-th (state, action).
    let mut stack: Vec<(usize, usize, f64, f64)> = mdp
        .initial_dist()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s1, &p)| (s1, 0usize, p, 1.0f64))
        .collect();

    while let Some((state, depth, prob, rho_prod)) = stack.pop() {
        visited += 1;
        if visited > cap {
            return Err(Error::EnumerationTooLarge { cap });
        }
        if depth == t - 1 {
            // Final step: the prefix must end in (s, a).
            if state != s {
                continue;
            }
            let pb = pi_b.prob(state, a);
            if pb == 0.0 {
                continue;
            }
            let rho = pi_e.prob(state, a) / pb;
            denominator += prob * pb;
            numerator += prob * pb * rho_prod * rho;
            continue;
        }
        for act in 0..mdp.n_actions() {
            let pb = pi_b.prob(state, act);
            if pb == 0.0 {
                continue;
            }
            let rho = pi_e.prob(state, act) / pb;
            for (s2, &pt) in mdp.trans_row(state, act).iter().enumerate() {
                if pt > 0.0 {
                    stack.push((s2, depth + 1, prob * pb * pt, rho_prod * rho));
                }
            }
        }
    }

    if denominator == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "(s={s}, a={a}) is unreachable at time {t} under the behavior policy"
        )));
    }
    Ok(numerator / denominator)
}
