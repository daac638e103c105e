//! Empirical returns and learning targets.
//!
//! All horizon-k sums are inclusive: the sum for horizon `k` starting at
//! position `t` covers rewards `r_t` through `r_{t+k}`, i.e. `k + 1` terms.
//! Getting this off by one silently corrupts every agent built on top, so
//! every function below states its bounds explicitly.
//!
//! Discounted returns are computed by backward recursion `R = r_i + gamma * R`
//! so that Monte Carlo returns and recursive TD targets agree bit-for-bit in
//! the degenerate case where they coincide.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ReturnsError {
    #[error("step index {index} out of range for trace of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("trace is empty")]
    EmptyTrace,
    #[error("rewards ({rewards}) and terminal flags ({flags}) differ in length")]
    LengthMismatch { rewards: usize, flags: usize },
    #[error("terminal flag set before the final step of an episode segment")]
    EarlyTerminal,
    #[error(
        "targets for position {position} need lookahead up to {required}, \
         but only {available} transitions are present"
    )]
    UnavailableTarget {
        position: usize,
        required: usize,
        available: usize,
    },
}

/// Ordered rewards and terminal flags of one episode.
///
/// Within a single episode at most the final flag may be set; traces that
/// violate this are rejected at construction. Windows that span episode
/// boundaries are handled by [`multi_horizon_targets`], which works on raw
/// slices and tolerates multiple terminal flags.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    rewards: Vec<f64>,
    terminal_flags: Vec<bool>,
}

impl EpisodeTrace {
    pub fn new(rewards: Vec<f64>, terminal_flags: Vec<bool>) -> Result<Self, ReturnsError> {
        if rewards.is_empty() {
            return Err(ReturnsError::EmptyTrace);
        }
        if rewards.len() != terminal_flags.len() {
            return Err(ReturnsError::LengthMismatch {
                rewards: rewards.len(),
                flags: terminal_flags.len(),
            });
        }
        if terminal_flags[..terminal_flags.len() - 1].iter().any(|&f| f) {
            return Err(ReturnsError::EarlyTerminal);
        }
        Ok(Self {
            rewards,
            terminal_flags,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn terminal_flags(&self) -> &[bool] {
        &self.terminal_flags
    }

    fn check_index(&self, t: usize) -> Result<(), ReturnsError> {
        if t >= self.len() {
            return Err(ReturnsError::IndexOutOfRange {
                index: t,
                len: self.len(),
            });
        }
        Ok(())
    }
}

/// Which target a value head regresses onto.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSpec {
    /// Finite-horizon Monte Carlo return: inclusive reward sum over `tau + 1` steps.
    McFinite { tau: usize },
    /// Discounted Monte Carlo return to episode end.
    McDiscounted { gamma: f64 },
    /// n-step TD target bootstrapped from the function approximator.
    TdNstep { n: usize, gamma: f64 },
}

/// Discounted return from step `t` to the end of the episode.
pub fn discounted_return(trace: &EpisodeTrace, t: usize, gamma: f64) -> Result<f64, ReturnsError> {
    trace.check_index(t)?;
    let mut acc = 0.0;
    for i in (t..trace.len()).rev() {
        acc = trace.rewards[i] + gamma * acc;
    }
    Ok(acc)
}

/// Inclusive finite-horizon return: sum of `r_t ..= r_{min(t + tau, T)}`.
///
/// Truncates silently at the episode's terminal step; `tau = 0` yields `r_t`.
pub fn finite_horizon_return(
    trace: &EpisodeTrace,
    t: usize,
    tau: usize,
) -> Result<f64, ReturnsError> {
    trace.check_index(t)?;
    let end = (t + tau).min(trace.len() - 1);
    Ok(trace.rewards[t..=end].iter().sum())
}

/// n-step TD target over a reward window.
///
/// `sum_{i=0}^{n-1} gamma^i r_i + gamma^n * bootstrap` when the window does
/// not end an episode; the bare discounted sum when it does. Computed by
/// backward recursion starting from the bootstrap value.
pub fn td_target(rewards_window: &[f64], gamma: f64, bootstrap: f64, terminal: bool) -> f64 {
    let mut acc = if terminal { 0.0 } else { bootstrap };
    for &r in rewards_window.iter().rev() {
        acc = r + gamma * acc;
    }
    acc
}

/// Per-horizon reward sums and terminal masks over a transition window.
///
/// For each horizon `k`: `R_k = sum of rewards[m ..= m+k]` and `T_k = 1` iff
/// any terminal flag occurs within `m ..= m+k`. The window may span episode
/// boundaries (more than one flag set); a set mask tells the loss to drop
/// that term, so sums crossing a boundary are harmless.
pub fn multi_horizon_targets(
    rewards: &[f64],
    terminal_flags: &[bool],
    m: usize,
    horizons: &[usize],
) -> Result<Vec<(f64, bool)>, ReturnsError> {
    debug_assert_eq!(rewards.len(), terminal_flags.len());
    let max_h = horizons.iter().copied().max().unwrap_or(0);
    let required = m + max_h;
    if required >= rewards.len() {
        return Err(ReturnsError::UnavailableTarget {
            position: m,
            required,
            available: rewards.len(),
        });
    }
    let mut out = Vec::with_capacity(horizons.len());
    for &k in horizons {
        let sum: f64 = rewards[m..=m + k].iter().sum();
        let hit_terminal = terminal_flags[m..=m + k].iter().any(|&f| f);
        out.push((sum, hit_terminal));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(rewards: &[f64]) -> EpisodeTrace {
        let mut flags = vec![false; rewards.len()];
        *flags.last_mut().unwrap() = true;
        EpisodeTrace::new(rewards.to_vec(), flags).unwrap()
    }

    // Independent brute-force oracles. These stay direct summations and must
    // not share code with the recursive implementations they check.
    fn oracle_discounted(rewards: &[f64], t: usize, gamma: f64) -> f64 {
        rewards[t..]
            .iter()
            .enumerate()
            .map(|(i, r)| gamma.powi(i as i32) * r)
            .sum()
    }

    fn oracle_finite(rewards: &[f64], t: usize, tau: usize) -> f64 {
        let end = (t + tau).min(rewards.len() - 1);
        rewards[t..=end].iter().sum()
    }

    #[test]
    fn discounted_return_examples() {
        let tr = trace(&[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(discounted_return(&tr, 0, 0.5).unwrap(), 1.25);
        let zero = trace(&[0.0, 0.0, 0.0]);
        assert_eq!(discounted_return(&zero, 1, 0.9).unwrap(), 0.0);
        let ones = trace(&[1.0, 1.0, 1.0]);
        assert_eq!(discounted_return(&ones, 0, 1.0).unwrap(), 3.0);
    }

    #[test]
    fn discounted_return_index_error() {
        let tr = trace(&[1.0]);
        assert_eq!(
            discounted_return(&tr, 1, 0.9),
            Err(ReturnsError::IndexOutOfRange { index: 1, len: 1 })
        );
    }

    #[test]
    fn finite_horizon_examples() {
        let tr = trace(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(finite_horizon_return(&tr, 0, 2).unwrap(), 3.0);
        let short = trace(&[1.0, 1.0]);
        assert_eq!(finite_horizon_return(&short, 0, 32).unwrap(), 2.0);
        // tau = 0 is a single-term sum under the inclusive convention
        assert_eq!(finite_horizon_return(&tr, 2, 0).unwrap(), 2.0);
    }

    #[test]
    fn td_target_examples() {
        let t = td_target(&[0.0, 0.0], 0.9, 10.0, false);
        assert!((t - 8.1).abs() < 1e-15);
        assert_eq!(td_target(&[0.0, 0.0, 0.0], 0.9, 10.0, true), 0.0);
    }

    #[test]
    fn td_target_full_episode_matches_mc() {
        let tr = trace(&[1.0, -0.5, 2.0, 0.25]);
        let gamma = 0.9;
        let td = td_target(tr.rewards(), gamma, 123.0, true);
        let mc = discounted_return(&tr, 0, gamma).unwrap();
        assert_eq!(td, mc); // identical recursion, bit-exact
    }

    #[test]
    fn multi_horizon_examples() {
        let rewards = [1.0, 0.0, 1.0, 0.0];
        let flags = [false; 4];
        let t = multi_horizon_targets(&rewards, &flags, 0, &[2]).unwrap();
        assert_eq!(t, vec![(2.0, false)]);

        // terminal at m+1 masks every horizon >= 1
        let flags2 = [false, true, false, false, false];
        let rewards2 = [0.0; 5];
        let t2 = multi_horizon_targets(&rewards2, &flags2, 0, &[4]).unwrap();
        assert_eq!(t2, vec![(0.0, true)]);

        let ones = [1.0; 8];
        let noterm = [false; 8];
        let t3 = multi_horizon_targets(&ones, &noterm, 0, &[1, 2, 4]).unwrap();
        assert_eq!(t3, vec![(2.0, false), (3.0, false), (5.0, false)]);
    }

    #[test]
    fn multi_horizon_insufficient_lookahead() {
        let rewards = [1.0; 4];
        let flags = [false; 4];
        assert!(matches!(
            multi_horizon_targets(&rewards, &flags, 2, &[2]),
            Err(ReturnsError::UnavailableTarget { .. })
        ));
    }

    #[test]
    fn trace_invariants_enforced() {
        assert_eq!(
            EpisodeTrace::new(vec![], vec![]).unwrap_err(),
            ReturnsError::EmptyTrace
        );
        assert!(matches!(
            EpisodeTrace::new(vec![1.0], vec![true, false]).unwrap_err(),
            ReturnsError::LengthMismatch { .. }
        ));
        assert_eq!(
            EpisodeTrace::new(vec![1.0, 1.0], vec![true, false]).unwrap_err(),
            ReturnsError::EarlyTerminal
        );
    }

    proptest! {
        #[test]
        fn full_horizon_equals_undiscounted_return(
            rewards in proptest::collection::vec(-10.0f64..10.0, 1..40),
            t_frac in 0.0f64..1.0,
        ) {
            let tr = trace(&rewards);
            let t = ((rewards.len() - 1) as f64 * t_frac) as usize;
            let fh = finite_horizon_return(&tr, t, rewards.len()).unwrap();
            let undisc = discounted_return(&tr, t, 1.0).unwrap();
            prop_assert!((fh - undisc).abs() < 1e-9);
        }

        #[test]
        fn finite_horizon_monotone_in_tau(
            rewards in proptest::collection::vec(0.0f64..5.0, 1..40),
        ) {
            let tr = trace(&rewards);
            let mut prev = f64::NEG_INFINITY;
            for tau in 0..rewards.len() + 2 {
                let r = finite_horizon_return(&tr, 0, tau).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
        }

        #[test]
        fn multi_horizon_matches_finite_horizon(
            rewards in proptest::collection::vec(-5.0f64..5.0, 8..40),
        ) {
            let flags = vec![false; rewards.len()];
            let k = 4usize;
            let m = 2usize;
            let got = multi_horizon_targets(&rewards, &flags, m, &[k]).unwrap();
            let mut term = vec![false; rewards.len()];
            *term.last_mut().unwrap() = true;
            let tr = EpisodeTrace::new(rewards.clone(), term).unwrap();
            let want = finite_horizon_return(&tr, m, k).unwrap();
            prop_assert!((got[0].0 - want).abs() < 1e-12);
        }

        #[test]
        fn discounted_matches_direct_summation(
            rewards in proptest::collection::vec(-10.0f64..10.0, 1..64),
            gamma in 0.0f64..=1.0,
        ) {
            let tr = trace(&rewards);
            for t in 0..rewards.len() {
                let got = discounted_return(&tr, t, gamma).unwrap();
                let want = oracle_discounted(&rewards, t, gamma);
                prop_assert!((got - want).abs() < 1e-12);
                let fh = finite_horizon_return(&tr, t, 7).unwrap();
                prop_assert!((fh - oracle_finite(&rewards, t, 7)).abs() < 1e-12);
            }
        }
    }
}
