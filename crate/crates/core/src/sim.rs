//! Seeded slot-level simulation of the writer/reader system.
//!
//! Each slot the policy picks an action from the current state, the stage
//! cost `y + c a` accrues, and then a single uniform draw decides whether
//! the writer committed a fresh update at the end of the slot.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`), so a
//! seed reproduces a run bit for bit on any platform.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::model::{stage_cost, Action, AgeState, ModelParams, ThresholdPolicy};
use crate::solver::PolicyTable;

pub type SimRng = ChaCha8Rng;

pub const DEFAULT_BATCHES: u64 = 30;

/// Per-episode slot cap for first-passage runs.
pub const FIRST_PASSAGE_SLOT_CAP: u64 = 10_000_000;

/// Reader policies understood by the simulator.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    /// Sample iff `y - x >= Y0`.
    Threshold(ThresholdPolicy),
    AlwaysSample,
    NeverSample,
    /// Sample in slots `0, k, 2k, ...`.
    Periodic(u64),
    /// Tabulated policy; ages beyond the grid are clamped to its caps.
    Table(Arc<PolicyTable>),
}

impl PolicySpec {
    pub fn threshold(y0: u64) -> Result<Self> {
        Ok(Self::Threshold(ThresholdPolicy::new(y0)?))
    }

    pub fn periodic(k: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidPolicy("periodic period must be >= 1".into()));
        }
        Ok(Self::Periodic(k))
    }

    pub fn decide(&self, state: AgeState, slot: u64) -> Action {
        match self {
            Self::Threshold(t) => t.action(state),
            Self::AlwaysSample => Action::Sample,
            Self::NeverSample => Action::Idle,
            Self::Periodic(k) => {
                if slot.is_multiple_of(*k) {
                    Action::Sample
                } else {
                    Action::Idle
                }
            }
            Self::Table(t) => t.action_saturating(state),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Threshold(t) => write!(f, "threshold:{}", t.threshold()),
            Self::AlwaysSample => f.write_str("always"),
            Self::NeverSample => f.write_str("never"),
            Self::Periodic(k) => write!(f, "periodic:{k}"),
            Self::Table(_) => f.write_str("table"),
        }
    }
}

/// Parses `threshold:<int>`, `always`, `never` or `periodic:<int>`.
impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidPolicy(format!(
                "`{s}` (expected threshold:<int>, always, never or periodic:<int>, with int >= 1)"
            ))
        };
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("always", None) => Ok(Self::AlwaysSample),
            ("never", None) => Ok(Self::NeverSample),
            ("threshold", Some(a)) => {
                let k: u64 = a.parse().map_err(|_| bad())?;
                Self::threshold(k).map_err(|_| bad())
            }
            ("periodic", Some(a)) => {
                let k: u64 = a.parse().map_err(|_| bad())?;
                Self::periodic(k).map_err(|_| bad())
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    slots: u64,
    warmup: u64,
    seed: u64,
    batches: u64,
}

impl SimConfig {
    pub fn new(slots: u64, warmup: u64, seed: u64, batches: u64) -> Result<Self> {
        if warmup >= slots {
            return Err(Error::InvalidConfig(format!(
                "warmup ({warmup}) must be smaller than slots ({slots})"
            )));
        }
        if batches < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 batches, got {batches}"
            )));
        }
        if !(slots - warmup).is_multiple_of(batches) {
            return Err(Error::InvalidConfig(format!(
                "batches ({batches}) must divide slots - warmup ({})",
                slots - warmup
            )));
        }
        Ok(Self {
            slots,
            warmup,
            seed,
            batches,
        })
    }

    pub fn slots(&self) -> u64 {
        self.slots
    }

    pub fn warmup(&self) -> u64 {
        self.warmup
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn batches(&self) -> u64 {
        self.batches
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimate {
    pub mean_cost: f64,
    /// 95% batch-means half-width.
    pub ci_halfwidth: f64,
    pub mean_age: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

/// Advances `state` by one slot: one uniform draw, write iff `u < p`.
pub fn step<R: Rng>(
    state: AgeState,
    action: Action,
    params: &ModelParams,
    rng: &mut R,
) -> AgeState {
    let wrote = rng.random::<f64>() < params.p();
    state.advance(action, wrote)
}

/// Two-sided 95% Student-t half-width for the mean of `values`.
fn mean_and_halfwidth(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("dof >= 1")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

/// Long-run average cost of `policy` from `(0, 1)`, with a batch-means
/// confidence interval over the post-warmup slots.
pub fn simulate(params: &ModelParams, policy: &PolicySpec, config: &SimConfig) -> SimEstimate {
    if matches!(policy, PolicySpec::NeverSample) {
        log::warn!("never-sample policy: client age grows linearly, the estimate only covers the finite horizon");
    }
    let mut rng = SimRng::seed_from_u64(config.seed);
    let mut state = AgeState::REFERENCE;
    let batch_len = (config.slots - config.warmup) / config.batches;
    let mut batch_means = Vec::with_capacity(config.batches as usize);
    let mut age_sum = 0.0;
    let mut samples = 0u64;
    let (mut batch_cost, mut in_batch) = (0.0, 0u64);
    for slot in 0..config.slots {
        debug_assert!(state.x() <= state.y() && state.y() >= 1);
        let action = policy.decide(state, slot);
        if slot >= config.warmup {
            batch_cost += stage_cost(state, action, params);
            age_sum += state.y() as f64;
            samples += u64::from(action.indicator());
            in_batch += 1;
            if in_batch == batch_len {
                batch_means.push(batch_cost / batch_len as f64);
                batch_cost = 0.0;
                in_batch = 0;
            }
        }
        state = step(state, action, params, &mut rng);
    }
    let measured = (config.slots - config.warmup) as f64;
    let (mean_cost, ci_halfwidth) = mean_and_halfwidth(&batch_means);
    SimEstimate {
        mean_cost,
        ci_halfwidth,
        mean_age: age_sum / measured,
        sample_rate: samples as f64 / measured,
        seed: config.seed,
    }
}

/// Runs [`simulate`] for every parameter point in parallel. Point `i` uses
/// seed `config.seed ^ i`; results come back in input order.
pub fn sweep_simulate<F>(
    params_list: &[ModelParams],
    policy_factory: F,
    config: &SimConfig,
) -> Vec<Result<SimEstimate>>
where
    F: Fn(&ModelParams) -> Result<PolicySpec> + Sync,
{
    params_list
        .par_iter()
        .enumerate()
        .map(|(i, params)| {
            let policy = policy_factory(params)?;
            let cfg = config.with_seed(config.seed ^ i as u64);
            Ok(simulate(params, &policy, &cfg))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstPassageEstimate {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub completed: u64,
    /// Episodes abandoned at the slot cap.
    pub aborted: u64,
    pub seed: u64,
}

/// Monte Carlo estimate of the always-sample cost accumulated from `start`
/// until the chain first enters `(0, 1)`.
pub fn first_passage_monte_carlo(
    params: &ModelParams,
    start: AgeState,
    episodes: u64,
    seed: u64,
) -> Result<FirstPassageEstimate> {
    first_passage_monte_carlo_capped(params, start, episodes, seed, FIRST_PASSAGE_SLOT_CAP)
}

pub fn first_passage_monte_carlo_capped(
    params: &ModelParams,
    start: AgeState,
    episodes: u64,
    seed: u64,
    slot_cap: u64,
) -> Result<FirstPassageEstimate> {
    if episodes == 0 {
        return Err(Error::InvalidConfig("need at least one episode".into()));
    }
    let mut rng = SimRng::seed_from_u64(seed);
    let mut costs = Vec::with_capacity(episodes as usize);
    let mut aborted = 0;
    'episode: for _ in 0..episodes {
        let mut state = start;
        let mut cost = 0.0;
        for _ in 0..slot_cap {
            cost += stage_cost(state, Action::Sample, params);
            state = step(state, Action::Sample, params, &mut rng);
            if state == AgeState::REFERENCE {
                costs.push(cost);
                continue 'episode;
            }
        }
        aborted += 1;
    }
    let (mean, ci_halfwidth) = if costs.is_empty() {
        (f64::NAN, f64::INFINITY)
    } else {
        mean_and_halfwidth(&costs)
    };
    Ok(FirstPassageEstimate {
        mean,
        ci_halfwidth,
        completed: costs.len() as u64,
        aborted,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic;

    fn params(p: f64, c: f64) -> ModelParams {
        ModelParams::new(p, c).unwrap()
    }

    fn st(x: u64, y: u64) -> AgeState {
        AgeState::new(x, y).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(100, 100, 1, 2).is_err());
        assert!(SimConfig::new(100, 0, 1, 1).is_err());
        assert!(SimConfig::new(100, 0, 1, 30).is_err());
        assert!(SimConfig::new(100_000, 10_000, 1, 30).is_ok());
    }

    #[test]
    fn policy_grammar() {
        assert!(matches!("always".parse(), Ok(PolicySpec::AlwaysSample)));
        assert!(matches!("never".parse(), Ok(PolicySpec::NeverSample)));
        assert!(matches!("periodic:3".parse(), Ok(PolicySpec::Periodic(3))));
        let t: PolicySpec = "threshold:12".parse().unwrap();
        assert_eq!(t.to_string(), "threshold:12");
        for bad in [
            "threshold:0",
            "threshold:",
            "threshold:-1",
            "periodic:0",
            "sometimes",
            "always:1",
            "",
        ] {
            assert!(bad.parse::<PolicySpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn deterministic_cycle() {
        let cfg = SimConfig::new(100_000, 10_000, 7, 30).unwrap();
        let est = simulate(&params(1.0, 3.0), &PolicySpec::threshold(1).unwrap(), &cfg);
        assert_eq!(est.mean_cost, 4.0);
        assert_eq!(est.sample_rate, 1.0);
        assert_eq!(est.ci_halfwidth, 0.0);
        assert_eq!(est.seed, 7);
    }

    #[test]
    fn threshold_and_always_agree_at_certain_writes() {
        let cfg = SimConfig::new(30_000, 0, 11, 30).unwrap();
        let pr = params(1.0, 2.5);
        let a = simulate(&pr, &PolicySpec::threshold(1).unwrap(), &cfg);
        let b = simulate(&pr, &PolicySpec::AlwaysSample, &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn reproducible() {
        let cfg = SimConfig::new(301_000, 1_000, 99, 30).unwrap();
        let pr = params(0.37, 4.0);
        let pol = PolicySpec::threshold(3).unwrap();
        assert_eq!(simulate(&pr, &pol, &cfg), simulate(&pr, &pol, &cfg));
        let other = simulate(&pr, &pol, &cfg.with_seed(100));
        assert_ne!(simulate(&pr, &pol, &cfg).mean_cost, other.mean_cost);
    }

    #[test]
    fn matches_closed_form() {
        let cfg = SimConfig::new(1_000_000, 10_000, 2024, 30).unwrap();
        for &(p, c, y0) in &[(0.5, 5.0, 2), (0.5, 80.0, 12)] {
            let pr = params(p, c);
            let est = simulate(&pr, &PolicySpec::threshold(y0).unwrap(), &cfg);
            let g = analytic::g0(y0, &pr).unwrap();
            assert!(
                (est.mean_cost - g).abs() <= 3.0 * est.ci_halfwidth,
                "{est:?} vs {g}"
            );
        }
    }

    #[test]
    fn kernel_fidelity() {
        let trials = 100_000u64;
        let mut rng = SimRng::seed_from_u64(5);
        for &p in &[0.1, 0.5, 0.83] {
            let pr = params(p, 0.0);
            let from = st(3, 5);
            for a in [Action::Idle, Action::Sample] {
                let law = crate::model::transition(from, a, &pr).unwrap();
                let written = law.branches()[0].0;
                let hits = (0..trials)
                    .filter(|_| step(from, a, &pr, &mut rng) == written)
                    .count() as f64;
                let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
                assert!((hits - trials as f64 * p).abs() <= 4.0 * sigma);
            }
        }
    }

    #[test]
    fn baseline_age_ordering() {
        let cfg = SimConfig::new(300_000, 0, 3, 30).unwrap();
        let pr = params(0.3, 20.0);
        let y0 = analytic::optimal_threshold(&pr).y0_star;
        let always = simulate(&pr, &PolicySpec::AlwaysSample, &cfg).mean_age;
        let thresh = simulate(&pr, &PolicySpec::threshold(y0).unwrap(), &cfg).mean_age;
        let never = simulate(&pr, &PolicySpec::NeverSample, &cfg).mean_age;
        assert!(always <= thresh && thresh <= never);
        assert!((never - 150_000.5).abs() < 1e-6);
    }

    #[test]
    fn periodic_rate() {
        let cfg = SimConfig::new(30_000, 0, 3, 30).unwrap();
        let est = simulate(&params(0.5, 1.0), &PolicySpec::periodic(3).unwrap(), &cfg);
        assert!((est.sample_rate - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn table_policy_reproduces_threshold() {
        let grid = crate::solver::GridSpec::new(40, 40).unwrap();
        let thr = ThresholdPolicy::new(4).unwrap();
        let table = PolicyTable::from_fn(grid, |x, y| thr.action(st(x, y)));
        let cfg = SimConfig::new(60_000, 0, 8, 30).unwrap();
        let pr = params(0.4, 6.0);
        let a = simulate(&pr, &PolicySpec::Table(Arc::new(table)), &cfg);
        let b = simulate(&pr, &PolicySpec::Threshold(thr), &cfg);
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_seeds_and_order() {
        let cfg = SimConfig::new(60_000, 0, 42, 30).unwrap();
        let pts = [params(0.5, 5.0), params(0.5, 5.0), params(0.2, 1.0)];
        let out = sweep_simulate(&pts, |_| PolicySpec::threshold(2), &cfg);
        let est: Vec<_> = out.into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(est[0].seed, 42);
        assert_eq!(est[1].seed, 43);
        assert_eq!(est[2].seed, 40);
        assert_eq!(
            est[0],
            simulate(&pts[0], &PolicySpec::threshold(2).unwrap(), &cfg)
        );
        assert_ne!(est[0].mean_cost, est[1].mean_cost);
    }

    #[test]
    fn sweep_keeps_going_after_errors() {
        let cfg = SimConfig::new(3_000, 0, 1, 30).unwrap();
        let pts = [params(0.5, 5.0), params(0.6, 5.0)];
        let out = sweep_simulate(
            &pts,
            |pr| {
                if pr.p() < 0.55 {
                    PolicySpec::threshold(0)
                } else {
                    Ok(PolicySpec::AlwaysSample)
                }
            },
            &cfg,
        );
        assert!(out[0].is_err());
        assert!(out[1].is_ok());
    }

    #[test]
    fn first_passage_deterministic() {
        let est = first_passage_monte_carlo(&params(1.0, 0.0), st(1, 1), 10_000, 1).unwrap();
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.ci_halfwidth, 0.0);
        assert_eq!(est.completed, 10_000);
    }

    #[test]
    fn first_passage_cap() {
        let est = first_passage_monte_carlo_capped(&params(0.01, 0.0), st(5, 5), 20, 1, 3).unwrap();
        assert_eq!(est.aborted, 20);
        assert!(est.mean.is_nan());
        assert!(first_passage_monte_carlo(&params(0.5, 0.0), st(1, 1), 0, 1).is_err());
    }

    #[test]
    fn first_passage_matches_exact_and_bound() {
        for &(p, c, x, y) in &[
            (0.5, 0.0, 1, 1),
            (0.5, 2.0, 0, 1),
            (0.3, 1.0, 2, 6),
            (0.9, 4.0, 0, 3),
        ] {
            let pr = params(p, c);
            let s = st(x, y);
            let est = first_passage_monte_carlo(&pr, s, 100_000, 77).unwrap();
            let exact = analytic::first_passage_exact(s, &pr);
            assert!(
                (est.mean - exact).abs() <= 3.0 * est.ci_halfwidth,
                "{s} {est:?} vs {exact}"
            );
            assert!(est.mean <= analytic::first_passage_bound(s, &pr) + 3.0 * est.ci_halfwidth);
        }
    }
}
