//! MDP primitives for the writer/reader memory sampling problem.
//!
//! The writer commits a fresh update (age 0) to memory at the end of each
//! slot with probability `p`. The reader decides each slot whether to read
//! (sample) the memory at cost `c`. The state is the pair `(x, y)`: the age
//! of the update held in memory and the age of the update held by the
//! client, both measured at the start of a slot.

use std::fmt;

use arrayvec::ArrayVec;

use crate::error::{Error, Result};

/// Parameters of one problem instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    p: f64,
    c: f64,
}

impl ModelParams {
    pub fn new(p: f64, c: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidCost(c));
        }
        Ok(Self { p, c })
    }

    /// Per-slot write probability.
    pub fn p(&self) -> f64 {
        self.p
    }

    /// `1 - p`.
    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    /// Cost of one read.
    pub fn c(&self) -> f64 {
        self.c
    }
}

impl fmt::Display for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p={} c={}", self.p, self.c)
    }
}

/// Memory age `x` and client age `y` at the start of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgeState {
    x: u64,
    y: u64,
}

impl AgeState {
    pub fn new(x: u64, y: u64) -> Result<Self> {
        if y == 0 || x > y {
            return Err(Error::InvalidState { x, y });
        }
        Ok(Self { x, y })
    }

    /// The reference state `(0, 1)`.
    pub const REFERENCE: AgeState = AgeState { x: 0, y: 1 };

    pub fn x(&self) -> u64 {
        self.x
    }

    pub fn y(&self) -> u64 {
        self.y
    }

    /// Successor after one slot given the action and whether a write landed.
    ///
    /// A read copies the memory content, so the client ends the slot one
    /// slot older than the memory was at its start.
    pub fn advance(self, action: Action, wrote: bool) -> AgeState {
        let y = match action {
            Action::Idle => self.y + 1,
            Action::Sample => self.x + 1,
        };
        let x = if wrote { 0 } else { self.x + 1 };
        AgeState { x, y }
    }
}

impl fmt::Display for AgeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Idle,
    Sample,
}

impl Action {
    /// 0 for idle, 1 for sample.
    pub fn indicator(self) -> u8 {
        match self {
            Action::Idle => 0,
            Action::Sample => 1,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Idle => "idle",
            Action::Sample => "sample",
        })
    }
}

/// One-step distribution over successor states. Zero-probability branches
/// are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLaw {
    branches: ArrayVec<(AgeState, f64), 2>,
}

impl TransitionLaw {
    pub fn branches(&self) -> &[(AgeState, f64)] {
        &self.branches
    }

    pub fn total_probability(&self) -> f64 {
        self.branches.iter().map(|(_, pr)| pr).sum()
    }

    /// Probability assigned to `state` (0 if absent).
    pub fn probability_of(&self, state: AgeState) -> f64 {
        self.branches
            .iter()
            .filter(|(s, _)| *s == state)
            .map(|(_, pr)| pr)
            .sum()
    }

    pub fn expectation(&self, mut f: impl FnMut(AgeState) -> f64) -> f64 {
        self.branches.iter().map(|&(s, pr)| pr * f(s)).sum()
    }
}

/// Transition kernel: `p` to the written branch, `1 - p` to the aged branch.
pub fn transition(state: AgeState, action: Action, params: &ModelParams) -> Result<TransitionLaw> {
    let state = AgeState::new(state.x, state.y)?;
    let mut branches = ArrayVec::new();
    let p = params.p();
    let q = params.q();
    if p > 0.0 {
        branches.push((state.advance(action, true), p));
    }
    if q > 0.0 {
        branches.push((state.advance(action, false), q));
    }
    Ok(TransitionLaw { branches })
}

/// Stage cost `y + c * a`.
pub fn stage_cost(state: AgeState, action: Action, params: &ModelParams) -> f64 {
    state.y as f64 + params.c() * f64::from(action.indicator())
}

/// Threshold policy with threshold `Y0 >= 1`.
///
/// On the `x = 0` axis it samples iff `y >= Y0`. Off the axis it samples iff
/// `y - x >= Y0`, which idles on every off-axis feasible state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ThresholdPolicy {
    y0: u64,
}

impl ThresholdPolicy {
    pub fn new(y0: u64) -> Result<Self> {
        if y0 == 0 {
            return Err(Error::InvalidThreshold { got: y0, min: 1 });
        }
        Ok(Self { y0 })
    }

    pub fn threshold(&self) -> u64 {
        self.y0
    }

    pub fn action(&self, state: AgeState) -> Action {
        if state.y - state.x >= self.y0 {
            Action::Sample
        } else {
            Action::Idle
        }
    }

    /// Membership in the recurrent set
    /// `{(0, y) : y >= 1} ∪ {(x, y) : x >= 1, y - x < Y0}`.
    pub fn is_feasible(&self, state: AgeState) -> bool {
        state.x == 0 || state.y - state.x < self.y0
    }
}
