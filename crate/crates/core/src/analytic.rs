//! Closed-form results for threshold policies.
//!
//! Under a threshold policy with threshold `Y0` the long-run average cost is
//!
//! ```text
//! g0(Y0) = ( 1/p + Y0 + (2cp + q/p) / (pY0 + q) ) / 2,     q = 1 - p
//! ```
//!
//! and the optimal integer threshold is the ceiling of the positive root
//! `Y'` of `Q(y) = y^2 + (2/p - 1) y - 2c`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{AgeState, ModelParams, ThresholdPolicy};

/// Average cost of the threshold policy with threshold `y0`.
pub fn g0(y0: u64, params: &ModelParams) -> Result<f64> {
    if y0 == 0 {
        return Err(Error::InvalidThreshold { got: y0, min: 1 });
    }
    Ok(g0_continuous(y0 as f64, params))
}

/// `g0` evaluated at a real threshold. Defined for `y > -q/p`.
pub fn g0_continuous(y: f64, params: &ModelParams) -> f64 {
    let p = params.p();
    let q = params.q();
    let c = params.c();
    let numerator = 2.0 * c * p + q / p;
    // p = 1, c = 0: the last term vanishes identically, including its y -> 0 limit.
    let tail = if numerator == 0.0 {
        0.0
    } else {
        numerator / (p * y + q)
    };
    0.5 * (1.0 / p + y + tail)
}

/// `Q(y) = y^2 + (2/p - 1) y - 2c`. `g0(y) - g0(y + 1)` has the opposite sign.
pub fn threshold_polynomial(y: f64, params: &ModelParams) -> f64 {
    y * y + (2.0 / params.p() - 1.0) * y - 2.0 * params.c()
}

/// The positive root `Y'` of [`threshold_polynomial`] (zero when `c = 0`).
pub fn threshold_root(params: &ModelParams) -> f64 {
    let a = 1.0 / params.p() - 0.5;
    (2.0 * params.c() + a * a).sqrt() - a
}

/// Minimizer of [`g0_continuous`] over the positive reals.
pub fn continuous_minimizer(params: &ModelParams) -> f64 {
    let p = params.p();
    let q = params.q();
    (2.0 * params.c() + q / (p * p)).sqrt() - q / p
}

/// `1/2 + sqrt(2c + 1/p^2 - 1/p)`, a lower bound on the optimal average cost.
pub fn lower_bound(params: &ModelParams) -> f64 {
    let p = params.p();
    let radicand = 2.0 * params.c() + 1.0 / (p * p) - 1.0 / p;
    0.5 + radicand.max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormReport {
    pub y0_star: u64,
    pub y_prime: f64,
    pub g_star: f64,
    pub lower_bound: f64,
    pub y0_tilde: f64,
    /// `Q(Y0*) = 0`: threshold `Y0* + 1` attains the same cost.
    pub tie: bool,
}

/// Optimal threshold `max(ceil(Y'), 1)` together with its cost and bound.
pub fn optimal_threshold(params: &ModelParams) -> ClosedFormReport {
    let y_prime = threshold_root(params);
    let y0_star = smallest_nonnegative_q(y_prime, params);
    let k = y0_star as f64;
    let tie = threshold_polynomial(k, params).abs() <= q_tolerance(k, params);
    ClosedFormReport {
        y0_star,
        y_prime,
        g_star: g0_continuous(k, params),
        lower_bound: lower_bound(params),
        y0_tilde: continuous_minimizer(params),
        tie,
    }
}

fn q_tolerance(y: f64, params: &ModelParams) -> f64 {
    1e-12 * (y * y + (2.0 / params.p()) * y + 2.0 * params.c() + 1.0)
}

/// Least integer `k >= 1` with `Q(k) >= 0`, seeded from `ceil(Y')` and
/// corrected against rounding in the square root.
fn smallest_nonnegative_q(y_prime: f64, params: &ModelParams) -> u64 {
    let mut k = (y_prime.ceil() as u64).max(1);
    let nonneg = |k: u64| {
        let kf = k as f64;
        threshold_polynomial(kf, params) >= -q_tolerance(kf, params)
    };
    while k > 1 && nonneg(k - 1) {
        k -= 1;
    }
    while !nonneg(k) {
        k += 1;
    }
    k
}

/// Relative cost function `f` of the threshold policy with threshold `Y0 > 1`,
/// normalized so that `f(0, 1) = 0`.
///
/// On the recurrent set `S*` the values follow the closed forms
/// - `f(x, y) = f(0, y)` for `y < Y0`, with
///   `f(0, Y0 - k) = (k - 1)(Y0 - g) - k(k + 1)/2 + 1 + f(0, Y0 - 1)` and
///   `f(x, Y0 - 1) = (J0 + q/p)/p - 1`, `J0 = Y0 - g + p f(0, Y0)`;
/// - `f(0, y) = y - g + c` for `y >= Y0`;
/// - off the axis with `y >= Y0` the policy idles along the diagonal until the
///   next write, giving `f(x, y) = (1 + p)(y/p + q/p^2) + (p(c - g + 1) - g)/p`.
///
/// Off `S*` the threshold policy samples, so
/// `f(x, y) = y + c - g + p f(0, x + 1) + q f(x + 1, x + 1)`.
#[derive(Debug, Clone)]
pub struct RelativeCostProfile {
    params: ModelParams,
    policy: ThresholdPolicy,
    g: f64,
    j0: f64,
    extent: u64,
    stored: HashMap<AgeState, f64>,
}

/// Builds the profile and stores `f` on `S*` for `y <= extent`.
pub fn relative_cost_profile(
    params: &ModelParams,
    y0: u64,
    extent: u64,
) -> Result<RelativeCostProfile> {
    if y0 <= 1 {
        return Err(Error::InvalidThreshold { got: y0, min: 2 });
    }
    let policy = ThresholdPolicy::new(y0)?;
    let g = g0(y0, params)?;
    let f_y0 = y0 as f64 - g + params.c();
    let j0 = y0 as f64 - g + params.p() * f_y0;
    let mut profile = RelativeCostProfile {
        params: *params,
        policy,
        g,
        j0,
        extent,
        stored: HashMap::new(),
    };
    for y in 1..=extent {
        for x in 0..=y {
            let s = AgeState::new(x, y)?;
            if policy.is_feasible(s) {
                let v = if s == AgeState::REFERENCE {
                    0.0
                } else {
                    profile.closed_form(s)
                };
                profile.stored.insert(s, v);
            }
        }
    }
    Ok(profile)
}

impl RelativeCostProfile {
    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn j0(&self) -> f64 {
        self.j0
    }

    pub fn threshold(&self) -> u64 {
        self.policy.threshold()
    }

    pub fn extent(&self) -> u64 {
        self.extent
    }

    pub fn stored(&self) -> &HashMap<AgeState, f64> {
        &self.stored
    }

    /// `f` at an arbitrary state: stored value if present, otherwise the
    /// exact expression for that state.
    pub fn value(&self, state: AgeState) -> f64 {
        match self.stored.get(&state) {
            Some(&v) => v,
            None => self.closed_form(state),
        }
    }

    /// `f` at raw coordinates; fails when `(x, y)` is not a state.
    pub fn value_at(&self, x: u64, y: u64) -> Result<f64> {
        let s = AgeState::new(x, y).map_err(|_| Error::MissingValue { x, y })?;
        Ok(self.value(s))
    }

    /// Adds `delta` to a stored entry. Used to plant defects.
    pub fn perturb(&mut self, state: AgeState, delta: f64) -> Result<()> {
        match self.stored.get_mut(&state) {
            Some(v) => {
                *v += delta;
                Ok(())
            }
            None => Err(Error::MissingValue {
                x: state.x(),
                y: state.y(),
            }),
        }
    }

    fn axis_below_threshold(&self, y: u64) -> f64 {
        let p = self.params.p();
        let q = self.params.q();
        let y0 = self.policy.threshold() as f64;
        let f_below = (self.j0 + q / p) / p - 1.0;
        let k = y0 - y as f64;
        (k - 1.0) * (y0 - self.g) - k * (k + 1.0) / 2.0 + 1.0 + f_below
    }

    fn closed_form(&self, s: AgeState) -> f64 {
        let p = self.params.p();
        let q = self.params.q();
        let c = self.params.c();
        let g = self.g;
        let y0 = self.policy.threshold();
        let y = s.y() as f64;
        if !self.policy.is_feasible(s) {
            let xn = s.x() + 1;
            let fresh = self.value(AgeState::new(0, xn).expect("x + 1 >= 1"));
            let diag = self.value(AgeState::new(xn, xn).expect("diagonal state"));
            return y + c - g + p * fresh + q * diag;
        }
        if s.y() < y0 {
            self.axis_below_threshold(s.y())
        } else if s.x() == 0 {
            y - g + c
        } else {
            (1.0 + p) * (y / p + q / (p * p)) + (p * (c - g + 1.0) - g) / p
        }
    }

    /// `g + f(s) - min{idle, sample}` from the relative cost Bellman equation.
    /// Only defined on the recurrent set of the threshold policy.
    pub fn bellman_residual(&self, state: AgeState) -> Result<f64> {
        if !self.policy.is_feasible(state) {
            return Err(Error::Infeasible {
                x: state.x(),
                y: state.y(),
                y0: self.policy.threshold(),
            });
        }
        let p = self.params.p();
        let q = self.params.q();
        let (x, y) = (state.x(), state.y());
        let at = |x: u64, y: u64| self.value_at(x, y);
        let idle = y as f64 + p * at(0, y + 1)? + q * at(x + 1, y + 1)?;
        let sample = y as f64 + self.params.c() + p * at(0, x + 1)? + q * at(x + 1, x + 1)?;
        Ok(self.g + self.value(state) - idle.min(sample))
    }
}

/// Expected cost accumulated under the always-sample policy from `state`
/// until the chain first enters `(0, 1)` (at least one slot is taken, so
/// from `(0, 1)` itself this is the return cost).
///
/// With `N ~ Geometric(p)` slots until the next write, the chain moves
/// `(x, y) -> (x+1, x+1) -> ... -> (x+N-1, x+N-1) -> (0, x+N)`, then one more
/// read lands in `(0, 1)` with probability `p` or in `(1, 1)` otherwise:
///
/// ```text
/// C(1,1) = (c + 1)(1 + p)/p^2 + 1/p^3
/// C(x,y) = (c + y) + (c + x)/p + q/p^2 + 1/p + q C(1,1)           x >= 1
/// C(0,y) = (c + y) + q(1 + p)(c + 1)/p + q/p^2 + q^2 C(1,1)
/// ```
///
/// The `x = 0` case differs because a write in the first slot already
/// reaches `(0, 1)`.
pub fn first_passage_exact(state: AgeState, params: &ModelParams) -> f64 {
    let p = params.p();
    let q = params.q();
    let c = params.c();
    let x = state.x() as f64;
    let y = state.y() as f64;
    let from_11 = (c + 1.0) * (1.0 + p) / (p * p) + 1.0 / (p * p * p);
    if state.x() == 0 {
        (c + y) + q * (1.0 + p) * (c + 1.0) / p + q / (p * p) + q * q * from_11
    } else {
        (c + y) + (c + x) / p + q / (p * p) + 1.0 / p + q * from_11
    }
}

/// Upper bound `((1 + p)/p^2)(c + y) + 3/(2p^3)` on the first-passage cost.
pub fn first_passage_bound(state: AgeState, params: &ModelParams) -> f64 {
    let p = params.p();
    (1.0 + p) / (p * p) * (params.c() + state.y() as f64) + 1.5 / (p * p * p)
}
