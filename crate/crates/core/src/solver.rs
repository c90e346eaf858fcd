//! Numerical solution of the sampling MDP on a truncated `(x, y)` grid.
//!
//! Ages saturate at the grid caps: a successor `(x + 1, y + 1)` past the
//! edge is mapped to `(min(x + 1, x_max), min(y + 1, y_max))`. The cap
//! distorts values near the edge, so the structural checks and threshold
//! extraction only look at the interior (the lower 90% of each axis).
//!
//! Both solvers apply full Jacobi sweeps: every entry of iterate `n + 1` is
//! computed from iterate `n`.

use crate::analytic;
use crate::error::{Error, Result};
use crate::model::{Action, AgeState, ModelParams};

/// Relative slack under which sampling is preferred to idling.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Slack used by the structural verifiers.
pub const VERIFY_EPSILON: f64 = 1e-9;

/// Default cap on iterations for both solvers.
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;

/// Tail mass of the write-free run that the automatic grid must cover.
const GRID_TAIL_MASS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    x_max: u64,
    y_max: u64,
}

impl GridSpec {
    pub fn new(x_max: u64, y_max: u64) -> Result<Self> {
        if x_max < 1 || x_max > y_max {
            return Err(Error::InvalidGrid(format!(
                "need 1 <= x_max <= y_max, got x_max={x_max} y_max={y_max}"
            )));
        }
        Ok(Self { x_max, y_max })
    }

    /// Grid sized for `params`: `y_max = x_max` is the largest of
    /// `8 * max(ceil(Y'), 1)`, 64, and `Y0* + n` where a run of `n` slots
    /// without a write has probability below `1e-8`.
    pub fn for_params(params: &ModelParams) -> Self {
        let report = analytic::optimal_threshold(params);
        let by_threshold = 8 * (report.y_prime.ceil() as u64).max(1);
        let q = params.q();
        let by_tail = if q > 0.0 {
            report.y0_star + (GRID_TAIL_MASS.ln() / q.ln()).ceil() as u64
        } else {
            0
        };
        let cap = by_threshold.max(64).max(by_tail);
        Self {
            x_max: cap,
            y_max: cap,
        }
    }

    /// Explicit caps, rejected when `y_max < 8 * max(Y0*, 1)`.
    pub fn checked(params: &ModelParams, x_max: u64, y_max: u64) -> Result<Self> {
        let grid = Self::new(x_max, y_max)?;
        let needed = 8 * analytic::optimal_threshold(params).y0_star.max(1);
        if y_max < needed {
            return Err(Error::InvalidGrid(format!(
                "y_max={y_max} is below 8 * Y0* = {needed}"
            )));
        }
        Ok(grid)
    }

    pub fn x_max(&self) -> u64 {
        self.x_max
    }

    pub fn y_max(&self) -> u64 {
        self.y_max
    }

    /// Largest `x` treated as interior.
    pub fn interior_x(&self) -> u64 {
        self.x_max * 9 / 10
    }

    /// Largest `y` treated as interior.
    pub fn interior_y(&self) -> u64 {
        self.y_max * 9 / 10
    }

    pub fn contains(&self, x: u64, y: u64) -> bool {
        y >= 1 && x <= y && x <= self.x_max && y <= self.y_max
    }

    fn is_interior(&self, x: u64, y: u64) -> bool {
        self.contains(x, y) && x <= self.interior_x() && y <= self.interior_y()
    }

    fn len(&self) -> usize {
        ((self.x_max + 1) * (self.y_max + 1)) as usize
    }

    fn index(&self, x: u64, y: u64) -> usize {
        debug_assert!(self.contains(x, y), "({x}, {y}) outside grid");
        (x * (self.y_max + 1) + y) as usize
    }

    /// All grid states, row by row in `x`.
    pub fn states(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        (0..=self.x_max).flat_map(move |x| (x.max(1)..=self.y_max).map(move |y| (x, y)))
    }

    pub fn state_count(&self) -> usize {
        self.states().count()
    }
}

/// Real value per grid state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    grid: GridSpec,
    data: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(u64, u64) -> f64) -> Self {
        let mut table = Self::zeros(grid);
        for (x, y) in grid.states() {
            table.data[grid.index(x, y)] = f(x, y);
        }
        table
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// # Panics
    /// If `(x, y)` is not a grid state.
    pub fn get(&self, x: u64, y: u64) -> f64 {
        assert!(self.grid.contains(x, y), "({x}, {y}) outside grid");
        self.data[self.grid.index(x, y)]
    }

    pub fn value(&self, state: AgeState) -> Option<f64> {
        self.grid
            .contains(state.x(), state.y())
            .then(|| self.data[self.grid.index(state.x(), state.y())])
    }

    pub fn set(&mut self, x: u64, y: u64, v: f64) {
        assert!(self.grid.contains(x, y), "({x}, {y}) outside grid");
        let i = self.grid.index(x, y);
        self.data[i] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.grid.states().all(|(x, y)| self.get(x, y).is_finite())
    }

    /// Pointwise `self <= other + slack` over all grid states.
    pub fn dominated_by(&self, other: &ValueTable, slack: f64) -> bool {
        self.grid
            .states()
            .all(|(x, y)| self.get(x, y) <= other.get(x, y) + slack)
    }
}

/// Action per grid state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    grid: GridSpec,
    actions: Vec<Action>,
}

impl PolicyTable {
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(u64, u64) -> Action) -> Self {
        let mut actions = vec![Action::Idle; grid.len()];
        for (x, y) in grid.states() {
            actions[grid.index(x, y)] = f(x, y);
        }
        Self { grid, actions }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// # Panics
    /// If `(x, y)` is not a grid state.
    pub fn get(&self, x: u64, y: u64) -> Action {
        assert!(self.grid.contains(x, y), "({x}, {y}) outside grid");
        self.actions[self.grid.index(x, y)]
    }

    /// Action with ages clamped to the grid caps.
    pub fn action_saturating(&self, state: AgeState) -> Action {
        let y = state.y().min(self.grid.y_max);
        let x = state.x().min(self.grid.x_max).min(y);
        self.get(x, y)
    }

    pub fn set(&mut self, x: u64, y: u64, a: Action) {
        assert!(self.grid.contains(x, y), "({x}, {y}) outside grid");
        let i = self.grid.index(x, y);
        self.actions[i] = a;
    }
}

/// The two branches of the Bellman operator at one state.
#[derive(Debug, Clone, Copy)]
struct Branches {
    idle: f64,
    sample: f64,
}

impl Branches {
    fn best(self) -> f64 {
        self.idle.min(self.sample)
    }

    fn greedy(self) -> Action {
        if self.sample <= self.idle + TIE_TOLERANCE * self.idle.abs().max(1.0) {
            Action::Sample
        } else {
            Action::Idle
        }
    }
}

/// Operator `y + c a + alpha * E[h(next)]` on the saturated grid.
#[derive(Debug, Clone, Copy)]
struct Operator {
    grid: GridSpec,
    p: f64,
    q: f64,
    c: f64,
    alpha: f64,
}

impl Operator {
    fn new(params: &ModelParams, grid: GridSpec, alpha: f64) -> Self {
        Self {
            grid,
            p: params.p(),
            q: params.q(),
            c: params.c(),
            alpha,
        }
    }

    #[inline]
    fn branches(&self, h: &[f64], x: u64, y: u64) -> Branches {
        let g = &self.grid;
        let xn = (x + 1).min(g.x_max);
        let yn = (y + 1).min(g.y_max);
        let xs = (x + 1).min(g.y_max);
        let yf = y as f64;
        let idle = yf + self.alpha * (self.p * h[g.index(0, yn)] + self.q * h[g.index(xn, yn)]);
        let sample =
            yf + self.c + self.alpha * (self.p * h[g.index(0, xs)] + self.q * h[g.index(xn, xs)]);
        Branches { idle, sample }
    }

    fn sweep(&self, src: &[f64], dst: &mut [f64]) {
        let g = &self.grid;
        for x in 0..=g.x_max {
            for y in x.max(1)..=g.y_max {
                dst[g.index(x, y)] = self.branches(src, x, y).best();
            }
        }
    }

    fn greedy(&self, h: &[f64]) -> PolicyTable {
        PolicyTable::from_fn(self.grid, |x, y| self.branches(h, x, y).greedy())
    }
}

/// Stepwise discounted value iteration starting from `v_0 = 0`.
#[derive(Debug, Clone)]
pub struct DiscountedIteration {
    op: Operator,
    values: ValueTable,
    scratch: Vec<f64>,
    iterations: usize,
}

impl DiscountedIteration {
    pub fn new(params: &ModelParams, grid: GridSpec, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidDiscount(alpha));
        }
        Ok(Self {
            op: Operator::new(params, grid, alpha),
            values: ValueTable::zeros(grid),
            scratch: vec![0.0; grid.len()],
            iterations: 0,
        })
    }

    /// Applies one sweep and returns the sup-norm of the change.
    pub fn step(&mut self) -> f64 {
        self.op.sweep(&self.values.data, &mut self.scratch);
        std::mem::swap(&mut self.values.data, &mut self.scratch);
        self.iterations += 1;
        let (new, old) = (&self.values.data, &self.scratch);
        self.op
            .grid
            .states()
            .map(|(x, y)| {
                let i = self.op.grid.index(x, y);
                (new[i] - old[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn values(&self) -> &ValueTable {
        &self.values
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn greedy_policy(&self) -> PolicyTable {
        self.op.greedy(&self.values.data)
    }
}

#[derive(Debug, Clone)]
pub struct DiscountedSolution {
    pub alpha: f64,
    pub values: ValueTable,
    pub policy: PolicyTable,
    pub iterations: usize,
    pub final_delta: f64,
    pub converged: bool,
}

/// Value iteration for the `alpha`-discounted problem. Stops once successive
/// iterates differ by at most `tol (1 - alpha) / (2 alpha)` in sup norm; the
/// greedy policy breaks ties toward sampling.
pub fn discounted_value_iteration(
    params: &ModelParams,
    grid: GridSpec,
    alpha: f64,
    tol: f64,
    max_iters: usize,
) -> Result<DiscountedSolution> {
    check_tol(tol)?;
    let mut it = DiscountedIteration::new(params, grid, alpha)?;
    let stop = tol * (1.0 - alpha) / (2.0 * alpha);
    let mut delta = f64::INFINITY;
    let mut converged = false;
    while it.iterations() < max_iters {
        delta = it.step();
        if delta <= stop {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("discounted value iteration (alpha={alpha}) stopped at {max_iters} iterations with delta {delta:e}");
    }
    Ok(DiscountedSolution {
        alpha,
        policy: it.greedy_policy(),
        values: it.values,
        iterations: it.iterations,
        final_delta: delta,
        converged,
    })
}

fn check_tol(tol: f64) -> Result<()> {
    if tol.is_finite() && tol > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTolerance(tol))
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Average cost estimate.
    pub g: f64,
    /// Relative costs with `f(0, 1) = 0`.
    pub f: ValueTable,
    pub policy: PolicyTable,
    pub iterations: usize,
    pub span_at_stop: f64,
    pub converged: bool,
}

/// Relative value iteration referenced at `(0, 1)`:
/// `h_{n+1} = T h_n - (T h_n)(0, 1)`, stopping when the span of
/// `h_{n+1} - h_n` is at most `tol`.
pub fn relative_value_iteration(
    params: &ModelParams,
    grid: GridSpec,
    tol: f64,
    max_iters: usize,
) -> Result<SolveResult> {
    check_tol(tol)?;
    let op = Operator::new(params, grid, 1.0);
    let reference = grid.index(0, 1);
    let mut h = vec![0.0; grid.len()];
    let mut next = vec![0.0; grid.len()];
    let mut g = 0.0;
    let mut span = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        op.sweep(&h, &mut next);
        g = next[reference];
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in grid.states() {
            let i = grid.index(x, y);
            next[i] -= g;
            let d = next[i] - h[i];
            lo = lo.min(d);
            hi = hi.max(d);
        }
        std::mem::swap(&mut h, &mut next);
        iterations += 1;
        span = hi - lo;
        if span <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("relative value iteration stopped at {max_iters} iterations with span {span:e}");
    }
    Ok(SolveResult {
        g,
        policy: op.greedy(&h),
        f: ValueTable { grid, data: h },
        iterations,
        span_at_stop: span,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractedThreshold {
    Threshold(u64),
    NotThreshold,
}

/// Reads the threshold off the `x = 0` row: idle strictly below some `Y0`,
/// sample from `Y0` up to the interior limit.
pub fn extract_threshold(policy: &PolicyTable) -> ExtractedThreshold {
    let top = policy.grid().interior_y();
    let row: Vec<Action> = (1..=top).map(|y| policy.get(0, y)).collect();
    let Some(first) = row.iter().position(|&a| a == Action::Sample) else {
        return ExtractedThreshold::NotThreshold;
    };
    if row[first..].iter().all(|&a| a == Action::Sample) {
        ExtractedThreshold::Threshold(first as u64 + 1)
    } else {
        ExtractedThreshold::NotThreshold
    }
}

/// Outcome of a structural check.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StructureReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest violation magnitude (0 for policy checks).
    pub worst: f64,
    pub first_violation: Option<(u64, u64)>,
}

impl StructureReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn record(&mut self, ok: bool, at: (u64, u64), magnitude: f64) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
            self.worst = self.worst.max(magnitude);
            self.first_violation.get_or_insert(at);
        }
    }
}

fn interior_states(grid: GridSpec) -> impl Iterator<Item = (u64, u64)> {
    (0..=grid.interior_x()).flat_map(move |x| (x.max(1)..=grid.interior_y()).map(move |y| (x, y)))
}

/// Non-decreasing in `x` and in `y` on the interior.
pub fn verify_monotone(v: &ValueTable) -> StructureReport {
    let grid = v.grid();
    let mut report = StructureReport::default();
    for (x, y) in interior_states(grid) {
        let here = v.get(x, y);
        if grid.is_interior(x + 1, y) {
            let d = v.get(x + 1, y) - here;
            report.record(d >= -VERIFY_EPSILON, (x, y), -d);
        }
        if grid.is_interior(x, y + 1) {
            let d = v.get(x, y + 1) - here;
            report.record(d >= -VERIFY_EPSILON, (x, y), -d);
        }
    }
    report
}

/// Once a row samples at `y` it samples at every larger interior `y`.
pub fn verify_threshold_in_y(policy: &PolicyTable) -> StructureReport {
    let grid = policy.grid();
    let mut report = StructureReport::default();
    for (x, y) in interior_states(grid) {
        if grid.is_interior(x, y + 1) {
            let broken = policy.get(x, y) == Action::Sample && policy.get(x, y + 1) == Action::Idle;
            report.record(!broken, (x, y), 0.0);
        }
    }
    report
}

/// Increments in `y` are non-increasing: `V(x,y+1) - V(x,y) >= V(x,y+2) - V(x,y+1)`.
pub fn verify_concavity_in_y(v: &ValueTable) -> StructureReport {
    let grid = v.grid();
    let mut report = StructureReport::default();
    for (x, y) in interior_states(grid) {
        if grid.is_interior(x, y + 2) {
            let first = v.get(x, y + 1) - v.get(x, y);
            let second = v.get(x, y + 2) - v.get(x, y + 1);
            report.record(first >= second - VERIFY_EPSILON, (x, y), second - first);
        }
    }
    report
}

/// Idling at `(x, y)` implies idling at every interior `(x + i, y + i)`.
pub fn verify_diagonal_idle(policy: &PolicyTable) -> StructureReport {
    let grid = policy.grid();
    let mut report = StructureReport::default();
    for (x, y) in interior_states(grid) {
        if policy.get(x, y) != Action::Idle {
            continue;
        }
        let mut i = 1;
        while grid.is_interior(x + i, y + i) {
            let ok = policy.get(x + i, y + i) == Action::Idle;
            report.record(ok, (x, y), 0.0);
            i += 1;
        }
    }
    report
}

/// `(1 - alpha) V_alpha(0, 1)` for one discount factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountPoint {
    pub alpha: f64,
    pub scaled_value: f64,
    pub gap: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VanishingDiscountReport {
    /// Average cost from relative value iteration on the same grid.
    pub g: f64,
    pub points: Vec<DiscountPoint>,
}

impl VanishingDiscountReport {
    pub fn gaps_strictly_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].gap < w[0].gap)
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.points.last().map(|pt| pt.gap)
    }
}

/// Value-iteration tolerance used inside [`vanishing_discount_check`].
const VANISHING_TOL: f64 = 1e-4;

/// Compares `(1 - alpha) V_alpha(0, 1)` against the relative value
/// iteration average cost for each `alpha`.
pub fn vanishing_discount_check(
    params: &ModelParams,
    grid: GridSpec,
    alphas: &[f64],
) -> Result<VanishingDiscountReport> {
    let g = relative_value_iteration(params, grid, 1e-9, DEFAULT_MAX_ITERS)?.g;
    let points = alphas
        .iter()
        .map(|&alpha| {
            let sol =
                discounted_value_iteration(params, grid, alpha, VANISHING_TOL, DEFAULT_MAX_ITERS)?;
            let scaled_value = (1.0 - alpha) * sol.values.get(0, 1);
            Ok(DiscountPoint {
                alpha,
                scaled_value,
                gap: (scaled_value - g).abs(),
                converged: sol.converged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VanishingDiscountReport { g, points })
}
