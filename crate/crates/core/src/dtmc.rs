//! The slot-start Markov chain over `(queue length, phase, action)`.
//!
//! Every transition is composed from three independent factors: the phase
//! kernel across the slot, the Poisson arrival mass that moves the queue to
//! its destination length, and the action law sensed at the destination slot
//! start. A serve slot that starts OFF is split into a success branch (the
//! OFF period covers the whole slot and one packet leaves at slot end) and an
//! interrupted branch.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::model::{
    decision_distribution, poisson_pmf, poisson_tail, Action, Phase, SlotTransitionKernel,
    SystemParams,
};

/// One slot-start state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    pub queue: usize,
    pub phase: Phase,
    pub action: Action,
}

impl State {
    pub fn new(queue: usize, phase: Phase, action: Action) -> Self {
        State { queue, phase, action }
    }

    /// Serving an empty queue is not a state.
    pub fn is_valid(&self, capacity: usize) -> bool {
        self.queue <= capacity && !(self.queue == 0 && self.action == Action::Serve)
    }
}

impl std::fmt::Display for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.queue, self.phase.index(), self.action.index())
    }
}

/// Dense index map over the `6K + 4` valid states.
///
/// Ordering: the four empty-queue states `(0,0,0), (0,0,2), (0,1,0), (0,1,2)`
/// first, then one block of six per queue length `i >= 1` in phase-major,
/// action-minor order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    capacity: usize,
}

impl StateSpace {
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        6 * self.capacity + 4
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, s: State) -> Option<usize> {
        if !s.is_valid(self.capacity) {
            return None;
        }
        let (p, a) = (s.phase.index(), s.action.index());
        Some(if s.queue == 0 {
            2 * p + a / 2
        } else {
            4 + 6 * (s.queue - 1) + 3 * p + a
        })
    }

    pub fn state(&self, idx: usize) -> Option<State> {
        if idx >= self.len() {
            return None;
        }
        let (queue, p, a) = if idx < 4 {
            (0, idx / 2, 2 * (idx % 2))
        } else {
            let r = idx - 4;
            (r / 6 + 1, (r % 6) / 3, r % 3)
        };
        Some(State::new(queue, Phase::ALL[p], Action::ALL[a]))
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(|i| self.state(i).expect("index in range"))
    }
}

pub fn enumerate_states(capacity: usize) -> Result<StateSpace> {
    if capacity < 1 {
        return Err(invalid("buffer capacity K must be at least 1"));
    }
    Ok(StateSpace { capacity })
}

/// How a serve slot that starts OFF resolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ServiceRule {
    /// The packet leaves only if the OFF period covers the whole slot; a
    /// mid-slot ON onset collides with the transmission.
    #[default]
    Overlapping,
    /// Mid-slot phase changes are ignored: the packet leaves whenever the
    /// slot also ends OFF.
    Synchronized,
}

impl ServiceRule {
    /// Probability that a serve slot starting OFF ends OFF with the packet cleared.
    pub fn success_weight(self, kernel: &SlotTransitionKernel) -> f64 {
        match self {
            ServiceRule::Overlapping => kernel.off_persist,
            ServiceRule::Synchronized => kernel.a00,
        }
    }
}

/// Dense row-stochastic matrix, row-major. Matrices built from the model
/// carry their [`StateSpace`]; generic ones are plain square matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    dim: usize,
    space: Option<StateSpace>,
    data: Vec<f64>,
}

impl TransitionMatrix {
    /// Wraps a row-major square matrix, checking row-stochasticity.
    pub fn from_rows(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() != dim * dim {
            return Err(invalid(format!("expected {dim}x{dim} entries, got {}", data.len())));
        }
        let m = TransitionMatrix { dim, space: None, data };
        m.check_stochastic()?;
        Ok(m)
    }

    pub fn space(&self) -> Option<&StateSpace> {
        self.space.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.dim() + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        let n = self.dim();
        &self.data[from * n..(from + 1) * n]
    }

    pub fn max_row_error(&self) -> f64 {
        (0..self.dim())
            .map(|r| (self.row(r).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_stochastic(&self) -> Result<()> {
        if let Some(v) = self.data.iter().find(|v| !(**v >= -1e-12 && **v <= 1.0 + 1e-12)) {
            return Err(invalid(format!("transition entry {v} is not a probability")));
        }
        let err = self.max_row_error();
        if err > 1e-10 {
            return Err(invalid(format!("row sums deviate from 1 by {err:e}")));
        }
        Ok(())
    }
}

pub fn build_transition_matrix(params: &SystemParams) -> Result<TransitionMatrix> {
    build_transition_matrix_with(params, ServiceRule::Overlapping)
}

pub fn build_transition_matrix_with(
    params: &SystemParams,
    rule: ServiceRule,
) -> Result<TransitionMatrix> {
    params.validate()?;
    let space = enumerate_states(params.traffic.capacity)?;
    let kernel = params.kernel()?;
    let capacity = params.traffic.capacity;
    let mean = params.traffic.arrivals_per_slot();
    let n = space.len();

    // Mass that takes a queue of `from` packets (after any departure is
    // accounted for by `cleared`) to `to` packets at the next slot start.
    // Arrivals beyond the buffer are dropped; a departure happens at slot end.
    let arrival_mass = |from: usize, to: usize, cleared: bool| -> f64 {
        let top = if cleared { capacity - 1 } else { capacity };
        if to > top {
            return 0.0;
        }
        let needed = to as i64 - from as i64 + i64::from(cleared);
        if to == top {
            poisson_tail(mean, needed)
        } else {
            poisson_pmf(mean, needed)
        }
    };

    let mut data = vec![0.0; n * n];
    for (row, src) in space.states().enumerate() {
        let out = &mut data[row * n..(row + 1) * n];
        for end_phase in Phase::ALL {
            // (weight, packet cleared) branches of the phase transition.
            let phase_weight = kernel.prob(src.phase, end_phase);
            let branches: [(f64, bool); 2] =
                if src.action == Action::Serve && src.phase == Phase::Off && end_phase == Phase::Off {
                    let success = rule.success_weight(&kernel);
                    [(success, true), (phase_weight - success, false)]
                } else {
                    [(phase_weight, false), (0.0, false)]
                };
            for (weight, cleared) in branches {
                if weight == 0.0 {
                    continue;
                }
                for to in 0..=capacity {
                    let mass = arrival_mass(src.queue, to, cleared);
                    if mass == 0.0 {
                        continue;
                    }
                    let decision =
                        decision_distribution(end_phase, &params.sensing, &params.policy, to == 0);
                    for action in Action::ALL {
                        let p = decision.prob(action);
                        if p == 0.0 {
                            continue;
                        }
                        let col = space
                            .index(State::new(to, end_phase, action))
                            .expect("decision never serves an empty queue");
                        out[col] += weight * mass * p;
                    }
                }
            }
        }
    }
    let m = TransitionMatrix { dim: n, space: Some(space), data };
    m.check_stochastic()?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    space: Option<StateSpace>,
    probs: Vec<f64>,
    residual: f64,
}

impl StationaryDistribution {
    pub fn space(&self) -> Option<&StateSpace> {
        self.space.as_ref()
    }

    fn states(&self) -> &StateSpace {
        self.space.as_ref().expect("distribution is not indexed by model states")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `max |(mu P - mu)_j|` at the returned vector.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    /// Mass of a state; zero for invalid triples.
    pub fn prob(&self, s: State) -> f64 {
        self.states().index(s).map_or(0.0, |i| self.probs[i])
    }

    /// Marginal law of the slot-start queue length.
    pub fn queue_marginal(&self) -> Vec<f64> {
        let space = self.states();
        let mut out = vec![0.0; space.capacity() + 1];
        for (s, p) in space.states().zip(&self.probs) {
            out[s.queue] += p;
        }
        out
    }

    /// Long-run fraction of slot starts in the given phase.
    pub fn phase_marginal(&self, phase: Phase) -> f64 {
        self.states()
            .states()
            .zip(&self.probs)
            .filter(|(s, _)| s.phase == phase)
            .map(|(_, p)| p)
            .sum()
    }

    /// Long-run fraction of slot starts with the given action.
    pub fn action_marginal(&self, action: Action) -> f64 {
        self.states()
            .states()
            .zip(&self.probs)
            .filter(|(s, _)| s.action == action)
            .map(|(_, p)| p)
            .sum()
    }
}

const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 1_000_000;
const RESIDUAL_TOL: f64 = 1e-10;

/// Solves `mu P = mu`, `sum(mu) = 1`.
///
/// The direct route replaces the last balance equation with normalization and
/// LU-solves the dense system. When that system is singular or yields an
/// unusable vector, a lazy power iteration `mu <- mu (P + I) / 2` takes over.
pub fn stationary_distribution(matrix: &TransitionMatrix) -> Result<StationaryDistribution> {
    matrix.check_stochastic()?;
    let n = matrix.dim();
    let direct = solve_direct(matrix).and_then(|v| accept(matrix, v));
    let (probs, residual) = match direct {
        Some(found) => found,
        None => {
            log::debug!("direct stationary solve rejected; falling back to power iteration");
            power_iteration(matrix)?
        }
    };
    debug_assert_eq!(probs.len(), n);
    Ok(StationaryDistribution { space: matrix.space.clone(), probs, residual })
}

fn solve_direct(matrix: &TransitionMatrix) -> Option<Vec<f64>> {
    let n = matrix.dim();
    // Row j of A is the balance equation sum_i mu_i P_ij - mu_j = 0.
    let mut a = DMatrix::from_fn(n, n, |j, i| matrix.get(i, j) - if i == j { 1.0 } else { 0.0 });
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(x.iter().copied().collect())
}

/// Clamps round-off negatives, renormalizes and checks the residual.
fn accept(matrix: &TransitionMatrix, mut v: Vec<f64>) -> Option<(Vec<f64>, f64)> {
    if v.iter().any(|x| *x < -1e-10) {
        return None;
    }
    for x in &mut v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= total);
    let r = residual(matrix, &v);
    (r <= RESIDUAL_TOL).then_some((v, r))
}

fn apply(matrix: &TransitionMatrix, v: &[f64]) -> Vec<f64> {
    let n = matrix.dim();
    let mut out = vec![0.0; n];
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, p) in out.iter_mut().zip(matrix.row(i)) {
            *o += vi * p;
        }
    }
    out
}

fn residual(matrix: &TransitionMatrix, v: &[f64]) -> f64 {
    apply(matrix, v)
        .iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

fn power_iteration(matrix: &TransitionMatrix) -> Result<(Vec<f64>, f64)> {
    let n = matrix.dim();
    let mut v = vec![1.0 / n as f64; n];
    let mut step = f64::INFINITY;
    for _ in 0..POWER_MAX_ITER {
        let next: Vec<f64> = apply(matrix, &v)
            .iter()
            .zip(&v)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        step = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if step < POWER_TOL {
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
            let r = residual(matrix, &v);
            if r <= RESIDUAL_TOL {
                return Ok((v, r));
            }
            return Err(Error::NoConvergence { residual: r });
        }
    }
    Err(Error::NoConvergence { residual: step.max(residual(matrix, &v)) })
}
