//! Performance metrics derived from the stationary distribution: carried
//! load, drop probability, waiting time, interference, and the power budget
//! of the beacon.

use serde::Serialize;

use crate::dtmc::{
    build_transition_matrix_with, stationary_distribution, ServiceRule, State,
    StationaryDistribution,
};
use crate::error::{clamp_probability, invalid, Error, Result};
use crate::model::{
    activity_factor, poisson_pmf, poisson_tail, Action, Phase, PolicyModel, PowerModel,
    SlotTransitionKernel, SystemParams, TrafficModel,
};

/// Fraction of slots that complete a packet service.
pub fn carried_load(mu: &StationaryDistribution, kernel: &SlotTransitionKernel) -> f64 {
    carried_load_with(mu, kernel.off_persist)
}

/// Carried load for an arbitrary per-slot success probability of an OFF-start
/// serve slot.
pub fn carried_load_with(mu: &StationaryDistribution, success_weight: f64) -> f64 {
    success_weight * serving_off_mass(mu)
}

fn serving_off_mass(mu: &StationaryDistribution) -> f64 {
    let capacity = mu.space().map_or(0, |s| s.capacity());
    (1..=capacity)
        .map(|i| mu.prob(State::new(i, Phase::Off, Action::Serve)))
        .sum()
}

/// `P_B = 1 - rho_c / rho` with the offered load `rho = n lambda d` in packets
/// per slot.
pub fn packet_drop_probability(rho_c: f64, traffic: &TrafficModel) -> Result<f64> {
    if rho_c < 0.0 {
        return Err(invalid(format!("carried load {rho_c} is negative")));
    }
    let rho = traffic.arrivals_per_slot();
    if rho <= 0.0 {
        return Err(Error::UndefinedLoad);
    }
    let p_b = 1.0 - rho_c / rho;
    if p_b < 0.0 {
        log::warn!("carried load {rho_c} exceeds offered load {rho}; clamping drop probability");
    }
    clamp_probability("drop probability", p_b)
}

/// Which post-departure weights to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaVariant {
    /// `kappa_i = F_off(d) * sum_{j=1}^{i+1} P(j,0,1)`.
    Literal,
    /// Each serving state `j` contributes only through the arrival count
    /// `i - j + 1` that lands it on `i` after the departure.
    ArrivalWeighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepartureDistributions {
    /// Unnormalized post-departure weights, `i in [0, K-1]`.
    pub kappa: Vec<f64>,
    /// Post-departure queue-length law, `i in [0, K-1]`.
    pub delta: Vec<f64>,
    /// Queue length seen by an admitted arrival, `i in [0, K-1]`.
    pub gamma: Vec<f64>,
    /// Queue length seen by any arrival, `i in [0, K]`.
    pub epsilon: Vec<f64>,
}

pub fn departure_distributions(
    mu: &StationaryDistribution,
    kernel: &SlotTransitionKernel,
    traffic: &TrafficModel,
    p_b: f64,
    variant: KappaVariant,
) -> Result<DepartureDistributions> {
    let capacity = traffic.capacity;
    let mean = traffic.arrivals_per_slot();
    let serving = |j: usize| mu.prob(State::new(j, Phase::Off, Action::Serve));
    let kappa: Vec<f64> = (0..capacity)
        .map(|i| {
            let sum: f64 = match variant {
                KappaVariant::Literal => (1..=i + 1).map(serving).sum(),
                KappaVariant::ArrivalWeighted => (1..=i + 1)
                    .map(|j| {
                        let gained = (i + 1 - j) as i64;
                        // Reaching K-1 after a departure absorbs every
                        // overflow count.
                        let mass = if i + 1 == capacity {
                            poisson_tail(mean, gained)
                        } else {
                            poisson_pmf(mean, gained)
                        };
                        serving(j) * mass
                    })
                    .sum(),
            };
            kernel.off_persist * sum
        })
        .collect();
    let total: f64 = kappa.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateDistribution);
    }
    let delta: Vec<f64> = kappa.iter().map(|k| k / total).collect();
    let gamma = delta.clone();
    let p_b = clamp_probability("drop probability", p_b)?;
    let mut epsilon: Vec<f64> = gamma.iter().map(|g| (1.0 - p_b) * g).collect();
    epsilon.push(p_b);
    Ok(DepartureDistributions { kappa, delta, gamma, epsilon })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaitEstimator {
    /// `W = P_B / (n lambda (1 - P_B)) + (1 / n lambda) sum_i delta_i`.
    Literal,
    /// Little's law on the mean slot-start queue length.
    SlotAverage,
}

/// Estimator that tracks the simulated sojourn; see the acceptance suite.
pub const ARBITRATED_ESTIMATOR: WaitEstimator = WaitEstimator::SlotAverage;

/// Post-departure weights that match the simulated queue after a departure.
pub const ARBITRATED_KAPPA: KappaVariant = KappaVariant::ArrivalWeighted;

fn effective_rate(p_b: f64, traffic: &TrafficModel) -> Result<f64> {
    let admitted = 1.0 - p_b;
    let rate = traffic.aggregate_rate() * admitted;
    if !(rate > 0.0) || admitted <= 1e-12 {
        return Err(Error::UndefinedWait);
    }
    Ok(rate)
}

pub fn wait_literal(dd: &DepartureDistributions, p_b: f64, traffic: &TrafficModel) -> Result<f64> {
    effective_rate(p_b, traffic)?;
    let rate = traffic.aggregate_rate();
    let delta_sum: f64 = dd.delta.iter().sum();
    Ok(p_b / (rate * (1.0 - p_b)) + delta_sum / rate)
}

/// Mean slot-start queue length.
pub fn mean_queue_length(mu: &StationaryDistribution) -> f64 {
    mu.queue_marginal()
        .iter()
        .enumerate()
        .map(|(i, p)| i as f64 * p)
        .sum()
}

pub fn wait_slot_average(mu: &StationaryDistribution, p_b: f64, traffic: &TrafficModel) -> Result<f64> {
    Ok(mean_queue_length(mu) / effective_rate(p_b, traffic)?)
}

pub fn waiting_time(
    estimator: WaitEstimator,
    mu: &StationaryDistribution,
    dd: &DepartureDistributions,
    p_b: f64,
    traffic: &TrafficModel,
) -> Result<f64> {
    match estimator {
        WaitEstimator::Literal => wait_literal(dd, p_b, traffic),
        WaitEstimator::SlotAverage => wait_slot_average(mu, p_b, traffic),
    }
}

/// Mass of slot starts where the primary is ON and the access point acts.
pub fn interference_probability(mu: &StationaryDistribution) -> f64 {
    let capacity = mu.space().map_or(0, |s| s.capacity());
    let acting: f64 = (1..=capacity)
        .map(|i| {
            mu.prob(State::new(i, Phase::On, Action::Serve))
                + mu.prob(State::new(i, Phase::On, Action::Charge))
        })
        .sum();
    mu.prob(State::new(0, Phase::On, Action::Charge)) + acting
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerBudget {
    /// Per-node requirement `P_th^i`, W.
    pub per_node: Vec<f64>,
    /// `sum_i P_th^i (r_i / R)^alpha`, unclamped, W.
    pub total: f64,
    /// `min(P_m, total)`.
    pub clamped: f64,
    pub feasible: bool,
}

/// Long-run power the beacon must provide so that charging keeps up with the
/// energy spent on admitted packets.
pub fn required_power(
    power: &PowerModel,
    traffic: &TrafficModel,
    policy: &PolicyModel,
    beta: f64,
    p_b: f64,
) -> Result<PowerBudget> {
    power.validate(traffic.n)?;
    let charge_time = (1.0 - beta) * (1.0 - policy.theta_idle) * policy.xi_charge;
    let per_node_need = if charge_time > 0.0 {
        let dynamic = power.energy_per_packet * traffic.lambda * (1.0 - p_b) / charge_time;
        power.p_charge_min.max(dynamic)
    } else {
        f64::INFINITY
    };
    let per_node = vec![per_node_need; power.node_radii.len()];
    let total: f64 = per_node
        .iter()
        .zip(power.pathloss_factors())
        .map(|(p, g)| p * g)
        .sum();
    Ok(PowerBudget {
        per_node,
        total,
        clamped: total.min(power.p_max),
        feasible: total <= power.p_max,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QosReport {
    pub beta: f64,
    /// Packets offered per slot, `n lambda d`.
    pub offered_load: f64,
    pub carried_load: f64,
    pub drop_prob: f64,
    pub wait_literal: Option<f64>,
    pub wait_slot_avg: Option<f64>,
    pub interference_prob: f64,
    /// Slot-start mass of charge decisions.
    pub charge_fraction: f64,
    /// `(1 - beta)(1 - theta) xi`, the charging time share of the power budget.
    pub charge_time_fraction: f64,
    pub power_required: f64,
    pub power_clamped: f64,
    pub power_feasible: bool,
    /// Set when evaluated against drop and interference constraints.
    pub feasible: Option<bool>,
}

impl QosReport {
    pub fn wait(&self, estimator: WaitEstimator) -> Option<f64> {
        match estimator {
            WaitEstimator::Literal => self.wait_literal,
            WaitEstimator::SlotAverage => self.wait_slot_avg,
        }
    }
}

/// Chain, stationary law and report for one parameter point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub kernel: SlotTransitionKernel,
    pub stationary: StationaryDistribution,
    pub report: QosReport,
}

pub fn evaluate(params: &SystemParams) -> Result<Evaluation> {
    evaluate_with(params, ServiceRule::Overlapping)
}

pub fn evaluate_with(params: &SystemParams, rule: ServiceRule) -> Result<Evaluation> {
    let matrix = build_transition_matrix_with(params, rule)?;
    let mu = stationary_distribution(&matrix)?;
    let kernel = params.kernel()?;
    let traffic = &params.traffic;
    let beta = activity_factor(&params.pnp)?;

    let carried = carried_load_with(&mu, rule.success_weight(&kernel));
    // Without offered traffic nothing is dropped.
    let drop_prob = if traffic.arrivals_per_slot() > 0.0 {
        packet_drop_probability(carried, traffic)?
    } else {
        0.0
    };
    let wait_slot_avg = optional(wait_slot_average(&mu, drop_prob, traffic))?;
    let wait_literal = match departure_distributions(
        &mu,
        &kernel,
        traffic,
        drop_prob,
        KappaVariant::Literal,
    ) {
        Ok(dd) => optional(wait_literal(&dd, drop_prob, traffic))?,
        Err(Error::DegenerateDistribution) => None,
        Err(e) => return Err(e),
    };
    let interference = clamp_probability("interference probability", interference_probability(&mu))?;
    let budget = required_power(&params.power, traffic, &params.policy, beta, drop_prob)?;

    let report = QosReport {
        beta,
        offered_load: traffic.arrivals_per_slot(),
        carried_load: clamp_probability("carried load", carried)?,
        drop_prob,
        wait_literal,
        wait_slot_avg,
        interference_prob: interference,
        charge_fraction: mu.action_marginal(Action::Charge),
        charge_time_fraction: (1.0 - beta)
            * (1.0 - params.policy.theta_idle)
            * params.policy.xi_charge,
        power_required: budget.total,
        power_clamped: budget.clamped,
        power_feasible: budget.feasible,
        feasible: None,
    };
    Ok(Evaluation { kernel, stationary: mu, report })
}

fn optional(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedWait) => Ok(None),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtmc::build_transition_matrix;
    use approx::assert_abs_diff_eq;

    fn solve(params: &SystemParams) -> StationaryDistribution {
        stationary_distribution(&build_transition_matrix(params).unwrap()).unwrap()
    }

    #[test]
    fn forced_idleness_drops_everything() {
        let mut params = SystemParams::reference();
        params.policy.theta_idle = 1.0;
        let ev = evaluate(&params).unwrap();
        assert_abs_diff_eq!(ev.report.carried_load, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.report.drop_prob, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev.report.interference_prob, 0.0, epsilon = 1e-12);
        assert_eq!(ev.report.wait_slot_avg, None);
        assert_eq!(ev.report.wait_literal, None);
        assert!(!ev.report.power_feasible);
        assert_eq!(ev.report.power_required, f64::INFINITY);
    }

    #[test]
    fn certain_false_alarm_drops_everything() {
        let mut params = SystemParams::reference();
        params.sensing.p_false_alarm = 1.0;
        let ev = evaluate(&params).unwrap();
        assert_abs_diff_eq!(ev.report.drop_prob, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_arrivals() {
        let mut params = SystemParams::reference();
        params.traffic.lambda = 0.0;
        let ev = evaluate(&params).unwrap();
        assert_abs_diff_eq!(ev.report.carried_load, 0.0, epsilon = 1e-12);
        assert_eq!(ev.report.drop_prob, 0.0);
        assert_eq!(ev.report.wait_slot_avg, None);
        assert_eq!(
            packet_drop_probability(0.0, &params.traffic),
            Err(Error::UndefinedLoad)
        );
        // Every node needs only the floor power.
        let expected: f64 = params.power.pathloss_factors().map(|g| 50e-6 * g).sum();
        assert_abs_diff_eq!(ev.report.power_required, expected, epsilon = 1e-18);
    }

    #[test]
    fn perfect_detection_never_interferes() {
        let mut params = SystemParams::reference();
        params.sensing.p_detect = 1.0;
        let ev = evaluate(&params).unwrap();
        assert_eq!(ev.report.interference_prob, 0.0);
    }

    #[test]
    fn drop_probability_clamps_round_off_and_rejects_real_excess() {
        let traffic = SystemParams::reference().traffic;
        let rho = traffic.arrivals_per_slot();
        assert_eq!(packet_drop_probability(rho * (1.0 + 1e-12), &traffic).unwrap(), 0.0);
        assert!(matches!(
            packet_drop_probability(rho * 1.5, &traffic),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn single_slot_buffer_departures() {
        let mut params = SystemParams::reference();
        params.traffic.capacity = 1;
        params.traffic.lambda = 0.002;
        let mu = solve(&params);
        let kernel = params.kernel().unwrap();
        for variant in [KappaVariant::Literal, KappaVariant::ArrivalWeighted] {
            let dd = departure_distributions(&mu, &kernel, &params.traffic, 0.1, variant).unwrap();
            let expected = kernel.off_persist * mu.prob(State::new(1, Phase::Off, Action::Serve));
            assert_abs_diff_eq!(dd.kappa[0], expected, epsilon = 1e-18);
            assert_eq!(dd.delta, vec![1.0]);
        }
    }

    #[test]
    fn lemma_one_reconstruction() {
        let params = SystemParams::reference();
        let ev = evaluate(&params).unwrap();
        let p_b = ev.report.drop_prob;
        for variant in [KappaVariant::Literal, KappaVariant::ArrivalWeighted] {
            let dd =
                departure_distributions(&ev.stationary, &ev.kernel, &params.traffic, p_b, variant)
                    .unwrap();
            assert_abs_diff_eq!(dd.delta.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert_eq!(dd.gamma, dd.delta);
            assert_abs_diff_eq!(dd.epsilon.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert_eq!(*dd.epsilon.last().unwrap(), p_b);
            for (e, g) in dd.epsilon.iter().zip(&dd.gamma) {
                assert_eq!(*e, (1.0 - p_b) * g);
            }
        }
    }

    #[test]
    fn departures_degenerate_without_service() {
        let mut params = SystemParams::reference();
        params.policy.theta_idle = 1.0;
        let mu = solve(&params);
        let kernel = params.kernel().unwrap();
        assert_eq!(
            departure_distributions(&mu, &kernel, &params.traffic, 1.0, KappaVariant::Literal),
            Err(Error::DegenerateDistribution)
        );
    }

    #[test]
    fn wait_undefined_at_full_drop() {
        let params = SystemParams::reference();
        let ev = evaluate(&params).unwrap();
        assert_eq!(
            wait_slot_average(&ev.stationary, 1.0, &params.traffic),
            Err(Error::UndefinedWait)
        );
        let dd = departure_distributions(
            &ev.stationary,
            &ev.kernel,
            &params.traffic,
            0.0,
            KappaVariant::Literal,
        )
        .unwrap();
        assert_eq!(wait_literal(&dd, 1.0, &params.traffic), Err(Error::UndefinedWait));
    }

    #[test]
    fn slot_average_single_buffer_identity() {
        let mut params = SystemParams::reference();
        params.traffic.capacity = 1;
        params.traffic.lambda = 1e-4;
        let ev = evaluate(&params).unwrap();
        let mu = &ev.stationary;
        // L two ways: queue marginal, and a direct sweep over the states.
        let by_marginal = mu.queue_marginal()[1];
        let by_states: f64 = mu
            .space()
            .unwrap()
            .states()
            .zip(mu.probs())
            .map(|(s, p)| s.queue as f64 * p)
            .sum();
        assert_abs_diff_eq!(by_marginal, by_states, epsilon = 1e-12);
        let p_b = ev.report.drop_prob;
        let w = ev.report.wait_slot_avg.unwrap();
        assert_abs_diff_eq!(w, by_states / (20.0 * 1e-4 * (1.0 - p_b)), epsilon = 1e-12 * w);
    }

    #[test]
    fn literal_wait_reduces_to_inverse_admitted_rate() {
        // sum(epsilon) = 1, so the printed formula is 1 / lambda_eff.
        for lambda in [0.0005, 0.002, 0.01] {
            let mut params = SystemParams::reference();
            params.traffic.lambda = lambda;
            let r = evaluate(&params).unwrap().report;
            let admitted = params.traffic.aggregate_rate() * (1.0 - r.drop_prob);
            let w = r.wait_literal.unwrap();
            assert_abs_diff_eq!(w, 1.0 / admitted, epsilon = 1e-9 * w);
        }
    }

    #[test]
    fn literal_wait_matches_formula() {
        let params = SystemParams::reference();
        let ev = evaluate(&params).unwrap();
        let p_b = ev.report.drop_prob;
        let rate = params.traffic.aggregate_rate();
        let expected = p_b / (rate * (1.0 - p_b)) + 1.0 / rate;
        assert_abs_diff_eq!(ev.report.wait_literal.unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn power_floor_example() {
        let mut params = SystemParams::reference();
        params.power.node_radii = vec![1.0; 20];
        params.power.charging_radius = None;
        let b = required_power(&params.power, &params.traffic, &params.policy, 0.5, 0.0).unwrap();
        // lambda = 0.001 gives a dynamic term of 2 uW, below the 50 uW floor.
        assert!(b.per_node.iter().all(|p| *p == 50e-6));
        assert_abs_diff_eq!(b.total, 1e-3, epsilon = 1e-15);
        assert!(b.feasible);
        assert_eq!(b.clamped, b.total);
    }

    #[test]
    fn power_dynamic_term_example() {
        let mut params = SystemParams::reference();
        params.traffic.lambda = 0.1;
        let b = required_power(&params.power, &params.traffic, &params.policy, 0.5, 0.0).unwrap();
        assert_abs_diff_eq!(b.per_node[0], 200e-6, epsilon = 1e-18);
    }

    #[test]
    fn power_without_charging_time_is_infeasible() {
        let params = SystemParams::reference();
        for policy in [
            PolicyModel { theta_idle: 1.0, xi_charge: 0.5 },
            PolicyModel { theta_idle: 0.2, xi_charge: 0.0 },
        ] {
            let b = required_power(&params.power, &params.traffic, &policy, 0.5, 0.0).unwrap();
            assert_eq!(b.total, f64::INFINITY);
            assert!(!b.feasible);
            assert_eq!(b.clamped, params.power.p_max);
        }
        let mut bad = params.power.clone();
        bad.node_radii.clear();
        assert!(required_power(&bad, &params.traffic, &params.policy, 0.5, 0.0).is_err());
    }

    #[test]
    fn power_is_monotone_in_each_argument() {
        let params = SystemParams::reference();
        let p = |lambda: f64, beta: f64, theta: f64, xi: f64| {
            let mut t = params.traffic;
            t.lambda = lambda;
            let policy = PolicyModel { theta_idle: theta, xi_charge: xi };
            required_power(&params.power, &t, &policy, beta, 0.05).unwrap().total
        };
        let grid: Vec<f64> = (1..20).map(|i| f64::from(i) / 20.0).collect();
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            assert!(p(a, 0.5, 0.2, 0.5) <= p(b, 0.5, 0.2, 0.5));
            assert!(p(0.01, a, 0.2, 0.5) <= p(0.01, b, 0.2, 0.5));
            assert!(p(0.01, 0.5, a, 0.5) <= p(0.01, 0.5, b, 0.5));
            assert!(p(0.01, 0.5, 0.2, a) >= p(0.01, 0.5, 0.2, b));
        }
    }

    #[test]
    fn perfect_sensing_interference_free_and_consistent() {
        // Build the error-free chain twice through independent parameter paths.
        let mut a = SystemParams::reference();
        a.sensing.p_detect = 1.0;
        a.sensing.p_false_alarm = 0.0;
        let mut b = a.clone();
        b.sensing = crate::model::SensingModel { p_false_alarm: 0.0, p_detect: 1.0 };
        let ra = evaluate(&a).unwrap().report;
        let rb = evaluate(&b).unwrap().report;
        assert_eq!(ra.interference_prob, 0.0);
        assert_abs_diff_eq!(ra.drop_prob, rb.drop_prob, epsilon = 1e-12);
    }

    #[test]
    fn metrics_monotone_in_lambda() {
        let mut prev: Option<QosReport> = None;
        for i in 1..=8 {
            let mut params = SystemParams::reference();
            params.traffic.lambda = 0.0005 * f64::from(i);
            let r = evaluate(&params).unwrap().report;
            if let Some(p) = prev {
                assert!(r.drop_prob >= p.drop_prob);
                assert!(r.interference_prob >= p.interference_prob);
                assert!(r.wait_slot_avg.unwrap() >= p.wait_slot_avg.unwrap());
            }
            prev = Some(r);
        }
    }
}
