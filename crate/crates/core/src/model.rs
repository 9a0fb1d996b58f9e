//! Parameter records and the per-slot probability laws shared by the
//! analytic chain and the simulator: the exponential ON/OFF kernel of the
//! primary network, Poisson arrivals at the representative sensor, and the
//! access point's action decision.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{invalid, Result};

/// Activity of the primary network at a slot boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Off = 0,
    On = 1,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Off, Phase::On];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// What the access point does with a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Idle = 0,
    Serve = 1,
    Charge = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Idle, Action::Serve, Action::Charge];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Exponential ON/OFF activity of the primary network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnpModel {
    /// Rate of the ON-duration exponential, 1/s.
    pub mu_on: f64,
    /// Rate of the OFF-duration exponential, 1/s.
    pub mu_off: f64,
}

impl PnpModel {
    pub fn new(mu_on: f64, mu_off: f64) -> Result<Self> {
        let pnp = PnpModel { mu_on, mu_off };
        pnp.validate()?;
        Ok(pnp)
    }

    /// Builds the process with a given activity factor, keeping `mu_on` fixed.
    pub fn with_activity(mu_on: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid(format!("activity factor {beta} must lie in (0, 1)")));
        }
        PnpModel::new(mu_on, beta * mu_on / (1.0 - beta))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_on > 0.0 && self.mu_on.is_finite()) {
            return Err(invalid(format!("mu_on = {} must be positive", self.mu_on)));
        }
        if !(self.mu_off > 0.0 && self.mu_off.is_finite()) {
            return Err(invalid(format!("mu_off = {} must be positive", self.mu_off)));
        }
        Ok(())
    }
}

/// The representative sensor: `n` nodes pooled into one Poisson source of
/// rate `n * lambda` feeding a buffer of `capacity` packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    pub n: u32,
    /// Per-node packet rate, packets/s.
    pub lambda: f64,
    #[serde(rename = "capacity_k")]
    pub capacity: usize,
    /// Slot duration, s.
    pub slot_d: f64,
}

impl TrafficModel {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(invalid("n must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("lambda = {} must be non-negative", self.lambda)));
        }
        if self.capacity < 1 {
            return Err(invalid("buffer capacity K must be at least 1"));
        }
        if !(self.slot_d > 0.0 && self.slot_d.is_finite()) {
            return Err(invalid(format!("slot duration d = {} must be positive", self.slot_d)));
        }
        Ok(())
    }

    /// Aggregate arrival rate of the representative sensor, packets/s.
    pub fn aggregate_rate(&self) -> f64 {
        f64::from(self.n) * self.lambda
    }

    /// Mean number of arrivals in one slot, `n * lambda * d`.
    pub fn arrivals_per_slot(&self) -> f64 {
        self.aggregate_rate() * self.slot_d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingModel {
    pub p_detect: f64,
    pub p_false_alarm: f64,
}

impl SensingModel {
    pub fn validate(&self) -> Result<()> {
        check_unit("p_detect", self.p_detect)?;
        check_unit("p_false_alarm", self.p_false_alarm)
    }

    /// Probability that the operator believes the band is free.
    pub fn perceived_free(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Off => 1.0 - self.p_false_alarm,
            Phase::On => 1.0 - self.p_detect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    /// Probability of leaving a perceived-free slot unused.
    pub theta_idle: f64,
    /// Probability that a used slot goes to power transfer.
    pub xi_charge: f64,
}

impl PolicyModel {
    pub fn validate(&self) -> Result<()> {
        check_unit("theta_idle", self.theta_idle)?;
        check_unit("xi_charge", self.xi_charge)
    }
}

/// Microwave power transfer budget of one power beacon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    /// Minimum power that must reach a node for charging, W.
    pub p_charge_min: f64,
    /// Maximum transmit power of the beacon, W.
    pub p_max: f64,
    /// Average energy spent per transmitted packet, J.
    pub energy_per_packet: f64,
    #[serde(default = "default_pathloss")]
    pub pathloss_exponent: f64,
    /// Node distances from the beacon, m. One per node.
    pub node_radii: Vec<f64>,
    /// Radii are divided by this before the pathloss power is applied.
    /// `None` uses the radii as given.
    #[serde(default)]
    pub charging_radius: Option<f64>,
}

fn default_pathloss() -> f64 {
    2.0
}

impl PowerModel {
    pub fn validate(&self, n: u32) -> Result<()> {
        for (name, v) in [
            ("p_charge_min", self.p_charge_min),
            ("p_max", self.p_max),
            ("energy_per_packet", self.energy_per_packet),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.pathloss_exponent >= 0.0 && self.pathloss_exponent.is_finite()) {
            return Err(invalid("pathloss exponent must be non-negative"));
        }
        if self.node_radii.is_empty() {
            return Err(invalid("node radii list is empty"));
        }
        if self.node_radii.len() != n as usize {
            return Err(invalid(format!(
                "{} node radii given for n = {n} nodes",
                self.node_radii.len()
            )));
        }
        if let Some(&r) = self.node_radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(invalid(format!("node radius {r} must be positive")));
        }
        if let Some(r) = self.charging_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(invalid(format!("charging radius {r} must be positive")));
            }
        }
        Ok(())
    }

    /// Pathloss multipliers `(r_i / R)^alpha`.
    pub fn pathloss_factors(&self) -> impl Iterator<Item = f64> + '_ {
        let scale = self.charging_radius.unwrap_or(1.0);
        self.node_radii
            .iter()
            .map(move |r| (r / scale).powf(self.pathloss_exponent))
    }
}

/// Deterministic node layout for `n` nodes spread uniformly over a disc:
/// the i-th radius is the `(i + 1/2)/n` quantile of the radial law.
pub fn uniform_disc_radii(n: u32, charging_radius: f64) -> Vec<f64> {
    (0..n)
        .map(|i| charging_radius * ((f64::from(i) + 0.5) / f64::from(n)).sqrt())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub pnp: PnpModel,
    pub traffic: TrafficModel,
    pub sensing: SensingModel,
    pub policy: PolicyModel,
    pub power: PowerModel,
}

impl SystemParams {
    /// The reference operating point used throughout the experiments:
    /// K = 10, d = 1 s, n = 20, lambda = 0.001, P_D = 0.9, P_F = 0.1,
    /// beta = 0.5, xi = 0.5, theta = 0.2, P_m = 10 W, P_c = 50 uW, m = 400 uJ.
    pub fn reference() -> Self {
        let n = 20;
        let charging_radius = 1000.0;
        SystemParams {
            pnp: PnpModel { mu_on: 1.0, mu_off: 1.0 },
            traffic: TrafficModel { n, lambda: 0.001, capacity: 10, slot_d: 1.0 },
            sensing: SensingModel { p_detect: 0.9, p_false_alarm: 0.1 },
            policy: PolicyModel { theta_idle: 0.2, xi_charge: 0.5 },
            power: PowerModel {
                p_charge_min: 50e-6,
                p_max: 10.0,
                energy_per_packet: 400e-6,
                pathloss_exponent: 2.0,
                node_radii: uniform_disc_radii(n, charging_radius),
                charging_radius: Some(charging_radius),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pnp.validate()?;
        self.traffic.validate()?;
        self.sensing.validate()?;
        self.policy.validate()?;
        self.power.validate(self.traffic.n)
    }

    pub fn activity_factor(&self) -> Result<f64> {
        activity_factor(&self.pnp)
    }

    pub fn kernel(&self) -> Result<SlotTransitionKernel> {
        slot_kernel(&self.pnp, self.traffic.slot_d)
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(invalid(format!("{name} = {v} must lie in [0, 1]")));
    }
    Ok(())
}

/// Long-run fraction of time the primary network is ON.
pub fn activity_factor(pnp: &PnpModel) -> Result<f64> {
    pnp.validate()?;
    Ok(pnp.mu_off / (pnp.mu_on + pnp.mu_off))
}

/// Phase transition law across one slot, plus the probabilities that a single
/// ON or OFF period covers the whole slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotTransitionKernel {
    pub a00: f64,
    pub a01: f64,
    pub a10: f64,
    pub a11: f64,
    pub off_persist: f64,
    pub on_persist: f64,
}

impl SlotTransitionKernel {
    /// `P(phase at slot end = to | phase at slot start = from)`.
    pub fn prob(&self, from: Phase, to: Phase) -> f64 {
        match (from, to) {
            (Phase::Off, Phase::Off) => self.a00,
            (Phase::Off, Phase::On) => self.a01,
            (Phase::On, Phase::Off) => self.a10,
            (Phase::On, Phase::On) => self.a11,
        }
    }
}

pub fn slot_kernel(pnp: &PnpModel, slot_d: f64) -> Result<SlotTransitionKernel> {
    pnp.validate()?;
    if slot_d.is_nan() || slot_d < 0.0 {
        return Err(invalid(format!("slot duration {slot_d} must be non-negative")));
    }
    let total = pnp.mu_on + pnp.mu_off;
    // expm1 keeps the switching mass accurate when total * d is small.
    let switched = -(-total * slot_d).exp_m1() / total;
    let a01 = pnp.mu_off * switched;
    let a10 = pnp.mu_on * switched;
    let a00 = 1.0 - a01;
    let a11 = 1.0 - a10;
    Ok(SlotTransitionKernel {
        a00,
        a01,
        a10,
        a11,
        off_persist: (-pnp.mu_off * slot_d).exp().min(a00),
        on_persist: (-pnp.mu_on * slot_d).exp().min(a11),
    })
}

/// Probability of exactly `k` arrivals at the representative sensor in one slot.
/// Negative counts have probability zero.
pub fn arrival_pmf(traffic: &TrafficModel, k: i64) -> f64 {
    poisson_pmf(traffic.arrivals_per_slot(), k)
}

/// Probability of at least `k_min` arrivals in one slot.
pub fn arrival_tail(traffic: &TrafficModel, k_min: i64) -> f64 {
    poisson_tail(traffic.arrivals_per_slot(), k_min)
}

pub(crate) fn poisson_pmf(mean: f64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let k_f = k as f64;
    (k_f * mean.ln() - mean - ln_factorial(k as u64)).exp()
}

pub(crate) fn poisson_tail(mean: f64, k_min: i64) -> f64 {
    if k_min <= 0 {
        return 1.0;
    }
    if mean == 0.0 {
        return 0.0;
    }
    if (k_min as f64) > mean {
        // Upper tail is small: sum it directly instead of subtracting from 1.
        let mut term = poisson_pmf(mean, k_min);
        let mut sum = 0.0;
        let mut k = k_min as f64;
        while term > sum * 1e-17 && term > 0.0 {
            sum += term;
            k += 1.0;
            term *= mean / k;
        }
        sum.min(1.0)
    } else {
        let head: f64 = (0..k_min).map(|k| poisson_pmf(mean, k)).sum();
        (1.0 - head).max(0.0)
    }
}

/// Distribution of the access point's action at a slot start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionPmf {
    pub idle: f64,
    pub serve: f64,
    pub charge: f64,
}

impl ActionPmf {
    pub fn prob(&self, action: Action) -> f64 {
        match action {
            Action::Idle => self.idle,
            Action::Serve => self.serve,
            Action::Charge => self.charge,
        }
    }
}

/// Action law given the true phase at sensing time. With an empty queue the
/// serve decision degenerates to idling.
pub fn decision_distribution(
    phase_at_sense: Phase,
    sensing: &SensingModel,
    policy: &PolicyModel,
    queue_empty: bool,
) -> ActionPmf {
    let active = sensing.perceived_free(phase_at_sense) * (1.0 - policy.theta_idle);
    let charge = active * policy.xi_charge;
    let serve = if queue_empty {
        0.0
    } else {
        active * (1.0 - policy.xi_charge)
    };
    ActionPmf { idle: 1.0 - charge - serve, serve, charge }
}
