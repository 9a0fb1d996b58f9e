//! Run configuration: reference defaults, then the JSON config file, then
//! command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use criot::model::uniform_disc_radii;
use criot::region::{SweepAxis, SweepTarget};
use criot::{Constraints, PnpModel, SimConfig, SystemParams};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PnpSection {
    pub mu_on: Option<f64>,
    pub mu_off: Option<f64>,
    /// Sets `mu_off` from `mu_on` and the activity factor.
    pub beta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub n: Option<u32>,
    pub lambda: Option<f64>,
    pub capacity_k: Option<usize>,
    pub slot_d: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensingSection {
    pub p_detect: Option<f64>,
    pub p_false_alarm: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub theta_idle: Option<f64>,
    pub xi_charge: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    pub p_charge_min: Option<f64>,
    pub p_max: Option<f64>,
    pub energy_per_packet: Option<f64>,
    pub pathloss_exponent: Option<f64>,
    /// Explicit node distances; otherwise nodes are spread over the charging disc.
    pub node_radii: Option<Vec<f64>>,
    pub charging_radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    #[serde(default)]
    pub pnp: PnpSection,
    #[serde(default)]
    pub traffic: TrafficSection,
    #[serde(default)]
    pub sensing: SensingSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub power: PowerSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSection {
    pub max_drop: Option<f64>,
    pub max_interference: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub horizon_slots: Option<u64>,
    pub warmup_slots: Option<u64>,
    pub seed: Option<u64>,
    pub replications: Option<u32>,
    pub batches: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Evaluate one metrics row per rate instead of the configured rate only.
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub target: SweepTarget,
    pub grid: Vec<f64>,
    pub tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitSection {
    #[serde(default)]
    pub stationary: bool,
    #[serde(default)]
    pub matrix: bool,
}

/// Contents of a config file. Every block is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub constraints: ConstraintsSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    pub sweep: Option<SweepSection>,
    pub compare: Option<CompareSection>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub emit: EmitSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("config file {} is not a valid run config", path.display()))
    }
}

/// Flat overrides applied on top of the config file.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct Overrides {
    /// Per-node packet arrival rate, packets/s.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of nodes served by the access point.
    #[arg(long)]
    pub n: Option<u32>,
    /// Buffer capacity K.
    #[arg(long)]
    pub k: Option<usize>,
    /// Slot duration d, s.
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long = "p-d")]
    pub p_detect: Option<f64>,
    #[arg(long = "p-f")]
    pub p_false_alarm: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    /// Activity factor; sets mu_off at the current mu_on.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "mu-on")]
    pub mu_on: Option<f64>,
    #[arg(long = "mu-off")]
    pub mu_off: Option<f64>,
    /// Beacon power limit P_m, W.
    #[arg(long = "p-max")]
    pub p_max: Option<f64>,
    #[arg(long = "max-drop")]
    pub max_drop: Option<f64>,
    #[arg(long = "max-interference")]
    pub max_interference: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<u32>,
    /// Simulated slots per replication, warmup included.
    #[arg(long)]
    pub horizon: Option<u64>,
    #[arg(long)]
    pub warmup: Option<u64>,
}

pub const DEFAULT_HORIZON: u64 = 1_000_000;
pub const DEFAULT_SEED: u64 = 1;

/// Fully resolved inputs shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: SystemParams,
    pub constraints: Constraints,
    pub sim: SimConfig,
}

pub fn resolve(cfg: &RunConfig, o: &Overrides) -> Result<Resolved> {
    let mut p = SystemParams::reference();
    let s = &cfg.params;

    if s.pnp.mu_off.is_some() && s.pnp.beta.is_some() {
        bail!("config sets both params.pnp.mu_off and params.pnp.beta; keep one");
    }
    if o.mu_off.is_some() && o.beta.is_some() {
        bail!("--mu-off and --beta are mutually exclusive");
    }
    p.pnp.mu_on = o.mu_on.or(s.pnp.mu_on).unwrap_or(p.pnp.mu_on);
    p.pnp.mu_off = o.mu_off.or(s.pnp.mu_off).unwrap_or(p.pnp.mu_off);
    let beta = if o.mu_off.is_some() { o.beta } else { o.beta.or(s.pnp.beta) };
    if let Some(beta) = beta {
        p.pnp = PnpModel::with_activity(p.pnp.mu_on, beta)?;
    }

    let t = &s.traffic;
    p.traffic.n = o.n.or(t.n).unwrap_or(p.traffic.n);
    p.traffic.lambda = o.lambda.or(t.lambda).unwrap_or(p.traffic.lambda);
    p.traffic.capacity = o.k.or(t.capacity_k).unwrap_or(p.traffic.capacity);
    p.traffic.slot_d = o.d.or(t.slot_d).unwrap_or(p.traffic.slot_d);

    p.sensing.p_detect = o.p_detect.or(s.sensing.p_detect).unwrap_or(p.sensing.p_detect);
    p.sensing.p_false_alarm = o
        .p_false_alarm
        .or(s.sensing.p_false_alarm)
        .unwrap_or(p.sensing.p_false_alarm);
    p.policy.theta_idle = o.theta.or(s.policy.theta_idle).unwrap_or(p.policy.theta_idle);
    p.policy.xi_charge = o.xi.or(s.policy.xi_charge).unwrap_or(p.policy.xi_charge);

    let w = &s.power;
    p.power.p_charge_min = w.p_charge_min.unwrap_or(p.power.p_charge_min);
    p.power.p_max = o.p_max.or(w.p_max).unwrap_or(p.power.p_max);
    p.power.energy_per_packet = w.energy_per_packet.unwrap_or(p.power.energy_per_packet);
    p.power.pathloss_exponent = w.pathloss_exponent.unwrap_or(p.power.pathloss_exponent);
    if let Some(r) = w.charging_radius {
        p.power.charging_radius = Some(r);
    }
    p.power.node_radii = match &w.node_radii {
        Some(radii) => radii.clone(),
        None => uniform_disc_radii(p.traffic.n, p.power.charging_radius.unwrap_or(1.0)),
    };
    p.validate().context("invalid model parameters")?;

    let reference = Constraints::reference();
    let constraints = Constraints {
        max_drop: o.max_drop.or(cfg.constraints.max_drop).unwrap_or(reference.max_drop),
        max_interference: o
            .max_interference
            .or(cfg.constraints.max_interference)
            .unwrap_or(reference.max_interference),
    };
    constraints.validate().context("invalid constraints")?;

    let horizon = o.horizon.or(cfg.sim.horizon_slots).unwrap_or(DEFAULT_HORIZON);
    let mut sim = SimConfig::new(p.clone(), horizon, o.seed.or(cfg.sim.seed).unwrap_or(DEFAULT_SEED));
    if let Some(w) = o.warmup.or(cfg.sim.warmup_slots) {
        sim.warmup_slots = w;
    }
    sim.replications = o.replications.or(cfg.sim.replications).unwrap_or(1);
    if let Some(b) = cfg.sim.batches {
        sim.batches = b;
    }
    sim.validate().context("invalid simulation settings")?;

    Ok(Resolved { params: p, constraints, sim })
}
