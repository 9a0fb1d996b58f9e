use anyhow::{bail, Context, Result};
use criot::qos::ARBITRATED_ESTIMATOR;
use criot::region::{sweep, synchronized_baseline, with_lambda, SweepTarget};
use criot::sim::{Estimate, GENERATOR};
use criot::{build_transition_matrix, evaluate, run_replications, SimConfig, SimResult};

use crate::config::{Resolved, RunConfig};
use crate::output::{flag, num, opt, Table};

pub const METRICS_HEADER: &[&str] = &[
    "lambda",
    "n",
    "capacity_k",
    "beta",
    "p_d",
    "p_f",
    "theta",
    "xi",
    "offered_load",
    "carried_load",
    "p_b",
    "p_i",
    "w_paper",
    "w_slot_avg",
    "charge_fraction",
    "charge_time_fraction",
    "p_th",
    "p_th_clamped",
    "power_feasible",
    "feasible",
];

pub const SIM_HEADER: &[&str] = &[
    "replication",
    "seed",
    "generator",
    "slots",
    "generated",
    "admitted",
    "dropped",
    "served",
    "p_b",
    "p_b_se",
    "w",
    "w_se",
    "p_i",
    "p_i_se",
    "carried_load",
    "carried_load_se",
    "charge_fraction",
    "charge_fraction_se",
    "on_fraction",
    "on_fraction_se",
];

pub const SWEEP_HEADER: &[&str] = &[
    "axis_name",
    "axis_value",
    "critical_name",
    "critical_value",
    "p_b",
    "p_i",
    "w_paper",
    "w_slot_avg",
    "p_th",
    "feasible",
];

pub const COMPARE_HEADER: &[&str] = &["lambda", "w_sim", "w_full_model", "w_sync_baseline"];

pub struct Emit {
    pub stationary: bool,
    pub matrix: bool,
}

pub fn analyze(cfg: &RunConfig, r: &Resolved, emit: &Emit) -> Result<Vec<Table>> {
    let lambdas = cfg.analyze.lambdas.clone().unwrap_or_else(|| vec![r.params.traffic.lambda]);
    if lambdas.is_empty() {
        bail!("analyze.lambdas is empty");
    }
    let mut metrics = Table::new("metrics.csv", METRICS_HEADER);
    let mut stationary = Table::new("stationary.csv", &["lambda", "index", "i", "phi", "psi", "prob"]);
    let mut matrix = Table::new(
        "matrix.csv",
        &["lambda", "from_i", "from_phi", "from_psi", "to_i", "to_phi", "to_psi", "prob"],
    );
    for lambda in lambdas {
        let p = with_lambda(&r.params, lambda);
        let ev = evaluate(&p).with_context(|| format!("evaluating lambda = {lambda}"))?;
        let mut rep = ev.report;
        rep.feasible = Some(r.constraints.admits(&rep));
        metrics.push(vec![
            num(lambda),
            p.traffic.n.to_string(),
            p.traffic.capacity.to_string(),
            num(rep.beta),
            num(p.sensing.p_detect),
            num(p.sensing.p_false_alarm),
            num(p.policy.theta_idle),
            num(p.policy.xi_charge),
            num(rep.offered_load),
            num(rep.carried_load),
            num(rep.drop_prob),
            num(rep.interference_prob),
            opt(rep.wait_literal),
            opt(rep.wait_slot_avg),
            num(rep.charge_fraction),
            num(rep.charge_time_fraction),
            num(rep.power_required),
            num(rep.power_clamped),
            flag(rep.power_feasible),
            flag(rep.feasible == Some(true)),
        ]);
        let space = ev.stationary.space().expect("model chain").clone();
        if emit.stationary {
            for (idx, (s, prob)) in space.states().zip(ev.stationary.probs()).enumerate() {
                stationary.push(vec![
                    num(lambda),
                    idx.to_string(),
                    s.queue.to_string(),
                    s.phase.index().to_string(),
                    s.action.index().to_string(),
                    num(*prob),
                ]);
            }
        }
        if emit.matrix {
            let m = build_transition_matrix(&p)?;
            for (a, from) in space.states().enumerate() {
                for (b, to) in space.states().enumerate() {
                    let v = m.get(a, b);
                    if v != 0.0 {
                        matrix.push(vec![
                            num(lambda),
                            from.queue.to_string(),
                            from.phase.index().to_string(),
                            from.action.index().to_string(),
                            to.queue.to_string(),
                            to.phase.index().to_string(),
                            to.action.index().to_string(),
                            num(v),
                        ]);
                    }
                }
            }
        }
    }
    let mut out = vec![metrics];
    if emit.stationary {
        out.push(stationary);
    }
    if emit.matrix {
        out.push(matrix);
    }
    Ok(out)
}

fn est(e: &Estimate) -> [String; 2] {
    [num(e.value), num(e.std_err)]
}

fn sim_row(r: &SimResult) -> Vec<String> {
    let mut row = vec![
        r.replication.map_or_else(|| "pooled".to_string(), |k| k.to_string()),
        r.seed.to_string(),
        GENERATOR.to_string(),
        r.slots.to_string(),
        r.counts.generated.to_string(),
        r.counts.admitted.to_string(),
        r.counts.dropped.to_string(),
        r.counts.served.to_string(),
    ];
    for e in [
        &r.drop_prob_hat,
        &r.mean_sojourn_hat,
        &r.interference_hat,
        &r.carried_load_hat,
        &r.charge_fraction_hat,
        &r.on_fraction_hat,
    ] {
        row.extend(est(e));
    }
    row
}

pub fn simulate(r: &Resolved) -> Result<Vec<Table>> {
    let run = run_replications(&r.sim).context("running the simulator")?;
    let mut t = Table::new("sim.csv", SIM_HEADER);
    for rep in &run.replications {
        t.push(sim_row(rep));
    }
    t.push(sim_row(&run.pooled));
    Ok(vec![t])
}

pub fn sweep_cmd(cfg: &RunConfig, r: &Resolved) -> Result<Vec<Table>> {
    let Some(s) = &cfg.sweep else {
        bail!("the sweep command needs a `sweep` block (axis, target, grid) in the config or --axis/--target/--grid");
    };
    let tol = s.tol.unwrap_or(match s.target {
        SweepTarget::BetaC => 1e-3,
        SweepTarget::LambdaC => 1e-6,
    });
    let rows = sweep(&r.params, &r.constraints, s.axis, &s.grid, s.target, tol)?;
    let mut t = Table::new("sweep.csv", SWEEP_HEADER);
    for row in rows {
        let at = &row.at_point;
        t.push(vec![
            row.axis.name().to_string(),
            num(row.swept_value),
            row.target.name().to_string(),
            opt(row.critical_value()),
            num(at.drop_prob),
            num(at.interference_prob),
            opt(at.wait_literal),
            opt(at.wait_slot_avg),
            num(at.power_required),
            flag(at.feasible == Some(true)),
        ]);
    }
    Ok(vec![t])
}

pub fn compare(cfg: &RunConfig, r: &Resolved) -> Result<Vec<Table>> {
    let Some(c) = &cfg.compare else {
        bail!("the compare command needs a `compare` block with `lambdas` in the config or --lambdas");
    };
    if c.lambdas.is_empty() {
        bail!("compare.lambdas is empty");
    }
    let mut t = Table::new("compare.csv", COMPARE_HEADER);
    for &lambda in &c.lambdas {
        let p = with_lambda(&r.params, lambda);
        let sim = SimConfig { params: p.clone(), ..r.sim.clone() };
        let w_sim = run_replications(&sim)?.pooled.mean_sojourn_hat.value;
        let full = evaluate(&p)?.report.wait(ARBITRATED_ESTIMATOR);
        let base = synchronized_baseline(&p)?.wait(ARBITRATED_ESTIMATOR);
        t.push(vec![num(lambda), num(w_sim), opt(full), opt(base)]);
    }
    Ok(vec![t])
}
