//! Feasibility checks, critical activity factor and data rate, sustainability
//! sweeps, and the synchronized-activity baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dtmc::ServiceRule;
use crate::error::{invalid, Result};
use crate::model::{PnpModel, PolicyModel, SystemParams};
use crate::parallel::worker_pool;
use crate::qos::{evaluate, evaluate_with, QosReport};

/// Points in the monotonicity guard scan.
pub const GUARD_POINTS: usize = 32;

/// Activity factors are searched over `[BETA_MIN, BETA_MAX]`; both ends keep
/// the ON and OFF rates finite and positive.
pub const BETA_MIN: f64 = 1e-6;
pub const BETA_MAX: f64 = 1.0 - 1e-6;

/// Upper bound on the doubling of the rate bracket, as a multiple of its start.
pub const LAMBDA_CAP_FACTOR: f64 = (1u64 << 20) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub max_drop: f64,
    pub max_interference: f64,
}

impl Constraints {
    pub fn reference() -> Self {
        Constraints { max_drop: 0.1, max_interference: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("max_drop", self.max_drop), ("max_interference", self.max_interference)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn admits(&self, report: &QosReport) -> bool {
        report.drop_prob <= self.max_drop
            && report.interference_prob <= self.max_interference
            && report.power_feasible
    }
}

/// Evaluates `params` and marks the report with the verdict.
pub fn feasibility_check(params: &SystemParams, constraints: &Constraints) -> Result<(bool, QosReport)> {
    constraints.validate()?;
    let mut report = evaluate(params)?.report;
    let ok = constraints.admits(&report);
    report.feasible = Some(ok);
    Ok((ok, report))
}

/// Largest feasible value found by a search, with its bisection bracket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub value: f64,
    /// Feasible lower end and infeasible upper end of the final bracket.
    /// The upper end is `None` when the whole search domain is feasible.
    pub bracket: (f64, Option<f64>),
    /// The guard scan found a feasible point after an infeasible one.
    pub anomaly: bool,
    pub report: QosReport,
}

/// Bisects a feasibility predicate assumed monotone on `[lo, hi]`, guarded by
/// a scan. Returns `None` if `lo` is infeasible.
fn search<F>(lo: f64, hi: f64, tol: f64, feasible: F) -> Result<Option<(f64, Option<f64>, bool)>>
where
    F: Fn(f64) -> Result<bool>,
{
    let grid: Vec<f64> = (0..GUARD_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (GUARD_POINTS - 1) as f64)
        .collect();
    let verdicts = grid.iter().map(|x| feasible(*x)).collect::<Result<Vec<bool>>>()?;
    if !verdicts[0] {
        return Ok(None);
    }
    let Some(first_bad) = verdicts.iter().position(|v| !v) else {
        return Ok(Some((hi, None, false)));
    };
    let anomaly = verdicts[first_bad..].iter().any(|v| *v);
    let (mut a, mut b) = (grid[first_bad - 1], grid[first_bad]);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if feasible(mid)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Some((a, Some(b), anomaly)))
}

fn check_tol(tol: f64) -> Result<()> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(invalid(format!("tolerance {tol} must be positive")));
    }
    Ok(())
}

/// `params` with activity factor `beta`, keeping `mu_on`.
pub fn with_beta(params: &SystemParams, beta: f64) -> Result<SystemParams> {
    let mut p = params.clone();
    p.pnp = PnpModel::with_activity(params.pnp.mu_on, beta)?;
    Ok(p)
}

pub fn with_lambda(params: &SystemParams, lambda: f64) -> SystemParams {
    let mut p = params.clone();
    p.traffic.lambda = lambda;
    p
}

/// Largest activity factor at which the constraints hold.
pub fn critical_beta(
    params: &SystemParams,
    constraints: &Constraints,
    tol: f64,
) -> Result<Option<CriticalPoint>> {
    check_tol(tol)?;
    constraints.validate()?;
    params.validate()?;
    let feasible = |b: f64| Ok(feasibility_check(&with_beta(params, b)?, constraints)?.0);
    let Some((value, upper, anomaly)) = search(BETA_MIN, BETA_MAX, tol, feasible)? else {
        return Ok(None);
    };
    let (_, report) = feasibility_check(&with_beta(params, value)?, constraints)?;
    Ok(Some(CriticalPoint { value, bracket: (value, upper), anomaly, report }))
}

/// Largest per-node arrival rate at which the constraints hold; `None` when
/// no positive rate resolvable at `tol` is feasible.
pub fn critical_lambda(
    params: &SystemParams,
    constraints: &Constraints,
    tol: f64,
) -> Result<Option<CriticalPoint>> {
    check_tol(tol)?;
    constraints.validate()?;
    params.validate()?;
    let feasible = |l: f64| Ok(feasibility_check(&with_lambda(params, l), constraints)?.0);
    if !feasible(0.0)? {
        return Ok(None);
    }
    let start = if params.traffic.lambda > 0.0 { params.traffic.lambda } else { tol };
    let mut hi = start;
    while feasible(hi)? {
        if hi >= start * LAMBDA_CAP_FACTOR {
            let (_, report) = feasibility_check(&with_lambda(params, hi), constraints)?;
            return Ok(Some(CriticalPoint { value: hi, bracket: (hi, None), anomaly: false, report }));
        }
        hi *= 2.0;
    }
    let (value, upper, anomaly) = search(0.0, hi, tol, feasible)?
        .expect("zero rate was checked feasible");
    if value == 0.0 {
        return Ok(None);
    }
    let (_, report) = feasibility_check(&with_lambda(params, value), constraints)?;
    Ok(Some(CriticalPoint { value, bracket: (value, upper), anomaly, report }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Detection,
    FalseAlarm,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Detection => "p_d",
            SweepAxis::FalseAlarm => "p_f",
        }
    }

    fn apply(self, params: &SystemParams, value: f64) -> SystemParams {
        let mut p = params.clone();
        match self {
            SweepAxis::Detection => p.sensing.p_detect = value,
            SweepAxis::FalseAlarm => p.sensing.p_false_alarm = value,
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    BetaC,
    LambdaC,
}

impl SweepTarget {
    pub fn name(self) -> &'static str {
        match self {
            SweepTarget::BetaC => "beta_c",
            SweepTarget::LambdaC => "lambda_c",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub swept_value: f64,
    pub target: SweepTarget,
    pub critical: Option<CriticalPoint>,
    /// Feasibility at the bottom of the searched range.
    pub feasible_at_zero: bool,
    /// The configured point with the swept value applied.
    pub at_point: QosReport,
}

impl SweepRow {
    pub fn critical_value(&self) -> Option<f64> {
        self.critical.as_ref().map(|c| c.value)
    }

    pub fn metrics_at_critical(&self) -> Option<&QosReport> {
        self.critical.as_ref().map(|c| &c.report)
    }
}

fn sweep_point(
    params: &SystemParams,
    constraints: &Constraints,
    axis: SweepAxis,
    value: f64,
    target: SweepTarget,
    tol: f64,
) -> Result<SweepRow> {
    let p = axis.apply(params, value);
    let critical = match target {
        SweepTarget::BetaC => critical_beta(&p, constraints, tol)?,
        SweepTarget::LambdaC => critical_lambda(&p, constraints, tol)?,
    };
    let bottom = match target {
        SweepTarget::BetaC => with_beta(&p, BETA_MIN)?,
        SweepTarget::LambdaC => with_lambda(&p, 0.0),
    };
    let feasible_at_zero = feasibility_check(&bottom, constraints)?.0;
    let (_, at_point) = feasibility_check(&p, constraints)?;
    Ok(SweepRow { axis, swept_value: value, target, critical, feasible_at_zero, at_point })
}

/// One row per grid value, in grid order.
pub fn sweep(
    params: &SystemParams,
    constraints: &Constraints,
    axis: SweepAxis,
    grid: &[f64],
    target: SweepTarget,
    tol: f64,
) -> Result<Vec<SweepRow>> {
    check_tol(tol)?;
    if let Some(v) = grid.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("sweep value {v} must lie in [0, 1]")));
    }
    worker_pool().install(|| {
        grid.par_iter()
            .map(|v| sweep_point(params, constraints, axis, *v, target, tol))
            .collect()
    })
}

/// Collision-free comparison model: perfect sensing, and service that starts
/// in an OFF slot always completes.
pub fn synchronized_baseline(params: &SystemParams) -> Result<QosReport> {
    let mut p = params.clone();
    p.sensing.p_detect = 1.0;
    p.sensing.p_false_alarm = 0.0;
    Ok(evaluate_with(&p, ServiceRule::Synchronized)?.report)
}

/// Feasible `(theta, xi)` grid point maximizing `score`, ties to the first.
pub fn policy_grid_argmax<S>(
    params: &SystemParams,
    constraints: &Constraints,
    thetas: &[f64],
    xis: &[f64],
    score: S,
) -> Result<Option<(PolicyModel, QosReport)>>
where
    S: Fn(&QosReport) -> f64 + Sync,
{
    let points: Vec<PolicyModel> = thetas
        .iter()
        .flat_map(|t| xis.iter().map(|x| PolicyModel { theta_idle: *t, xi_charge: *x }))
        .collect();
    let evaluated: Vec<(PolicyModel, bool, QosReport)> = worker_pool().install(|| {
        points
            .par_iter()
            .map(|policy| {
                let mut p = params.clone();
                p.policy = *policy;
                let (ok, report) = feasibility_check(&p, constraints)?;
                Ok((*policy, ok, report))
            })
            .collect::<Result<_>>()
    })?;
    let mut best: Option<(f64, PolicyModel, QosReport)> = None;
    for (policy, ok, report) in evaluated {
        let s = score(&report);
        if ok && best.as_ref().is_none_or(|(b, _, _)| s > *b) {
            best = Some((s, policy, report));
        }
    }
    Ok(best.map(|(_, p, r)| (p, r)))
}
