use serde_json::{json, Map, Value};

use super::output::{num, nums, opt_num, Cell, Rendered, Table};
use super::{verify, Axis, Cli, CliError, Command, ModelArgs, Outcome, EXIT_INTERNAL, EXIT_OK, EXIT_VERIFY_FAILED};
use crate::channel::{ChannelError, RayleighModel};
use crate::conditions::{schur_condition_numeric, schur_condition_rayleigh, ConditionError};
use crate::montecarlo::{simulate_with, MonteCarloError, RateEstimate, Reporting};
use crate::numerics::NumericsError;
use crate::optimizer::{
    exhaustive_two_user, homogeneous_policy, optimize, step_sensitivity, OptimizeOptions, OptimizerError,
};
use crate::rate::{feedback_load, RateError, Rates, ThresholdPolicy};

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<ChannelError> for CliError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::Numerics(n) => n.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<RateError> for CliError {
    fn from(e: RateError) -> Self {
        match e {
            RateError::Numerics(n) => n.into(),
            RateError::Channel(c) => c.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::Evaluation { ref source, .. } => match CliError::from(source.clone()) {
                CliError::Internal(_) => CliError::Internal(e.to_string()),
                usage => usage,
            },
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ConditionError> for CliError {
    fn from(e: ConditionError) -> Self {
        match e {
            ConditionError::Channel(c) => c.into(),
            ConditionError::UnboundedAtZero => CliError::Internal(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<MonteCarloError> for CliError {
    fn from(e: MonteCarloError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn model(args: &ModelArgs) -> Result<RayleighModel, CliError> {
    Ok(RayleighModel::new(args.beams, args.snr)?)
}

fn units(bits: bool) -> (&'static str, f64) {
    if bits {
        ("bits", std::f64::consts::LOG2_E)
    } else {
        ("nats", 1.0)
    }
}

fn header(command: &str, m: &ModelArgs, unit: &str) -> Map<String, Value> {
    let mut j = Map::new();
    j.insert("command".into(), json!(command));
    j.insert("beams".into(), json!(m.beams));
    j.insert("snr".into(), num(m.snr));
    j.insert("units".into(), json!(unit));
    j
}

fn ok(json: Map<String, Value>, table: Table) -> Outcome {
    Outcome {
        rendered: Rendered { json, table },
        exit_code: EXIT_OK,
    }
}

pub(super) fn dispatch(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Check { model, grid } => check(model, *grid),
        Command::Optimize {
            model,
            users,
            lambda,
            starts,
            step_tol,
            max_iters,
            seed,
        } => {
            let options = OptimizeOptions {
                starts: *starts,
                step_tol: *step_tol,
                max_iters: *max_iters,
                seed: *seed,
                ..Default::default()
            };
            run_optimize(model, *users, *lambda, &options, cli.bits)
        }
        Command::Simulate {
            model,
            thresholds,
            probs,
            users,
            lambda,
            samples,
            seed,
            best_beam_only,
        } => {
            let d = self::model(model)?;
            let policy = match (thresholds, probs, users, lambda) {
                (Some(t), _, _, _) => ThresholdPolicy::new(t.clone())?,
                (_, Some(p), _, _) => ThresholdPolicy::from_probabilities(&d, p)?,
                (_, _, Some(n), Some(l)) => homogeneous_policy(&d, *n, *l)?,
                _ => return Err(CliError::Usage("no policy given".into())),
            };
            let reporting = if *best_beam_only {
                Reporting::BestBeamOnly
            } else {
                Reporting::AllAboveThreshold
            };
            run_simulate(model, &d, &policy, *samples, *seed, reporting, cli.bits)
        }
        Command::Sweep {
            axis,
            beams,
            snr,
            from,
            to,
            points,
            users,
            lambda,
            mc_samples,
            seed,
        } => {
            let needs_snr = *axis != Axis::Snr;
            let snr = match snr {
                Some(s) => *s,
                None if needs_snr => return Err(CliError::Usage("this axis needs --snr".into())),
                // unused on the snr axis
                None => 1.0,
            };
            let sweep = Sweep {
                model: ModelArgs { beams: *beams, snr },
                users: *users,
                lambda: *lambda,
                mc_samples: *mc_samples,
                seed: *seed,
                bits: cli.bits,
            };
            match axis {
                Axis::Snr => sweep.snr(*from, *to, *points),
                Axis::Lambda => sweep.lambda(*from, *to, *points),
                Axis::Q => sweep.q(*points),
            }
        }
        Command::Verify { seed, tolerance_scale } => {
            if !(tolerance_scale.is_finite() && *tolerance_scale >= 0.0) {
                return Err(CliError::Usage("tolerance scale must be finite and >= 0".into()));
            }
            let report = verify::run_battery(*seed, *tolerance_scale)?;
            let mut table = Table::new(vec!["check", "passed", "cases", "failures", "worst", "tolerance"]);
            for c in &report.checks {
                table.push(vec![
                    c.name.as_str().into(),
                    c.passed.into(),
                    c.cases.into(),
                    c.failures.into(),
                    c.worst.into(),
                    c.tolerance.into(),
                ]);
            }
            let json = match serde_json::to_value(&report) {
                Ok(Value::Object(m)) => m,
                _ => return Err(CliError::Internal("report serialization".into())),
            };
            Ok(Outcome {
                rendered: Rendered { json, table },
                exit_code: if report.passed { EXIT_OK } else { EXIT_VERIFY_FAILED },
            })
        }
    }
}

fn check(m: &ModelArgs, grid: usize) -> Result<Outcome, CliError> {
    let closed = schur_condition_rayleigh(m.beams, m.snr)?;
    let d = model(m)?;
    let report = schur_condition_numeric(&d, grid)?;
    let agree = closed == report.holds;

    let mut j = Map::new();
    j.insert("command".into(), json!("check"));
    j.insert("beams".into(), json!(m.beams));
    j.insert("snr".into(), num(m.snr));
    j.insert("grid_size".into(), json!(grid));
    j.insert("holds".into(), json!(report.holds));
    j.insert("closed_form_holds".into(), json!(closed));
    j.insert("numeric_holds".into(), json!(report.holds));
    j.insert("agree".into(), json!(agree));
    j.insert("worst_margin".into(), num(report.worst_margin));
    j.insert("witness_x".into(), num(report.witness_x));

    let mut t = Table::new(vec![
        "beams",
        "snr",
        "grid_size",
        "closed_form_holds",
        "numeric_holds",
        "agree",
        "worst_margin",
        "witness_x",
    ]);
    t.push(vec![
        m.beams.into(),
        m.snr.into(),
        grid.into(),
        closed.into(),
        report.holds.into(),
        agree.into(),
        report.worst_margin.into(),
        report.witness_x.into(),
    ]);
    let mut out = ok(j, t);
    if !agree {
        out.exit_code = EXIT_INTERNAL;
    }
    Ok(out)
}

fn run_optimize(
    m: &ModelArgs,
    users: usize,
    lambda: f64,
    options: &OptimizeOptions,
    bits: bool,
) -> Result<Outcome, CliError> {
    let d = model(m)?;
    let res = optimize(&d, users, lambda, options)?;
    let (unit, scale) = units(bits);
    let sensitivity = step_sensitivity(
        &d,
        res.best_p.as_slice(),
        lambda,
        options.step_tol,
        options.quadrature,
    )?;
    let improvement = res.best_rate - res.homogeneous_rate;
    let heterogeneous = improvement > 3.0 * sensitivity && res.best_p.variance() > 0.0;
    let p = res.best_p.as_slice();
    let taus = res.best_thresholds.thresholds();

    let mut j = header("optimize", m, unit);
    j.insert("users".into(), json!(users));
    j.insert("lambda".into(), num(lambda));
    j.insert("best_p".into(), nums(p));
    j.insert("best_thresholds".into(), nums(taus));
    j.insert("best_rate".into(), num(scale * res.best_rate));
    j.insert("homogeneous_rate".into(), num(scale * res.homogeneous_rate));
    j.insert("improvement".into(), num(scale * improvement));
    j.insert("step_sensitivity".into(), num(scale * sensitivity));
    j.insert("heterogeneous".into(), json!(heterogeneous));
    j.insert("load".into(), num(res.load));
    j.insert("converged".into(), json!(res.converged));
    j.insert("iterations".into(), json!(res.iterations));
    j.insert(
        "trace".into(),
        Value::Array(
            res.trace
                .iter()
                .map(|(p, r)| json!({ "p": nums(p), "rate": num(scale * r) }))
                .collect(),
        ),
    );

    let mut t = Table::new(vec![
        "user",
        "p",
        "threshold",
        "best_rate",
        "homogeneous_rate",
        "load",
        "converged",
        "iterations",
        "heterogeneous",
    ]);
    for (i, (&pi, &ti)) in p.iter().zip(taus).enumerate() {
        t.push(vec![
            i.into(),
            pi.into(),
            ti.into(),
            (scale * res.best_rate).into(),
            (scale * res.homogeneous_rate).into(),
            res.load.into(),
            res.converged.into(),
            res.iterations.into(),
            heterogeneous.into(),
        ]);
    }
    Ok(ok(j, t))
}

/// `(estimate - analytic) / se`; infinite when the estimate has no spread but differs.
fn discrepancy_sigma(est: &RateEstimate, analytic: f64) -> f64 {
    let gap = est.mean_rate - analytic;
    if est.std_error > 0.0 {
        gap / est.std_error
    } else if gap == 0.0 {
        0.0
    } else {
        gap.signum() * f64::INFINITY
    }
}

fn run_simulate(
    m: &ModelArgs,
    d: &RayleighModel,
    policy: &ThresholdPolicy,
    samples: u64,
    seed: u64,
    reporting: Reporting,
    bits: bool,
) -> Result<Outcome, CliError> {
    let est = simulate_with(d, policy, samples, seed, reporting)?;
    let (analytic, analytic_load) = match reporting {
        Reporting::AllAboveThreshold => (
            Some(Rates::new(d).sum_rate(policy)?),
            Some(feedback_load(d, policy)),
        ),
        Reporting::BestBeamOnly => (None, None),
    };
    let sigma = analytic.map(|a| discrepancy_sigma(&est, a));
    let (unit, scale) = units(bits);
    let sc = |x: Option<f64>| x.map(|v| scale * v);
    let beam_rates: Vec<f64> = est.beam_rates.iter().map(|r| scale * r).collect();
    let beam_ses: Vec<f64> = est.beam_std_errors.iter().map(|r| scale * r).collect();

    let mut j = header("simulate", m, unit);
    j.insert("users".into(), json!(policy.len()));
    j.insert("thresholds".into(), nums(policy.thresholds()));
    j.insert("probabilities".into(), nums(&policy.probabilities(d)));
    j.insert(
        "reporting".into(),
        json!(match reporting {
            Reporting::AllAboveThreshold => "all_above_threshold",
            Reporting::BestBeamOnly => "best_beam_only",
        }),
    );
    j.insert("samples".into(), json!(est.samples));
    j.insert("seed".into(), json!(est.seed));
    j.insert("mean_rate".into(), num(scale * est.mean_rate));
    j.insert("std_error".into(), num(scale * est.std_error));
    j.insert("analytic_rate".into(), opt_num(sc(analytic)));
    j.insert("discrepancy_sigma".into(), opt_num(sigma));
    j.insert("mean_load".into(), num(est.mean_load));
    j.insert("load_std_error".into(), num(est.load_std_error));
    j.insert("analytic_load".into(), opt_num(analytic_load));
    j.insert("beam_rates".into(), nums(&beam_rates));
    j.insert("beam_std_errors".into(), nums(&beam_ses));

    let mut t = Table::new(vec![
        "mean_rate",
        "std_error",
        "analytic_rate",
        "discrepancy_sigma",
        "mean_load",
        "load_std_error",
        "analytic_load",
        "samples",
        "seed",
    ]);
    t.push(vec![
        (scale * est.mean_rate).into(),
        (scale * est.std_error).into(),
        sc(analytic).into(),
        sigma.into(),
        est.mean_load.into(),
        est.load_std_error.into(),
        analytic_load.into(),
        est.samples.into(),
        est.seed.into(),
    ]);
    Ok(ok(j, t))
}

struct Sweep {
    model: ModelArgs,
    users: usize,
    lambda: f64,
    mc_samples: Option<u64>,
    seed: u64,
    bits: bool,
}

fn grid(from: Option<f64>, to: Option<f64>, points: usize) -> Result<Vec<f64>, CliError> {
    let (Some(a), Some(b)) = (from, to) else {
        return Err(CliError::Usage("this axis needs --from and --to".into()));
    };
    if !(a.is_finite() && b.is_finite() && a <= b) {
        return Err(CliError::Usage(format!("malformed range [{a}, {b}]")));
    }
    if points == 0 || (points == 1 && a != b) {
        return Err(CliError::Usage("need at least 2 points for a non-degenerate range".into()));
    }
    if points == 1 {
        return Ok(vec![a]);
    }
    let last = points - 1;
    Ok((0..points)
        .map(|k| if k == last { b } else { a + (b - a) * k as f64 / last as f64 })
        .collect())
}

impl Sweep {
    fn mc(&self, d: &RayleighModel, policy: &ThresholdPolicy) -> Result<Option<RateEstimate>, CliError> {
        self.mc_samples
            .map(|n| simulate_with(d, policy, n, self.seed, Reporting::AllAboveThreshold))
            .transpose()
            .map_err(Into::into)
    }

    fn columns(&self, mut base: Vec<&'static str>) -> Vec<&'static str> {
        if self.mc_samples.is_some() {
            base.extend(["mc_rate", "mc_std_error"]);
        }
        base
    }

    fn finish(
        &self,
        axis: &str,
        mut j: Map<String, Value>,
        t: Table,
    ) -> Outcome {
        j.insert("axis".into(), json!(axis));
        j.insert("mc_samples".into(), self.mc_samples.map_or(Value::Null, |n| json!(n)));
        j.insert("seed".into(), json!(self.seed));
        let rows = t
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = t
                    .columns
                    .iter()
                    .zip(row)
                    .map(|(&c, v)| {
                        let v = match v {
                            Cell::Real(x) => num(*x),
                            Cell::Int(k) => json!(k),
                            Cell::Bool(b) => json!(b),
                            Cell::Text(s) => json!(s),
                            Cell::Empty => Value::Null,
                        };
                        (c.to_owned(), v)
                    })
                    .collect();
                Value::Object(obj)
            })
            .collect();
        j.insert("rows".into(), Value::Array(rows));
        ok(j, t)
    }

    fn push_mc(&self, row: &mut Vec<Cell>, est: Option<RateEstimate>, scale: f64) {
        if let Some(e) = est {
            row.push((scale * e.mean_rate).into());
            row.push((scale * e.std_error).into());
        }
    }

    fn snr(&self, from: Option<f64>, to: Option<f64>, points: usize) -> Result<Outcome, CliError> {
        let snrs = grid(from, to, points)?;
        if snrs[0] <= 0.0 {
            return Err(CliError::Usage("snr range must be strictly positive".into()));
        }
        let (unit, scale) = units(self.bits);
        let mut t = Table::new(self.columns(vec!["snr", "threshold", "rate", "load", "condition_holds"]));
        for &snr in &snrs {
            let d = RayleighModel::new(self.model.beams, snr)?;
            let policy = homogeneous_policy(&d, self.users, self.lambda)?;
            let rate = Rates::new(&d).sum_rate(&policy)?;
            let holds = schur_condition_rayleigh(self.model.beams, snr)?;
            let mut row = vec![
                snr.into(),
                policy.thresholds()[0].into(),
                (scale * rate).into(),
                feedback_load(&d, &policy).into(),
                holds.into(),
            ];
            self.push_mc(&mut row, self.mc(&d, &policy)?, scale);
            t.push(row);
        }
        let mut j = header("sweep", &self.model, unit);
        j.remove("snr");
        j.insert("users".into(), json!(self.users));
        j.insert("lambda".into(), num(self.lambda));
        Ok(self.finish("snr", j, t))
    }

    fn lambda(&self, from: Option<f64>, to: Option<f64>, points: usize) -> Result<Outcome, CliError> {
        let lambdas = grid(from, to, points)?;
        let d = model(&self.model)?;
        if self.users == 0 {
            return Err(CliError::Usage("need at least one user".into()));
        }
        if lambdas[0] < 0.0 || *lambdas.last().unwrap() > self.users as f64 {
            return Err(CliError::Usage(format!(
                "lambda range must lie in [0, {}]",
                self.users
            )));
        }
        let (unit, scale) = units(self.bits);
        let rates = Rates::new(&d);
        let mut t = Table::new(self.columns(vec!["lambda", "threshold", "rate", "load"]));
        for &lambda in &lambdas {
            let policy = if lambda == 0.0 {
                ThresholdPolicy::homogeneous(self.users, f64::INFINITY)?
            } else {
                homogeneous_policy(&d, self.users, lambda)?
            };
            let rate = rates.sum_rate(&policy)?;
            let mut row = vec![
                lambda.into(),
                policy.thresholds()[0].into(),
                (scale * rate).into(),
                feedback_load(&d, &policy).into(),
            ];
            self.push_mc(&mut row, self.mc(&d, &policy)?, scale);
            t.push(row);
        }
        let mut j = header("sweep", &self.model, unit);
        j.insert("users".into(), json!(self.users));
        Ok(self.finish("lambda", j, t))
    }

    fn q(&self, points: usize) -> Result<Outcome, CliError> {
        let d = model(&self.model)?;
        let scan = exhaustive_two_user(&d, self.lambda, points)?;
        let (unit, scale) = units(self.bits);
        let mut t = Table::new(self.columns(vec!["q", "p_first", "p_second", "tau_first", "tau_second", "rate"]));
        for &(q, rate) in &scan.curve {
            let p = [(self.lambda - q).min(1.0), q];
            let policy = ThresholdPolicy::from_probabilities(&d, &p)?;
            let taus = policy.thresholds();
            let mut row = vec![
                q.into(),
                p[0].into(),
                p[1].into(),
                taus[0].into(),
                taus[1].into(),
                (scale * rate).into(),
            ];
            self.push_mc(&mut row, self.mc(&d, &policy)?, scale);
            t.push(row);
        }
        let mut j = header("sweep", &self.model, unit);
        j.insert("lambda".into(), num(self.lambda));
        j.insert("best_q".into(), num(scan.best_q));
        j.insert("best_rate".into(), num(scale * scan.best_rate));
        j.insert("homogeneous_q".into(), num(self.lambda / 2.0));
        Ok(self.finish("q", j, t))
    }
}
