//! Subcommand handlers. Each returns whether its checks passed and a one-line summary.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use serde_json::json;

use extremal::config::{ConfigError, ExperimentConfig};
use extremal::harness::{ks2d_two_sample, par_map_seeds, run_replicates, BatchMeta};
use extremal::integrability::{classify_integrability, FunctionalValue, MChoice};
use extremal::integrals::sample_joint_indexed;
use extremal::integrand::Integrand;
use extremal::measure::MeasureSpace;
use extremal::regenerative::index::{
    d_beta_k_with_mc, default_block_length, extremal_index_estimate, ThetaConfig, DEFAULT_QUANTILE,
};
use extremal::regenerative::model::{simulate_x_path, IndexSet};
use extremal::regenerative::phase::{candidate_extremal_index, candidate_index_mc, regime, Regime};
use extremal::regenerative::renewal::RenewalSpec;
use extremal::regenerative::sweep::{phase_sweep, SweepConfig};
use extremal::suite::{run_suite, SuiteConfig};
use extremal::tail::{
    extremal_independence_check, full_independence_check, joint_exceedance_trace, mrv_constant, product_tail_constants,
    tail_fit, tail_levels, ProductTailConfig,
};

use crate::output::{num, Ctx};
use crate::{CliError, Common};

pub struct Outcome {
    pub passed: bool,
    pub summary: String,
}

fn load(path: &Path) -> Result<(ExperimentConfig, MeasureSpace), CliError> {
    let cfg = ExperimentConfig::load(path)?;
    let space = cfg.build_space()?;
    Ok((cfg, space))
}

fn workers(common: &Common, cfg: Option<&ExperimentConfig>) -> usize {
    common.workers.or(cfg.and_then(|c| c.workers)).unwrap_or_else(extremal::harness::default_workers)
}

/// The named integrands, or all of them when `names` is empty.
fn select(
    cfg: &ExperimentConfig,
    space: &MeasureSpace,
    names: &[String],
) -> Result<Vec<(String, Integrand)>, CliError> {
    let all = cfg.build_integrands(space)?;
    if all.is_empty() {
        return Err(ConfigError::Invalid("the config declares no integrands".into()).into());
    }
    if names.is_empty() {
        return Ok(all);
    }
    names
        .iter()
        .map(|n| {
            all.iter()
                .find(|(m, _)| m == n)
                .cloned()
                .ok_or_else(|| ConfigError::Invalid(format!("no integrand named '{n}'")).into())
        })
        .collect()
}

fn one(cfg: &ExperimentConfig, space: &MeasureSpace, name: &str) -> Result<Integrand, CliError> {
    Ok(select(cfg, space, &[name.to_string()])?.remove(0).1)
}

/// `n` joint draws of `fs` under the config's sampler settings.
fn joint_draws(
    cfg: &ExperimentConfig,
    space: &MeasureSpace,
    fs: &[&Integrand],
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<Vec<f64>>, CliError> {
    let pairs: Vec<(&Integrand, f64)> = fs.iter().map(|&f| (f, cfg.alpha)).collect();
    let rows = par_map_seeds(n, seed, workers, |s, _| {
        sample_joint_indexed(&pairs, space, &cfg.sample_config(s)).map(|j| j.values)
    });
    rows.into_iter().collect::<Result<_, _>>().map_err(|e| CliError::Run(e.to_string()))
}

fn functional(v: &Option<FunctionalValue>) -> String {
    v.as_ref().map(|f| num(f.value)).unwrap_or_default()
}

#[derive(Args, Serialize)]
pub struct SampleArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Replicates; defaults to the config's count.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Integrand to sample; repeat for several. Defaults to all, jointly on one stream.
    #[arg(long = "integrand")]
    pub integrands: Vec<String>,
}

pub fn sample(args: &SampleArgs, common: &Common) -> Result<Outcome, CliError> {
    let (cfg, space) = load(&args.config)?;
    let fs = select(&cfg, &space, &args.integrands)?;
    let ctx = Ctx::from_config("sample", &cfg, common.seed, workers(common, Some(&cfg)), common.out.as_deref())?;
    let r = args.replicates.unwrap_or(cfg.replicates);
    let pairs: Vec<(&Integrand, f64)> = fs.iter().map(|(_, f)| (f, cfg.alpha)).collect();
    let columns: Vec<String> = fs.iter().map(|(n, _)| n.clone()).collect();
    let meta = BatchMeta { op: "sample".into(), config_digest: ctx.digest.clone(), columns: columns.clone() };
    let batch = run_replicates(
        |s, _| sample_joint_indexed(&pairs, &space, &cfg.sample_config(s)).map(|j| j.values).map_err(|e| e.to_string()),
        r,
        ctx.seed,
        ctx.workers,
        meta,
    )
    .map_err(|e| CliError::Run(e.to_string()))?;
    let path = ctx.path("csv");
    batch.write(&path).map_err(|e| CliError::Run(e.to_string()))?;
    Ok(Outcome {
        passed: !batch.partial,
        summary: format!(
            "sample: {} draws of [{}], {} failed -> {}",
            batch.len() - batch.failures.len(),
            columns.join(", "),
            batch.failures.len(),
            path.display()
        ),
    })
}

#[derive(Args, Serialize)]
pub struct IntegrabilityArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Integrand to classify; repeat for several. Defaults to all.
    #[arg(long = "integrand")]
    pub integrands: Vec<String>,
}

pub fn check_integrability(args: &IntegrabilityArgs, common: &Common) -> Result<Outcome, CliError> {
    let (cfg, space) = load(&args.config)?;
    let fs = select(&cfg, &space, &args.integrands)?;
    let ctx =
        Ctx::from_config("check-integrability", &cfg, common.seed, workers(common, Some(&cfg)), common.out.as_deref())?;
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (name, f) in &fs {
        let r =
            classify_integrability(f, &space, cfg.alpha, MChoice::Default).map_err(|e| CliError::Run(e.to_string()))?;
        rows.push(vec![
            name.clone(),
            r.order.to_string(),
            format!("{:?}", r.verdict),
            num(r.l_alpha.value),
            num(r.l_alpha_logk.value),
            functional(&r.l_alpha_logloglog),
            functional(&r.i2),
            functional(&r.sufficient),
            r.reference.clone(),
        ]);
        reports.push(json!({ "name": name, "report": r }));
    }
    let csv = ctx.write_csv(
        &["name", "order", "verdict", "l_alpha", "l_alpha_logk", "l_alpha_logloglog", "i2", "sufficient", "reference"],
        &rows,
    )?;
    ctx.write_report(&reports)?;
    let verdicts: Vec<String> = rows.iter().map(|r| format!("{} {}", r[0], r[2])).collect();
    Ok(Outcome { passed: true, summary: format!("check-integrability: {} -> {}", verdicts.join(", "), csv.display()) })
}

#[derive(Args, Serialize)]
pub struct TailFitArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub integrand: String,
    /// Draws; defaults to the config's replicate count.
    #[arg(long)]
    pub draws: Option<usize>,
}

pub fn tail_fit_cmd(args: &TailFitArgs, common: &Common) -> Result<Outcome, CliError> {
    let (cfg, space) = load(&args.config)?;
    let f = one(&cfg, &space, &args.integrand)?;
    let ctx = Ctx::from_config("tail-fit", &cfg, common.seed, workers(common, Some(&cfg)), common.out.as_deref())?;
    let n = args.draws.unwrap_or(cfg.replicates);
    let xs: Vec<f64> = joint_draws(&cfg, &space, &[&f], n, ctx.seed, ctx.workers)?.into_iter().map(|v| v[0]).collect();
    let decl = cfg.tail.clone().unwrap_or_default();
    let power = decl.log_power.unwrap_or((f.k() - 1) as f64);
    let constant = match decl.constant {
        Some(c) => Some(c),
        None => mrv_constant(std::slice::from_ref(&f), &[1.0], cfg.alpha, &space).ok(),
    };
    let mut rep = tail_fit(&xs, cfg.alpha, power).map_err(|e| CliError::Run(e.to_string()))?;
    if let Some(c) = constant {
        rep = rep.compare(c, decl.tolerance);
    }
    let csv = ctx.path("csv");
    rep.write_csv(&csv).map_err(|e| CliError::Run(e.to_string()))?;
    ctx.write_report(&rep)?;
    let window = rep.final_window.map_or("none".to_string(), |(v, se)| format!("{v:.4} +- {se:.4}"));
    let against = match (constant, rep.relative_error) {
        (Some(c), Some(e)) => format!(" against {c:.4} (relative error {e:.3}, tolerance {})", decl.tolerance),
        _ => String::new(),
    };
    Ok(Outcome {
        passed: constant.is_none() || rep.matched,
        summary: format!("tail-fit: {} final window {window}{against} -> {}", args.integrand, csv.display()),
    })
}

#[derive(Args, Serialize)]
pub struct ProductTailArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub first: String,
    #[arg(long)]
    pub second: String,
    /// Draws of the product; defaults to the config's replicate count.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Outer and inner Monte Carlo sizes for the overlap constants; default to the config's.
    #[arg(long)]
    pub outer_draws: Option<usize>,
    #[arg(long)]
    pub inner_draws: Option<usize>,
}

pub fn product_tail(args: &ProductTailArgs, common: &Common) -> Result<Outcome, CliError> {
    let (cfg, space) = load(&args.config)?;
    let budget = cfg.product.clone();
    let f = one(&cfg, &space, &args.first)?;
    let g = one(&cfg, &space, &args.second)?;
    let ctx = Ctx::from_config("product-tail", &cfg, common.seed, workers(common, Some(&cfg)), common.out.as_deref())?;
    let pc_cfg = ProductTailConfig {
        outer: args.outer_draws.or(budget.as_ref().map(|b| b.outer)).unwrap_or(200),
        inner: args.inner_draws.or(budget.as_ref().map(|b| b.inner)).unwrap_or(50),
        seed: ctx.seed,
        workers: ctx.workers,
        policy: cfg.truncation,
        depth: cfg.sample_config(0).depth,
        ..Default::default()
    };
    let pc = product_tail_constants(&f, &g, cfg.alpha, &space, &pc_cfg).map_err(|e| CliError::Run(e.to_string()))?;
    let n = args.draws.unwrap_or(cfg.replicates);
    let products: Vec<f64> =
        joint_draws(&cfg, &space, &[&f, &g], n, extremal::harness::derive_seed(ctx.seed, 1), ctx.workers)?
            .iter()
            .map(|v| v[0] * v[1])
            .collect();
    let tol = cfg.tail.as_ref().map_or(0.25, |t| t.tolerance);
    let rep = tail_fit(&products, pc.exponent(), pc.log_power())
        .map_err(|e| CliError::Run(e.to_string()))?
        .compare(pc.leading_constant(), tol);
    let csv = ctx.path("csv");
    rep.write_csv(&csv).map_err(|e| CliError::Run(e.to_string()))?;
    ctx.write_report(&json!({ "constants": pc, "fit": rep }))?;
    let window = rep.final_window.map_or("none".to_string(), |(v, se)| format!("{v:.4} +- {se:.4}"));
    Ok(Outcome {
        passed: rep.matched,
        summary: format!(
            "product-tail: dominant r {}, exponent {}, log power {}, final window {window} against {:.4} -> {}",
            pc.dominant_r,
            pc.exponent(),
            pc.log_power(),
            pc.leading_constant(),
            csv.display()
        ),
    })
}

#[derive(Args, Serialize)]
pub struct IndependenceArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub first: String,
    #[arg(long)]
    pub second: String,
    /// Joint draws for the empirical checks; 0 skips them.
    #[arg(long)]
    pub draws: Option<usize>,
}

pub fn independence(args: &IndependenceArgs, common: &Common) -> Result<Outcome, CliError> {
    let (cfg, space) = load(&args.config)?;
    let f = one(&cfg, &space, &args.first)?;
    let g = one(&cfg, &space, &args.second)?;
    let ctx = Ctx::from_config("independence", &cfg, common.seed, workers(common, Some(&cfg)), common.out.as_deref())?;
    let extremal = extremal_independence_check(&[f.clone(), g.clone()], &space, cfg.alpha)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let full = full_independence_check(&f, &g, &space).ok();
    let n = args.draws.unwrap_or(cfg.replicates);
    let mut rows = Vec::new();
    let mut ks = None;
    if n > 0 {
        let joint = joint_draws(&cfg, &space, &[&f, &g], n, ctx.seed, ctx.workers)?;
        let other = joint_draws(&cfg, &space, &[&f, &g], n, extremal::harness::derive_seed(ctx.seed, 1), ctx.workers)?;
        let pairs: Vec<(f64, f64)> = joint.iter().map(|v| (v[0], v[1])).collect();
        let product: Vec<(f64, f64)> = joint.iter().zip(&other).map(|(a, b)| (a[0], b[1])).collect();
        ks = Some(ks2d_two_sample(&pairs, &product, 1e-3));
        rows = joint_exceedance_trace(&pairs, &tail_levels()).into_iter().map(|(t, r)| vec![num(t), num(r)]).collect();
    }
    let csv = ctx.write_csv(&["inverse_level", "joint_over_single"], &rows)?;
    ctx.write_report(&json!({ "extremal": extremal, "full": full, "ks2d": ks }))?;
    let passed = !(full == Some(true) && ks.as_ref().is_some_and(|t| !t.passed));
    let ks_text = ks.as_ref().and_then(|t| t.p_value).map_or("skipped".into(), |p| format!("p = {p:.3e}"));
    let full_text = full.map_or("unsupported".to_string(), |b| b.to_string());
    Ok(Outcome {
        passed,
        summary: format!(
            "independence: extremal {}, full {full_text}, joint vs product 2d ks {ks_text} -> {}",
            extremal.independent,
            csv.display()
        ),
    })
}

#[derive(Args, Serialize)]
pub struct RegenArgs {
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Path length.
    #[arg(long)]
    pub n: u64,
    /// Block length of the estimator; defaults to ceil(n^0.6).
    #[arg(long)]
    pub block: Option<usize>,
    /// Exceedance quantile of the estimator.
    #[arg(long, default_value_t = DEFAULT_QUANTILE)]
    pub quantile: f64,
    /// Draws of the direct candidate-index simulation; 0 skips it.
    #[arg(long, default_value_t = 20_000)]
    pub candidate_draws: usize,
}

fn regen_error(e: extremal::regenerative::RegenError) -> CliError {
    use extremal::regenerative::RegenError::*;
    match e {
        InvalidBeta(_) | InvalidSpec(_) | InvalidArgument(_) | PathTooShort { .. } => CliError::Usage(e.to_string()),
        other => CliError::Run(other.to_string()),
    }
}

pub fn regen_sim(args: &RegenArgs, common: &Common) -> Result<Outcome, CliError> {
    let spec = RenewalSpec::power_tail(args.beta).map_err(regen_error)?;
    let ctx = Ctx::from_args("regen-sim", args, common.seed, workers(common, None), common.out.as_deref())?;
    let path = simulate_x_path(&spec, args.k, args.alpha, args.n, IndexSet::Exact, ctx.seed).map_err(regen_error)?;
    let block = args.block.unwrap_or_else(|| default_block_length(path.values.len()));
    let est = extremal_index_estimate(&path.values, block, args.quantile).map_err(regen_error)?;
    let r = regime(args.beta, args.k);
    let series = candidate_extremal_index(&spec, args.k);
    let simulated = (r == Regime::Sub && args.candidate_draws > 0).then(|| {
        candidate_index_mc(
            &spec,
            args.k,
            1_000_000,
            args.candidate_draws,
            extremal::harness::derive_seed(ctx.seed, 1),
            ctx.workers,
        )
    });
    let csv = ctx.path("csv");
    path.write_csv(&csv).map_err(|e| CliError::Run(format!("cannot write {}: {e}", csv.display())))?;
    ctx.write_report(&json!({
        "regime": r,
        "renewals_used": path.renewals_used,
        "w_n": path.w_n,
        "blocks": est,
        "candidate_series": series,
        "candidate_simulated": simulated,
    }))?;
    let sim_text = simulated.map_or(String::new(), |(v, se)| format!(", simulated {v:.4} +- {se:.4}"));
    Ok(Outcome {
        passed: true,
        summary: format!(
            "regen-sim: {r:?} regime, theta_hat {:.4} (block {block}, quantile {}), candidate {:.4}{sim_text} -> {}",
            est.theta,
            args.quantile,
            series.value,
            csv.display()
        ),
    })
}

#[derive(Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub beta: f64,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub n: u64,
    /// Independent paths.
    #[arg(long, default_value_t = 16)]
    pub replicates: usize,
    #[arg(long, default_value_t = 100)]
    pub block: usize,
    #[arg(long, default_value_t = 0.9999)]
    pub quantile: f64,
    #[arg(long, default_value_t = 100_000)]
    pub candidate_draws: usize,
}

pub fn extremal_index(args: &IndexArgs, common: &Common) -> Result<Outcome, CliError> {
    let spec = RenewalSpec::power_tail(args.beta).map_err(regen_error)?;
    let ctx = Ctx::from_args("extremal-index", args, common.seed, workers(common, None), common.out.as_deref())?;
    let cfg = ThetaConfig {
        block: args.block,
        quantile: args.quantile,
        candidate_draws: args.candidate_draws,
        ..ThetaConfig::new(args.n, args.replicates, ctx.seed, ctx.workers)
    };
    let (d, cmp) = d_beta_k_with_mc(&spec, args.k, args.alpha, &cfg).map_err(regen_error)?;
    let rows: Vec<Vec<String>> = cmp.per_path.iter().enumerate().map(|(i, t)| vec![i.to_string(), num(*t)]).collect();
    let csv = ctx.write_csv(&["path", "theta_hat"], &rows)?;
    ctx.write_report(&json!({ "comparison": cmp, "d": d }))?;
    Ok(Outcome {
        passed: true,
        summary: format!(
            "extremal-index: theta_hat {:.4} +- {:.4}, candidate {:.4} +- {:.4}, separation {:.2} s.e., ratio {:.3} -> {}",
            cmp.theta_hat.0,
            cmp.theta_hat.1,
            cmp.candidate_hat.0,
            cmp.candidate_hat.1,
            cmp.separation,
            cmp.ratio.0,
            csv.display()
        ),
    })
}

#[derive(Args, Serialize)]
pub struct SweepArgs {
    /// Comma-separated memory parameters.
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.5, 0.3])]
    pub betas: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Window lengths run over 2^min_exp ..= 2^max_exp.
    #[arg(long, default_value_t = 14)]
    pub min_exp: u32,
    #[arg(long, default_value_t = 18)]
    pub max_exp: u32,
    #[arg(long, default_value_t = 20_000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0.25)]
    pub tolerance: f64,
}

pub fn sweep(args: &SweepArgs, common: &Common) -> Result<Outcome, CliError> {
    if args.min_exp >= args.max_exp || args.max_exp > 40 {
        return Err(CliError::Usage(format!(
            "need min-exp < max-exp <= 40, got {} and {}",
            args.min_exp, args.max_exp
        )));
    }
    let ctx = Ctx::from_args("phase-sweep", args, common.seed, workers(common, None), common.out.as_deref())?;
    let cfg = SweepConfig {
        betas: args.betas.clone(),
        k: args.k,
        alpha: args.alpha,
        ns: (args.min_exp..=args.max_exp).map(|e| 1u64 << e).collect(),
        replicates: args.replicates,
        stability_tol: args.tolerance,
        seed: ctx.seed,
        workers: ctx.workers,
    };
    let rep = phase_sweep(&cfg).map_err(regen_error)?;
    let mut rows = Vec::new();
    for row in &rep.rows {
        for (j, n) in cfg.ns.iter().enumerate() {
            let mut r = vec![num(row.beta), format!("{:?}", row.regime), n.to_string(), num(row.raw_medians[j])];
            r.extend(row.normalized.iter().map(|nm| num(nm.medians[j])));
            rows.push(r);
        }
    }
    let csv = ctx.write_csv(&["beta", "regime", "n", "median", "super", "critical", "sub"], &rows)?;
    ctx.write_report(&rep)?;
    let rows_text: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("beta {} {:?} {}", r.beta, r.regime, if r.separated { "separated" } else { "not separated" }))
        .collect();
    Ok(Outcome { passed: rep.passed, summary: format!("phase-sweep: {} -> {}", rows_text.join(", "), csv.display()) })
}

#[derive(Args, Serialize)]
pub struct VerifyArgs {
    /// Criterion name or number, or `all`.
    #[arg(long, default_value = "all")]
    pub suite: String,
}

pub fn verify(args: &VerifyArgs, common: &Common) -> Result<Outcome, CliError> {
    let ctx = Ctx::from_args("verify", args, common.seed, workers(common, None), common.out.as_deref())?;
    let rep = run_suite(&args.suite, &SuiteConfig { seed: ctx.seed, workers: ctx.workers }).map_err(|e| match e {
        extremal::suite::SuiteError::UnknownSuite(_) => CliError::Usage(e.to_string()),
        other => CliError::Run(other.to_string()),
    })?;
    let mut rows = Vec::new();
    for c in &rep.criteria {
        println!("{}", c.line());
        for ch in &c.checks {
            rows.push(vec![
                c.id.to_string(),
                c.criterion.to_string(),
                ch.name.clone(),
                ch.passed.to_string(),
                ch.detail.clone(),
            ]);
        }
    }
    let csv = ctx.write_csv(&["id", "criterion", "check", "passed", "detail"], &rows)?;
    ctx.write_report(&rep)?;
    let failed = rep.criteria.iter().filter(|c| !c.passed).count();
    Ok(Outcome {
        passed: rep.passed,
        summary: format!(
            "verify: {} of {} criteria passed -> {}",
            rep.criteria.len() - failed,
            rep.criteria.len(),
            csv.display()
        ),
    })
}
