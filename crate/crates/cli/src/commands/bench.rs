use std::str::FromStr;

use clap::Args;
use gbtd::io::{median_trace, synth_generate, trace_table, Cell, ExperimentConfig, Table};
use gbtd::{
    fit_constrained, initialize, project_model, ConstraintScheme, ConvergenceTrace, Method,
    ResidualState,
};
use rayon::prelude::*;
use serde_json::json;

use crate::error::CliError;
use crate::options::{parse_init, parse_list, parse_scheme, Common};
use crate::output::OutDir;

/// Salt separating the initial-point stream from the ground-truth stream.
const INIT_SALT: u64 = 0x696e_6974;

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated optimizer names; defaults to the configured method.
    #[arg(long)]
    pub methods: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// none, projected or lagrange.
    #[arg(long)]
    pub constraints: Option<String>,
    /// random, subspace or algebraic.
    #[arg(long)]
    pub init: Option<String>,
    /// Keep wall-clock columns in the traces (outputs are then not
    /// reproducible byte for byte).
    #[arg(long)]
    pub record_time: bool,
}

struct RunResult {
    method: Method,
    run: usize,
    seed: u64,
    trace: ConvergenceTrace,
}

fn run_one(cfg: &ExperimentConfig, method: Method, run: usize) -> Result<RunResult, CliError> {
    let seed = cfg.seed.wrapping_add(run as u64);
    let (target, _) = synth_generate(cfg, seed)?;
    let mut start = initialize(&cfg.template()?, &target, seed ^ INIT_SALT, cfg.init);
    if cfg.scheme != ConstraintScheme::None {
        let spec = start.group().cloned().expect("validated group model");
        start = project_model(&start, &spec)?;
    }
    let mut opt = cfg.optimizer.clone();
    opt.method = method;
    opt.seed = seed;
    let state = ResidualState::new(start, target)?;
    let (_, trace) = fit_constrained(state, &opt, cfg.scheme)?;
    log::info!(
        "{method} run {run}: relative residual {:.3e} after {} iterations",
        trace.final_relative_residual(),
        trace.records.len().saturating_sub(1)
    );
    Ok(RunResult {
        method,
        run,
        seed,
        trace,
    })
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load(ExperimentConfig::unconstrained_benchmark)?;
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(n) = args.max_iters {
        cfg.optimizer.max_iters = n;
    }
    if let Some(s) = &args.constraints {
        cfg.scheme = parse_scheme(s)?;
    }
    if let Some(s) = &args.init {
        cfg.init = parse_init(s)?;
    }
    cfg.validate()?;
    let methods = match &args.methods {
        Some(list) => parse_list(list, |m| Ok(Method::from_str(m)?))?,
        None => vec![cfg.optimizer.method],
    };

    let jobs: Vec<(Method, usize)> = methods
        .iter()
        .flat_map(|&m| (0..cfg.runs).map(move |r| (m, r)))
        .collect();
    let results: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(m, r)| run_one(&cfg, m, r))
        .collect::<Result<_, _>>()?;

    let mut out = OutDir::create(&args.common.out)?;
    let mut summary = Table::new(&[
        "method",
        "run",
        "seed",
        "iterations",
        "status",
        "final_objective",
        "final_relative_residual",
    ]);
    let mut medians = serde_json::Map::new();
    for &method in &methods {
        let mine: Vec<&RunResult> = results.iter().filter(|r| r.method == method).collect();
        for r in &mine {
            let mut table = trace_table(&r.trace);
            if !args.record_time {
                table.drop_column("time_s");
            }
            out.table(&format!("traces/{}/run_{:03}.csv", method.name(), r.run), &table)?;
            summary.push(vec![
                method.name().into(),
                r.run.into(),
                Cell::Int(r.seed as i64),
                r.trace.records.len().saturating_sub(1).into(),
                format!("{:?}", r.trace.status).to_lowercase().into(),
                r.trace.final_objective().into(),
                r.trace.final_relative_residual().into(),
            ]);
        }
        let traces: Vec<ConvergenceTrace> = mine.iter().map(|r| r.trace.clone()).collect();
        let mut agg = median_trace(&traces);
        if !args.record_time {
            agg.drop_column("time_s");
        }
        out.table(&format!("aggregate/{}_median.csv", method.name()), &agg)?;
        let mut finals: Vec<f64> = traces.iter().map(|t| t.final_relative_residual()).collect();
        medians.insert(method.name().into(), json!(gbtd::io::median(&mut finals)));
    }
    out.table("summary.csv", &summary)?;

    let broken: Vec<String> = results
        .iter()
        .filter(|r| !r.trace.final_objective().is_finite())
        .map(|r| format!("{} run {}", r.method, r.run))
        .collect();
    let config = serde_json::from_str(&cfg.to_json()).expect("config is JSON");
    out.finish(
        "synth-bench",
        config,
        json!({ "median_final_relative_residual": medians }),
    )?;
    if !broken.is_empty() {
        return Err(CliError::Numerical(format!(
            "non-finite objective in {}",
            broken.join(", ")
        )));
    }
    Ok(())
}
