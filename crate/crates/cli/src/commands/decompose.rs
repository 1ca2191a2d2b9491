use std::path::PathBuf;

use clap::Args;
use gbtd::io::{load_container, save_model, trace_table, ExperimentConfig, ModelFlavor};
use gbtd::{fit_constrained, initialize, project_model, ConstraintScheme, ResidualState};
use serde_json::json;

use crate::error::CliError;
use crate::options::{apply_ranks, parse_init, parse_list, parse_usize, Common, FitFlags};
use crate::output::OutDir;

#[derive(Args, Debug)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Tensor container to decompose; group models read objects along its
    /// last mode.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub fit: FitFlags,
    /// btd: `L1,L2,...;R1xR2xR3`; glro and gtld: `ri,rc`.
    #[arg(long)]
    pub ranks: Option<String>,
    /// Leading modes with full (Lr,1) factors; defaults to all but the last.
    #[arg(long)]
    pub full_modes: Option<usize>,
    /// Comma-separated modes with separated subspaces (group models).
    #[arg(long)]
    pub modes_of_interest: Option<String>,
    #[arg(long)]
    pub p_cum: Option<f64>,
    #[arg(long)]
    pub p_min: Option<f64>,
    /// random, subspace or algebraic.
    #[arg(long)]
    pub init: Option<String>,
    /// Keep the wall-clock column in the trace.
    #[arg(long)]
    pub record_time: bool,
}

pub fn run(args: &DecomposeArgs) -> Result<(), CliError> {
    let (target, _) = load_container(&args.input)?;
    if target.data().iter().any(|v| !v.is_finite()) {
        return Err(CliError::Data(format!("{} holds non-finite values", args.input.display())));
    }
    let from_file = args.common.config.is_some();
    let mut cfg = args.common.load(|| {
        let mut c = ExperimentConfig::default();
        c.optimizer.max_iters = 10;
        c
    })?;
    args.fit.apply(&mut cfg)?;
    let d = target.order();
    cfg.dims = target.dims().to_vec();
    cfg.n_objects = None;
    let grouped = cfg.flavor != ModelFlavor::Btd;
    if !from_file {
        cfg.full_modes = d.saturating_sub(1);
        cfg.modes_of_interest = if grouped { vec![0] } else { Vec::new() };
        if args.fit.constraints.is_none() {
            cfg.scheme = if grouped {
                ConstraintScheme::Projected
            } else {
                ConstraintScheme::None
            };
        }
        if args.ranks.is_none() {
            return Err(CliError::Config("--ranks is required without --config".into()));
        }
    }
    if let Some(p) = args.full_modes {
        cfg.full_modes = p;
    }
    if let Some(m) = &args.modes_of_interest {
        cfg.modes_of_interest = parse_list(m, parse_usize)?;
    }
    if args.p_cum.is_some() {
        cfg.p_cum = args.p_cum;
    }
    if args.p_min.is_some() {
        cfg.p_min = args.p_min;
    }
    if let Some(s) = &args.init {
        cfg.init = parse_init(s)?;
    }
    if let Some(r) = &args.ranks {
        apply_ranks(&mut cfg, r)?;
    }
    cfg.validate()?;

    let mut start = initialize(&cfg.template()?, &target, cfg.seed, cfg.init);
    if cfg.scheme != ConstraintScheme::None {
        let spec = start.group().cloned().expect("validated group model");
        start = project_model(&start, &spec)?;
    }
    let mut opt = cfg.optimizer.clone();
    opt.seed = cfg.seed;
    let state = ResidualState::new(start, target)?;
    let (model, trace) = fit_constrained(state, &opt, cfg.scheme)?;

    let mut out = OutDir::create(&args.common.out)?;
    let mut table = trace_table(&trace);
    if !args.record_time {
        table.drop_column("time_s");
    }
    out.table("trace.csv", &table)?;
    let residual = trace.final_relative_residual();
    let config = serde_json::from_str(&cfg.to_json()).expect("config is JSON");
    if !residual.is_finite() {
        out.finish("decompose", config, json!({ "final_relative_residual": null }))?;
        return Err(CliError::Numerical(format!(
            "fit diverged after {} iterations, see trace.csv",
            trace.records.len().saturating_sub(1)
        )));
    }
    save_model(&model, out.root())?;
    for entry in std::fs::read_dir(out.root()).map_err(|e| CliError::Data(e.to_string()))? {
        let name = entry.map_err(|e| CliError::Data(e.to_string()))?.file_name();
        let name = name.to_string_lossy();
        if name.ends_with(".gbtd") || name == gbtd::io::MODEL_MANIFEST {
            out.record(name.to_string());
        }
    }
    out.finish(
        "decompose",
        config,
        json!({
            "final_relative_residual": residual,
            "iterations": trace.records.len().saturating_sub(1),
            "status": format!("{:?}", trace.status).to_lowercase(),
        }),
    )?;
    println!("final relative residual: {residual:.6e}");
    Ok(())
}
