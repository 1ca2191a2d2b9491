use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use gbtd::analysis::{
    adjusted_mutual_info, adjusted_rand, agglomerative, contrast, fit_group_model, fowlkes_mallows,
    pairwise_distance, stratified_kfold_split, ClassModelConfig, Linkage, Metric,
};
use gbtd::io::{load_labeled, Cell, LabeledDataset, Table};
use nalgebra::DVector;
use rayon::prelude::*;
use serde_json::json;

use crate::commands::pipeline_config;
use crate::error::CliError;
use crate::options::{parse_list, Common, FitFlags};
use crate::output::OutDir;

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub common: Common,
    /// Labels manifest (`.json`) or a labeled container.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Comma-separated distance names, or `all`.
    #[arg(long)]
    pub metric: Option<String>,
    /// Comma-separated linkage names (average, complete), or `all`.
    #[arg(long)]
    pub linkage: Option<String>,
    /// Number of clusters; defaults to the number of classes.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub rc: Option<usize>,
    #[arg(long)]
    pub ri: Option<usize>,
    #[arg(long)]
    pub gamma: Option<usize>,
}

struct Score {
    method: String,
    metric: Metric,
    linkage: Linkage,
    fold: usize,
    ari: f64,
    ami: f64,
    fm: f64,
}

fn score_features(
    method: &str,
    features: &[DVector<f64>],
    truth: &[usize],
    fold: usize,
    pairs: &[(Metric, Linkage)],
    k: usize,
) -> Result<Vec<Score>, CliError> {
    let mut out = Vec::new();
    for &(metric, linkage) in pairs {
        let d = pairwise_distance(features, metric)?;
        let pred = agglomerative(&d, linkage, k)?;
        out.push(Score {
            method: method.to_string(),
            metric,
            linkage,
            fold,
            ari: adjusted_rand(truth, &pred)?,
            ami: adjusted_mutual_info(truth, &pred)?,
            fm: fowlkes_mallows(truth, &pred)?,
        });
    }
    Ok(out)
}

fn run_fold(
    ds: &LabeledDataset,
    folds: &[usize],
    fold: usize,
    cfg: &ClassModelConfig,
    method: &str,
    pairs: &[(Metric, Linkage)],
    k: usize,
) -> Result<Vec<Score>, CliError> {
    let subset: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
    let truth: Vec<usize> = subset.iter().map(|&i| ds.labels[i]).collect();
    let objects: Vec<_> = subset.iter().map(|&i| ds.instances[i].clone()).collect();
    let raw: Vec<DVector<f64>> = objects
        .iter()
        .map(|o| DVector::from_column_slice(o.data()))
        .collect();
    let mut scores = score_features("Raw", &raw, &truth, fold, pairs, k)?;
    let (model, data, _) = fit_group_model(&objects, cfg)?;
    let features = contrast(&data, &model)?;
    scores.extend(score_features(method, &features, &truth, fold, pairs, k)?);
    Ok(scores)
}

fn parse_metrics(s: &str) -> Result<Vec<Metric>, CliError> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Metric::ALL.to_vec());
    }
    parse_list(s, |m| {
        Metric::from_str(m).map_err(|_| CliError::Config(format!("unknown metric '{m}'")))
    })
}

fn parse_linkages(s: &str) -> Result<Vec<Linkage>, CliError> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(vec![Linkage::Average, Linkage::Complete]);
    }
    parse_list(s, |l| {
        Linkage::from_str(l).map_err(|_| CliError::Config(format!("unknown linkage '{l}'")))
    })
}

pub fn run(args: &ClusterArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load(pipeline_config)?;
    args.fit.apply(&mut cfg)?;
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    if let Some(f) = args.folds {
        cfg.folds = f;
    }
    if let Some(r) = args.rc {
        cfg.common_rank = r;
    }
    if let Some(r) = args.ri {
        cfg.individual_rank = r;
    }
    let metrics = match &args.metric {
        Some(m) => parse_metrics(m)?,
        None => vec![cfg.metric],
    };
    let linkages = match &args.linkage {
        Some(l) => parse_linkages(l)?,
        None => vec![cfg.linkage],
    };
    let model_cfg = cfg.class_model_config()?;
    if cfg.folds < 2 {
        return Err(CliError::Config("at least 2 folds are needed".into()));
    }
    let ds = load_labeled(&args.data)?;
    let k = args.k.unwrap_or(ds.class_names.len());
    let folds = stratified_kfold_split(&ds.labels, cfg.folds, cfg.seed)?;
    let pairs: Vec<(Metric, Linkage)> = metrics
        .iter()
        .flat_map(|&m| linkages.iter().map(move |&l| (m, l)))
        .collect();
    let method = format!("{:?}", model_cfg.flavor).to_uppercase();

    let scores: Vec<Score> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| run_fold(&ds, &folds, f, &model_cfg, &method, &pairs, k))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut out = OutDir::create(&args.common.out)?;
    let mut per_fold = Table::new(&["method", "metric", "linkage", "fold", "ari", "ami", "fm"]);
    for s in &scores {
        per_fold.push(vec![
            s.method.clone().into(),
            s.metric.name().into(),
            s.linkage.to_string().into(),
            s.fold.into(),
            s.ari.into(),
            s.ami.into(),
            s.fm.into(),
        ]);
    }
    out.table("folds.csv", &per_fold)?;

    let mut summary = Table::new(&["method", "metric", "linkage", "k", "ari", "ami", "fm"]);
    let mut results = Vec::new();
    for name in ["Raw", method.as_str()] {
        for &(metric, linkage) in &pairs {
            let mine: Vec<&Score> = scores
                .iter()
                .filter(|s| s.method == name && s.metric == metric && s.linkage == linkage)
                .collect();
            let n = mine.len() as f64;
            let mean = |f: fn(&Score) -> f64| mine.iter().map(|s| f(s)).sum::<f64>() / n;
            let (ari, ami, fm) = (mean(|s| s.ari), mean(|s| s.ami), mean(|s| s.fm));
            summary.push(vec![
                name.into(),
                metric.name().into(),
                linkage.to_string().into(),
                k.into(),
                Cell::Num(ari),
                Cell::Num(ami),
                Cell::Num(fm),
            ]);
            results.push(json!({
                "method": name,
                "metric": metric.name(),
                "linkage": linkage.to_string(),
                "ari": ari,
                "ami": ami,
                "fm": fm,
            }));
        }
    }
    out.table("summary.csv", &summary)?;
    let config = serde_json::from_str(&cfg.to_json()).expect("config is JSON");
    out.finish("cluster", config, json!({ "mean_scores": results }))?;
    Ok(())
}
