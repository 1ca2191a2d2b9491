use std::path::PathBuf;

use clap::Args;
use gbtd::analysis::{
    classify, confusion_matrix, fit_class_models, macro_scores, stratified_kfold_split,
    ClassModelConfig, ClassScores,
};
use gbtd::io::{load_labeled, Cell, LabeledDataset, Table};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

use crate::commands::pipeline_config;
use crate::error::CliError;
use crate::options::{parse_range, Common, FitFlags};
use crate::output::OutDir;

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub common: Common,
    /// Labels manifest (`.json`) or a labeled container.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitFlags,
    /// Common rank, or a range such as `1..10` for a grid.
    #[arg(long)]
    pub rc: Option<String>,
    /// Individual rank, or a range.
    #[arg(long)]
    pub ri: Option<String>,
    /// Instance mode on which subspaces are compared.
    #[arg(long)]
    pub gamma: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Refine the class subspaces with FastICA.
    #[arg(long)]
    pub ica: bool,
}

struct FoldResult {
    rc: usize,
    ri: usize,
    fold: usize,
    test: Vec<usize>,
    predicted: Vec<usize>,
}

fn run_fold(
    ds: &LabeledDataset,
    folds: &[usize],
    fold: usize,
    cfg: &ClassModelConfig,
) -> Result<FoldResult, CliError> {
    let (train, test): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] != fold);
    let x: Vec<_> = train.iter().map(|&i| ds.instances[i].clone()).collect();
    let y: Vec<usize> = train.iter().map(|&i| ds.labels[i]).collect();
    let models = fit_class_models(&x, &y, cfg)?;
    let predicted = test
        .iter()
        .map(|&i| classify(&ds.instances[i], &models, cfg.mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FoldResult {
        rc: cfg.common_rank,
        ri: cfg.individual_rank,
        fold,
        test,
        predicted,
    })
}

fn mean_scores(scores: &[ClassScores]) -> ClassScores {
    let n = scores.len().max(1) as f64;
    let sum = |f: fn(&ClassScores) -> f64| scores.iter().map(f).sum::<f64>() / n;
    ClassScores {
        accuracy: sum(|s| s.accuracy),
        precision: sum(|s| s.precision),
        recall: sum(|s| s.recall),
        f1: sum(|s| s.f1),
    }
}

fn score_cells(s: &ClassScores) -> [Cell; 4] {
    [s.accuracy.into(), s.precision.into(), s.recall.into(), s.f1.into()]
}

pub fn run(args: &ClassifyArgs) -> Result<(), CliError> {
    let mut cfg = args.common.load(pipeline_config)?;
    args.fit.apply(&mut cfg)?;
    if let Some(g) = args.gamma {
        cfg.gamma = g;
    }
    if let Some(k) = args.folds {
        cfg.folds = k;
    }
    cfg.ica |= args.ica;
    let rcs = match &args.rc {
        Some(r) => parse_range(r)?,
        None => vec![cfg.common_rank],
    };
    let ris = match &args.ri {
        Some(r) => parse_range(r)?,
        None => vec![cfg.individual_rank],
    };
    let base = cfg.class_model_config()?;
    if cfg.folds < 2 {
        return Err(CliError::Config("at least 2 folds are needed".into()));
    }
    let ds = load_labeled(&args.data)?;
    let n_classes = ds.class_names.len();
    let folds = stratified_kfold_split(&ds.labels, cfg.folds, cfg.seed)?;

    let mut jobs = Vec::new();
    for &rc in &rcs {
        for &ri in &ris {
            for f in 0..cfg.folds {
                let mut c = base.clone();
                c.common_rank = rc;
                c.individual_rank = ri;
                jobs.push((c, f));
            }
        }
    }
    let results: Vec<FoldResult> = jobs
        .par_iter()
        .map(|(c, f)| run_fold(&ds, &folds, *f, c))
        .collect::<Result<_, _>>()?;

    let mut out = OutDir::create(&args.common.out)?;
    let mut per_fold = Table::new(&["rc", "ri", "fold", "accuracy", "precision", "recall", "f1"]);
    let mut summary = Table::new(&["rc", "ri", "accuracy", "precision", "recall", "f1"]);
    let mut grid = DMatrix::<f64>::zeros(rcs.len(), ris.len());
    let mut best: Option<(f64, usize, usize)> = None;
    for (a, &rc) in rcs.iter().enumerate() {
        for (b, &ri) in ris.iter().enumerate() {
            let mine: Vec<&FoldResult> = results.iter().filter(|r| r.rc == rc && r.ri == ri).collect();
            let mut scores = Vec::new();
            for r in &mine {
                let truth: Vec<usize> = r.test.iter().map(|&i| ds.labels[i]).collect();
                let s = macro_scores(&confusion_matrix(&truth, &r.predicted, n_classes));
                let mut row = vec![rc.into(), ri.into(), r.fold.into()];
                row.extend(score_cells(&s));
                per_fold.push(row);
                scores.push(s);
            }
            let m = mean_scores(&scores);
            let mut row = vec![rc.into(), ri.into()];
            row.extend(score_cells(&m));
            summary.push(row);
            grid[(a, b)] = m.accuracy;
            if best.is_none_or(|(acc, _, _)| m.accuracy > acc) {
                best = Some((m.accuracy, rc, ri));
            }
        }
    }
    out.table("folds.csv", &per_fold)?;
    out.table("summary.csv", &summary)?;

    let (best_acc, best_rc, best_ri) = best.expect("at least one grid point");
    let mut predicted = vec![0; ds.labels.len()];
    let mut fold_of = vec![0; ds.labels.len()];
    for r in results.iter().filter(|r| r.rc == best_rc && r.ri == best_ri) {
        for (&i, &p) in r.test.iter().zip(&r.predicted) {
            predicted[i] = p;
            fold_of[i] = r.fold;
        }
    }
    let confusion = confusion_matrix(&ds.labels, &predicted, n_classes);
    let conf_f64 = confusion.map(|v| v as f64);
    out.table("confusion.csv", &Table::from_matrix(&conf_f64, &ds.class_names))?;
    let mut preds = Table::new(&["index", "source", "fold", "true", "predicted"]);
    for i in 0..predicted.len() {
        preds.push(vec![
            i.into(),
            ds.sources[i].display().to_string().into(),
            fold_of[i].into(),
            ds.class_names[ds.labels[i]].clone().into(),
            ds.class_names[predicted[i]].clone().into(),
        ]);
    }
    out.table("predictions.csv", &preds)?;
    if rcs.len() > 1 || ris.len() > 1 {
        let mut columns = vec!["rc".to_string()];
        columns.extend(ris.iter().map(|ri| format!("ri={ri}")));
        let rows = rcs
            .iter()
            .enumerate()
            .map(|(a, &rc)| {
                let mut row = vec![Cell::from(rc)];
                row.extend((0..ris.len()).map(|b| Cell::Num(grid[(a, b)])));
                row
            })
            .collect();
        out.table("grid_accuracy.csv", &Table { columns, rows })?;
    }
    let config = serde_json::from_str(&cfg.to_json()).expect("config is JSON");
    out.finish(
        "classify",
        config,
        json!({ "best": { "rc": best_rc, "ri": best_ri, "accuracy": best_acc } }),
    )?;
    println!("best accuracy {best_acc:.4} at rc={best_rc}, ri={best_ri}");
    Ok(())
}
