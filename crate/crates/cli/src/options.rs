use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use gbtd::io::{ExperimentConfig, ModelFlavor};
use gbtd::{ConstraintScheme, InitStrategy, Method};

use crate::error::CliError;

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON experiment configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl Common {
    /// The file configuration, or `fallback` when none is given, with the
    /// seed override applied.
    pub fn load(&self, fallback: impl FnOnce() -> ExperimentConfig) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => fallback(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

/// Model-fitting overrides shared by `decompose`, `classify` and `cluster`.
#[derive(Args, Debug, Clone, Default)]
pub struct FitFlags {
    /// glro, gtld or btd.
    #[arg(long)]
    pub flavor: Option<String>,
    /// none, projected or lagrange.
    #[arg(long)]
    pub constraints: Option<String>,
    /// Optimizer name, e.g. ALS or TR_DL.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
}

impl FitFlags {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(f) = &self.flavor {
            cfg.flavor = ModelFlavor::from_str(f)?;
        }
        if let Some(c) = &self.constraints {
            cfg.scheme = parse_scheme(c)?;
        }
        if let Some(m) = &self.method {
            cfg.optimizer.method = Method::from_str(m)?;
        }
        if let Some(n) = self.iters {
            cfg.optimizer.max_iters = n;
        }
        Ok(())
    }
}

pub fn parse_scheme(s: &str) -> Result<ConstraintScheme, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "none" => Ok(ConstraintScheme::None),
        "projected" => Ok(ConstraintScheme::Projected),
        "lagrange" => Ok(ConstraintScheme::Lagrange),
        _ => Err(CliError::Config(format!("unknown constraint scheme '{s}'"))),
    }
}

pub fn parse_init(s: &str) -> Result<InitStrategy, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "random" => Ok(InitStrategy::Random),
        "subspace" => Ok(InitStrategy::Subspace),
        "algebraic" => Ok(InitStrategy::Algebraic),
        _ => Err(CliError::Config(format!("unknown init strategy '{s}'"))),
    }
}

/// Comma-separated items, each parsed with `parse`.
pub fn parse_list<T>(
    s: &str,
    parse: impl Fn(&str) -> Result<T, CliError>,
) -> Result<Vec<T>, CliError> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(parse)
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(CliError::Config(format!("empty list '{s}'")));
    }
    Ok(items)
}

pub fn parse_usize(s: &str) -> Result<usize, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Config(format!("'{s}' is not a non-negative integer")))
}

/// `"3"`, `"1..10"` or `"1-10"` (inclusive), or a comma list of those.
pub fn parse_range(s: &str) -> Result<Vec<usize>, CliError> {
    let mut out = Vec::new();
    for part in parse_list(s, |t| Ok(t.to_string()))? {
        let bounds = part.split_once("..").or_else(|| part.split_once('-'));
        match bounds {
            Some((a, b)) => {
                let (a, b) = (parse_usize(a)?, parse_usize(b)?);
                if a > b {
                    return Err(CliError::Config(format!("empty range '{part}'")));
                }
                out.extend(a..=b);
            }
            None => out.push(parse_usize(&part)?),
        }
    }
    Ok(out)
}

fn parse_shape(s: &str) -> Result<Vec<usize>, CliError> {
    s.split('x').map(parse_usize).collect()
}

/// Fills `lr_ranks` and `tucker_ranks` from a rank string.
///
/// * btd: `L1,L2,...;R1xR2xR3,...`, either side may be empty.
/// * glro: `ri,rc` (every individual term gets `ri`) or all `N + 1` ranks.
/// * gtld: `ri,rc` (common Tucker ranks `rc` on every data mode, capped by
///   the dimension) or `L1,...,LN;R1xR2`.
pub fn apply_ranks(cfg: &mut ExperimentConfig, ranks: &str) -> Result<(), CliError> {
    let (lr, tucker) = match ranks.split_once(';') {
        Some((a, b)) => (a.trim(), Some(b.trim())),
        None => (ranks.trim(), None),
    };
    let lr: Vec<usize> = if lr.is_empty() { Vec::new() } else { parse_list(lr, parse_usize)? };
    let tucker: Vec<Vec<usize>> = match tucker {
        Some(t) if !t.is_empty() => parse_list(t, parse_shape)?,
        _ => Vec::new(),
    };
    let n = cfg.n_objects();
    let d = cfg.dims.len();
    match cfg.flavor {
        ModelFlavor::Btd => {
            cfg.lr_ranks = lr;
            cfg.tucker_ranks = tucker;
        }
        ModelFlavor::Glro => {
            if !tucker.is_empty() {
                return Err(CliError::Config("GLRO ranks take no Tucker part".into()));
            }
            cfg.lr_ranks = match lr.as_slice() {
                [ri, rc] if n != 1 => {
                    let mut v = vec![*ri; n];
                    v.push(*rc);
                    v
                }
                _ => lr,
            };
            cfg.tucker_ranks.clear();
        }
        ModelFlavor::Gtld => match (lr.as_slice(), tucker.is_empty()) {
            ([ri, rc], true) => {
                cfg.lr_ranks = vec![*ri; n];
                cfg.tucker_ranks = vec![cfg.dims[..d - 1].iter().map(|&nk| (*rc).min(nk)).collect()];
            }
            (_, false) => {
                cfg.lr_ranks = lr;
                cfg.tucker_ranks = tucker;
            }
            _ => {
                return Err(CliError::Config(
                    "GTLD ranks are 'ri,rc' or 'L1,...,LN;R1xR2...'".into(),
                ))
            }
        },
    }
    Ok(())
}
