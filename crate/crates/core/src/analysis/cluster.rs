//! Pairwise distances and agglomerative clustering.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    L2,
    Canberra,
    Cosine,
    Correlation,
    /// `1 - exp(-||x - y||^2 / sigma^2)`, sigma the median nonzero l2 distance.
    #[serde(rename = "exp-l2")]
    ExpL2,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::L1,
        Metric::L2,
        Metric::Canberra,
        Metric::Cosine,
        Metric::Correlation,
        Metric::ExpL2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Canberra => "canberra",
            Metric::Cosine => "cosine",
            Metric::Correlation => "correlation",
            Metric::ExpL2 => "exp-l2",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| AnalysisError::Invalid(format!("unknown metric '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Average,
    Complete,
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
        })
    }
}

impl FromStr for Linkage {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            _ => Err(AnalysisError::Invalid(format!("unknown linkage '{s}'"))),
        }
    }
}

fn l2(x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (x - y).norm()
}

fn cosine(x: &DVector<f64>, y: &DVector<f64>, what: &'static str) -> Result<f64, AnalysisError> {
    let (nx, ny) = (x.norm(), y.norm());
    if nx == 0.0 || ny == 0.0 {
        return Err(AnalysisError::ZeroNorm(what));
    }
    Ok((1.0 - x.dot(y) / (nx * ny)).max(0.0))
}

fn centered(x: &DVector<f64>) -> DVector<f64> {
    x.add_scalar(-x.mean())
}

/// Symmetric distance matrix with zero diagonal.
pub fn pairwise_distance(
    features: &[DVector<f64>],
    metric: Metric,
) -> Result<DMatrix<f64>, AnalysisError> {
    let n = features.len();
    if n == 0 {
        return Err(AnalysisError::Invalid("no features".into()));
    }
    let len = features[0].len();
    if features.iter().any(|f| f.len() != len) {
        return Err(AnalysisError::Dimension("features differ in length".into()));
    }
    let prepared: Vec<DVector<f64>> = match metric {
        Metric::Correlation => features.iter().map(centered).collect(),
        _ => features.to_vec(),
    };
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let (x, y) = (&prepared[i], &prepared[j]);
            let v = match metric {
                Metric::L1 => (x - y).abs().sum(),
                Metric::L2 | Metric::ExpL2 => l2(x, y),
                Metric::Canberra => x
                    .iter()
                    .zip(y.iter())
                    .map(|(a, b)| {
                        let den = a.abs() + b.abs();
                        if den == 0.0 {
                            0.0
                        } else {
                            (a - b).abs() / den
                        }
                    })
                    .sum(),
                Metric::Cosine => cosine(x, y, "cosine")?,
                Metric::Correlation => cosine(x, y, "correlation")?,
            };
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    if metric == Metric::ExpL2 {
        let mut nonzero: Vec<f64> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| d[(i, j)])
            .filter(|&v| v > 0.0)
            .collect();
        if !nonzero.is_empty() {
            nonzero.sort_by(f64::total_cmp);
            let m = nonzero.len();
            let sigma = if m % 2 == 1 {
                nonzero[m / 2]
            } else {
                0.5 * (nonzero[m / 2 - 1] + nonzero[m / 2])
            };
            d = d.map(|v| 1.0 - (-(v * v) / (sigma * sigma)).exp());
        }
    }
    Ok(d)
}

/// One merge step. Leaves are `0..N`; the cluster created at step `s` gets
/// id `N + s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

/// Full merge history with Lance-Williams updates; ties go to the pair of
/// smallest cluster ids.
pub fn dendrogram(d: &DMatrix<f64>, linkage: Linkage) -> Result<Dendrogram, AnalysisError> {
    let n = d.nrows();
    if n == 0 || d.ncols() != n {
        return Err(AnalysisError::Dimension(format!(
            "distance matrix is {}x{}",
            d.nrows(),
            d.ncols()
        )));
    }
    let scale = d.amax().max(1.0);
    for i in 0..n {
        if d[(i, i)].abs() > 1e-12 * scale {
            return Err(AnalysisError::Invalid("distance diagonal must be zero".into()));
        }
        for j in 0..i {
            if (d[(i, j)] - d[(j, i)]).abs() > 1e-12 * scale {
                return Err(AnalysisError::Invalid("distance matrix is not symmetric".into()));
            }
        }
    }
    // active clusters keyed by slot; `ids[slot]` is the current cluster id
    let mut dist = d.clone();
    let mut ids: Vec<usize> = (0..n).collect();
    let mut sizes = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                let (lo, hi) = (ids[i].min(ids[j]), ids[i].max(ids[j]));
                let cand = (dist[(i, j)], lo, hi, i, j);
                let better = match best {
                    None => true,
                    Some(b) => (cand.0, cand.1, cand.2) < (b.0, b.1, b.2),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (h, lo, hi, i, j) = best.expect("two active clusters remain");
        let (ni, nj) = (sizes[i] as f64, sizes[j] as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let v = match linkage {
                Linkage::Average => (ni * dist[(k, i)] + nj * dist[(k, j)]) / (ni + nj),
                Linkage::Complete => dist[(k, i)].max(dist[(k, j)]),
            };
            dist[(k, i)] = v;
            dist[(i, k)] = v;
        }
        active[j] = false;
        sizes[i] += sizes[j];
        ids[i] = n + step;
        merges.push(Merge {
            a: lo,
            b: hi,
            height: h,
            size: sizes[i],
        });
    }
    Ok(Dendrogram {
        n_leaves: n,
        merges,
    })
}

/// Labels after the first `N - k` merges, numbered by smallest member.
pub fn cut_tree(tree: &Dendrogram, k: usize) -> Result<Vec<usize>, AnalysisError> {
    let n = tree.n_leaves;
    if k == 0 || k > n {
        return Err(AnalysisError::Invalid(format!("{k} clusters for {n} points")));
    }
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        parent[x] = r;
        r
    }
    for (s, m) in tree.merges.iter().take(n - k).enumerate() {
        parent[m.a] = n + s;
        parent[m.b] = n + s;
    }
    let mut roots = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let r = find(&mut parent, i);
        let label = match roots.iter().position(|&x| x == r) {
            Some(p) => p,
            None => {
                roots.push(r);
                roots.len() - 1
            }
        };
        labels.push(label);
    }
    Ok(labels)
}

/// Cluster labels for `k` clusters.
pub fn agglomerative(
    d: &DMatrix<f64>,
    linkage: Linkage,
    k: usize,
) -> Result<Vec<usize>, AnalysisError> {
    if k == 0 || k > d.nrows() {
        return Err(AnalysisError::Invalid(format!(
            "{k} clusters for {} points",
            d.nrows()
        )));
    }
    cut_tree(&dendrogram(d, linkage)?, k)
}
