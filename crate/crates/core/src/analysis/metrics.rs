//! External clustering indices and classification scores.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::AnalysisError;

/// Contingency table of two labelings with its row and column sums.
struct Contingency {
    table: Vec<Vec<usize>>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    n: usize,
}

fn relabel(a: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    a.iter()
        .map(|v| {
            let next = map.len();
            *map.entry(*v).or_insert(next)
        })
        .collect()
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Dimension(format!(
            "labelings of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(AnalysisError::Invalid("at least two elements are needed".into()));
    }
    let (a, b) = (relabel(a), relabel(b));
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0; kb]; ka];
    for (&i, &j) in a.iter().zip(&b) {
        table[i][j] += 1;
    }
    let rows = table.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..kb).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    Ok(Contingency {
        table,
        rows,
        cols,
        n: a.len(),
    })
}

fn pairs(n: usize) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Pair counts `(together in both, together in a, together in b, all pairs)`.
fn pair_counts(c: &Contingency) -> (f64, f64, f64, f64) {
    let both = c.table.iter().flatten().map(|&v| pairs(v)).sum();
    let in_a = c.rows.iter().map(|&v| pairs(v)).sum();
    let in_b = c.cols.iter().map(|&v| pairs(v)).sum();
    (both, in_a, in_b, pairs(c.n))
}

fn same_partition(c: &Contingency) -> bool {
    c.table
        .iter()
        .all(|r| r.iter().filter(|&&v| v > 0).count() <= 1)
        && c.rows.len() == c.cols.len()
}

/// Adjusted Rand index.
pub fn adjusted_rand(a: &[usize], b: &[usize]) -> Result<f64, AnalysisError> {
    let c = contingency(a, b)?;
    let (both, in_a, in_b, total) = pair_counts(&c);
    let expected = in_a * in_b / total;
    let max = 0.5 * (in_a + in_b);
    if max == expected {
        return Ok(if same_partition(&c) { 1.0 } else { 0.0 });
    }
    Ok((both - expected) / (max - expected))
}

/// Fowlkes-Mallows index over pair counts.
pub fn fowlkes_mallows(a: &[usize], b: &[usize]) -> Result<f64, AnalysisError> {
    let c = contingency(a, b)?;
    let (both, in_a, in_b, _) = pair_counts(&c);
    if in_a == 0.0 && in_b == 0.0 {
        return Ok(1.0);
    }
    if in_a == 0.0 || in_b == 0.0 {
        return Ok(0.0);
    }
    Ok(both / (in_a * in_b).sqrt())
}

fn entropy(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&v| v > 0)
        .map(|&v| {
            let p = v as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

fn mutual_info(c: &Contingency) -> f64 {
    let n = c.n as f64;
    let mut mi = 0.0;
    for (i, row) in c.table.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0 {
                let v = v as f64;
                mi += v / n * (n * v / (c.rows[i] as f64 * c.cols[j] as f64)).ln();
            }
        }
    }
    mi
}

/// Expected mutual information under the hypergeometric model.
fn expected_mutual_info(c: &Contingency) -> f64 {
    let n = c.n;
    let mut log_fact = vec![0.0; n + 1];
    for k in 1..=n {
        log_fact[k] = log_fact[k - 1] + (k as f64).ln();
    }
    let nf = n as f64;
    let mut emi = 0.0;
    for &a in &c.rows {
        for &b in &c.cols {
            let lo = (a + b).saturating_sub(n).max(1);
            let hi = a.min(b);
            for nij in lo..=hi {
                let x = nij as f64;
                let term = x / nf * (nf * x / (a as f64 * b as f64)).ln();
                let log_p = log_fact[a] + log_fact[b] + log_fact[n - a] + log_fact[n - b]
                    - log_fact[n]
                    - log_fact[nij]
                    - log_fact[a - nij]
                    - log_fact[b - nij]
                    - log_fact[n + nij - a - b];
                emi += term * log_p.exp();
            }
        }
    }
    emi
}

/// Adjusted mutual information, normalized by `max(H(a), H(b))`.
pub fn adjusted_mutual_info(a: &[usize], b: &[usize]) -> Result<f64, AnalysisError> {
    let c = contingency(a, b)?;
    let ha = entropy(&c.rows, c.n);
    let hb = entropy(&c.cols, c.n);
    let mi = mutual_info(&c);
    let emi = expected_mutual_info(&c);
    let denom = ha.max(hb) - emi;
    if denom.abs() <= 1e-12 * ha.max(hb).max(1.0) {
        return Ok(if same_partition(&c) { 1.0 } else { 0.0 });
    }
    Ok((mi - emi) / denom)
}

/// `counts[t][p]`: instances of true class `t` predicted as `p`.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], n_classes: usize) -> DMatrix<usize> {
    let mut m = DMatrix::zeros(n_classes, n_classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        m[(t, p)] += 1;
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy and macro-averaged precision, recall and F1 (per-class F1
/// averaged); empty denominators count as 0.
pub fn macro_scores(confusion: &DMatrix<usize>) -> ClassScores {
    let k = confusion.nrows();
    let total: usize = confusion.iter().sum();
    let correct: usize = (0..k).map(|i| confusion[(i, i)]).sum();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for i in 0..k {
        let tp = confusion[(i, i)];
        let pi = ratio(tp, confusion.column(i).sum());
        let ri = ratio(tp, confusion.row(i).sum());
        p += pi;
        r += ri;
        if pi + ri > 0.0 {
            f += 2.0 * pi * ri / (pi + ri);
        }
    }
    let k = k.max(1) as f64;
    ClassScores {
        accuracy: ratio(correct, total),
        precision: p / k,
        recall: r / k,
        f1: f / k,
    }
}
