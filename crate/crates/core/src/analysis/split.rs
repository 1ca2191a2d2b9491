use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AnalysisError;

/// Fold index of each of `n` instances: a seeded shuffle dealt round-robin
/// into `k` folds of near-equal size.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<usize>, AnalysisError> {
    if k == 0 || k > n {
        return Err(AnalysisError::Invalid(format!("{k} folds for {n} instances")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    Ok(fold)
}

/// As [`kfold_split`], dealing each class separately so that every fold
/// gets a near-equal share of every class.
pub fn stratified_kfold_split(
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, AnalysisError> {
    let n = labels.len();
    if k == 0 || k > n {
        return Err(AnalysisError::Invalid(format!("{k} folds for {n} instances")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut fold = vec![0; n];
    let mut next = 0;
    for c in classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}
