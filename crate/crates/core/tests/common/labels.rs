//! Brute-force clustering-index oracles: pair and contingency enumeration.

pub fn comb2(n: usize) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Pair counts by enumerating every pair of elements.
pub fn pair_enumeration(a: &[usize], b: &[usize]) -> (f64, f64, f64, f64) {
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            both += (sa && sb) as u8 as f64;
            in_a += sa as u8 as f64;
            in_b += sb as u8 as f64;
        }
    }
    (both, in_a, in_b, comb2(n))
}

pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let n = a.len();
    (0..n).all(|i| (0..n).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

pub fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    let (both, in_a, in_b, total) = pair_enumeration(a, b);
    let expected = in_a * in_b / total;
    let max = 0.5 * (in_a + in_b);
    if max == expected {
        return if same_partition(a, b) { 1.0 } else { 0.0 };
    }
    (both - expected) / (max - expected)
}

pub fn fm_oracle(a: &[usize], b: &[usize]) -> f64 {
    let (both, in_a, in_b, _) = pair_enumeration(a, b);
    if in_a == 0.0 && in_b == 0.0 {
        1.0
    } else if in_a == 0.0 || in_b == 0.0 {
        0.0
    } else {
        both / (in_a * in_b).sqrt()
    }
}

pub fn mi_by_cells(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut mi = 0.0;
    let mut la: Vec<usize> = a.to_vec();
    la.sort_unstable();
    la.dedup();
    let mut lb: Vec<usize> = b.to_vec();
    lb.sort_unstable();
    lb.dedup();
    for &x in &la {
        for &y in &lb {
            let nij = a.iter().zip(b).filter(|&(&p, &q)| p == x && q == y).count() as f64;
            if nij > 0.0 {
                let ni = a.iter().filter(|&&p| p == x).count() as f64;
                let nj = b.iter().filter(|&&q| q == y).count() as f64;
                mi += nij / n * (n * nij / (ni * nj)).ln();
            }
        }
    }
    mi
}

pub fn entropy(a: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut l: Vec<usize> = a.to_vec();
    l.sort_unstable();
    l.dedup();
    -l.iter()
        .map(|&x| {
            let p = a.iter().filter(|&&v| v == x).count() as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Expected MI as the average over every relabeling permutation of `b`.
pub fn ami_oracle(a: &[usize], b: &[usize], perms: &[Vec<usize>]) -> f64 {
    let emi = perms
        .iter()
        .map(|p| {
            let pb: Vec<usize> = p.iter().map(|&i| b[i]).collect();
            mi_by_cells(a, &pb)
        })
        .sum::<f64>()
        / perms.len() as f64;
    let h = entropy(a).max(entropy(b));
    let denom = h - emi;
    if denom.abs() <= 1e-12 * h.max(1.0) {
        return if same_partition(a, b) { 1.0 } else { 0.0 };
    }
    (mi_by_cells(a, b) - emi) / denom
}
