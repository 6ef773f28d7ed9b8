//! Average ranks and rank-based pseudo-uniforms.

/// 1-based ranks with ties receiving their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut r = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// rank / (n + 1).
pub fn pseudo_uniforms(x: &[f64]) -> Vec<f64> {
    let n1 = x.len() as f64 + 1.0;
    average_ranks(x).into_iter().map(|r| r / n1).collect()
}
