//! Sample L-moments from unbiased probability-weighted moments.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LMoments {
    pub l1: f64,
    pub l2: f64,
    /// L-CV, l2/l1.
    pub t: f64,
    pub t3: f64,
    pub t4: f64,
}

pub fn l_moments(sample: &[f64]) -> Result<LMoments> {
    let n = sample.len();
    if n < 4 {
        return Err(Error::input("at least four observations are required for L-moments"));
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let (mut b0, mut b1, mut b2, mut b3) = (0.0, 0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let j = i as f64;
        b0 += v;
        b1 += v * j / (nf - 1.0);
        b2 += v * j * (j - 1.0) / ((nf - 1.0) * (nf - 2.0));
        b3 += v * j * (j - 1.0) * (j - 2.0) / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0));
    }
    b0 /= nf;
    b1 /= nf;
    b2 /= nf;
    b3 /= nf;
    let l1 = b0;
    let l2 = 2.0 * b1 - b0;
    let l3 = 6.0 * b2 - 6.0 * b1 + b0;
    let l4 = 20.0 * b3 - 30.0 * b2 + 12.0 * b1 - b0;
    let (t3, t4) = if l2.abs() > 1e-300 { (l3 / l2, l4 / l2) } else { (0.0, 0.0) };
    Ok(LMoments { l1, l2, t: l2 / l1, t3, t4 })
}
