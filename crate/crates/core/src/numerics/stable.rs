//! Positive α-stable variates with Laplace transform exp(−s^α).

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::rng::RngStream;
use crate::error::{Error, Result};

/// One draw using the stream's first variates.
pub fn sample_positive_stable(alpha: f64, rng: RngStream) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(positive_stable(alpha, &mut rng.rng()))
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("stable index {alpha} outside (0, 1]")));
    }
    Ok(())
}

/// Kanter's representation; `alpha` must lie in (0, 1].
pub fn positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    if alpha == 1.0 {
        return 1.0;
    }
    let u: f64 = std::f64::consts::PI * rng.random::<f64>();
    let e: f64 = Exp1.sample(rng);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / e).powf((1.0 - alpha) / alpha);
    a * b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_at_one() {
        assert_eq!(sample_positive_stable(1.0, RngStream::new(3)).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range() {
        assert!(sample_positive_stable(0.0, RngStream::new(3)).is_err());
        assert!(sample_positive_stable(1.5, RngStream::new(3)).is_err());
    }

    #[test]
    fn laplace_transform_identity() {
        let mut r = RngStream::new(11).rng();
        let n = 1_000_000;
        let m: f64 = (0..n).map(|_| (-positive_stable(0.5, &mut r)).exp()).sum::<f64>() / n as f64;
        assert!((m - (-1.0f64).exp()).abs() < 0.01);
    }

    #[test]
    fn reproducible() {
        let a = sample_positive_stable(0.7, RngStream::with_stream(4, 2)).unwrap();
        let b = sample_positive_stable(0.7, RngStream::with_stream(4, 2)).unwrap();
        assert_eq!(a, b);
    }
}
