//! Least-squares adversarial objectives with per-point terms.
//!
//! Point terms are skipped when the score sets carry no point scores (the
//! point head is disabled).

use ndarray::Array1;

use crate::discriminator::DiscriminatorScores;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_points<T>(fake: &DiscriminatorScores<T>, real: &DiscriminatorScores<T>) -> Result<()> {
    if fake.point_scores.len() != real.point_scores.len() {
        return Err(Error::invalid(
            "point_scores",
            format!(
                "fake has {} point scores, real has {}",
                fake.point_scores.len(),
                real.point_scores.len()
            ),
        ));
    }
    Ok(())
}

fn sq_dev<T: Scalar>(v: &Array1<T>, target: f64) -> f64 {
    v.iter().map(|&p| (p.as_f64() - target).powi(2)).sum()
}

/// `½[D(P)² + (D(P̂)−1)²] + λ/(2N) Σ[D(p_i)² + (D(p̂_i)−1)²]`
pub fn loss_discriminator<T: Scalar>(
    fake: &DiscriminatorScores<T>,
    real: &DiscriminatorScores<T>,
    lambda: f64,
) -> Result<f64> {
    check_points(fake, real)?;
    let shape = 0.5 * (fake.shape_score.as_f64().powi(2) + (real.shape_score.as_f64() - 1.0).powi(2));
    let n = fake.point_scores.len();
    if n == 0 || lambda == 0.0 {
        return Ok(shape);
    }
    let point = (sq_dev(&fake.point_scores, 0.0) + sq_dev(&real.point_scores, 1.0)) / (2.0 * n as f64);
    Ok(shape + lambda * point)
}

/// `½[D(P)−1]² + β/(2N) Σ[D(p_i)−1]²`
pub fn loss_generator<T: Scalar>(fake: &DiscriminatorScores<T>, beta: f64) -> f64 {
    let shape = 0.5 * (fake.shape_score.as_f64() - 1.0).powi(2);
    let n = fake.point_scores.len();
    if n == 0 || beta == 0.0 {
        return shape;
    }
    shape + beta * sq_dev(&fake.point_scores, 1.0) / (2.0 * n as f64)
}

/// Gradients of [`loss_discriminator`] with respect to the fake and real scores.
pub fn loss_discriminator_grad<T: Scalar>(
    fake: &DiscriminatorScores<T>,
    real: &DiscriminatorScores<T>,
    lambda: f64,
) -> Result<(DiscriminatorScores<T>, DiscriminatorScores<T>)> {
    check_points(fake, real)?;
    let n = fake.point_scores.len().max(1) as f64;
    let w = T::of(lambda / n);
    let one = T::one();
    Ok((
        DiscriminatorScores {
            shape_score: fake.shape_score,
            point_scores: fake.point_scores.mapv(|p| w * p),
        },
        DiscriminatorScores {
            shape_score: real.shape_score - one,
            point_scores: real.point_scores.mapv(|p| w * (p - one)),
        },
    ))
}

/// Gradient of [`loss_generator`] with respect to the fake scores.
pub fn loss_generator_grad<T: Scalar>(fake: &DiscriminatorScores<T>, beta: f64) -> DiscriminatorScores<T> {
    let n = fake.point_scores.len().max(1) as f64;
    let w = T::of(beta / n);
    let one = T::one();
    DiscriminatorScores {
        shape_score: fake.shape_score - one,
        point_scores: fake.point_scores.mapv(|p| w * (p - one)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(shape: f64, points: Vec<f64>) -> DiscriminatorScores<f64> {
        DiscriminatorScores {
            shape_score: shape,
            point_scores: Array1::from(points),
        }
    }

    #[test]
    fn perfect_discriminator_is_zero() {
        let fake = scores(0.0, vec![0.0; 5]);
        let real = scores(1.0, vec![1.0; 5]);
        assert_eq!(loss_discriminator(&fake, &real, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn half_everywhere_gives_half() {
        let fake = scores(0.5, vec![0.5; 7]);
        let real = scores(0.5, vec![0.5; 7]);
        assert!((loss_discriminator(&fake, &real, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn generator_examples() {
        assert_eq!(loss_generator(&scores(1.0, vec![1.0; 4]), 1.0), 0.0);
        assert!((loss_generator(&scores(0.0, vec![0.0; 4]), 1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_point_counts_rejected() {
        assert!(loss_discriminator(&scores(0.0, vec![0.0; 2]), &scores(0.0, vec![0.0; 3]), 1.0).is_err());
    }

    proptest! {
        #[test]
        fn zero_weights_reduce_to_shape_terms(
            sf in -3.0f64..3.0, sr in -3.0f64..3.0,
            pf in proptest::collection::vec(-3.0f64..3.0, 1..16),
            seed in -3.0f64..3.0,
        ) {
            let pr: Vec<f64> = pf.iter().map(|v| v * 0.5 + seed).collect();
            let fake = scores(sf, pf);
            let real = scores(sr, pr);
            let d = loss_discriminator(&fake, &real, 0.0).unwrap();
            prop_assert_eq!(d, 0.5 * (sf * sf + (sr - 1.0) * (sr - 1.0)));
            prop_assert_eq!(loss_generator(&fake, 0.0), 0.5 * (sf - 1.0) * (sf - 1.0));
            prop_assert!(loss_discriminator(&fake, &real, 2.0).unwrap() >= 0.0);
            prop_assert!(loss_generator(&fake, 2.0) >= 0.0);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fake = scores(0.3, vec![0.1, -0.4, 0.9, 1.3]);
        let real = scores(0.8, vec![0.7, 0.2, -0.1, 1.1]);
        let (lambda, beta) = (0.7, 1.3);
        let (gf, gr) = loss_discriminator_grad(&fake, &real, lambda).unwrap();
        let gg = loss_generator_grad(&fake, beta);
        let h = 1e-6;
        let fd = |f: &dyn Fn(f64) -> f64| (f(h) - f(-h)) / (2.0 * h);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
        let num = fd(&|e| {
            let mut f = fake.clone();
            f.shape_score += e;
            loss_discriminator(&f, &real, lambda).unwrap()
        });
        assert!(rel(gf.shape_score, num) < 1e-6);
        let num = fd(&|e| {
            let mut r = real.clone();
            r.shape_score += e;
            loss_discriminator(&fake, &r, lambda).unwrap()
        });
        assert!(rel(gr.shape_score, num) < 1e-6);
        for i in 0..4 {
            let num = fd(&|e| {
                let mut f = fake.clone();
                f.point_scores[i] += e;
                loss_discriminator(&f, &real, lambda).unwrap()
            });
            assert!(rel(gf.point_scores[i], num) < 1e-6);
            let num = fd(&|e| {
                let mut r = real.clone();
                r.point_scores[i] += e;
                loss_discriminator(&fake, &r, lambda).unwrap()
            });
            assert!(rel(gr.point_scores[i], num) < 1e-6);
            let num = fd(&|e| {
                let mut f = fake.clone();
                f.point_scores[i] += e;
                loss_generator(&f, beta)
            });
            assert!(rel(gg.point_scores[i], num) < 1e-6);
        }
    }
}
