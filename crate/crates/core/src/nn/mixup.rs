use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::tensor::Real;
use crate::error::{Error, Result};

/// `Beta(alpha, alpha)` as `X / (X + Y)` with `X, Y ~ Gamma(alpha, 1)`.
pub fn sample_beta(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!("mixup alpha must be positive, got {alpha}")));
    }
    let g = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidInput(format!("gamma({alpha}): {e}")))?;
    let x = g.sample(rng);
    let y = g.sample(rng);
    // both draws can underflow for tiny alpha; the limit is a fair coin on {0, 1}
    if x + y == 0.0 {
        return Ok(if rng.gen::<bool>() { 1.0 } else { 0.0 });
    }
    Ok(x / (x + y))
}

/// `(λ x_a + (1−λ) x_b, λ y_a + (1−λ) y_b)`.
pub fn mixup_with_lambda<T: Real>(x_a: &[T], y_a: &[T], x_b: &[T], y_b: &[T], lambda: f64) -> Result<(Vec<T>, Vec<T>)> {
    if x_a.len() != x_b.len() || y_a.len() != y_b.len() {
        return Err(Error::Shape("mixup operands differ in shape".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!("mixup weight {lambda} outside [0, 1]")));
    }
    let l = T::lit(lambda);
    let r = T::lit(1.0 - lambda);
    let mix = |a: &[T], b: &[T]| a.iter().zip(b).map(|(&u, &v)| l * u + r * v).collect::<Vec<T>>();
    Ok((mix(x_a, x_b), mix(y_a, y_b)))
}

/// Mixed inputs, soft labels and the drawn weight.
#[derive(Debug, Clone)]
pub struct Mixed<T> {
    pub inputs: Vec<T>,
    pub targets: Vec<T>,
    pub lambda: f64,
}

pub fn mixup<T: Real>(x_a: &[T], y_a: &[T], x_b: &[T], y_b: &[T], alpha: f64, rng: &mut impl Rng) -> Result<Mixed<T>> {
    let lambda = sample_beta(alpha, rng)?;
    let (inputs, targets) = mixup_with_lambda(x_a, y_a, x_b, y_b, lambda)?;
    Ok(Mixed { inputs, targets, lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_operands_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = [0.25f64, -1.0, 3.0];
        let y = [0.0f64, 1.0];
        for _ in 0..10 {
            let m = mixup(&x, &y, &x, &y, 0.05, &mut rng).unwrap();
            for (a, b) in m.inputs.iter().zip(&x) {
                assert!((a - b).abs() < 1e-15);
            }
            for (a, b) in m.targets.iter().zip(&y) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn lambda_one_returns_first() {
        let (x, y) = mixup_with_lambda(&[1.0f64, 2.0], &[1.0, 0.0], &[5.0, 6.0], &[0.0, 1.0], 1.0).unwrap();
        assert_eq!((x, y), (vec![1.0, 2.0], vec![1.0, 0.0]));
    }

    #[test]
    fn soft_labels_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let m = mixup(&[0.0f64], &[1.0, 0.0], &[1.0], &[0.0, 1.0], 0.05, &mut rng).unwrap();
            assert!((m.targets[0] + m.targets[1] - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&m.lambda));
        }
    }

    #[test]
    fn beta_mean_is_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_beta(0.05, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn invalid_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(sample_beta(0.0, &mut rng).is_err());
        assert!(sample_beta(f64::NAN, &mut rng).is_err());
    }
}
