use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// i.i.d. `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, with `fan_in` the column count.
    ScaledUniform,
    /// i.i.d. `N(0, std^2)`.
    Normal { std: f64 },
}

pub fn init_params(rng: &mut Rng, scheme: InitScheme, rows: usize, cols: usize) -> Tensor {
    assert!(rows > 0 && cols > 0, "parameter shape must be positive");
    let data = match scheme {
        InitScheme::ScaledUniform => {
            let bound = 1.0 / (cols as f64).sqrt();
            (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect()
        }
        InitScheme::Normal { std } => (0..rows * cols).map(|_| std * rng.normal()).collect(),
    };
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_a_seed() {
        let a = init_params(&mut Rng::new(42), InitScheme::ScaledUniform, 8, 5);
        let b = init_params(&mut Rng::new(42), InitScheme::ScaledUniform, 8, 5);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn bounded_by_fan_in() {
        let t = init_params(&mut Rng::new(1), InitScheme::ScaledUniform, 64, 49);
        let bound = 1.0 / 7.0;
        assert!(t.data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn sample_mean_is_near_zero() {
        // U(-b, b) has std b / sqrt(3); the mean of m draws has std b / sqrt(3 m).
        let m = 100_000;
        let t = init_params(&mut Rng::new(5), InitScheme::ScaledUniform, m, 4);
        let mean = t.column(0).iter().sum::<f64>() / m as f64;
        let sigma = 0.5 / (3.0 * m as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}, 3 sigma {}", 3.0 * sigma);
    }
}
