use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use super::{CtmError, Result};
use crate::special::bessel_i1_scaled;

/// Draws `n_samples` of `S = sum_{i=1..N} lambda_i` with `N ~ Pois(rho_topic)` and
/// `lambda_i ~ Ga(shape, rate)`; `S = 0` when `N = 0`.
///
/// A sum of `N` independent `Ga(shape, rate)` variables is exactly `Ga(N shape, rate)`,
/// so each draw costs one Poisson and at most one Gamma variate regardless of `N`.
pub fn sample_aggregated_strength(
    rho_topic: f64,
    shape: f64,
    rate: f64,
    n_samples: usize,
    rng_seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let sampler = AggregatedStrength::new(rho_topic, shape, rate)?;
    Ok((0..n_samples).map(|_| sampler.draw(&mut rng)).collect())
}

/// Joint draw of the per-topic aggregated strengths `S_1..S_K` in the
/// high-activity parameterisation: contribution shape `alpha_0 = kappa / rho_d`,
/// topic counts `N_k ~ Pois(rho_d theta_k)`. Returns `n_samples` rows of length K.
pub fn sample_topic_strengths(
    theta: &[f64],
    kappa: f64,
    rho_d: f64,
    rate: f64,
    n_samples: usize,
    rng_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if !(kappa > 0.0 && rho_d > 0.0) {
        return Err(CtmError::InvalidParams("kappa and rho_d must be positive".into()));
    }
    let shape = kappa / rho_d;
    let samplers = theta
        .iter()
        .map(|&t| AggregatedStrength::new(rho_d * t, shape, rate))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..n_samples)
        .map(|_| samplers.iter().map(|s| s.draw(&mut rng)).collect())
        .collect())
}

struct AggregatedStrength {
    count: Option<Poisson<f64>>,
    shape: f64,
    scale: f64,
}

impl AggregatedStrength {
    fn new(rho: f64, shape: f64, rate: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(CtmError::InvalidParams("Poisson rate must be nonnegative".into()));
        }
        if !(shape > 0.0 && rate > 0.0) {
            return Err(CtmError::InvalidParams("Gamma shape and rate must be positive".into()));
        }
        let count = if rho > 0.0 {
            Some(Poisson::new(rho).map_err(|e| CtmError::InvalidParams(e.to_string()))?)
        } else {
            None
        };
        Ok(Self { count, shape, scale: 1.0 / rate })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        let n = match &self.count {
            Some(p) => p.sample(rng),
            None => 0.0,
        };
        if n == 0.0 {
            return 0.0;
        }
        Gamma::new(n * self.shape, self.scale)
            .expect("positive shape")
            .sample(rng)
    }
}

/// Continuous part of the compound Poisson-Gamma law with unit contribution shape:
/// `f(a) = exp(-(rho + rate a)) sqrt(rho rate / a) I_1(2 sqrt(rho rate a))` for `a > 0`.
/// The remaining mass sits at zero, see [`compound_gamma_zero_mass`].
pub fn compound_gamma_pdf(a: f64, rho: f64, rate: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(CtmError::Domain(format!("density defined only for a > 0, got {a}")));
    }
    if !(rho > 0.0 && rate > 0.0) {
        return Err(CtmError::InvalidParams("rho and rate must be positive".into()));
    }
    let x = 2.0 * (rho * rate * a).sqrt();
    // I_1(x) = e^x * scaled(x), folded into the exponent.
    let log_prefix = -(rho + rate * a) + x + 0.5 * (rho * rate / a).ln();
    Ok(log_prefix.exp() * bessel_i1_scaled(x))
}

/// Probability that no contribution lands on the topic: `e^{-rho}`.
pub fn compound_gamma_zero_mass(rho: f64) -> f64 {
    (-rho).exp()
}
