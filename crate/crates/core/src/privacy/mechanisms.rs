//! Noise mechanisms on a power-of-two granularity grid.
//!
//! Inputs are rounded (half to even) onto the grid `granularity * Z` before
//! any noise is added, and the noise itself is an exact integer number of
//! grid steps. Outputs are therefore always `granularity * k` for an integer
//! `k`, whatever the input's float structure was.

use rand::Rng;

use super::sampler::{
    bernoulli_exp_f64, dyadic_parts, sample_discrete_gaussian, sample_discrete_laplace, Rational,
};
use crate::error::{Error, Result};

/// Grid resolution relative to the noise scale: granularity ≤ scale · 2⁻³⁰.
pub const GRID_BITS: i32 = 30;
/// Smallest granularity exponent ever used.
pub const MIN_GRID_EXP: i32 = -1040;

/// A noise scale together with the grid it is sampled on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseScale {
    sigma: f64,
    granularity_exp: i32,
    ratio: Rational,
}

fn floor_log2(x: f64) -> i32 {
    let (m, e) = dyadic_parts(x);
    e + 63 - m.leading_zeros() as i32
}

impl NoiseScale {
    /// Noise scale `sigma` with granularity the largest power of two that is
    /// at most `sigma · 2⁻³⁰` (floored at `2⁻¹⁰⁴⁰`).
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("noise scale must be positive and finite, got {sigma}")));
        }
        let granularity_exp = (floor_log2(sigma) - GRID_BITS).max(MIN_GRID_EXP);
        let (m, e) = dyadic_parts(sigma);
        // sigma / 2^g = m * 2^(e - g)
        let shift = e - granularity_exp;
        let ratio = if shift >= 0 {
            let num = (m as u128).checked_shl(shift as u32).filter(|v| v >> shift == m as u128);
            match num {
                Some(num) => Rational::new(num, 1)?,
                None => return Err(Error::invalid(format!("noise scale {sigma} out of range"))),
            }
        } else if -shift < 127 {
            Rational::new(m as u128, 1u128 << (-shift))?
        } else {
            return Err(Error::invalid(format!("noise scale {sigma} out of range")));
        };
        Ok(Self { sigma, granularity_exp, ratio })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn granularity(&self) -> f64 {
        scale_pow2(1.0, self.granularity_exp)
    }

    pub fn granularity_exp(&self) -> i32 {
        self.granularity_exp
    }

    /// The scale measured in grid steps, exactly.
    pub fn grid_scale(&self) -> Rational {
        self.ratio
    }

    /// Rounds `value` half-to-even onto the grid and returns the integer
    /// number of grid steps.
    pub fn to_grid_units(&self, value: f64) -> Result<i128> {
        if !value.is_finite() {
            return Err(Error::invalid(format!("mechanism input must be finite, got {value}")));
        }
        let scaled = scale_pow2(value, -self.granularity_exp);
        if !scaled.is_finite() || scaled.abs() >= 2f64.powi(120) {
            return Err(Error::invalid(format!("value {value} too large for the noise grid")));
        }
        Ok(scaled.round_ties_even() as i128)
    }

    /// Converts an integer number of grid steps back to a float.
    pub fn from_grid_units(&self, units: i128) -> f64 {
        scale_pow2(units as f64, self.granularity_exp)
    }
}

// x * 2^k without intermediate overflow/underflow for large |k|.
fn scale_pow2(x: f64, k: i32) -> f64 {
    let mut x = x;
    let mut k = k;
    while k > 1000 {
        x *= 2f64.powi(1000);
        k -= 1000;
    }
    while k < -1000 {
        x *= 2f64.powi(-1000);
        k += 1000;
    }
    x * 2f64.powi(k)
}

/// Adds discrete Gaussian noise of scale `sigma` to every value.
///
/// The caller is responsible for charging `sensitivity² / (2 sigma²)`.
pub fn gaussian_mechanism<R: Rng + ?Sized>(
    values: &[f64],
    sensitivity: f64,
    sigma: &NoiseScale,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sensitivity > 0.0) {
        return Err(Error::invalid(format!("sensitivity must be positive, got {sensitivity}")));
    }
    let scale = sigma.grid_scale();
    let units = values.iter().map(|&v| sigma.to_grid_units(v)).collect::<Result<Vec<_>>>()?;
    Ok(units
        .into_iter()
        .map(|u| sigma.from_grid_units(u + sample_discrete_gaussian(scale, rng)))
        .collect())
}

/// Adds discrete Laplace noise with scale `sensitivity / epsilon`.
pub fn laplace_mechanism<R: Rng + ?Sized>(value: f64, sensitivity: f64, epsilon: f64, rng: &mut R) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(sensitivity > 0.0) {
        return Err(Error::invalid(format!("sensitivity must be positive, got {sensitivity}")));
    }
    let noise = NoiseScale::new(sensitivity / epsilon)?;
    let units = noise.to_grid_units(value)?;
    Ok(noise.from_grid_units(units + sample_discrete_laplace(noise.grid_scale(), rng)))
}

/// Samples an index with probability proportional to
/// `exp(epsilon · score / (2 · sensitivity))`.
///
/// Implemented as exact rejection: a uniform proposal `i` is accepted with
/// probability `exp(-epsilon (max - score_i) / (2 sensitivity))`, using the
/// same exact coins as the noise samplers.
pub fn exponential_mechanism<R: Rng + ?Sized>(
    scores: &[f64],
    epsilon: f64,
    sensitivity: f64,
    rng: &mut R,
) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::invalid("exponential mechanism needs at least one candidate"));
    }
    if !(epsilon > 0.0) || !(sensitivity > 0.0) {
        return Err(Error::invalid(format!(
            "exponential mechanism needs epsilon > 0 and sensitivity > 0 (got {epsilon}, {sensitivity})"
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {bad}")));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gaps: Vec<f64> = scores
        .iter()
        .map(|&s| if s == max { 0.0 } else { epsilon * (max - s) / (2.0 * sensitivity) })
        .collect();
    loop {
        let i = rng.gen_range(0..scores.len());
        if bernoulli_exp_f64(rng, gaps[i]) {
            return Ok(i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn granularity_is_power_of_two_below_bound() {
        for sigma in [1.0, 10.0, 100.0, 0.3, 7.25e-8, 3.3e12] {
            let s = NoiseScale::new(sigma).unwrap();
            let g = s.granularity();
            assert!(g <= sigma * 2f64.powi(-30));
            assert!(2.0 * g > sigma * 2f64.powi(-30));
            let r = s.grid_scale();
            assert_eq!(r.num() as f64 / r.den() as f64, sigma / g);
        }
        assert!(NoiseScale::new(0.0).is_err());
        assert!(NoiseScale::new(f64::NAN).is_err());
    }

    #[test]
    fn outputs_on_grid() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let sigma = NoiseScale::new(3.7).unwrap();
        let values = [0.1, -2.5, 1e6 + 0.123456789, 0.0];
        let g = sigma.granularity();
        for _ in 0..200 {
            let out = gaussian_mechanism(&values, 1.0, &sigma, &mut rng).unwrap();
            for (v, o) in values.iter().zip(&out) {
                let rounded = (v / g).round_ties_even() * g;
                let k = (o - rounded) / g;
                assert_eq!(k, k.trunc());
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let sigma = NoiseScale::new(1.0).unwrap();
        assert!(gaussian_mechanism(&[f64::INFINITY], 1.0, &sigma, &mut rng).is_err());
        assert!(laplace_mechanism(f64::NAN, 1.0, 1.0, &mut rng).is_err());
        assert!(laplace_mechanism(0.0, 1.0, 0.0, &mut rng).is_err());
        assert!(exponential_mechanism(&[], 1.0, 1.0, &mut rng).is_err());
        assert!(exponential_mechanism(&[0.0, f64::NAN], 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn exponential_limit_and_softmax() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let scores = [0.3, 2.0, -1.0, 1.99];
        let hits = (0..1000).filter(|_| exponential_mechanism(&scores, 1e6, 1.0, &mut rng).unwrap() == 1).count();
        assert!(hits >= 999);
        let n = 100_000;
        let ones = (0..n).filter(|_| exponential_mechanism(&[0.0, 1.0], 2.0, 1.0, &mut rng).unwrap() == 1).count();
        let e = 1f64.exp();
        assert!((ones as f64 / n as f64 - e / (1.0 + e)).abs() < 0.01);
    }
}
