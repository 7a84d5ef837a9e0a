//! Exact discrete samplers.
//!
//! Everything here works on integers and exact rationals. The only source of
//! randomness is uniform integers drawn from the rng, so no binary floating
//! point operation can shape the output distribution. The construction
//! follows the classic recipe: Bernoulli(exp(-x)) coins from Bernoulli(x/k)
//! trials, a discrete Laplace built from those coins, and a discrete Gaussian
//! by rejection from the discrete Laplace.

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use crate::error::{Error, Result};

/// A positive rational `num / den` with `u128` parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: u128,
    den: u128,
}

impl Rational {
    pub fn new(num: u128, den: u128) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::invalid(format!("scale must be a positive rational, got {num}/{den}")));
        }
        let g = num.gcd(&den);
        Ok(Self { num: num / g, den: den / g })
    }

    pub fn num(&self) -> u128 {
        self.num
    }

    pub fn den(&self) -> u128 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Splits a finite non-negative float into `(mantissa, exponent)` with
/// `x = mantissa * 2^exponent` exactly and the mantissa odd (or zero).
pub(crate) fn dyadic_parts(x: f64) -> (u64, i32) {
    debug_assert!(x.is_finite() && x >= 0.0);
    if x == 0.0 {
        return (0, 0);
    }
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mut m, mut e) = if biased == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), biased - 1075)
    };
    let tz = m.trailing_zeros();
    m >>= tz;
    e += tz as i32;
    (m, e)
}

/// Exact rational value of a finite non-negative float as `(num, den)`.
pub(crate) fn float_to_ratio(x: f64) -> (BigUint, BigUint) {
    let (m, e) = dyadic_parts(x);
    if e >= 0 {
        (BigUint::from(m) << (e as usize), BigUint::one())
    } else {
        (BigUint::from(m), BigUint::one() << ((-e) as usize))
    }
}

fn bernoulli_ratio_u128<R: Rng + ?Sized>(rng: &mut R, num: u128, den: u128) -> bool {
    rng.gen_range(0..den) < num
}

/// Bernoulli(exp(-num/den)) for `num <= den`.
fn bernoulli_exp_unit_u128<R: Rng + ?Sized>(rng: &mut R, num: u128, den: u128) -> bool {
    let mut k: u128 = 1;
    loop {
        let Some(scaled) = den.checked_mul(k) else {
            return bernoulli_exp_unit_big(rng, &BigUint::from(num), &(BigUint::from(den) * BigUint::from(k)), k);
        };
        if bernoulli_ratio_u128(rng, num, scaled) {
            k += 1;
        } else {
            return k % 2 == 1;
        }
    }
}

/// Bernoulli(exp(-num/den)) for any non-negative rational.
pub fn bernoulli_exp<R: Rng + ?Sized>(rng: &mut R, num: u128, den: u128) -> bool {
    debug_assert!(den > 0);
    let mut num = num;
    while num > den {
        if !bernoulli_exp_unit_u128(rng, 1, 1) {
            return false;
        }
        num -= den;
    }
    bernoulli_exp_unit_u128(rng, num, den)
}

// Continues the unit-interval loop of `bernoulli_exp_unit_u128` with
// arbitrary precision once `den * k` no longer fits; `scaled = den * k`.
fn bernoulli_exp_unit_big<R: Rng + ?Sized>(rng: &mut R, num: &BigUint, scaled: &BigUint, k: u128) -> bool {
    let den = scaled / BigUint::from(k);
    let mut k = BigUint::from(k);
    loop {
        let bound = &den * &k;
        if rng.gen_biguint_below(&bound) < *num {
            k += 1u32;
        } else {
            return k.is_odd();
        }
    }
}

/// Bernoulli(exp(-num/den)) with arbitrary-precision parts.
pub fn bernoulli_exp_big<R: Rng + ?Sized>(rng: &mut R, num: &BigUint, den: &BigUint) -> bool {
    debug_assert!(!den.is_zero());
    let (whole, rem) = num.div_rem(den);
    // exp(-n) for the integer part is a run of exp(-1) coins.
    let mut left = whole;
    while !left.is_zero() {
        if !bernoulli_exp_unit_u128(rng, 1, 1) {
            return false;
        }
        left -= 1u32;
    }
    if rem.is_zero() {
        return true;
    }
    if let (Some(n), Some(d)) = (rem.to_u128(), den.to_u128()) {
        return bernoulli_exp_unit_u128(rng, n, d);
    }
    let mut k = BigUint::one();
    loop {
        let bound = den * &k;
        if rng.gen_biguint_below(&bound) < rem {
            k += 1u32;
        } else {
            return k.is_odd();
        }
    }
}

/// Bernoulli(exp(-gamma)) where `gamma` is read as the exact rational value
/// of the float. Infinite `gamma` is a certain failure.
pub fn bernoulli_exp_f64<R: Rng + ?Sized>(rng: &mut R, gamma: f64) -> bool {
    debug_assert!(gamma >= 0.0 || gamma.is_nan());
    if gamma == 0.0 {
        return true;
    }
    if !gamma.is_finite() || gamma.is_nan() {
        return false;
    }
    let (m, e) = dyadic_parts(gamma);
    if (-64..=0).contains(&e) {
        return bernoulli_exp(rng, m as u128, 1u128 << (-e) as u32);
    }
    let (num, den) = float_to_ratio(gamma);
    bernoulli_exp_big(rng, &num, &den)
}

/// Discrete Laplace on the integers with `P(y) ∝ exp(-|y| / scale)`.
pub fn sample_discrete_laplace<R: Rng + ?Sized>(scale: Rational, rng: &mut R) -> i128 {
    // scale = t / s
    let (t, s) = (scale.num, scale.den);
    loop {
        let u = rng.gen_range(0..t);
        if !bernoulli_exp(rng, u, t) {
            continue;
        }
        let mut v: u128 = 0;
        while bernoulli_exp(rng, 1, 1) {
            v += 1;
        }
        let x = u + t * v;
        let y = (x / s) as i128;
        let negative = rng.gen::<bool>();
        if negative && y == 0 {
            continue;
        }
        return if negative { -y } else { y };
    }
}

/// Discrete Gaussian on the integers with `P(y) ∝ exp(-y² / (2 scale²))`.
pub fn sample_discrete_gaussian<R: Rng + ?Sized>(scale: Rational, rng: &mut R) -> i128 {
    let (num, den) = (scale.num, scale.den);
    let t = num / den + 1;
    let laplace_scale = Rational { num: t, den: 1 };
    // sigma² = a / b
    let a = BigUint::from(num) * BigUint::from(num);
    let b = BigUint::from(den) * BigUint::from(den);
    let bt = &b * BigUint::from(t);
    let gamma_den = BigUint::from(2u32) * &a * &bt * BigUint::from(t);
    let a_signed = BigInt::from_biguint(Sign::Plus, a.clone());
    loop {
        let y = sample_discrete_laplace(laplace_scale, rng);
        // gamma = (|y| b t - a)² / (2 a b t²)
        let centered = BigInt::from(y.unsigned_abs()) * BigInt::from_biguint(Sign::Plus, bt.clone()) - &a_signed;
        let gamma_num = centered.magnitude() * centered.magnitude();
        if bernoulli_exp_big(rng, &gamma_num, &gamma_den) {
            return y;
        }
    }
}

/// Validated entry point taking the scale as `num / den`.
pub fn discrete_gaussian<R: Rng + ?Sized>(num: u128, den: u128, rng: &mut R) -> Result<i128> {
    Ok(sample_discrete_gaussian(Rational::new(num, den)?, rng))
}
