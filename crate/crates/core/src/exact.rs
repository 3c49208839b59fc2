//! Exact rational arithmetic for the verification paths.

use std::fmt;
use std::ops::{Add, Mul};

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// A probability held as a reduced fraction in `[0, 1]`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExactProb(BigRational);

impl ExactProb {
    pub fn new(value: BigRational) -> Result<Self> {
        if value < BigRational::zero() || value > BigRational::one() {
            return Err(Error::InvalidParameter(format!(
                "{value} is not a probability"
            )));
        }
        Ok(Self(value))
    }

    pub fn from_ratio(num: impl Into<BigUint>, den: impl Into<BigUint>) -> Result<Self> {
        let den = den.into();
        if den.is_zero() {
            return Err(Error::InvalidParameter("zero denominator".into()));
        }
        Self::new(BigRational::new(num.into().into(), den.into()))
    }

    pub fn zero() -> Self {
        Self(BigRational::zero())
    }

    pub fn one() -> Self {
        Self(BigRational::one())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn as_rational(&self) -> &BigRational {
        &self.0
    }

    pub fn into_rational(self) -> BigRational {
        self.0
    }

    pub fn to_f64(&self) -> f64 {
        ratio_to_f64(&self.0)
    }

    /// Product of two probabilities, always a probability.
    pub fn times(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0)
    }
}

impl fmt::Debug for ExactProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ExactProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for ExactProb {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

// Sums of probabilities may exceed one transiently, so addition yields a
// plain rational.
impl Add for &ExactProb {
    type Output = BigRational;
    fn add(self, rhs: Self) -> BigRational {
        &self.0 + &rhs.0
    }
}

impl Mul for &ExactProb {
    type Output = ExactProb;
    fn mul(self, rhs: Self) -> ExactProb {
        self.times(rhs)
    }
}

/// Float view of a rational that survives huge numerators and denominators.
pub fn ratio_to_f64(r: &BigRational) -> f64 {
    if let Some(v) = r.to_f64() {
        if v.is_finite() {
            return v;
        }
    }
    let (num, den) = (r.numer(), r.denom());
    let shift = num.bits().max(den.bits()).saturating_sub(1000);
    let n = (num >> shift).to_f64().unwrap_or(f64::NAN);
    let d = (den >> shift).to_f64().unwrap_or(f64::NAN);
    n / d
}

/// Binomial coefficient C(n, k); zero when k > n.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Binomial coefficient in `u128`, `None` on overflow.
pub fn binomial_u128(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        let g = num_integer::gcd(acc, u128::from(i + 1));
        let reduced = acc / g;
        let factor = u128::from(n - i) / (u128::from(i + 1) / g);
        acc = reduced.checked_mul(factor)?;
    }
    Some(acc)
}

/// Uniform integer in `[0, bound)` by rejection on `bound.bits()` random bits.
pub fn uniform_below<R: Rng + ?Sized>(bound: &BigUint, rng: &mut R) -> BigUint {
    assert!(!bound.is_zero(), "empty range");
    if let Some(b) = bound.to_u64() {
        return BigUint::from(rng.random_range(0..b));
    }
    let bits = bound.bits();
    let words = bits.div_ceil(32) as usize;
    let top_bits = bits - 32 * (words as u64 - 1);
    let top_mask = if top_bits == 32 { u32::MAX } else { (1u32 << top_bits) - 1 };
    loop {
        let mut digits: Vec<u32> = (0..words).map(|_| rng.random()).collect();
        digits[words - 1] &= top_mask;
        let candidate = BigUint::from_slice(&digits);
        if &candidate < bound {
            return candidate;
        }
    }
}
