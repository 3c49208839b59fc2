//! Randomized interval systems.
//!
//! [`sample_interval_system`] splits `[1..t]` at `s = ceil(t/2)`, draws how
//! many of the `k` points fall left of the split from the exact
//! hypergeometric law, and recurses on both halves. A uniformly random
//! `k`-subset of `[t]` obtained by picking one uniform position per output
//! interval is then uniform over all `k`-subsets ("perfect").
//! [`exact_set_distribution`] propagates the same recursion over exact
//! rationals and is the oracle for that property.
//!
//! [`sample_refined`] shrinks each interval to one of at most three near-equal
//! pieces, chosen with probability proportional to piece length, which keeps
//! the point distribution unchanged while making the system valid.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{binomial, binomial_u128, ratio_to_f64, uniform_below, ExactProb};
use crate::intervals::{Interval, IntervalSystem};
use crate::rng::StreamFactory;

/// Left half length used by the split.
pub fn split_point(t: u64) -> u64 {
    t.div_ceil(2)
}

/// Law of the number of points landing in `[1..s]` out of a uniform
/// `k`-subset of `[1..t]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SplitPmf {
    pub t: u64,
    pub k: u64,
    pub s: u64,
    pub probs: Vec<ExactProb>,
}

impl SplitPmf {
    pub fn mean(&self) -> BigRational {
        self.moment(1)
    }

    pub fn moment(&self, power: u32) -> BigRational {
        self.probs
            .iter()
            .enumerate()
            .fold(BigRational::zero(), |acc, (j, p)| {
                acc + p.as_rational() * BigRational::from_integer(BigInt::from(j).pow(power))
            })
    }

    pub fn total(&self) -> BigRational {
        self.probs
            .iter()
            .fold(BigRational::zero(), |acc, p| acc + p.as_rational())
    }
}

pub fn split_pmf(t: u64, k: u64) -> Result<SplitPmf> {
    if t < 2 {
        return Err(Error::InvalidParameter(format!("split needs t >= 2, got {t}")));
    }
    if k > t {
        return Err(Error::InvalidParameter(format!("k={k} exceeds t={t}")));
    }
    Ok(split_pmf_at(t, k, split_point(t)))
}

/// Hypergeometric pmf for an arbitrary left length `s <= t`.
pub fn split_pmf_at(t: u64, k: u64, s: u64) -> SplitPmf {
    let total = binomial(t, k);
    let probs = (0..=k)
        .map(|j| {
            let num = binomial(s, j) * binomial(t - s, k - j);
            ExactProb::from_ratio(num, total.clone()).expect("hypergeometric term is a probability")
        })
        .collect();
    SplitPmf { t, k, s, probs }
}

/// Cumulative integer numerators of the split law, for exact sampling.
enum SplitTable {
    Small { cumulative: Vec<u128> },
    Big { cumulative: Vec<BigUint> },
}

impl SplitTable {
    fn build(t: u64, k: u64, s: u64) -> Self {
        let small: Option<Vec<u128>> = (|| {
            let mut acc: u128 = 0;
            (0..=k)
                .map(|j| {
                    let term = binomial_u128(s, j)?.checked_mul(binomial_u128(t - s, k - j)?)?;
                    acc = acc.checked_add(term)?;
                    Some(acc)
                })
                .collect()
        })();
        match small {
            Some(cumulative) => Self::Small { cumulative },
            None => {
                let mut acc = BigUint::zero();
                let cumulative = (0..=k)
                    .map(|j| {
                        acc += binomial(s, j) * binomial(t - s, k - j);
                        acc.clone()
                    })
                    .collect();
                Self::Big { cumulative }
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            Self::Small { cumulative } => {
                let total = *cumulative.last().expect("non-empty");
                let u = rng.random_range(0..total);
                cumulative.partition_point(|&c| c <= u) as u64
            }
            Self::Big { cumulative } => {
                let total = cumulative.last().expect("non-empty");
                let u = uniform_below(total, rng);
                cumulative.partition_point(|c| c <= &u) as u64
            }
        }
    }
}

thread_local! {
    static SPLIT_TABLES: RefCell<HashMap<(u64, u64), Rc<SplitTable>>> = RefCell::new(HashMap::new());
}

/// Exact draw of `j` from [`split_pmf`]`(t, k)`.
pub fn sample_split<R: Rng + ?Sized>(t: u64, k: u64, rng: &mut R) -> u64 {
    let table = SPLIT_TABLES.with(|cache| {
        cache
            .borrow_mut()
            .entry((t, k))
            .or_insert_with(|| Rc::new(SplitTable::build(t, k, split_point(t))))
            .clone()
    });
    table.draw(rng)
}

/// Draw from the randomized `[t,k]`-interval system.
pub fn sample_interval_system<R: Rng + ?Sized>(t: u64, k: u64, rng: &mut R) -> Result<IntervalSystem> {
    if t == 0 {
        return Err(Error::InvalidParameter("t must be positive".into()));
    }
    if k > t {
        return Err(Error::InvalidParameter(format!("k={k} exceeds t={t}")));
    }
    let mut out = Vec::with_capacity(k as usize);
    fill_system(t, k, 0, rng, &mut out);
    Ok(IntervalSystem::from_sorted_unchecked(t, out))
}

fn fill_system<R: Rng + ?Sized>(t: u64, k: u64, offset: u64, rng: &mut R, out: &mut Vec<Interval>) {
    match k {
        0 => {}
        1 => out.push(Interval::new(offset + 1, offset + t).expect("t >= 1")),
        _ => {
            let s = split_point(t);
            let j = sample_split(t, k, rng);
            fill_system(s, j, offset, rng, out);
            fill_system(t - s, k - j, offset + s, rng, out);
        }
    }
}

/// Exact law of a sorted `k`-subset of `[1..t]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetDistribution {
    pub t: u64,
    pub k: u64,
    pub probs: BTreeMap<Vec<u64>, BigRational>,
}

impl SetDistribution {
    pub fn total(&self) -> BigRational {
        self.probs.values().fold(BigRational::zero(), |a, p| a + p)
    }

    /// Subsets whose probability differs from `1/C(t,k)`, including missing
    /// ones. Empty iff the distribution is exactly uniform.
    pub fn uniformity_mismatches(&self) -> Vec<(Vec<u64>, BigRational)> {
        let target = BigRational::new(BigInt::one(), binomial(self.t, self.k).into());
        let mut bad: Vec<(Vec<u64>, BigRational)> = self
            .probs
            .iter()
            .filter(|(_, p)| **p != target)
            .map(|(s, p)| (s.clone(), p.clone()))
            .collect();
        let expected = binomial(self.t, self.k);
        if BigUint::from(self.probs.len()) != expected {
            for subset in k_subsets(self.t, self.k) {
                if !self.probs.contains_key(&subset) {
                    bad.push((subset, BigRational::zero()));
                }
            }
        }
        bad
    }

    pub fn is_uniform(&self) -> bool {
        self.uniformity_mismatches().is_empty()
    }

    pub fn get(&self, subset: &[u64]) -> BigRational {
        self.probs.get(subset).cloned().unwrap_or_else(BigRational::zero)
    }
}

/// All sorted `k`-subsets of `[1..t]` in lexicographic order.
pub fn k_subsets(t: u64, k: u64) -> Vec<Vec<u64>> {
    fn go(start: u64, t: u64, left: u64, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for x in start..=t {
            if t - x + 1 < left {
                break;
            }
            cur.push(x);
            go(x + 1, t, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(1, t, k, &mut Vec::new(), &mut out);
    out
}

/// How the split probabilities relate to the split point when propagating
/// the recursion exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitRule {
    #[default]
    Exact,
    /// Probabilities computed with `s + 1` while still splitting at `s`.
    /// Fault injection for the self-check.
    ProbabilityOffByOne,
}

pub const EXACT_SET_MAX_T: u64 = 20;
pub const EXACT_SET_MAX_K: u64 = 6;

pub fn exact_set_distribution(t: u64, k: u64) -> Result<SetDistribution> {
    exact_set_distribution_with(t, k, SplitRule::Exact)
}

pub fn exact_set_distribution_with(t: u64, k: u64, rule: SplitRule) -> Result<SetDistribution> {
    if t == 0 || t > EXACT_SET_MAX_T || k > EXACT_SET_MAX_K {
        return Err(Error::Guard(format!(
            "exact set distribution needs 1 <= t <= {EXACT_SET_MAX_T}, k <= {EXACT_SET_MAX_K}; got t={t}, k={k}"
        )));
    }
    if k > t {
        return Err(Error::InvalidParameter(format!("k={k} exceeds t={t}")));
    }
    let mut memo = HashMap::new();
    let probs = propagate(t, k, rule, &mut memo).as_ref().clone();
    Ok(SetDistribution { t, k, probs })
}

type SetLaw = BTreeMap<Vec<u64>, BigRational>;

fn propagate(t: u64, k: u64, rule: SplitRule, memo: &mut HashMap<(u64, u64), Rc<SetLaw>>) -> Rc<SetLaw> {
    if let Some(hit) = memo.get(&(t, k)) {
        return hit.clone();
    }
    let mut law = SetLaw::new();
    if k > t {
        // impossible branch: no mass
    } else if k == 0 {
        law.insert(Vec::new(), BigRational::one());
    } else if k == 1 {
        let p = BigRational::new(BigInt::one(), BigInt::from(t));
        for x in 1..=t {
            law.insert(vec![x], p.clone());
        }
    } else {
        let s = split_point(t);
        let pmf = match rule {
            SplitRule::Exact => split_pmf_at(t, k, s),
            SplitRule::ProbabilityOffByOne => split_pmf_at(t, k, (s + 1).min(t)),
        };
        for (j, pj) in pmf.probs.iter().enumerate() {
            if pj.is_zero() {
                continue;
            }
            let j = j as u64;
            let left = propagate(s, j, rule, memo);
            let right = propagate(t - s, k - j, rule, memo);
            for (a, pa) in left.iter() {
                let weight = pj.as_rational() * pa;
                for (b, pb) in right.iter() {
                    let mut set = a.clone();
                    set.extend(b.iter().map(|x| x + s));
                    *law.entry(set).or_insert_with(BigRational::zero) += &weight * pb;
                }
            }
        }
    }
    let law = Rc::new(law);
    memo.insert((t, k), law.clone());
    law
}

/// `E[value(F[t,k])]`, exact, for any `t`.
pub fn expected_value_exact(t: u64, k: u64) -> Result<BigRational> {
    if t == 0 || k > t {
        return Err(Error::InvalidParameter(format!("need 1 <= t and k <= t, got t={t}, k={k}")));
    }
    let mut memo = HashMap::new();
    Ok(expected_value_rec(t, k, &mut memo))
}

fn expected_value_rec(t: u64, k: u64, memo: &mut HashMap<(u64, u64), BigRational>) -> BigRational {
    match k {
        0 => return BigRational::zero(),
        1 => return BigRational::new(BigInt::one(), BigInt::from(t)),
        _ => {}
    }
    if let Some(v) = memo.get(&(t, k)) {
        return v.clone();
    }
    let s = split_point(t);
    let pmf = split_pmf_at(t, k, s);
    let mut acc = BigRational::zero();
    for (j, pj) in pmf.probs.iter().enumerate() {
        if pj.is_zero() {
            continue;
        }
        let j = j as u64;
        let branch = expected_value_rec(s, j, memo) + expected_value_rec(t - s, k - j, memo);
        acc += pj.as_rational() * branch;
    }
    memo.insert((t, k), acc.clone());
    acc
}

/// Upper bound `k^2 log2(2t) / t` on the expected value (proven for `t` a
/// power of two).
pub fn value_bound(t: u64, k: u64) -> f64 {
    (k * k) as f64 * ((2 * t) as f64).log2() / t as f64
}

// ---------------------------------------------------------------------------
// Refinement
// ---------------------------------------------------------------------------

/// Split an interval into `min(3, len)` left-to-right pieces; the first
/// `len mod pieces` pieces get the extra element.
pub fn refinement_pieces(iv: &Interval) -> Vec<Interval> {
    let len = iv.len();
    let count = len.min(3);
    let (base, extra) = (len / count, len % count);
    let mut lo = iv.lo();
    (0..count)
        .map(|a| {
            let piece_len = base + u64::from(a < extra);
            let piece = Interval::new(lo, lo + piece_len - 1).expect("piece is non-empty");
            lo += piece_len;
            piece
        })
        .collect()
}

/// How a piece is chosen during refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PieceWeights {
    /// Probability `|piece| / |interval|`.
    #[default]
    Proportional,
    /// Uniform over pieces. Fault injection for the self-check.
    Uniform,
}

impl PieceWeights {
    fn weights(&self, iv: &Interval, pieces: &[Interval]) -> Vec<BigRational> {
        match self {
            Self::Proportional => pieces
                .iter()
                .map(|p| BigRational::new(BigInt::from(p.len()), BigInt::from(iv.len())))
                .collect(),
            Self::Uniform => {
                let w = BigRational::new(BigInt::one(), BigInt::from(pieces.len()));
                vec![w; pieces.len()]
            }
        }
    }
}

/// Refine `F` into a valid system; requires `k <= t/6`.
pub fn sample_refined<R: Rng + ?Sized>(f: &IntervalSystem, rng: &mut R) -> Result<IntervalSystem> {
    let k = f.k() as u64;
    if 6 * k > f.t() {
        return Err(Error::RefinePrecondition { k, t: f.t() });
    }
    Ok(refine_unchecked(f, rng))
}

/// Refinement without the `k <= t/6` guard. The output keeps the point law
/// of `F` but need not be valid.
pub fn refine_unchecked<R: Rng + ?Sized>(f: &IntervalSystem, rng: &mut R) -> IntervalSystem {
    let refined = f
        .intervals()
        .iter()
        .map(|iv| {
            let pieces = refinement_pieces(iv);
            // P(piece) = |piece| / |iv|: pick a uniform position and take its piece
            let pos = rng.random_range(iv.lo()..=iv.hi());
            *pieces.iter().find(|p| p.contains(pos)).expect("pieces cover the interval")
        })
        .collect();
    IntervalSystem::from_sorted_unchecked(f.t(), refined)
}

/// Exact law of the point set obtained by one uniform position per
/// interval of `F`.
pub fn exact_sets_of(f: &IntervalSystem) -> SetLaw {
    let per_interval: Vec<Vec<(u64, BigRational)>> = f
        .intervals()
        .iter()
        .map(|iv| {
            let p = BigRational::new(BigInt::one(), BigInt::from(iv.len()));
            iv.positions().map(|x| (x, p.clone())).collect()
        })
        .collect();
    product_law(&per_interval)
}

/// Exact law of the point set of the refined randomized system, by
/// enumerating every piece choice and every position inside the piece.
pub fn exact_refined_sets_of(f: &IntervalSystem, weights: PieceWeights) -> SetLaw {
    let per_interval: Vec<Vec<(u64, BigRational)>> = f
        .intervals()
        .iter()
        .map(|iv| {
            let pieces = refinement_pieces(iv);
            let ws = weights.weights(iv, &pieces);
            let mut marginal: BTreeMap<u64, BigRational> = BTreeMap::new();
            for (piece, w) in pieces.iter().zip(&ws) {
                let inner = w / BigRational::from_integer(BigInt::from(piece.len()));
                for x in piece.positions() {
                    *marginal.entry(x).or_insert_with(BigRational::zero) += &inner;
                }
            }
            marginal.into_iter().collect()
        })
        .collect();
    product_law(&per_interval)
}

fn product_law(per_interval: &[Vec<(u64, BigRational)>]) -> SetLaw {
    let mut law = SetLaw::new();
    law.insert(Vec::new(), BigRational::one());
    for options in per_interval {
        let mut next = SetLaw::new();
        for (set, p) in &law {
            for (x, q) in options {
                let mut s = set.clone();
                s.push(*x);
                *next.entry(s).or_insert_with(BigRational::zero) += p * q;
            }
        }
        law = next;
    }
    law
}

/// Every `[t,k]`-interval system, for exhaustive checks on small `t`.
pub fn all_systems(t: u64, k: u64) -> Vec<IntervalSystem> {
    fn go(start: u64, t: u64, left: u64, cur: &mut Vec<Interval>, out: &mut Vec<IntervalSystem>) {
        if left == 0 {
            out.push(IntervalSystem::from_sorted_unchecked(t, cur.clone()));
            return;
        }
        for lo in start..=t {
            for hi in lo..=t {
                // room for the remaining intervals
                if t - hi < left - 1 {
                    break;
                }
                cur.push(Interval::new(lo, hi).expect("lo <= hi"));
                go(hi + 1, t, left - 1, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    if k <= t {
        go(1, t, k, &mut Vec::new(), &mut out);
    }
    out
}

// ---------------------------------------------------------------------------
// Binomial composition
// ---------------------------------------------------------------------------

/// What to do with a draw `k > t/6`, where refinement is not guaranteed to
/// produce a valid system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompositionPolicy {
    /// Redraw `k`; every output is valid, but `k` is no longer `Bin(t, p)`.
    #[default]
    RejectOversized,
    /// Keep `k ~ Bin(t, p)` and refine only when `k <= t/6`. Perfect for
    /// every `k`, so the planted law matches the Bernoulli needle model.
    RefineWhenAdmissible,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedSample {
    pub system: IntervalSystem,
    pub k: u64,
    /// Number of `k` draws rejected before this one.
    pub rejections: u64,
    pub refined: bool,
}

pub fn sample_binomial<R: Rng + ?Sized>(t: u64, p: f64, rng: &mut R) -> u64 {
    (0..t).filter(|_| rng.random_bool(p)).count() as u64
}

pub fn sample_composed_system<R: Rng + ?Sized>(
    t: u64,
    p: f64,
    policy: CompositionPolicy,
    rng: &mut R,
) -> Result<ComposedSample> {
    if t == 0 {
        return Err(Error::InvalidParameter("t must be positive".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("needle probability {p} not in (0,1)")));
    }
    if policy == CompositionPolicy::RejectOversized && t < 6 {
        // only k = 0 is admissible
        return Err(Error::InvalidParameter(format!(
            "t={t} admits no k >= 1 with k <= t/6; use a larger t"
        )));
    }
    let mut rejections = 0;
    loop {
        let k = sample_binomial(t, p, rng);
        let admissible = 6 * k <= t;
        if !admissible && policy == CompositionPolicy::RejectOversized {
            rejections += 1;
            continue;
        }
        let raw = sample_interval_system(t, k, rng)?;
        let (system, refined) = if admissible {
            (refine_unchecked(&raw, rng), true)
        } else {
            (raw, false)
        };
        return Ok(ComposedSample {
            system,
            k,
            rejections,
            refined,
        });
    }
}

// ---------------------------------------------------------------------------
// Value statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueStats {
    pub t: u64,
    pub k: u64,
    pub trials: u64,
    pub mean: f64,
    pub stddev: f64,
    pub min: f64,
    pub max: f64,
    /// `k^2 log2(2t) / t`.
    pub bound: f64,
    /// Whether the bound is a proven guarantee (`t` a power of two).
    pub bound_certified: bool,
    /// Every sample had value `>= k^2/t`, checked exactly.
    pub floor_holds: bool,
}

impl ValueStats {
    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        self.stddev / (self.trials as f64).sqrt()
    }

    /// `mean <= bound + 3 * std_error`.
    pub fn mean_within_bound(&self) -> bool {
        self.mean <= self.bound + 3.0 * self.std_error()
    }
}

/// Monte Carlo statistics of `value(F[t,k])`; trial `i` uses stream `i` of
/// `factory`.
pub fn value_stats(t: u64, k: u64, trials: u64, factory: &StreamFactory) -> Result<ValueStats> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    if t == 0 || k > t {
        return Err(Error::InvalidParameter(format!("need 1 <= t and k <= t, got t={t}, k={k}")));
    }
    let samples: Vec<(f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = factory.stream(i);
            let f = sample_interval_system(t, k, &mut rng).expect("parameters checked");
            (f.value_f64(), f.meets_value_floor())
        })
        .collect();
    let n = trials as f64;
    let mean = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let var = if trials > 1 {
        samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(ValueStats {
        t,
        k,
        trials,
        mean,
        stddev: var.sqrt(),
        min: samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min),
        max: samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max),
        bound: value_bound(t, k),
        bound_certified: t.is_power_of_two(),
        floor_holds: samples.iter().all(|s| s.1),
    })
}

/// Convenience float view of an exact expected value.
pub fn expected_value_f64(t: u64, k: u64) -> Result<f64> {
    expected_value_exact(t, k).map(|v| ratio_to_f64(&v))
}

/// `f(t, k) = t * E[value(F[t,k])]` as an integer-backed rational.
pub fn scaled_expected_value(t: u64, k: u64) -> Result<BigRational> {
    Ok(expected_value_exact(t, k)? * BigRational::from_integer(BigInt::from(t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn split_pmf_examples() {
        let pmf = split_pmf(4, 2).unwrap();
        let got: Vec<String> = pmf.probs.iter().map(|p| p.to_string()).collect();
        assert_eq!(got, vec!["1/6", "2/3", "1/6"]);
        assert_eq!(split_pmf(9, 0).unwrap().probs, vec![ExactProb::one()]);
        assert_eq!(split_pmf(8, 3).unwrap().mean(), q(3, 2));
        assert!(split_pmf(1, 0).is_err());
        assert!(split_pmf(4, 5).is_err());
    }

    #[test]
    fn split_pmf_zero_outside_support() {
        // t=5, s=3: j <= 3 and k - j <= 2
        let pmf = split_pmf(5, 4).unwrap();
        assert!(pmf.probs[0].is_zero());
        assert!(pmf.probs[1].is_zero());
        assert!(!pmf.probs[2].is_zero());
        assert!(pmf.probs[4].is_zero());
        assert_eq!(pmf.total(), BigRational::one());
    }

    #[test]
    fn base_cases() {
        let mut rng = trial_rng(0, "sampler-base", 0);
        assert!(sample_interval_system(9, 0, &mut rng).unwrap().is_empty());
        let whole = sample_interval_system(7, 1, &mut rng).unwrap();
        assert_eq!(whole, IntervalSystem::whole(7).unwrap());
        assert!(sample_interval_system(3, 4, &mut rng).is_err());
    }

    #[test]
    fn sampled_systems_have_k_intervals() {
        let mut rng = trial_rng(0, "sampler-shape", 0);
        for t in 1..=40u64 {
            for k in 0..=t.min(12) {
                let f = sample_interval_system(t, k, &mut rng).unwrap();
                assert_eq!(f.k() as u64, k);
                assert_eq!(f.t(), t);
                assert!(f.meets_value_floor());
            }
        }
    }

    #[test]
    fn exact_distribution_examples() {
        let d = exact_set_distribution(4, 2).unwrap();
        assert_eq!(d.probs.len(), 6);
        assert!(d.probs.values().all(|p| *p == q(1, 6)));
        let d0 = exact_set_distribution(5, 0).unwrap();
        assert_eq!(d0.probs.len(), 1);
        assert_eq!(d0.get(&[]), BigRational::one());
        let d = exact_set_distribution(16, 3).unwrap();
        assert_eq!(d.probs.len(), 560);
        assert!(d.probs.values().all(|p| *p == q(1, 560)));
    }

    #[test]
    fn exact_distribution_guard() {
        assert!(matches!(exact_set_distribution(21, 2), Err(Error::Guard(_))));
        assert!(matches!(exact_set_distribution(10, 7), Err(Error::Guard(_))));
    }

    #[test]
    fn exact_distribution_odd_lengths_are_perfect_too() {
        for t in [3u64, 5, 7, 11, 13] {
            for k in 0..=t.min(4) {
                assert!(exact_set_distribution(t, k).unwrap().is_uniform(), "t={t} k={k}");
            }
        }
    }

    #[test]
    fn perturbed_split_breaks_perfectness() {
        let d = exact_set_distribution_with(8, 3, SplitRule::ProbabilityOffByOne).unwrap();
        assert!(!d.is_uniform());
    }

    #[test]
    fn expected_value_pair_recursion() {
        // f(t,2) = t * E[val(F[t,2])] = 2t/(t-1) + (t-2)/(t-1) * f(t/2, 2), f(2,2) = 4
        let mut f_prev = scaled_expected_value(2, 2).unwrap();
        assert_eq!(f_prev, q(4, 1));
        for t in [4i64, 8, 16, 32, 64, 128] {
            let f = scaled_expected_value(t as u64, 2).unwrap();
            let rec = q(2 * t, t - 1) + q(t - 2, t - 1) * f_prev.clone();
            assert_eq!(f, rec, "t={t}");
            assert!(f <= q(2, 1) + f_prev.clone(), "t={t}");
            // f(t,k) <= k^2 + k(k-1) log2 t
            assert!(f <= q(4 + 2 * t.ilog2() as i64, 1), "t={t}");
            f_prev = f;
        }
        let e = expected_value_f64(8, 2).unwrap();
        assert!(e <= value_bound(8, 2));
    }

    #[test]
    fn full_occupancy_value() {
        let mut rng = trial_rng(0, "sampler-full", 0);
        for _ in 0..200 {
            let f = sample_interval_system(8, 8, &mut rng).unwrap();
            assert_eq!(f.value(), q(8, 1));
        }
        let stats = value_stats(8, 8, 50, &StreamFactory::new(1, "full")).unwrap();
        assert!(stats.min >= 8.0);
    }

    #[test]
    fn single_point_value_is_one_over_t() {
        let stats = value_stats(13, 1, 20, &StreamFactory::new(1, "k1")).unwrap();
        assert_eq!(stats.min, 1.0 / 13.0);
        assert_eq!(stats.max, 1.0 / 13.0);
        assert!(!stats.bound_certified);
    }

    #[test]
    fn refinement_pieces_layout() {
        let lens = |lo, hi| -> Vec<u64> {
            refinement_pieces(&Interval::new(lo, hi).unwrap()).iter().map(|p| p.len()).collect()
        };
        assert_eq!(lens(1, 1), vec![1]);
        assert_eq!(lens(1, 2), vec![1, 1]);
        assert_eq!(lens(1, 4), vec![2, 1, 1]);
        assert_eq!(lens(1, 5), vec![2, 2, 1]);
        assert_eq!(lens(1, 12), vec![4, 4, 4]);
        let pieces = refinement_pieces(&Interval::new(3, 10).unwrap());
        assert_eq!(pieces.first().unwrap().lo(), 3);
        assert_eq!(pieces.last().unwrap().hi(), 10);
    }

    #[test]
    fn piece_lengths_at_least_a_fifth() {
        for len in 1..200u64 {
            let iv = Interval::new(1, len).unwrap();
            for p in refinement_pieces(&iv) {
                assert!(5 * p.len() >= len, "len={len}");
            }
        }
    }

    #[test]
    fn refine_precondition() {
        let mut rng = trial_rng(0, "refine", 0);
        let f = IntervalSystem::from_pairs(11, &[(1, 3), (5, 6)]).unwrap();
        assert!(matches!(sample_refined(&f, &mut rng), Err(Error::RefinePrecondition { k: 2, t: 11 })));
        let single = IntervalSystem::from_pairs(8, &[(3, 3)]).unwrap();
        for _ in 0..20 {
            assert_eq!(sample_refined(&single, &mut rng).unwrap(), single);
        }
    }

    #[test]
    fn refine_whole_range_thirds() {
        let f = IntervalSystem::from_pairs(24, &[(1, 12)]).unwrap();
        let law = exact_refined_sets_of(&f, PieceWeights::Proportional);
        // point law is still uniform over [1..12]
        assert!(law.values().all(|p| *p == q(1, 12)));
        let mut rng = trial_rng(0, "refine-thirds", 0);
        let mut counts = [0u32; 3];
        for _ in 0..3000 {
            let r = sample_refined(&f, &mut rng).unwrap();
            let iv = r.intervals()[0];
            assert_eq!(iv.len(), 4);
            counts[((iv.lo() - 1) / 4) as usize] += 1;
        }
        for c in counts {
            // Bin(3000, 1/3): sd ~ 25.8
            assert!((c as i64 - 1000).abs() < 130, "{counts:?}");
        }
    }

    #[test]
    fn refined_sets_match_for_two_halves() {
        let f = IntervalSystem::from_pairs(12, &[(1, 6), (7, 12)]).unwrap();
        assert_eq!(exact_refined_sets_of(&f, PieceWeights::Proportional), exact_sets_of(&f));
        let uneven = IntervalSystem::from_pairs(12, &[(1, 4)]).unwrap();
        assert_ne!(exact_refined_sets_of(&uneven, PieceWeights::Uniform), exact_sets_of(&uneven));
    }

    #[test]
    fn all_systems_counts() {
        // [t,1]-systems are the t(t+1)/2 intervals
        assert_eq!(all_systems(5, 1).len(), 15);
        assert_eq!(all_systems(3, 3).len(), 1);
        assert_eq!(all_systems(3, 0).len(), 1);
        assert!(all_systems(2, 3).is_empty());
    }

    #[test]
    fn composed_policies() {
        let mut rng = trial_rng(0, "composed", 0);
        assert!(sample_composed_system(4, 0.5, CompositionPolicy::RejectOversized, &mut rng).is_err());
        assert!(sample_composed_system(64, 0.0, CompositionPolicy::RejectOversized, &mut rng).is_err());
        let mut saw_empty = false;
        for _ in 0..200 {
            let c = sample_composed_system(64, 0.05, CompositionPolicy::RejectOversized, &mut rng).unwrap();
            assert!(c.system.is_valid());
            assert!(6 * c.k <= 64);
            saw_empty |= c.k == 0 && c.system.is_empty();
        }
        assert!(saw_empty);
        let mut saw_large = false;
        for _ in 0..200 {
            let c = sample_composed_system(8, 0.5, CompositionPolicy::RefineWhenAdmissible, &mut rng).unwrap();
            assert_eq!(c.system.k() as u64, c.k);
            saw_large |= !c.refined;
        }
        assert!(saw_large);
    }
}
