//! Stream models and exact stream statistics.
//!
//! All generators draw the `t` uniform background elements first and only
//! then plant the needle, so a planted stream with no forced positions is
//! the uniform stream drawn from the same generator state.

use std::collections::HashMap;
use std::fmt;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervals::IntervalSystem;

/// Ground truth carried next to a planted stream. Detectors never see it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub needle: u64,
    /// 1-based, ascending.
    pub forced_positions: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stream {
    n: u64,
    elements: Vec<u64>,
    meta: Option<StreamMeta>,
}

impl Stream {
    pub fn new(n: u64, elements: Vec<u64>, meta: Option<StreamMeta>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("domain size must be positive".into()));
        }
        if let Some(bad) = elements.iter().find(|&&x| x == 0 || x > n) {
            return Err(Error::InvalidParameter(format!("element {bad} outside [1..{n}]")));
        }
        if let Some(m) = &meta {
            let t = elements.len() as u64;
            for &pos in &m.forced_positions {
                if pos == 0 || pos > t || elements[pos as usize - 1] != m.needle {
                    return Err(Error::InvalidParameter(format!(
                        "forced position {pos} does not carry the needle"
                    )));
                }
            }
        }
        Ok(Self { n, elements, meta })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn t(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[u64] {
        &self.elements
    }

    pub fn meta(&self) -> Option<&StreamMeta> {
        self.meta.as_ref()
    }

    pub fn without_meta(&self) -> Self {
        Self {
            n: self.n,
            elements: self.elements.clone(),
            meta: None,
        }
    }
}

/// Smallest domain used by the experiment presets for streams of length `t`.
pub fn preset_domain(t: u64) -> u64 {
    100 * t * t
}

fn check_shape(n: u64, t: u64) -> Result<()> {
    if n == 0 || t == 0 {
        return Err(Error::InvalidParameter(format!("need n >= 1 and t >= 1, got n={n}, t={t}")));
    }
    Ok(())
}

fn uniform_elements<R: Rng + ?Sized>(n: u64, t: u64, rng: &mut R) -> Vec<u64> {
    (0..t).map(|_| rng.random_range(1..=n)).collect()
}

pub fn gen_uniform<R: Rng + ?Sized>(n: u64, t: u64, rng: &mut R) -> Result<Stream> {
    check_shape(n, t)?;
    Ok(Stream {
        n,
        elements: uniform_elements(n, t, rng),
        meta: None,
    })
}

/// Each position independently equals a uniform needle with probability `p`.
pub fn gen_planted_needle<R: Rng + ?Sized>(n: u64, t: u64, p: f64, rng: &mut R) -> Result<Stream> {
    check_shape(n, t)?;
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("needle probability {p} not in (0,1]")));
    }
    let mut elements = uniform_elements(n, t, rng);
    let needle = rng.random_range(1..=n);
    let mut forced_positions = Vec::new();
    for (i, x) in elements.iter_mut().enumerate() {
        if rng.random_bool(p) {
            *x = needle;
            forced_positions.push(i as u64 + 1);
        }
    }
    Ok(Stream {
        n,
        elements,
        meta: Some(StreamMeta {
            needle,
            forced_positions,
        }),
    })
}

/// One uniform position per interval of `F` carries a shared uniform needle.
pub fn gen_planted_interval<R: Rng + ?Sized>(f: &IntervalSystem, n: u64, rng: &mut R) -> Result<Stream> {
    check_shape(n, f.t())?;
    let mut elements = uniform_elements(n, f.t(), rng);
    let needle = rng.random_range(1..=n);
    let forced_positions: Vec<u64> = f
        .intervals()
        .iter()
        .map(|iv| rng.random_range(iv.lo()..=iv.hi()))
        .collect();
    for &pos in &forced_positions {
        elements[pos as usize - 1] = needle;
    }
    Ok(Stream {
        n,
        elements,
        meta: Some(StreamMeta {
            needle,
            forced_positions,
        }),
    })
}

/// `F_k = sum_x f_x^k` over the element multiset.
pub fn frequency_moment(s: &Stream, k: u32) -> Result<BigUint> {
    if k == 0 {
        return Err(Error::InvalidParameter("moment order must be >= 1".into()));
    }
    let mut freq: HashMap<u64, u64> = HashMap::new();
    for &x in s.elements() {
        *freq.entry(x).or_default() += 1;
    }
    Ok(freq.values().map(|&f| BigUint::from(f).pow(k)).sum())
}

/// Set partition of positions by element equality, as a restricted growth
/// string: position `i` gets the index of its block in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CollisionPattern(Vec<u32>);

impl CollisionPattern {
    pub fn from_labels<T: Eq + std::hash::Hash + Copy>(labels: &[T]) -> Self {
        let mut ids: HashMap<T, u32> = HashMap::with_capacity(labels.len());
        let rgs = labels
            .iter()
            .map(|x| {
                let next = ids.len() as u32;
                *ids.entry(*x).or_insert(next)
            })
            .collect();
        Self(rgs)
    }

    /// Accepts only well-formed restricted growth strings.
    pub fn from_rgs(rgs: Vec<u32>) -> Result<Self> {
        let mut max_seen: Option<u32> = None;
        for &b in &rgs {
            let allowed = max_seen.map_or(0, |m| m + 1);
            if b > allowed {
                return Err(Error::InvalidParameter(format!("{rgs:?} is not a restricted growth string")));
            }
            max_seen = Some(max_seen.map_or(b, |m| m.max(b)));
        }
        Ok(Self(rgs))
    }

    pub fn rgs(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn block_count(&self) -> usize {
        self.0.iter().max().map_or(0, |&m| m as usize + 1)
    }

    /// Blocks of 1-based positions, in order of first appearance.
    pub fn blocks(&self) -> Vec<Vec<u64>> {
        let mut blocks = vec![Vec::new(); self.block_count()];
        for (i, &b) in self.0.iter().enumerate() {
            blocks[b as usize].push(i as u64 + 1);
        }
        blocks
    }

    /// Probability of this pattern for `t` i.i.d. uniform draws from `[n]`:
    /// `n (n-1) ... (n-b+1) / n^t` with `b` blocks.
    pub fn uniform_probability(&self, n: u64) -> BigRational {
        let b = self.block_count() as u64;
        if b > n {
            return BigRational::zero();
        }
        let falling: BigUint = (0..b).fold(BigUint::one(), |acc, i| acc * (n - i));
        let denom = BigUint::from(n).pow(self.len() as u32);
        BigRational::new(falling.into(), denom.into())
    }
}

impl fmt::Display for CollisionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let blocks: Vec<String> = self
            .blocks()
            .iter()
            .map(|b| {
                let inner: Vec<String> = b.iter().map(u64::to_string).collect();
                format!("{{{}}}", inner.join(","))
            })
            .collect();
        write!(f, "{{{}}}", blocks.join(","))
    }
}

pub fn collision_pattern(s: &Stream) -> CollisionPattern {
    CollisionPattern::from_labels(s.elements())
}

/// Upper limit for exhaustive pattern tabulation.
pub const PATTERN_ENUMERATION_MAX_T: usize = 12;

/// Every set partition of `[1..t]`, in lexicographic RGS order.
pub fn all_patterns(t: usize) -> Result<Vec<CollisionPattern>> {
    if t > PATTERN_ENUMERATION_MAX_T {
        return Err(Error::Guard(format!(
            "pattern enumeration limited to t <= {PATTERN_ENUMERATION_MAX_T}, got {t}"
        )));
    }
    fn go(pos: usize, t: usize, max: i64, cur: &mut Vec<u32>, out: &mut Vec<CollisionPattern>) {
        if pos == t {
            out.push(CollisionPattern(cur.clone()));
            return;
        }
        for b in 0..=(max + 1) {
            cur.push(b as u32);
            go(pos + 1, t, max.max(b), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, t, -1, &mut Vec::with_capacity(t), &mut out);
    Ok(out)
}

/// Bell numbers via the Bell triangle.
pub fn bell_number(t: usize) -> BigUint {
    let mut row = vec![BigUint::one()];
    for _ in 0..t {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(row.last().expect("non-empty").clone());
        for x in &row {
            let v = next.last().expect("non-empty") + x;
            next.push(v);
        }
        row = next;
    }
    row[0].clone()
}

/// Histogram of collision patterns.
pub type PatternCounts = HashMap<CollisionPattern, u64>;

pub fn tally_patterns<I: IntoIterator<Item = CollisionPattern>>(patterns: I) -> PatternCounts {
    let mut counts = PatternCounts::new();
    for p in patterns {
        *counts.entry(p).or_default() += 1;
    }
    counts
}
