//! Intervals and interval systems over `[1..t]`.
//!
//! Indices are 1-based and inclusive throughout. An interval system keeps its
//! intervals sorted by left endpoint and pairwise disjoint; every constructor
//! checks this, so the remaining operations can assume it.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    lo: u64,
    hi: u64,
}

impl Interval {
    pub fn new(lo: u64, hi: u64) -> Result<Self> {
        if lo == 0 || lo > hi {
            return Err(Error::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn singleton(at: u64) -> Result<Self> {
        Self::new(at, at)
    }

    pub fn lo(&self) -> u64 {
        self.lo
    }

    pub fn hi(&self) -> u64 {
        self.hi
    }

    pub fn len(&self) -> u64 {
        self.hi - self.lo + 1
    }

    // Intervals are never empty; kept for clippy's len-without-is-empty.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: u64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn positions(&self) -> std::ops::RangeInclusive<u64> {
        self.lo..=self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}..{}]", self.lo, self.hi)
    }
}

/// Pairwise disjoint intervals inside `[1..t]`, sorted by `lo`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IntervalSystem {
    t: u64,
    intervals: Vec<Interval>,
}

impl IntervalSystem {
    /// Validates containment and disjointness; input order does not matter.
    pub fn new(t: u64, mut intervals: Vec<Interval>) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidParameter("t must be positive".into()));
        }
        intervals.sort();
        for iv in &intervals {
            if iv.hi > t {
                return Err(Error::IntervalOutOfRange {
                    lo: iv.lo,
                    hi: iv.hi,
                    t,
                });
            }
        }
        for pair in intervals.windows(2) {
            if pair[0].hi >= pair[1].lo {
                return Err(Error::OverlappingIntervals {
                    a_lo: pair[0].lo,
                    a_hi: pair[0].hi,
                    b_lo: pair[1].lo,
                    b_hi: pair[1].hi,
                });
            }
        }
        Ok(Self { t, intervals })
    }

    pub fn from_pairs(t: u64, pairs: &[(u64, u64)]) -> Result<Self> {
        let intervals = pairs
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi))
            .collect::<Result<Vec<_>>>()?;
        Self::new(t, intervals)
    }

    pub fn empty(t: u64) -> Result<Self> {
        Self::new(t, Vec::new())
    }

    /// `{[1..t]}`.
    pub fn whole(t: u64) -> Result<Self> {
        Self::new(t, vec![Interval::new(1, t)?])
    }

    // Callers inside the crate that already maintain the invariants.
    pub(crate) fn from_sorted_unchecked(t: u64, intervals: Vec<Interval>) -> Self {
        debug_assert!(Self::new(t, intervals.clone()).is_ok());
        Self { t, intervals }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Number of intervals.
    pub fn k(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.intervals.iter().map(Interval::len).collect()
    }

    pub fn total_len(&self) -> u64 {
        self.intervals.iter().map(Interval::len).sum()
    }

    /// Sum of `1/|I|` as an exact rational.
    pub fn value(&self) -> BigRational {
        let mut by_len: BTreeMap<u64, u64> = BTreeMap::new();
        for iv in &self.intervals {
            *by_len.entry(iv.len()).or_default() += 1;
        }
        by_len
            .into_iter()
            .fold(BigRational::zero(), |acc, (len, count)| {
                acc + BigRational::new(BigInt::from(count), BigInt::from(len))
            })
    }

    pub fn value_f64(&self) -> f64 {
        self.intervals.iter().map(|iv| 1.0 / iv.len() as f64).sum()
    }

    /// `value >= k^2 / t`, decided exactly.
    pub fn meets_value_floor(&self) -> bool {
        let k = self.k() as u64;
        self.value() >= BigRational::new(BigInt::from(k * k), BigInt::from(self.t))
    }

    /// Total length at most `t/2`, with `t/2` taken as an exact rational.
    pub fn is_valid(&self) -> bool {
        2 * self.total_len() <= self.t
    }

    /// Translate every interval by `c` and re-host the result in `[1..host]`.
    pub fn shift(&self, c: i64, host: u64) -> Result<Self> {
        let moved = self
            .intervals
            .iter()
            .map(|iv| {
                let lo = iv.lo as i64 + c;
                let hi = iv.hi as i64 + c;
                if lo < 1 || hi as u64 > host {
                    Err(Error::ShiftOutOfRange { shift: c, host })
                } else {
                    Interval::new(lo as u64, hi as u64)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(host, moved)
    }

    /// Index of the interval containing position `x`.
    pub fn locate(&self, x: u64) -> Option<usize> {
        let idx = self.intervals.partition_point(|iv| iv.hi < x);
        (idx < self.intervals.len() && self.intervals[idx].contains(x)).then_some(idx)
    }

    /// Blocks `J_1..J_k` partitioning `[1..t]` with `I_i ⊆ J_i`:
    /// `J_i = [hi(I_{i-1})+1 .. hi(I_i)]`, the last one extended to `t`.
    pub fn covering_blocks(&self) -> Vec<Interval> {
        let k = self.intervals.len();
        let mut start = 1;
        self.intervals
            .iter()
            .enumerate()
            .map(|(i, iv)| {
                let end = if i + 1 == k { self.t } else { iv.hi };
                let block = Interval { lo: start, hi: end };
                start = end + 1;
                block
            })
            .collect()
    }
}

impl fmt::Display for IntervalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} {{", self.t)?;
        for (i, iv) in self.intervals.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{iv}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Serialize, Deserialize)]
struct SystemWire {
    t: u64,
    intervals: Vec<[u64; 2]>,
}

impl Serialize for IntervalSystem {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SystemWire {
            t: self.t,
            intervals: self.intervals.iter().map(|iv| [iv.lo, iv.hi]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntervalSystem {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let wire = SystemWire::deserialize(d)?;
        let pairs: Vec<(u64, u64)> = wire.intervals.iter().map(|p| (p[0], p[1])).collect();
        IntervalSystem::from_pairs(wire.t, &pairs).map_err(serde::de::Error::custom)
    }
}
