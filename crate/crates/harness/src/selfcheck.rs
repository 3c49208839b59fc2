//! Exact verification suite with optional fault injection.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use needle_core::exact::binomial;
use needle_core::sampler::{
    all_systems, exact_refined_sets_of, exact_set_distribution_with, exact_sets_of, scaled_expected_value,
    split_pmf, PieceWeights, SplitRule,
};
use needle_core::streams::{all_patterns, bell_number};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Split the hypergeometric law at `s + 1` instead of `s`.
    SplitOffByOne,
    /// Choose refinement pieces uniformly instead of by length.
    UniformPieces,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn ratio(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn perfectness(rule: SplitRule) -> Check {
    let mut bad = Vec::new();
    for t in [2u64, 4, 8, 16] {
        for k in 0..=t.min(5) {
            let d = exact_set_distribution_with(t, k, rule).expect("within guard");
            if !d.is_uniform() {
                bad.push(format!("({t},{k})"));
            }
        }
    }
    Check {
        name: "perfectness",
        pass: bad.is_empty(),
        detail: if bad.is_empty() { "t in {2,4,8,16}, k <= 5".into() } else { format!("non-uniform at {}", bad.join(" ")) },
    }
}

fn moments() -> Check {
    let mut bad = Vec::new();
    for t in (2..=64u64).step_by(2) {
        for k in 0..=t.min(16) {
            let pmf = split_pmf(t, k).expect("k <= t");
            if pmf.mean() != ratio(k, 2) || pmf.moment(2) > ratio(k * (k + 1), 4) {
                bad.push(format!("({t},{k})"));
            }
        }
    }
    Check {
        name: "split moments",
        pass: bad.is_empty(),
        detail: if bad.is_empty() { "even t <= 64, k <= 16".into() } else { bad.join(" ") },
    }
}

fn expected_value_bound() -> Check {
    // t E[value] <= k^2 + k(k-1) log2 t
    let mut bad = Vec::new();
    for e in 1..=6u32 {
        let t = 1u64 << e;
        for k in 0..=t.min(8) {
            let f = scaled_expected_value(t, k).expect("valid cell");
            let bound = ratio(k * k + k * k.saturating_sub(1) * u64::from(e), 1);
            if f > bound {
                bad.push(format!("({t},{k})"));
            }
        }
    }
    Check {
        name: "expected value recursion",
        pass: bad.is_empty(),
        detail: if bad.is_empty() { "t <= 64 powers of two, k <= 8".into() } else { bad.join(" ") },
    }
}

fn refinement(weights: PieceWeights) -> Check {
    let mut checked = 0;
    let mut first_bad = None;
    for t in 1..=12 {
        for k in 1..=t.min(3) {
            for f in all_systems(t, k) {
                checked += 1;
                if first_bad.is_none() && exact_refined_sets_of(&f, weights) != exact_sets_of(&f) {
                    first_bad = Some(format!("{f:?}"));
                }
            }
        }
    }
    Check {
        name: "refinement preserves Sets",
        pass: first_bad.is_none(),
        detail: match first_bad {
            None => format!("{checked} systems, t <= 12, k <= 3"),
            Some(f) => format!("law changed for {f}"),
        },
    }
}

fn pattern_law() -> Check {
    let mut bad = Vec::new();
    for t in 1..=8usize {
        let pats = all_patterns(t).expect("small t");
        let total = pats
            .iter()
            .map(|p| p.uniform_probability(7))
            .fold(BigRational::zero(), |a, b| a + b);
        if total != BigRational::one() || BigInt::from(pats.len()) != BigInt::from(bell_number(t)) {
            bad.push(t.to_string());
        }
    }
    Check {
        name: "collision pattern law",
        pass: bad.is_empty(),
        detail: if bad.is_empty() { "Bell(t) patterns, probabilities sum to 1, t <= 8".into() } else { format!("t = {}", bad.join(",")) },
    }
}

fn subset_enumeration() -> Check {
    let mut bad = Vec::new();
    for t in 1..=16u64 {
        for k in 0..=t.min(5) {
            let n = needle_core::sampler::k_subsets(t, k).len();
            if BigInt::from(n) != BigInt::from(binomial(t, k)) {
                bad.push(format!("({t},{k})"));
            }
        }
    }
    Check {
        name: "subset enumeration",
        pass: bad.is_empty(),
        detail: if bad.is_empty() { "C(t,k) subsets for t <= 16".into() } else { bad.join(" ") },
    }
}

pub fn selfcheck(fault: Option<Fault>) -> Report {
    let rule = match fault {
        Some(Fault::SplitOffByOne) => SplitRule::ProbabilityOffByOne,
        _ => SplitRule::Exact,
    };
    let weights = match fault {
        Some(Fault::UniformPieces) => PieceWeights::Uniform,
        _ => PieceWeights::Proportional,
    };
    Report {
        checks: vec![
            perfectness(rule),
            moments(),
            expected_value_bound(),
            refinement(weights),
            pattern_law(),
            subset_enumeration(),
        ],
    }
}
