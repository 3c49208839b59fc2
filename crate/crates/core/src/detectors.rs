//! Space-metered streaming distinguishers.
//!
//! A [`Detector`] only ever sees stream elements, never [`StreamMeta`]
//! (crate::streams::StreamMeta). Every detector declares a bit budget and
//! reports the bits its state currently occupies; [`run`] audits the two
//! after every element.
//!
//! Accounting convention: stored elements cost `ceil(log2 n)` bits each,
//! fingerprints cost `r` bits each, and the sticky decision flag costs one
//! bit. Ring positions and occupancy follow from the stream position, which
//! every participant knows, and are not counted.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{mix64, StreamFactory};
use crate::stats::Z95;
use crate::streams::{gen_planted_needle, gen_uniform, Stream};

/// Bits per stored element for domain `[1..n]`.
pub fn element_bits(n: u64) -> u64 {
    if n <= 1 {
        1
    } else {
        u64::from(64 - (n - 1).leading_zeros())
    }
}

pub trait Detector: Send {
    fn name(&self) -> String;

    /// Declared space budget in bits.
    fn budget_bits(&self) -> u64;

    /// Bits currently held by the state.
    fn state_bits(&self) -> u64;

    fn max_passes(&self) -> usize {
        usize::MAX
    }

    /// Called before the first element of every pass. Stored elements are
    /// flushed; the decision flag survives.
    fn begin_pass(&mut self);

    fn observe(&mut self, x: u64);

    fn fired(&self) -> bool;

    /// Serialise the state as exactly [`Detector::state_bits`] bits.
    fn export_state(&self) -> Vec<bool>;

    /// Replace the state by one produced with [`Detector::export_state`] on
    /// an identically configured detector.
    fn import_state(&mut self, bits: &[bool]) -> Result<()>;
}

fn push_bits(out: &mut Vec<bool>, value: u64, width: u64) {
    for i in (0..width).rev() {
        out.push((value >> i) & 1 == 1);
    }
}

fn read_bits(bits: &[bool]) -> u64 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | u64::from(b))
}

fn split_flag(bits: &[bool]) -> Result<(bool, &[bool])> {
    bits.split_last()
        .map(|(flag, rest)| (*flag, rest))
        .ok_or_else(|| Error::InvalidParameter("empty detector state".into()))
}

/// Fires when two consecutive elements of a pass are equal.
#[derive(Debug, Clone)]
pub struct AdjacentDetector {
    width: u64,
    last: Option<u64>,
    fired: bool,
}

impl AdjacentDetector {
    pub fn new(n: u64) -> Self {
        Self {
            width: element_bits(n),
            last: None,
            fired: false,
        }
    }
}

impl Detector for AdjacentDetector {
    fn name(&self) -> String {
        "adjacent".into()
    }

    fn budget_bits(&self) -> u64 {
        self.width + 1
    }

    fn state_bits(&self) -> u64 {
        u64::from(self.last.is_some()) * self.width + 1
    }

    fn begin_pass(&mut self) {
        self.last = None;
    }

    fn observe(&mut self, x: u64) {
        if self.last == Some(x) {
            self.fired = true;
        }
        self.last = Some(x);
    }

    fn fired(&self) -> bool {
        self.fired
    }

    fn export_state(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.state_bits() as usize);
        if let Some(x) = self.last {
            push_bits(&mut out, x - 1, self.width);
        }
        out.push(self.fired);
        out
    }

    fn import_state(&mut self, bits: &[bool]) -> Result<()> {
        let (flag, rest) = split_flag(bits)?;
        self.last = match rest.len() as u64 {
            0 => None,
            w if w == self.width => Some(read_bits(rest) + 1),
            _ => return Err(Error::InvalidParameter("malformed adjacent state".into())),
        };
        self.fired = flag;
        Ok(())
    }
}

/// Stores the whole pass and fires on any repeated element.
#[derive(Debug, Clone)]
pub struct FullStoreDetector {
    width: u64,
    t: u64,
    seen: Vec<u64>,
    index: HashSet<u64>,
    fired: bool,
}

impl FullStoreDetector {
    pub fn new(n: u64, t: u64) -> Self {
        Self {
            width: element_bits(n),
            t,
            seen: Vec::new(),
            index: HashSet::new(),
            fired: false,
        }
    }
}

impl Detector for FullStoreDetector {
    fn name(&self) -> String {
        "full".into()
    }

    fn budget_bits(&self) -> u64 {
        self.t * self.width + 1
    }

    fn state_bits(&self) -> u64 {
        self.seen.len() as u64 * self.width + 1
    }

    fn begin_pass(&mut self) {
        self.seen.clear();
        self.index.clear();
    }

    fn observe(&mut self, x: u64) {
        if !self.index.insert(x) {
            self.fired = true;
        }
        self.seen.push(x);
    }

    fn fired(&self) -> bool {
        self.fired
    }

    fn export_state(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.state_bits() as usize);
        for &x in &self.seen {
            push_bits(&mut out, x - 1, self.width);
        }
        out.push(self.fired);
        out
    }

    fn import_state(&mut self, bits: &[bool]) -> Result<()> {
        let (flag, rest) = split_flag(bits)?;
        if rest.len() as u64 % self.width != 0 {
            return Err(Error::InvalidParameter("malformed full-store state".into()));
        }
        self.seen = rest.chunks(self.width as usize).map(|c| read_bits(c) + 1).collect();
        self.index = self.seen.iter().copied().collect();
        self.fired = flag;
        Ok(())
    }
}

/// How a window detector turns an element into the key it stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKey {
    /// The element itself, `ceil(log2 n)` bits, stored as `x - 1`.
    Element { n: u64 },
    /// Top `r` bits of a seeded 64-bit mix of the element.
    Fingerprint { r: u32, seed: u64 },
}

impl WindowKey {
    fn width(&self) -> u64 {
        match *self {
            Self::Element { n } => element_bits(n),
            Self::Fingerprint { r, .. } => u64::from(r),
        }
    }

    fn key(&self, x: u64) -> u64 {
        match *self {
            Self::Element { .. } => x - 1,
            Self::Fingerprint { r, seed } => {
                let h = mix64(x ^ mix64(seed));
                if r >= 64 {
                    h
                } else {
                    h >> (64 - r)
                }
            }
        }
    }
}

/// Keeps the keys of the last `w` elements of the pass and fires when a new
/// element's key matches one of them, i.e. on a repeat at distance `<= w`.
#[derive(Debug, Clone)]
pub struct WindowDetector {
    w: usize,
    keyer: WindowKey,
    ring: VecDeque<u64>,
    index: HashMap<u64, u32>,
    fired: bool,
}

impl WindowDetector {
    pub fn new(w: usize, keyer: WindowKey) -> Result<Self> {
        if w == 0 {
            return Err(Error::InvalidParameter("window length must be >= 1".into()));
        }
        if let WindowKey::Fingerprint { r, .. } = keyer {
            if r == 0 || r > 64 {
                return Err(Error::InvalidParameter(format!("fingerprint width {r} not in 1..=64")));
            }
        }
        Ok(Self {
            w,
            keyer,
            ring: VecDeque::with_capacity(w),
            index: HashMap::with_capacity(w),
            fired: false,
        })
    }

    fn insert(&mut self, key: u64) {
        if self.ring.len() == self.w {
            let old = self.ring.pop_front().expect("full ring");
            if let Some(c) = self.index.get_mut(&old) {
                *c -= 1;
                if *c == 0 {
                    self.index.remove(&old);
                }
            }
        }
        self.ring.push_back(key);
        *self.index.entry(key).or_default() += 1;
    }
}

impl Detector for WindowDetector {
    fn name(&self) -> String {
        match self.keyer {
            WindowKey::Element { .. } => format!("window(w={})", self.w),
            WindowKey::Fingerprint { r, .. } => format!("fwindow(w={},r={r})", self.w),
        }
    }

    fn budget_bits(&self) -> u64 {
        self.w as u64 * self.keyer.width() + 1
    }

    fn state_bits(&self) -> u64 {
        self.ring.len() as u64 * self.keyer.width() + 1
    }

    fn begin_pass(&mut self) {
        self.ring.clear();
        self.index.clear();
    }

    fn observe(&mut self, x: u64) {
        let key = self.keyer.key(x);
        if self.index.contains_key(&key) {
            self.fired = true;
        }
        self.insert(key);
    }

    fn fired(&self) -> bool {
        self.fired
    }

    fn export_state(&self) -> Vec<bool> {
        let width = self.keyer.width();
        let mut out = Vec::with_capacity(self.state_bits() as usize);
        for &k in &self.ring {
            push_bits(&mut out, k, width);
        }
        out.push(self.fired);
        out
    }

    fn import_state(&mut self, bits: &[bool]) -> Result<()> {
        let (flag, rest) = split_flag(bits)?;
        let width = self.keyer.width() as usize;
        if rest.len() % width != 0 || rest.len() / width > self.w {
            return Err(Error::InvalidParameter("malformed window state".into()));
        }
        self.begin_pass();
        for chunk in rest.chunks(width) {
            self.insert(read_bits(chunk));
        }
        self.fired = flag;
        Ok(())
    }
}

/// Detector configuration, independent of the stream parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DetectorConfig {
    Adjacent,
    Full,
    Window { w: usize },
    Fwindow { w: usize, r: u32, seed: u64 },
}

pub fn adjacent_detector() -> DetectorConfig {
    DetectorConfig::Adjacent
}

pub fn full_store_detector() -> DetectorConfig {
    DetectorConfig::Full
}

pub fn window_detector(w: usize) -> DetectorConfig {
    DetectorConfig::Window { w }
}

/// Default fingerprint seed; experiments record whichever seed they use.
pub const DEFAULT_FINGERPRINT_SEED: u64 = 0x5EED_F1D0_0000_0001;

pub fn fingerprint_window_detector(w: usize, r: u32) -> DetectorConfig {
    DetectorConfig::Fwindow {
        w,
        r,
        seed: DEFAULT_FINGERPRINT_SEED,
    }
}

impl DetectorConfig {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Adjacent => "adjacent",
            Self::Full => "full",
            Self::Window { .. } => "window",
            Self::Fwindow { .. } => "fwindow",
        }
    }

    pub fn window(&self) -> Option<usize> {
        match *self {
            Self::Window { w } | Self::Fwindow { w, .. } => Some(w),
            _ => None,
        }
    }

    /// Instantiate for streams of length `t` over `[1..n]`.
    pub fn build(&self, n: u64, t: u64) -> Result<Box<dyn Detector>> {
        if n == 0 || t == 0 {
            return Err(Error::InvalidParameter(format!("need n >= 1 and t >= 1, got n={n}, t={t}")));
        }
        Ok(match *self {
            Self::Adjacent => Box::new(AdjacentDetector::new(n)),
            Self::Full => Box::new(FullStoreDetector::new(n, t)),
            Self::Window { w } => {
                if w as u64 > t {
                    return Err(Error::InvalidParameter(format!("window {w} longer than stream {t}")));
                }
                Box::new(WindowDetector::new(w, WindowKey::Element { n })?)
            }
            Self::Fwindow { w, r, seed } => Box::new(WindowDetector::new(w, WindowKey::Fingerprint { r, seed })?),
        })
    }

    pub fn space_bits(&self, n: u64, t: u64) -> Result<u64> {
        Ok(self.build(n, t)?.budget_bits())
    }

    /// Union bound on extra false positives caused by fingerprint
    /// collisions: `t * w * 2^-r`. Zero for exact detectors.
    pub fn fingerprint_fpr_inflation(&self, t: u64) -> f64 {
        match *self {
            Self::Fwindow { w, r, .. } => (t as f64) * (w as f64) * 2f64.powi(-(r as i32)),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunOutcome {
    pub fired: bool,
    pub peak_state_bits: u64,
}

/// Feed `elements` to the detector `passes` times, auditing space after
/// every element.
pub fn run_elements(detector: &mut dyn Detector, elements: &[u64], passes: usize) -> Result<RunOutcome> {
    if passes == 0 || passes > detector.max_passes() {
        return Err(Error::PassLimit {
            name: detector.name(),
            supported: detector.max_passes(),
            requested: passes,
        });
    }
    let budget = detector.budget_bits();
    let mut peak = detector.state_bits();
    for _ in 0..passes {
        detector.begin_pass();
        for &x in elements {
            detector.observe(x);
            let used = detector.state_bits();
            if used > budget {
                return Err(Error::SpaceExceeded {
                    name: detector.name(),
                    used,
                    budget,
                });
            }
            peak = peak.max(used);
        }
    }
    Ok(RunOutcome {
        fired: detector.fired(),
        peak_state_bits: peak,
    })
}

/// Run on a stream; only the element sequence reaches the detector.
pub fn run(detector: &mut dyn Detector, stream: &Stream, passes: usize) -> Result<RunOutcome> {
    run_elements(detector, stream.elements(), passes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvantageReport {
    pub detector: String,
    pub n: u64,
    pub t: u64,
    pub p: f64,
    pub passes: usize,
    pub space_bits: u64,
    pub tpr: f64,
    pub fpr: f64,
    pub advantage: f64,
    pub trials: u64,
    /// 95% normal-approximation half width of the advantage.
    pub ci_half_width: f64,
    pub peak_state_bits: u64,
    pub fpr_inflation_bound: f64,
}

/// Run `trials` uniform and `trials` planted streams; trial `i` of each model
/// draws from its own stream of `factory`.
pub fn estimate_advantage(
    config: &DetectorConfig,
    n: u64,
    t: u64,
    p: f64,
    passes: usize,
    trials: u64,
    factory: &StreamFactory,
) -> Result<AdvantageReport> {
    if trials < 100 {
        return Err(Error::InvalidParameter(format!("need at least 100 trials, got {trials}")));
    }
    let probe = config.build(n, t)?;
    let name = probe.name();
    let space_bits = probe.budget_bits();
    drop(probe);

    let uniform = factory.child("uniform");
    let planted = factory.child("planted");
    let one = |planted_model: bool, i: u64| -> Result<RunOutcome> {
        let stream = if planted_model {
            gen_planted_needle(n, t, p, &mut planted.stream(i))?
        } else {
            gen_uniform(n, t, &mut uniform.stream(i))?
        };
        let mut det = config.build(n, t)?;
        run(det.as_mut(), &stream, passes)
    };
    let tally = |planted_model: bool| -> Result<(u64, u64)> {
        (0..trials)
            .into_par_iter()
            .map(|i| one(planted_model, i).map(|o| (u64::from(o.fired), o.peak_state_bits)))
            .try_reduce(|| (0, 0), |a, b| Ok((a.0 + b.0, a.1.max(b.1))))
    };
    let (tp, peak_a) = tally(true)?;
    let (fp, peak_b) = tally(false)?;
    let tpr = tp as f64 / trials as f64;
    let fpr = fp as f64 / trials as f64;
    let var = (tpr * (1.0 - tpr) + fpr * (1.0 - fpr)) / trials as f64;
    Ok(AdvantageReport {
        detector: name,
        n,
        t,
        p,
        passes,
        space_bits,
        tpr,
        fpr,
        advantage: tpr - fpr,
        trials,
        ci_half_width: Z95 * var.sqrt(),
        peak_state_bits: peak_a.max(peak_b),
        fpr_inflation_bound: config.fingerprint_fpr_inflation(t),
    })
}

/// Probability that a Bernoulli(`p`) sequence of length `t` has two
/// consecutive successes, computed exactly by a two-state recursion.
pub fn adjacent_pair_probability(t: u64, p: f64) -> f64 {
    // (no pair so far and last was a failure, ... last was a success)
    let (mut fail, mut succ) = (1.0 - p, p);
    for _ in 1..t {
        let next_fail = (fail + succ) * (1.0 - p);
        let next_succ = fail * p;
        fail = next_fail;
        succ = next_succ;
    }
    1.0 - (fail + succ)
}

/// Random `n`-ary stream helper shared by the tests.
pub fn random_elements<R: Rng + ?Sized>(n: u64, t: usize, rng: &mut R) -> Vec<u64> {
    (0..t).map(|_| rng.random_range(1..=n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;

    fn fire(config: DetectorConfig, n: u64, xs: &[u64], passes: usize) -> bool {
        let mut d = config.build(n, xs.len() as u64).unwrap();
        run_elements(d.as_mut(), xs, passes).unwrap().fired
    }

    #[test]
    fn element_width() {
        assert_eq!(element_bits(1), 1);
        assert_eq!(element_bits(2), 1);
        assert_eq!(element_bits(16), 4);
        assert_eq!(element_bits(17), 5);
        assert_eq!(element_bits(100_000_000), 27);
    }

    #[test]
    fn adjacent_examples() {
        assert!(fire(adjacent_detector(), 10, &[3, 7, 7, 1], 1));
        assert!(!fire(adjacent_detector(), 10, &[3, 7, 1, 3], 1));
        // the pass boundary is not an adjacency
        assert!(!fire(adjacent_detector(), 10, &[1, 2, 1], 2));
    }

    #[test]
    fn zero_passes_rejected() {
        let mut d = adjacent_detector().build(10, 2).unwrap();
        assert!(matches!(run_elements(d.as_mut(), &[1, 1], 0), Err(Error::PassLimit { .. })));
    }

    #[test]
    fn full_store_examples() {
        assert!(fire(full_store_detector(), 10, &[5, 9, 5], 1));
        assert!(!fire(full_store_detector(), 10, &[5, 9, 4], 3));
        let d = full_store_detector().build(1 << 20, 100).unwrap();
        assert_eq!(d.budget_bits(), 100 * 20 + 1);
    }

    #[test]
    fn window_reach_and_budget() {
        assert!(fire(window_detector(2), 10, &[4, 1, 4], 1));
        assert!(!fire(window_detector(1), 10, &[4, 1, 4], 1));
        assert!(!fire(window_detector(2), 10, &[4, 1, 2, 4], 1));
        assert!(window_detector(5).build(10, 4).is_err());
        assert_eq!(window_detector(8).space_bits(1 << 10, 100).unwrap(), 8 * 10 + 1);
    }

    #[test]
    fn fingerprint_one_bit_fires_on_pigeonhole() {
        // three distinct elements, one-bit keys, window 2 -> two of three share a key
        let mut rng = trial_rng(0, "fp1", 0);
        for _ in 0..50 {
            let xs: Vec<u64> = (0..3).map(|_| rng.random_range(1..=1_000_000)).collect();
            let cfg = DetectorConfig::Fwindow { w: 2, r: 1, seed: rng.random() };
            assert!(fire(cfg, 1_000_000, &xs, 1));
        }
    }

    #[test]
    fn fingerprint_space_audit() {
        let cfg = fingerprint_window_detector(7, 12);
        let mut d = cfg.build(1000, 50).unwrap();
        let mut rng = trial_rng(0, "fp-audit", 0);
        let xs = random_elements(1000, 50, &mut rng);
        let out = run_elements(d.as_mut(), &xs, 2).unwrap();
        assert_eq!(d.budget_bits(), 7 * 12 + 1);
        assert_eq!(out.peak_state_bits, 7 * 12 + 1);
        assert!((cfg.fingerprint_fpr_inflation(50) - 350.0 / 4096.0).abs() < 1e-15);
    }

    #[test]
    fn state_round_trip_resumes_identically() {
        let mut rng = trial_rng(0, "roundtrip", 0);
        for cfg in [adjacent_detector(), full_store_detector(), window_detector(5), fingerprint_window_detector(5, 9)] {
            for _ in 0..50 {
                let xs = random_elements(40, 30, &mut rng);
                let cut = rng.random_range(0..=30);
                let mut whole = cfg.build(40, 30).unwrap();
                whole.begin_pass();
                xs.iter().for_each(|&x| whole.observe(x));

                let mut first = cfg.build(40, 30).unwrap();
                first.begin_pass();
                xs[..cut].iter().for_each(|&x| first.observe(x));
                let bits = first.export_state();
                assert_eq!(bits.len() as u64, first.state_bits());
                let mut second = cfg.build(40, 30).unwrap();
                second.import_state(&bits).unwrap();
                xs[cut..].iter().for_each(|&x| second.observe(x));
                assert_eq!(second.fired(), whole.fired(), "{cfg:?}");
                assert_eq!(second.export_state(), whole.export_state());
            }
        }
    }

    #[test]
    fn adjacent_pair_probability_matches_enumeration() {
        for t in 1..=10u64 {
            let p: f64 = 0.3;
            let mut exact = 0.0;
            for mask in 0u32..(1 << t) {
                let has_pair = (mask & (mask >> 1)) != 0;
                if has_pair {
                    let ones = mask.count_ones() as i32;
                    exact += p.powi(ones) * (1.0 - p).powi(t as i32 - ones);
                }
            }
            assert!((adjacent_pair_probability(t, p) - exact).abs() < 1e-12, "t={t}");
        }
    }
}
