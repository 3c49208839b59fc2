//! Multi-party unique set-disjointness.
//!
//! Instances, their hard input distributions, a bit-metered blackboard, the
//! send-the-smallest-set protocol, and the reduction that turns a streaming
//! detector into a protocol by embedding the players' sets into one stream.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::detectors::{element_bits, DetectorConfig};
use crate::error::{Error, Result};
use crate::intervals::{Interval, IntervalSystem};
use crate::streams::{Stream, StreamMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Promise {
    Disjoint,
    UniqueIntersection { x: u64 },
}

impl Promise {
    pub fn bit(&self) -> u8 {
        match self {
            Self::Disjoint => 0,
            Self::UniqueIntersection { .. } => 1,
        }
    }
}

/// `k` player sets over `[1..n]`, each stored ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromiseInstance {
    pub n: u64,
    pub sets: Vec<Vec<u64>>,
    pub promise: Promise,
}

impl PromiseInstance {
    pub fn new(n: u64, mut sets: Vec<Vec<u64>>, promise: Promise) -> Result<Self> {
        for s in &mut sets {
            s.sort_unstable();
        }
        let inst = Self { n, sets, promise };
        inst.validate()?;
        Ok(inst)
    }

    pub fn k(&self) -> usize {
        self.sets.len()
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.sets.iter().map(|s| s.len() as u64).collect()
    }

    pub fn bit(&self) -> u8 {
        self.promise.bit()
    }

    /// Checks the element range and the promise.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        for (i, s) in self.sets.iter().enumerate() {
            if s.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("set {i} is not strictly ascending"));
            }
            if s.iter().any(|&x| x == 0 || x > self.n) {
                return bad(format!("set {i} leaves [1..{}]", self.n));
            }
        }
        let common = match self.promise {
            Promise::Disjoint => None,
            Promise::UniqueIntersection { x } => {
                if let Some(i) = self.sets.iter().position(|s| s.binary_search(&x).is_err()) {
                    return bad(format!("common element {x} missing from set {i}"));
                }
                Some(x)
            }
        };
        let mut seen = BTreeSet::new();
        for s in &self.sets {
            for &e in s {
                if Some(e) != common && !seen.insert(e) {
                    return bad(format!("element {e} shared outside the promise"));
                }
            }
        }
        Ok(())
    }
}

/// Set sizes `[s_1, ..., s_k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeVector(pub Vec<u64>);

impl SizeVector {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    /// Positive sizes with `sum <= n/2`.
    pub fn check(&self, n: u64) -> Result<()> {
        if self.0.is_empty() || self.0.contains(&0) || 2 * self.total() > n {
            return Err(Error::SizeViolation {
                sizes: self.0.clone(),
                n,
            });
        }
        Ok(())
    }
}

/// Weights over players summing to at most one; the remainder is the
/// probability that a coordinate has no owner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubDistribution(Vec<f64>);

impl SubDistribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || total > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!("{weights:?} is not a sub-distribution")));
        }
        Ok(Self(weights))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// Owner of one coordinate, `None` with probability `1 - sum`.
    fn draw_owner<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.0.iter().enumerate() {
            acc += w;
            if u < acc {
                return Some(i);
            }
        }
        None
    }
}

fn distinct_from<R: Rng + ?Sized>(n: u64, amount: usize, rng: &mut R) -> Vec<u64> {
    index::sample(rng, n as usize, amount)
        .into_iter()
        .map(|i| i as u64 + 1)
        .collect()
}

/// Uniform instance of the given promise bit with exactly the given sizes.
pub fn sample_fixed_size<R: Rng + ?Sized>(b: u8, sizes: &SizeVector, n: u64, rng: &mut R) -> Result<PromiseInstance> {
    sizes.check(n)?;
    let (promise, pool, reserved) = match b {
        0 => (Promise::Disjoint, distinct_from(n, sizes.total() as usize, rng), 0),
        1 => {
            let x = rng.random_range(1..=n);
            let others = sizes.total() as usize - sizes.0.len();
            // draw from [n] \ {x} by skipping over x
            let pool = distinct_from(n - 1, others, rng)
                .into_iter()
                .map(|e| if e >= x { e + 1 } else { e })
                .collect();
            (Promise::UniqueIntersection { x }, pool, 1)
        }
        _ => return Err(Error::InvalidParameter(format!("promise bit must be 0 or 1, got {b}"))),
    };
    let mut rest = pool.as_slice();
    let sets = sizes
        .0
        .iter()
        .map(|&s| {
            let take = s as usize - reserved;
            let (mine, tail) = rest.split_at(take);
            rest = tail;
            let mut set = mine.to_vec();
            if let Promise::UniqueIntersection { x } = promise {
                set.push(x);
            }
            set
        })
        .collect();
    PromiseInstance::new(n, sets, promise)
}

/// Product-style instance: each coordinate gets an owner drawn from `nu`
/// (or none) and the owner holds it with probability 1/2. For `b = 1` one
/// uniform coordinate is then given to every player.
pub fn sample_product<R: Rng + ?Sized>(b: u8, nu: &SubDistribution, n: u64, rng: &mut R) -> Result<PromiseInstance> {
    if b > 1 {
        return Err(Error::InvalidParameter(format!("promise bit must be 0 or 1, got {b}")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("universe must be non-empty".into()));
    }
    let mut sets = vec![Vec::new(); nu.k()];
    for j in 1..=n {
        if let Some(owner) = nu.draw_owner(rng) {
            if rng.random_bool(0.5) {
                sets[owner].push(j);
            }
        }
    }
    let promise = if b == 1 {
        let x = rng.random_range(1..=n);
        for s in &mut sets {
            if let Err(pos) = s.binary_search(&x) {
                s.insert(pos, x);
            }
        }
        // the forced column is the only shared one; other owners' copies of
        // x were single entries and are now part of the common column
        Promise::UniqueIntersection { x }
    } else {
        Promise::Disjoint
    };
    PromiseInstance::new(n, sets, promise)
}

/// Relabel every set through `map`, which must be injective on the used
/// elements and land in `[1..n]`.
pub fn relabel(inst: &PromiseInstance, map: impl Fn(u64) -> u64) -> Result<PromiseInstance> {
    let sets = inst.sets.iter().map(|s| s.iter().map(|&e| map(e)).collect()).collect();
    let promise = match inst.promise {
        Promise::Disjoint => Promise::Disjoint,
        Promise::UniqueIntersection { x } => Promise::UniqueIntersection { x: map(x) },
    };
    PromiseInstance::new(inst.n, sets, promise)
}

/// Apply one uniform permutation of `[1..n]` to all sets.
///
/// Only the images of elements that occur are drawn; a uniform injection of
/// the used elements is the restriction of a uniform permutation.
pub fn randomize_by_permutation<R: Rng + ?Sized>(inst: &PromiseInstance, rng: &mut R) -> Result<PromiseInstance> {
    let used: Vec<u64> = inst
        .sets
        .iter()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let images = distinct_from(inst.n, used.len(), rng);
    relabel(inst, |e| {
        let i = used.binary_search(&e).expect("element is used");
        images[i]
    })
}

/// Stream block of player `i`: filler positions of `J_i` are uniform over
/// `[1..n]`, the positions of `I_i` carry a uniform ordering of `S_i`.
pub fn player_segment<R: Rng + ?Sized>(
    set: &[u64],
    interval: &Interval,
    block: &Interval,
    n: u64,
    rng: &mut R,
) -> Vec<u64> {
    let mut order = set.to_vec();
    order.shuffle(rng);
    let mut placed = order.into_iter();
    block
        .positions()
        .map(|pos| {
            if interval.contains(pos) {
                placed.next().expect("interval length equals set size")
            } else {
                rng.random_range(1..=n)
            }
        })
        .collect()
}

fn check_embedding(inst: &PromiseInstance, f: &IntervalSystem, n: u64) -> Result<()> {
    if inst.sizes() != f.sizes() {
        return Err(Error::SizeMismatch {
            sets: inst.sizes(),
            intervals: f.sizes(),
        });
    }
    if inst.n != n {
        return Err(Error::InvalidParameter(format!(
            "instance universe {} differs from stream domain {n}",
            inst.n
        )));
    }
    Ok(())
}

/// Concatenation of all player segments.
pub fn embed_to_stream<R: Rng + ?Sized>(inst: &PromiseInstance, f: &IntervalSystem, n: u64, rng: &mut R) -> Result<Stream> {
    check_embedding(inst, f, n)?;
    let mut elements = Vec::with_capacity(f.t() as usize);
    for ((set, iv), block) in inst.sets.iter().zip(f.intervals()).zip(f.covering_blocks()) {
        elements.extend(player_segment(set, iv, &block, n, rng));
    }
    let meta = match inst.promise {
        Promise::Disjoint => None,
        Promise::UniqueIntersection { x } => Some(StreamMeta {
            needle: x,
            forced_positions: f
                .intervals()
                .iter()
                .map(|iv| {
                    iv.positions()
                        .find(|&pos| elements[pos as usize - 1] == x)
                        .expect("x is placed inside every interval")
                })
                .collect(),
        }),
    };
    Stream::new(n, elements, meta)
}

// ---------------------------------------------------------------------------
// Blackboard
// ---------------------------------------------------------------------------

/// Shared write-only log with per-player metering.
#[derive(Debug, Clone)]
pub struct Blackboard {
    bits: Vec<bool>,
    authors: Vec<usize>,
    messages: Vec<(usize, std::ops::Range<usize>)>,
    counts: Vec<u64>,
    bounds: Option<Vec<u64>>,
}

impl Blackboard {
    pub fn new(players: usize, bounds: Option<Vec<u64>>) -> Self {
        Self {
            bits: Vec::new(),
            authors: Vec::new(),
            messages: Vec::new(),
            counts: vec![0; players],
            bounds,
        }
    }

    /// Append a message; fails without writing if it would break the
    /// author's bound.
    pub fn write(&mut self, player: usize, message: &[bool]) -> Result<()> {
        if player >= self.counts.len() {
            return Err(Error::InvalidParameter(format!("no player {player}")));
        }
        let after = self.counts[player] + message.len() as u64;
        if let Some(bounds) = &self.bounds {
            if after > bounds[player] {
                return Err(Error::Metering {
                    player,
                    budget: bounds[player],
                });
            }
        }
        let start = self.bits.len();
        self.bits.extend_from_slice(message);
        self.authors.extend(std::iter::repeat_n(player, message.len()));
        self.messages.push((player, start..self.bits.len()));
        self.counts[player] = after;
        Ok(())
    }

    pub fn messages(&self) -> impl Iterator<Item = (usize, &[bool])> {
        self.messages.iter().map(|(p, r)| (*p, &self.bits[r.clone()]))
    }

    pub fn last_message(&self) -> Option<(usize, &[bool])> {
        self.messages.last().map(|(p, r)| (*p, &self.bits[r.clone()]))
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transcript {
    /// `(player, bit)` in writing order.
    pub entries: Vec<(usize, bool)>,
    pub counts: Vec<u64>,
    pub output: bool,
}

impl Transcript {
    pub fn total_bits(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

pub trait Protocol {
    fn name(&self) -> String;

    fn players(&self) -> usize;

    /// Declared per-player bounds `[c_1, ..., c_k]`, if any.
    fn bounds(&self) -> Option<Vec<u64>>;

    /// Play the protocol on the board and return the output bit
    /// (`true` = unique intersection).
    fn execute(&self, inst: &PromiseInstance, board: &mut Blackboard, rng: &mut dyn RngCore) -> Result<bool>;
}

pub fn run_blackboard(protocol: &dyn Protocol, inst: &PromiseInstance, rng: &mut dyn RngCore) -> Result<Transcript> {
    if protocol.players() != inst.k() {
        return Err(Error::PlayerCount {
            declared: protocol.players(),
            actual: inst.k(),
        });
    }
    let mut board = Blackboard::new(inst.k(), protocol.bounds());
    let output = protocol.execute(inst, &mut board, rng)?;
    Ok(Transcript {
        entries: board.authors.iter().copied().zip(board.bits.iter().copied()).collect(),
        counts: board.counts,
        output,
    })
}

/// Player 1 writes a single 0 bit.
#[derive(Debug, Clone, Copy)]
pub struct AlwaysZero {
    pub players: usize,
}

impl Protocol for AlwaysZero {
    fn name(&self) -> String {
        "always-zero".into()
    }

    fn players(&self) -> usize {
        self.players
    }

    fn bounds(&self) -> Option<Vec<u64>> {
        let mut b = vec![0; self.players];
        b[0] = 1;
        Some(b)
    }

    fn execute(&self, _inst: &PromiseInstance, board: &mut Blackboard, _rng: &mut dyn RngCore) -> Result<bool> {
        board.write(0, &[false])?;
        Ok(false)
    }
}

fn encode_set(set: &[u64], width: u64) -> Vec<bool> {
    let mut out = Vec::with_capacity(set.len() * width as usize);
    for &e in set {
        for i in (0..width).rev() {
            out.push(((e - 1) >> i) & 1 == 1);
        }
    }
    out
}

fn decode_set(bits: &[bool], width: u64) -> Vec<u64> {
    bits.chunks(width as usize)
        .map(|c| c.iter().fold(0u64, |acc, &b| (acc << 1) | u64::from(b)) + 1)
        .collect()
}

/// The player with the smallest set writes it; every other player answers
/// with one bit saying whether its own set meets the written one.
#[derive(Debug, Clone)]
pub struct SendMinSet {
    sizes: SizeVector,
    n: u64,
}

pub fn send_min_set_protocol(k: usize, sizes: &SizeVector, n: u64) -> Result<SendMinSet> {
    if sizes.0.len() != k || k == 0 {
        return Err(Error::InvalidParameter(format!("{k} players but sizes {:?}", sizes.0)));
    }
    Ok(SendMinSet {
        sizes: sizes.clone(),
        n,
    })
}

impl SendMinSet {
    /// Index of the writer: smallest size, lowest index on ties.
    pub fn writer(&self) -> usize {
        (0..self.sizes.0.len())
            .min_by_key(|&i| (self.sizes.0[i], i))
            .expect("k >= 1")
    }

    pub fn width(&self) -> u64 {
        element_bits(self.n)
    }
}

impl Protocol for SendMinSet {
    fn name(&self) -> String {
        "minset".into()
    }

    fn players(&self) -> usize {
        self.sizes.0.len()
    }

    fn bounds(&self) -> Option<Vec<u64>> {
        let writer = self.writer();
        Some(
            (0..self.players())
                .map(|i| if i == writer { self.sizes.0[i] * self.width() } else { 1 })
                .collect(),
        )
    }

    fn execute(&self, inst: &PromiseInstance, board: &mut Blackboard, _rng: &mut dyn RngCore) -> Result<bool> {
        if inst.sizes() != self.sizes.0 || inst.n != self.n {
            return Err(Error::SizeMismatch {
                sets: inst.sizes(),
                intervals: self.sizes.0.clone(),
            });
        }
        let writer = self.writer();
        board.write(writer, &encode_set(&inst.sets[writer], self.width()))?;
        let (_, message) = board.last_message().expect("just written");
        let shared = decode_set(message, self.width());
        if self.players() == 1 {
            return Ok(!shared.is_empty());
        }
        let mut all = true;
        for i in (0..self.players()).filter(|&i| i != writer) {
            let meets = shared.iter().any(|e| inst.sets[i].binary_search(e).is_ok());
            board.write(i, &[meets])?;
            all &= meets;
        }
        Ok(all)
    }
}

/// Simulates a streaming detector: each player runs it over its own stream
/// block and writes the detector state for the next player; after each pass
/// the last player hands the state back to the first. The last player
/// finally writes the decision bit.
#[derive(Debug, Clone)]
pub struct DetectorAdapter {
    pub detector: DetectorConfig,
    pub system: IntervalSystem,
    pub n: u64,
    pub passes: usize,
}

pub fn detector_protocol_adapter(detector: DetectorConfig, system: IntervalSystem, n: u64, passes: usize) -> Result<DetectorAdapter> {
    if system.is_empty() {
        return Err(Error::InvalidParameter("adapter needs at least one interval".into()));
    }
    if passes == 0 {
        return Err(Error::InvalidParameter("adapter needs at least one pass".into()));
    }
    detector.build(n, system.t())?;
    Ok(DetectorAdapter {
        detector,
        system,
        n,
        passes,
    })
}

impl DetectorAdapter {
    /// Space `s` of the simulated detector in bits.
    pub fn space_bits(&self) -> u64 {
        self.detector
            .space_bits(self.n, self.system.t())
            .expect("validated at construction")
    }
}

impl Protocol for DetectorAdapter {
    fn name(&self) -> String {
        format!("adapter({})", self.detector.label())
    }

    fn players(&self) -> usize {
        self.system.k()
    }

    fn bounds(&self) -> Option<Vec<u64>> {
        Some(vec![self.passes as u64 * self.space_bits(); self.players()])
    }

    fn execute(&self, inst: &PromiseInstance, board: &mut Blackboard, rng: &mut dyn RngCore) -> Result<bool> {
        check_embedding(inst, &self.system, self.n)?;
        let k = self.players();
        let t = self.system.t();
        let segments: Vec<Vec<u64>> = inst
            .sets
            .iter()
            .zip(self.system.intervals())
            .zip(self.system.covering_blocks())
            .map(|((set, iv), block)| player_segment(set, iv, &block, self.n, rng))
            .collect();

        let mut det = self.detector.build(self.n, t)?;
        let budget = det.budget_bits();
        for pass in 0..self.passes {
            for (i, segment) in segments.iter().enumerate() {
                if pass > 0 || i > 0 {
                    if k > 1 {
                        // fresh instance: only the board carries state
                        let (_, state) = board.last_message().expect("previous player wrote its state");
                        let state = state.to_vec();
                        det = self.detector.build(self.n, t)?;
                        det.import_state(&state)?;
                    }
                }
                if i == 0 {
                    det.begin_pass();
                }
                for &x in segment {
                    det.observe(x);
                    let used = det.state_bits();
                    if used > budget {
                        return Err(Error::SpaceExceeded {
                            name: det.name(),
                            used,
                            budget,
                        });
                    }
                }
                let final_turn = pass + 1 == self.passes && i + 1 == k;
                if !final_turn && k > 1 {
                    board.write(i, &det.export_state())?;
                }
            }
        }
        let decision = det.fired();
        board.write(k - 1, &[decision])?;
        Ok(decision)
    }
}

/// Draw `b` uniformly, then an instance from the fixed-size distribution.
pub fn sample_fixed_size_mixture<R: Rng + ?Sized>(sizes: &SizeVector, n: u64, rng: &mut R) -> Result<PromiseInstance> {
    let b = u8::from(rng.random_bool(0.5));
    sample_fixed_size(b, sizes, n, rng)
}
