//! End-to-end acceptance suite. Prints one line per criterion and exits
//! non-zero if any criterion fails that is not listed in `KNOWN_RED`.

use std::collections::{BTreeSet, HashMap};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;
use rayon::prelude::*;

use needle_core::detectors::{
    adjacent_detector, estimate_advantage, full_store_detector, window_detector,
};
use needle_core::disjointness::{
    detector_protocol_adapter, randomize_by_permutation, run_blackboard, sample_fixed_size,
    sample_fixed_size_mixture, send_min_set_protocol, Promise, PromiseInstance, SizeVector,
};
use needle_core::exact::binomial;
use needle_core::rng::{StreamFactory, TrialRng};
use needle_core::sampler::{
    all_systems, exact_refined_sets_of, exact_set_distribution, exact_sets_of, sample_composed_system,
    sample_interval_system, sample_refined, split_pmf, value_stats, CompositionPolicy, PieceWeights,
};
use needle_core::stats::{chi_square_gof_keyed, chi_square_homogeneity, empirical_tv, proportion_se};
use needle_core::streams::{
    collision_pattern, gen_planted_interval, gen_planted_needle, gen_uniform, preset_domain,
    PatternCounts,
};
use needle_core::{Interval, IntervalSystem, Stream};

const SEED: u64 = 20_240_601;
const ALPHA: f64 = 0.001;

/// Criteria expected to fail, with the reason. Each is recorded in the
/// decisions ledger; they are still run and reported.
const KNOWN_RED: &[(u32, &str)] = &[(
    6,
    "b=0 half: disjoint sets forbid the cross-interval collisions a uniform stream has; \
     distance is O(t^2/n), which 10^6 trials resolve",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rational(num: u64, den: u64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

fn patterns<F>(factory: &StreamFactory, trials: u64, gen: F) -> PatternCounts
where
    F: Fn(&mut TrialRng) -> Stream + Sync,
{
    let chunks: Vec<PatternCounts> = (0..trials)
        .into_par_iter()
        .fold(PatternCounts::new, |mut acc, i| {
            let s = gen(&mut factory.stream(i));
            *acc.entry(collision_pattern(&s)).or_default() += 1;
            acc
        })
        .collect();
    let mut total = PatternCounts::new();
    for c in chunks {
        for (k, v) in c {
            *total.entry(k).or_default() += v;
        }
    }
    total
}

// 1
fn perfectness() -> Outcome {
    let mut cells = 0;
    for t in [2u64, 4, 8, 16] {
        for k in 0..=t.min(5) {
            let dist = exact_set_distribution(t, k).expect("within guard");
            let bad = dist.uniformity_mismatches();
            if !bad.is_empty() {
                return outcome(false, format!("t={t} k={k}: {} subsets off 1/C(t,k)", bad.len()));
            }
            cells += 1;
        }
    }
    outcome(true, format!("{cells} (t,k) cells exactly uniform"))
}

// 2
fn moments() -> Outcome {
    let mut cells = 0;
    for t in (2..=64u64).step_by(2) {
        for k in 0..=t.min(16) {
            let pmf = split_pmf(t, k).expect("k <= t");
            let k_r = rational(k, 1);
            if pmf.mean() != &k_r / rational(2, 1) {
                return outcome(false, format!("t={t} k={k}: mean {}", pmf.mean()));
            }
            if pmf.moment(2) > rational(k * (k + 1), 4) {
                return outcome(false, format!("t={t} k={k}: second moment {}", pmf.moment(2)));
            }
            cells += 1;
        }
    }
    outcome(true, format!("{cells} cells: E[j] = k/2, E[j^2] <= k(k+1)/4"))
}

// 3
fn value_bound_cells() -> Outcome {
    let factory = StreamFactory::new(SEED, "value-bound");
    let mut worst = f64::NEG_INFINITY;
    let mut cells = 0;
    for e in 3..=10 {
        let t = 1u64 << e;
        let ks: BTreeSet<u64> = [2, (t as f64).sqrt().floor() as u64, t / 6].into();
        for k in ks {
            let st = value_stats(t, k, 10_000, &factory.child(&format!("{t}/{k}"))).expect("valid cell");
            if !st.floor_holds {
                return outcome(false, format!("t={t} k={k}: a sample fell below k^2/t"));
            }
            if !st.mean_within_bound() {
                return outcome(
                    false,
                    format!("t={t} k={k}: mean {:.5} > bound {:.5} + 3se", st.mean, st.bound),
                );
            }
            worst = worst.max(st.mean / st.bound);
            cells += 1;
        }
    }
    outcome(true, format!("{cells} cells; max mean/bound = {worst:.3}; floor exact on every sample"))
}

/// Random system of `k` disjoint intervals, each of length >= 2.
fn spread_system<R: Rng>(t: u64, k: u64, rng: &mut R) -> IntervalSystem {
    let mut cuts: Vec<u64> = rand::seq::index::sample(rng, t as usize, 2 * k as usize)
        .into_iter()
        .map(|i| i as u64 + 1)
        .collect();
    cuts.sort_unstable();
    let ivs = cuts.chunks(2).map(|c| Interval::new(c[0], c[1]).unwrap()).collect();
    IntervalSystem::new(t, ivs).unwrap()
}

// 4
fn refinement() -> Outcome {
    let factory = StreamFactory::new(SEED, "refinement");
    let five = rational(5, 1);
    let failures: Vec<String> = (0..100_000u64)
        .into_par_iter()
        .filter_map(|i| {
            let mut rng = factory.stream(i);
            let t = rng.random_range(6..=512u64);
            let k = rng.random_range(1..=t / 6);
            let f = if i % 2 == 0 {
                sample_interval_system(t, k, &mut rng).unwrap()
            } else {
                spread_system(t, k, &mut rng)
            };
            let g = sample_refined(&f, &mut rng).unwrap();
            let ok = g.is_valid() && g.k() == f.k() && g.value() <= &five * f.value();
            (!ok).then(|| format!("t={t} k={k} F={f:?}"))
        })
        .collect();
    if let Some(first) = failures.first() {
        return outcome(false, format!("{} bad samples, e.g. {first}", failures.len()));
    }
    let mut systems = 0;
    for t in 1..=12 {
        for k in 1..=3.min(t) {
            for f in all_systems(t, k) {
                if exact_refined_sets_of(&f, PieceWeights::Proportional) != exact_sets_of(&f) {
                    return outcome(false, format!("Sets law changed for {f:?}"));
                }
                systems += 1;
            }
        }
    }
    outcome(true, format!("1e5 samples valid with value factor <= 5; {systems} systems preserve Sets exactly"))
}

// 5
fn model_equivalence() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (t, p) in [(4u64, 0.5), (8, 0.25)] {
        let n = preset_domain(t);
        let factory = StreamFactory::new(SEED, &format!("equivalence/{t}"));
        let composed = patterns(&factory.child("composed"), 1_000_000, |rng| {
            let f = sample_composed_system(t, p, CompositionPolicy::RefineWhenAdmissible, rng)
                .unwrap()
                .system;
            gen_planted_interval(&f, n, rng).unwrap()
        });
        let needle = patterns(&factory.child("needle"), 1_000_000, |rng| {
            gen_planted_needle(n, t, p, rng).unwrap()
        });
        let out = chi_square_homogeneity(&composed, &needle);
        pass &= !out.rejects(ALPHA);
        details.push(format!("(t={t},p={p}) x2={:.1} dof={} pv={:.3}", out.statistic, out.dof, out.p_value));
    }
    outcome(pass, details.join("; "))
}

// 6
fn embedding_fidelity() -> Outcome {
    let t = 4;
    let n = preset_domain(t);
    let f = IntervalSystem::from_pairs(t, &[(1, 1), (3, 3)]).unwrap();
    let sizes = SizeVector(f.sizes());
    let factory = StreamFactory::new(SEED, "embedding");
    let trials = 1_000_000;
    let embedded = |b: u8, factory: &StreamFactory| {
        patterns(factory, trials, |rng| {
            let inst = sample_fixed_size(b, &sizes, n, rng).unwrap();
            needle_core::disjointness::embed_to_stream(&inst, &f, n, rng).unwrap()
        })
    };
    let e0 = embedded(0, &factory.child("embed0"));
    let uni = patterns(&factory.child("uniform"), trials, |rng| gen_uniform(n, t, rng).unwrap());
    let e1 = embedded(1, &factory.child("embed1"));
    let planted = patterns(&factory.child("planted"), trials, |rng| gen_planted_interval(&f, n, rng).unwrap());

    let c0 = chi_square_homogeneity(&e0, &uni);
    let c1 = chi_square_homogeneity(&e1, &planted);
    let tv0 = empirical_tv(&e0, &uni);
    let tv_bound = (t * t) as f64 / n as f64;
    outcome(
        !c0.rejects(ALPHA) && !c1.rejects(ALPHA),
        format!(
            "b=0 vs uniform x2={:.1} pv={:.2e} (TV {tv0:.5} <= t^2/n {tv_bound:.5}: {}); b=1 vs planted-interval x2={:.1} pv={:.3}",
            c0.statistic,
            c0.p_value,
            tv0 <= tv_bound,
            c1.statistic,
            c1.p_value
        ),
    )
}

/// `Pr[Bin(t, p) >= 2]`.
fn at_least_two(t: u64, p: f64) -> f64 {
    1.0 - (1.0 - p).powi(t as i32) - t as f64 * p * (1.0 - p).powi(t as i32 - 1)
}

// 7
fn baseline_rates() -> Outcome {
    let factory = StreamFactory::new(SEED, "baselines");
    let trials = 10_000;
    let (t, p, n) = (1000u64, 0.1, 100_000_000u64);
    let adj = estimate_advantage(&adjacent_detector(), n, t, p, 1, trials, &factory.child("adjacent")).unwrap();
    let want_adj = 1.0 - (1.0 - p * p).powi(t as i32 - 1);
    let se_adj = proportion_se(want_adj, trials);
    let fpr_adj_ok = adj.fpr <= 2.0 * (t * t) as f64 / n as f64;

    let (t2, p2) = (100u64, 0.05);
    let n2 = preset_domain(t2);
    let full = estimate_advantage(&full_store_detector(), n2, t2, p2, 1, trials, &factory.child("full")).unwrap();
    let want_full = at_least_two(t2, p2);
    let se_full = proportion_se(want_full, trials);
    let fpr_full_ok = full.fpr <= 2.0 * (t2 * t2) as f64 / n2 as f64;

    let adj_ok = (adj.tpr - want_adj).abs() <= 3.0 * se_adj;
    let full_ok = (full.tpr - want_full).abs() <= 3.0 * se_full;
    outcome(
        adj_ok && full_ok && fpr_adj_ok && fpr_full_ok,
        format!(
            "adjacent TPR {:.5} vs {want_adj:.5} (3se {:.5}) FPR {:.4}; full TPR {:.4} vs {want_full:.4} (3se {:.4}) FPR {:.4}",
            adj.tpr,
            3.0 * se_adj,
            adj.fpr,
            full.tpr,
            3.0 * se_full,
            full.fpr
        ),
    )
}

// 8
fn tradeoff() -> Outcome {
    // (p, t, w): the first six have w t p^2 >= 16, the rest <= 1/8
    let grid: &[(f64, u64, usize)] = &[
        (0.02, 256, 256),
        (0.02, 512, 128),
        (0.05, 256, 32),
        (0.05, 128, 128),
        (0.1, 256, 8),
        (0.1, 64, 32),
        (0.02, 256, 1),
        (0.02, 64, 4),
        (0.05, 32, 1),
        (0.05, 16, 2),
        (0.1, 8, 1),
        (0.1, 4, 2),
    ];
    let factory = StreamFactory::new(SEED, "tradeoff");
    let mut failures = Vec::new();
    let mut hi = (f64::INFINITY, 0usize);
    let mut lo = (f64::NEG_INFINITY, 0usize);
    for &(p, t, w) in grid {
        let product = w as f64 * t as f64 * p * p;
        let cfg = window_detector(w);
        let rep = estimate_advantage(&cfg, preset_domain(t), t, p, 1, 1000, &factory.child(&format!("{p}/{t}/{w}")))
            .unwrap();
        if product >= 16.0 {
            let low_edge = rep.advantage - rep.ci_half_width;
            hi = (hi.0.min(low_edge), hi.1 + 1);
            if low_edge < 0.8 {
                failures.push(format!("p={p} t={t} w={w}: adv {:.3}±{:.3}", rep.advantage, rep.ci_half_width));
            }
        } else {
            assert!(product <= 0.125, "grid point between regimes");
            let high_edge = rep.advantage + rep.ci_half_width;
            lo = (lo.0.max(high_edge), lo.1 + 1);
            if high_edge > 0.2 {
                failures.push(format!("p={p} t={t} w={w}: adv {:.3}±{:.3}", rep.advantage, rep.ci_half_width));
            }
        }
    }
    if failures.is_empty() {
        outcome(
            true,
            format!(
                "{} high points min(adv-ci)={:.3}; {} low points max(adv+ci)={:.3}",
                hi.1, hi.0, lo.1, lo.0
            ),
        )
    } else {
        outcome(false, failures.join("; "))
    }
}

// 9
fn protocol_audits() -> Outcome {
    let factory = StreamFactory::new(SEED, "protocols");
    let mut details = Vec::new();

    // k >= 2: with one player both promise classes are the same set family
    for (sizes, n) in [(vec![2u64, 3, 5], 64u64), (vec![4, 1, 7, 2], 100), (vec![3, 3], 12)] {
        let sizes = SizeVector(sizes);
        let k = sizes.0.len();
        let proto = send_min_set_protocol(k, &sizes, n).unwrap();
        let writer = proto.writer();
        let want: Vec<u64> = (0..k)
            .map(|i| if i == writer { sizes.0[i] * proto.width() } else { 1 })
            .collect();
        let fac = factory.child(&format!("minset/{n}"));
        let bad: u64 = (0..100_000u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = fac.stream(i);
                let inst = sample_fixed_size_mixture(&sizes, n, &mut rng).unwrap();
                let tr = run_blackboard(&proto, &inst, &mut rng).unwrap();
                u64::from(tr.output != (inst.bit() == 1) || tr.counts != want)
            })
            .sum();
        if bad > 0 {
            return outcome(false, format!("minset sizes {:?} n={n}: {bad} bad transcripts", sizes.0));
        }
    }
    details.push("minset: 3x1e5 draws, 0 errors, exact bit counts".to_string());

    let (t, p, n) = (1000u64, 0.1, 100_000_000u64);
    let k = (p * t as f64) as u64;
    for passes in [1usize, 2] {
        let fac = factory.child(&format!("adapter/{passes}"));
        let trials = 2000u64;
        let runs: Vec<(bool, bool, f64)> = (0..trials)
            .into_par_iter()
            .map(|i| {
                let mut rng = fac.stream(i);
                let raw = sample_interval_system(t, k, &mut rng).unwrap();
                let f = sample_refined(&raw, &mut rng).unwrap();
                let adapter = detector_protocol_adapter(adjacent_detector(), f.clone(), n, passes).unwrap();
                let cap = passes as u64 * adapter.space_bits();
                let inst = sample_fixed_size_mixture(&SizeVector(f.sizes()), n, &mut rng).unwrap();
                let tr = run_blackboard(&adapter, &inst, &mut rng).unwrap();
                let within = tr.counts.iter().all(|&c| c <= cap);
                (within, tr.output != (inst.bit() == 1), cap as f64 * f.value_f64())
            })
            .collect();
        let overruns = runs.iter().filter(|r| !r.0).count();
        let error = runs.iter().filter(|r| r.1).count() as f64 / trials as f64;
        let ledger_min = runs.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
        if overruns > 0 || error > 0.05 {
            return outcome(
                false,
                format!("adapter l={passes}: {overruns} transcripts over l*s, error {error:.4}"),
            );
        }
        details.push(format!("adapter l={passes}: bits <= l*s always, error {error:.4}, min (l*s)*val = {ledger_min:.1}"));
    }
    outcome(true, details.join("; "))
}

type Sets = Vec<Vec<u64>>;

fn subsets_of_size(n: u64, s: u64) -> Vec<Vec<u64>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as u64 == s)
        .map(|m| (1..=n).filter(|&e| m >> (e - 1) & 1 == 1).collect())
        .collect()
}

/// Every instance with the given sizes and promise bit, by brute force.
fn enumerate_instances(n: u64, sizes: &[u64], b: u8) -> Vec<Sets> {
    let mut out: Vec<Sets> = vec![Vec::new()];
    for &s in sizes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                subsets_of_size(n, s).into_iter().map(move |set| {
                    let mut next = prefix.clone();
                    next.push(set);
                    next
                })
            })
            .collect();
    }
    out.into_iter()
        .filter(|sets| {
            let promise = match b {
                0 => Promise::Disjoint,
                _ => {
                    let common: BTreeSet<u64> = sets
                        .iter()
                        .skip(1)
                        .fold(sets[0].iter().copied().collect(), |acc: BTreeSet<u64>, s| {
                            acc.intersection(&s.iter().copied().collect()).copied().collect()
                        });
                    match common.into_iter().next() {
                        Some(x) => Promise::UniqueIntersection { x },
                        None => return false,
                    }
                }
            };
            PromiseInstance::new(n, sets.clone(), promise).is_ok()
        })
        .collect()
}

fn uniform_check(support: &[Sets], counts: &HashMap<Sets, u64>) -> (bool, String) {
    let p = 1.0 / support.len() as f64;
    let law: Vec<(Sets, f64)> = support.iter().map(|s| (s.clone(), p)).collect();
    let out = chi_square_gof_keyed(counts, &law);
    (!out.rejects(ALPHA), format!("|supp|={} pv={:.3}", support.len(), out.p_value))
}

fn draw_counts<F>(factory: &StreamFactory, draws: u64, f: F) -> HashMap<Sets, u64>
where
    F: Fn(&mut TrialRng) -> PromiseInstance + Sync,
{
    let sets: Vec<Sets> = (0..draws).into_par_iter().map(|i| f(&mut factory.stream(i)).sets).collect();
    let mut counts = HashMap::new();
    for s in sets {
        *counts.entry(s).or_default() += 1;
    }
    counts
}

// 10
fn sampler_uniformity() -> Outcome {
    let factory = StreamFactory::new(SEED, "uniformity");
    let mut pass = true;
    let mut details = Vec::new();
    for (n, sizes) in [(6u64, vec![1u64, 2]), (6, vec![1, 1]), (6, vec![3]), (4, vec![1, 1])] {
        for b in [0u8, 1] {
            let support = enumerate_instances(n, &sizes, b);
            assert!(!support.is_empty(), "empty support for n={n} sizes={sizes:?} b={b}");
            let sv = SizeVector(sizes.clone());
            let fixed = draw_counts(&factory.child(&format!("fixed/{n}/{sizes:?}/{b}")), 1_000_000, |rng| {
                sample_fixed_size(b, &sv, n, rng).unwrap()
            });
            let (ok, d) = uniform_check(&support, &fixed);
            pass &= ok;
            details.push(format!("fixed n={n} {sizes:?} b={b} {d}"));

            let seed_inst = PromiseInstance::new(
                n,
                support[0].clone(),
                if b == 0 {
                    Promise::Disjoint
                } else {
                    Promise::UniqueIntersection { x: support[0][0][0] }
                },
            )
            .unwrap();
            let permuted = draw_counts(&factory.child(&format!("perm/{n}/{sizes:?}/{b}")), 1_000_000, |rng| {
                randomize_by_permutation(&seed_inst, rng).unwrap()
            });
            let (ok, d) = uniform_check(&support, &permuted);
            pass &= ok;
            details.push(format!("perm {d}"));
        }
    }
    // sanity of the enumeration oracle against closed forms
    let closed = binomial(6, 1) * binomial(5, 2);
    assert_eq!(enumerate_instances(6, &[1, 2], 0).len(), usize::try_from(closed).unwrap());
    outcome(pass, details.join("; "))
}

fn main() -> ExitCode {
    let criteria: Vec<(u32, &str, Duration, fn() -> Outcome)> = vec![
        (1, "exact perfectness", Duration::from_secs(10), perfectness),
        (2, "split moment identities", Duration::from_secs(1), moments),
        (3, "value bound and floor", Duration::from_secs(120), value_bound_cells),
        (4, "refinement validity and Sets preservation", Duration::from_secs(60), refinement),
        (5, "composed planted model equals Bernoulli needle", Duration::from_secs(120), model_equivalence),
        (6, "embedding fidelity", Duration::from_secs(120), embedding_fidelity),
        (7, "baseline detector rates", Duration::from_secs(60), baseline_rates),
        (8, "space-probability tradeoff collapse", Duration::from_secs(600), tradeoff),
        (9, "protocol audits", Duration::from_secs(300), protocol_audits),
        (10, "sampler uniformity", Duration::from_secs(60), sampler_uniformity),
    ];
    let mut unexpected = 0;
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let out = check();
        let took = start.elapsed();
        let on_time = took <= budget;
        let pass = out.pass && on_time;
        let known = KNOWN_RED.iter().find(|(k, _)| *k == id);
        let tag = match (pass, known) {
            (true, _) => "PASS",
            (false, Some(_)) => "FAIL (known, recorded)",
            (false, None) => "FAIL",
        };
        println!(
            "criterion {id:>2} {tag}: {name} [{:.1}s / {}s] {}{}",
            took.as_secs_f64(),
            budget.as_secs(),
            out.detail,
            if on_time { "" } else { " -- over time budget" }
        );
        if let (false, Some((_, why))) = (pass, known) {
            println!("             reason: {why}");
        }
        if !pass && known.is_none() {
            unexpected += 1;
        }
        if pass && known.is_some() {
            println!("             note: criterion {id} listed as known-red but passed");
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
