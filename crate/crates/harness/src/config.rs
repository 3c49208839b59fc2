//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use needle_core::detectors::DetectorConfig;
use needle_core::sampler::CompositionPolicy;
use needle_core::IntervalSystem;

/// Thresholds used when a run also judges its own rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    /// Advantage required when `w t p^2` is at least `high_product`.
    pub advantage_high: f64,
    /// Advantage allowed when `w t p^2` is at most `low_product`.
    pub advantage_low: f64,
    pub high_product: f64,
    pub low_product: f64,
    pub alpha: f64,
    /// Target protocol error rate.
    pub error_target: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            advantage_high: 0.8,
            advantage_low: 0.2,
            high_product: 16.0,
            low_product: 0.125,
            alpha: 0.001,
            error_target: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffPoint {
    pub p: f64,
    pub t: u64,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "kebab-case")]
pub enum ProtocolSpec {
    Minset {
        sizes: Vec<u64>,
        n: u64,
    },
    /// Detector simulated through the blackboard. Without `intervals`, every
    /// trial draws a fresh refined `F[t,k]`.
    Adapter {
        detector: DetectorConfig,
        t: u64,
        k: u64,
        n: u64,
        #[serde(default = "one")]
        passes: usize,
        #[serde(default)]
        intervals: Option<IntervalSystem>,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    VerifyPerfect {
        t_max: u64,
        k_max: u64,
    },
    ValueStats {
        ts: Vec<u64>,
        ks: Vec<u64>,
    },
    Composed {
        t: u64,
        p: f64,
        #[serde(default)]
        policy: CompositionPolicy,
    },
    Detect {
        detector: DetectorConfig,
        t: u64,
        p: f64,
        #[serde(default)]
        n: Option<u64>,
        #[serde(default = "one")]
        passes: usize,
    },
    Tradeoff {
        points: Vec<TradeoffPoint>,
        /// Stream domain as a multiple of `t^2`.
        #[serde(default = "default_domain_factor")]
        domain_factor: u64,
    },
    ProtocolSim {
        #[serde(flatten)]
        spec: ProtocolSpec,
    },
}

fn default_domain_factor() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub trials: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub calibration: Calibration,
    pub experiment: Experiment,
}

fn check_domain(n: u64, t: u64) -> Result<()> {
    if n / t.max(1) / t.max(1) < 100 {
        bail!("stream domain n={n} is below 100*t^2 for t={t}");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be positive");
        }
        match &self.experiment {
            Experiment::VerifyPerfect { t_max, k_max } => {
                if *t_max == 0 || *t_max > 16 || *k_max > 5 {
                    bail!("verify-perfect supports t_max <= 16 and k_max <= 5");
                }
            }
            Experiment::ValueStats { ts, ks } => {
                if ts.is_empty() || ks.is_empty() {
                    bail!("value-stats needs at least one t and one k");
                }
                if let Some(t) = ts.iter().find(|t| !t.is_power_of_two()) {
                    bail!("value-stats t={t} is not a power of two");
                }
            }
            Experiment::Composed { t, p, .. } => {
                if !(*p > 0.0 && *p < 1.0) || *t == 0 {
                    bail!("composed needs t >= 1 and p in (0,1)");
                }
            }
            Experiment::Detect { t, n, .. } => {
                if let Some(n) = n {
                    check_domain(*n, *t)?;
                }
            }
            Experiment::Tradeoff { points, domain_factor } => {
                if points.is_empty() {
                    bail!("tradeoff grid is empty");
                }
                if *domain_factor < 100 {
                    bail!("domain_factor must be at least 100");
                }
                if let Some(pt) = points.iter().find(|pt| pt.w == 0 || pt.w as u64 > pt.t) {
                    bail!("window {} outside [1, t={}]", pt.w, pt.t);
                }
            }
            Experiment::ProtocolSim { spec } => match spec {
                ProtocolSpec::Minset { sizes, n } => {
                    if sizes.len() < 2 {
                        bail!("minset needs at least two players");
                    }
                    if 2 * sizes.iter().sum::<u64>() > *n {
                        bail!("sizes {sizes:?} exceed n/2 = {}", n / 2);
                    }
                }
                ProtocolSpec::Adapter { t, k, n, intervals, .. } => {
                    check_domain(*n, *t)?;
                    match intervals {
                        Some(f) if f.t() != *t || f.k() as u64 != *k => {
                            bail!("intervals do not form a [{t},{k}] system")
                        }
                        None if 6 * k > *t || *k == 0 => bail!("random systems need 1 <= k <= t/6"),
                        _ => {}
                    }
                }
            },
        }
        Ok(())
    }

    /// Output path after the environment override of the directory.
    pub fn resolved_output(&self) -> Option<PathBuf> {
        let out = self.output.as_ref()?;
        match std::env::var_os(crate::OUT_DIR_ENV) {
            Some(dir) => Some(PathBuf::from(dir).join(out.file_name()?)),
            None => Some(out.clone()),
        }
    }
}

/// Tradeoff grid file: either explicit points or the cross product of
/// `ps`, `ts`, `ws` (points with `w > t` dropped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeoffGrid {
    #[serde(default)]
    pub points: Vec<TradeoffPoint>,
    #[serde(default)]
    pub ps: Vec<f64>,
    #[serde(default)]
    pub ts: Vec<u64>,
    #[serde(default)]
    pub ws: Vec<usize>,
    #[serde(default = "default_domain_factor")]
    pub domain_factor: u64,
}

impl TradeoffGrid {
    pub fn expand(&self) -> Vec<TradeoffPoint> {
        let mut pts = self.points.clone();
        for &p in &self.ps {
            for &t in &self.ts {
                for &w in self.ws.iter().filter(|&&w| w as u64 <= t) {
                    pts.push(TradeoffPoint { p, t, w });
                }
            }
        }
        pts
    }
}
