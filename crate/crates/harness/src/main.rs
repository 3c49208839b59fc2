use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use needle_core::detectors::{
    adjacent_detector, fingerprint_window_detector, full_store_detector, window_detector, DetectorConfig,
};
use needle_core::disjointness::{embed_to_stream, sample_fixed_size, PromiseInstance, SizeVector};
use needle_core::rng::StreamFactory;
use needle_core::sampler::{sample_composed_system, sample_interval_system, sample_refined, CompositionPolicy};
use needle_core::streams::{gen_planted_interval, gen_planted_needle, gen_uniform, preset_domain};
use needle_core::IntervalSystem;

use needle_harness::config::{
    Calibration, Experiment, ExperimentConfig, ProtocolSpec, TradeoffGrid,
};
use needle_harness::selfcheck::{selfcheck, Fault};
use needle_harness::{run_experiment, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "needle", version, about = "Needle-problem experiments")]
struct Cli {
    /// Experiment config; runs it when no subcommand is given.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Uniform,
    Needle,
    Interval,
    Composed,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorKind {
    Adjacent,
    Full,
    Window,
    Fwindow,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolKind {
    Minset,
    Adapter,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment given by --config.
    Run {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw interval systems, one JSON object per line.
    SampleIntervals {
        #[arg(long)]
        t: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        refine: bool,
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
    /// Exact perfectness check; exits non-zero on any mismatch.
    VerifyPerfect {
        #[arg(long, default_value_t = 16)]
        t_max: u64,
        #[arg(long, default_value_t = 5)]
        k_max: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo value statistics as CSV.
    ValueStats {
        #[arg(long, value_delimiter = ',', required = true)]
        ts: Vec<u64>,
        #[arg(long, value_delimiter = ',', required = true)]
        ks: Vec<u64>,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate one stream as JSON.
    GenStream {
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long)]
        t: u64,
        /// Defaults to 100 t^2.
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        p: Option<f64>,
        /// Interval system JSON for the interval model.
        #[arg(long)]
        intervals: Option<PathBuf>,
        /// Drop the ground truth.
        #[arg(long)]
        no_meta: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a detector's advantage as CSV.
    Detect {
        #[arg(long, value_enum)]
        detector: DetectorKind,
        #[arg(long)]
        w: Option<usize>,
        #[arg(long)]
        r: Option<u32>,
        #[arg(long)]
        t: u64,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        n: Option<u64>,
        #[arg(long, default_value_t = 1)]
        passes: usize,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Window-detector advantage over a (p, t, w) grid as CSV.
    Tradeoff {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a disjointness instance as JSON.
    DisjSample {
        #[arg(long)]
        b: u8,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<u64>,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embed an instance into a stream along an interval system.
    Embed {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        intervals: PathBuf,
        /// Defaults to the instance's universe.
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a blackboard protocol as CSV.
    ProtocolSim {
        #[arg(long, value_enum)]
        protocol: ProtocolKind,
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<u64>,
        #[arg(long)]
        n: u64,
        #[arg(long, value_enum, default_value = "adjacent")]
        detector: DetectorKind,
        #[arg(long)]
        w: Option<usize>,
        #[arg(long)]
        t: Option<u64>,
        #[arg(long)]
        k: Option<u64>,
        #[arg(long, default_value_t = 1)]
        passes: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact verification suite.
    Selfcheck {
        #[arg(long, value_enum)]
        inject: Option<Fault>,
    },
}

fn require_seed(seed: Option<u64>) -> Result<u64> {
    seed.ok_or_else(|| anyhow!("--seed is required"))
}

fn detector_config(kind: DetectorKind, w: Option<usize>, r: Option<u32>) -> Result<DetectorConfig> {
    Ok(match kind {
        DetectorKind::Adjacent => adjacent_detector(),
        DetectorKind::Full => full_store_detector(),
        DetectorKind::Window => window_detector(w.context("--w is required for window")?),
        DetectorKind::Fwindow => fingerprint_window_detector(
            w.context("--w is required for fwindow")?,
            r.context("--r is required for fwindow")?,
        ),
    })
}

fn resolve(out: Option<PathBuf>) -> Option<PathBuf> {
    let out = out?;
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) => Some(PathBuf::from(dir).join(out.file_name()?)),
        None => Some(out),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string(value)?;
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
        }
        None => Ok(println!("{text}")),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Runs the experiment and writes CSV (to the file or stdout) plus sidecar.
fn execute(cfg: ExperimentConfig) -> Result<ExitCode> {
    let record = run_experiment(&cfg)?;
    match cfg.resolved_output() {
        Some(path) => {
            let sidecar = record.write_files(&path)?;
            eprintln!("wrote {} and {}", path.display(), sidecar.display());
        }
        None => {
            let stdout = std::io::stdout();
            record.write_csv(stdout.lock())?;
        }
    }
    for event in &record.events {
        eprintln!("event: {event}");
    }
    Ok(match record.verdict {
        Some(false) => {
            eprintln!("{}: calibrated criterion not met", cfg.name);
            ExitCode::FAILURE
        }
        _ => ExitCode::SUCCESS,
    })
}

fn adhoc(name: &str, seed: u64, trials: u64, out: Option<PathBuf>, experiment: Experiment) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        seed,
        trials,
        output: out,
        calibration: Calibration::default(),
        experiment,
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed;
    let command = match (cli.command, &cli.config) {
        (None, None) => bail!("nothing to do: give a subcommand or --config"),
        (None, Some(_)) => Command::Run { out: None },
        (Some(c), _) => c,
    };
    let rng_for = |name: &str| -> Result<_> { Ok(StreamFactory::new(require_seed(seed)?, name).stream(0)) };
    match command {
        Command::Run { out } => {
            let path = cli.config.context("run needs --config")?;
            let mut cfg = ExperimentConfig::load(&path)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.output = out;
            }
            execute(cfg)
        }
        Command::SampleIntervals { t, k, refine, count } => {
            let factory = StreamFactory::new(require_seed(seed)?, "sample-intervals");
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for i in 0..count {
                let mut rng = factory.stream(i);
                let mut f = sample_interval_system(t, k, &mut rng)?;
                if refine {
                    f = sample_refined(&f, &mut rng)?;
                }
                writeln!(lock, "{}", serde_json::to_string(&f)?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyPerfect { t_max, k_max, out } => execute(adhoc(
            "verify-perfect",
            seed.unwrap_or(0),
            1,
            out,
            Experiment::VerifyPerfect { t_max, k_max },
        )),
        Command::ValueStats { ts, ks, trials, out } => execute(adhoc(
            "value-stats",
            require_seed(seed)?,
            trials,
            out,
            Experiment::ValueStats { ts, ks },
        )),
        Command::GenStream {
            model,
            t,
            n,
            p,
            intervals,
            no_meta,
            out,
        } => {
            let n = n.unwrap_or_else(|| preset_domain(t));
            let mut rng = rng_for("gen-stream")?;
            let stream = match model {
                Model::Uniform => gen_uniform(n, t, &mut rng)?,
                Model::Needle => gen_planted_needle(n, t, p.context("--p is required")?, &mut rng)?,
                Model::Interval => {
                    let f: IntervalSystem = read_json(&intervals.context("--intervals is required")?)?;
                    if f.t() != t {
                        bail!("interval system is over [{}], not [{t}]", f.t());
                    }
                    gen_planted_interval(&f, n, &mut rng)?
                }
                Model::Composed => {
                    let p = p.context("--p is required")?;
                    let f = sample_composed_system(t, p, CompositionPolicy::RefineWhenAdmissible, &mut rng)?;
                    gen_planted_interval(&f.system, n, &mut rng)?
                }
            };
            let out = resolve(out);
            match (&out, no_meta) {
                (_, true) => write_json(&stream.without_meta(), out.as_deref())?,
                (None, false) => write_json(&stream, None)?,
                (Some(path), false) => {
                    write_json(&stream.without_meta(), Some(path))?;
                    let mut sidecar = path.as_os_str().to_owned();
                    sidecar.push(".meta.json");
                    write_json(&stream.meta(), Some(Path::new(&sidecar)))?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Detect {
            detector,
            w,
            r,
            t,
            p,
            n,
            passes,
            trials,
            out,
        } => execute(adhoc(
            "detect",
            require_seed(seed)?,
            trials,
            out,
            Experiment::Detect {
                detector: detector_config(detector, w, r)?,
                t,
                p,
                n,
                passes,
            },
        )),
        Command::Tradeoff { grid, trials, out } => {
            let grid: TradeoffGrid = read_json(&grid)?;
            execute(adhoc(
                "tradeoff",
                require_seed(seed)?,
                trials,
                out,
                Experiment::Tradeoff {
                    points: grid.expand(),
                    domain_factor: grid.domain_factor,
                },
            ))
        }
        Command::DisjSample { b, sizes, n, out } => {
            let inst = sample_fixed_size(b, &SizeVector(sizes), n, &mut rng_for("disj-sample")?)?;
            write_json(&inst, resolve(out).as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Embed {
            instance,
            intervals,
            n,
            out,
        } => {
            let inst: PromiseInstance = read_json(&instance)?;
            inst.validate()?;
            let f: IntervalSystem = read_json(&intervals)?;
            let stream = embed_to_stream(&inst, &f, n.unwrap_or(inst.n), &mut rng_for("embed")?)?;
            write_json(&stream, resolve(out).as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ProtocolSim {
            protocol,
            sizes,
            n,
            detector,
            w,
            t,
            k,
            passes,
            trials,
            out,
        } => {
            let spec = match protocol {
                ProtocolKind::Minset => ProtocolSpec::Minset { sizes, n },
                ProtocolKind::Adapter => ProtocolSpec::Adapter {
                    detector: detector_config(detector, w, None)?,
                    t: t.context("--t is required for the adapter")?,
                    k: k.context("--k is required for the adapter")?,
                    n,
                    passes,
                    intervals: None,
                },
            };
            execute(adhoc("protocol-sim", require_seed(seed)?, trials, out, Experiment::ProtocolSim { spec }))
        }
        Command::Selfcheck { inject } => {
            let report = selfcheck(inject);
            for c in &report.checks {
                println!("{} {}: {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
            }
            Ok(if report.pass() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
