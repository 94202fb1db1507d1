//! The `tfrg` command line.
//!
//! Settings resolve in three layers: built-in defaults, then the JSON file
//! given by `--config`, then explicit flags. The resolved settings are
//! echoed into every JSON output so any artifact can be rerun from its own
//! metadata. All output goes under `--out` (default `tfrg-out`).

mod settings;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use tfrg_core::components::{label_mask, Adjacency, ComponentStats};
use tfrg_core::experiments::suites::{run_suite_with_workers, Scale, Suite};
use tfrg_core::experiments::{memory_guard, run as run_experiment};
use tfrg_core::interlace::{vacant_component_stats, Sampler, SamplerConfig, SamplerKind};
use tfrg_core::lattice::{TorusGeom, ZdPoint, ZdSet};
use tfrg_core::potential::{capacity_mc, equilibrium_with, golden_regen, DEFAULT_TOL};
use tfrg_core::quasistat::quasistationary;
use tfrg_core::rw::{walk_trace, WalkConfig};
use tfrg_core::voxel::dump_voxels;
use tfrg_core::{Error, Result};

pub use settings::Settings;

#[derive(Debug, Parser)]
#[command(
    name = "tfrg",
    version,
    about = "Random walk fragmentation of the torus and random interlacements"
)]
pub struct Cli {
    #[command(flatten)]
    pub flags: Flags,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// JSON settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(short = 'd', long = "dim", global = true)]
    pub dim: Option<usize>,
    /// Torus side, or a comma-separated grid for sweeps.
    #[arg(short = 'N', long = "side", global = true, value_delimiter = ',')]
    pub side: Option<Vec<usize>>,
    /// Level, or a comma-separated grid for sweeps.
    #[arg(short = 'u', long = "u", global = true, value_delimiter = ',')]
    pub u: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub eps: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub replicas: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Walk trace on the torus and its vacant components.
    Simulate {
        /// Also write the component labels, relative to the output directory.
        #[arg(long)]
        dump_voxels: Option<PathBuf>,
    },
    /// Interlacement sample in a box of Z^d.
    Interlace {
        #[arg(long, default_value_t = 8)]
        radius: usize,
        /// equilibrium or thinning; chosen from d and the radius by default.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        dump_voxels: Option<PathBuf>,
    },
    /// Capacity and equilibrium measure of a finite set.
    Capacity {
        /// point, pair, or ball:R.
        #[arg(long, default_value = "point")]
        set: String,
        #[arg(long)]
        r1: Option<usize>,
        #[arg(long)]
        r2: Option<usize>,
        /// Also estimate by Monte Carlo with this many walks per boundary point.
        #[arg(long)]
        mc: Option<u64>,
        #[arg(long, default_value_t = 64)]
        r_kill: usize,
    },
    /// Quasistationary law of the walk killed on a centered box.
    Quasistat {
        #[arg(long, default_value_t = 2)]
        radius: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Runs a replicated experiment and writes CSV and JSON tables.
    Sweep {
        /// Experiment id, e.g. phase-sweep; read from the config file when absent.
        #[arg(long)]
        experiment: Option<String>,
    },
    /// Runs validation suites; exits nonzero when a check fails.
    Validate {
        /// Suite name or `all`.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value = "full")]
        scale: String,
    },
    /// Writes the voxel labels of a walk trace.
    DumpVoxels {
        /// Destination, relative to the output directory.
        path: PathBuf,
    },
    /// Recomputes the frozen capacity table.
    GoldenRegen,
}

/// Process exit code for failed checks.
pub const EXIT_CHECKS_FAILED: i32 = 1;
/// Process exit code for errors.
pub const EXIT_ERROR: i32 = 2;

/// Parses `argv` and runs the command, printing errors as JSON on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.render().to_string();
            eprintln!("{}", error_json("usage", msg.trim()));
            return EXIT_ERROR;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            EXIT_ERROR
        }
    }
}

pub fn error_json(kind: &str, message: &str) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn execute(cli: &Cli) -> Result<i32> {
    let s = Settings::resolve(&cli.flags)?;
    let out = s.out_dir();
    let log = |m: &str| {
        if cli.flags.verbose {
            eprintln!("tfrg: {m}");
        }
    };
    match &cli.command {
        Command::Simulate { dump_voxels: dump } => {
            let result = simulate(&s, dump.as_deref().map(|p| resolve(&out, p)), &log)?;
            emit(&out, "simulate", &s, result)?;
        }
        Command::DumpVoxels { path } => {
            let result = simulate(&s, Some(resolve(&out, path)), &log)?;
            emit(&out, "dump-voxels", &s, result)?;
        }
        Command::Interlace {
            radius,
            kind,
            dump_voxels: dump,
        } => {
            let mut cfg = SamplerConfig::new(s.dim(), *radius);
            if let Some(k) = kind {
                cfg = cfg.with_kind(match k.as_str() {
                    "equilibrium" => SamplerKind::Equilibrium,
                    "thinning" => SamplerKind::Thinning,
                    _ => return Err(Error::InvalidArgument(format!("unknown sampler kind {k:?}"))),
                });
            }
            memory_guard(((2 * radius + 1) as u128).pow(s.dim() as u32))?;
            let sampler = Sampler::new(cfg)?;
            let u = s.level()?;
            log(&format!("sampling I^{u} in B(0,{radius})"));
            let (sample, stats) = vacant_component_stats(&sampler, u, s.seed())?;
            if let Some(p) = dump {
                write_voxels(&stats, &resolve(&out, p))?;
            }
            let result = json!({
                "d": sample.d, "radius": sample.r, "u": u, "seed": sample.seed, "kind": sample.kind,
                "r_kill": sample.r_kill, "walks": sample.j, "candidates": sample.candidates,
                "capacity": sampler.capacity(), "occupied": sample.occupied_count(),
                "vacant": stats.vacant_count(), "components": stats.components.len(),
                "max_volume": stats.max_volume(), "sec_volume": stats.sec_volume(),
                "bias_bound": sampler.cfg.bias_bound(),
            });
            emit(&out, "interlace", &s, result)?;
        }
        Command::Capacity {
            set,
            r1,
            r2,
            mc,
            r_kill,
        } => {
            let a = parse_set(s.dim(), set)?;
            let (d1, d2) = tfrg_core::potential::default_radii(&a);
            let (r1, r2) = (r1.unwrap_or(d1), r2.unwrap_or(d2));
            log(&format!("solving on B(0,{r1}) and B(0,{r2})"));
            let m = equilibrium_with(&a, r1, r2, DEFAULT_TOL)?;
            let estimate = mc.map(|n| capacity_mc(&a, *r_kill, n, s.seed())).transpose()?;
            let result = json!({
                "set": set, "capacity": m.capacity, "error": m.error, "radii": m.radii,
                "boundary": m.boundary, "weights": m.weights,
                "monte_carlo": estimate.map(|e| json!({ "capacity": e.capacity, "stderr": e.stderr, "r_kill": e.r_kill })),
            });
            emit(&out, "capacity", &s, result)?;
        }
        Command::Quasistat { radius, tol } => {
            let n = s.side()?;
            let geom = TorusGeom::new(s.dim(), n)?;
            memory_guard(geom.total() as u128)?;
            log(&format!("power iteration on the complement of B(0,{radius})"));
            let q = quasistationary(&geom, &geom.linf_ball(0, *radius)?, *tol)?;
            let rows: Vec<Value> = q
                .sites
                .iter()
                .zip(&q.sigma)
                .map(|(&x, p)| json!({ "site": geom.coords(x), "sigma": p }))
                .collect();
            let result = json!({
                "N": n, "radius": radius, "lambda1": q.lambda1, "lambda2": q.lambda2, "gap": q.gap(),
                "scaled_gap": q.gap() * (n * n) as f64, "residual": q.residual, "iterations": q.iterations,
                "sigma": rows,
            });
            emit(&out, "quasistat", &s, result)?;
        }
        Command::Sweep { experiment } => {
            let cfg = s.experiment_config(experiment.as_deref())?;
            log(&format!("running {} ({} replicas)", cfg.experiment, cfg.replicas));
            let r = run_experiment(&cfg)?;
            let paths = r.write(&out)?;
            write_json(&out.join(format!("{}.config.json", cfg.experiment)), &cfg)?;
            for c in &r.checks {
                log(&format!("{} {}", if c.passed { "pass" } else { "FAIL" }, c.name));
            }
            let files: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            println!(
                "{}",
                json!({ "experiment": cfg.experiment, "config_hash": r.config_hash, "passed": r.passed(), "files": files })
            );
        }
        Command::Validate { suite, scale } => {
            let scale: Scale = scale.parse()?;
            let suites: Vec<Suite> = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let mut all_passed = true;
            let mut lines = Vec::new();
            for x in suites {
                log(&format!("suite {}", x.as_str()));
                let report = run_suite_with_workers(x, scale, s.seed(), s.workers())?;
                std::fs::create_dir_all(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
                let path = out.join(format!("validate-{}.json", x.as_str()));
                std::fs::write(&path, report.to_json())
                    .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
                all_passed &= report.passed();
                lines.push(
                    json!({ "suite": x.as_str(), "passed": report.passed(), "report": path.display().to_string() }),
                );
            }
            println!("{}", json!({ "passed": all_passed, "suites": lines }));
            if !all_passed {
                return Ok(EXIT_CHECKS_FAILED);
            }
        }
        Command::GoldenRegen => {
            log("recomputing golden capacities");
            let g = golden_regen()?;
            write_json(&out.join("capacities.json"), &g)?;
            println!(
                "{}",
                json!({ "file": out.join("capacities.json").display().to_string() })
            );
        }
    }
    Ok(0)
}

fn simulate(s: &Settings, dump: Option<PathBuf>, log: &dyn Fn(&str)) -> Result<Value> {
    let (d, n, u) = (s.dim(), s.side()?, s.level()?);
    let geom = TorusGeom::new(d, n)?;
    memory_guard(geom.total() as u128)?;
    let cfg = WalkConfig::for_level(geom.clone(), u, s.seed());
    log(&format!("walking {} steps on (Z/{n}Z)^{d}", cfg.steps));
    let mask = walk_trace(&cfg)?;
    let stats = label_mask(&mask, Adjacency::Nearest);
    let total = geom.total() as f64;
    if let Some(p) = &dump {
        write_voxels(&stats, p)?;
        log(&format!("wrote {}", p.display()));
    }
    Ok(json!({
        "d": d, "N": n, "u": u, "seed": s.seed(), "steps": cfg.steps,
        "occupied": mask.occupied_count(), "vacant": stats.vacant_count(),
        "components": stats.components.len(), "max_volume": stats.max_volume(),
        "frac_max": stats.max_volume() as f64 / total, "sec_volume": stats.sec_volume(),
        "wraps_all_axes": stats.wraps_all_axes,
        "voxels": dump.map(|p| p.display().to_string()),
    }))
}

fn parse_set(d: usize, spec: &str) -> Result<ZdSet> {
    match spec {
        "point" => Ok(ZdSet::singleton(d)),
        "pair" => ZdSet::new(d, vec![ZdPoint::origin(d), ZdPoint::axis(d, 0, 1)]),
        _ => match spec.strip_prefix("ball:").map(str::parse::<usize>) {
            Some(Ok(r)) => Ok(ZdSet::ball(d, r)),
            _ => Err(Error::InvalidArgument(format!(
                "unknown set {spec:?}, expected point, pair or ball:R"
            ))),
        },
    }
}

/// Relative paths land inside the output directory.
fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
        }
        _ => Ok(()),
    }
}

fn write_voxels(stats: &ComponentStats, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    dump_voxels(stats, path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let body = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes `<out>/<command>.json` with the resolved settings and prints it.
fn emit(out: &Path, command: &str, s: &Settings, result: Value) -> Result<()> {
    let doc = json!({ "command": command, "resolved_config": s, "result": result });
    write_json(&out.join(format!("{command}.json")), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}
