//! `road`: build, verify, train, benchmark, compose and analyze 2D rotary
//! adapters from the command line.
//!
//! Exit codes: 0 on success, 1 when checks fail or an operation errors
//! (with a machine-readable failure list on stdout for check failures),
//! 2 for usage errors.

mod config;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use road_core::analysis::{compose, SubspaceMask};
use road_core::io::{
    delta_stats, load_adapter_file, read_rep_pairs, save_adapter_file, write_bench_csv,
    write_delta_csv, write_trace_csv,
};
use road_core::serving::{run_bench_sweep, KernelKind, Precision, ServeMode, WorkloadSpec};
use road_core::trainer::{
    gradient_check_suite, rotation_recovery_experiment, train, Dataset, Head, Layer, ToyModel,
    TrainConfig,
};
use road_core::verify::{all_passed, run_all};
use road_core::{DenseMatrix, DenseVector, RoadAdapter, RoadVariant, SeededRng};

const OUT_DIR_ENV: &str = "ROAD_OUT_DIR";

#[derive(Parser)]
#[command(name = "road", version, about = "2D rotary adapter toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full invariant suite
    Verify {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Emit all results as JSON instead of one line per check
        #[arg(long)]
        json: bool,
    },
    /// Compare analytic adapter gradients against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Layer widths to check (even)
        #[arg(long = "size", value_delimiter = ',', default_values_t = [8usize, 64])]
        sizes: Vec<usize>,
        /// Random cases per (kind, size) entry
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long)]
        json: bool,
    },
    /// Train a toy adapter and write its loss trace
    TrainToy {
        /// `recovery` (hidden-rotation regression) or `identity`
        #[arg(long, default_value = "recovery")]
        task: String,
        #[arg(long, default_value_t = 32)]
        d2: usize,
        /// road1 | road2 | road4
        #[arg(long, default_value = "road1")]
        variant: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Trace CSV path (defaults to trace.csv in the output directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep serving benchmarks and write a CSV report
    Bench {
        /// TOML sweep description; replaces the individual flags
        #[arg(long, conflicts_with_all = ["b", "tokens", "r", "d1", "d2", "kernels", "mode", "precision", "reps", "warmup", "seed"])]
        config: Option<PathBuf>,
        /// Batch sizes
        #[arg(long = "b", value_delimiter = ',', default_values_t = [8usize])]
        b: Vec<usize>,
        /// Token counts (decode steps in decode mode)
        #[arg(long, value_delimiter = ',', default_values_t = [2048usize])]
        tokens: Vec<usize>,
        /// Low-rank adapter ranks
        #[arg(long = "r", value_delimiter = ',', default_values_t = [8usize])]
        r: Vec<usize>,
        #[arg(long, default_value_t = 1024)]
        d1: usize,
        #[arg(long, default_value_t = 1024)]
        d2: usize,
        /// Kernels to measure
        #[arg(long, value_delimiter = ',', default_values_t = ["lora_bmm".to_string(), "road_elementwise".to_string()])]
        kernels: Vec<String>,
        /// prefill | decode
        #[arg(long, default_value = "decode")]
        mode: String,
        /// real32 | real64
        #[arg(long, default_value = "real32")]
        precision: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Report path (defaults to bench.csv in the output directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stitch adapter files into one by disjoint block ranges
    Compose {
        /// Part as `<file>=<start>..<end>` (block range, 0-based, half-open)
        #[arg(long = "part", required = true)]
        parts: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute magnitude/angle change statistics over a rep-pair file
    Analyze {
        /// Input rep-pair CSV (`# road-csv v1 reppairs`)
        #[arg(long)]
        pairs: PathBuf,
        /// Output CSV (defaults to deltas.csv in the output directory)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write an adapter file
    Export {
        #[arg(long, default_value = "road1")]
        variant: String,
        #[arg(long, default_value_t = 8)]
        d2: usize,
        /// Randomize parameters from this seed (identity init otherwise)
        #[arg(long)]
        random_seed: Option<u64>,
        /// Layer name prefix
        #[arg(long, default_value = "layer")]
        name: String,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Read, validate and summarize an adapter file
    Import {
        path: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

/// Joins relative output paths with the directory from `ROAD_OUT_DIR`.
fn resolve_out(out: Option<PathBuf>, default_name: &str) -> PathBuf {
    let base: PathBuf = std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    match out {
        Some(p) if p.is_absolute() => p,
        Some(p) => base.join(p),
        None => base.join(default_name),
    }
}

fn parse_variant(s: &str) -> Result<RoadVariant> {
    match s {
        "road1" | "1" => Ok(RoadVariant::Road1),
        "road2" | "2" => Ok(RoadVariant::Road2),
        "road4" | "4" => Ok(RoadVariant::Road4),
        other => bail!("unknown variant `{other}` (expected road1|road2|road4)"),
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Verify { seed, json } => cmd_verify(seed, json),
        Command::Gradcheck {
            seed,
            sizes,
            cases,
            json,
        } => cmd_gradcheck(seed, &sizes, cases, json),
        Command::TrainToy {
            task,
            d2,
            variant,
            seed,
            out,
        } => cmd_train_toy(&task, d2, &variant, seed, out),
        Command::Bench {
            config,
            b,
            tokens,
            r,
            d1,
            d2,
            kernels,
            mode,
            precision,
            reps,
            warmup,
            seed,
            out,
        } => {
            let (cfg, out) = match config {
                Some(path) => {
                    let cfg = config::BenchConfig::from_path(&path)?;
                    let cfg_out = cfg.out.clone().map(PathBuf::from);
                    (cfg, out.or(cfg_out))
                }
                None => (
                    config::BenchConfig {
                        kernels,
                        b,
                        tokens,
                        r,
                        d1,
                        d2,
                        mode,
                        precision,
                        repetitions: reps,
                        warmup,
                        seed,
                        out: None,
                    },
                    out,
                ),
            };
            cmd_bench(&cfg, out)
        }
        Command::Compose { parts, out } => cmd_compose(&parts, out),
        Command::Analyze { pairs, out } => cmd_analyze(&pairs, out),
        Command::Export {
            variant,
            d2,
            random_seed,
            name,
            layers,
            out,
        } => cmd_export(&variant, d2, random_seed, &name, layers, out),
        Command::Import { path } => cmd_import(&path),
    }
}

#[derive(serde::Serialize)]
struct Failure<'a> {
    check: &'a str,
    detail: &'a str,
}

fn cmd_verify(seed: u64, json: bool) -> Result<i32> {
    let results = run_all(seed);
    if json {
        println!("{}", serde_json::to_string_pretty(&results)?);
    } else {
        for r in &results {
            let tag = if r.passed { "PASS" } else { "FAIL" };
            println!("{tag} {name}: {detail}", name = r.name, detail = r.detail);
        }
    }
    if all_passed(&results) {
        if !json {
            println!("all {} checks passed (seed {seed})", results.len());
        }
        Ok(0)
    } else {
        let failures: Vec<Failure> = results
            .iter()
            .filter(|r| !r.passed)
            .map(|r| Failure {
                check: r.name,
                detail: &r.detail,
            })
            .collect();
        println!("{}", serde_json::to_string(&failures)?);
        Ok(1)
    }
}

fn cmd_gradcheck(seed: u64, sizes: &[usize], cases: usize, json: bool) -> Result<i32> {
    let variants = [RoadVariant::Road1, RoadVariant::Road2, RoadVariant::Road4];
    let report = gradient_check_suite(&variants, sizes, seed, cases)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("kind        d2    max_rel_err   status");
        for e in &report.entries {
            println!(
                "{:<11} {:<5} {:<13.3e} {}",
                e.kind,
                e.d2,
                e.max_rel_err,
                if e.pass { "ok" } else { "FAIL" }
            );
        }
    }
    if report.all_pass() {
        Ok(0)
    } else {
        let failures: Vec<_> = report
            .entries
            .iter()
            .filter(|e| !e.pass)
            .map(|e| {
                serde_json::json!({
                    "check": format!("gradcheck/{}/{}", e.kind, e.d2),
                    "detail": format!("max relative error {:.3e}", e.max_rel_err),
                })
            })
            .collect();
        println!("{}", serde_json::to_string(&failures)?);
        Ok(1)
    }
}

fn cmd_train_toy(
    task: &str,
    d2: usize,
    variant: &str,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<i32> {
    let variant = parse_variant(variant)?;
    let out = resolve_out(out, "trace.csv");
    match task {
        "recovery" => {
            let report = rotation_recovery_experiment(d2, variant, seed)?;
            let mut file = File::create(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            write_trace_csv(&mut file, &report.trace)?;
            let worst_angle = report.angle_errors.iter().fold(0.0_f64, |a, &b| a.max(b));
            println!(
                "recovery: final mse {:.3e} after {} epochs, worst block angle error {:.3e}",
                report.final_loss, report.epochs_run, worst_angle
            );
            println!("trace written to {}", out.display());
        }
        "identity" => {
            let mut rng = SeededRng::new(seed);
            let w0 = DenseMatrix::identity(d2);
            let inputs: Vec<DenseVector> = (0..256)
                .map(|_| DenseVector::random_uniform(d2, -1.0, 1.0, &mut rng))
                .collect();
            let data = Dataset::new(inputs.clone(), inputs)?;
            let mut model = ToyModel::single(
                Layer::adapted(w0, RoadAdapter::new(variant, d2)?.into()),
                Head::Regression,
            );
            let trace = train(&mut model, &data, &TrainConfig::new(0.01, 10, 32, seed))?;
            let mut file = File::create(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            write_trace_csv(&mut file, &trace)?;
            println!(
                "identity: final loss {:.3e} over {} epochs",
                trace.final_loss(),
                trace.epochs_run()
            );
            println!("trace written to {}", out.display());
        }
        other => bail!("unknown task `{other}` (expected recovery|identity)"),
    }
    Ok(0)
}

fn cmd_bench(cfg: &config::BenchConfig, out: Option<PathBuf>) -> Result<i32> {
    let mode = ServeMode::parse(&cfg.mode)?;
    let precision = Precision::parse(&cfg.precision)?;
    let kernels: Vec<KernelKind> = cfg
        .kernels
        .iter()
        .map(|k| KernelKind::parse(k))
        .collect::<road_core::Result<_>>()?;

    let mut specs = Vec::new();
    for &kernel in &kernels {
        for &b in &cfg.b {
            for &l in &cfg.tokens {
                for &r in &cfg.r {
                    specs.push(WorkloadSpec {
                        kernel,
                        b,
                        l,
                        d1: cfg.d1,
                        d2: cfg.d2,
                        r,
                        mode,
                        precision,
                        seed: cfg.seed,
                    });
                }
            }
        }
    }
    let reports = run_bench_sweep(&specs, cfg.repetitions, cfg.warmup)?;

    let out = resolve_out(out, "bench.csv");
    let note = format!("mode={} precision={}", mode.label(), precision.label());
    let mut file =
        File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_bench_csv(&mut file, &reports, &note)?;

    let mut stdout = std::io::stdout().lock();
    write_bench_csv(&mut stdout, &reports, &note)?;
    stdout.flush()?;
    eprintln!("wrote {} rows to {}", reports.len(), out.display());
    Ok(0)
}

fn parse_part(spec: &str) -> Result<(PathBuf, SubspaceMask)> {
    let (path, range) = spec
        .rsplit_once('=')
        .ok_or_else(|| anyhow!("part `{spec}` is not of the form <file>=<start>..<end>"))?;
    let (start, end) = range
        .split_once("..")
        .ok_or_else(|| anyhow!("range `{range}` is not of the form <start>..<end>"))?;
    let start: usize = start.trim().parse().context("range start")?;
    let end: usize = end.trim().parse().context("range end")?;
    if end <= start {
        bail!("empty block range `{range}`");
    }
    Ok((PathBuf::from(path), SubspaceMask::from_range(start, end)))
}

fn cmd_compose(parts: &[String], out: Option<PathBuf>) -> Result<i32> {
    let mut sources: Vec<(Vec<(String, RoadAdapter)>, SubspaceMask)> = Vec::new();
    for spec in parts {
        let (path, mask) = parse_part(spec)?;
        let layers = load_adapter_file(&path)
            .with_context(|| format!("loading {}", path.display()))?;
        sources.push((layers, mask));
    }

    // All parts must describe the same set of layer names.
    let names: Vec<String> = sources[0].0.iter().map(|(n, _)| n.clone()).collect();
    for (layers, _) in &sources {
        let got: Vec<String> = layers.iter().map(|(n, _)| n.clone()).collect();
        if got != names {
            bail!("adapter files disagree on layer names: {names:?} vs {got:?}");
        }
    }

    let mut composed_layers = Vec::with_capacity(names.len());
    for (idx, name) in names.iter().enumerate() {
        let parts_for_layer: Vec<(RoadAdapter, SubspaceMask)> = sources
            .iter()
            .map(|(layers, mask)| (layers[idx].1.clone(), mask.clone()))
            .collect();
        composed_layers.push((name.clone(), compose(&parts_for_layer)?));
    }

    let out = resolve_out(out, "composed.rdad");
    save_adapter_file(&out, &composed_layers)?;
    println!(
        "composed {} part(s) x {} layer(s) into {}",
        parts.len(),
        names.len(),
        out.display()
    );
    Ok(0)
}

fn cmd_analyze(pairs: &Path, out: Option<PathBuf>) -> Result<i32> {
    let file = File::open(pairs).with_context(|| format!("opening {}", pairs.display()))?;
    let by_layer = read_rep_pairs(BufReader::new(file))?;
    let stats = delta_stats(&by_layer)?;

    let out = resolve_out(out, "deltas.csv");
    let mut file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_delta_csv(&mut file, &stats)?;

    let mut stdout = std::io::stdout().lock();
    write_delta_csv(&mut stdout, &stats)?;
    stdout.flush()?;
    eprintln!("wrote {} layer rows to {}", stats.len(), out.display());
    Ok(0)
}

fn cmd_export(
    variant: &str,
    d2: usize,
    random_seed: Option<u64>,
    name: &str,
    layers: usize,
    out: Option<PathBuf>,
) -> Result<i32> {
    let variant = parse_variant(variant)?;
    if layers == 0 {
        bail!("--layers must be at least 1");
    }
    let mut rng = random_seed.map(SeededRng::new);
    let mut named = Vec::with_capacity(layers);
    for i in 0..layers {
        let adapter = match rng.as_mut() {
            Some(rng) => RoadAdapter::random(variant, d2, rng)?,
            None => RoadAdapter::new(variant, d2)?,
        };
        named.push((format!("{name}{i}"), adapter));
    }
    let out = resolve_out(out, "adapter.rdad");
    save_adapter_file(&out, &named)?;
    println!(
        "exported {} {} layer(s) of d2={} to {}",
        layers,
        variant.label(),
        d2,
        out.display()
    );
    Ok(0)
}

fn cmd_import(path: &Path) -> Result<i32> {
    let layers = load_adapter_file(path)?;
    let (_, first) = &layers[0];
    println!(
        "{}: {} layer(s), variant {}, d2 {}, crc ok",
        path.display(),
        layers.len(),
        first.variant().label(),
        first.d2()
    );
    for (name, a) in &layers {
        let theta_max = a.theta().iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        let alpha_span = a
            .alpha()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        println!(
            "  {name}: {} parameters, max |theta| {:.4}, alpha in [{:.4}, {:.4}]",
            a.theta().len() + a.alpha().len(),
            theta_max,
            alpha_span.0,
            alpha_span.1
        );
    }
    Ok(0)
}
