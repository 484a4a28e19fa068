use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use featcode::codec::{Bitstream, CodecRegistry, QualityLevel};
use featcode::container::{read_container, write_container, FeatureTensor, ScalarPrecision};
use featcode::packing::{pack, unpack};
use featcode::pipeline::{
    file_label, run_bench, run_pipeline_with, write_bench_csv, BenchEntry, RunConfig,
};
use featcode::practicality::{AllocatorProbe, MemoryProbe, TrackingAllocator};
use featcode::quant::{calibrate, forward, inverse, MonotoneTransform, DEFAULT_BIT_DEPTH};
use featcode::redundancy::{analyze, write_summary_csv, DEFAULT_HISTOGRAM_BINS};
use featcode::synthgen::{generate, validate, GeneratorSpec};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[derive(Parser)]
#[command(name = "featcode", version, about = "Feature coding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic tensors into a container.
    Gen {
        /// JSON generator spec, or a list of them.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Container base name inside `out`.
        #[arg(long, default_value = "features")]
        name: String,
        /// Print per-archetype validation checks.
        #[arg(long)]
        check: bool,
    },
    /// Full pipeline over every (tensor, codec, lambda).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        codecs: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long)]
        bit_depth: Option<u8>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        no_bench: bool,
    },
    /// Redundancy statistics for every tensor in a container.
    Analyze {
        /// Container base path.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
    },
    /// Encode every tensor of a container to `<out>/<id>.lmfc`.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "entropy0")]
        codec: String,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_BIT_DEPTH)]
        bit_depth: u8,
        /// Saved transform JSON.
        #[arg(long, conflicts_with = "calibrate")]
        transform: Option<PathBuf>,
        /// Calibration container; the fitted transform is saved next to the output.
        #[arg(long)]
        calibrate: Option<PathBuf>,
    },
    /// Decode bitstreams into a container of reconstructed tensors.
    Decode {
        #[arg(long = "in", num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Container base path to write.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "fp32")]
        precision: String,
    },
    /// Timing and memory only.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Merge bench JSON files into one CSV.
    Report {
        #[arg(long = "in", num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    One(Box<GeneratorSpec>),
    Many(Vec<GeneratorSpec>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BenchFile {
    One(BenchEntry),
    Many(Vec<BenchEntry>),
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn probe() -> Option<Arc<dyn MemoryProbe>> {
    Some(Arc::new(AllocatorProbe::default()))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Gen {
            spec,
            out,
            name,
            check,
        } => {
            let specs = match read_json::<SpecFile>(&spec)? {
                SpecFile::One(s) => vec![*s],
                SpecFile::Many(v) => v,
            };
            let mut tensors = Vec::with_capacity(specs.len());
            let mut failed = false;
            for s in &specs {
                let t = generate(s)?;
                if check {
                    let r = validate(&t, s)?;
                    for c in &r.checks {
                        println!(
                            "{} {} {}: measured {:.4}, expected {}",
                            if c.passed { "PASS" } else { "FAIL" },
                            t.id,
                            c.name,
                            c.measured,
                            c.expected
                        );
                    }
                    failed |= !r.passed();
                }
                tensors.push(t);
            }
            fs::create_dir_all(&out)?;
            let base = out.join(&name);
            let m = write_container(&tensors, &base)?;
            println!("wrote {} tensors to {}", m.tensors.len(), base.display());
            Ok(if failed {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Run {
            config,
            out,
            codecs,
            lambdas,
            bit_depth,
            reps,
            no_bench,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(c) = codecs {
                cfg.codecs = c;
            }
            if let Some(l) = lambdas {
                cfg.lambdas = l;
            }
            if let Some(b) = bit_depth {
                cfg.bit_depth = b;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            if no_bench {
                cfg.bench = false;
            }
            let summary = run_pipeline_with(&cfg, CodecRegistry::with_builtin(), probe())?;
            println!(
                "{} runs, {} tables, reports in {}",
                summary.rows.len(),
                summary.tables.len(),
                cfg.out_dir.join("reports").display()
            );
            for e in &summary.errors {
                eprintln!("error: {e}");
            }
            Ok(if summary.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Analyze { input, out, bins } => {
            let tensors = read_container(&input)?;
            let reports = tensors
                .iter()
                .map(|t| analyze(t, bins))
                .collect::<featcode::Result<Vec<_>>>()?;
            fs::create_dir_all(&out)?;
            fs::write(
                out.join("redundancy.json"),
                serde_json::to_string_pretty(&reports)? + "\n",
            )?;
            write_summary_csv(&reports, fs::File::create(out.join("redundancy.csv"))?)?;
            write_summary_csv(&reports, std::io::stdout().lock())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Encode {
            input,
            out,
            codec,
            lambda,
            bit_depth,
            transform,
            calibrate: calib,
        } => {
            let tensors = read_container(&input)?;
            fs::create_dir_all(&out)?;
            let transform = match (transform, calib) {
                (Some(p), _) => MonotoneTransform::load_json(&p)?.1,
                (None, Some(c)) => {
                    let pool = read_container(&c)?;
                    let role = pool.first().map(|t| t.role.clone()).unwrap_or_default();
                    let t = calibrate(&pool, &role)?;
                    t.save_json(&role, &out.join("calibrated.transform.json"))?;
                    t
                }
                (None, None) => bail!("pass --transform or --calibrate"),
            };
            let transform = Arc::new(transform);
            let registry = CodecRegistry::with_builtin();
            let quality = QualityLevel::custom(lambda)?;
            for t in &tensors {
                let (plane, record) = pack(t)?;
                let q = forward(&plane, &transform, bit_depth)?;
                let bs = registry.encode(&q, &codec, quality, &record)?;
                let path = out.join(format!("{}.lmfc", file_label(&t.id)));
                fs::write(&path, bs.to_bytes()?)?;
                println!("{} {} bits payload", path.display(), bs.payload_bits());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Decode {
            input,
            out,
            precision,
        } => {
            let precision: ScalarPrecision =
                serde_json::from_value(serde_json::Value::String(precision))
                    .context("precision must be fp32, fp16 or bf16")?;
            let registry = CodecRegistry::with_builtin();
            let mut tensors: Vec<FeatureTensor> = Vec::with_capacity(input.len());
            for path in &input {
                let bytes =
                    fs::read(path).with_context(|| format!("reading {}", path.display()))?;
                let bs = Bitstream::from_bytes(&bytes)?;
                let (q, mut record) = registry.decode(&bs)?;
                record.tensor_id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                tensors.push(unpack(inverse(&q)?, &record)?.with_precision(precision));
            }
            if let Some(dir) = out.parent() {
                fs::create_dir_all(dir)?;
            }
            write_container(&tensors, &out)?;
            println!("decoded {} tensors to {}", tensors.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { config, out, reps } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(r) = reps {
                cfg.reps = r;
            }
            let entries = run_bench(&cfg, probe())?;
            write_bench_csv(&entries, std::io::stdout().lock())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { input, out } => {
            let mut entries = Vec::new();
            for p in &input {
                match read_json::<BenchFile>(p)? {
                    BenchFile::One(e) => entries.push(e),
                    BenchFile::Many(v) => entries.extend(v),
                }
            }
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_bench_csv(&entries, fs::File::create(&out)?)?;
            println!("{} rows to {}", entries.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
