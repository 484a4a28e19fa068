//! End-to-end runs: calibrate per role class, then push every
//! (tensor, codec, lambda) tuple through pack, quantize, encode, decode,
//! dequantize and unpack, writing bitstreams and reports.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! bitstreams/<tensor>__<codec>__l<lambda>.lmfc
//! transforms/<role>.transform.json
//! reports/rp_table.csv            one row per run
//! reports/rp_tables.json          per (tensor, codec) tables with correlation
//! reports/redundancy_original.{json,csv}
//! reports/redundancy_reconstructed.{json,csv}
//! reports/histograms/<label>.csv
//! reports/bench.json
//! reports/errors.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::codec::{Bitstream, CodecRegistry, QualityLevel, LAMBDA_GRID};
use crate::container::{read_container, FeatureTensor};
use crate::error::{Error, Result};
use crate::metrics::{
    build_rp_table, mse, Direction, DistortionRecord, PerformanceRecord, RateRecord, RpTable,
    RunRecord, RP_CSV_HEADER,
};
use crate::packing::{pack, unpack};
use crate::practicality::{
    b_max, measure_codec, measure_end_to_end, Aggregation, BenchOptions, BenchReport, MeasureScope,
    MemoryProbe, SizeRecord, TimingRecord, DEFAULT_REPS, DEFAULT_WARMUPS,
};
use crate::quant::{
    calibrate, check_bit_depth, forward, inverse, MonotoneTransform, DEFAULT_BIT_DEPTH,
};
use crate::redundancy::{
    analyze, write_summary_csv, AnalysisReport, HistogramReport, DEFAULT_HISTOGRAM_BINS,
};
use crate::synthgen::{generate, GeneratorSpec};

/// Where tensors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Container base path (`<base>.manifest.json` + `<base>.blob`).
    Container(PathBuf),
    Generate(Vec<GeneratorSpec>),
}

impl Source {
    pub fn load(&self) -> Result<Vec<FeatureTensor>> {
        match self {
            Source::Container(base) => read_container(base),
            Source::Generate(specs) => specs.iter().map(generate).collect(),
        }
    }

    fn rebase(&mut self, dir: &Path) {
        if let Source::Container(p) = self {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

fn default_lambdas() -> Vec<f64> {
    LAMBDA_GRID.to_vec()
}

fn default_bit_depth() -> u8 {
    DEFAULT_BIT_DEPTH
}

fn default_reps() -> usize {
    DEFAULT_REPS
}

fn default_warmups() -> usize {
    DEFAULT_WARMUPS
}

fn default_bins() -> usize {
    DEFAULT_HISTOGRAM_BINS
}

fn default_true() -> bool {
    true
}

fn default_scope() -> MeasureScope {
    MeasureScope::CodecOnly
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: Source,
    /// Auxiliary set the transforms are fitted on; must not overlap `input`.
    pub calibration: Source,
    pub codecs: Vec<String>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_bit_depth")]
    pub bit_depth: u8,
    pub out_dir: PathBuf,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_warmups")]
    pub warmups: usize,
    /// Set false to skip timing during `run`.
    #[serde(default = "default_true")]
    pub bench: bool,
    #[serde(default = "default_scope")]
    pub bench_scope: MeasureScope,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    /// CSV with columns tensor_set, lambda, metric_name, value, direction.
    #[serde(default)]
    pub performance: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a JSON config. Relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        cfg.input.rebase(dir);
        cfg.calibration.rebase(dir);
        if cfg.out_dir.is_relative() {
            cfg.out_dir = dir.join(&cfg.out_dir);
        }
        if let Some(p) = cfg.performance.as_mut() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self, registry: &CodecRegistry) -> Result<()> {
        if self.codecs.is_empty() {
            return Err(Error::Config("codec list is empty".into()));
        }
        for name in &self.codecs {
            let desc = registry.descriptor(name)?;
            if !desc.supports(self.bit_depth) {
                return Err(Error::UnsupportedBitDepth {
                    codec: name.clone(),
                    bit_depth: self.bit_depth,
                });
            }
        }
        if self.lambdas.is_empty() {
            return Err(Error::Config("lambda list is empty".into()));
        }
        for (i, &l) in self.lambdas.iter().enumerate() {
            QualityLevel::custom(l)?;
            if self.lambdas[..i].contains(&l) {
                return Err(Error::DuplicateLambda(l));
            }
        }
        check_bit_depth(self.bit_depth)?;
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::ZeroBins);
        }
        match (&self.input, &self.calibration) {
            (Source::Container(a), Source::Container(b)) if a == b => {
                return Err(Error::Config(format!(
                    "calibration and input both read {}",
                    a.display()
                )));
            }
            (Source::Generate(a), Source::Generate(b)) => {
                if let Some(s) = a.iter().find(|s| {
                    b.iter()
                        .any(|c| c.archetype == s.archetype && c.seed == s.seed)
                }) {
                    return Err(Error::Config(format!(
                        "calibration reuses test seed {} for {}",
                        s.seed, s.archetype
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// A failure pinned to the tuple that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageError {
    pub tensor: Option<String>,
    pub codec: Option<String>,
    pub lambda: Option<f64>,
    pub stage: String,
    pub message: String,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}]", self.stage)?;
        if let Some(t) = &self.tensor {
            write!(f, " tensor={t}")?;
        }
        if let Some(c) = &self.codec {
            write!(f, " codec={c}")?;
        }
        if let Some(l) = self.lambda {
            write!(f, " lambda={l}")?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub tensor: String,
    #[serde(flatten)]
    pub report: BenchReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub tensor: String,
    pub codec: String,
    pub lambda: f64,
    pub rate: RateRecord,
    pub mse: f64,
    pub bitstream: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableEntry {
    pub tensor: String,
    pub codec: String,
    pub table: RpTable,
}

/// Everything a run produced. Files on disk mirror these fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub rows: Vec<RunRow>,
    pub tables: Vec<TableEntry>,
    pub original: Vec<AnalysisReport>,
    pub reconstructed: Vec<AnalysisReport>,
    pub bench: Vec<BenchEntry>,
    pub errors: Vec<StageError>,
}

impl RunSummary {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Replaces anything outside `[A-Za-z0-9._-]` so ids are safe file names.
pub fn file_label(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn run_label(tensor: &str, codec: &str, lambda: f64) -> String {
    format!("{}__{}__l{}", file_label(tensor), file_label(codec), lambda)
}

#[derive(Debug, Deserialize)]
struct PerfRow {
    tensor_set: String,
    lambda: f64,
    metric_name: String,
    value: f64,
    direction: Direction,
}

/// Performance records keyed by (tensor_set, lambda bits).
pub type PerformanceTable = HashMap<(String, u64), PerformanceRecord>;

pub fn read_performance(path: &Path) -> Result<PerformanceTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for row in csv::Reader::from_reader(file).deserialize() {
        let row: PerfRow = row?;
        out.insert(
            (row.tensor_set, row.lambda.to_bits()),
            PerformanceRecord {
                metric_name: row.metric_name,
                value: row.value,
                direction: row.direction,
            },
        );
    }
    Ok(out)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_histogram_csv<W: Write>(h: &HistogramReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_lo", "bin_hi", "count", "cdf"])?;
    for (i, (&count, &cdf)) in h.counts.iter().zip(&h.cdf).enumerate() {
        w.write_record([
            h.edges[i].to_string(),
            h.edges[i + 1].to_string(),
            count.to_string(),
            cdf.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Writes bench entries as one CSV row each.
pub fn write_bench_csv<W: Write>(entries: &[BenchEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "tensor",
        "codec",
        "lambda",
        "t_enc_s",
        "t_dec_s",
        "s_raw_bits",
        "s_enc_bits",
        "bmax_bps",
        "bmax_mbps",
        "mem_peak_bytes",
        "mem_method",
    ])?;
    for e in entries {
        let r = &e.report;
        let method = serde_json::to_value(r.mem_method)?;
        w.write_record([
            e.tensor.clone(),
            r.codec.clone(),
            r.lambda.to_string(),
            r.t_enc_s.to_string(),
            r.t_dec_s.to_string(),
            r.s_raw_bits.to_string(),
            r.s_enc_bits.to_string(),
            r.bmax_bps.to_string(),
            r.bmax_mbps.to_string(),
            r.mem_peak_bytes.to_string(),
            method.as_str().unwrap_or_default().to_owned(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Fits one frozen transform per role class present in `roles`.
fn calibrate_roles(
    calib: &[FeatureTensor],
    roles: impl IntoIterator<Item = String>,
) -> BTreeMap<String, Result<Arc<MonotoneTransform>>> {
    let mut out = BTreeMap::new();
    for role in roles {
        if out.contains_key(&role) {
            continue;
        }
        let pool: Vec<FeatureTensor> = calib.iter().filter(|t| t.role == role).cloned().collect();
        let fitted = calibrate(&pool, &role).map(Arc::new);
        out.insert(role, fitted);
    }
    out
}

struct Prepared {
    registry: CodecRegistry,
    tensors: Vec<FeatureTensor>,
    transforms: BTreeMap<String, Result<Arc<MonotoneTransform>>>,
    qualities: Vec<QualityLevel>,
}

fn prepare(
    config: &RunConfig,
    registry: CodecRegistry,
    errors: &mut Vec<StageError>,
) -> Result<Prepared> {
    config.validate(&registry)?;
    let tensors = config.input.load()?;
    let calib = config.calibration.load()?;
    let transforms = calibrate_roles(&calib, tensors.iter().map(|t| t.role.clone()));
    for (role, t) in &transforms {
        if let Err(e) = t {
            errors.push(StageError {
                tensor: None,
                codec: None,
                lambda: None,
                stage: format!("calibrate:{role}"),
                message: e.to_string(),
            });
        }
    }
    let qualities = config
        .lambdas
        .iter()
        .map(|&l| QualityLevel::custom(l))
        .collect::<Result<_>>()?;
    Ok(Prepared {
        registry,
        tensors,
        transforms,
        qualities,
    })
}

struct Outcome {
    row: RunRow,
    reconstructed: FeatureTensor,
}

fn run_one(
    reg: &CodecRegistry,
    tensor: &FeatureTensor,
    transform: &Arc<MonotoneTransform>,
    codec: &str,
    quality: QualityLevel,
    bit_depth: u8,
    bitstream_dir: &Path,
) -> std::result::Result<Outcome, (String, Error)> {
    let at = |stage: &'static str| move |e: Error| (stage.to_owned(), e);
    let (plane, record) = pack(tensor).map_err(at("pack"))?;
    let q = forward(&plane, transform, bit_depth).map_err(at("forward"))?;
    let bs = reg
        .encode(&q, codec, quality, &record)
        .map_err(at("encode"))?;
    let bytes = bs.to_bytes().map_err(at("encode"))?;
    let path = bitstream_dir.join(format!(
        "{}.lmfc",
        run_label(&tensor.id, codec, quality.lambda())
    ));
    fs::write(&path, &bytes).map_err(|e| ("write".to_owned(), Error::io(&path, e)))?;

    let parsed = Bitstream::from_bytes(&bytes).map_err(at("decode"))?;
    let (dq, mut drecord) = reg.decode_as(&parsed, codec).map_err(at("decode"))?;
    drecord.tensor_id = tensor.id.clone();
    let restored = inverse(&dq).map_err(at("inverse"))?;
    let reconstructed = unpack(restored, &drecord)
        .map_err(at("unpack"))?
        .with_precision(tensor.precision())
        .with_role(tensor.role.clone());

    let rate = RateRecord {
        payload_bits: bs.payload_bits(),
        element_count: tensor.len() as u64,
        raw_bits: tensor.precision().bit_width(),
        header_bits: bs.header_bits(),
    };
    let distortion = mse(tensor, &reconstructed).map_err(at("metrics"))?;
    Ok(Outcome {
        row: RunRow {
            tensor: tensor.id.clone(),
            codec: codec.to_owned(),
            lambda: quality.lambda(),
            rate,
            mse: distortion.mse,
            bitstream: path,
        },
        reconstructed,
    })
}

fn bench_one(
    reg: &CodecRegistry,
    config: &RunConfig,
    tensor: &FeatureTensor,
    transform: &Arc<MonotoneTransform>,
    codec: &str,
    quality: QualityLevel,
    probe: Option<&Arc<dyn MemoryProbe>>,
) -> Result<BenchEntry> {
    let opts = BenchOptions {
        reps: config.reps,
        warmups: config.warmups,
        raw_bits: tensor.precision().bit_width(),
        probe: probe.cloned(),
    };
    let m = match config.bench_scope {
        MeasureScope::CodecOnly => {
            let (plane, record) = pack(tensor)?;
            let q = forward(&plane, transform, config.bit_depth)?;
            measure_codec(reg, codec, &q, &record, quality, &opts)?
        }
        MeasureScope::EndToEnd => measure_end_to_end(
            reg,
            codec,
            tensor,
            transform,
            config.bit_depth,
            quality,
            &opts,
        )?,
    };
    Ok(BenchEntry {
        tensor: tensor.id.clone(),
        report: BenchReport::new(codec, quality, &m)?,
    })
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunSummary> {
    run_pipeline_with(config, CodecRegistry::with_builtin(), None)
}

/// Runs every tuple. Configuration problems fail before any work; stage
/// failures are collected in the summary (and `reports/errors.json`) while
/// the remaining tuples keep going.
pub fn run_pipeline_with(
    config: &RunConfig,
    registry: CodecRegistry,
    probe: Option<Arc<dyn MemoryProbe>>,
) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    let prep = prepare(config, registry, &mut summary.errors)?;
    let performance = match &config.performance {
        Some(p) => read_performance(p)?,
        None => HashMap::new(),
    };

    let out = &config.out_dir;
    let dirs = [
        out.join("bitstreams"),
        out.join("reports"),
        out.join("reports").join("histograms"),
        out.join("transforms"),
    ];
    for d in &dirs {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let (bitstream_dir, reports, hist_dir, transform_dir) =
        (&dirs[0], &dirs[1], &dirs[2], &dirs[3]);

    for (role, t) in &prep.transforms {
        if let Ok(t) = t {
            t.save_json(
                role,
                &transform_dir.join(format!("{}.transform.json", file_label(role))),
            )?;
        }
    }

    let mut records: BTreeMap<(usize, usize), Vec<RunRecord>> = BTreeMap::new();
    let mut bench_by_run: HashMap<(usize, usize, u64), BenchEntry> = HashMap::new();

    for (ti, tensor) in prep.tensors.iter().enumerate() {
        let tensor_err = |stage: &str, message: String| StageError {
            tensor: Some(tensor.id.clone()),
            codec: None,
            lambda: None,
            stage: stage.to_owned(),
            message,
        };
        match analyze(tensor, config.histogram_bins) {
            Ok(r) => {
                let path = hist_dir.join(format!("{}__original.csv", file_label(&tensor.id)));
                write_histogram_csv(&r.histogram, create(&path)?)?;
                summary.original.push(r);
            }
            Err(e) => summary.errors.push(tensor_err("analyze", e.to_string())),
        }
        let transform = match &prep.transforms[&tensor.role] {
            Ok(t) => t,
            Err(e) => {
                summary.errors.push(tensor_err("calibrate", e.to_string()));
                continue;
            }
        };
        for (ci, codec) in config.codecs.iter().enumerate() {
            for &quality in &prep.qualities {
                let lambda = quality.lambda();
                let fail = |stage: String, e: Error| StageError {
                    tensor: Some(tensor.id.clone()),
                    codec: Some(codec.clone()),
                    lambda: Some(lambda),
                    stage,
                    message: e.to_string(),
                };
                let outcome = match run_one(
                    &prep.registry,
                    tensor,
                    transform,
                    codec,
                    quality,
                    config.bit_depth,
                    bitstream_dir,
                ) {
                    Ok(o) => o,
                    Err((stage, e)) => {
                        summary.errors.push(fail(stage, e));
                        continue;
                    }
                };
                let label = run_label(&tensor.id, codec, lambda);
                match analyze(&outcome.reconstructed, config.histogram_bins) {
                    Ok(mut r) => {
                        r.tensor_id = label.clone();
                        let path = hist_dir.join(format!("{label}.csv"));
                        write_histogram_csv(&r.histogram, create(&path)?)?;
                        summary.reconstructed.push(r);
                    }
                    Err(e) => summary.errors.push(fail("analyze".into(), e)),
                }
                let mut bmax = None;
                if config.bench {
                    match bench_one(
                        &prep.registry,
                        config,
                        tensor,
                        transform,
                        codec,
                        quality,
                        probe.as_ref(),
                    ) {
                        Ok(entry) => {
                            let timing = TimingRecord {
                                t_enc_s: entry.report.t_enc_s,
                                t_dec_s: entry.report.t_dec_s,
                                repetitions: config.reps,
                                warmups: config.warmups,
                                aggregation: Aggregation::Median,
                            };
                            let size = SizeRecord {
                                s_raw_bits: entry.report.s_raw_bits,
                                s_enc_bits: entry.report.s_enc_bits,
                            };
                            bmax = b_max(&timing, &size).ok();
                            bench_by_run.insert((ti, ci, lambda.to_bits()), entry);
                        }
                        Err(e) => summary.errors.push(fail("bench".into(), e)),
                    }
                }
                records.entry((ti, ci)).or_default().push(RunRecord {
                    lambda,
                    rate: outcome.row.rate,
                    distortion: DistortionRecord {
                        mse: outcome.row.mse,
                    },
                    performance: performance
                        .get(&(tensor.id.clone(), lambda.to_bits()))
                        .cloned(),
                    bmax,
                });
                summary.rows.push(outcome.row);
            }
        }
    }

    // Deterministic order for bench output: tensor, codec, lambda as configured.
    let mut keys: Vec<_> = bench_by_run.keys().copied().collect();
    keys.sort_by(|a, b| {
        (a.0, a.1)
            .cmp(&(b.0, b.1))
            .then(f64::from_bits(a.2).total_cmp(&f64::from_bits(b.2)))
    });
    summary.bench = keys
        .into_iter()
        .map(|k| bench_by_run.remove(&k).unwrap())
        .collect();

    let mut rp_csv = csv::Writer::from_writer(create(&reports.join("rp_table.csv"))?);
    let mut header = vec!["tensor", "codec"];
    header.extend(RP_CSV_HEADER);
    rp_csv.write_record(&header)?;
    for ((ti, ci), runs) in &records {
        let tensor = &prep.tensors[*ti].id;
        let codec = &config.codecs[*ci];
        match build_rp_table(runs) {
            Ok(table) => {
                let mut buf = Vec::new();
                table.write_csv(&mut buf)?;
                let mut rd = csv::Reader::from_reader(buf.as_slice());
                for rec in rd.records() {
                    let rec = rec?;
                    let mut row = vec![tensor.as_str(), codec.as_str()];
                    row.extend(rec.iter());
                    rp_csv.write_record(&row)?;
                }
                summary.tables.push(TableEntry {
                    tensor: tensor.clone(),
                    codec: codec.clone(),
                    table,
                });
            }
            Err(e) => summary.errors.push(StageError {
                tensor: Some(tensor.clone()),
                codec: Some(codec.clone()),
                lambda: None,
                stage: "rp_table".into(),
                message: e.to_string(),
            }),
        }
    }
    rp_csv.flush().map_err(|e| Error::Csv(e.into()))?;

    write_json(&reports.join("rp_tables.json"), &summary.tables)?;
    write_json(&reports.join("redundancy_original.json"), &summary.original)?;
    write_summary_csv(
        &summary.original,
        create(&reports.join("redundancy_original.csv"))?,
    )?;
    write_json(
        &reports.join("redundancy_reconstructed.json"),
        &summary.reconstructed,
    )?;
    write_summary_csv(
        &summary.reconstructed,
        create(&reports.join("redundancy_reconstructed.csv"))?,
    )?;
    write_json(&reports.join("bench.json"), &summary.bench)?;
    write_json(&reports.join("errors.json"), &summary.errors)?;
    Ok(summary)
}

/// Timing only: every (tensor, codec, lambda) tuple measured in turn.
pub fn run_bench(
    config: &RunConfig,
    probe: Option<Arc<dyn MemoryProbe>>,
) -> Result<Vec<BenchEntry>> {
    let mut errors = Vec::new();
    let prep = prepare(config, CodecRegistry::with_builtin(), &mut errors)?;
    let mut out = Vec::new();
    for tensor in &prep.tensors {
        let transform = match &prep.transforms[&tensor.role] {
            Ok(t) => t,
            Err(e) => {
                return Err(Error::Config(format!(
                    "calibration for `{}` failed: {e}",
                    tensor.role
                )))
            }
        };
        for codec in &config.codecs {
            for &quality in &prep.qualities {
                out.push(bench_one(
                    &prep.registry,
                    config,
                    tensor,
                    transform,
                    codec,
                    quality,
                    probe.as_ref(),
                )?);
            }
        }
    }
    let reports = config.out_dir.join("reports");
    fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    write_json(&reports.join("bench.json"), &out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::ArchetypeId;

    fn config(out: &Path, codecs: &[&str]) -> RunConfig {
        RunConfig {
            input: Source::Generate(vec![GeneratorSpec::new(
                ArchetypeId::KvValue,
                vec![2, 4, 32, 16],
                1,
            )]),
            calibration: Source::Generate(vec![GeneratorSpec::new(
                ArchetypeId::KvValue,
                vec![2, 4, 32, 16],
                100,
            )]),
            codecs: codecs.iter().map(|s| s.to_string()).collect(),
            lambdas: default_lambdas(),
            bit_depth: 8,
            out_dir: out.to_owned(),
            reps: 1,
            warmups: 0,
            bench: true,
            bench_scope: MeasureScope::CodecOnly,
            histogram_bins: 32,
            performance: None,
        }
    }

    #[test]
    fn empty_codec_list_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let err = run_pipeline(&config(&out, &[])).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(!out.exists());
    }

    #[test]
    fn overlapping_calibration_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), &["passthrough"]);
        c.calibration = c.input.clone();
        assert!(matches!(run_pipeline(&c), Err(Error::Config(_))));
    }

    #[test]
    fn bad_lambda_and_unknown_codec() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), &["passthrough"]);
        c.lambdas = vec![0.0];
        assert!(run_pipeline(&c).is_err());
        c.lambdas = vec![0.01, 0.01];
        assert!(matches!(run_pipeline(&c), Err(Error::DuplicateLambda(_))));
        let c = config(dir.path(), &["nope"]);
        assert!(matches!(run_pipeline(&c), Err(Error::UnknownCodec(_))));
    }

    #[test]
    fn writes_layout_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), &["passthrough", "lossy_requant"]);
        let s = run_pipeline(&c).unwrap();
        assert!(s.ok(), "{:?}", s.errors);
        assert_eq!(s.rows.len(), 10);
        assert_eq!(s.tables.len(), 2);
        assert_eq!(s.bench.len(), 10);
        assert_eq!(s.reconstructed.len(), 10);
        for f in [
            "reports/rp_table.csv",
            "reports/rp_tables.json",
            "reports/redundancy_original.json",
            "reports/redundancy_original.csv",
            "reports/redundancy_reconstructed.csv",
            "reports/bench.json",
            "reports/errors.json",
            "transforms/value_cache.transform.json",
        ] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let csv = fs::read_to_string(dir.path().join("reports/rp_table.csv")).unwrap();
        assert_eq!(csv.lines().count(), 11);
        for row in &s.rows {
            assert!(row.bitstream.is_file());
        }
    }

    #[test]
    fn missing_role_calibration_is_a_stage_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), &["passthrough"]);
        c.calibration = Source::Generate(vec![GeneratorSpec::new(
            ArchetypeId::SsmCache,
            vec![2, 64, 16],
            5,
        )]);
        let s = run_pipeline(&c).unwrap();
        assert!(!s.ok());
        assert!(s.rows.is_empty());
        assert_eq!(s.original.len(), 1);
    }

    #[test]
    fn performance_rows_join_by_tensor_and_lambda() {
        let dir = tempfile::tempdir().unwrap();
        let perf = dir.path().join("perf.csv");
        let tensor = "kv_value_s1";
        let mut text = String::from("tensor_set,lambda,metric_name,value,direction\n");
        for (i, l) in LAMBDA_GRID.iter().enumerate() {
            text += &format!("{tensor},{l},acc,{},higher-better\n", 0.5 + 0.1 * i as f64);
        }
        fs::write(&perf, text).unwrap();
        let mut c = config(dir.path(), &["lossy_requant"]);
        c.performance = Some(perf);
        c.bench = false;
        let s = run_pipeline(&c).unwrap();
        let t = &s.tables[0].table;
        assert!(t.points.iter().all(|p| p.performance.is_some()));
        assert_eq!(t.correlation.n_points, 5);
        assert!(t.correlation.rho.unwrap() < 0.0);
    }

    #[test]
    fn file_labels_are_safe() {
        assert_eq!(file_label("model/layer 5:k"), "model_layer_5_k");
        assert_eq!(run_label("a", "entropy0", 0.004), "a__entropy0__l0.004");
    }
}
