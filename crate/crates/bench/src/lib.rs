//! Timing sweeps over the three GEMM strategies, CSV/plot output, and a
//! cache-set placement model for operand footprints.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use fipgemm::{
    fill_deterministic, gemm, parallel_gemm, reference_gemm, BlockingParams, Layout, Matrix, Strategy,
};
use serde::{Deserialize, Serialize};

pub mod sets;

pub use sets::{analyze_set_mapping, CacheModel, Footprint, SetMapping};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Gemm(#[from] fipgemm::Error),
}

impl BenchError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Verification(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Leading dimension used for every operand of a timed call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdimMode {
    /// Leading dimension equals the stored dimension.
    Tight,
    Fixed(usize),
}

impl LdimMode {
    pub fn leading_dimension(&self, extent: usize) -> Result<usize> {
        match *self {
            LdimMode::Tight => Ok(extent),
            LdimMode::Fixed(ld) if ld >= extent => Ok(ld),
            LdimMode::Fixed(ld) => Err(BenchError::Config(format!("leading dimension {ld} is smaller than {extent}"))),
        }
    }
}

impl fmt::Display for LdimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LdimMode::Tight => f.write_str("tight"),
            LdimMode::Fixed(ld) => write!(f, "{ld}"),
        }
    }
}

impl FromStr for LdimMode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("tight") {
            return Ok(LdimMode::Tight);
        }
        match s.parse::<usize>() {
            Ok(ld) if ld > 0 => Ok(LdimMode::Fixed(ld)),
            _ => Err(BenchError::Config(format!("bad leading dimension `{s}` (expected `tight` or a positive integer)"))),
        }
    }
}

/// One problem shape of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

impl Shape {
    pub fn square(s: usize) -> Self {
        Shape { m: s, n: s, k: s }
    }

    pub fn flops(&self) -> f64 {
        2.0 * self.m as f64 * self.n as f64 * self.k as f64
    }

    fn volume(&self) -> usize {
        self.m * self.n * self.k
    }
}

/// Parses `48,96,128`, `64x32x128`, `48..2000:16` or a mix separated by
/// commas. Ranges are inclusive of the end when the step lands on it.
pub fn parse_sizes(text: &str) -> Result<Vec<Shape>> {
    let bad = |item: &str| BenchError::Config(format!("bad size `{item}`"));
    let num = |s: &str, item: &str| s.trim().parse::<usize>().ok().filter(|&v| v > 0).ok_or_else(|| bad(item));
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((lo, rest)) = item.split_once("..") {
            let (hi, step) = match rest.split_once(':') {
                Some((hi, step)) => (num(hi, item)?, num(step, item)?),
                None => (num(rest, item)?, 1),
            };
            let lo = num(lo, item)?;
            if lo > hi {
                return Err(bad(item));
            }
            out.extend((lo..=hi).step_by(step).map(Shape::square));
        } else if item.contains('x') {
            let dims: Vec<usize> = item.split('x').map(|d| num(d, item)).collect::<Result<_>>()?;
            match dims[..] {
                [m, n, k] => out.push(Shape { m, n, k }),
                _ => return Err(bad(item)),
            }
        } else {
            out.push(Shape::square(num(item, item)?));
        }
    }
    if out.is_empty() {
        return Err(BenchError::Config("no sizes given".into()));
    }
    Ok(out)
}

/// Parses a comma-separated strategy list such as `conv,sup,fip`.
pub fn parse_strategies(text: &str) -> Result<Vec<Strategy>> {
    let mut out: Vec<Strategy> = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let s = item.parse::<Strategy>().map_err(BenchError::Config)?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        return Err(BenchError::Config("no strategies given".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub sizes: Vec<Shape>,
    pub strategies: Vec<Strategy>,
    pub ldim: LdimMode,
    pub repeats: usize,
    /// Workers for the fused strategy; the other strategies run on one.
    pub threads: usize,
    pub params: BlockingParams,
    /// Check every size against the reference instead of only the
    /// smallest and largest.
    pub verify_all: bool,
    /// Lower bound on the wall time of one timed sample; short calls are
    /// repeated inside a sample until it is reached.
    pub min_sample: Duration,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: Vec::new(),
            strategies: Strategy::ALL.to_vec(),
            ldim: LdimMode::Tight,
            repeats: 5,
            threads: 1,
            params: BlockingParams::GENERIC_LARGE,
            verify_all: false,
            min_sample: Duration::from_millis(2),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(BenchError::Config("no sizes given".into()));
        }
        if self.strategies.is_empty() {
            return Err(BenchError::Config("no strategies given".into()));
        }
        if self.repeats < 3 {
            return Err(BenchError::Config(format!("repeats must be at least 3 (got {})", self.repeats)));
        }
        if self.threads == 0 {
            return Err(BenchError::Config("threads must be at least 1".into()));
        }
        self.params.validate()?;
        for s in &self.sizes {
            for extent in [s.m, s.n, s.k] {
                self.ldim.leading_dimension(extent)?;
            }
        }
        Ok(())
    }

    fn threads_for(&self, strategy: Strategy) -> usize {
        if strategy == Strategy::Fip {
            self.threads
        } else {
            1
        }
    }
}

/// One row of the output CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub strategy: String,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub ldim: String,
    pub threads: usize,
    pub repeats: usize,
    pub median_seconds: f64,
    pub gflops: f64,
    /// Per-repeat seconds per call, in repeat order. Not part of the CSV.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// Column-major operands of one sweep cell.
struct Operands {
    a: Matrix,
    b: Matrix,
    c: Matrix,
}

impl Operands {
    fn new(shape: Shape, ldim: LdimMode) -> Result<Self> {
        let mk = |rows, cols, seed| -> Result<Matrix> {
            let mut m = Matrix::zeros(rows, cols, Layout::ColMajor, ldim.leading_dimension(rows)?)?;
            fill_deterministic(&mut m.view_mut(), seed);
            Ok(m)
        };
        Ok(Operands { a: mk(shape.m, shape.k, 1)?, b: mk(shape.k, shape.n, 2)?, c: mk(shape.m, shape.n, 3)? })
    }
}

fn call(strategy: Strategy, threads: usize, ops: &mut Operands, params: &BlockingParams) -> Result<()> {
    let (a, b) = (ops.a.view(), ops.b.view());
    let mut c = ops.c.view_mut();
    if strategy == Strategy::Fip && threads > 1 {
        parallel_gemm(1.0, &a, &b, 1.0, &mut c, params, threads, None)?;
    } else {
        gemm(strategy, 1.0, &a, &b, 1.0, &mut c, params, None)?;
    }
    Ok(())
}

/// Rows of C compared against the reference during spot checks.
const VERIFY_ROWS: usize = 8;

/// Runs one call on fresh operands and compares a band of rows of C with
/// the reference. The tolerance is `8 k eps` relative to the largest
/// reference magnitude.
pub fn verify_cell(strategy: Strategy, threads: usize, shape: Shape, cfg: &SweepConfig) -> Result<()> {
    let mut ops = Operands::new(shape, cfg.ldim)?;
    let c0 = ops.c.clone();
    call(strategy, threads, &mut ops, &cfg.params)?;
    let rows: Vec<usize> = if shape.m <= VERIFY_ROWS {
        (0..shape.m).collect()
    } else {
        (0..VERIFY_ROWS).map(|t| t * (shape.m - 1) / (VERIFY_ROWS - 1)).collect()
    };
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for &i in &rows {
        let a_row = ops.a.view().submatrix(i, 0, 1, shape.k)?;
        let mut want = Matrix::zeros(1, shape.n, Layout::RowMajor, shape.n.max(1))?;
        for j in 0..shape.n {
            want.view_mut().set(0, j, c0.get(i, j));
        }
        reference_gemm(&a_row, &ops.b.view(), &mut want.view_mut())?;
        for j in 0..shape.n {
            scale = scale.max(want.get(0, j).abs());
            worst = worst.max((ops.c.get(i, j) - want.get(0, j)).abs());
        }
    }
    let tol = 8.0 * shape.k as f64 * f64::EPSILON / 2.0 * scale.max(f64::MIN_POSITIVE);
    if worst > tol || worst.is_nan() {
        return Err(BenchError::Verification(format!(
            "{strategy} {}x{}x{} ldim={}: max error {worst:e} exceeds {tol:e}",
            shape.m, shape.n, shape.k, cfg.ldim
        )));
    }
    Ok(())
}

/// Median of `samples`; sorts in place.
pub fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Speed of `a` relative to `b` from samples taken in the same repeats:
/// the median over repeats of `time_b / time_a`. Drift that spans a whole
/// repeat cancels out of each ratio.
pub fn paired_speedup(a: &BenchRecord, b: &BenchRecord) -> f64 {
    let mut ratios: Vec<f64> = a.samples.iter().zip(&b.samples).map(|(ta, tb)| tb / ta).collect();
    if ratios.is_empty() {
        return b.median_seconds / a.median_seconds;
    }
    median(&mut ratios)
}

/// Times every (size, strategy) cell. Strategies are interleaved within
/// each repeat so slow drift in machine state hits all of them alike.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<BenchRecord>> {
    run_sweep_with(cfg, |_| {})
}

/// [`run_sweep`] reporting each finished record to `progress`.
pub fn run_sweep_with(cfg: &SweepConfig, mut progress: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let smallest = cfg.sizes.iter().min_by_key(|s| s.volume()).copied();
    let largest = cfg.sizes.iter().max_by_key(|s| s.volume()).copied();
    let mut records = Vec::with_capacity(cfg.sizes.len() * cfg.strategies.len());
    for &shape in &cfg.sizes {
        if cfg.verify_all || Some(shape) == smallest || Some(shape) == largest {
            for &s in &cfg.strategies {
                verify_cell(s, cfg.threads_for(s), shape, cfg)?;
            }
        }
        let mut ops = Operands::new(shape, cfg.ldim)?;
        // warm-up, and calibration of calls per sample
        let mut inner = Vec::with_capacity(cfg.strategies.len());
        for &s in &cfg.strategies {
            let t = Instant::now();
            call(s, cfg.threads_for(s), &mut ops, &cfg.params)?;
            let once = t.elapsed().max(Duration::from_nanos(1));
            inner.push((cfg.min_sample.as_secs_f64() / once.as_secs_f64()).ceil().max(1.0) as usize);
        }
        let mut samples = vec![Vec::with_capacity(cfg.repeats); cfg.strategies.len()];
        let count = cfg.strategies.len();
        for rep in 0..cfg.repeats {
            // rotate the order so no strategy always follows the same one
            for idx in (0..count).map(|i| (i + rep) % count) {
                let s = cfg.strategies[idx];
                let t = Instant::now();
                for _ in 0..inner[idx] {
                    call(s, cfg.threads_for(s), &mut ops, &cfg.params)?;
                }
                samples[idx].push(t.elapsed().as_secs_f64() / inner[idx] as f64);
            }
        }
        for (idx, &s) in cfg.strategies.iter().enumerate() {
            let raw = samples[idx].clone();
            let seconds = median(&mut samples[idx]);
            let rec = BenchRecord {
                strategy: s.name().to_string(),
                m: shape.m,
                n: shape.n,
                k: shape.k,
                ldim: cfg.ldim.to_string(),
                threads: cfg.threads_for(s),
                repeats: cfg.repeats,
                median_seconds: seconds,
                gflops: shape.flops() / seconds / 1e9,
                samples: raw,
            };
            progress(&rec);
            records.push(rec);
        }
    }
    Ok(records)
}

/// Writes `records` as CSV.
pub fn write_csv<W: std::io::Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads records back from CSV.
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<BenchRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Matplotlib script plotting GFLOPS against size for one ldim mode of the
/// CSV at `csv_name` (resolved relative to the script).
pub fn plot_script(csv_name: &str, ldim: &str) -> String {
    format!(
        r#"# Generated by gemm-bench. Plots GFLOPS vs m=n=k for ldim={ldim}.
import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
source = os.path.join(here, {csv_name:?})
series = {{}}
with open(source, newline="") as f:
    for row in csv.DictReader(f):
        if row["ldim"] != {ldim:?}:
            continue
        key = (row["strategy"], row["threads"])
        series.setdefault(key, []).append((int(row["m"]), float(row["gflops"])))

fig, ax = plt.subplots(figsize=(7, 4))
for (strategy, threads), points in sorted(series.items()):
    points.sort()
    label = strategy if threads == "1" else f"{{strategy}} ({{threads}} threads)"
    ax.plot([p[0] for p in points], [p[1] for p in points], marker=".", label=label)
ax.set_xlabel("m = n = k")
ax.set_ylabel("GFLOPS")
ax.set_title("ldim = {ldim}")
ax.grid(True, alpha=0.3)
ax.legend()
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else os.path.splitext(os.path.abspath(__file__))[0] + ".png"
fig.savefig(out, dpi=120)
"#
    )
}

/// Writes the CSV to `csv_path` and one plot script per ldim mode next to
/// it. Returns every file written, CSV first.
pub fn emit_outputs(records: &[BenchRecord], csv_path: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(BenchError::Config("no records to write".into()));
    }
    write_csv(records, std::fs::File::create(csv_path)?)?;
    let mut written = vec![csv_path.to_path_buf()];
    let csv_name = csv_path.file_name().and_then(|s| s.to_str()).unwrap_or("results.csv").to_string();
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let mut modes: Vec<&str> = Vec::new();
    for r in records {
        if !modes.contains(&r.ldim.as_str()) {
            modes.push(&r.ldim);
        }
    }
    for mode in modes {
        let path = csv_path.with_file_name(format!("{stem}_plot_ldim_{mode}.py"));
        std::fs::write(&path, plot_script(&csv_name, mode))?;
        written.push(path);
    }
    Ok(written)
}

/// Set-mapping report for one A micropanel under `ldim`, next to the same
/// micropanel packed, under an L1 model derived from `params`.
pub fn micropanel_set_report(params: &BlockingParams, ldim: usize, ways: usize) -> Result<(SetMapping, SetMapping)> {
    let cache = CacheModel::new(params.line_bytes, params.l1_bytes / (params.line_bytes * ways.max(1)), ways)?;
    let view = Footprint::strided(params.m_r, params.k_c, 1, ldim);
    let packed = Footprint::packed(params.m_r);
    Ok((analyze_set_mapping(&view, params.k_c, &cache), analyze_set_mapping(&packed, params.k_c, &cache)))
}
