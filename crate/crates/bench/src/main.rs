use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fipgemm::{default_params, threads_from_env, BlockingParams, Profile};
use fipgemm_bench::{
    emit_outputs, micropanel_set_report, parse_sizes, parse_strategies, run_sweep_with, write_csv, BenchError, LdimMode,
    Result, SetMapping, SweepConfig,
};

/// Times conventional, unpacked and fused-packing DGEMM over a size sweep.
#[derive(Debug, Parser)]
#[command(name = "gemm-bench", version)]
struct Cli {
    /// Sizes: comma list of `N`, `MxNxK` or `LO..HI:STEP` (m = n = k)
    #[arg(long, default_value = "48..2000:16")]
    sizes: String,
    /// Leading dimension of every operand: `tight` or a fixed value
    #[arg(long, default_value = "tight")]
    ldim: String,
    /// Comma list of strategies (conv, sup, fip)
    #[arg(long, default_value = "conv,sup,fip")]
    strategies: String,
    /// Timed samples per cell; the median is reported
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Workers for fip (default: FIPGEMM_NUM_THREADS or 1)
    #[arg(long)]
    threads: Option<usize>,
    /// Blocking parameter file, or `generic-small` / `generic-large`
    #[arg(long)]
    params: Option<String>,
    /// CSV output path; plot scripts are written next to it. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Check every size against the reference, not only the extremes
    #[arg(long)]
    verify: bool,
    /// Print the cache-set mapping of one A micropanel per size and exit
    #[arg(long)]
    analyze_sets: bool,
}

fn load_params(arg: Option<&str>) -> Result<BlockingParams> {
    let profile = match arg {
        None | Some("generic-large") => Profile::GenericLarge,
        Some("generic-small") => Profile::GenericSmall,
        Some(path) => Profile::File(PathBuf::from(path)),
    };
    Ok(default_params(&profile)?)
}

fn set_row(label: &str, ld: usize, m: &SetMapping) -> String {
    format!("{label},{ld},{},{},{:.3},{:.3},{}", m.lines, m.max, m.mean, m.imbalance, m.overflowing_sets)
}

fn run(cli: Cli) -> Result<()> {
    let threads = match cli.threads {
        Some(t) => t,
        None => threads_from_env().map_err(|e| BenchError::Config(e.to_string()))?,
    };
    let cfg = SweepConfig {
        sizes: parse_sizes(&cli.sizes)?,
        strategies: parse_strategies(&cli.strategies)?,
        ldim: cli.ldim.parse::<LdimMode>()?,
        repeats: cli.repeats,
        threads,
        params: load_params(cli.params.as_deref())?,
        verify_all: cli.verify,
        ..SweepConfig::default()
    };
    cfg.validate()?;

    if cli.analyze_sets {
        println!("layout,ld,lines,max_per_set,mean_per_set,imbalance,overflowing_sets");
        let mut lds: Vec<usize> = cfg.sizes.iter().map(|s| cfg.ldim.leading_dimension(s.m)).collect::<Result<_>>()?;
        lds.dedup();
        for ld in lds {
            let (strided, packed) = micropanel_set_report(&cfg.params, ld, 8)?;
            println!("{}", set_row("unpacked", ld, &strided));
            println!("{}", set_row("packed", ld, &packed));
        }
        return Ok(());
    }

    let records = run_sweep_with(&cfg, |r| {
        eprintln!("{:>5} {:>5} {:>5} {:<5} {:>10.3e} s {:>8.2} GFLOPS", r.m, r.n, r.k, r.strategy, r.median_seconds, r.gflops)
    })?;
    match &cli.out {
        Some(path) => {
            for written in emit_outputs(&records, path)? {
                eprintln!("wrote {}", written.display());
            }
        }
        None => write_csv(&records, std::io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gemm-bench: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
