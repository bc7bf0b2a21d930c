use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asyncclip::acceptance::{Suite, CRITERIA};
use asyncclip::metrics::write_run;
use asyncclip::sweep::{run_sweep, SweepSpec};
use asyncclip::{run_simulation, Error, RunConfig};

/// Deterministic simulator for asynchronous clipped SGD under heavy-tailed noise.
#[derive(Parser)]
#[command(name = "asyncclip", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv and summary.json.
    Run(RunArgs),
    /// Run a grid sweep; writes one directory per grid point plus index.json.
    Sweep(SweepArgs),
    /// Run the acceptance criteria and print one line per criterion.
    Accept(AcceptArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file to read.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to the config's output.dir, then $ASYNCCLIP_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value` override of a config field; dotted keys reach nested tables.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Default output root when neither --out nor output.dir is given.
    #[arg(long, env = "ASYNCCLIP_OUT", default_value = "asyncclip-out", hide_env_values = true)]
    out_root: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct AcceptArgs {
    /// Criteria to run (default: all).
    #[arg(value_name = "ID")]
    only: Vec<String>,
}

fn resolve_out(common: &Common, from_config: Option<&Path>, leaf: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| from_config.map(Path::to_path_buf))
        .unwrap_or_else(|| common.out_root.join(leaf))
}

fn prepare(base: &RunConfig, common: &Common) -> asyncclip::Result<RunConfig> {
    let mut cfg = base.with_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> asyncclip::Result<()> {
    let c = &args.common;
    let cfg = prepare(&RunConfig::load(&c.config)?, c)?;
    let leaf = c
        .config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let out = resolve_out(c, cfg.output.as_ref().map(|o| o.dir.as_path()), &leaf);
    let result = run_simulation(&cfg)?;
    let (csv, json) = write_run(&result, &cfg, &out)?;
    println!(
        "mode={} policy={} T={} min_gns={:e} sim_time={}",
        result.mode,
        result.policy,
        result.records.len(),
        result.min_grad_norm_sq(),
        result.total_sim_time
    );
    eprintln!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> asyncclip::Result<()> {
    let c = &args.common;
    if args.parallel == 0 {
        return Err(Error::Argument("--parallel must be at least 1".into()));
    }
    let mut spec = SweepSpec::load(&c.config)?;
    spec.base = prepare(&spec.base, c)?;
    spec.validate()?;
    let leaf = c
        .config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sweep".into());
    let out = resolve_out(c, spec.base.output.as_ref().map(|o| o.dir.as_path()), &leaf);
    println!(
        "grid: {} points x {} seeds = {} runs",
        spec.points().len(),
        spec.seeds().len(),
        spec.size()
    );
    let index = run_sweep(&spec, &out, args.parallel)?;
    let failed: usize = index.points.iter().map(|p| p.failures).sum();
    match index.best_point() {
        Some(best) => println!(
            "best={} median_min_gns={:e} failures={failed} index={}",
            best.dir,
            best.median_min_grad_norm_sq,
            out.join(asyncclip::sweep::INDEX_FILE).display()
        ),
        None => println!("best=none failures={failed}"),
    }
    Ok(())
}

fn cmd_accept(args: &AcceptArgs) -> asyncclip::Result<bool> {
    let suite = Suite::default();
    let ids: Vec<String> = if args.only.is_empty() {
        CRITERIA.iter().map(|s| s.to_string()).collect()
    } else {
        args.only.clone()
    };
    let mut all = true;
    for id in &ids {
        let report = suite
            .run(id)
            .ok_or_else(|| Error::Argument(format!("unknown criterion {id:?}")))?;
        println!("{report}");
        all &= report.passed;
    }
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|_| true),
        Command::Sweep(a) => cmd_sweep(a).map(|_| true),
        Command::Accept(a) => cmd_accept(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
