use std::fs::{self, File};
use std::io::BufWriter;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use duopath_cli::experiment::summary_path;
use duopath_cli::report::{render, write_report_csv};
use duopath_cli::{read_summary, report, run_experiment, ExperimentConfig, Mode, Report};
use duopath_net::{Origin, OriginConfig};

#[derive(Parser)]
#[command(name = "duopath", version, about = "Two-path chunked downloader: experiments and test origin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep of an experiment configuration.
    Run(RunArgs),
    /// Aggregate an existing summary table.
    Report(ReportArgs),
    /// Serve a synthetic object for loopback experiments.
    Origin(OriginArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file; the default sweep is used without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `mode`.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment file whose `out_dir` holds the results.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Results directory; takes precedence over the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OriginArgs {
    /// Start every origin listed under `[live]` in this experiment file
    /// instead of the one described by the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Object size in bytes.
    #[arg(long, default_value_t = 64 * 1024 * 1024)]
    size: u64,
    /// Content seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Delay before every response, milliseconds.
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// Per-connection cap in bytes per second.
    #[arg(long)]
    throttle: Option<u64>,
    /// Ignore Range headers and always send the whole object.
    #[arg(long)]
    no_ranges: bool,
    /// Stop serving after this many requests.
    #[arg(long)]
    fail_after: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Report(a) => report_cmd(a),
        Command::Origin(a) => origin(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type Res = Result<(), Box<dyn std::error::Error>>;

fn load(path: Option<&Path>) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn run(a: RunArgs) -> Res {
    let mut cfg = load(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.rng_seed = seed;
    }
    if let Some(mode) = a.mode {
        cfg.mode = mode;
    }
    if let Some(out) = a.out {
        cfg.out_dir = out;
    }
    let output = run_experiment(&cfg)?;
    let failed = output.rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} runs, {failed} failed; summary in {}", output.rows.len(), output.summary_path.display());
    let rep = report(&output.rows)?;
    write_report(&cfg.out_dir, &rep)?;
    print!("{}", render(&rep));
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Res {
    let out = match a.out {
        Some(o) => o,
        None => load(a.config.as_deref())?.out_dir,
    };
    let rows = read_summary(&summary_path(&out))?;
    let rep = report(&rows)?;
    write_report(&out, &rep)?;
    print!("{}", render(&rep));
    Ok(())
}

fn write_report(out: &Path, rep: &Report) -> Res {
    fs::create_dir_all(out)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("report.json"))?), rep)?;
    write_report_csv(File::create(out.join("report.csv"))?, rep)?;
    Ok(())
}

fn origin(a: OriginArgs) -> Res {
    let configs: Vec<OriginConfig> = match &a.config {
        Some(p) => {
            let cfg = ExperimentConfig::load(p)?;
            let live = cfg.live.ok_or("the configuration has no [live] section")?;
            live.networks.into_iter().flat_map(|n| n.origins).collect()
        }
        None => vec![OriginConfig {
            port: a.port,
            bind: a.bind,
            object_size: a.size,
            seed: a.seed,
            added_latency_ms: a.latency_ms,
            throttle: a.throttle,
            ranges_enabled: !a.no_ranges,
            fail_after: a.fail_after,
        }],
    };
    if configs.is_empty() {
        return Err("no origins to start".into());
    }
    let mut running = Vec::new();
    for c in configs {
        let o = Origin::serve(c)?;
        println!("serving {} bytes on http://{}/media", o.config().object_size, o.addr());
        running.push(o);
    }
    // every origin runs until the process is interrupted
    for o in running {
        o.wait();
    }
    Ok(())
}
