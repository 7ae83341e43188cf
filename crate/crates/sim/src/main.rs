use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ctbf_sim::{
    compare, load_scenario, run_sweep, write_csv, write_ratios, Overrides, PolicyChoice, Profile,
    RunFailure, OUTPUT_DIR_ENV,
};

#[derive(Parser)]
#[command(version, about = "Token bucket and cooperative token bucket access-link simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Tbf,
    Ctbf,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run every sweep point, seed and policy of a scenario and write a CSV.
    Run {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        /// Fixed subscriber count; drops a subscriber-count sweep.
        #[arg(long)]
        subscribers: Option<u32>,
        /// Fixed bucket multiplier (bits per bps); drops a bucket sweep.
        #[arg(long)]
        multiplier: Option<f64>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
        /// Single seed instead of the scenario's list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        warmup: Option<f64>,
        /// Output CSV. Defaults to <dir>/<scenario name>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = "results")]
        output_dir: PathBuf,
    },
    /// Per-metric ratios of candidate to baseline aggregate rows.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        /// Write the ratios here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<RunFailure>().is_some_and(RunFailure::is_invariant) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            scenario,
            profile,
            subscribers,
            multiplier,
            policy,
            seed,
            duration,
            warmup,
            out,
            output_dir,
        } => {
            let mut s = load_scenario(&scenario)?;
            Overrides {
                profile: profile.map(|p| match p {
                    ProfileArg::Desk => Profile::Desk,
                    ProfileArg::Paper => Profile::Paper,
                }),
                subscribers,
                bucket_multiplier: multiplier,
                policy: policy.map(|p| match p {
                    PolicyArg::Tbf => PolicyChoice::Tbf,
                    PolicyArg::Ctbf => PolicyChoice::Ctbf,
                    PolicyArg::Both => PolicyChoice::Both,
                }),
                seed,
                duration_s: duration,
                warmup_s: warmup,
            }
            .apply(&mut s);
            s.validate()?;
            let result = run_sweep(&s)?;
            let path = out.unwrap_or_else(|| output_dir.join(format!("{}.csv", s.name)));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(&result, BufWriter::new(file))?;
            for (i, p) in result.points.iter().enumerate() {
                let mut line = format!("{} = {}:", result.axis, p.point.value);
                for label in &result.labels {
                    let ftp = result.seed_mean(i, label, |a| a.ftp_throughput.mean);
                    let http = result.seed_mean(i, label, |a| a.http_delay.mean);
                    let dfr = result.seed_mean(i, label, |a| a.decodable_frame_rate());
                    line += &format!(
                        "  {label}: ftp {} Mbps, http {} s, frames {}",
                        fmt(ftp.map(|x| x / 1e6)),
                        fmt(http),
                        fmt(dfr)
                    );
                }
                eprintln!("{line}");
            }
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Compare {
            baseline,
            candidate,
            out,
        } => {
            let open = |p: &PathBuf| File::open(p).with_context(|| format!("opening {}", p.display()));
            let ratios = compare(open(&baseline)?, open(&candidate)?)?;
            match out {
                Some(p) => write_ratios(&ratios, BufWriter::new(File::create(&p)?)),
                None => write_ratios(&ratios, io::stdout().lock()),
            }
        }
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}
