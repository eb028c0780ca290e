//! `cwdpo` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use cwdpo_cli::compare::{compare_bundles, Bundle, Comparison};
use cwdpo_cli::dynamics::{run_dynamics, DynamicsOptions};
use cwdpo_cli::run::{apply_overrides, run_experiment, RunOverrides};
use cwdpo_cli::{exit, Ablation, CliError, ExperimentConfig};
use cwdpo_core::data::Tier;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  I/O error (unreadable or unwritable path)
  2  usage error (bad flags or arguments)
  3  config error (parse failure, invalid value, conflicting ablations)
  4  training diverged (offending batch saved as divergence_batch.jsonl)
  5  comparison error (bundles from different data or probe sets)
  6  capability error (analysis not supported for this bundle)
  7  input error (missing or malformed bundle contents)";

#[derive(Parser)]
#[command(name = "cwdpo", version, about = "Two-stage cooling-weighted preference optimization experiments", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the experiment described by a config file and write its bundle.
    #[command(after_help = EXIT_CODES)]
    Run {
        config: PathBuf,
        /// Override `[experiment] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the bundle directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add an ablation switch: no-smooth-sft, no-negative-sampling,
        /// hard-constraint, no-cw-dpo, fixed-cooling-weight=<w>,
        /// no-negative-filtering. Repeatable; at most one per stage.
        #[arg(long = "ablation", value_name = "NAME[=VALUE]", value_parser = parse_ablation)]
        ablations: Vec<Ablation>,
    },
    /// Line up the probe series of two bundles; B minus A.
    #[command(after_help = EXIT_CODES)]
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write the per-checkpoint CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Influence checks, component norms and regularization profile of a bundle.
    #[command(after_help = EXIT_CODES)]
    Dynamics {
        bundle: PathBuf,
        /// Also tabulate step-halving error ratios over a range of step sizes.
        #[arg(long)]
        eta_sweep: bool,
        /// Step size of the one-step check.
        #[arg(long, default_value_t = 1e-4)]
        eta: f64,
        /// Number of (updating, observed) pairs.
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        /// Loser tier of the updating pairs.
        #[arg(long, default_value = "medium", value_parser = parse_tier)]
        tier: Tier,
        /// Output directory; defaults to <bundle>/dynamics.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse()
}

fn parse_tier(s: &str) -> Result<Tier, String> {
    s.parse().map_err(|e: cwdpo_core::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::USAGE as u8
            } else {
                exit::OK as u8
            });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<CliError>()
                .map_or(exit::INPUT, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            ablations,
        } => {
            let origin = config.display().to_string();
            let cfg = ExperimentConfig::load(&config)?;
            let cfg = apply_overrides(
                cfg,
                &RunOverrides {
                    seed,
                    out,
                    ablations,
                },
                &origin,
            )?;
            let print = cfg.report.print_summary;
            for o in
                run_experiment(&cfg).with_context(|| format!("running {}", cfg.experiment.name))?
            {
                eprintln!("{}: bundle written to {}", o.name, o.dir.display());
                if print {
                    println!("{}", serde_json::to_string_pretty(&o.summary)?);
                }
            }
        }
        Command::Compare { a, b, out } => {
            let report = compare_bundles(&Bundle::load(&a)?, &Bundle::load(&b)?)?;
            print_finals(&report, &a, &b);
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
                    report.write_csv(file)?;
                    eprintln!("per-checkpoint series written to {}", path.display());
                }
                None => report.write_csv(std::io::stdout().lock())?,
            }
        }
        Command::Dynamics {
            bundle,
            eta_sweep,
            eta,
            pairs,
            tier,
            out,
        } => {
            let opts = DynamicsOptions {
                eta,
                pairs,
                tier,
                eta_sweep,
                out,
                ..DynamicsOptions::default()
            };
            let report = run_dynamics(&bundle, &opts)?;
            println!(
                "one-step influence at eta = {eta:e} ({} pairs, {} losers)",
                pairs,
                tier.name()
            );
            println!(
                "{:<10} {:>14} {:>14}",
                "loss", "median rel err", "max rel err"
            );
            for loss in unique(report.influence.iter().map(|r| r.loss)) {
                let max = report
                    .influence
                    .iter()
                    .filter(|r| r.loss == loss)
                    .map(|r| r.relative_error)
                    .fold(0.0, f64::max);
                println!(
                    "{:<10} {:>14.3e} {:>14.3e}",
                    loss,
                    report.median_relative_error(loss),
                    max
                );
            }
            if eta_sweep {
                println!("\nstep halving: |error(eta)| / |error(eta/2)|, about 4 for a quadratic remainder");
                println!("{:<12} {:>12}", "eta", "median ratio");
                for e in report.sweep_etas() {
                    println!("{:<12.3e} {:>12.4}", e, report.median_halving_ratio(e));
                }
            }
            println!(
                "\ncomponent norms: {} rows over {} checkpoints",
                report.component_norms.len(),
                report.checkpoint_steps.len()
            );
            println!(
                "regularization profile: {} rows, max norm-ratio error {:.3e}",
                report.profile.len(),
                report.max_profile_error()
            );
            eprintln!("tables written to {}", report.out.display());
        }
    }
    Ok(())
}

fn unique<'a>(xs: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn print_finals(report: &Comparison, a: &std::path::Path, b: &std::path::Path) {
    eprintln!(
        "final probe metrics (A = {}, B = {})",
        a.display(),
        b.display()
    );
    eprintln!("{:<22} {:>12} {:>12} {:>12}", "metric", "A", "B", "B - A");
    for (name, va, vb, d) in &report.finals {
        eprintln!("{name:<22} {va:>12.6} {vb:>12.6} {d:>+12.6}");
    }
}
