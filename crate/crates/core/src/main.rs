use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use implicit_em::harness::commands::{cmd_compare_em, cmd_diagnose, cmd_gen_data, cmd_train, LoadedConfig, RunSummary};
use implicit_em::harness::verify::{run_verify, VerifyOptions};
use implicit_em::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "implicit-em", version, about = "Log-sum-exp objectives and gradient-descent EM")]
struct Cli {
    /// Overrides the training and data seeds (and seeds `verify`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Print nothing but errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gradient identity suite.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write the configured synthetic dataset to `output_dir/dataset.csv`.
    GenData,
    /// Train the configured regime and write trace, report and parameters.
    Train,
    /// Compare classical EM with gradient descent from the same init.
    CompareEm,
    /// Summarize a trace CSV.
    Diagnose {
        trace: PathBuf,
        /// Defaults to `diagnostics.json` next to the trace.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config { .. }) { EXIT_CONFIG } else { EXIT_FAILURE };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn load(cli: &Cli) -> Result<LoadedConfig, Failure> {
    let config_error = |message: String| Failure {
        code: EXIT_CONFIG,
        message,
    };
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| config_error("this command needs --config <path>".into()))?;
    let loaded = LoadedConfig::load(path).map_err(|e| config_error(e.to_string()))?;
    Ok(loaded.with_seed(cli.seed))
}

fn say(cli: &Cli, line: impl AsRef<str>) {
    if !cli.quiet {
        println!("{}", line.as_ref());
    }
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Verify { inject_fault } => {
            let report = run_verify(VerifyOptions {
                seed: cli.seed.unwrap_or(0),
                inject_fault: *inject_fault,
            })?;
            say(cli, format!("verify seed={}", report.seed));
            for check in &report.checks {
                if !cli.quiet || !check.passed {
                    println!("{check}");
                }
            }
            if !report.passed() {
                return Err(Failure {
                    code: EXIT_FAILURE,
                    message: format!("failing checks: {}", report.failing().join(", ")),
                });
            }
            say(cli, format!("all {} checks passed", report.checks.len()));
        }
        Command::GenData => {
            let loaded = load(cli)?;
            let path = cmd_gen_data(&loaded.config)?;
            say(cli, format!("wrote {}", show(&path)));
        }
        Command::Train => {
            let loaded = load(cli)?;
            let (artifacts, outcome) = cmd_train(&loaded)?;
            for p in [&artifacts.config_echo, &artifacts.trace, &artifacts.report, &artifacts.params] {
                say(cli, format!("wrote {}", show(p)));
            }
            let line = match &outcome.report.summary {
                RunSummary::Unsupervised { final_loss, center_errors, .. } => format!(
                    "unsupervised: steps={} final_loss={final_loss:?} center_errors={center_errors:?}",
                    outcome.trace.len()
                ),
                RunSummary::Conditional {
                    correct_slot_responsibility,
                    scores_stabilize_first,
                    ..
                } => format!(
                    "conditional: steps={} correct_slot_responsibility={correct_slot_responsibility:.6} scores_stabilize_first={scores_stabilize_first:?}",
                    outcome.trace.len()
                ),
                RunSummary::Constrained {
                    training_accuracy,
                    r_y_mean,
                    ..
                } => format!(
                    "constrained: steps={} accuracy={training_accuracy:.6} r_y_mean={r_y_mean:.6}",
                    outcome.trace.len()
                ),
            };
            say(cli, line);
        }
        Command::CompareEm => {
            let loaded = load(cli)?;
            let (path, report) = cmd_compare_em(&loaded)?;
            let c = &report.comparison;
            say(cli, format!("wrote {}", show(&path)));
            say(
                cli,
                format!(
                    "em_iterations={} max_matched_distance={:.3e} gd_gradient_norm_at_em={:.3e} em_nll={:.12} gd_nll={:.12}",
                    c.em_iterations, c.max_matched_distance, c.gd_gradient_norm_at_em, c.em_nll, c.gd_nll
                ),
            );
        }
        Command::Diagnose { trace, output } => {
            let (path, report) = cmd_diagnose(trace, output.as_deref())?;
            let d = &report.diagnostics;
            say(cli, format!("wrote {}", show(&path)));
            say(
                cli,
                format!(
                    "steps={} final_collapse_score={:?} score_stabilization_step={:?} value_stabilization_step={:?}",
                    d.steps.len(),
                    d.final_collapse_score,
                    d.score_stabilization_step,
                    d.value_stabilization_step
                ),
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
