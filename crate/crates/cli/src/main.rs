//! `conhist` — scenario files in, deterministic reports out.
//!
//! Exit codes: 0 all verdicts pass; 1 an invariant check failed; 2 a
//! scenario or argument was rejected; 3 a numerical procedure failed to
//! converge.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use conhist_cli::commands::{self, CliError};
use conhist_cli::report::{emit, Format, ReportDocument};

#[derive(Parser)]
#[command(name = "conhist", version, about = "Consistency, propagator, and branching checks over scenario files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct EmitArgs {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Text, global = true)]
    format: Format,
    /// Write the report here instead of stdout; relative paths resolve
    /// against CONHIST_OUT_DIR when that is set.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Decoherence-functional checks over a stepped history family.
    #[command(subcommand)]
    Histories(HistoriesCmd),
    /// Lattice two-point tables.
    #[command(subcommand)]
    Propagator(PropagatorCmd),
    /// Proper-time kernel checks.
    #[command(subcommand)]
    Kernel(KernelCmd),
    /// Truncated field-operator checks.
    #[command(subcommand)]
    Fock(FockCmd),
    /// Measurement-chain branch decompositions.
    #[command(subcommand)]
    Branches(BranchesCmd),
    /// Record-basis selection demonstration.
    #[command(subcommand)]
    Ambiguity(AmbiguityCmd),
    /// Environment-assisted invariance checks.
    #[command(subcommand)]
    Envariance(EnvarianceCmd),
    /// Multiplicity-fraction probability demonstration.
    #[command(subcommand)]
    Born(BornCmd),
    /// The boxed-cat scenario.
    #[command(subcommand)]
    Cat(CatCmd),
}

#[derive(clap::Subcommand)]
enum HistoriesCmd {
    /// Check decoherence of the scenario's history family.
    Check {
        #[command(flatten)]
        args: commands::HistoriesCheckArgs,
        #[command(flatten)]
        emit: EmitArgs,
    },
}

#[derive(clap::Subcommand)]
enum PropagatorCmd {
    /// Emit a two-point table over signed lattice displacements.
    Table {
        #[command(flatten)]
        args: commands::PropagatorTableArgs,
        #[command(flatten)]
        emit: EmitArgs,
    },
}

#[derive(clap::Subcommand)]
enum KernelCmd {
    /// Check kernel composition, unitarity, slicing, and reassembly.
    Verify {
        #[command(flatten)]
        args: commands::KernelVerifyArgs,
        #[command(flatten)]
        emit: EmitArgs,
    },
}

#[derive(clap::Subcommand)]
enum FockCmd {
    /// Check vertex and interaction invariants on a truncated field model.
    Verify {
        #[command(flatten)]
        args: commands::FockVerifyArgs,
        #[command(flatten)]
        emit: EmitArgs,
    },
}

#[derive(clap::Subcommand)]
enum BranchesCmd {
    /// Decompose the scenario's prepared state into labeled branches.
    Decompose {
        #[command(flatten)]
        args: commands::BranchesDecomposeArgs,
        #[command(flatten)]
        emit: EmitArgs,
    },
}

#[derive(clap::Subcommand)]
enum AmbiguityCmd {
    /// Show that records pin the outcome basis of a measurement chain.
    Demo {
        #[command(flatten)]
        args: commands::AmbiguityDemoArgs,
        #[command(flatten)]
        emit: EmitArgs,
    },
}

#[derive(clap::Subcommand)]
enum EnvarianceCmd {
    /// Check phase and swap envariance plus the fine-graining chain.
    Check {
        #[command(flatten)]
        args: commands::EnvarianceCheckArgs,
        #[command(flatten)]
        emit: EmitArgs,
    },
}

#[derive(clap::Subcommand)]
enum BornCmd {
    /// Derive outcome weights as exact multiplicity fractions.
    Demo {
        #[command(flatten)]
        args: commands::BornDemoArgs,
        #[command(flatten)]
        emit: EmitArgs,
    },
}

#[derive(clap::Subcommand)]
enum CatCmd {
    /// Branch the boxed-cat chain and check the box makes no difference.
    Run {
        #[command(flatten)]
        args: commands::CatRunArgs,
        #[command(flatten)]
        emit: EmitArgs,
    },
}

fn dispatch(command: &Command) -> (Result<ReportDocument, CliError>, EmitArgs) {
    match command {
        Command::Histories(HistoriesCmd::Check { args, emit }) => {
            (commands::histories_check(args), EmitArgs { format: emit.format, out: emit.out.clone() })
        }
        Command::Propagator(PropagatorCmd::Table { args, emit }) => {
            (commands::propagator_table(args), EmitArgs { format: emit.format, out: emit.out.clone() })
        }
        Command::Kernel(KernelCmd::Verify { args, emit }) => {
            (commands::kernel_verify(args), EmitArgs { format: emit.format, out: emit.out.clone() })
        }
        Command::Fock(FockCmd::Verify { args, emit }) => {
            (commands::fock_verify(args), EmitArgs { format: emit.format, out: emit.out.clone() })
        }
        Command::Branches(BranchesCmd::Decompose { args, emit }) => {
            (commands::branches_decompose(args), EmitArgs { format: emit.format, out: emit.out.clone() })
        }
        Command::Ambiguity(AmbiguityCmd::Demo { args, emit }) => {
            (commands::ambiguity_demo(args), EmitArgs { format: emit.format, out: emit.out.clone() })
        }
        Command::Envariance(EnvarianceCmd::Check { args, emit }) => {
            (commands::envariance_check(args), EmitArgs { format: emit.format, out: emit.out.clone() })
        }
        Command::Born(BornCmd::Demo { args, emit }) => {
            (commands::born_demo(args), EmitArgs { format: emit.format, out: emit.out.clone() })
        }
        Command::Cat(CatCmd::Run { args, emit }) => {
            (commands::cat_run(args), EmitArgs { format: emit.format, out: emit.out.clone() })
        }
    }
}

/// Resolve `--out` against `CONHIST_OUT_DIR` for relative paths.
fn resolve_out(path: &PathBuf) -> PathBuf {
    if path.is_absolute() {
        return path.clone();
    }
    match std::env::var_os("CONHIST_OUT_DIR") {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path.clone(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, emit_args) = dispatch(&cli.command);
    let report = match result {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: {}", e.message);
            return ExitCode::from(e.code as u8);
        }
    };

    let rendered = emit(&report, emit_args.format);
    match &emit_args.out {
        Some(path) => {
            let target = resolve_out(path);
            if let Err(e) = std::fs::write(&target, &rendered) {
                eprintln!("error: cannot write {}: {e}", target.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{rendered}"),
    }

    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        eprintln!("error: {} check(s) failed", report.failed_count());
        ExitCode::from(1)
    }
}
