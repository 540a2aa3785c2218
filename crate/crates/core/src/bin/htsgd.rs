use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use htsgd::experiments::{presets, run_experiment};
use htsgd::runfile::RunFile;
use htsgd::Error;

#[derive(Parser)]
#[command(name = "htsgd", version, about = "Heavy-tail experiments for online and offline SGD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run file or a named preset.
    Run {
        /// Run file (TOML).
        file: Option<PathBuf>,
        /// Use a named preset instead of a file.
        #[arg(long, conflicts_with = "file")]
        preset: Option<String>,
        /// Global seed; replaces the run file's `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; replaces the run file's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// `key=value`, applied after parsing. Repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the built-in presets.
    Presets,
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Parse { .. } | Error::Json(_) => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

fn fail(e: Error) -> ExitCode {
    match e.root() {
        Error::Parse { line, column, .. } if *line > 0 => eprintln!("error: line {line}, column {column}: {e}"),
        _ => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&e))
}

fn run(
    file: Option<&Path>,
    preset: Option<&str>,
    seed: Option<u64>,
    out: Option<&Path>,
    threads: Option<usize>,
    mut overrides: Vec<String>,
) -> Result<(), Error> {
    let mut rf = match (file, preset) {
        (Some(f), None) => RunFile::load(f)?,
        (None, Some(p)) => RunFile::from_preset(p)?,
        _ => {
            return Err(Error::Parse {
                line: 0,
                column: 0,
                message: "give either a run file or --preset".into(),
            })
        }
    };
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    rf.apply_overrides(&overrides)?;
    if let Some(o) = out {
        rf.run.out = o.to_string_lossy().into_owned();
    }
    if rf.specs.is_empty() {
        return Err(Error::InvalidArgument("the run file declares no specs".into()));
    }
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let specs = rf.resolved_specs();
    for s in &specs {
        s.validate().map_err(|e| e.in_cell(format!("spec `{}`", s.name)))?;
    }
    let out = PathBuf::from(&rf.run.out);
    for s in &specs {
        let result = run_experiment(s)?;
        let dir = result.write_dir(&out, &overrides)?;
        for t in &result.tables {
            println!("{}/{}.csv: {} rows", dir.display(), t.name, t.rows.len());
        }
        println!("{}: done in {:.2}s", s.name, result.wall_clock_secs);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Presets => {
            for p in presets() {
                println!("{:<16} {}", p.name, p.description);
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            file,
            preset,
            seed,
            out,
            threads,
            overrides,
        } => match run(file.as_deref(), preset.as_deref(), seed, out.as_deref(), threads, overrides) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(e),
        },
    }
}
