use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use crystal_core::export::{
    export, export_to_path, read_jsonl, write_jsonl, ExportError, ExportFormat,
};
use crystal_core::interpreter::{AttributionList, Method};
use crystal_core::narrative::ExplanationRecord;
use crystal_core::pipeline::{
    explain_samples, load_inputs, narrate, run_pipeline, PipelineError, RunConfig,
};

/// Narrative explanations for model predictions.
#[derive(Parser)]
#[command(name = "crystal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the bundle and Insights Design without scoring anything.
    Validate(ConfigArgs),
    /// Write one attribution list per sample as JSONL.
    Interpret {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Turn attribution lists into explanation records (JSONL).
    Narrate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Attribution lists written by `interpret`.
        #[arg(long)]
        attributions: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Render explanation records in an end-user format.
    Export {
        /// Explanation records written by `narrate` (JSONL).
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: ExportFormat,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Import, interpret, narrate and export in one go.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        format: Option<ExportFormat>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// The run configuration plus command-line overrides (which win).
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dedup_k: Option<usize>,
    #[arg(long)]
    max_narratives: Option<usize>,
    #[arg(long)]
    concatenate: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(m) = self.method {
            cfg.method = m;
        }
        if let Some(s) = self.seed {
            cfg.interpreter.rng_seed = s;
        }
        if let Some(k) = self.dedup_k {
            cfg.engine.dedup_k = k;
        }
        if let Some(n) = self.max_narratives {
            cfg.engine.max_narratives = n;
        }
        if self.concatenate {
            cfg.engine.concatenate = true;
        }
        Ok(cfg)
    }
}

fn io_error(path: &Path, source: io::Error) -> PipelineError {
    PipelineError::Export(ExportError::IoFailure {
        path: Some(path.to_path_buf()),
        source,
    })
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))
}

fn write_lines<T: serde::Serialize>(
    items: &[T],
    output: Option<&Path>,
) -> Result<(), PipelineError> {
    match output {
        Some(p) => {
            let mut f = io::BufWriter::new(fs::File::create(p).map_err(|e| io_error(p, e))?);
            write_jsonl(items, &mut f)?;
            f.flush().map_err(|e| io_error(p, e))?;
        }
        None => write_jsonl(items, &mut io::stdout().lock())?,
    }
    Ok(())
}

fn warnings_code(warnings: &[String]) -> u8 {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    if warnings.is_empty() {
        0
    } else {
        3
    }
}

fn execute(command: Command) -> Result<u8, PipelineError> {
    match command {
        Command::Validate(args) => {
            let cfg = args.load()?;
            let inputs = load_inputs(&cfg)?;
            eprintln!(
                "ok: {} samples, {} features, {} super-features",
                inputs.bundle.len(),
                inputs.bundle.n_features(),
                inputs.design.mapping.len()
            );
            Ok(0)
        }
        Command::Interpret { config, output } => {
            let cfg = config.load()?;
            let inputs = load_inputs(&cfg)?;
            let (attributions, warnings) = explain_samples(&cfg, &inputs.bundle)?;
            write_lines(&attributions, output.as_deref())?;
            Ok(warnings_code(&warnings))
        }
        Command::Narrate {
            config,
            attributions,
            output,
        } => {
            let cfg = config.load()?;
            let inputs = load_inputs(&cfg)?;
            let lists: Vec<AttributionList> = read_jsonl(&read_text(&attributions)?)?;
            let (records, summary) = narrate(
                &inputs.bundle,
                &inputs.design,
                &lists,
                cfg.interpreter.top_k_features,
                &cfg.engine,
            )?;
            write_lines(&records, output.as_deref())?;
            Ok(warnings_code(&summary.warnings))
        }
        Command::Export {
            records,
            format,
            output,
        } => {
            let records: Vec<ExplanationRecord> = read_jsonl(&read_text(&records)?)?;
            match output {
                Some(p) => export_to_path(&records, format, &p)?,
                None => export(&records, format, &mut io::stdout().lock())?,
            }
            Ok(0)
        }
        Command::Run {
            config,
            format,
            output,
        } => {
            let mut cfg = config.load()?;
            if let Some(f) = format {
                cfg.format = f;
            }
            if let Some(o) = output {
                cfg.output = Some(o);
            }
            let (_, summary) = run_pipeline(&cfg, &mut io::stdout().lock())?;
            eprintln!("{summary}");
            Ok(warnings_code(&summary.warnings))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
