use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use itk::commands::{cmd_clean, cmd_eval, cmd_predict, cmd_stats, cmd_train};
use itk::config::{load_normalization, RunConfig};
use itk::service::serve;
use itk::{CliError, Result};
use itk_core::corpus::Origin;
use itk_core::model::{ModelKind, TrainedModel};
use itk_core::normalize::{Field, IssueText, NormalizationConfig};

#[derive(Parser)]
#[command(name = "itk", version, about = "Issue-report triage: clean, train, evaluate, predict, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a raw issue CSV into `text,label_code` rows.
    Clean {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write corpus statistics as JSON here.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        origin: Origin,
        #[command(flatten)]
        norm: NormArgs,
    },
    /// Print corpus statistics for a raw issue CSV.
    Stats {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        origin: Origin,
        #[command(flatten)]
        norm: NormArgs,
    },
    /// Train a classifier on a cleaned CSV.
    Train {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Model family: logreg, fasttext or transformer.
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write the training log as JSON here.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        norm: NormArgs,
    },
    /// Score a model on a cleaned CSV.
    Eval {
        #[arg(long)]
        model_file: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
        /// Write the JSON report here.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Predict the label of one issue.
    Predict {
        #[arg(long)]
        model_file: PathBuf,
        #[command(flatten)]
        issue: IssueArgs,
    },
    /// Serve predictions over HTTP.
    Serve {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Args)]
struct NormArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Normalization configuration JSON; replaces the run config's.
    #[arg(long)]
    normalization: Option<PathBuf>,
    /// Comma-separated fields to keep, e.g. `title,body`.
    #[arg(long, value_delimiter = ',')]
    fields: Option<Vec<Field>>,
    #[arg(long)]
    max_tokens: Option<usize>,
}

impl NormArgs {
    fn resolve(&self) -> Result<(RunConfig, NormalizationConfig)> {
        let run = RunConfig::load_or_default(self.config.as_deref())?;
        let mut norm = match &self.normalization {
            Some(p) => load_normalization(p)?,
            None => run.normalization.clone(),
        };
        if let Some(fields) = &self.fields {
            norm = norm.with_fields(fields);
        }
        if let Some(k) = self.max_tokens {
            norm.max_tokens = k;
        }
        norm.validate()?;
        Ok((run, norm))
    }
}

#[derive(Args)]
struct IssueArgs {
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long, default_value = "")]
    body: String,
    #[arg(long, default_value = "")]
    created_at: String,
    #[arg(long, default_value = "")]
    role: String,
    #[arg(long, default_value = "")]
    repository: String,
}

fn required(flag: Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone())
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set it under \"paths\" in the config)")))
}

fn print(s: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(s.as_bytes());
    let _ = out.flush();
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Clean { input, output, stats, origin, norm } => {
            let (run, norm) = norm.resolve()?;
            let input = required(input, &run.paths.raw, "input")?;
            let output = required(output, &run.paths.clean, "output")?;
            let report = cmd_clean(&input, &output, stats.as_deref(), origin, &norm, run.seed)?;
            eprintln!(
                "read {} rows, removed {} duplicates, wrote {} to {}",
                report.rows_read,
                report.duplicates_removed,
                report.rows_written,
                output.display()
            );
        }
        Command::Stats { input, origin, norm } => {
            let (run, norm) = norm.resolve()?;
            let input = required(input, &run.paths.raw, "input")?;
            print(&to_json(&cmd_stats(&input, origin, &norm, run.seed)?)?);
        }
        Command::Train { input, model, output, log, seed, epochs, norm } => {
            let (mut run, norm) = norm.resolve()?;
            if let Some(kind) = model {
                run.model_kind = kind;
            }
            if let Some(s) = seed {
                run.seed = s;
            }
            let mut spec = run.model_spec();
            if let Some(e) = epochs {
                spec.set_epochs(e);
            }
            let input = required(input, &run.paths.clean, "input")?;
            let output = required(output, &run.paths.model, "output")?;
            let report = cmd_train(&input, &output, log.as_deref(), &spec, &norm)?;
            eprintln!(
                "trained {} on {} rows (seed {}), saved to {}",
                report.model_kind,
                report.n_train,
                report.seed,
                output.display()
            );
        }
        Command::Eval { model_file, input, json, output, config } => {
            let run = RunConfig::load_or_default(config.as_deref())?;
            let model_file = required(model_file, &run.paths.model, "model-file")?;
            let input = required(input, &run.paths.clean, "input")?;
            let output = output.or(run.paths.report);
            let out = cmd_eval(&model_file, &input, output.as_deref())?;
            print(&if json { out.json.clone() } else { out.table() });
        }
        Command::Predict { model_file, issue } => {
            let issue = IssueText {
                created_at: issue.created_at,
                author_association: issue.role,
                repository: issue.repository,
                title: issue.title,
                body: issue.body,
            };
            let resp = cmd_predict(&model_file, &issue)?;
            print(&(serde_json::to_string(&resp)? + "\n"));
        }
        Command::Serve { model_file, host, port } => {
            let model = TrainedModel::load(Path::new(&model_file))?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::io(&model_file, e))?;
            rt.block_on(serve(model, SocketAddr::new(host, port), |addr| {
                print(&format!("listening on http://{addr}\n"));
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
