use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use egail::cli::{
    cmd_chat, cmd_eval, cmd_inspect, cmd_prepare, cmd_stats, cmd_train, CliError, Overrides,
    RunConfig, TRAIN_DIR,
};
use egail::numcore::Precision;

#[derive(Parser, Debug)]
#[command(name = "egail", version, about = "Adversarial imitation training for empathetic dialogue")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Floating-point width; overrides the config, or converts a checkpoint on load.
    #[arg(long, global = true, value_parser = ["32", "64"])]
    precision: Option<String>,
    /// Checkpoint for eval, chat and inspect (default: train/best.egail under the output root).
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Progress logging, and discriminator scores in chat.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse corpora, split them and build the vocabulary.
    Prepare,
    /// Train on the prepared data.
    Train {
        /// Continue from this checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split by conversation depth.
    Eval,
    /// Talk to a checkpoint.
    Chat {
        /// Sampling temperature (default: the config's eval temperature, else 1).
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Print a checkpoint summary.
    Inspect,
    /// Print trajectory counts per source for the configured inputs.
    Stats,
}

impl Cli {
    fn precision(&self) -> Option<Precision> {
        self.precision
            .as_deref()
            .and_then(|p| p.parse().ok())
            .and_then(Precision::from_bits)
    }

    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            precision: self.precision(),
        }
    }

    fn run_config(&self) -> Result<RunConfig, CliError> {
        match &self.config {
            Some(p) => RunConfig::load(p, self.overrides()),
            None => Err(CliError::Usage("this command needs --config PATH".into())),
        }
    }

    /// `--checkpoint`, else `train/best.egail` under the configured output root.
    fn checkpoint(&self) -> Result<PathBuf, CliError> {
        if let Some(p) = &self.checkpoint {
            return Ok(p.clone());
        }
        match &self.config {
            Some(_) => Ok(self
                .run_config()?
                .output_dir()
                .join(TRAIN_DIR)
                .join(egail::gail::BEST)),
            None => Err(CliError::Usage("pass --checkpoint PATH or --config PATH".into())),
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Prepare => {
            let cfg = cli.run_config()?;
            let out = cmd_prepare(&cfg)?;
            for (path, e) in &out.malformed {
                eprintln!("skipped {} line {}: {}", path.display(), e.line, e.message);
            }
            println!("{}", out.stats.render());
            println!("wrote {}", out.dir.display());
        }
        Command::Train { resume } => {
            let cfg = cli.run_config()?;
            let out = cmd_train(&cfg, resume.as_deref())?;
            let st = &out.state;
            println!(
                "trained {} steps; validation perplexity {} at step 0, best {} at step {}",
                st.global_step,
                fmt_opt(st.initial_val_perplexity),
                fmt_opt(st.best_val_perplexity),
                st.best_step.map_or("-".into(), |s| s.to_string()),
            );
            println!("best checkpoint {}", out.best.display());
            if let Some(m) = &out.mle {
                println!("pretrained checkpoint {}", m.display());
            }
            println!("metrics {}", out.metrics.display());
        }
        Command::Eval => {
            let cfg = cli.run_config()?;
            let out = cmd_eval(&cfg, cli.checkpoint.as_deref(), cli.precision())?;
            println!("{}", out.report.to_table());
            println!("wrote {} and {}", out.jsonl.display(), out.table.display());
        }
        Command::Chat { temperature } => {
            let path = cli.checkpoint()?;
            let temperature = match (temperature, &cli.config) {
                (Some(t), _) => *t,
                (None, Some(_)) => cli.run_config()?.eval.temperature,
                (None, None) => 1.0,
            };
            let stdin = std::io::stdin();
            cmd_chat(
                &path,
                temperature,
                cli.seed.unwrap_or(0),
                cli.verbose,
                cli.precision(),
                stdin.lock(),
                std::io::stdout(),
            )?;
        }
        Command::Inspect => println!("{}", cmd_inspect(&cli.checkpoint()?)?),
        Command::Stats => println!("{}", cmd_stats(&cli.run_config()?)?),
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
