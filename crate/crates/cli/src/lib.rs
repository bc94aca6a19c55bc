//! Pipeline for instruction finetuning of small translation models, from
//! bitext filtering to interpolation, driven by one TOML configuration.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::load_config;
use crate::error::{CliError, Result};
use crate::pipeline::{ModelChoice, Pipeline, Variant};

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "INSTRUCT_NMT_OUT";

#[derive(Debug, Parser)]
#[command(name = "instruct-nmt", version, about = "Instruction finetuning for toy NMT models")]
pub struct Cli {
    /// TOML configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set finetune.epochs=2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Global seed; shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; runs live in `<out>/<run name>`.
    #[arg(long, env = OUT_ENV, global = true)]
    pub out: Option<PathBuf>,
    /// Rerun stages whose inputs changed since the recorded run.
    #[arg(long, global = true)]
    pub force: bool,
    /// Ablation: finetune on task data only.
    #[arg(long, global = true)]
    pub no_parallel_mix: bool,
    /// Ablation: prepend instructions without the instruction tags.
    #[arg(long, global = true)]
    pub no_instruction_tokens: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the normalized configuration.
    ValidateConfig,
    /// Build and filter the parallel corpus and the general test set.
    Filter,
    /// Synthesize task data and split it into train and held-out sets.
    Synthesize,
    /// Train the subword vocabulary and its tag-expanded variant.
    Tokenize,
    /// Train the base translation model.
    TrainBase,
    /// Expand the vocabulary and finetune on the parallel/task mix.
    Finetune,
    /// Translate a file line by line.
    Decode {
        #[arg(long, value_enum, default_value = "finetuned")]
        model: ModelChoice,
        /// Instruction applied to every line.
        #[arg(long)]
        instruction: Option<String>,
        #[arg(long)]
        input: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score task following and general translation; checks thresholds.
    Eval,
    /// Score zero-shot composition of two instructions.
    ComposeEval,
    /// Search the base/finetuned interpolation weight.
    Interpolate,
    /// Run every stage on the synthetic language.
    ReproduceToy {
        /// Also run both ablations and compare them with the full recipe.
        #[arg(long)]
        ablations: bool,
        /// Leave out the interpolation weight search.
        #[arg(long)]
        skip_interpolation: bool,
    },
}

impl Cli {
    fn variant(&self) -> Variant {
        Variant {
            no_parallel: self.no_parallel_mix,
            no_tags: self.no_instruction_tokens,
        }
    }
}

fn check(report: &pipeline::EvalReport) -> Result<()> {
    let failures = report.failures();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Threshold(failures))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    let mut variant = cli.variant();
    variant.no_parallel |= cfg.mix.no_parallel;
    variant.no_tags |= cfg.mix.no_instruction_tokens;
    if let Command::ValidateConfig = cli.command {
        let text = toml::to_string_pretty(&cfg).map_err(|e| CliError::Validation(e.to_string()))?;
        print!("{text}");
        return Ok(());
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let mut p = Pipeline::open(cfg, &out, cli.force)?;
    match cli.command {
        Command::ValidateConfig => unreachable!("handled above"),
        Command::Filter => p.filter(),
        Command::Synthesize => p.synthesize(),
        Command::Tokenize => p.tokenize(),
        Command::TrainBase => p.train_base(),
        Command::Finetune => p.finetune(variant),
        Command::Decode {
            model,
            instruction,
            input,
            output,
        } => p.decode(model, variant, instruction.as_deref(), &input, output.as_deref()),
        Command::Eval => {
            let r = p.eval(variant)?;
            print!("{}", pipeline::render_eval(&r));
            check(&r)
        }
        Command::ComposeEval => {
            let r = p.compose_eval(variant)?;
            print!("{}", instruct_nmt_core::eval::render_composition_report(&r.rows));
            Ok(())
        }
        Command::Interpolate => {
            let r = p.interpolate(variant)?;
            println!("best alpha {} (objective {:.3})", r.search.best_alpha, r.search.best_perf);
            Ok(())
        }
        Command::ReproduceToy {
            ablations,
            skip_interpolation,
        } => {
            let r = p.reproduce(variant, ablations, !skip_interpolation)?;
            print!("{}", pipeline::render_eval(&r));
            println!("\nartifacts in {}", p.dir.display());
            check(&r)
        }
    }
}
