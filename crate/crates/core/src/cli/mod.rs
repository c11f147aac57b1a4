//! Command-line front end: `synth`, `train`, `enhance`, `eval`, `gradcheck`, `bench`.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use config::{parse_overrides, resolve};

pub use commands::{cmd_bench, cmd_enhance, cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, GradcheckOutcome};
pub use config::{RunConfig, RESOLVED_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "tvqe", version, about = "Compressed-video quality enhancement on raw YUV luma")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run config; `key=value` arguments override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeds init, sampling and synthetic content (train.seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frame extent of headerless YUV, e.g. 416x240.
    #[arg(long)]
    pub dims: Option<String>,
    /// Dotted overrides such as `train.lr=1e-3`.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade a raw (or generated) sequence once per q.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Raw input; a synthetic sequence is generated when absent.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Comma-separated q list.
        #[arg(long, value_delimiter = ',')]
        q: Vec<u32>,
    },
    /// Two-stage training; writes a checkpoint and a loss CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Raw training sequence (repeatable, aligned with --compressed).
        #[arg(long)]
        raw: Vec<PathBuf>,
        #[arg(long)]
        compressed: Vec<PathBuf>,
    },
    /// Enhance every frame of a compressed sequence.
    Enhance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Quality gains, per-frame series and BD-rate.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Compressed sequence (repeatable, one per q).
        #[arg(long)]
        compressed: Vec<PathBuf>,
        /// Enhanced sequence (repeatable, aligned with --compressed).
        #[arg(long)]
        enhanced: Vec<PathBuf>,
        /// Comma-separated kbps per compressed stream.
        #[arg(long, value_delimiter = ',')]
        rates: Vec<f64>,
    },
    /// Per-op and end-to-end finite-difference gradient checks.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Coordinates sampled per parameter tensor.
        #[arg(long)]
        coords: Option<usize>,
        /// Negate one backward rule (test hook).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Attention runtime scaling table.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated WxH list.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

fn path_list(v: &[PathBuf]) -> toml::Value {
    toml::Value::Array(v.iter().map(|p| toml::Value::String(p.display().to_string())).collect())
}

fn path_value(p: &std::path::Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

/// Flag-derived overrides come after the file and before explicit `key=value`s.
fn overrides(common: &Common, extra: Vec<(&str, toml::Value)>) -> Result<Vec<(String, toml::Value)>> {
    let mut v: Vec<(String, toml::Value)> = Vec::new();
    if let Some(o) = &common.out {
        v.push(("io.out".into(), path_value(o)));
    }
    if let Some(s) = common.seed {
        v.push(("train.seed".into(), toml::Value::Integer(s as i64)));
    }
    if let Some(d) = &common.dims {
        v.push(("io.dims".into(), toml::Value::String(d.clone())));
    }
    v.extend(extra.into_iter().map(|(k, val)| (k.to_string(), val)));
    v.extend(parse_overrides(&common.overrides)?);
    Ok(v)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, raw, q } => {
            let mut extra = Vec::new();
            if let Some(r) = raw {
                extra.push(("io.raw", path_list(&[r])));
            }
            if !q.is_empty() {
                extra.push(("io.qs", toml::Value::Array(q.iter().map(|&x| toml::Value::Integer(x as i64)).collect())));
            }
            let r = resolve(common.config.as_deref(), &overrides(&common, extra)?)?;
            cmd_synth(&r.config)
        }
        Command::Train { common, raw, compressed } => {
            let mut extra = Vec::new();
            if !raw.is_empty() {
                extra.push(("io.raw", path_list(&raw)));
            }
            if !compressed.is_empty() {
                extra.push(("io.compressed", path_list(&compressed)));
            }
            let r = resolve(common.config.as_deref(), &overrides(&common, extra)?)?;
            cmd_train(&r.config).map(|_| ())
        }
        Command::Enhance { common, checkpoint, input } => {
            let mut extra = Vec::new();
            if let Some(c) = checkpoint {
                extra.push(("io.checkpoint", path_value(&c)));
            }
            if let Some(i) = input {
                extra.push(("io.compressed", path_list(&[i])));
            }
            let r = resolve(common.config.as_deref(), &overrides(&common, extra)?)?;
            cmd_enhance(&r.config, r.model_given)
        }
        Command::Eval { common, raw, compressed, enhanced, rates } => {
            let mut extra = Vec::new();
            if let Some(r) = raw {
                extra.push(("io.raw", path_list(&[r])));
            }
            if !compressed.is_empty() {
                extra.push(("io.compressed", path_list(&compressed)));
            }
            if !enhanced.is_empty() {
                extra.push(("io.enhanced", path_list(&enhanced)));
            }
            if !rates.is_empty() {
                extra.push(("io.rates", toml::Value::Array(rates.iter().map(|&x| toml::Value::Float(x)).collect())));
            }
            let r = resolve(common.config.as_deref(), &overrides(&common, extra)?)?;
            cmd_eval(&r.config)
        }
        Command::Gradcheck { common, coords, inject_fault } => {
            let mut extra = Vec::new();
            if let Some(c) = coords {
                extra.push(("gradcheck.coords_per_tensor", toml::Value::Integer(c as i64)));
            }
            let r = resolve(common.config.as_deref(), &overrides(&common, extra)?)?;
            let fault = match inject_fault {
                None => None,
                Some(name) => Some(
                    crate::tensor::OpKind::from_name(&name)
                        .ok_or_else(|| Error::Usage(format!("unknown op {name:?} for --inject-fault")))?,
                ),
            };
            let outcome = cmd_gradcheck(&r.config, r.model_given, fault)?;
            if outcome.failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Numeric(format!("gradient check failed: {}", outcome.failed.join(", "))))
            }
        }
        Command::Bench { common, sizes, repeats } => {
            let mut extra = Vec::new();
            if !sizes.is_empty() {
                extra.push(("bench.sizes", toml::Value::Array(sizes.into_iter().map(toml::Value::String).collect())));
            }
            if let Some(n) = repeats {
                extra.push(("bench.repeats", toml::Value::Integer(n as i64)));
            }
            let r = resolve(common.config.as_deref(), &overrides(&common, extra)?)?;
            cmd_bench(&r.config).map(|_| ())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

