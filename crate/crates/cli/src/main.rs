//! `sambx`: prompt-driven brain extraction from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sambx_core::{Axis, BackendSpec, BaselineMode, Connectivity2, PhantomSpec, ReferenceBackendConfig};

use crate::config::{GroundTruth, RunConfig, Target};

/// Prompt-driven brain extraction: slice a volume, derive box and point
/// prompts per slice, segment each slice with a promptable 2D backend and
/// stack the masks.
///
/// Configuration comes from an optional JSON file (`--config`); any flag
/// given on the command line overrides the file's value.
#[derive(Parser, Debug)]
#[command(name = "sambx", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract a brain mask; writes mask.nii.gz, prompts.json and run.json.
    Extract(ExtractArgs),
    /// Score a predicted mask against a ground-truth mask.
    Evaluate(EvaluateArgs),
    /// Run the baseline and the pipeline over a manifest of scans and write
    /// report.csv and report.md.
    Compare(CompareArgs),
    /// Write a synthetic head phantom and its ground truth.
    Phantom(PhantomArgs),
    /// Serve the JSON-lines segmentation protocol on stdio, answering every
    /// request with the thresholded slice (protocol testing only).
    #[command(hide = true)]
    EchoBackend {
        #[arg(long, default_value_t = 128)]
        threshold: u8,
    },
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BackendKind {
    Reference,
    External,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum BaselineModeArg {
    Builtin,
    External,
}

/// Flags shared by `extract` and `compare`; each mirrors a RunConfig field.
#[derive(Args, Debug)]
struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Resampling target: "native" or a template NIfTI whose grid is used.
    #[arg(long, value_name = "native|PATH")]
    target: Option<Target>,
    /// Slicing axis.
    #[arg(long, value_parser = parse_axis)]
    axis: Option<Axis>,
    /// Lower window quantile in [0, 1].
    #[arg(long)]
    lo_pct: Option<f64>,
    /// Upper window quantile in [0, 1].
    #[arg(long)]
    hi_pct: Option<f64>,
    /// Pixels added around each slice's foreground box.
    #[arg(long)]
    margin: Option<usize>,
    /// Inclusion markers per slice.
    #[arg(long)]
    k_inc: Option<usize>,
    /// Exclusion markers per slice.
    #[arg(long)]
    k_exc: Option<usize>,
    /// Smallest foreground area (pixels) that gets prompts.
    #[arg(long)]
    min_fg_area: Option<usize>,
    /// Exclusion ring offset and minimum marker spacing, in pixels.
    #[arg(long)]
    rim_width: Option<usize>,
    /// Segmentation backend.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Command line of the external backend, split on whitespace
    /// (implies --backend external).
    #[arg(long, value_name = "CMD")]
    backend_command: Option<String>,
    /// Seconds to wait for each external backend reply.
    #[arg(long)]
    backend_timeout: Option<f64>,
    /// Reference backend: region-growing intensity tolerance.
    #[arg(long)]
    tolerance: Option<u8>,
    /// Reference backend: pixel connectivity, 4 or 8.
    #[arg(long, value_parser = parse_connectivity)]
    connectivity: Option<Connectivity2>,
    /// Worker threads; each owns its own backend.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Baseline arm: builtin threshold method or an external BET executable.
    #[arg(long, value_enum)]
    baseline_mode: Option<BaselineModeArg>,
    /// Baseline fractional intensity threshold in (0, 1).
    #[arg(long = "f", value_name = "F")]
    f: Option<f64>,
    /// External BET executable (implies --baseline-mode external).
    #[arg(long, value_name = "PATH")]
    bet: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Input NIfTI volume (.nii or .nii.gz).
    #[arg(long, value_name = "PATH", conflicts_with_all = ["phantom", "phantom_spec"])]
    input: Option<PathBuf>,
    /// Use the default synthetic phantom as input.
    #[arg(long)]
    phantom: bool,
    /// Use a phantom described by a JSON spec as input.
    #[arg(long, value_name = "FILE", conflicts_with = "phantom")]
    phantom_spec: Option<PathBuf>,
    /// Prompt file to use instead of generated prompts.
    #[arg(long, value_name = "FILE")]
    manual_prompts: Option<PathBuf>,
    /// Ground truth to score against: a mask path or "template-mask".
    #[arg(long, value_name = "PATH|template-mask")]
    ground_truth: Option<GroundTruth>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Predicted mask.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth mask.
    #[arg(long)]
    gt: PathBuf,
    /// Resample the ground truth onto the prediction grid (nearest neighbour).
    #[arg(long)]
    resample_gt: bool,
    /// Print machine-readable JSON.
    #[arg(long)]
    json: bool,
    /// Category label for the row.
    #[arg(long)]
    category: Option<String>,
    /// Tool label for the row.
    #[arg(long)]
    tool: Option<String>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// JSON array of {"category", "scan", "gt"} entries; relative paths are
    /// resolved against the manifest's directory and "gt" may be
    /// "template-mask".
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// JSON phantom spec; other flags override it.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Cubic grid side, with the default head scaled to fit.
    #[arg(long)]
    size: Option<usize>,
    /// Gaussian noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Add a lesion just inside the brain surface.
    #[arg(long)]
    lesion: bool,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_connectivity(s: &str) -> Result<Connectivity2, String> {
    let n: u8 = s.parse().map_err(|_| format!("expected 4 or 8, got {s}"))?;
    Connectivity2::try_from(n).map_err(|e| e.to_string())
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(t) = &self.target {
            cfg.target = t.clone();
        }
        let p = &mut cfg.pipeline;
        if let Some(v) = self.axis {
            p.axis = v;
        }
        if let Some(v) = self.lo_pct {
            p.lo_pct = v;
        }
        if let Some(v) = self.hi_pct {
            p.hi_pct = v;
        }
        if let Some(v) = self.margin {
            p.prompt.margin = v;
        }
        if let Some(v) = self.k_inc {
            p.prompt.k_inc = v;
        }
        if let Some(v) = self.k_exc {
            p.prompt.k_exc = v;
        }
        if let Some(v) = self.min_fg_area {
            p.prompt.min_fg_area = v;
        }
        if let Some(v) = self.rim_width {
            p.prompt.rim_width = v;
        }
        if let Some(v) = self.parallelism {
            p.parallelism = v;
        }
        let kind = match (self.backend, &self.backend_command) {
            (Some(BackendKind::Reference), Some(_)) => bail!("--backend-command needs --backend external"),
            (Some(k), _) => Some(k),
            (None, Some(_)) => Some(BackendKind::External),
            (None, None) => None,
        };
        match kind {
            Some(BackendKind::Reference) if !matches!(p.backend, BackendSpec::Reference(_)) => {
                p.backend = BackendSpec::Reference(ReferenceBackendConfig::default());
            }
            Some(BackendKind::External) => {
                let (old_cmd, old_timeout) = match &p.backend {
                    BackendSpec::ExternalProcess { command, timeout_secs } => (command.clone(), *timeout_secs),
                    BackendSpec::Reference(_) => {
                        (Vec::new(), sambx_core::backend::protocol::DEFAULT_TIMEOUT.as_secs_f64())
                    }
                };
                let command = match &self.backend_command {
                    Some(c) => c.split_whitespace().map(String::from).collect(),
                    None => old_cmd,
                };
                if command.is_empty() {
                    bail!("the external backend needs --backend-command");
                }
                p.backend = BackendSpec::ExternalProcess {
                    command,
                    timeout_secs: old_timeout,
                };
            }
            _ => {}
        }
        match &mut p.backend {
            BackendSpec::Reference(r) => {
                if let Some(v) = self.tolerance {
                    r.tolerance = v;
                }
                if let Some(v) = self.connectivity {
                    r.connectivity = v;
                }
                if self.backend_timeout.is_some() {
                    bail!("--backend-timeout applies to the external backend only");
                }
            }
            BackendSpec::ExternalProcess { timeout_secs, .. } => {
                if let Some(v) = self.backend_timeout {
                    *timeout_secs = v;
                }
                if self.tolerance.is_some() || self.connectivity.is_some() {
                    bail!("--tolerance and --connectivity apply to the reference backend only");
                }
            }
        }
        if let Some(m) = self.baseline_mode {
            cfg.baseline.mode = match m {
                BaselineModeArg::Builtin => BaselineMode::Builtin,
                BaselineModeArg::External => BaselineMode::External,
            };
        }
        if let Some(b) = &self.bet {
            cfg.baseline.executable_path = Some(b.clone());
            if self.baseline_mode.is_none() {
                cfg.baseline.mode = BaselineMode::External;
            }
        }
        if let Some(f) = self.f {
            cfg.baseline.f = f;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Extract(a) => {
            let mut cfg = a.run.resolve()?;
            if let Some(i) = a.input {
                cfg.input = Some(i);
                cfg.phantom = None;
            }
            if a.phantom {
                cfg.phantom = Some(PhantomSpec::default());
            }
            if let Some(p) = a.phantom_spec {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| anyhow::anyhow!("cannot read phantom spec {}: {e}", p.display()))?;
                cfg.phantom = Some(serde_json::from_str(&text)?);
            }
            if let Some(m) = a.manual_prompts {
                cfg.manual_prompts = Some(m);
            }
            if let Some(g) = a.ground_truth {
                cfg.ground_truth = Some(g);
            }
            commands::extract(&cfg)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate(a) => commands::evaluate(&a.pred, &a.gt, a.resample_gt, a.json, a.category, a.tool),
        Command::Compare(a) => {
            let cfg = a.run.resolve()?;
            commands::compare(&cfg, &a.manifest)
        }
        Command::Phantom(a) => {
            let mut spec = match (&a.spec, a.size) {
                (Some(p), _) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| anyhow::anyhow!("cannot read phantom spec {}: {e}", p.display()))?;
                    serde_json::from_str(&text)?
                }
                (None, Some(n)) => PhantomSpec::scaled(n),
                (None, None) => PhantomSpec::default(),
            };
            if let Some(s) = a.noise {
                spec.noise_sigma = s;
            }
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            if a.lesion {
                spec = spec.with_surface_lesion();
            }
            commands::phantom(&spec, &a.out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::EchoBackend { threshold } => {
            let stdin = std::io::stdin().lock();
            let stdout = std::io::stdout().lock();
            sambx_core::backend::protocol::serve_echo(stdin, stdout, threshold)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
