//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, DATA_ROOT_ENV};
use crate::error::{CliError, Result};
use crate::pipeline::{self, Manifest, Stage, Workspace};

#[derive(Debug, Parser)]
#[command(name = "lanekit", version, about = "Lane-change decision learning and MPC replay simulation")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stage (overrides the configuration).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `paths.out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Raw trajectory CSV (overrides `paths.data`). Relative paths are
    /// resolved against the data root.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Directory against which a relative data path is resolved.
    #[arg(long, global = true, env = DATA_ROOT_ENV)]
    pub data_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic trajectory corpus.
    Synth {
        /// Cars in addition to the slow truck.
        #[arg(long)]
        vehicles: Option<usize>,
    },
    /// Assemble, gap-fill and smooth raw trajectories.
    Ingest,
    /// Detect lane changes, apply exclusions and label instances.
    Label,
    /// Compute feature vectors for the labelled frames.
    Featurize,
    /// Train the random forest on a vehicle-level split.
    Train {
        #[arg(long)]
        trees: Option<usize>,
    },
    /// Evaluate the forest on the held-out vehicles.
    Eval,
    /// Replay a recorded scene with the ego under closed-loop control.
    Simulate(SimulateArgs),
    /// Sensitivity of p(lane_change) to one feature.
    Sweep(SweepArgs),
    /// Run the whole pipeline (synthesising data when none is given).
    All,
    /// Print the effective configuration as TOML.
    Config,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub ego: Option<i64>,
    #[arg(long)]
    pub start: Option<i64>,
    #[arg(long)]
    pub end: Option<i64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hi: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
}

impl Cli {
    /// Configuration file, then flags.
    pub fn workspace(&self) -> Result<Workspace> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let seed = self.seed.unwrap_or(cfg.seed);
        cfg.apply_seed(seed);
        match &self.command {
            Command::Synth { vehicles: Some(n) } => cfg.synth.vehicles = *n,
            Command::Train { trees: Some(n) } => cfg.forest.n_trees = *n,
            Command::Simulate(a) => {
                cfg.sim.ego_id = a.ego.or(cfg.sim.ego_id);
                cfg.sim.start_frame = a.start.or(cfg.sim.start_frame);
                cfg.sim.end_frame = a.end.or(cfg.sim.end_frame);
            }
            Command::Sweep(a) => {
                if let Some(f) = &a.feature {
                    cfg.sweep.feature = f.clone();
                }
                cfg.sweep.lo = a.lo.unwrap_or(cfg.sweep.lo);
                cfg.sweep.hi = a.hi.unwrap_or(cfg.sweep.hi);
                cfg.sweep.step = a.step.unwrap_or(cfg.sweep.step);
            }
            _ => {}
        }
        if let Some(out) = &self.out {
            cfg.paths.out = out.clone();
        }
        if let Some(data) = &self.data {
            cfg.paths.data = Some(data.clone());
        }
        let data = cfg.paths.data.as_ref().map(|d| match &self.data_root {
            Some(root) if d.is_relative() => root.join(d),
            _ => d.clone(),
        });
        let out = cfg.paths.out.clone();
        Workspace::new(cfg, out, data)
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<Vec<Manifest>> {
    let ws = cli.workspace()?;
    let stage = match &cli.command {
        Command::Config => {
            stdout.write_all(ws.config.to_toml()?.as_bytes()).map_err(|e| CliError::io("<stdout>", e))?;
            return Ok(Vec::new());
        }
        Command::All => return pipeline::run_all(&ws),
        Command::Synth { .. } => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::Label => Stage::Label,
        Command::Featurize => Stage::Featurize,
        Command::Train { .. } => Stage::Train,
        Command::Eval => Stage::Eval,
        Command::Simulate(_) => Stage::Simulate,
        Command::Sweep(_) => Stage::Sweep,
    };
    Ok(vec![pipeline::run_stage(&ws, stage)?])
}

/// Parses `args` (program name first), runs, and returns the exit code.
/// Progress goes to `stdout`; failures are reported as JSON on `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, stdout) {
        Ok(manifests) => {
            for m in manifests {
                let _ = writeln!(stdout, "{}: {} output(s) written", m.stage, m.outputs.len());
            }
            0
        }
        Err(e) => {
            let report = serde_json::to_string(&e.report()).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", e.to_string()));
            let _ = writeln!(stderr, "{report}");
            e.exit_code()
        }
    }
}
