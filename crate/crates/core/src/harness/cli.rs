//! `vidphys` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::config::RunConfig;
use super::io::{self, read_json_with};
use super::{edit_scene, eval_frames, evaluate, fit_run, render_to_dir, Checkpoint};
use crate::error::{Error, Result};
use crate::renderer::PixelGrid;
use crate::synthgen::{self, Scenario};

#[derive(Debug, Parser)]
#[command(name = "vidphys", version, about = "Recover physical parameters from video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a scenario.
    Synth(SynthArgs),
    /// Fit a scene to a dataset; writes checkpoint.json and metrics.json.
    Fit(FitArgs),
    /// Render frames and masks from a checkpoint.
    Render(RenderArgs),
    /// Evaluate a checkpoint against a dataset.
    Eval(EvalArgs),
    /// Change physical parameters of a checkpoint and re-render.
    Edit(RenderArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario JSON file or `preset:NAME`.
    #[arg(long)]
    pub config: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scenario override `key=value` on a dotted path.
    #[arg(long = "set")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Run configuration JSON file or `preset:NAME`.
    #[arg(long)]
    pub config: String,
    /// Defaults to the `dataset` entry of the configuration.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Seeds both model initialization and pixel sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Configuration override `key=value` on a dotted path.
    #[arg(long = "set")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Frame indices `a..b` (end exclusive) or a single index.
    #[arg(long)]
    pub frames: Option<String>,
    /// Render the frame count and size of this dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// For `edit`: parameter change `name=value`.
    #[arg(long = "set")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Frame indices `a..b` (end exclusive); defaults to the test split.
    #[arg(long)]
    pub frames: Option<String>,
    /// Also write metrics.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `a..b` (end exclusive) or `a`.
pub fn parse_frames(spec: &str) -> Result<Vec<usize>> {
    let num = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("bad frame range `{spec}`")))
    };
    match spec.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b)?);
            if b <= a {
                return Err(Error::Config(format!("empty frame range `{spec}`")));
            }
            Ok((a..b).collect())
        }
        None => Ok(vec![num(spec)?]),
    }
}

/// Apply dotted-path overrides to any serializable value.
fn with_overrides<T: Serialize + DeserializeOwned>(value: &T, overrides: &[String]) -> Result<T> {
    if overrides.is_empty() {
        return serde_json::from_value(serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?)
            .map_err(|e| Error::Config(e.to_string()));
    }
    let mut doc = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        let v = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut cur = &mut doc;
        for part in key.split('.') {
            cur = cur
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("`{key}` does not name a field")))?
                .entry(part.to_string())
                .or_insert(serde_json::Value::Null);
        }
        *cur = v;
    }
    serde_json::from_value(doc).map_err(|e| Error::Config(format!("after overrides: {e}")))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_scenario(spec: &str) -> Result<Scenario> {
    match spec.strip_prefix("preset:") {
        Some(name) => synthgen::presets::by_name(name),
        None => read_json_with(Path::new(spec), Error::Config),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let scenario = with_overrides(&load_scenario(&a.config)?, &a.set)?;
    let ds = synthgen::generate(&scenario, a.seed)?;
    io::write_dataset(&ds, &a.out)?;
    io::write_json(&a.out.join("scenario.json"), &scenario)?;
    eprintln!("wrote {} frames to {}", ds.frame_count(), a.out.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let mut config = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
        config.train.seed = s;
    }
    let config = config.with_overrides(&a.set)?;
    let path = a
        .dataset
        .clone()
        .or_else(|| config.dataset.clone())
        .ok_or_else(|| Error::Config("no dataset given (--dataset or `dataset` in the config)".into()))?;
    let ds = io::read_dataset(&path)?;
    let (ck, report) = fit_run(&config, &ds)?;
    ck.save(&a.out.join("checkpoint.json"))?;
    io::write_json(&a.out.join("metrics.json"), &report)?;
    print_json(&report)
}

fn render_frames_for(a: &RenderArgs, ck: &Checkpoint) -> Result<(PixelGrid, Vec<usize>)> {
    let ds = a.dataset.as_deref().map(io::read_dataset).transpose()?;
    let frames = match (&a.frames, &ds) {
        (Some(f), _) => parse_frames(f)?,
        (None, Some(d)) => (0..d.frame_count()).collect(),
        (None, None) => return Err(Error::Config("render needs --frames or --dataset".into())),
    };
    let grid = match &ds {
        Some(d) => d.grid,
        None => ck.grid()?,
    };
    Ok((grid, frames))
}

fn render(a: RenderArgs, edit: bool) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    if !edit && !a.set.is_empty() {
        return Err(Error::Config("render takes no --set; use edit".into()));
    }
    let scene = if edit { edit_scene(&ck.scene, &a.set)? } else { ck.scene.clone() };
    let (grid, frames) = render_frames_for(&a, &ck)?;
    let log = render_to_dir(&scene, &grid, &frames, &a.out)?;
    eprintln!("rendered {} frames to {}", log.frames.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let ds = io::read_dataset(&a.dataset)?;
    let frames = match &a.frames {
        Some(f) => parse_frames(f)?,
        None => eval_frames(&ds),
    };
    let report = evaluate(&ck.scene, &ds, &frames, ck.wall_clock, &ck.config_hash)?;
    if let Some(out) = &a.out {
        io::write_json(&out.join("metrics.json"), &report)?;
    }
    print_json(&report)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::Render(a) => render(a, false),
        Command::Edit(a) => render(a, true),
        Command::Eval(a) => eval(a),
    }
}
