//! Run configuration: `key = value` files, `--key value` overrides and the
//! `CPSDE_SEED` environment variable.

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use cpsde::cyclization::CyclizationType;
use cpsde::denoiser::DenoiserConfig;
use cpsde::harmonic::BetaSchedule;
use cpsde::router::DecodeMode;
use cpsde::tensor::AdamWConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqMode {
    Router,
    Fixed,
    Random,
}

impl FromStr for SeqMode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "router" => Ok(SeqMode::Router),
            "fixed" => Ok(SeqMode::Fixed),
            "random" => Ok(SeqMode::Random),
            _ => bail!("seq_mode must be router, fixed or random, got `{s}`"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub schedule: BetaSchedule,
    pub model: DenoiserConfig,
    pub optimizer: AdamWConfig,
    pub steps: usize,
    pub n_steps: usize,
    pub ctype: CyclizationType,
    /// `None` means the type's default range.
    pub n_residues: Option<RangeInclusive<usize>>,
    pub n_samples: usize,
    pub epsilon: f64,
    /// `None` derives it from the pocket.
    pub sigma_p: Option<f64>,
    pub harmonic: bool,
    pub seq_mode: SeqMode,
    /// `None` uses the time-dependent default.
    pub decode: Option<DecodeMode>,
    /// `synthetic` or a directory of `.complex` files.
    pub dataset: String,
    pub n_complexes: usize,
    pub data_seed: u64,
    /// Complex file whose receptor is the sampling pocket; defaults to the
    /// first dataset complex.
    pub receptor: Option<PathBuf>,
    /// Comma-separated criterion ids, or `all`.
    pub checks: String,
    pub out_dir: PathBuf,
    pub denoiser_ckpt: PathBuf,
    pub router_ckpt: PathBuf,
}

pub const KEYS: &[&str] = &[
    "seed",
    "beta_min",
    "beta_max",
    "k_neighbors",
    "n_layers",
    "hidden_dim",
    "time_embed_dim",
    "pocket_radius",
    "position_init_scale",
    "lr",
    "beta1",
    "beta2",
    "weight_decay",
    "steps",
    "n_steps",
    "ctype",
    "n_residues",
    "n_samples",
    "epsilon",
    "sigma_p",
    "harmonic",
    "seq_mode",
    "decode",
    "dataset",
    "n_complexes",
    "data_seed",
    "receptor",
    "checks",
    "out_dir",
    "denoiser_ckpt",
    "router_ckpt",
];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            schedule: BetaSchedule::default(),
            model: DenoiserConfig::default(),
            optimizer: AdamWConfig::default(),
            steps: 2000,
            n_steps: 1000,
            ctype: CyclizationType::HeadToTail,
            n_residues: None,
            n_samples: 1,
            epsilon: 1e-4,
            sigma_p: None,
            harmonic: true,
            seq_mode: SeqMode::Router,
            decode: None,
            dataset: "synthetic".into(),
            n_complexes: 8,
            data_seed: 0,
            receptor: None,
            checks: "all".into(),
            out_dir: "out".into(),
            denoiser_ckpt: "out/denoiser.ckpt".into(),
            router_ckpt: "out/router.ckpt".into(),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| anyhow!("bad value `{v}` for {key}: {e}"))
}

fn parse_range(v: &str) -> Result<RangeInclusive<usize>> {
    let r = match v.split_once("..") {
        Some((a, b)) => num("n_residues", a)?..=num("n_residues", b.trim_start_matches('='))?,
        None => {
            let n = num("n_residues", v)?;
            n..=n
        }
    };
    if r.is_empty() {
        bail!("empty n_residues range `{v}`");
    }
    Ok(r)
}

fn parse_decode(v: &str) -> Result<Option<DecodeMode>> {
    match v {
        "auto" => Ok(None),
        "argmax" => Ok(Some(DecodeMode::Argmax)),
        "categorical" => Ok(Some(DecodeMode::Categorical { temperature: 1.0 })),
        _ => match v.strip_prefix("categorical:") {
            Some(t) => Ok(Some(DecodeMode::Categorical {
                temperature: num("decode", t)?,
            })),
            None => bail!("decode must be auto, argmax, categorical or categorical:<T>"),
        },
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("bad boolean `{v}` for {key}"),
    }
}

impl RunConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = num(key, v)?,
            "beta_min" => self.schedule.beta_min = num(key, v)?,
            "beta_max" => self.schedule.beta_max = num(key, v)?,
            "k_neighbors" => self.model.k_neighbors = num(key, v)?,
            "n_layers" => self.model.n_layers = num(key, v)?,
            "hidden_dim" => self.model.hidden_dim = num(key, v)?,
            "time_embed_dim" => self.model.time_embed_dim = num(key, v)?,
            "pocket_radius" => self.model.pocket_radius = num(key, v)?,
            "position_init_scale" => self.model.position_init_scale = num(key, v)?,
            "lr" => self.optimizer.learning_rate = num(key, v)?,
            "beta1" => self.optimizer.beta1 = num(key, v)?,
            "beta2" => self.optimizer.beta2 = num(key, v)?,
            "weight_decay" => self.optimizer.weight_decay = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "n_steps" => self.n_steps = num(key, v)?,
            "ctype" => self.ctype = v.parse()?,
            "n_residues" => {
                self.n_residues = if v == "default" { None } else { Some(parse_range(v)?) }
            }
            "n_samples" => self.n_samples = num(key, v)?,
            "epsilon" => self.epsilon = num(key, v)?,
            "sigma_p" => self.sigma_p = if v == "auto" { None } else { Some(num(key, v)?) },
            "harmonic" => self.harmonic = parse_bool(key, v)?,
            "seq_mode" => self.seq_mode = v.parse()?,
            "decode" => self.decode = parse_decode(v)?,
            "dataset" => self.dataset = v.into(),
            "n_complexes" => self.n_complexes = num(key, v)?,
            "data_seed" => self.data_seed = num(key, v)?,
            "receptor" => self.receptor = (!v.is_empty()).then(|| v.into()),
            "checks" => self.checks = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "denoiser_ckpt" => self.denoiser_ckpt = v.into(),
            "router_ckpt" => self.router_ckpt = v.into(),
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Applies a `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", origin.display(), i + 1))?;
            self.set(k.trim(), v)
                .with_context(|| format!("{}:{}", origin.display(), i + 1))?;
        }
        Ok(())
    }

    /// Applies `--key value` pairs (also `--key=value`).
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(a) = it.next() {
            let key = a
                .strip_prefix("--")
                .ok_or_else(|| anyhow!("expected `--key value`, got `{a}`"))?;
            match key.split_once('=') {
                Some((k, v)) => self.set(&k.replace('-', "_"), v)?,
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| anyhow!("missing value for --{key}"))?;
                    self.set(&key.replace('-', "_"), v)?;
                }
            }
        }
        Ok(())
    }

    /// Defaults, then the file, then overrides, then `CPSDE_SEED`.
    pub fn load(file: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut c = RunConfig::default();
        if let Some(p) = file {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            c.apply_text(&text, p)?;
        }
        c.apply_overrides(overrides)?;
        if let Some(s) = env_seed {
            c.set("seed", s).context("CPSDE_SEED")?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        BetaSchedule::new(self.schedule.beta_min, self.schedule.beta_max)?;
        self.model.validate()?;
        if self.steps == 0 || self.n_samples == 0 || self.n_complexes == 0 {
            bail!("steps, n_samples and n_complexes must be positive");
        }
        if self.n_steps < 2 {
            bail!("n_steps must be at least 2");
        }
        Ok(())
    }

    pub fn lengths(&self) -> RangeInclusive<usize> {
        self.n_residues
            .clone()
            .unwrap_or_else(|| self.ctype.default_lengths())
    }

    /// Model and schedule keys, the part a checkpoint must agree on.
    pub fn model_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let _ = writeln!(s, "k_neighbors = {}", m.k_neighbors);
        let _ = writeln!(s, "n_layers = {}", m.n_layers);
        let _ = writeln!(s, "hidden_dim = {}", m.hidden_dim);
        let _ = writeln!(s, "time_embed_dim = {}", m.time_embed_dim);
        let _ = writeln!(s, "pocket_radius = {:?}", m.pocket_radius);
        let _ = writeln!(s, "position_init_scale = {:?}", m.position_init_scale);
        let _ = writeln!(s, "beta_min = {:?}", self.schedule.beta_min);
        let _ = writeln!(s, "beta_max = {:?}", self.schedule.beta_max);
        let _ = writeln!(s, "harmonic = {}", self.harmonic);
        s
    }

    /// Every key with its current value, in a form [`apply_text`] reads back.
    ///
    /// [`apply_text`]: RunConfig::apply_text
    pub fn to_text(&self) -> String {
        let o = &self.optimizer;
        let mut s = format!("seed = {}\n", self.seed);
        s += &self.model_text();
        let _ = writeln!(s, "lr = {:?}", o.learning_rate);
        let _ = writeln!(s, "beta1 = {:?}", o.beta1);
        let _ = writeln!(s, "beta2 = {:?}", o.beta2);
        let _ = writeln!(s, "weight_decay = {:?}", o.weight_decay);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "n_steps = {}", self.n_steps);
        let _ = writeln!(s, "ctype = {}", self.ctype);
        match &self.n_residues {
            Some(r) => {
                let _ = writeln!(s, "n_residues = {}..{}", r.start(), r.end());
            }
            None => s += "n_residues = default\n",
        }
        let _ = writeln!(s, "n_samples = {}", self.n_samples);
        let _ = writeln!(s, "epsilon = {:?}", self.epsilon);
        match self.sigma_p {
            Some(v) => {
                let _ = writeln!(s, "sigma_p = {v:?}");
            }
            None => s += "sigma_p = auto\n",
        }
        let seq = match self.seq_mode {
            SeqMode::Router => "router",
            SeqMode::Fixed => "fixed",
            SeqMode::Random => "random",
        };
        let _ = writeln!(s, "seq_mode = {seq}");
        let decode = match self.decode {
            None => "auto".to_string(),
            Some(DecodeMode::Argmax) => "argmax".to_string(),
            Some(DecodeMode::Categorical { temperature }) => format!("categorical:{temperature:?}"),
        };
        let _ = writeln!(s, "decode = {decode}");
        let _ = writeln!(s, "dataset = {}", self.dataset);
        let _ = writeln!(s, "n_complexes = {}", self.n_complexes);
        let _ = writeln!(s, "data_seed = {}", self.data_seed);
        if let Some(r) = &self.receptor {
            let _ = writeln!(s, "receptor = {}", r.display());
        }
        let _ = writeln!(s, "checks = {}", self.checks);
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "denoiser_ckpt = {}", self.denoiser_ckpt.display());
        let _ = writeln!(s, "router_ckpt = {}", self.router_ckpt.display());
        s
    }
}
