//! Flat `key=value` run configuration shared by every command.

use std::path::{Path, PathBuf};

use crate::channel::GenConfig;
use crate::error::{Error, Result};
use crate::evaluation::LinkConfig;
use crate::model::{BlockStyle, ModelConfig};
use crate::training::TrainConfig;

/// Every recognised key, in file order of the sections.
pub const KEYS: &[&str] = &[
    "nc",
    "nt",
    "nc_crop",
    "clusters",
    "paths_per_cluster",
    "max_delay_fraction",
    "angle_spread",
    "seed",
    "codeword_len",
    "bits",
    "block_style",
    "quant_aware",
    "encoder_resnets",
    "decoder_resnets",
    "lr",
    "batch_size",
    "steps",
    "clip_value",
    "checkpoint_interval",
    "train_data",
    "val_data",
    "snr_db_list",
    "symbols_per_subcarrier",
    "noise_seed",
];

/// Generator, model, training and link settings. `nt`, `nc_crop` and `seed`
/// are shared between the sections that use them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub generator: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub link: LinkConfig,
    pub train_data: Option<PathBuf>,
    pub val_data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::reference();
        Self {
            generator: GenConfig::new(1024, model.nt, model.nc_crop),
            model,
            train: TrainConfig::default(),
            link: LinkConfig::default(),
            train_data: None,
            val_data: None,
        }
    }
}

fn parse<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("line {line}: bad value {v:?} for {key}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: bad value {v:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key=value")))?;
            let (key, v) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {line}: unknown key {key:?}")));
            }
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {line}: duplicate key {key:?}")));
            }
            seen.push(key);
            cfg.set(line, key, v)?;
        }
        let g = &mut cfg.generator;
        g.nt = cfg.model.nt;
        g.nc_crop = cfg.model.nc_crop;
        if !seen.contains(&"max_delay_fraction") {
            g.max_delay_fraction = g.nc_crop as f64 / g.nc as f64;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let (g, m, t, l) = (&mut self.generator, &mut self.model, &mut self.train, &mut self.link);
        match key {
            "nc" => g.nc = parse(line, key, v)?,
            "nt" => m.nt = parse(line, key, v)?,
            "nc_crop" => m.nc_crop = parse(line, key, v)?,
            "clusters" => g.clusters = parse(line, key, v)?,
            "paths_per_cluster" => g.paths_per_cluster = parse(line, key, v)?,
            "max_delay_fraction" => g.max_delay_fraction = parse(line, key, v)?,
            "angle_spread" => g.angle_spread = parse(line, key, v)?,
            "seed" => {
                g.seed = parse(line, key, v)?;
                t.seed = g.seed;
            }
            "codeword_len" => m.codeword_len = parse(line, key, v)?,
            "bits" => m.bits = parse(line, key, v)?,
            "block_style" => m.block_style = parse::<BlockStyle>(line, key, v)?,
            "quant_aware" => m.quant_aware = parse_bool(line, key, v)?,
            "encoder_resnets" => m.encoder_resnets = parse(line, key, v)?,
            "decoder_resnets" => m.decoder_resnets = parse(line, key, v)?,
            "lr" => t.lr = parse(line, key, v)?,
            "batch_size" => t.batch_size = parse(line, key, v)?,
            "steps" => t.steps = parse(line, key, v)?,
            "clip_value" => t.clip_value = parse(line, key, v)?,
            "checkpoint_interval" => t.checkpoint_interval = parse(line, key, v)?,
            "train_data" => self.train_data = Some(PathBuf::from(v)),
            "val_data" => self.val_data = Some(PathBuf::from(v)),
            "snr_db_list" => {
                l.snr_db_list = v
                    .split(',')
                    .map(|s| parse(line, key, s.trim()))
                    .collect::<Result<Vec<f64>>>()?;
            }
            "symbols_per_subcarrier" => l.symbols_per_subcarrier = parse(line, key, v)?,
            "noise_seed" => l.noise_seed = parse(line, key, v)?,
            _ => unreachable!("key list and setter disagree on {key}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.link.validate()
    }

    /// Echo of the effective settings as config lines.
    pub fn echo(&self) -> String {
        let (g, m, t, l) = (&self.generator, &self.model, &self.train, &self.link);
        let snr: Vec<String> = l.snr_db_list.iter().map(f64::to_string).collect();
        format!(
            "nc={}\nnt={}\nnc_crop={}\nclusters={}\npaths_per_cluster={}\nmax_delay_fraction={}\nangle_spread={}\nseed={}\n\
             codeword_len={}\nbits={}\nblock_style={}\nquant_aware={}\nencoder_resnets={}\ndecoder_resnets={}\n\
             lr={}\nbatch_size={}\nsteps={}\nclip_value={}\ncheckpoint_interval={}\n\
             snr_db_list={}\nsymbols_per_subcarrier={}\nnoise_seed={}\n",
            g.nc,
            m.nt,
            m.nc_crop,
            g.clusters,
            g.paths_per_cluster,
            g.max_delay_fraction,
            g.angle_spread,
            g.seed,
            m.codeword_len,
            m.bits,
            m.block_style,
            m.quant_aware,
            m.encoder_resnets,
            m.decoder_resnets,
            t.lr,
            t.batch_size,
            t.steps,
            t.clip_value,
            t.checkpoint_interval,
            snr.join(","),
            l.symbols_per_subcarrier,
            l.noise_seed,
        )
    }
}
