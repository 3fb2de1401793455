//! Command implementations behind the `csiquant` binary, plus the persistent
//! file formats. Each command writes its report to the given sink.

pub mod checkpoint;
pub mod config;
pub mod dataset;

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::channel::{self, generate_dataset, CMatrix, Preprocessor};
use crate::error::{Error, Result};
use crate::evaluation::{ber_simulation, nmse, LinkConfig, MetricsReport};
use crate::model::Model;
use crate::tensor::Tensor;
use crate::training::{self, Trainer};

pub use config::RunConfig;

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Preprocesses every sample: cropped complex matrices and the stacked
/// `N×Ñ_c×N_t×2` network input.
pub fn prepare(pre: &Preprocessor, samples: &[CMatrix]) -> Result<(Vec<CMatrix>, Tensor)> {
    let mut crops = Vec::with_capacity(samples.len());
    let mut data = Vec::with_capacity(samples.len() * pre.nc_crop * pre.nt * 2);
    for h in samples {
        let (cc, cp) = pre.forward(h)?;
        crops.push(cc);
        data.extend_from_slice(cp.data());
    }
    let x = Tensor::new(&[samples.len(), pre.nc_crop, pre.nt, 2], data)?;
    Ok((crops, x))
}

/// Runs the bit codec end to end and inverts the preprocessing of each
/// reconstruction, returning `(Ĥ_cc, Ĥ)` per sample.
pub fn recover(model: &Model, pre: &Preprocessor, x: &Tensor) -> Result<(Vec<CMatrix>, Vec<CMatrix>)> {
    let encoded = model.encode(x)?;
    let flows: Vec<_> = encoded.into_iter().map(|e| e.flow).collect();
    let y = model.decode(&flows)?;
    let mut crops = Vec::with_capacity(flows.len());
    let mut full = Vec::with_capacity(flows.len());
    for i in 0..flows.len() {
        let sample = y.slice_outer(i, 1)?.reshape(&[pre.nc_crop, pre.nt, 2])?;
        let (cc, h) = pre.invert(&sample)?;
        crops.push(cc);
        full.push(h);
    }
    Ok((crops, full))
}

fn load_matching(ckpt: &Path, data: &Path) -> Result<(Model, Preprocessor, Vec<CMatrix>)> {
    let (model, _) = checkpoint::load(ckpt)?;
    let (header, samples) = dataset::read(data)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("{} holds no samples", data.display())));
    }
    if header.nt != model.config.nt || header.nc < model.config.nc_crop {
        return Err(Error::Config(format!(
            "dataset {}×{} does not fit a model for {}×{} crops",
            header.nc, header.nt, model.config.nc_crop, model.config.nt
        )));
    }
    let pre = Preprocessor::new(header.nc, header.nt, model.config.nc_crop, model.preproc)?;
    Ok((model, pre, samples))
}

#[derive(Debug, Clone, Default)]
pub struct GenerateArgs {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub count: usize,
    pub seed: Option<u64>,
}

pub fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = run_config(args.config.as_deref())?.generator;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let samples = generate_dataset(&cfg, args.count)?;
    dataset::write(&args.out, &samples, cfg.nc, cfg.nt)?;
    writeln!(out, "wrote {} samples of {}x{} to {}", samples.len(), cfg.nc, cfg.nt, args.out.display())?;
    if !samples.is_empty() {
        let fractions = samples
            .iter()
            .map(|h| Ok(channel::energy_fraction(&channel::to_angular_delay(h)?, cfg.nc_crop)))
            .collect::<Result<Vec<f64>>>()?;
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        let min = fractions.iter().cloned().fold(f64::INFINITY, f64::min);
        writeln!(out, "energy_in_crop mean={mean:.6} min={min:.6}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub out: PathBuf,
    pub steps: Option<usize>,
    pub resume: Option<PathBuf>,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<Model> {
    let mut cfg = run_config(args.config.as_deref())?;
    if let Some(s) = args.steps {
        cfg.train.steps = s;
    }
    let data_path = args
        .data
        .clone()
        .or(cfg.train_data.clone())
        .ok_or_else(|| Error::Config("no training data given".into()))?;
    let (header, samples) = dataset::read(&data_path)?;
    if samples.is_empty() {
        return Err(Error::Config(format!("{} holds no samples", data_path.display())));
    }
    if header.nt != cfg.model.nt || header.nc < cfg.model.nc_crop {
        return Err(Error::Config(format!(
            "dataset {}×{} does not match nt={} nc_crop={}",
            header.nc, header.nt, cfg.model.nt, cfg.model.nc_crop
        )));
    }

    let (mut model, adam) = match &args.resume {
        Some(p) => {
            let (m, a) = checkpoint::load(p)?;
            if m.config != cfg.model {
                return Err(Error::Config("checkpoint model settings differ from the config".into()));
            }
            (m, a)
        }
        None => {
            let pre = Preprocessor::fit(&samples, cfg.model.nc_crop, 0)?;
            (Model::new(cfg.model.clone(), pre.state, cfg.train.seed)?, None)
        }
    };
    let pre = Preprocessor::new(header.nc, header.nt, model.config.nc_crop, model.preproc)?;
    let (_, x) = prepare(&pre, &samples)?;
    let val = match args.val.clone().or(cfg.val_data.clone()) {
        Some(p) => {
            let (vh, vs) = dataset::read(&p)?;
            if (vh.nc, vh.nt) != (header.nc, header.nt) {
                return Err(Error::Config("validation extents differ from training data".into()));
            }
            if vs.is_empty() {
                None
            } else {
                Some(prepare(&pre, &vs)?.1)
            }
        }
        None => None,
    };

    let t = &cfg.train;
    writeln!(
        out,
        "# lr={} clip_value={} bits={} codeword_len={} batch_size={} steps={} block_style={} quant_aware={}",
        t.lr, t.clip_value, model.config.bits, model.config.codeword_len, t.batch_size, t.steps,
        model.config.block_style, model.config.quant_aware
    )?;
    writeln!(out, "# parameters={} feedback_bits={}", model.parameter_count(), model.config.feedback_bits())?;

    let report_val = |model: &Model, step: usize, out: &mut dyn Write| -> Result<()> {
        if let Some(v) = &val {
            writeln!(out, "# val step={step} mse={:.6e}", training::evaluate_mse(model, v)?)?;
        }
        Ok(())
    };

    let mut adam_out = adam.clone();
    if t.steps > 0 {
        let mut trainer = Trainer::new(t.clone(), &model, &x)?;
        if let Some(a) = adam {
            trainer.step = a.t as usize;
            trainer = trainer.with_adam(a);
        }
        writeln!(out, "step,loss")?;
        for _ in 0..t.steps {
            let loss = trainer.step(&mut model)?;
            writeln!(out, "{},{:.9e}", trainer.step, loss)?;
            if t.checkpoint_interval > 0 && trainer.step % t.checkpoint_interval == 0 {
                trainer.recalibrate(&mut model)?;
                checkpoint::save(&args.out, &model, Some(&trainer.adam))?;
                report_val(&model, trainer.step, out)?;
            }
        }
        trainer.recalibrate(&mut model)?;
        adam_out = Some(trainer.adam);
    }
    checkpoint::save(&args.out, &model, adam_out.as_ref())?;
    report_val(&model, adam_out.as_ref().map_or(0, |a| a.t as usize), out)?;
    Ok(model)
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub dump_codewords: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<MetricsReport> {
    let (model, pre, samples) = load_matching(&args.ckpt, &args.data)?;
    let (crops, x) = prepare(&pre, &samples)?;
    if let Some(p) = &args.dump_codewords {
        let payload: Vec<u8> = model.encode(&x)?.into_iter().flat_map(|e| e.flow.payload).collect();
        std::fs::write(p, payload)?;
    }
    let (rec, _) = recover(&model, &pre, &x)?;
    let report = MetricsReport {
        nmse: nmse(&crops, &rec)?,
        bits_per_sample: model.config.feedback_bits(),
        samples: samples.len(),
        ber: Vec::new(),
        ber_reference: Vec::new(),
    };
    write!(out, "{report}")?;
    Ok(report)
}

#[derive(Debug, Clone, Default)]
pub struct BerArgs {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub snr: Option<Vec<f64>>,
    pub symbols: Option<usize>,
    pub noise_seed: Option<u64>,
}

impl BerArgs {
    pub fn link(&self) -> Result<LinkConfig> {
        let mut link = run_config(self.config.as_deref())?.link;
        if let Some(s) = &self.snr {
            link.snr_db_list = s.clone();
        }
        if let Some(n) = self.symbols {
            link.symbols_per_subcarrier = n;
        }
        if let Some(s) = self.noise_seed {
            link.noise_seed = s;
        }
        link.validate()?;
        Ok(link)
    }
}

pub fn cmd_ber(args: &BerArgs, out: &mut dyn Write) -> Result<MetricsReport> {
    let link = args.link()?;
    let (model, pre, samples) = load_matching(&args.ckpt, &args.data)?;
    let (crops, x) = prepare(&pre, &samples)?;
    let (rec_crops, rec_full) = recover(&model, &pre, &x)?;
    let report = MetricsReport {
        nmse: nmse(&crops, &rec_crops)?,
        bits_per_sample: model.config.feedback_bits(),
        samples: samples.len(),
        ber: ber_simulation(&samples, &rec_full, &link)?,
        ber_reference: ber_simulation(&samples, &samples, &link)?,
    };
    write!(out, "{report}")?;
    Ok(report)
}

/// Parses a comma-separated SNR list such as `0,5,10`.
pub fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::Usage(format!("bad SNR value {v:?}"))))
        .collect()
}
