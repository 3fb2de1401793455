//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test --test acceptance -- 2 3`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use csiquant::channel::{energy_fraction, generate_dataset, CMatrix, GenConfig, Preprocessor};
use csiquant::cli::{self, checkpoint, dataset, prepare, recover};
use csiquant::evaluation::{ber_simulation, nmse, rayleigh_ber, to_db, LinkConfig};
use csiquant::gradcheck::finite_diff_check_many;
use csiquant::model::{BlockStyle, Forward, Model, ModelConfig, QuantStage};
use csiquant::nn::{self, Activation, BatchNormState, Mode};
use csiquant::quantizer::{self, BitFlow, QuantSpec};
use csiquant::training::{train, TrainConfig};
use csiquant::{Graph, Result, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> std::result::Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: Check,
    // a soft criterion prints its verdict but does not fail the run
    soft: bool,
}

const CRITERIA: &[Criterion] = &[
    Criterion { id: 1, name: "gradient suite", limit: Duration::from_secs(60), run: c1_gradients, soft: false },
    Criterion { id: 2, name: "quantizer suite", limit: Duration::from_secs(10), run: c2_quantizer, soft: false },
    Criterion { id: 3, name: "pipeline round trip", limit: Duration::from_secs(30), run: c3_pipeline, soft: false },
    Criterion { id: 4, name: "overfit check", limit: Duration::from_secs(300), run: c4_overfit, soft: false },
    Criterion { id: 5, name: "bit-level training beats post-hoc quantization", limit: LIMIT_5_6, run: c5_quant_aware, soft: false },
    Criterion { id: 6, name: "JC ablation", limit: LIMIT_5_6, run: c6_jc_ablation, soft: true },
    Criterion { id: 7, name: "BER Rayleigh oracle", limit: Duration::from_secs(300), run: c7_ber, soft: false },
    Criterion { id: 8, name: "serialization", limit: Duration::from_secs(120), run: c8_serialization, soft: false },
];

// criteria 5 and 6 share one set of training runs, timed under criterion 5
const LIMIT_5_6: Duration = Duration::from_secs(7200);

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (mut failed, mut soft_failed) = (0, 0);
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > c.limit => Err(format!("{d}; runtime {:.1}s over the {}s limit", took.as_secs_f64(), c.limit.as_secs())),
            o => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) if c.soft => {
                soft_failed += 1;
                ("FAIL (soft)", d)
            }
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} [{}]: {tag} ({detail}) [{:.1}s]", c.id, c.name, took.as_secs_f64());
    }
    if soft_failed > 0 {
        println!("{soft_failed} soft criterion(s) failed; reported, not gating");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `Σ out ⊙ r` with fixed random `r`, so every output entry matters.
fn probe(g: &mut Graph, out: Var, r: &Tensor) -> Result<Var> {
    let rv = g.constant(r.clone());
    let p = g.mul(out, rv)?;
    g.sum_all(p)
}

// ---------------------------------------------------------------- criterion 1

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 20;

/// Finite differences of `loss` with respect to the input and to a random
/// sample of model parameters, against the analytic gradient.
fn sampled_model_check<F>(model: &Model, x: &Tensor, mode: Mode, samples: usize, rng: &mut ChaCha8Rng, f: F) -> Result<f64>
where
    F: Fn(&mut Forward, Var) -> Result<Var>,
{
    let run = |m: &Model, x: &Tensor, trainable: bool| -> Result<(Graph, Var, Var, std::collections::BTreeMap<String, Var>)> {
        let mut g = Graph::new();
        let mut fwd = Forward::new(&mut g, m, mode, trainable);
        let xv = if trainable { fwd.graph.param(x.clone()) } else { fwd.graph.constant(x.clone()) };
        let out = f(&mut fwd, xv)?;
        let (bound, _) = fwd.finish();
        Ok((g, xv, out, bound))
    };
    let (g0, _, out0, _) = run(model, x, false)?;
    let r = uniform(g0.shape(out0), -1.0, 1.0, rng);
    let value = |m: &Model, x: &Tensor| -> Result<f64> {
        let (mut g, _, out, _) = run(m, x, false)?;
        let l = probe(&mut g, out, &r)?;
        g.value(l).item()
    };

    let (mut g, xv, out, bound) = run(model, x, true)?;
    let loss = probe(&mut g, out, &r)?;
    g.backward(loss)?;

    let mut worst = 0.0f64;
    let mut record = |analytic: f64, plus: f64, minus: f64| {
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
    };

    let gx = g.grad(xv).unwrap().to_vec();
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let plus = value(model, &xp)?;
        xp.data_mut()[i] = orig - FD_STEP;
        let minus = value(model, &xp)?;
        xp.data_mut()[i] = orig;
        record(gx[i], plus, minus);
    }

    let mut entries: Vec<(String, usize)> = bound
        .keys()
        .flat_map(|n| (0..model.params.get(n).unwrap().len()).map(move |i| (n.clone(), i)))
        .collect();
    entries.shuffle(rng);
    let mut m = model.clone();
    for (name, i) in entries.into_iter().take(samples) {
        let analytic = g.grad(bound[&name]).unwrap()[i];
        let orig = m.params.get(&name).unwrap().data()[i];
        m.params.get_mut(&name).unwrap().data_mut()[i] = orig + FD_STEP;
        let plus = value(&m, x)?;
        m.params.get_mut(&name).unwrap().data_mut()[i] = orig - FD_STEP;
        let minus = value(&m, x)?;
        m.params.get_mut(&name).unwrap().data_mut()[i] = orig;
        record(analytic, plus, minus);
    }
    Ok(worst)
}

fn randomize_bn(model: &mut Model, rng: &mut ChaCha8Rng) {
    for s in model.bn.values_mut() {
        s.running_mean.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        s.running_var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
    }
    let names: Vec<String> = model.params.names().filter(|n| n.ends_with(".gamma") || n.ends_with(".beta")).cloned().collect();
    for n in names {
        model.params.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    }
}

fn c1_gradients() -> std::result::Result<String, String> {
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut note = |name: &'static str, e: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name, e)),
    };

    for seed in 0..GRAD_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        for (name, kh, kw) in [("conv3x3", 3, 3), ("conv1x3", 1, 3), ("conv3x1", 3, 1), ("conv1x1", 1, 1)] {
            let x = uniform(&[2, 5, 4, 3], -1.0, 1.0, &mut rng);
            let w = uniform(&[kh, kw, 3, 4], -0.5, 0.5, &mut rng);
            let b = uniform(&[4], -0.5, 0.5, &mut rng);
            let r = uniform(&[2, 5, 4, 4], -1.0, 1.0, &mut rng);
            let e = ok(finite_diff_check_many(
                |g, v| {
                    let y = nn::conv2d(g, v[0], v[1], v[2])?;
                    probe(g, y, &r)
                },
                &[x, w, b],
                FD_STEP,
            ))?;
            note(name, e);
        }

        let x = uniform(&[3, 6], -1.0, 1.0, &mut rng);
        let w = uniform(&[6, 4], -0.5, 0.5, &mut rng);
        let b = uniform(&[4], -0.5, 0.5, &mut rng);
        let r = uniform(&[3, 4], -1.0, 1.0, &mut rng);
        let e = ok(finite_diff_check_many(
            |g, v| {
                let y = nn::dense(g, v[0], v[1], v[2])?;
                probe(g, y, &r)
            },
            &[x, w, b],
            FD_STEP,
        ))?;
        note("dense", e);

        for (name, mode) in [("batchnorm/train", Mode::Train), ("batchnorm/infer", Mode::Infer)] {
            let x = uniform(&[3, 2, 2, 3], -2.0, 2.0, &mut rng);
            let gamma = uniform(&[3], 0.5, 1.5, &mut rng);
            let beta = uniform(&[3], -0.5, 0.5, &mut rng);
            let r = uniform(&[3, 2, 2, 3], -1.0, 1.0, &mut rng);
            let mut state = BatchNormState::new(3);
            state.running_mean = vec![0.1, -0.2, 0.3];
            state.running_var = vec![0.5, 1.5, 2.0];
            let e = ok(finite_diff_check_many(
                |g, v| {
                    let (y, _) = nn::batchnorm(g, v[0], v[1], v[2], &state, mode)?;
                    probe(g, y, &r)
                },
                &[x, gamma, beta],
                FD_STEP,
            ))?;
            note(name, e);
        }

        for (name, kind) in [("elu", Activation::Elu), ("tanh", Activation::Tanh), ("sigmoid", Activation::Sigmoid)] {
            let x = uniform(&[4, 5], -3.0, 3.0, &mut rng);
            let r = uniform(&[4, 5], -1.0, 1.0, &mut rng);
            let e = ok(finite_diff_check_many(
                |g, v| {
                    let y = nn::activation(g, kind, v[0])?;
                    probe(g, y, &r)
                },
                &[x],
                FD_STEP,
            ))?;
            note(name, e);
        }

        let cfg = ModelConfig { codeword_len: 8, ..ModelConfig::new(4, 4, 8, 4) };
        let mut model = ok(Model::new(cfg, csiquant::channel::PreprocState { a: -1.0, b: 1.0, shift: 0 }, seed))?;
        randomize_bn(&mut model, &mut rng);
        let x = uniform(&[2, 4, 4, 2], 0.05, 0.95, &mut rng);

        let e = ok(sampled_model_check(&model, &x, Mode::Train, usize::MAX, &mut rng, |f, x| f.jc_block("enc.res0.jc1", x)))?;
        note("jc_block", e);
        for mode in [Mode::Train, Mode::Infer] {
            let e = ok(sampled_model_check(&model, &x, mode, 150, &mut rng, |f, x| f.residual("enc.res0", x)))?;
            note("jc_resnet", e);
            let e = ok(sampled_model_check(&model, &x, mode, 150, &mut rng, |f, x| f.autoencoder(x, QuantStage::Bypass)))?;
            note("full model", e);
        }
    }
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    ensure(max < FD_TOL, || format!("max relative error {max:.2e} ≥ {FD_TOL:e}: {detail}"))?;
    Ok(format!("{GRAD_SEEDS} seeds, max relative error {max:.1e}: {detail}"))
}

// ---------------------------------------------------------------- criterion 2

fn c2_quantizer() -> std::result::Result<String, String> {
    const N: usize = 100_000;
    let spec4 = QuantSpec::new(4, 2).unwrap();
    let spot = ok(quantizer::quantize(&[0.3, -0.999], spec4))?;
    ensure(spot.levels == [2, -7] && spot.values == [0.25, -0.875], || format!("spot values {spot:?}"))?;
    let tie = ok(quantizer::quantize(&[0.3125], QuantSpec::new(4, 1).unwrap()))?;
    ensure(tie.values == [0.375], || format!("tie 0.3125 → {:?}", tie.values))?;

    for bits in 1..=8u8 {
        let mut rng = ChaCha8Rng::seed_from_u64(bits as u64);
        let mut x: Vec<f64> = (0..N).map(|_| rng.gen_range(-1.0..1.0)).collect();
        x[0] = 0.0;
        x[1] = 1.0 - f64::EPSILON;
        x[2] = -(1.0 - f64::EPSILON);
        let spec = QuantSpec::new(bits, N).unwrap();
        let scale = spec.scale();
        let max = spec.max_level();
        let q = ok(quantizer::quantize(&x, spec))?;

        for (i, (&l, &y)) in q.levels.iter().zip(&q.values).enumerate() {
            ensure(l.abs() <= max && y * scale == l as f64, || format!("B={bits}: x={} off grid (q={l}, y={y})", x[i]))?;
            let tail = (x[i].abs() - (1.0 - 1.0 / (2.0 * scale))).max(0.0);
            let bound = 1.0 / (2.0 * scale) + tail + 1e-15;
            ensure((y - x[i]).abs() <= bound, || format!("B={bits}: |y−x| = {} at x={}", (y - x[i]).abs(), x[i]))?;
        }

        let again = ok(quantizer::quantize(&q.values, spec))?;
        ensure(again.values == q.values, || format!("B={bits}: not idempotent"))?;

        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let qn = ok(quantizer::quantize(&neg, spec))?;
        ensure(qn.values.iter().zip(&q.values).all(|(a, b)| *a == -b), || format!("B={bits}: not symmetric"))?;

        let mut order: Vec<usize> = (0..N).collect();
        order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        ensure(order.windows(2).all(|w| q.levels[w[0]] <= q.levels[w[1]]), || format!("B={bits}: not monotone"))?;

        let flow = ok(quantizer::pack(&q.levels, spec))?;
        ensure(flow.payload.len() == (N * bits as usize).div_ceil(8), || format!("B={bits}: payload length"))?;
        ensure(ok(quantizer::unpack(&flow))? == q.levels, || format!("B={bits}: unpack∘pack ≠ id"))?;
        ensure(ok(quantizer::dequantize(&flow))? == q.values, || format!("B={bits}: dequantize mismatch"))?;

        // pack∘unpack = id on every payload that decodes
        let short = QuantSpec::new(bits, 7).unwrap();
        let mut decoded = 0;
        for _ in 0..2000 {
            let mut payload: Vec<u8> = (0..short.payload_bytes()).map(|_| rng.gen()).collect();
            let pad = short.payload_bytes() * 8 - short.total_bits();
            if let Some(last) = payload.last_mut() {
                *last &= !((1u16 << pad) - 1) as u8;
            }
            let flow = BitFlow { payload: payload.clone(), spec: short };
            if let Ok(levels) = quantizer::unpack(&flow) {
                decoded += 1;
                ensure(ok(quantizer::pack(&levels, short))?.payload == payload, || format!("B={bits}: pack∘unpack ≠ id"))?;
            }
        }
        ensure(decoded > 0, || format!("B={bits}: no random payload decoded"))?;

        // forbidden pattern 100…0 in the second entry, and out-of-range levels
        let two = QuantSpec::new(bits, 2).unwrap();
        let total = 2 * bits as usize;
        let pattern: u32 = 1 << (bits - 1);
        let word = pattern << (two.payload_bytes() * 8 - total);
        let bytes = word.to_be_bytes();
        let bad = BitFlow { payload: bytes[4 - two.payload_bytes()..].to_vec(), spec: two };
        ensure(quantizer::unpack(&bad).is_err(), || format!("B={bits}: forbidden pattern accepted"))?;
        ensure(quantizer::pack(&[0, max + 1], two).is_err(), || format!("B={bits}: level {} packed", max + 1))?;
        ensure(quantizer::pack(&[-max - 1, 0], two).is_err(), || format!("B={bits}: level {} packed", -max - 1))?;
        ensure(quantizer::quantize(&[1.0], QuantSpec::new(bits, 1).unwrap()).is_err(), || "x=1 accepted".into())?;
    }
    Ok(format!("B=1..8, {N} inputs each; spot values 0.3→0.25, −0.999→−0.875 exact"))
}

// ---------------------------------------------------------------- criterion 3

fn c3_pipeline() -> std::result::Result<String, String> {
    let cfg = GenConfig::new(256, 16, 16);
    let samples = ok(generate_dataset(&cfg, 100))?;
    let pre = ok(Preprocessor::fit(&samples, 16, 0))?;
    let (mut worst_err, mut worst_energy) = (0.0f64, 1.0f64);
    for h in &samples {
        let (_, cp) = ok(pre.forward(h))?;
        let (_, back) = ok(pre.invert(&cp))?;
        worst_err = worst_err.max(ok(back.sub(h))?.frobenius() / h.frobenius());
        let ha = ok(pre.angular_delay().forward(h))?;
        worst_energy = worst_energy.min(energy_fraction(&ha, 16));
    }
    ensure(worst_err < 1e-10, || format!("round-trip error {worst_err:.2e}"))?;
    ensure(worst_energy >= 0.99, || format!("energy containment {worst_energy:.4}"))?;
    Ok(format!("100 samples 256×16 crop 16: max relative error {worst_err:.1e}, min energy in crop {worst_energy:.6}"))
}

// ---------------------------------------------------------------- criterion 4

fn c4_overfit() -> std::result::Result<String, String> {
    let gen = GenConfig { seed: 4, ..GenConfig::new(64, 16, 16) };
    let samples = ok(generate_dataset(&gen, 32))?;
    let pre = ok(Preprocessor::fit(&samples, 16, 0))?;
    let (_, x) = ok(prepare(&pre, &samples))?;
    let cfg = ModelConfig::new(16, 16, 24, 4);
    let tc = TrainConfig { lr: 0.001, clip_value: 0.05, batch_size: 8, steps: 2000, seed: 4, ..TrainConfig::default() };

    let mut model = ok(Model::new(cfg.clone(), pre.state, 4))?;
    let (trace, _) = ok(train(&mut model, &x, &tc))?;
    let initial = trace[0].loss;
    // one epoch is 32/8 = 4 steps
    let last_epoch = trace[trace.len() - 4..].iter().map(|r| r.loss).sum::<f64>() / 4.0;
    ensure(last_epoch <= initial / 100.0, || {
        format!("final training MSE {last_epoch:.4e} > initial {initial:.4e} / 100")
    })?;

    let mut again = ok(Model::new(cfg, pre.state, 4))?;
    let short = TrainConfig { steps: 100, ..tc };
    let (trace2, _) = ok(train(&mut again, &x, &short))?;
    ensure(trace2[..] == trace[..100], || "loss trace differs under the same seed".into())?;
    Ok(format!(
        "initial {initial:.4e} → last-epoch {last_epoch:.4e} (ratio {:.1}); first 100 steps reproduced bit-exactly",
        initial / last_epoch
    ))
}

// ------------------------------------------------------------ criteria 5 and 6

const C5_TRAIN: usize = 2000;
const C5_TEST: usize = 500;
const C5_SEEDS: u64 = 3;
// budget sized so the nine runs finish well inside the two-hour limit on one core
const C5_STEPS: usize = 1000;
const C5_BATCH: usize = 16;
// the default rate jitters at the scale of the normalized signal (deviations
// around 1e-2) and ends above the constant predictor at this step count
const C5_LR: f64 = 3e-4;
const C5_NC: usize = 128;
// indoor-like: two clusters whose delays fall in the first two bins
const C5_DELAY_BINS: usize = 2;
const C5_CLUSTERS: usize = 2;

#[derive(Debug, Clone, Copy)]
struct SeedResult {
    jc_aware: f64,
    jc_unaware: f64,
    plain_aware: f64,
}

fn desk_scale_runs() -> &'static std::result::Result<Vec<SeedResult>, String> {
    static RUNS: std::sync::OnceLock<std::result::Result<Vec<SeedResult>, String>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| (0..C5_SEEDS).map(desk_scale_seed).collect())
}

fn desk_scale_seed(seed: u64) -> std::result::Result<SeedResult, String> {
    let gen = GenConfig {
        seed: 1000 + seed,
        max_delay_fraction: C5_DELAY_BINS as f64 / C5_NC as f64,
        clusters: C5_CLUSTERS,
        ..GenConfig::new(C5_NC, 32, 32)
    };
    let all = ok(generate_dataset(&gen, C5_TRAIN + C5_TEST))?;
    let (tr, te) = all.split_at(C5_TRAIN);
    let pre = ok(Preprocessor::fit(tr, 32, 0))?;
    let (_, xtr) = ok(prepare(&pre, tr))?;
    let (crops, xte) = ok(prepare(&pre, te))?;
    let run = |style: BlockStyle, aware: bool| -> std::result::Result<f64, String> {
        let cfg = ModelConfig { block_style: style, quant_aware: aware, ..ModelConfig::reference() };
        assert_eq!(cfg.feedback_bits(), 192);
        let mut m = ok(Model::new(cfg, pre.state, seed))?;
        let tc = TrainConfig { batch_size: C5_BATCH, steps: C5_STEPS, seed, lr: C5_LR, ..TrainConfig::default() };
        ok(train(&mut m, &xtr, &tc))?;
        let (rec, _) = ok(recover(&m, &pre, &xte))?;
        ok(nmse(&crops, &rec))
    };
    Ok(SeedResult {
        jc_aware: run(BlockStyle::Jc, true)?,
        jc_unaware: run(BlockStyle::Jc, false)?,
        plain_aware: run(BlockStyle::Plain, true)?,
    })
}

fn db_list(v: impl Iterator<Item = f64>) -> String {
    v.map(|x| format!("{:.2}", to_db(x))).collect::<Vec<_>>().join("/")
}

fn c5_quant_aware() -> std::result::Result<String, String> {
    let runs = desk_scale_runs().clone()?;
    let wins = runs.iter().filter(|r| r.jc_aware < r.jc_unaware).count();
    let detail = format!(
        "NMSE dB per seed: aware {} vs unaware {}; {wins}/{C5_SEEDS} wins",
        db_list(runs.iter().map(|r| r.jc_aware)),
        db_list(runs.iter().map(|r| r.jc_unaware))
    );
    ensure(wins == C5_SEEDS as usize, || detail.clone())?;
    Ok(detail)
}

fn c6_jc_ablation() -> std::result::Result<String, String> {
    let runs = desk_scale_runs().clone()?;
    let wins = runs.iter().filter(|r| r.jc_aware <= r.plain_aware).count();
    let detail = format!(
        "NMSE dB per seed: jc {} vs plain {}; {wins}/{C5_SEEDS} seeds jc ≤ plain",
        db_list(runs.iter().map(|r| r.jc_aware)),
        db_list(runs.iter().map(|r| r.plain_aware))
    );
    ensure(wins >= 2, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 7

fn c7_ber() -> std::result::Result<String, String> {
    let gen = GenConfig { seed: 77, ..GenConfig::new(64, 1, 16) };
    let truth = ok(generate_dataset(&gen, 500))?;
    let gamma_b_db = [5.0, 10.0, 15.0];
    // the link SNR is per QPSK symbol, two bits per symbol
    let link = LinkConfig {
        snr_db_list: gamma_b_db.iter().map(|g| g + 10.0 * 2f64.log10()).collect(),
        symbols_per_subcarrier: 16,
        noise_seed: 5,
    };
    let perfect = ok(ber_simulation(&truth, &truth, &link))?;
    let mut parts = Vec::new();
    for (p, g) in perfect.iter().zip(gamma_b_db) {
        let expect = rayleigh_ber(10f64.powf(g / 10.0));
        let z = (p.ber - expect) / p.stderr;
        ensure(p.num_bits >= 1_000_000, || format!("only {} bits at {g} dB", p.num_bits))?;
        ensure(z.abs() < 3.0, || format!("γ̄={g} dB: BER {:.5} vs {expect:.5} ({z:.2} stderr)", p.ber))?;
        parts.push(format!("{g} dB {:.5}/{expect:.5} ({z:+.2}σ)", p.ber));
    }

    // identity codec: preprocessing and its inverse with no network between
    let pre = ok(Preprocessor::fit(&truth, 16, 0))?;
    let identity: Vec<CMatrix> = truth
        .iter()
        .map(|h| Ok(pre.invert(&pre.forward(h)?.1)?.1))
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    let through = ok(ber_simulation(&truth, &identity, &link))?;
    let counts = |v: &[csiquant::evaluation::BerPoint]| v.iter().map(|p| (p.errors, p.num_bits)).collect::<Vec<_>>();
    ensure(counts(&through) == counts(&perfect), || "identity-codec BER differs from perfect CSI".into())?;
    Ok(format!("{}; identity codec matches perfect CSI bit-exactly", parts.join(", ")))
}

// ---------------------------------------------------------------- criterion 8

fn c8_serialization() -> std::result::Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let gen = GenConfig { seed: 8, ..GenConfig::new(64, 16, 16) };
    let samples = ok(generate_dataset(&gen, 100))?;
    let data = dir.path().join("set.csid");
    ok(dataset::write(&data, &samples, 64, 16))?;
    let bytes = std::fs::read(&data).map_err(|e| e.to_string())?;
    let (_, back) = ok(dataset::read(&data))?;
    let rewritten = dir.path().join("again.csid");
    ok(dataset::write(&rewritten, &back, 64, 16))?;
    ensure(std::fs::read(&rewritten).map_err(|e| e.to_string())? == bytes, || "dataset rewrite differs".into())?;

    let config = dir.path().join("run.cfg");
    std::fs::write(&config, "nc=64\nnt=16\nnc_crop=16\ncodeword_len=24\nbits=4\nbatch_size=8\nsteps=5\nseed=3\n")
        .map_err(|e| e.to_string())?;
    let ckpt = dir.path().join("model.ckpt");
    let args = cli::TrainArgs { config: Some(config), data: Some(data.clone()), out: ckpt.clone(), ..Default::default() };
    let trained = ok(cli::cmd_train(&args, &mut std::io::sink()))?;

    let eval = |m: &Model| -> Result<f64> {
        let pre = Preprocessor::new(64, 16, 16, m.preproc)?;
        let (crops, x) = prepare(&pre, &back)?;
        nmse(&crops, &recover(m, &pre, &x)?.0)
    };
    let before = ok(eval(&trained))?;
    let (loaded, adam) = ok(checkpoint::load(&ckpt))?;
    let after = ok(eval(&loaded))?;
    ensure(before.to_bits() == after.to_bits(), || format!("NMSE {before:e} before save, {after:e} after load"))?;
    ensure(adam.is_some_and(|a| a.t == 5), || "Adam state not restored".into())?;
    let reencoded = ok(checkpoint::encode(&loaded, None))?;
    let values = |m: &Model| m.params.iter().map(|(n, t)| (n.clone(), t.data().to_vec())).collect::<Vec<_>>();
    let reloaded = ok(checkpoint::decode(&reencoded))?.0;
    ensure(values(&reloaded) == values(&trained) && reloaded.bn == trained.bn, || "parameters differ after reload".into())?;

    let report = ok(cli::cmd_eval(&cli::EvalArgs { ckpt, data, dump_codewords: None }, &mut std::io::sink()))?;
    ensure(report.nmse.to_bits() == before.to_bits(), || "eval command disagrees".into())?;
    Ok(format!("dataset rewrite byte-identical ({} bytes); NMSE {before:.6e} identical after reload", bytes.len()))
}
