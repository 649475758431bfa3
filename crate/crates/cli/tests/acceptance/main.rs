//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p pimc-cli --test acceptance`; pass
//! criterion numbers after `--` to run a subset.

mod fd;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pimc_core::dataset::{extract_eval_region, extract_region, plot_labels, ExtractConfig, PairDataset};
use pimc_core::encoder::{init_encoder, EncoderConfig, EncoderParams};
use pimc_core::eval::{classify_pixels, forecast_index, AttachMode, ForecastSet, LabeledInputs, MetricsReport, ProbeConfig};
use pimc_core::ingest::{synth_cube, SynthConfig};
use pimc_core::pipeline::{evi, hilbert_order, ndvi, savi, SamplingMode};
use pimc_core::representation::{recurrence_plot, RpBatch};
use pimc_core::rng::derive_seed;
use pimc_core::trainer::{pimc_loss, retrieval_top1, similarity_matrix, train, train_step, TrainConfig, TrainState};
use pimc_tensor::{BatchNormConfig, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

// 1 ------------------------------------------------------------------------

fn brute_rp(x: &[f32]) -> Vec<f32> {
    let n = x.len();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push((x[i] - x[j]).abs());
        }
    }
    out
}

fn recurrence_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..1000 {
        let n = rng.random_range(8..=64);
        let x: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rp = recurrence_plot(&x).map_err(|e| e.to_string())?;
        let bf = brute_rp(&x);
        ensure(rp.iter().zip(&bf).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("case {case}: differs from brute force")
        })?;
        for i in 0..n {
            ensure(rp[i * n + i] == 0.0, || format!("case {case}: nonzero diagonal"))?;
            for j in 0..n {
                ensure(rp[i * n + j].to_bits() == rp[j * n + i].to_bits(), || {
                    format!("case {case}: asymmetric at ({i}, {j})")
                })?;
            }
        }
        // integer-valued copies keep the shift exact in f32
        let ints: Vec<f32> = x.iter().map(|v| (v * 1000.0).round()).collect();
        let c = rng.random_range(-500..500) as f32;
        let shifted: Vec<f32> = ints.iter().map(|v| v + c).collect();
        let (a, b) = (recurrence_plot(&ints).unwrap(), recurrence_plot(&shifted).unwrap());
        ensure(a == b, || format!("case {case}: shift by {c} changed the plot"))?;
    }
    within(t.elapsed(), 5.0)?;
    Ok("1000 series, lengths 8-64, bit-exact".into())
}

// 2 ------------------------------------------------------------------------

fn hilbert_properties() -> Check {
    let t = Instant::now();
    for ps in [2usize, 4, 8, 16, 32] {
        let order = hilbert_order(ps).map_err(|e| e.to_string())?;
        let cells: BTreeSet<(u32, u32)> = order.iter().map(|c| (c.x, c.y)).collect();
        ensure(order.len() == ps * ps && cells.len() == ps * ps, || format!("ps {ps}: not a bijection"))?;
        ensure(cells.iter().all(|&(x, y)| (x as usize) < ps && (y as usize) < ps), || {
            format!("ps {ps}: cell outside the patch")
        })?;
        for w in order.windows(2) {
            let step = w[0].x.abs_diff(w[1].x) + w[0].y.abs_diff(w[1].y);
            ensure(step == 1, || format!("ps {ps}: step {step} between {:?} and {:?}", w[0], w[1]))?;
        }
    }
    within(t.elapsed(), 1.0)?;
    Ok("ps 2..32 bijective with unit steps".into())
}

// 3 ------------------------------------------------------------------------

fn index_bounds() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for _ in 0..1_000_000 {
        let (nir, red, blue) = (rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>());
        let (n, s, e) = (ndvi(nir, red), savi(nir, red), evi(nir, red, blue));
        ensure((-1.0 - 1e-6..=1.0 + 1e-6).contains(&n), || format!("ndvi {n} for ({nir}, {red})"))?;
        ensure((-1.0 - 1e-6..=1.0 + 1e-6).contains(&s), || format!("savi {s} for ({nir}, {red})"))?;
        ensure(e.is_finite(), || format!("evi {e} for ({nir}, {red}, {blue})"))?;
        lo = lo.min(n.min(s));
        hi = hi.max(n.max(s));
    }
    within(t.elapsed(), 2.0)?;
    Ok(format!("10^6 triples, ndvi/savi range [{lo:.4}, {hi:.4}]"))
}

// 4 ------------------------------------------------------------------------

const FD_INSTANCES: u64 = 20;
const FD_TOL: f32 = 1e-2;
const FD_FLOOR: f32 = 5e-2;

struct FdSuite {
    rows: Vec<(String, f32)>,
}

impl FdSuite {
    fn run<G, F>(&mut self, name: &str, make: G, check: &[bool], f: F)
    where
        G: Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
        F: Fn(&mut Tape, &[Var]) -> Var + Copy,
    {
        let mut worst = 0.0f32;
        for seed in 0..FD_INSTANCES {
            let mut r = fd::rng(seed * 104_729 + name.len() as u64);
            let rep = fd::check_grads(&make(&mut r), check, FD_FLOOR, seed, f);
            assert!(rep.checked > 0);
            worst = worst.max(rep.max_rel);
        }
        self.rows.push((name.to_string(), worst));
    }
}

fn gradient_suite() -> Check {
    use fd::{away_from_zero, random_tensor};
    let t = Instant::now();
    let mut s = FdSuite { rows: Vec::new() };
    let pair = |r: &mut ChaCha8Rng| vec![random_tensor(r, &[3, 4], -2.0, 2.0), random_tensor(r, &[3, 4], -2.0, 2.0)];
    s.run("add", pair, &[true, true], |t, v| t.add(v[0], v[1]).unwrap());
    s.run("sub", pair, &[true, true], |t, v| t.sub(v[0], v[1]).unwrap());
    s.run("mul", pair, &[true, true], |t, v| t.mul(v[0], v[1]).unwrap());
    s.run("scale", pair, &[true, false], |t, v| t.scale(v[0], 0.6).unwrap());
    s.run("relu", |r| vec![away_from_zero(r, &[4, 6], 0.01, 2.0)], &[true], |t, v| t.relu(v[0]).unwrap());
    s.run(
        "div_by",
        |r| vec![random_tensor(r, &[3, 3], -1.0, 1.0), random_tensor(r, &[1], 0.5, 2.0)],
        &[true, true],
        |t, v| t.div_by(v[0], v[1]).unwrap(),
    );
    s.run("reshape", |r| vec![random_tensor(r, &[2, 6], -1.0, 1.0)], &[true], |t, v| {
        t.reshape(v[0], &[4, 3]).unwrap()
    });
    s.run("sum", |r| vec![random_tensor(r, &[3, 5], -1.0, 1.0)], &[true], |t, v| t.sum(v[0]).unwrap());
    s.run("mean", |r| vec![random_tensor(r, &[3, 5], -1.0, 1.0)], &[true], |t, v| t.mean(v[0]).unwrap());
    s.run(
        "matmul",
        |r| vec![random_tensor(r, &[3, 4], -1.0, 1.0), random_tensor(r, &[4, 2], -1.0, 1.0)],
        &[true, true],
        |t, v| t.matmul(v[0], v[1]).unwrap(),
    );
    s.run("transpose", |r| vec![random_tensor(r, &[2, 5], -1.0, 1.0)], &[true], |t, v| {
        t.transpose(v[0]).unwrap()
    });
    s.run(
        "add_bias",
        |r| vec![random_tensor(r, &[3, 4], -1.0, 1.0), random_tensor(r, &[4], -1.0, 1.0)],
        &[true, true],
        |t, v| t.add_bias(v[0], v[1]).unwrap(),
    );
    s.run(
        "linear",
        |r| {
            vec![
                random_tensor(r, &[4, 3], -1.0, 1.0),
                random_tensor(r, &[2, 3], -1.0, 1.0),
                random_tensor(r, &[2], -1.0, 1.0),
            ]
        },
        &[true, true, true],
        |t, v| t.linear(v[0], v[1], Some(v[2])).unwrap(),
    );
    let conv = |r: &mut ChaCha8Rng| vec![random_tensor(r, &[2, 2, 5, 5], -1.0, 1.0), random_tensor(r, &[2, 2, 3, 3], -0.5, 0.5)];
    s.run("conv2d", conv, &[true, true], |t, v| t.conv2d(v[0], v[1], 1, 1).unwrap());
    s.run("conv2d stride 2", conv, &[true, true], |t, v| t.conv2d(v[0], v[1], 2, 1).unwrap());
    s.run("adaptive_avg_pool2d", |r| vec![random_tensor(r, &[2, 2, 4, 5], -1.0, 1.0)], &[true], |t, v| {
        t.adaptive_avg_pool2d(v[0], 1, 1).unwrap()
    });
    let bn = |r: &mut ChaCha8Rng| {
        vec![
            random_tensor(r, &[3, 2, 3, 3], -2.0, 2.0),
            random_tensor(r, &[2], 0.5, 1.5),
            random_tensor(r, &[2], -0.5, 0.5),
        ]
    };
    s.run("batch_norm2d train", bn, &[true, true, true], |t, v| {
        let (mut m, mut var) = (vec![0.0; 2], vec![1.0; 2]);
        t.batch_norm2d(v[0], v[1], v[2], &mut m, &mut var, BatchNormConfig::default(), true).unwrap()
    });
    s.run("batch_norm2d eval", bn, &[true, true, true], |t, v| {
        let (mut m, mut var) = (vec![0.1, -0.3], vec![0.8, 1.3]);
        t.batch_norm2d(v[0], v[1], v[2], &mut m, &mut var, BatchNormConfig::default(), false).unwrap()
    });
    s.run("l2_normalize_rows", |r| vec![random_tensor(r, &[3, 4], -1.0, 1.0)], &[true], |t, v| {
        t.l2_normalize_rows(v[0], 1e-8).unwrap()
    });
    s.run("softmax_cross_entropy_rows", |r| vec![random_tensor(r, &[4, 4], -2.0, 2.0)], &[true], |t, v| {
        t.softmax_cross_entropy_rows(v[0], &[2, 0, 3, 1]).unwrap()
    });
    s.run("mse", |r| vec![random_tensor(r, &[3, 3], -1.0, 1.0)], &[true], |t, v| {
        let target = Tensor::from_fn(vec![3, 3], |i| i as f32 * 0.1 - 0.4);
        t.mse(v[0], &target).unwrap()
    });
    s.run("pimc_loss", |r| vec![random_tensor(r, &[5, 5], -3.0, 3.0)], &[true], |t, v| {
        pimc_loss(t, v[0]).unwrap()
    });
    s.run(
        "pimc_loss of features and tau",
        |r| {
            vec![
                random_tensor(r, &[4, 6], -1.0, 1.0),
                random_tensor(r, &[4, 6], -1.0, 1.0),
                random_tensor(r, &[1], 0.5, 1.5),
            ]
        },
        &[true, true, true],
        |t, v| {
            let sim = similarity_matrix(t, v[0], v[1], v[2]).unwrap();
            pimc_loss(t, sim).unwrap()
        },
    );
    let elapsed = t.elapsed();
    let bad: Vec<String> = s
        .rows
        .iter()
        .filter(|(_, e)| e.is_nan() || *e >= FD_TOL)
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    ensure(bad.is_empty(), || format!("over {FD_TOL}: {}", bad.join(", ")))?;
    within(elapsed, 60.0)?;
    let worst = s.rows.iter().map(|r| r.1).fold(0.0f32, f32::max);
    Ok(format!("{} ops x {FD_INSTANCES} instances, worst relative error {worst:.2e}", s.rows.len()))
}

// desk-scale substrate ---------------------------------------------------------

const TRAIN_REGIONS: u64 = 48;
const HELD_OUT: std::ops::Range<u64> = 1000..1004;
const PROBE_TRAIN: std::ops::Range<u64> = 0..8;

fn desk_synth(distractor: f32) -> SynthConfig {
    SynthConfig {
        classes: 4,
        timesteps: 32,
        height: 128,
        width: 128,
        noise: 0.02,
        distractor,
        ..SynthConfig::default()
    }
}

fn desk_extract() -> ExtractConfig {
    ExtractConfig {
        ps: 16,
        pixels: 16,
        series_len: None,
        plot_size: 16,
        mode: SamplingMode::Hilbert,
    }
}

fn desk_encoder() -> EncoderConfig {
    EncoderConfig {
        widths: vec![16, 32, 64],
        blocks: 1,
        in_channels: 3,
        embed_dim: 64,
        input_size: 16,
        zero_init_residual: false,
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig {
        batch_size: 128,
        ..TrainConfig::desk()
    }
}

fn pairs(regions: std::ops::Range<u64>, syn: &SynthConfig) -> PairDataset {
    let ex = desk_extract();
    let mut cubes = Vec::new();
    let mut plots = RpBatch::new(ex.plot_size);
    for s in regions {
        let (cube, _) = synth_cube(s, &format!("r{s}"), syn).unwrap();
        let (_, p) = extract_region(&cube, &ex, s).unwrap();
        plots.data.extend(p.data);
        plots.sources.extend(p.sources);
        cubes.push(cube);
    }
    PairDataset::new(cubes, plots, ex.ps, 16).unwrap()
}

/// Random pixels off the pretraining cells, two per patch, with labels.
fn labeled(regions: std::ops::Range<u64>, syn: &SynthConfig) -> LabeledInputs {
    let ex = desk_extract();
    let (mut data, mut labels) = (Vec::new(), Vec::new());
    for s in regions {
        let (cube, raster) = synth_cube(s, &format!("r{s}"), syn).unwrap();
        let (_, p) = extract_eval_region(&cube, &ex, ex.pixels, 2, s).unwrap();
        labels.extend(plot_labels(&p, &raster));
        data.extend(p.data);
    }
    LabeledInputs {
        inputs: Tensor::new(vec![labels.len(), 3, 16, 16], data).unwrap(),
        labels,
    }
}

// 5 ------------------------------------------------------------------------

fn loss_calibration() -> Check {
    let ds = pairs(0..2, &desk_synth(0.0));
    let cfg = desk_train();
    let mut notes = Vec::new();
    for b in [8usize, 32, 64] {
        let mut image = init_encoder(&desk_encoder(), derive_seed(cfg.seed, "image-encoder", 0)).unwrap();
        let mut series = init_encoder(&desk_encoder(), derive_seed(cfg.seed, "series-encoder", 0)).unwrap();
        let batch = ds.fixed_pairs(b as u64, b).unwrap();
        ensure(batch.patch_ids.len() == b, || format!("only {} pairs for b={b}", batch.patch_ids.len()))?;
        let rolled: Vec<usize> = (0..b).map(|r| (r + 1) % b).collect();
        let shuffled = batch.plots.select_rows(&rolled).unwrap();
        let mut state = TrainState::new(&image, &series, &cfg);
        let loss = train_step(&mut image, &mut series, &mut state, &batch.images, &shuffled).map_err(|e| e.to_string())?;
        let base = (b as f32).ln();
        ensure((loss - base).abs() < 0.1 * base, || format!("b={b}: loss {loss:.4} vs ln b {base:.4}"))?;
        notes.push(format!("b={b} {loss:.3}/{base:.3}"));
    }
    Ok(notes.join(", "))
}

// 6 ------------------------------------------------------------------------

fn train_desk(distractor: f32) -> (EncoderParams, f32, (f64, f64), Duration) {
    let syn = desk_synth(distractor);
    let ds = pairs(0..TRAIN_REGIONS, &syn);
    let t = Instant::now();
    let out = train(&ds, &desk_encoder(), &desk_encoder(), &desk_train(), None).expect("training");
    let elapsed = t.elapsed();
    let last_epoch = out.state.epoch - 1;
    let tail: Vec<f32> = out.state.history.iter().filter(|r| r.epoch == last_epoch).map(|r| r.loss).collect();
    let final_loss = tail.iter().sum::<f32>() / tail.len() as f32;
    let held = pairs(HELD_OUT, &syn).fixed_pairs(7, 256).unwrap();
    let fi = out.image.encode_chunked(&held.images, 128).unwrap();
    let fs = out.series.encode_chunked(&held.plots, 128).unwrap();
    let r = retrieval_top1(&fi, &fs).unwrap();
    assert_eq!(held.patch_ids.len(), 256);
    (out.series, final_loss, r, elapsed)
}

fn learnability(slot: &mut Option<EncoderParams>) -> Check {
    let (trained, loss, (i2s, s2i), elapsed) = train_desk(0.0);
    *slot = Some(trained);
    let bound = 0.5 * (desk_train().batch_size as f32).ln();
    ensure(loss < bound, || format!("final-epoch loss {loss:.4} not below {bound:.4}"))?;
    ensure(i2s > 0.6 && s2i > 0.6, || {
        format!("held-out top-1 image->series {i2s:.3}, series->image {s2i:.3}")
    })?;
    within(elapsed, 900.0)?;
    Ok(format!(
        "loss {loss:.3} < {bound:.3}; top-1 on 256 held-out pairs {i2s:.3} / {s2i:.3}; trained in {:.0} s",
        elapsed.as_secs_f64()
    ))
}

// 7 ------------------------------------------------------------------------

const PROBE_DISTRACTOR: f32 = 0.85;

fn frozen_superiority(slot: &mut Option<EncoderParams>, reports: &mut Vec<MetricsReport>) -> Check {
    let (trained, ..) = train_desk(PROBE_DISTRACTOR);
    let syn = desk_synth(PROBE_DISTRACTOR);
    let (tr, te) = (labeled(PROBE_TRAIN, &syn), labeled(HELD_OUT, &syn));
    let cfg = ProbeConfig::default();
    let pimc = classify_pixels(&trained, &tr, &te, &cfg).map_err(|e| e.to_string())?;
    let random = init_encoder(&desk_encoder(), derive_seed(desk_train().seed, "series-encoder", 0)).unwrap();
    let base = classify_pixels(&random, &tr, &te, &cfg).map_err(|e| e.to_string())?;
    let (p, r) = (
        pimc.classification.as_ref().unwrap().balanced_acc,
        base.classification.as_ref().unwrap().balanced_acc,
    );
    reports.extend([pimc, base]);
    *slot = Some(trained);
    ensure(p > 0.80, || format!("PIMC balanced ACC {p:.4} not above 0.80"))?;
    ensure(p - r >= 0.15, || format!("PIMC {p:.4} vs random-init {r:.4}: gap under 15 points"))?;
    Ok(format!(
        "balanced ACC {p:.4} vs random-init {r:.4} ({} train / {} test pixels)",
        tr.labels.len(),
        te.labels.len()
    ))
}

// 8 ------------------------------------------------------------------------

fn finetune_gain(trained: Option<&EncoderParams>, reports: &mut Vec<MetricsReport>) -> Check {
    let trained = trained.ok_or("criterion 7 did not produce encoders")?;
    let syn = desk_synth(PROBE_DISTRACTOR);
    let (tr, te) = (labeled(PROBE_TRAIN, &syn), labeled(HELD_OUT, &syn));
    let mut notes = Vec::new();
    for seed in 0..3 {
        let frozen = ProbeConfig {
            seed,
            ..ProbeConfig::default()
        };
        let tuned = ProbeConfig {
            mode: AttachMode::Finetune,
            ..frozen.clone()
        };
        let a = classify_pixels(trained, &tr, &te, &frozen).map_err(|e| e.to_string())?;
        let b = classify_pixels(trained, &tr, &te, &tuned).map_err(|e| e.to_string())?;
        let (fa, fb) = (a.classification.as_ref().unwrap().acc, b.classification.as_ref().unwrap().acc);
        reports.extend([a, b]);
        ensure(fb >= fa, || format!("seed {seed}: fine-tuned {fb:.4} < frozen {fa:.4}"))?;
        notes.push(format!("seed {seed} {fa:.4} -> {fb:.4}"));
    }
    Ok(notes.join(", "))
}

// 9 ------------------------------------------------------------------------

fn forecasting(trained: Option<&EncoderParams>, reports: &mut Vec<MetricsReport>) -> Check {
    let trained = trained.ok_or("criterion 6 did not produce encoders")?;
    let syn = SynthConfig {
        classes: 4,
        timesteps: 48,
        height: 64,
        width: 64,
        noise: 0.0,
        jitter: 0.0,
        ..SynthConfig::default()
    };
    let ex = ExtractConfig {
        pixels: 4,
        ..desk_extract()
    };
    let windows = |s: u64| {
        let (cube, _) = synth_cube(s, &format!("f{s}"), &syn).unwrap();
        let (sets, _) = extract_region(&cube, &ex, s).unwrap();
        ForecastSet::from_series(&sets, 32, 10, 2, 16).unwrap()
    };
    let (tr, te) = (windows(1), windows(2));
    let cfg = ProbeConfig {
        epochs: 300,
        ..ProbeConfig::default()
    };
    let rep = forecast_index(trained, &tr, &te, &cfg).map_err(|e| e.to_string())?;
    let f = rep.forecast.clone().unwrap();
    reports.push(rep);
    let worst = f.per_index.iter().map(|m| m.mae).fold(0.0f64, f64::max);
    ensure(worst <= 0.02, || {
        let each: Vec<String> = f.per_index.iter().map(|m| format!("{} {:.4}", m.index, m.mae)).collect();
        format!("MAE over 0.02: {}", each.join(", "))
    })?;
    let mut checked = 0;
    for r in reports.iter() {
        if let Some(f) = &r.forecast {
            for (rmse, mse) in f.per_index.iter().map(|m| (m.rmse, m.mse)).chain([(f.overall.rmse, f.overall.mse)]) {
                ensure((rmse * rmse - mse).abs() <= 1e-9, || format!("rmse^2 {} vs mse {mse}", rmse * rmse))?;
                checked += 1;
            }
        }
    }
    let each: Vec<String> = f.per_index.iter().map(|m| format!("{} {:.4}", m.index, m.mae)).collect();
    Ok(format!("MAE {} on {} windows; rmse^2 == mse on {checked} rows", each.join(", "), te.len()))
}

// 10 -----------------------------------------------------------------------

const PIPELINE_CONFIG: &str = r#"
[synth]
train_regions = 3
test_regions = 1
height = 32
width = 32
timesteps = 48

[extract]
ps = 8
pixels = 4

[encoder]
widths = [8, 16]
embed_dim = 16

[eval]
epochs = 20
"#;

fn pimc(common: &[&str], args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pimc"))
        .args(common)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("pimc {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn pipeline(root: &Path, name: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let cfg = root.join("pipeline.toml");
    std::fs::write(&cfg, PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    let out = root.join(name);
    let (o, c) = (out.to_str().unwrap(), cfg.to_str().unwrap());
    let common = ["--out", o, "--seed", "11", "--workers", "1"];
    pimc(&common, &["--config", c, "synthdata"])?;
    pimc(&common, &["extract"])?;
    pimc(&common, &["--epochs", "5", "--batch", "16", "train"])?;
    pimc(&common, &["eval"])?;
    pimc(&common, &["--task", "forecast", "eval"])?;
    pimc(&common, &["--task", "landcover", "eval", "--attach", "finetune"])?;
    let mut files = vec!["train/loss.csv".to_string()];
    let mut evals: Vec<String> = std::fs::read_dir(out.join("eval"))
        .map_err(|e| e.to_string())?
        .map(|e| format!("eval/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    evals.sort();
    files.extend(evals);
    files
        .into_iter()
        .map(|f| std::fs::read(out.join(&f)).map(|b| (f, b)).map_err(|e| e.to_string()))
        .collect()
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = pipeline(dir.path(), "a")?;
    let b = pipeline(dir.path(), "b")?;
    let names: Vec<&str> = a.iter().map(|x| x.0.as_str()).collect();
    ensure(names.len() >= 5, || format!("too few artifacts: {names:?}"))?;
    ensure(a.len() == b.len(), || "runs produced different file sets".into())?;
    for ((fa, ba), (fb, bb)) in a.iter().zip(&b) {
        ensure(fa == fb && ba == bb, || format!("{fa} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical: {}", a.len(), names.join(" ")))
}

// --------------------------------------------------------------------------

fn main() {
    let only: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut desk: Option<EncoderParams> = None;
    let mut probe: Option<EncoderParams> = None;
    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Check| {
        if !wanted(n) {
            return;
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("criterion {n:>2} PASS  {name}: {d} [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {d} [{secs:.1} s]");
            }
        }
    };
    report(1, "recurrence-plot oracle", &mut recurrence_oracle);
    report(2, "Hilbert properties", &mut hilbert_properties);
    report(3, "index bounds", &mut index_bounds);
    report(4, "gradient suite", &mut gradient_suite);
    report(5, "loss calibration", &mut loss_calibration);
    report(6, "contrastive learnability", &mut || learnability(&mut desk));
    report(7, "frozen-probe superiority", &mut || frozen_superiority(&mut probe, &mut reports));
    report(8, "fine-tune gain", &mut || finetune_gain(probe.as_ref(), &mut reports));
    report(9, "forecasting sanity", &mut || forecasting(desk.as_ref(), &mut reports));
    report(10, "determinism", &mut determinism);
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
