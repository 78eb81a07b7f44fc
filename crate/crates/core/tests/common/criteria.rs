//! One check per acceptance criterion. Each returns a short summary on
//! success and a description of the first violation otherwise.

use std::path::{Path, PathBuf};
use std::time::Instant;

use amc_uq::dataset::{OneHotLabel, SignalDataset};
use amc_uq::ensemble::{predict, predict_single, CIConfig, EnsembleModel, EnsemblePrediction};
use amc_uq::experiment::{Experiment, ExperimentConfig, Overrides, Stage};
use amc_uq::nncore::{flop_count, forward, ArchitectureConfig, LayerSpec, Mode, ModelParams};
use amc_uq::uqmetrics::{self as m, CoverageMode, ECEConfig, ScoredBatch};
use ndarray::Array2;
use rand::Rng;

use super::gradcheck::{input_error, param_error, random_case, TOLERANCE};

pub type Outcome = std::result::Result<String, String>;

const TIGHT: f64 = 1e-12;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn same(what: &str, case: usize, got: f64, want: f64) -> std::result::Result<(), String> {
    ensure((got - want).abs() <= TIGHT, || {
        format!("batch {case}: {what} {got:.17e} vs oracle {want:.17e}")
    })
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Library metrics against the brute-force versions.
pub fn metric_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = super::rng(0x0_4ac1e);
    let ci = CIConfig::default();
    let batches = 1200;
    for case in 0..batches {
        let classes = [2, 8, 24][case % 3];
        let len = rng.random_range(1..=64);
        let batch = super::random_batch(&mut rng, classes, len);
        let items = super::items(&batch);
        let bins = if case % 2 == 0 { 15 } else { rng.random_range(1..=40) };
        let ece_cfg = ECEConfig::new(bins).map_err(|e| e.to_string())?;
        let err = |e: amc_uq::Error| e.to_string();

        same(
            "accuracy",
            case,
            m::accuracy(&batch).map_err(err)?,
            super::accuracy(&items),
        )?;
        same("nll", case, m::nll(&batch).map_err(err)?, super::nll(&items))?;
        same("brier", case, m::brier(&batch).map_err(err)?, super::brier(&items))?;
        same(
            "ece",
            case,
            m::ece(&batch, &ece_cfg).map_err(err)?,
            super::ece(&items, bins),
        )?;
        let (kl, kl_mean) = m::kl_divergence(&batch).map_err(err)?;
        let want = super::kl(&items);
        for (a, b) in kl.iter().zip(&want) {
            same("kl", case, *a, *b)?;
        }
        same("mean kl", case, kl_mean, want.iter().sum::<f64>() / want.len() as f64)?;
        for (mode, strict) in [(CoverageMode::Strict, true), (CoverageMode::Relaxed, false)] {
            same(
                "coverage",
                case,
                m::coverage(&batch, &ci, mode).map_err(err)?,
                super::coverage(&items, ci.z_alpha, strict),
            )?;
        }
        let widths = m::ci_widths(&batch, &ci);
        let (ok, bad) = super::ci_widths(&items, ci.z_alpha);
        ensure(
            widths.correct.len() == ok.len() && widths.incorrect.len() == bad.len(),
            || format!("batch {case}: CI width partition differs"),
        )?;
        for (a, b) in widths.correct.iter().zip(&ok).chain(widths.incorrect.iter().zip(&bad)) {
            same("ci width", case, *a, *b)?;
        }
        same(
            "high confidence",
            case,
            m::high_confidence_proportion(&batch).map_err(err)?,
            super::high_confidence(&items),
        )?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{batches} batches agree to 1e-12 in {secs:.1}s"))
}

fn uniform_batch(classes: usize, len: usize) -> ScoredBatch {
    let preds = (0..len)
        .map(|_| {
            EnsemblePrediction::from_members(Array2::from_elem((1, classes), 1.0 / classes as f64), &[1.0]).unwrap()
        })
        .collect();
    let labels = (0..len)
        .map(|i| OneHotLabel::new(i % classes, classes).unwrap())
        .collect();
    ScoredBatch::new(preds, labels, vec![0.0; len]).unwrap()
}

pub fn identities() -> Outcome {
    let mut rng = super::rng(0x1d);
    let ci = CIConfig::default();
    let err = |e: amc_uq::Error| e.to_string();
    let batches = 1200;
    for case in 0..batches {
        let classes = [2, 8, 24][case % 3];
        let len = rng.random_range(1..=64);
        let batch = super::random_batch(&mut rng, classes, len);
        let (_, kl_mean) = m::kl_divergence(&batch).map_err(err)?;
        let nll = m::nll(&batch).map_err(err)?;
        ensure((kl_mean - nll).abs() <= TIGHT, || {
            format!("batch {case}: mean KL {kl_mean} vs NLL {nll}")
        })?;
        let strict = m::coverage(&batch, &ci, CoverageMode::Strict).map_err(err)?;
        let relaxed = m::coverage(&batch, &ci, CoverageMode::Relaxed).map_err(err)?;
        ensure(strict <= relaxed, || {
            format!("batch {case}: strict {strict} > relaxed {relaxed}")
        })?;
    }
    for classes in [2usize, 3, 5, 7, 8, 11, 24] {
        for len in [1usize, 3, 7, 64] {
            let batch = uniform_batch(classes, len);
            let brier = m::brier(&batch).map_err(err)?;
            let want = (classes - 1) as f64 / classes as f64;
            ensure(brier == want, || {
                format!("uniform Brier C={classes} T={len}: {brier:.17e} vs {want:.17e}")
            })?;
            let nll = m::nll(&batch).map_err(err)?;
            let ln = (classes as f64).ln();
            ensure((nll - ln).abs() <= TIGHT, || {
                format!("uniform NLL C={classes}: {nll} vs {ln}")
            })?;
        }
    }
    Ok(format!("{batches} random batches plus uniform predictors"))
}

pub fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = super::rng(0x6ad);
    let mut worst_param: f64 = 0.0;
    let mut worst_input: f64 = 0.0;
    for _ in 0..100 {
        let case = random_case(&mut rng);
        worst_param = worst_param.max(param_error(&case));
        worst_input = worst_input.max(input_error(&case));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst_param < TOLERANCE && worst_input < TOLERANCE, || {
        format!("max relative error: params {worst_param:e}, inputs {worst_input:e}")
    })?;
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "max relative error {:.1e} over 100 models in {secs:.1}s",
        worst_param.max(worst_input)
    ))
}

fn toy_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(1, 4, (3, 2), (14, 1), 0.0),
        LayerSpec::flatten(56),
        LayerSpec::softmax_output(56, 3),
    ]
}

pub fn ensemble_structure() -> Outcome {
    let mut rng = super::rng(0xb1);
    let specs = toy_specs();

    // A one-member ensemble is the single model.
    for seed in 0..20u64 {
        let model = ModelParams::<f64>::init(specs.clone(), 16, seed).map_err(|e| e.to_string())?;
        let ens = EnsembleModel::equal(vec![model.clone()]).map_err(|e| e.to_string())?;
        let frame = Array2::from_shape_fn((16, 2), |_| rng.random_range(-1.0..1.0));
        let a = predict(&ens, frame.view()).map_err(|e| e.to_string())?;
        let b = predict_single(&model, frame.view()).map_err(|e| e.to_string())?;
        let direct = forward(&model, frame.view(), Mode::Eval).map_err(|e| e.to_string())?;
        ensure(a == b, || {
            format!("seed {seed}: B=1 ensemble differs from single model")
        })?;
        ensure(a.mean_probs == direct, || {
            format!("seed {seed}: mean differs from forward pass")
        })?;
        ensure(a.per_class_variance.iter().all(|&v| v == 0.0), || {
            "nonzero variance for B=1".into()
        })?;
    }

    // Single-model intervals collapse; strict coverage needs every class
    // exactly right, which an imperfect prediction never is.
    let ci = CIConfig::default();
    for case in 0..200 {
        let classes = [2, 8, 24][case % 3];
        let len = rng.random_range(1..=64);
        let preds: Vec<EnsemblePrediction> = (0..len)
            .map(|_| {
                let row: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
                let s: f64 = row.iter().sum();
                let probs = Array2::from_shape_fn((1, classes), |(_, j)| row[j] / s);
                EnsemblePrediction::from_members(probs, &[1.0]).unwrap()
            })
            .collect();
        let labels = (0..len)
            .map(|_| OneHotLabel::new(rng.random_range(0..classes), classes).unwrap())
            .collect();
        let batch = ScoredBatch::new(preds, labels, vec![0.0; len]).map_err(|e| e.to_string())?;
        let w = m::ci_widths(&batch, &ci);
        ensure(w.correct.iter().chain(&w.incorrect).all(|&x| x == 0.0), || {
            format!("batch {case}: nonzero width")
        })?;
        let strict = m::coverage(&batch, &ci, CoverageMode::Strict).map_err(|e| e.to_string())?;
        ensure(strict == 0.0, || format!("batch {case}: strict coverage {strict}"))?;
    }

    // Members m +- d with d chosen so the sample variance is the same for
    // every B: width * sqrt(B) must not move.
    let (mid, s2) = (0.5, 0.01);
    let mut scaled = Vec::new();
    for b in [2usize, 4, 6, 8, 16, 32, 64] {
        let d = (s2 * (b - 1) as f64 / b as f64).sqrt();
        let probs = Array2::from_shape_fn((b, 2), |(i, j)| {
            let p = if i % 2 == 0 { mid + d } else { mid - d };
            if j == 0 {
                p
            } else {
                1.0 - p
            }
        });
        let pred = EnsemblePrediction::from_members(probs, &vec![1.0 / b as f64; b]).map_err(|e| e.to_string())?;
        let width = 2.0 * pred.ci_half_width(0, ci.z_alpha);
        scaled.push((b, width * (b as f64).sqrt()));
    }
    let want = 2.0 * ci.z_alpha * s2.sqrt();
    for (b, v) in &scaled {
        ensure((v - want).abs() <= 1e-9, || {
            format!("B={b}: width*sqrt(B) = {v}, expected {want}")
        })?;
    }
    Ok("B=1 identity, zero single-model widths, 1/sqrt(B) scaling".into())
}

fn smoke_config() -> std::result::Result<ExperimentConfig, String> {
    ExperimentConfig::load(workspace_root().join("configs/smoke.toml")).map_err(|e| e.to_string())
}

fn run_smoke(out: &Path, workers: usize) -> std::result::Result<Experiment, String> {
    let overrides = Overrides {
        out: Some(out.to_path_buf()),
        workers: Some(workers),
        ..Default::default()
    };
    let exp = Experiment::new(smoke_config()?, overrides).map_err(|e| e.to_string())?;
    exp.run(Stage::Run).map_err(|e| e.to_string())?;
    Ok(exp)
}

fn read(path: &Path) -> std::result::Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn resave_identical(original: &Path, copy: &Path, what: &str) -> std::result::Result<(), String> {
    ensure(read(original)? == read(copy)?, || {
        format!("{what}: re-saved bytes differ")
    })
}

pub fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = run_smoke(&tmp.path().join("a"), 1)?;
    let b = run_smoke(&tmp.path().join("b"), 1)?;
    let c = run_smoke(&tmp.path().join("c"), 3)?;
    let mut csvs = vec![a.clean_csv_path()];
    for sweep in ["pnr_over_snr", "snr_over_pnr"] {
        csvs.push(a.attack_csv_path(sweep));
    }
    for path in &csvs {
        let rel = path.strip_prefix(a.out_dir()).map_err(|e| e.to_string())?;
        let bytes = read(path)?;
        ensure(!bytes.is_empty(), || format!("{} is empty", rel.display()))?;
        for other in [&b, &c] {
            ensure(bytes == read(&other.out_dir().join(rel))?, || {
                format!("{} differs between runs", rel.display())
            })?;
        }
    }

    let scratch = tmp.path().join("scratch");
    std::fs::create_dir_all(&scratch).map_err(|e| e.to_string())?;
    for path in [a.train_path(), a.test_path()] {
        let ds = SignalDataset::load(&path).map_err(|e| e.to_string())?;
        let copy = scratch.join("copy.sigset");
        ds.save(&copy).map_err(|e| e.to_string())?;
        let back = SignalDataset::load(&copy).map_err(|e| e.to_string())?;
        ensure(back == ds, || "sigset round trip changed the dataset".into())?;
        let bits_equal = ds.frames.iter().zip(&back.frames).all(|(x, y)| {
            x.samples
                .iter()
                .zip(&y.samples)
                .all(|(p, q)| p.to_bits() == q.to_bits())
        });
        ensure(bits_equal, || "sigset samples are not bit-identical".into())?;
        resave_identical(&path, &copy, "sigset")?;
    }

    let standalone = a.out_dir().join("models/standalone.weights");
    let model = ModelParams::<f32>::load(&standalone).map_err(|e| e.to_string())?;
    let copy = scratch.join("copy.weights");
    model.save(&copy).map_err(|e| e.to_string())?;
    ensure(
        ModelParams::<f32>::load(&copy).map_err(|e| e.to_string())? == model,
        || "f32 weights changed".into(),
    )?;
    resave_identical(&standalone, &copy, "f32 weights")?;

    let mut wide = ModelParams::<f64>::init(toy_specs(), 16, 99).map_err(|e| e.to_string())?;
    let mut rng = super::rng(3);
    for layer in wide.layers_mut() {
        layer
            .weight
            .mapv_inplace(|_| rng.random::<f64>() * 1e-3 - 0.5e-3 + f64::EPSILON);
        layer.bias.mapv_inplace(|_| rng.random::<f64>());
    }
    let path = scratch.join("wide.weights");
    wide.save(&path).map_err(|e| e.to_string())?;
    let back = ModelParams::<f64>::load(&path).map_err(|e| e.to_string())?;
    let exact = wide.layers().iter().zip(back.layers()).all(|(x, y)| {
        x.weight
            .iter()
            .chain(&x.bias)
            .zip(y.weight.iter().chain(&y.bias))
            .all(|(p, q)| p.to_bits() == q.to_bits())
    });
    ensure(exact, || "f64 weights not bit-identical".into())?;

    let ens_dir = a.out_dir().join("models/equal_ensemble");
    let ens = EnsembleModel::<f32>::load(&ens_dir).map_err(|e| e.to_string())?;
    let ens_copy = scratch.join("ensemble");
    ens.save(&ens_copy).map_err(|e| e.to_string())?;
    ensure(
        EnsembleModel::<f32>::load(&ens_copy).map_err(|e| e.to_string())? == ens,
        || "ensemble changed".into(),
    )?;
    for entry in std::fs::read_dir(&ens_dir).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        resave_identical(&ens_dir.join(&name), &ens_copy.join(&name), "ensemble file")?;
    }
    Ok(format!(
        "{} CSVs identical across 3 runs; sigset and weight round trips exact",
        csvs.len()
    ))
}

/// Hand sums of `C_in * C_out * K_h * K_w * H * W` for conv layers and
/// `in * out` for dense layers.
pub fn flop_counts() -> Outcome {
    // desk, 128 samples, 8 classes:
    //   1*32*3*2*126*1   =  24_192
    //   32*16*3*1*124*1  = 190_464
    //   16*8*3*1*122*1   =  46_848
    //   8*8*3*1*120*1    =  23_040
    //   960*64           =  61_440
    //   64*8             =     512
    let desk = ArchitectureConfig::desk()
        .layer_specs(128, 8)
        .map_err(|e| e.to_string())?;
    // full width, 128 samples, 8 classes:
    //   1*256*3*1*126*2    =    193_536
    //   256*128*3*2*124*1  = 24_379_392
    //   128*64*3*1*122*1   =  2_998_272
    //   64*64*3*1*120*1    =  1_474_560
    //   7680*128           =    983_040
    //   128*8              =      1_024
    let full = ArchitectureConfig::full_width()
        .layer_specs(128, 8)
        .map_err(|e| e.to_string())?;
    // single conv, 1 -> 2 channels, 3x1 kernel, 10x1 output: 1*2*3*1*10*1
    let single = vec![LayerSpec::conv(1, 2, (3, 1), (10, 1), 0.0)];
    // toy: 1*4*3*2*14*1 + 56*3
    let cases = [
        ("desk", flop_count(&desk), 346_496u64),
        ("full width", flop_count(&full), 30_029_824),
        ("single conv", flop_count(&single), 60),
        ("toy", flop_count(&toy_specs()), 504),
    ];
    for (name, got, want) in cases {
        ensure(got == want, || format!("{name}: {got} vs hand sum {want}"))?;
    }
    Ok("desk 346496, full width 30029824, single conv 60, toy 504".into())
}
