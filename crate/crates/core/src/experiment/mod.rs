//! Config-driven pipeline behind the CLI.
//!
//! Stages and what they write under the output directory:
//!
//! | stage      | reads                      | writes                                         |
//! |------------|----------------------------|------------------------------------------------|
//! | `generate` | config                     | `data/train.sigset`, `data/test.sigset`        |
//! | `train`    | `data/train.sigset`        | `models/standalone.weights`, `models/<ensemble>/` |
//! | `evaluate` | test set, models           | `reports/clean.{csv,json}`                     |
//! | `attack`   | test set, models           | `reports/attack_<sweep>.{csv,json}`, `data/attacked/*.sigset` |
//! | `report`   | `reports/*.json`           | `figures/*.svg`                                |
//!
//! Each stage also writes `manifests/<stage>.json`. `report` only renders
//! stored metrics.

mod config;
mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{
    AttackSection, DatasetSection, EnsembleSection, ExperimentConfig, MetricsSection, PnrOverSnr, Seeds, SnrOverPnr,
    System, TrainSection, CONFIG_VERSION,
};

use crate::adversarial::{craft, perturbed_dataset, score_attacked, score_clean, AttackConfig, Strength, Surrogate};
use crate::dataset::{split, SignalDataset};
use crate::ensemble::{train_ensemble, train_snr_aware, EnsembleModel, Predictor};
use crate::error::{Error, Result};
use crate::nncore::{self, ModelParams, Precision, Real};
use crate::seed;
use crate::siggen::generate_frames;
use crate::uqmetrics::{self, csv_row, MetricsReport, CSV_HEADER};
use plot::{Series, Violin};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Train,
    Evaluate,
    Attack,
    Report,
    /// Every stage in order.
    Run,
}

impl Stage {
    pub const PIPELINE: [Stage; 5] = [
        Stage::Generate,
        Stage::Train,
        Stage::Evaluate,
        Stage::Attack,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Attack => "attack",
            Stage::Report => "report",
            Stage::Run => "run",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Stage::Generate,
            Stage::Train,
            Stage::Evaluate,
            Stage::Attack,
            Stage::Report,
            Stage::Run,
        ]
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub library_version: String,
    pub config_hash: String,
    pub precision: Precision,
    pub workers: usize,
    pub seeds: Seeds,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub elapsed_seconds: f64,
}

/// One row of an attack sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub sweep: String,
    /// `None` for the unperturbed reference row.
    pub target_pnr_db: Option<f64>,
    pub epsilon: f64,
    /// `None` when nothing was perturbed.
    pub realized_pnr_db: Option<f64>,
    pub report: MetricsReport,
}

pub const ATTACK_CSV_PREFIX: &str = "sweep,target_pnr_db,epsilon,realized_pnr_db";

const PNR_OVER_SNR: &str = "pnr_over_snr";
const SNR_OVER_PNR: &str = "snr_over_pnr";

enum Loaded<F> {
    Single(ModelParams<F>),
    Ensemble(EnsembleModel<F>),
}

impl<F: Real> Loaded<F> {
    fn predictor(&self) -> &dyn Predictor<F> {
        match self {
            Loaded::Single(m) => m,
            Loaded::Ensemble(e) => e,
        }
    }

    fn surrogate(&self, s: Surrogate) -> Result<&ModelParams<F>> {
        match (self, s) {
            (Loaded::Single(m), Surrogate::Standalone) => Ok(m),
            (Loaded::Ensemble(e), Surrogate::Member(b)) => e
                .members()
                .get(b)
                .ok_or_else(|| Error::Config(format!("ensemble has no member {b}"))),
            _ => Err(Error::Config(format!("surrogate {s} does not fit this system"))),
        }
    }
}

pub struct Experiment {
    config: ExperimentConfig,
    out: PathBuf,
}

impl Experiment {
    pub fn new(mut config: ExperimentConfig, overrides: Overrides) -> Result<Self> {
        if let Some(w) = overrides.workers {
            config.workers = w;
        }
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if let Some(p) = overrides.precision {
            config.precision = p;
        }
        let out = overrides
            .out
            .or_else(|| config.output_dir.clone())
            .ok_or_else(|| Error::Config("no output directory (set output_dir or pass --out)".into()))?;
        config.output_dir = None;
        config.validate()?;
        Ok(Self { config, out })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Hash of the effective config. The output directory and worker count
    /// do not change results and are left out.
    pub fn config_hash(&self) -> String {
        let mut c = self.config.clone();
        c.workers = 1;
        c.hash()
    }

    pub fn train_path(&self) -> PathBuf {
        self.out.join("data/train.sigset")
    }

    pub fn test_path(&self) -> PathBuf {
        self.out.join("data/test.sigset")
    }

    pub fn model_path(&self, system: System) -> PathBuf {
        match system {
            System::Standalone => self.out.join("models/standalone.weights"),
            s => self.out.join("models").join(s.name()),
        }
    }

    pub fn clean_csv_path(&self) -> PathBuf {
        self.out.join("reports/clean.csv")
    }

    pub fn clean_json_path(&self) -> PathBuf {
        self.out.join("reports/clean.json")
    }

    pub fn attack_csv_path(&self, sweep: &str) -> PathBuf {
        self.out.join(format!("reports/attack_{sweep}.csv"))
    }

    pub fn attack_json_path(&self, sweep: &str) -> PathBuf {
        self.out.join(format!("reports/attack_{sweep}.json"))
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.out.join(format!("manifests/{}.json", stage.name()))
    }

    fn systems(&self) -> &[System] {
        &self.config.ensemble.systems
    }

    /// Runs one stage (or all of them for [`Stage::Run`]) and writes its
    /// manifest.
    pub fn run(&self, stage: Stage) -> Result<RunManifest> {
        let started = Instant::now();
        let artifacts = if stage == Stage::Run {
            let mut all = Vec::new();
            for s in Stage::PIPELINE {
                all.extend(self.run(s)?.artifacts);
            }
            all
        } else {
            let paths = match (stage, self.config.precision) {
                (Stage::Generate, _) => self.generate()?,
                (Stage::Train, Precision::F32) => self.train::<f32>()?,
                (Stage::Train, Precision::F64) => self.train::<f64>()?,
                (Stage::Evaluate, Precision::F32) => self.evaluate::<f32>()?,
                (Stage::Evaluate, Precision::F64) => self.evaluate::<f64>()?,
                (Stage::Attack, Precision::F32) => self.attack::<f32>()?,
                (Stage::Attack, Precision::F64) => self.attack::<f64>()?,
                (Stage::Report, _) => self.report()?,
                (Stage::Run, _) => unreachable!(),
            };
            paths.iter().map(|p| self.relative(p)).collect()
        };
        let manifest = RunManifest {
            stage: stage.name().into(),
            library_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: self.config_hash(),
            precision: self.config.precision,
            workers: self.config.workers,
            seeds: self.config.seeds(),
            artifacts,
            elapsed_seconds: started.elapsed().as_secs_f64(),
        };
        write_file(&self.manifest_path(stage), &serde_json::to_vec_pretty(&manifest)?)?;
        Ok(manifest)
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).display().to_string()
    }

    fn generate(&self) -> Result<Vec<PathBuf>> {
        let ds = generate_frames(&self.config.generator()?)?;
        let parts = split(&ds, self.config.dataset.test_fraction, self.config.seeds().split)?;
        parts.train.save(self.train_path())?;
        parts.test.save(self.test_path())?;
        Ok(vec![self.train_path(), self.test_path()])
    }

    fn load_data(path: PathBuf) -> Result<SignalDataset> {
        SignalDataset::load(path)
    }

    fn train<F: Real>(&self) -> Result<Vec<PathBuf>> {
        let train_set = Self::load_data(self.train_path())?;
        let cfg = &self.config;
        let specs = cfg.model.layer_specs(train_set.frame_len, train_set.num_classes())?;
        let seeds = cfg.seeds();
        let (members, workers) = (cfg.ensemble.members, cfg.workers);
        let mut written = Vec::new();
        for &system in self.systems() {
            let path = self.model_path(system);
            match system {
                System::Standalone => {
                    let init = seed::derive(seeds.standalone, &[0]);
                    let model = ModelParams::<F>::init(specs.clone(), train_set.frame_len, init)?;
                    let trained = nncore::train(
                        model,
                        &train_set,
                        &cfg.train_config(seed::derive(seeds.standalone, &[1])),
                    )?;
                    trained.model.save(&path)?;
                }
                System::EqualEnsemble => {
                    let ens = train_ensemble::<F>(
                        &train_set,
                        &specs,
                        members,
                        &cfg.train_config(0),
                        seeds.equal_ensemble,
                        workers,
                    )?;
                    ens.save(&path)?;
                }
                System::WeightedEnsemble => {
                    let ens = train_snr_aware::<F>(
                        &train_set,
                        &train_set,
                        &specs,
                        members,
                        &cfg.train_config(0),
                        seeds.weighted_ensemble,
                        workers,
                    )?;
                    ens.save(&path)?;
                }
            }
            written.push(path);
        }
        Ok(written)
    }

    fn load_system<F: Real>(&self, system: System) -> Result<Loaded<F>> {
        let path = self.model_path(system);
        match system {
            System::Standalone => {
                if !path.exists() {
                    return Err(Error::MissingArtifact(path));
                }
                Ok(Loaded::Single(ModelParams::load(path)?))
            }
            _ => Ok(Loaded::Ensemble(EnsembleModel::load(path)?)),
        }
    }

    fn evaluate<F: Real>(&self) -> Result<Vec<PathBuf>> {
        let test = Self::load_data(self.test_path())?;
        let rc = self.config.report_config()?;
        let mut reports = Vec::new();
        for &system in self.systems() {
            let loaded = self.load_system::<F>(system)?;
            reports.extend(score_clean(loaded.predictor(), &test, &rc, system.name())?);
        }
        write_file(&self.clean_csv_path(), uqmetrics::csv_string(&reports).as_bytes())?;
        write_file(&self.clean_json_path(), &serde_json::to_vec_pretty(&reports)?)?;
        Ok(vec![self.clean_csv_path(), self.clean_json_path()])
    }

    fn attack<F: Real>(&self) -> Result<Vec<PathBuf>> {
        let attacks = &self.config.attack;
        if attacks.pnr_over_snr.is_none() && attacks.snr_over_pnr.is_none() {
            return Ok(Vec::new());
        }
        let test = Self::load_data(self.test_path())?;
        let rc = self.config.report_config()?;
        let systems: Vec<(System, Loaded<F>)> = self
            .systems()
            .iter()
            .map(|&s| self.load_system::<F>(s).map(|l| (s, l)))
            .collect::<Result<_>>()?;
        let mut written = Vec::new();

        if let Some(a) = &attacks.pnr_over_snr {
            let mut rows = Vec::new();
            for (system, loaded) in &systems {
                let surrogate = self.config.surrogate_for(*system);
                let strength = Strength::TargetPnrDb(a.pnr_db);
                let attacked = craft(loaded.surrogate(surrogate)?, &test, strength)?;
                let reports = score_attacked(loaded.predictor(), &test, &attacked, &rc, system.name())?;
                for (report, point) in reports.into_iter().zip(&attacked.points) {
                    rows.push(AttackRow {
                        sweep: PNR_OVER_SNR.into(),
                        target_pnr_db: Some(a.pnr_db),
                        epsilon: point.epsilon,
                        realized_pnr_db: finite(point.realized_pnr_db),
                        report,
                    });
                }
                let path = self
                    .out
                    .join(format!("data/attacked/{}_{PNR_OVER_SNR}.sigset", system.name()));
                perturbed_dataset(&test, &attacked, AttackConfig { strength, surrogate }.record())?.save(&path)?;
                written.push(path);
            }
            written.extend(self.write_attack(PNR_OVER_SNR, &rows)?);
        }

        if let Some(a) = &attacks.snr_over_pnr {
            let slice = test.filter(|f| f.snr_db == a.snr_db);
            let mut rows = Vec::new();
            for (system, loaded) in &systems {
                for report in score_clean(loaded.predictor(), &slice, &rc, system.name())? {
                    rows.push(AttackRow {
                        sweep: SNR_OVER_PNR.into(),
                        target_pnr_db: None,
                        epsilon: 0.0,
                        realized_pnr_db: None,
                        report,
                    });
                }
                let surrogate = loaded.surrogate(self.config.surrogate_for(*system))?;
                for &p in &a.pnr_db {
                    let attacked = craft(surrogate, &slice, Strength::TargetPnrDb(p))?;
                    let reports = score_attacked(loaded.predictor(), &slice, &attacked, &rc, system.name())?;
                    for (report, point) in reports.into_iter().zip(&attacked.points) {
                        rows.push(AttackRow {
                            sweep: SNR_OVER_PNR.into(),
                            target_pnr_db: Some(p),
                            epsilon: point.epsilon,
                            realized_pnr_db: finite(point.realized_pnr_db),
                            report,
                        });
                    }
                }
            }
            written.extend(self.write_attack(SNR_OVER_PNR, &rows)?);
        }
        Ok(written)
    }

    fn write_attack(&self, sweep: &str, rows: &[AttackRow]) -> Result<Vec<PathBuf>> {
        let (csv, json) = (self.attack_csv_path(sweep), self.attack_json_path(sweep));
        write_file(&csv, attack_csv(rows).as_bytes())?;
        write_file(&json, &serde_json::to_vec_pretty(rows)?)?;
        Ok(vec![csv, json])
    }

    fn report(&self) -> Result<Vec<PathBuf>> {
        let clean: Vec<MetricsReport> = read_json(&self.clean_json_path())?;
        let mut written = Vec::new();
        let fig = |name: &str| self.out.join("figures").join(format!("{name}.svg"));

        type Metric = (&'static str, fn(&MetricsReport) -> f64);
        let metrics: [Metric; 8] = [
            ("accuracy", |r| r.accuracy),
            ("nll", |r| r.nll),
            ("brier", |r| r.brier),
            ("ece", |r| r.ece),
            ("mean_kl", |r| r.mean_kl),
            ("coverage_strict", |r| r.coverage_strict),
            ("coverage_relaxed", |r| r.coverage_relaxed),
            ("high_confidence_proportion", |r| r.high_confidence_proportion),
        ];
        let systems = systems_in(clean.iter());
        for (name, get) in metrics {
            let series = systems
                .iter()
                .map(|s| Series {
                    name: s.clone(),
                    points: clean
                        .iter()
                        .filter(|r| &r.system == s)
                        .map(|r| (r.snr_db.unwrap_or(f64::NAN), get(r)))
                        .collect(),
                })
                .collect::<Vec<_>>();
            let mut data = format!("system,snr_db,{name}\n");
            for r in &clean {
                data.push_str(&format!("{},{},{}\n", r.system, uqmetrics::field(r.snr_db), get(r)));
            }
            let path = fig(&format!("clean_{name}"));
            write_file(
                &path,
                plot::line_chart(&format!("{name} vs SNR"), "SNR (dB)", name, &series, &data).as_bytes(),
            )?;
            written.push(path);
        }

        for s in &systems {
            let rows: Vec<&MetricsReport> = clean.iter().filter(|r| &r.system == s).collect();
            let mut data = String::from("snr_db,edge_low,edge_high,correct,incorrect\n");
            let violins: Vec<Violin> = rows
                .iter()
                .map(|r| {
                    let h = &r.ci_width_histogram;
                    for k in 0..h.correct.len() {
                        data.push_str(&format!(
                            "{},{},{},{},{}\n",
                            uqmetrics::field(r.snr_db),
                            h.edges[k],
                            h.edges[k + 1],
                            h.correct[k],
                            h.incorrect[k]
                        ));
                    }
                    Violin {
                        label: uqmetrics::field(r.snr_db),
                        edges: h.edges.clone(),
                        left: h.correct.clone(),
                        right: h.incorrect.clone(),
                    }
                })
                .collect();
            let path = fig(&format!("ci_width_{s}"));
            let title = format!("CI width by SNR ({s})");
            write_file(
                &path,
                plot::violin_chart(&title, "CI width", ("correct", "incorrect"), &violins, &data).as_bytes(),
            )?;
            written.push(path);
        }

        let sweeps = [
            (PNR_OVER_SNR, self.config.attack.pnr_over_snr.is_some(), "SNR (dB)"),
            (
                SNR_OVER_PNR,
                self.config.attack.snr_over_pnr.is_some(),
                "target PNR (dB)",
            ),
        ];
        for (sweep, enabled, x_label) in sweeps {
            if !enabled {
                continue;
            }
            let rows: Vec<AttackRow> = read_json(&self.attack_json_path(sweep))?;
            let systems = systems_in(rows.iter().map(|r| &r.report));
            let x = |r: &AttackRow| match sweep {
                PNR_OVER_SNR => r.report.snr_db.unwrap_or(f64::NAN),
                _ => r.target_pnr_db.unwrap_or(f64::NAN),
            };
            let series: Vec<Series> = systems
                .iter()
                .map(|s| Series {
                    name: s.clone(),
                    points: rows
                        .iter()
                        .filter(|r| &r.report.system == s && r.target_pnr_db.is_some())
                        .map(|r| (x(r), r.report.accuracy))
                        .collect(),
                })
                .collect();
            let path = fig(&format!("attack_{sweep}_accuracy"));
            let title = format!("accuracy under FGSM ({sweep})");
            write_file(
                &path,
                plot::line_chart(&title, x_label, "accuracy", &series, &attack_csv(&rows)).as_bytes(),
            )?;
            written.push(path);
        }
        Ok(written)
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn systems_in<'a>(reports: impl Iterator<Item = &'a MetricsReport>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in reports {
        if !out.contains(&r.system) {
            out.push(r.system.clone());
        }
    }
    out
}

pub fn attack_csv(rows: &[AttackRow]) -> String {
    let mut s = format!("{ATTACK_CSV_PREFIX},{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.sweep,
            uqmetrics::field(r.target_pnr_db),
            r.epsilon,
            uqmetrics::field(r.realized_pnr_db),
            csv_row(&r.report)
        ));
    }
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::PIPELINE.into_iter().chain([Stage::Run]) {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn output_dir_required() {
        let cfg = ExperimentConfig::from_toml(
            "seed = 1\n[dataset]\nschemes = [\"BPSK\", \"OOK\"]\nsnr_grid_db = [0]\nframes_per_cell = 2\nframe_len = 16\n[ensemble]\nmembers = 1\n",
        )
        .unwrap();
        assert!(matches!(
            Experiment::new(cfg.clone(), Overrides::default()),
            Err(Error::Config(_))
        ));
        let e = Experiment::new(
            cfg,
            Overrides {
                out: Some("x".into()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(e.out_dir(), Path::new("x"));
    }
}
