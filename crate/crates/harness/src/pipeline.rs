//! Training stages and their on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flashdiff_core::autoencoder::{train_autoencoder, Autoencoder, AutoencoderReport};
use flashdiff_core::data::{generate_corpus, Corpus};
use flashdiff_core::latent_diffusion::{train_score, DiffusionSchedule, ScoreModel, ScoreReport};
use flashdiff_core::nn::TimeEmbedding;
use flashdiff_core::numerics::{RngStream, Tensor};
use flashdiff_core::severity::{train_severity, SeverityEncoder, SeverityReport};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::config::{ExperimentConfig, FamilyKind};
use crate::error::{io_err, HarnessError, Result};
use crate::metrics::fmt_f64;
use crate::models::*;

/// Layout of an output directory.
#[derive(Debug, Clone)]
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.fldc")
    }
    pub fn corpus_meta(&self) -> PathBuf {
        self.root.join("corpus_meta.csv")
    }
    pub fn ae(&self) -> PathBuf {
        self.root.join("ae.fldc")
    }
    pub fn score(&self) -> PathBuf {
        self.root.join("score.fldc")
    }
    pub fn sev(&self, kind: FamilyKind) -> PathBuf {
        self.root.join(format!("sev_{}.fldc", kind.tag()))
    }
    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join(format!("log_{name}.csv"))
    }
    pub fn stage_timing(&self, stage: &str) -> PathBuf {
        self.root.join(format!("timing_{stage}.csv"))
    }
    pub fn experiment(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Root stream for everything after corpus generation.
pub fn root_stream(cfg: &ExperimentConfig) -> RngStream {
    RngStream::new(cfg.seed, 1)
}

pub fn schedule(cfg: &ExperimentConfig) -> Result<DiffusionSchedule> {
    Ok(cfg.schedule.build()?)
}

pub fn embedding(cfg: &ExperimentConfig) -> Result<TimeEmbedding> {
    Ok(TimeEmbedding::new(cfg.score.embedding_dim, cfg.schedule.steps as f64)?)
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).map_err(io_err(path))
}

fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    Ok(save_checkpoint(ckpt, path)?)
}

fn require(path: PathBuf, stage: &'static str) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(HarnessError::MissingStage { stage, path });
    }
    Ok(load_checkpoint(&path)?)
}

fn record_timing(out: &OutDir, stage: &str, started: Instant) -> Result<()> {
    write_text(
        out.stage_timing(stage),
        &format!("stage,seconds\n{stage},{:.3}\n", started.elapsed().as_secs_f64()),
    )
}

pub fn corpus_meta_csv(corpus: &Corpus) -> String {
    let mut out = String::from("id,split,tau,t\n");
    for s in corpus.iter() {
        let t = s.t.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", s.id, s.split.as_str(), fmt_f64(s.tau), t);
    }
    out
}

pub fn gen_data(cfg: &ExperimentConfig, out: &OutDir) -> Result<Corpus> {
    let started = Instant::now();
    out.create()?;
    let c = &cfg.corpus;
    let corpus = generate_corpus(&c.image, c.n_train, c.n_val, c.n_test, cfg.seed)?;
    save(&corpus_to_checkpoint(&corpus), &out.corpus())?;
    write_text(out.corpus_meta(), &corpus_meta_csv(&corpus))?;
    record_timing(out, "gen-data", started)?;
    Ok(corpus)
}

pub fn load_corpus(cfg: &ExperimentConfig, out: &OutDir) -> Result<Corpus> {
    let ckpt = require(out.corpus(), "gen-data")?;
    let corpus = corpus_from_checkpoint(&ckpt, &cfg.corpus.image, cfg.seed)?;
    let sizes = (corpus.train.len(), corpus.val.len(), corpus.test.len());
    if sizes != (cfg.corpus.n_train, cfg.corpus.n_val, cfg.corpus.n_test) {
        return Err(HarnessError::Invalid(format!(
            "{} holds splits {sizes:?} but the config asks for ({}, {}, {}); rerun gen-data",
            out.corpus().display(),
            cfg.corpus.n_train,
            cfg.corpus.n_val,
            cfg.corpus.n_test
        )));
    }
    Ok(corpus)
}

pub fn train_ae(cfg: &ExperimentConfig, out: &OutDir) -> Result<(Autoencoder, AutoencoderReport)> {
    let started = Instant::now();
    let corpus = load_corpus(cfg, out)?;
    let train: Vec<&Tensor> = corpus.train.iter().map(|s| &s.image).collect();
    let val: Vec<&Tensor> = corpus.val.iter().map(|s| &s.image).collect();
    let mut rng = root_stream(cfg).domain("ae", 0);
    let (ae, report) = train_autoencoder(&train, &val, &cfg.autoencoder, &mut rng)?;
    save(&ae_to_checkpoint(&ae), &out.ae())?;
    let mut log = String::from("epoch,train_mse\n");
    for (e, m) in report.train_mse.iter().enumerate() {
        let _ = writeln!(log, "{e},{}", fmt_f64(*m));
    }
    let _ = writeln!(log, "# val_mse = {}, threshold = {}", fmt_f64(report.val_mse), fmt_f64(report.threshold));
    write_text(out.log("train_ae"), &log)?;
    if !report.meets_threshold() {
        eprintln!(
            "warning: autoencoder validation MSE {} is above the threshold {}",
            report.val_mse, report.threshold
        );
    }
    record_timing(out, "train-ae", started)?;
    Ok((ae, report))
}

pub fn load_ae(cfg: &ExperimentConfig, out: &OutDir) -> Result<Autoencoder> {
    ae_from_checkpoint(&require(out.ae(), "train-ae")?, cfg.image_shape())
}

pub fn train_score_stage(cfg: &ExperimentConfig, out: &OutDir) -> Result<(ScoreModel, ScoreReport)> {
    let started = Instant::now();
    let corpus = load_corpus(cfg, out)?;
    let ae = load_ae(cfg, out)?;
    let encode = |s: &flashdiff_core::data::Sample| ae.encode(&s.image);
    let train: Vec<Tensor> = corpus.train.iter().map(encode).collect::<flashdiff_core::Result<_>>()?;
    let val: Vec<Tensor> = corpus.val.iter().map(encode).collect::<flashdiff_core::Result<_>>()?;
    let sched = schedule(cfg)?;
    let root = root_stream(cfg);
    let mut score = ScoreModel::new(
        cfg.autoencoder.latent_dim,
        &cfg.score.hidden,
        embedding(cfg)?,
        &mut root.domain("score.init", 0),
    )?;
    let report = train_score(&mut score, &train, &val, &sched, &cfg.score, &root.domain("score.train", 0))?;
    save(&score_to_checkpoint(&score), &out.score())?;
    let mut log = String::from("window,train_loss\n");
    for (w, l) in report.windowed_loss.iter().enumerate() {
        let _ = writeln!(log, "{w},{}", fmt_f64(*l));
    }
    let _ = writeln!(
        log,
        "# val_loss initial = {}, final = {}",
        fmt_f64(report.val_loss_initial),
        fmt_f64(report.val_loss_final)
    );
    write_text(out.log("train_score"), &log)?;
    record_timing(out, "train-score", started)?;
    Ok((score, report))
}

pub fn load_score(cfg: &ExperimentConfig, out: &OutDir) -> Result<ScoreModel> {
    score_from_checkpoint(&require(out.score(), "train-score")?, embedding(cfg)?)
}

pub fn train_sev_stage(cfg: &ExperimentConfig, out: &OutDir) -> Result<Vec<(FamilyKind, SeverityReport)>> {
    let started = Instant::now();
    let corpus = load_corpus(cfg, out)?;
    let ae = load_ae(cfg, out)?;
    let root = root_stream(cfg);
    let mut reports = Vec::new();
    for kind in FamilyKind::ALL {
        let tag = kind.tag();
        let mut se = SeverityEncoder::from_autoencoder(&ae, &mut root.domain(&format!("sev.init.{tag}"), 0));
        let report = train_severity(
            &mut se,
            &ae,
            &corpus.train,
            &corpus.val,
            cfg.family(kind),
            &cfg.severity,
            &root.domain(&format!("sev.train.{tag}"), 0),
        )?;
        save(&sev_to_checkpoint(&se), &out.sev(kind))?;
        let mut log = String::from("epoch,total,latent,error,image\n");
        for (e, l) in report.val_loss.iter().enumerate() {
            let _ = writeln!(
                log,
                "{e},{},{},{},{}",
                fmt_f64(l.total),
                fmt_f64(l.latent),
                fmt_f64(l.error),
                fmt_f64(l.image)
            );
        }
        write_text(out.log(&format!("train_sev_{tag}")), &log)?;
        reports.push((kind, report));
    }
    record_timing(out, "train-sev", started)?;
    Ok(reports)
}

pub fn load_sev(out: &OutDir, kind: FamilyKind) -> Result<SeverityEncoder> {
    sev_from_checkpoint(&require(out.sev(kind), "train-sev")?)
}

/// Everything the experiments read.
pub struct Artifacts {
    pub corpus: Corpus,
    pub ae: Autoencoder,
    pub score: ScoreModel,
    pub sev_gaussian: SeverityEncoder,
    pub sev_nonlinear: SeverityEncoder,
    pub sched: DiffusionSchedule,
}

impl Artifacts {
    pub fn load(cfg: &ExperimentConfig, out: &OutDir) -> Result<Self> {
        Ok(Self {
            corpus: load_corpus(cfg, out)?,
            ae: load_ae(cfg, out)?,
            score: load_score(cfg, out)?,
            sev_gaussian: load_sev(out, FamilyKind::Gaussian)?,
            sev_nonlinear: load_sev(out, FamilyKind::Nonlinear)?,
            sched: schedule(cfg)?,
        })
    }

    pub fn sev(&self, kind: FamilyKind) -> &SeverityEncoder {
        match kind {
            FamilyKind::Gaussian => &self.sev_gaussian,
            FamilyKind::Nonlinear => &self.sev_nonlinear,
        }
    }
}
