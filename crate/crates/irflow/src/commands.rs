//! The workflow behind each CLI verb.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use irflow_core::data::{patchify, DegradationSpec, Image, NoiseToTarget, NoisyPatches, PairSet};
use irflow_core::mct::{LossRecord, PairSource, Trainer};
use irflow_core::metrics::{energy_distance, MetricsReport};
use irflow_core::model::Checkpoint;
use irflow_core::restore::{baseline, evaluate, Tiling};
use irflow_core::rng::{derive_seed, stream as rng_stream};
use irflow_core::sampler::solve;
use irflow_core::velocity::transport_energy;
use irflow_core::{SamplerConfig, Tensor, TimeConditionedNet, VelocityMode};

use crate::checkpoint;
use crate::config::{RunConfig, Task};
use crate::error::{Error, Result};
use crate::fmt::sig;
use crate::pnm;
use crate::report;

/// Sub-streams of the run seed.
pub mod stream {
    pub const CORPUS: u64 = 1;
    pub const DEGRADE: u64 = 2;
    pub const INIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const SAMPLE: u64 = 5;
    pub const TARGET: u64 = 6;
}

pub const MANIFEST: &str = "manifest.json";
pub const POINTS: &str = "points.csv";
pub const LOSS_LOG: &str = "loss.log";
pub const REPORT: &str = "report.json";
pub const SAMPLES: &str = "samples.csv";

/// Command-line values that replace config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub steps: Option<usize>,
    pub lambda_mct: Option<f64>,
    pub mode: Option<VelocityMode>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.steps {
            cfg.sampler.steps = v;
        }
        if let Some(v) = self.lambda_mct {
            cfg.train.lambda_mct = Some(v);
        }
        if let Some(v) = self.mode {
            cfg.train.mode = v;
        }
        if let Some(v) = self.sigma {
            cfg.data.sigma = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.paths.output = v.clone();
        }
        if let Some(v) = &self.corpus {
            cfg.paths.corpus = v.clone();
        }
        if let Some(v) = &self.checkpoint {
            cfg.paths.checkpoint = v.clone();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DegradationRecord {
    GaussianNoise {
        sigma: f64,
    },
    RainStreaks {
        density: f64,
        angle_deg: f64,
        length: f64,
        intensity: f64,
    },
}

impl DegradationRecord {
    fn of(spec: &DegradationSpec) -> Self {
        match spec {
            DegradationSpec::GaussianNoise { sigma, .. } => DegradationRecord::GaussianNoise { sigma: *sigma },
            DegradationSpec::RainStreaks(r) => DegradationRecord::RainStreaks {
                density: r.density,
                angle_deg: r.angle_deg,
                length: r.length,
                intensity: r.intensity,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestImage {
    pub index: usize,
    pub clean: String,
    pub degraded: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub task: Task,
    pub seed: u64,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degradation: Option<DegradationRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<ManifestImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<String>,
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn json_string<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// `x,y` rows with 9 significant digits.
pub fn points_csv(points: &Tensor) -> String {
    let mut out = String::new();
    for row in points.data().chunks(2) {
        out.push_str(&format!("{},{}\n", sig(row[0], 9), sig(row[1], 9)));
    }
    out
}

pub fn parse_points_csv(text: &str) -> Result<Tensor> {
    let mut data = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed: Option<Vec<f64>> = fields.iter().map(|f| f.trim().parse().ok()).collect();
        match parsed {
            Some(v) if v.len() == 2 => data.extend(v),
            _ => return Err(Error::Config(format!("points line {}: expected `x,y`", n + 1))),
        }
    }
    let n = data.len() / 2;
    Ok(Tensor::new(vec![n, 2], data)?)
}

#[derive(Debug)]
pub struct GenSummary {
    pub files: Vec<PathBuf>,
}

/// Writes a clean/degraded image corpus or a point set, plus the manifest.
pub fn gen_data(cfg: &RunConfig) -> Result<GenSummary> {
    cfg.validate()?;
    let dir = &cfg.paths.corpus;
    create_dir(dir)?;
    let mut files = Vec::new();
    let corpus_seed = derive_seed(cfg.seed, stream::CORPUS);
    let manifest = match cfg.task {
        Task::Toy2d => {
            let toy = cfg.toy()?;
            let points = toy.sample(cfg.data.count, corpus_seed)?;
            let path = dir.join(POINTS);
            write_file(&path, points_csv(&points).as_bytes())?;
            files.push(path);
            Manifest {
                task: cfg.task,
                seed: cfg.seed,
                count: cfg.data.count,
                size: None,
                degradation: None,
                images: Vec::new(),
                dataset: Some(toy.name().into()),
                points: Some(POINTS.into()),
            }
        }
        Task::Denoise | Task::Derain => {
            let clean = irflow_core::data::gen_clean_corpus(cfg.data.count, cfg.data.size, corpus_seed)?;
            let degrade_seed = derive_seed(cfg.seed, stream::DEGRADE);
            let mut images = Vec::new();
            for (i, img) in clean.iter().enumerate() {
                let seed = derive_seed(degrade_seed, i as u64);
                let spec = cfg.degradation(seed).expect("image task");
                let (degraded, _) = spec.apply(img)?;
                let entry = ManifestImage {
                    index: i,
                    clean: format!("clean_{i:04}.pgm"),
                    degraded: format!("degraded_{i:04}.pgm"),
                    seed,
                };
                for (name, im) in [(&entry.clean, img), (&entry.degraded, &degraded)] {
                    let path = dir.join(name);
                    pnm::save(&path, im)?;
                    files.push(path);
                }
                images.push(entry);
            }
            Manifest {
                task: cfg.task,
                seed: cfg.seed,
                count: cfg.data.count,
                size: Some(cfg.data.size),
                degradation: cfg.degradation(0).as_ref().map(DegradationRecord::of),
                images,
                dataset: None,
                points: None,
            }
        }
    };
    let path = dir.join(MANIFEST);
    write_file(&path, json_string(&manifest).as_bytes())?;
    files.push(path);
    Ok(GenSummary { files })
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn corpus_manifest(cfg: &RunConfig) -> Result<Manifest> {
    let m = load_manifest(&cfg.paths.corpus)?;
    if m.task != cfg.task {
        return Err(Error::Config(format!(
            "corpus holds a {:?} dataset but the config task is {:?}",
            m.task, cfg.task
        )));
    }
    Ok(m)
}

/// `(clean, degraded)` images listed in the corpus manifest.
pub fn load_image_pairs(cfg: &RunConfig) -> Result<Vec<(Image, Image)>> {
    let m = corpus_manifest(cfg)?;
    if m.images.is_empty() {
        return Err(Error::Core(irflow_core::Error::Empty("corpus")));
    }
    m.images
        .iter()
        .map(|e| {
            Ok((
                pnm::load(&cfg.paths.corpus.join(&e.clean))?,
                pnm::load(&cfg.paths.corpus.join(&e.degraded))?,
            ))
        })
        .collect()
}

pub fn load_points(cfg: &RunConfig) -> Result<Tensor> {
    let m = corpus_manifest(cfg)?;
    let path = cfg.paths.corpus.join(m.points.as_deref().unwrap_or(POINTS));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let pts = parse_points_csv(&text)?;
    if pts.shape()[0] == 0 {
        return Err(Error::Core(irflow_core::Error::Empty("point set")));
    }
    Ok(pts)
}

/// The training pair source for the configured task.
pub fn training_source(cfg: &RunConfig) -> Result<Box<dyn PairSource>> {
    let d = &cfg.data;
    Ok(match cfg.task {
        Task::Toy2d => Box::new(NoiseToTarget::new(&load_points(cfg)?)?),
        Task::Denoise => {
            let clean: Vec<Image> = load_image_pairs(cfg)?.into_iter().map(|(c, _)| c).collect();
            let range = d.sigma_range.map_or((d.sigma, d.sigma), |[lo, hi]| (lo, hi));
            Box::new(NoisyPatches::from_images(&clean, d.patch, d.stride, range)?)
        }
        Task::Derain => {
            let mut pairs = Vec::new();
            for (clean, degraded) in load_image_pairs(cfg)? {
                let a = patchify(&clean, d.patch, d.stride)?;
                let b = patchify(&degraded, d.patch, d.stride)?;
                pairs.extend(a.into_iter().zip(b));
            }
            Box::new(PairSet::new(&pairs)?)
        }
    })
}

/// Loss-log line: `iter,L_S,L_MCT,L_total,lr` with 6 significant digits.
pub fn loss_line(r: &LossRecord) -> String {
    format!(
        "{},{},{},{},{}",
        r.iter,
        sig(r.matching, 6),
        sig(r.consistency, 6),
        sig(r.total, 6),
        sig(r.lr, 6)
    )
}

fn check_arch(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<()> {
    let want = cfg.arch();
    let have = &ckpt.arch;
    if have.input_dim != want.input_dim || have.hidden != want.hidden || have.time_features != want.time_features {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint network is {}→{:?}→{} with {} time features, config expects {}→{:?}→{} with {}",
            have.input_dim,
            have.hidden,
            have.input_dim,
            have.time_features,
            want.input_dim,
            want.hidden,
            want.input_dim,
            want.time_features
        )));
    }
    Ok(())
}

pub fn load_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let ckpt = checkpoint::load(&cfg.paths.checkpoint)?;
    check_arch(cfg, &ckpt)?;
    Ok(ckpt)
}

#[derive(Debug)]
pub struct TrainSummary {
    pub iterations: u64,
    pub records: Vec<LossRecord>,
}

/// Trains on the corpus, writing the loss log and the final checkpoint.
/// With `resume`, continues from the configured checkpoint and appends
/// to the existing log.
pub fn train(cfg: &RunConfig, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    let source = training_source(cfg)?;
    let tc = cfg.train_config();
    let mut trainer = if resume {
        let ckpt = load_checkpoint(cfg)?;
        Trainer::resume(tc, &ckpt)?
    } else {
        let net = TimeConditionedNet::init(&cfg.arch(), derive_seed(cfg.seed, stream::INIT))?;
        Trainer::new(tc, net)?
    };
    create_dir(&cfg.paths.output)?;
    let log_path = cfg.paths.output.join(LOSS_LOG);
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut records = Vec::new();
    let mut write_err = None;
    let outcome = trainer.run(
        source.as_ref(),
        |_| {},
        |r| {
            if write_err.is_none() {
                write_err = writeln!(log, "{}", loss_line(r)).err();
            }
            records.push(*r);
        },
    );
    let flushed = log.flush();
    if let Some(e) = write_err.or(flushed.err()) {
        return Err(Error::Io {
            path: log_path,
            source: e,
        });
    }
    outcome?;
    if let Some(parent) = cfg.paths.checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    checkpoint::save(&cfg.paths.checkpoint, &trainer.checkpoint(cfg.to_json()))?;
    Ok(TrainSummary {
        iterations: trainer.iteration(),
        records,
    })
}

fn image_task(cfg: &RunConfig) -> Result<()> {
    if cfg.task == Task::Toy2d {
        return Err(Error::Config("this command needs an image task".into()));
    }
    Ok(())
}

/// Restores every degraded corpus image with the configured step count.
pub fn restore(cfg: &RunConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    image_task(cfg)?;
    let ckpt = load_checkpoint(cfg)?;
    let net = ckpt.network().map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    let pairs = load_image_pairs(cfg)?;
    let tiling = Tiling::new(cfg.data.patch, cfg.data.restore_stride)?;
    let sampler = SamplerConfig::new(cfg.sampler.steps, ckpt.mode);
    let (outputs, metrics) = evaluate(&net, &pairs, tiling, &sampler)?;
    create_dir(&cfg.paths.output)?;
    for (i, img) in outputs.iter().enumerate() {
        pnm::save(&cfg.paths.output.join(format!("restored_{i:04}.pgm")), img)?;
    }
    write_file(&cfg.paths.output.join(REPORT), report::to_json(&metrics).as_bytes())?;
    Ok(metrics)
}

/// Scores images against the corpus' clean references: the degraded
/// inputs with `baseline`, otherwise `restored_%04d.pgm` from `images`.
pub fn eval(cfg: &RunConfig, images: Option<&Path>, use_baseline: bool) -> Result<MetricsReport> {
    image_task(cfg)?;
    let pairs = load_image_pairs(cfg)?;
    if use_baseline {
        return Ok(baseline(&pairs)?);
    }
    let dir = images.unwrap_or(&cfg.paths.output);
    let scored = pairs
        .iter()
        .enumerate()
        .map(|(i, (clean, _))| Ok((clean.clone(), pnm::load(&dir.join(format!("restored_{i:04}.pgm")))?)))
        .collect::<Result<Vec<_>>>()?;
    let per = baseline(&scored)?.per_image;
    Ok(MetricsReport::from_images(per, cfg.sampler.steps)?)
}

#[derive(Debug)]
pub struct SampleSummary {
    pub samples: Tensor,
    pub energy_distance: f64,
}

/// Pushes fresh Gaussian draws through the learned flow and scores them
/// against a fresh sample of the target distribution.
pub fn sample2d(cfg: &RunConfig) -> Result<SampleSummary> {
    cfg.validate()?;
    if cfg.task != Task::Toy2d {
        return Err(Error::Config("sample2d needs task toy2d".into()));
    }
    let ckpt = load_checkpoint(cfg)?;
    let net = ckpt.network().map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    let n = cfg.sampler.samples;
    let x1 = irflow_core::data::standard_normal(n, 2, &mut rng_stream(derive_seed(cfg.seed, stream::SAMPLE)))?;
    let out = solve(&net, &x1, &SamplerConfig::new(cfg.sampler.steps, ckpt.mode))?.output;
    let reference = cfg.toy()?.sample(n, derive_seed(cfg.seed, stream::TARGET))?;
    let score = energy_distance(&out, &reference)?;
    create_dir(&cfg.paths.output)?;
    write_file(&cfg.paths.output.join(SAMPLES), points_csv(&out).as_bytes())?;
    Ok(SampleSummary {
        samples: out,
        energy_distance: score,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergySummary {
    pub standard: f64,
    pub cumulative: f64,
}

impl EnergySummary {
    pub fn ratio(&self) -> f64 {
        self.cumulative / self.standard
    }
}

/// Transport energy of both velocity fields over the corpus pairs. For
/// toy2d the sources are seeded standard normal draws.
pub fn energy(cfg: &RunConfig) -> Result<EnergySummary> {
    let pairs: Vec<(Tensor, Tensor)> = match cfg.task {
        Task::Toy2d => {
            let pts = load_points(cfg)?;
            let n = pts.shape()[0];
            let noise =
                irflow_core::data::standard_normal(n, 2, &mut rng_stream(derive_seed(cfg.seed, stream::SAMPLE)))?;
            let vec2 = |r: &[f64]| Tensor::new(vec![2], r.to_vec());
            (0..n)
                .map(|i| Ok((vec2(pts.row(i))?, vec2(noise.row(i))?)))
                .collect::<Result<_>>()?
        }
        _ => load_image_pairs(cfg)?
            .into_iter()
            .map(|(c, d)| (c.to_tensor(), d.to_tensor()))
            .collect(),
    };
    Ok(EnergySummary {
        standard: transport_energy(&pairs, VelocityMode::Standard)?,
        cumulative: transport_energy(&pairs, VelocityMode::Cumulative)?,
    })
}

pub fn energy_text(e: &EnergySummary) -> String {
    format!(
        "standard_energy: {}\ncumulative_energy: {}\nratio: {}\n",
        sig(e.standard, 6),
        sig(e.cumulative, 6),
        if e.standard > 0.0 {
            sig(e.ratio(), 6)
        } else {
            "undefined".into()
        }
    )
}
