//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use irflow_core::data::{DegradationSpec, RainSpec, Toy2d};
use irflow_core::mct::TrainConfig;
use irflow_core::model::ArchConfig;
use irflow_core::VelocityMode;

use crate::error::{Error, Result};

mod mode_name {
    use irflow_core::VelocityMode;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &VelocityMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<VelocityMode, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Denoise,
    Derain,
    Toy2d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RainBlock {
    pub density: f64,
    pub angle_deg: f64,
    pub length: f64,
    pub intensity: f64,
}

impl Default for RainBlock {
    fn default() -> Self {
        RainBlock {
            density: 0.05,
            angle_deg: 15.0,
            length: 10.0,
            intensity: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    /// Images (or points for toy2d) to generate.
    pub count: usize,
    /// Image side length.
    pub size: usize,
    /// Noise level on the 8-bit scale.
    pub sigma: f64,
    /// Train on noise levels drawn uniformly from this range instead of `sigma`.
    pub sigma_range: Option<[f64; 2]>,
    pub rain: RainBlock,
    pub toy: String,
    pub patch: usize,
    /// Patch stride for training.
    pub stride: usize,
    /// Tile stride for restoration; overlapping tiles are averaged.
    pub restore_stride: usize,
}

impl Default for DataBlock {
    fn default() -> Self {
        DataBlock {
            count: 64,
            size: 64,
            sigma: 25.0,
            sigma_range: None,
            rain: RainBlock::default(),
            toy: "two_moons".into(),
            patch: 16,
            stride: 8,
            restore_stride: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelBlock {
    pub hidden: Vec<usize>,
    pub time_features: usize,
    pub input_offset: f64,
    pub input_scale: f64,
}

impl ModelBlock {
    fn from_arch(a: ArchConfig) -> Self {
        ModelBlock {
            hidden: a.hidden,
            time_features: a.time_features,
            input_offset: a.input_offset,
            input_scale: a.input_scale,
        }
    }

    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Toy2d => ModelBlock::from_arch(ArchConfig::toy2d_default()),
            _ => ModelBlock::from_arch(ArchConfig::patch_default()),
        }
    }
}

impl Default for ModelBlock {
    fn default() -> Self {
        ModelBlock::default_for(Task::Denoise)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    /// Consistency weight; unset means 0.3 for image tasks and 0 for toy2d.
    pub lambda_mct: Option<f64>,
    pub mct_steps: [usize; 2],
    pub timesteps: u32,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr_halving_interval: Option<u64>,
    #[serde(with = "mode_name")]
    pub mode: VelocityMode,
    pub log_interval: u64,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainBlock {
            lambda_mct: None,
            mct_steps: [d.mct_steps.0, d.mct_steps.1],
            timesteps: d.timesteps,
            learning_rate: d.learning_rate,
            beta1: d.beta1,
            beta2: d.beta2,
            adam_eps: d.adam_eps,
            batch_size: d.batch_size,
            iterations: d.total_iters,
            lr_halving_interval: d.lr_halving_interval,
            mode: d.mode,
            log_interval: d.log_interval,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerBlock {
    pub steps: usize,
    /// Points drawn by `sample2d`.
    pub samples: usize,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        SamplerBlock {
            steps: 1,
            samples: 2048,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsBlock {
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

impl Default for PathsBlock {
    fn default() -> Self {
        PathsBlock {
            corpus: "corpus".into(),
            checkpoint: "model.irfw".into(),
            output: "out".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataBlock,
    /// Defaults depend on the task.
    #[serde(default)]
    pub model: Option<ModelBlock>,
    #[serde(default)]
    pub train: TrainBlock,
    #[serde(default)]
    pub sampler: SamplerBlock,
    #[serde(default)]
    pub paths: PathsBlock,
}

impl RunConfig {
    pub fn new(task: Task) -> Self {
        RunConfig {
            task,
            seed: 0,
            data: DataBlock::default(),
            model: None,
            train: TrainBlock::default(),
            sampler: SamplerBlock::default(),
            paths: PathsBlock::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::parse(&text)?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.paths.corpus, &mut cfg.paths.checkpoint, &mut cfg.paths.output] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model(&self) -> ModelBlock {
        self.model.clone().unwrap_or_else(|| ModelBlock::default_for(self.task))
    }

    pub fn input_dim(&self) -> usize {
        match self.task {
            Task::Toy2d => 2,
            _ => self.data.patch * self.data.patch,
        }
    }

    pub fn arch(&self) -> ArchConfig {
        let m = self.model();
        ArchConfig {
            input_dim: self.input_dim(),
            hidden: m.hidden,
            time_features: m.time_features,
            input_offset: m.input_offset,
            input_scale: m.input_scale,
        }
    }

    /// Noise-to-data pairs are independent, so the consistency solve can
    /// only recover their mean; toy runs train without it unless asked.
    pub fn lambda_mct(&self) -> f64 {
        self.train.lambda_mct.unwrap_or(match self.task {
            Task::Toy2d => 0.0,
            _ => TrainConfig::default().lambda_mct,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lambda_mct: self.lambda_mct(),
            mct_steps: (t.mct_steps[0], t.mct_steps[1]),
            timesteps: t.timesteps,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size,
            total_iters: t.iterations,
            seed: irflow_core::rng::derive_seed(self.seed, crate::commands::stream::TRAIN),
            lr_halving_interval: t.lr_halving_interval,
            mode: t.mode,
            log_interval: t.log_interval,
        }
    }

    pub fn toy(&self) -> Result<Toy2d> {
        Ok(self.data.toy.parse()?)
    }

    /// Degradation for corpus image `index`.
    pub fn degradation(&self, seed: u64) -> Option<DegradationSpec> {
        match self.task {
            Task::Denoise => Some(DegradationSpec::GaussianNoise {
                sigma: self.data.sigma,
                seed,
            }),
            Task::Derain => {
                let r = &self.data.rain;
                Some(DegradationSpec::RainStreaks(RainSpec {
                    density: r.density,
                    angle_deg: r.angle_deg,
                    length: r.length,
                    intensity: r.intensity,
                    seed,
                }))
            }
            Task::Toy2d => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        self.train_config().validate()?;
        if self.sampler.steps == 0 {
            return Err(Error::Config("sampler.steps must be at least 1".into()));
        }
        if self.data.count == 0 {
            return Err(Error::Config("data.count must be at least 1".into()));
        }
        if self.task != Task::Toy2d {
            let d = &self.data;
            if d.patch == 0 || d.patch > d.size || d.stride == 0 || d.restore_stride == 0 || d.restore_stride > d.patch
            {
                return Err(Error::Config(
                    "need 0 < patch <= size, stride > 0 and 0 < restore_stride <= patch".into(),
                ));
            }
        } else {
            self.toy()?;
        }
        if let Some(spec) = self.degradation(0) {
            spec.validate()?;
        }
        if let Some([lo, hi]) = self.data.sigma_range {
            if !(0.0..=50.0).contains(&lo) || !(lo..=50.0).contains(&hi) {
                return Err(Error::Config("sigma_range must satisfy 0 <= lo <= hi <= 50".into()));
            }
        }
        Ok(())
    }
}
