//! Run configuration, read from TOML. Unknown keys are errors.
//!
//! ```toml
//! seed = 7
//! frames = 41
//! prompt = "a ball bounces"
//!
//! [[scene]]
//! mesh = "ball.obj"
//!
//! [init]
//! shell_target = 7500
//!
//! [train]
//! iterations = 2000
//! lr_fenwick = [0.006, 0.00006]
//! noise_weight = { family = "logit-normal", loc = 0.0, scale = 1.0 }
//!
//! [oracle]
//! kind = "pointmass"
//! target = "target.ptrk"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use fenwarp_core::distill::NoiseWeight;
use fenwarp_core::optim::{InitConfig, Range, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frames")]
    pub frames: usize,
    /// Scene-level conditioning text passed to the oracle.
    #[serde(default)]
    pub prompt: Option<String>,
    #[serde(default)]
    pub scene: Vec<ObjectSpec>,
    #[serde(default)]
    pub init: InitSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_frames() -> usize {
    fenwarp_core::optim::DEFAULT_FRAMES
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub mesh: PathBuf,
    #[serde(default)]
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub shell_target: usize,
    pub tau_factor: f64,
    pub coarse: usize,
    pub fine: usize,
    pub k: usize,
}

impl Default for InitSection {
    fn default() -> Self {
        let d = InitConfig::default();
        InitSection {
            shell_target: d.shell_target,
            tau_factor: d.tau_factor,
            coarse: d.coarse,
            fine: d.fine,
            k: d.k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSpec {
    Uniform {},
    LogitNormal {
        #[serde(default)]
        loc: f64,
        #[serde(default = "one")]
        scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl From<NoiseSpec> for NoiseWeight {
    fn from(s: NoiseSpec) -> NoiseWeight {
        match s {
            NoiseSpec::Uniform {} => NoiseWeight::Uniform,
            NoiseSpec::LogitNormal { loc, scale } => NoiseWeight::LogitNormal { loc, scale },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub iterations: usize,
    pub batch: usize,
    pub lr_fenwick: [f64; 2],
    pub lr_rot: [f64; 2],
    pub cfg: [f64; 2],
    pub temporal_weight: [f64; 2],
    pub arap_weight: [f64; 2],
    pub fine_start: f64,
    pub split_iter: usize,
    pub clamp_frame: usize,
    pub noise_weight: NoiseSpec,
}

fn pair(r: Range) -> [f64; 2] {
    [r.start, r.end]
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSection {
            iterations: d.iterations,
            batch: d.batch,
            lr_fenwick: pair(d.lr_fenwick),
            lr_rot: pair(d.lr_rot),
            cfg: pair(d.cfg),
            temporal_weight: pair(d.temporal_weight),
            arap_weight: pair(d.arap_weight),
            fine_start: d.fine_start,
            split_iter: d.split_iter,
            clamp_frame: d.clamp_frame,
            noise_weight: NoiseSpec::LogitNormal { loc: 0.0, scale: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OracleSpec {
    /// All data mass at the tracks in `target`.
    Pointmass { target: PathBuf },
    /// Isotropic Gaussian data around the tracks in `mean`.
    Gaussian { mean: PathBuf, sigma: f64 },
    /// Predictions recorded in an RFRV file.
    Replay { path: PathBuf },
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(CliError::Config("frames must be at least 1".into()));
        }
        let i = &self.init;
        if i.shell_target == 0 || i.coarse == 0 || i.fine == 0 || i.k == 0 {
            return Err(CliError::Config("init counts must be at least 1".into()));
        }
        if !(i.tau_factor > 0.0 && i.tau_factor.is_finite()) {
            return Err(CliError::Config("init.tau_factor must be positive".into()));
        }
        if let Some(OracleSpec::Gaussian { sigma, .. }) = &self.oracle {
            if !(*sigma > 0.0 && sigma.is_finite()) {
                return Err(CliError::Config("oracle.sigma must be positive".into()));
            }
        }
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            frames: self.frames,
            shell_target: self.init.shell_target,
            tau_factor: self.init.tau_factor,
            coarse: self.init.coarse,
            fine: self.init.fine,
            k: self.init.k,
        }
    }

    /// Scene prompt followed by the object prompts, separated by `"; "`.
    pub fn cond(&self) -> String {
        self.prompt
            .iter()
            .chain(self.scene.iter().filter_map(|o| o.prompt.as_ref()))
            .filter(|p| !p.is_empty())
            .cloned()
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let r = |p: [f64; 2]| Range::new(p[0], p[1]);
        TrainConfig {
            iterations: t.iterations,
            batch: t.batch,
            lr_fenwick: r(t.lr_fenwick),
            lr_rot: r(t.lr_rot),
            cfg: r(t.cfg),
            temporal_weight: r(t.temporal_weight),
            arap_weight: r(t.arap_weight),
            fine_start: t.fine_start,
            split_iter: t.split_iter,
            clamp_frame: t.clamp_frame,
            seed: self.seed,
            noise_weight: t.noise_weight.into(),
            cond: self.cond(),
            ..TrainConfig::default()
        }
    }
}
