use std::path::{Path, PathBuf};

use gvlm_core::model::{Dims, ModelConfig, Stage, TrainConfig};
use gvlm_core::scene::DEFAULT_SAMPLE_SIZE;
use gvlm_core::sparsifier::{Variant, ROI_STEP_M};
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const SEED_ENV: &str = "GVLM_SEED";

/// Settings of a `pretrain` or `train` run. Every key is optional; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub tau: f64,
    /// Falls back to `GVLM_SEED`, then 0. Always written out explicitly.
    pub seed: Option<u64>,
    pub variant: Variant,
    pub roi_radius_m: f64,
    pub n_sample: usize,
    pub dims: Dims,
    /// Scene files (`.gsvl` or JSON mirror) or directories of them.
    pub scenes: Vec<PathBuf>,
    /// Pretraining only: scenes scored for held-out retrieval.
    pub held_out: Vec<PathBuf>,
    /// Instruct stage only: counting QA lines to train on instead of
    /// questions generated from the scene annotations.
    pub qa: Option<PathBuf>,
    /// Checkpoint to continue from.
    pub init_ckpt: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Pretraining only: locations sampled per object.
    pub clicks: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        Self {
            stage: t.stage,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_max: t.lr_max,
            lr_min: t.lr_min,
            weight_decay: t.weight_decay,
            tau: t.tau,
            seed: None,
            variant: Variant::Full,
            roi_radius_m: ROI_STEP_M,
            n_sample: DEFAULT_SAMPLE_SIZE,
            dims: m.dims,
            scenes: Vec::new(),
            held_out: Vec::new(),
            qa: None,
            init_ckpt: None,
            out_dir: PathBuf::from("run"),
            clicks: 4,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub variant: Option<Variant>,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        serde_json::from_str(text).map_err(|e| Failure::Usage(format!("config: {e}")))
    }

    /// File (if any), then flags, then the seed fallback chain.
    pub fn load(path: Option<&Path>, flags: &Overrides) -> Result<Self, Failure> {
        let mut c = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                Self::parse(&text)?
            }
            None => Self::default(),
        };
        if let Some(s) = flags.seed {
            c.seed = Some(s);
        }
        if let Some(e) = flags.epochs {
            c.epochs = e;
        }
        if let Some(v) = flags.variant {
            c.variant = v;
        }
        if let Some(o) = &flags.out_dir {
            c.out_dir = o.clone();
        }
        if c.seed.is_none() {
            c.seed = Some(env_seed()?.unwrap_or(0));
        }
        Ok(c)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            stage: self.stage,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            weight_decay: self.weight_decay,
            seed: self.seed(),
            tau: self.tau,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig { dims: self.dims.clone(), variant: self.variant, roi_radius_m: self.roi_radius_m, n_sample: self.n_sample }
    }

    /// Checks values and input paths before any work starts.
    pub fn validate(&self) -> Result<(), Failure> {
        self.train().validate().map_err(|e| Failure::Usage(e.to_string()))?;
        self.model().validate().map_err(|e| Failure::Usage(e.to_string()))?;
        if self.clicks == 0 {
            return Err(Failure::Usage("clicks must be at least 1".into()));
        }
        if self.scenes.is_empty() {
            return Err(Failure::Usage("config lists no scenes".into()));
        }
        for p in self.scenes.iter().chain(&self.held_out).chain(&self.qa).chain(&self.init_ckpt) {
            if !p.exists() {
                return Err(Failure::Usage(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Writes the effective config into the output directory.
    pub fn echo(&self) -> Result<PathBuf, Failure> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Failure::Data(format!("{}: {e}", self.out_dir.display())))?;
        let path = self.out_dir.join("effective_config.json");
        let text = serde_json::to_string_pretty(self).expect("config serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn env_seed() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Flag seed, then `GVLM_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>) -> Result<u64, Failure> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = RunConfig::parse("{}").unwrap();
        assert_eq!(c.variant, Variant::Full);
        assert_eq!(c.roi_radius_m, 0.15);
        assert_eq!(c.n_sample, 40_000);
    }

    #[test]
    fn unknown_key_lists_valid_ones() {
        let e = RunConfig::parse(r#"{"rio_radius": 0.3}"#).unwrap_err().to_string();
        assert!(e.contains("rio_radius") && e.contains("roi_radius_m"), "{e}");
    }

    #[test]
    fn type_mismatch_is_rejected() {
        assert!(RunConfig::parse(r#"{"epochs": "five"}"#).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::parse(r#"{"epochs": 3, "variant": "knn_downsample", "dims": {"d_f": 16}}"#).unwrap();
        c.seed = Some(9);
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 4, "epochs": 2}"#).unwrap();
        let c = RunConfig::load(Some(&p), &Overrides { seed: Some(8), ..Default::default() }).unwrap();
        assert_eq!((c.seed, c.epochs), (Some(8), 2));
    }
}
