use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use atvc_eval::{RankConfig, ScoreFormula};
use atvc_scene::{DatasetConfig, SceneConfig};
use atvc_seq::{Decoding, TrainConfig, TransformerConfig};
use atvc_vq::VqConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub stage1: PathBuf,
    pub stage2: PathBuf,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: "run/data".into(),
            stage1: "run/stage1.ckpt".into(),
            stage2: "run/stage2.ckpt".into(),
            report: "run/report".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub scenes: usize,
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub allow_ambiguous: bool,
    pub created: String,
}

impl Default for GenSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        GenSection {
            scenes: 200,
            image_size: d.scene.image_size,
            min_objects: d.scene.min_objects,
            max_objects: d.scene.max_objects,
            allow_ambiguous: d.allow_ambiguous,
            created: d.created,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Section {
    /// Trailing share of scenes (with their re-creations) kept out of training.
    pub heldout_fraction: f64,
    pub model: VqConfig,
}

impl Default for Stage1Section {
    fn default() -> Self {
        Stage1Section {
            heldout_fraction: 0.1,
            model: VqConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Section {
    /// Train on the first `subset` pairs in dataset order; all pairs when absent.
    pub subset: Option<usize>,
    /// Text vocabulary size, codebook size and grid are taken from the data
    /// and the stage-1 checkpoint, whatever is written here.
    pub model: TransformerConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponderKind {
    /// Stage-1 and stage-2 checkpoints.
    Model,
    /// Symbolic rule engine on known scenes.
    Rules,
    /// Echo of the ground truth; evaluation only.
    Gold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub subset: Option<usize>,
    pub responder: ResponderKind,
    pub decoding: Decoding,
    pub formula: ScoreFormula,
    pub rank: RankConfig,
    /// Graded manifest whose ranks replace the automatic ones.
    pub hr_ranks: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            subset: None,
            responder: ResponderKind::Model,
            decoding: Decoding::Greedy,
            formula: ScoreFormula::default(),
            rank: RankConfig::default(),
            hr_ranks: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
    pub responder: ResponderKind,
    pub decoding: Decoding,
    /// Keep every turn on the session's original image.
    pub single_turn: bool,
    pub max_upload_bytes: usize,
    /// Number of dataset scenes offered by the scene picker.
    pub max_scenes: usize,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            host: "127.0.0.1".into(),
            port: 8080,
            responder: ResponderKind::Model,
            decoding: Decoding::Greedy,
            single_turn: false,
            max_upload_bytes: 1 << 20,
            max_scenes: 50,
            static_dir: None,
        }
    }
}

/// Whole-pipeline configuration read from one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub gen: GenSection,
    pub stage1: Stage1Section,
    pub stage2: Stage2Section,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

impl RunConfig {
    /// Parse TOML; relative paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("invalid run configuration")?;
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.paths.data);
        fix(&mut cfg.paths.stage1);
        fix(&mut cfg.paths.stage2);
        fix(&mut cfg.paths.report);
        if let Some(p) = cfg.eval.hr_ranks.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.serve.static_dir.as_mut() {
            fix(p);
        }
        cfg.apply_seed(cfg.seed);
        cfg.stage1.model.validate()?;
        if !(0.0..1.0).contains(&cfg.stage1.heldout_fraction) {
            anyhow::bail!("stage1.heldout_fraction must lie in [0, 1)");
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base).with_context(|| format!("in {}", path.display()))
    }

    /// Set the master seed and every per-stage seed derived from it.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.stage1.model.seed = seed;
        self.stage2.model.seed = seed;
        self.stage2.train.seed = seed;
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            scenes: self.gen.scenes,
            scene: SceneConfig {
                image_size: self.gen.image_size,
                min_objects: self.gen.min_objects,
                max_objects: self.gen.max_objects,
                ..SceneConfig::default()
            },
            allow_ambiguous: self.gen.allow_ambiguous,
            created: self.gen.created.clone(),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_fills_defaults_and_propagates_seed() {
        let cfg = RunConfig::from_toml_str(
            "seed = 9\n[paths]\ndata = \"d\"\n[stage1.model]\nvariant = \"vqgan\"\n[stage2]\nsubset = 20\n",
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.paths.data, PathBuf::from("/base/d"));
        assert_eq!(cfg.stage1.model.seed, 9);
        assert_eq!(cfg.stage2.train.seed, 9);
        assert_eq!(cfg.stage2.subset, Some(20));
        assert_eq!(cfg.dataset_config().seed, 9);
        assert_eq!(cfg.stage1.model.variant, atvc_vq::Variant::Vqgan);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sed = 1", Path::new(".")).is_err());
        assert!(RunConfig::from_toml_str("[stage1.model]\nbeta2 = 1", Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.apply_seed(3);
        assert_ne!(a.hash(), b.hash());
    }
}
