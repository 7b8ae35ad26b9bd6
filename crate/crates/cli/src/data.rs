use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use atvc_scene::{
    image_filename, load_dataset, load_png, recreation_filename, AnswerType, Dataset, QueryRecord, Scene,
    ANNOTATION_FILE, IMAGE_DIR, RECREATION_DIR,
};
use atvc_seq::{build_sequence, TokenSequence, TransformerConfig};
use atvc_text::Vocabulary;
use atvc_vq::VqModel;
use image::RgbImage;

/// Fail with a pointer to the subcommand that produces `path`.
pub fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        bail!("{} not found; run `atvc {producer}` first", path.display());
    }
    Ok(())
}

/// A generated dataset directory.
pub struct Corpus {
    pub dir: PathBuf,
    pub dataset: Dataset,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        require(&dir.join(ANNOTATION_FILE), "gen")?;
        let dataset = load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
        Ok(Corpus {
            dir: dir.to_path_buf(),
            dataset,
        })
    }

    pub fn input_path(&self, scene: &Scene) -> PathBuf {
        self.dir.join(IMAGE_DIR).join(image_filename(scene))
    }

    pub fn gold_path(&self, q: &QueryRecord) -> PathBuf {
        self.dir.join(RECREATION_DIR).join(recreation_filename(q))
    }

    pub fn input_image(&self, scene: &Scene) -> Result<RgbImage> {
        Ok(load_png(&self.input_path(scene))?)
    }

    pub fn gold_image(&self, q: &QueryRecord) -> Result<Option<RgbImage>> {
        if q.answer_type != AnswerType::Can {
            return Ok(None);
        }
        Ok(Some(load_png(&self.gold_path(q))?))
    }

    /// The first `subset` pairs in dataset order, or all of them.
    pub fn pairs(&self, subset: Option<usize>) -> Vec<(&Scene, &QueryRecord)> {
        let all = self.dataset.pairs();
        match subset {
            Some(n) => all.take(n).collect(),
            None => all.collect(),
        }
    }

    pub fn find_scene(&self, scene_id: &str) -> Option<&Scene> {
        self.dataset
            .entries
            .iter()
            .map(|e| &e.scene)
            .find(|s| s.scene_id == scene_id)
    }

    /// Input images and re-creations, split by scene: the trailing
    /// `heldout_fraction` of scenes (at least one when the fraction is
    /// positive) go to the held-out set.
    pub fn stage1_split(&self, heldout_fraction: f64) -> Result<(Vec<RgbImage>, Vec<RgbImage>)> {
        let n = self.dataset.entries.len();
        let mut held = (n as f64 * heldout_fraction).ceil() as usize;
        if held >= n && n > 0 {
            held = n - 1;
        }
        let (mut train, mut heldout) = (Vec::new(), Vec::new());
        for (i, e) in self.dataset.entries.iter().enumerate() {
            let bucket = if i + held >= n { &mut heldout } else { &mut train };
            bucket.push(self.input_image(&e.scene)?);
            for q in &e.queries {
                if let Some(img) = self.gold_image(q)? {
                    bucket.push(img);
                }
            }
        }
        Ok((train, heldout))
    }
}

/// Stage-2 model shape with vocabulary, codebook and grid taken from the data.
pub fn seq_config(base: &TransformerConfig, vq: &VqModel, vocab: &Vocabulary) -> TransformerConfig {
    TransformerConfig {
        text_vocab: vocab.len(),
        codebook_size: vq.config.codebook_size,
        grid: vq.grid_size(),
        ..base.clone()
    }
}

/// Token sequences for the given pairs, with images encoded by `vq`.
pub fn encode_pairs(
    corpus: &Corpus,
    pairs: &[(&Scene, &QueryRecord)],
    vq: &VqModel,
    cfg: &TransformerConfig,
    vocab: &Vocabulary,
) -> Result<Vec<TokenSequence>> {
    let mut inputs = Vec::with_capacity(pairs.len());
    for (scene, _) in pairs {
        inputs.push(atvc_vq::image_to_tensor(&corpus.input_image(scene)?));
    }
    let v_grids = vq.encode_batch(&inputs)?;
    let mut out = Vec::with_capacity(pairs.len());
    for ((_, q), v) in pairs.iter().zip(&v_grids) {
        let question = vocab.encode(&q.question, cfg.text_len)?;
        let answer = vocab.encode_answer(&q.answer, cfg.answer_len)?;
        let m = match corpus.gold_image(q)? {
            Some(img) => Some(vq.encode_image(&img)?.indices),
            None => None,
        };
        let rejected = q.answer_type != AnswerType::Can;
        out.push(build_sequence(
            cfg,
            &q.query_id,
            &question,
            &v.indices,
            m.as_deref(),
            &answer,
            rejected,
        )?);
    }
    Ok(out)
}
