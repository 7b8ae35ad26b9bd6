use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use atvc_eval::{
    aggregate, auto_rank, export_hr_manifest, import_hr_ranks, score_pair, EvalReport, ManifestRow, PairResult,
};
use atvc_scene::{generate_dataset, save_png, write_dataset, AnswerType, ANNOTATION_FILE};
use atvc_seq::{
    memorization_ceiling, segment_accuracy, LogRecord, Segment, SegmentAccuracy, Stage2Trainer, Transformer,
};
use atvc_text::{normalize, Vocabulary};
use atvc_vq::{image_to_tensor, EpochLog, Stage1Trainer, VqModel};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::artifact::{write_json, Header, JsonLog};
use crate::config::{ResponderKind, RunConfig};
use crate::data::{encode_pairs, require, seq_config, Corpus};
use crate::responder::{GoldResponder, ModelResponder, Responder, RuleResponder, Turn};

fn with_suffix(path: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub scenes: usize,
    pub pairs: usize,
    pub can: usize,
    pub cannot: usize,
    pub forbidden: usize,
    pub fallback_scenes: usize,
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<GenSummary> {
    let ds = generate_dataset(&cfg.dataset_config())?;
    write_dataset(&ds, &cfg.paths.data)?;
    let count = |t| ds.pairs().filter(|(_, q)| q.answer_type == t).count();
    let summary = GenSummary {
        scenes: ds.entries.len(),
        pairs: ds.pairs().count(),
        can: count(AnswerType::Can),
        cannot: count(AnswerType::Cannot),
        forbidden: count(AnswerType::Forbidden),
        fallback_scenes: ds.entries.iter().filter(|e| e.fallback).count(),
    };
    write_json(&cfg.paths.data.join("gen.json"), &Header::new("gen", cfg), &summary)?;
    info!(
        "wrote {} scenes and {} pairs to {}",
        summary.scenes,
        summary.pairs,
        cfg.paths.data.join(ANNOTATION_FILE).display()
    );
    Ok(summary)
}

fn psnr_of_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        atvc_eval::PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(atvc_eval::PSNR_CAP)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Train1Summary {
    pub variant: String,
    pub train_images: usize,
    pub heldout_images: usize,
    pub steps: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub heldout_mse: Option<f64>,
    pub heldout_psnr: Option<f64>,
    /// Training time until held-out PSNR first exceeded 25 dB, measured at epoch ends.
    pub seconds_to_25db: Option<f64>,
    pub seconds: f64,
}

pub fn cmd_train1(cfg: &RunConfig) -> Result<Train1Summary> {
    let corpus = Corpus::load(&cfg.paths.data)?;
    let (train, heldout) = corpus.stage1_split(cfg.stage1.heldout_fraction)?;
    let train: Vec<_> = train.iter().map(image_to_tensor).collect();
    let heldout: Vec<_> = heldout.iter().map(image_to_tensor).collect();
    let model = VqModel::new(cfg.stage1.model.clone())?;
    let mut trainer = Stage1Trainer::new(model)?;
    let header = Header::new("train1", cfg);
    let mut log = JsonLog::create(&with_suffix(&cfg.paths.stage1, ".log.jsonl"), &header)?;
    let start = Instant::now();
    let mut to_25 = None;
    let mut log_err = None;
    let epochs = trainer.fit(&train, &heldout, |e: &EpochLog| {
        let psnr = e.heldout_mse.map(psnr_of_mse);
        if to_25.is_none() && psnr.is_some_and(|p| p > 25.0) {
            to_25 = Some(start.elapsed().as_secs_f64());
        }
        info!(
            "epoch {} step {} loss {:.5} held-out PSNR {}",
            e.epoch,
            e.steps,
            e.train_loss,
            psnr.map_or("-".into(), |p| format!("{p:.2}"))
        );
        if let Err(err) = log.push(&serde_json::json!({ "epoch": e, "heldout_psnr": psnr })) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let seconds = start.elapsed().as_secs_f64();
    let last = epochs.last().context("no training epoch ran")?;
    let heldout_mse = (!heldout.is_empty())
        .then(|| atvc_vq::reconstruction_mse(&trainer.model, &heldout))
        .transpose()?;
    let summary = Train1Summary {
        variant: cfg.stage1.model.variant.to_string(),
        train_images: train.len(),
        heldout_images: heldout.len(),
        steps: trainer.steps(),
        epochs: trainer.epoch(),
        final_loss: last.train_loss,
        heldout_mse,
        heldout_psnr: heldout_mse.map(psnr_of_mse),
        seconds_to_25db: to_25,
        seconds,
    };
    let meta = atvc_vq::CheckpointMeta::new(&trainer.model.config, trainer.steps(), trainer.epoch());
    trainer.model.save(&cfg.paths.stage1, &meta)?;
    write_json(&with_suffix(&cfg.paths.stage1, ".summary.json"), &header, &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Train2Summary {
    pub pairs: usize,
    pub steps: u64,
    pub final_loss: f32,
    pub accuracy: SegmentAccuracy,
    /// Best weighted accuracy any predictor can reach on these sequences.
    pub ceiling: f64,
    /// Accuracy on targets outside the question segment.
    pub accuracy_without_question: f64,
    pub seconds: f64,
}

pub fn cmd_train2(cfg: &RunConfig) -> Result<Train2Summary> {
    require(&cfg.paths.stage1, "train1")?;
    let corpus = Corpus::load(&cfg.paths.data)?;
    let (vq, _) = VqModel::load(&cfg.paths.stage1)?;
    let vocab = Vocabulary::default();
    let scfg = seq_config(&cfg.stage2.model, &vq, &vocab);
    let pairs = corpus.pairs(cfg.stage2.subset);
    if pairs.is_empty() {
        bail!("no pairs to train on");
    }
    let seqs = encode_pairs(&corpus, &pairs, &vq, &scfg, &vocab)?;
    let header = Header::new("train2", cfg);
    let mut log = JsonLog::create(&with_suffix(&cfg.paths.stage2, ".log.jsonl"), &header)?;
    let mut trainer = Stage2Trainer::new(Transformer::new(scfg.clone())?, cfg.stage2.train.clone())?;
    let start = Instant::now();
    let mut log_err = None;
    let records = trainer.fit(&seqs, |r: &LogRecord| {
        if r.step % 50 == 0 || r.step == 1 {
            info!("step {} loss {:.5} acc {:.4}", r.step, r.loss, r.accuracy);
        }
        if let Err(e) = log.push(r) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let seconds = start.elapsed().as_secs_f64();
    let accuracy = segment_accuracy(&trainer.model, &seqs, cfg.stage2.train.batch_size)?;
    let final_loss = records.last().map_or(f32::NAN, |r| r.loss);
    let summary = Train2Summary {
        pairs: seqs.len(),
        steps: trainer.steps(),
        final_loss,
        accuracy_without_question: accuracy.excluding(&[Segment::T]),
        accuracy,
        ceiling: memorization_ceiling(&seqs),
        seconds,
    };
    let meta = atvc_seq::CheckpointMeta::new(&scfg, trainer.steps(), Some(final_loss));
    trainer.model.save(&cfg.paths.stage2, &meta)?;
    write_json(&with_suffix(&cfg.paths.stage2, ".summary.json"), &header, &summary)?;
    Ok(summary)
}

/// Build the responder named in the configuration.
pub fn load_responder(
    cfg: &RunConfig,
    kind: ResponderKind,
    decoding: atvc_seq::Decoding,
) -> Result<Box<dyn Responder>> {
    Ok(match kind {
        ResponderKind::Gold => Box::new(GoldResponder),
        ResponderKind::Rules => Box::new(RuleResponder),
        ResponderKind::Model => {
            require(&cfg.paths.stage1, "train1")?;
            require(&cfg.paths.stage2, "train2")?;
            let (vq, _) = VqModel::load(&cfg.paths.stage1)?;
            let (seq, _) = Transformer::load(&cfg.paths.stage2)?;
            if seq.config.codebook_size != vq.config.codebook_size || seq.config.grid != vq.grid_size() {
                bail!("stage-2 checkpoint was trained against a different stage-1 codec; rerun `atvc train2`");
            }
            Box::new(ModelResponder {
                vq,
                seq,
                vocab: Vocabulary::default(),
                decoding,
            })
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub responder: ResponderKind,
    pub report: EvalReport,
    /// Pairs whose answer text equals the ground truth exactly.
    pub exact_answers: usize,
    pub seconds: f64,
    pub pairs: Vec<PairResult>,
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalOutput> {
    let corpus = Corpus::load(&cfg.paths.data)?;
    let responder = load_responder(cfg, cfg.eval.responder, cfg.eval.decoding)?;
    let pairs = corpus.pairs(cfg.eval.subset);
    if pairs.is_empty() {
        bail!("no pairs to evaluate");
    }
    let out_dir = &cfg.paths.report;
    let pred_dir = out_dir.join("pred");
    fs::create_dir_all(&pred_dir).with_context(|| format!("creating {}", pred_dir.display()))?;
    let start = Instant::now();
    let mut results = Vec::with_capacity(pairs.len());
    let mut manifest = Vec::new();
    let mut exact = 0;
    for (scene, q) in &pairs {
        let image = corpus.input_image(scene)?;
        let turn = Turn {
            image: &image,
            instruction: &q.question,
            scene: Some(scene),
            gold: Some(q),
        };
        let reply = responder
            .respond(&turn)
            .map_err(|e| anyhow::anyhow!("{}: {e}", q.query_id))?;
        if normalize(&reply.answer) == normalize(&q.answer) {
            exact += 1;
        }
        let rank = match (&reply.image, q.answer_type) {
            (Some(img), AnswerType::Can) => Some(auto_rank(img, scene, q, &cfg.eval.rank)?),
            (None, AnswerType::Can) => Some(atvc_eval::Rank::C),
            _ => None,
        };
        if q.answer_type == AnswerType::Can {
            let pred_path = pred_dir.join(format!("{}.png", q.query_id));
            if let Some(img) = &reply.image {
                save_png(img, &pred_path)?;
            }
            manifest.push(ManifestRow {
                query_id: q.query_id.clone(),
                v_path: corpus.input_path(scene).display().to_string(),
                question: q.question.clone(),
                pred_m_path: reply
                    .image
                    .as_ref()
                    .map_or(String::new(), |_| pred_path.display().to_string()),
                gold_m_path: corpus.gold_path(q).display().to_string(),
                pred_answer: reply.answer.clone(),
                gold_answer: q.answer.clone(),
                rank: None,
            });
        }
        results.push(score_pair(q, &reply.answer, reply.image.as_ref(), rank)?);
    }
    if let Some(path) = &cfg.eval.hr_ranks {
        let ids: BTreeSet<String> = manifest.iter().map(|r| r.query_id.clone()).collect();
        let ranks = import_hr_ranks(path, &ids)?;
        for r in results.iter_mut().filter(|r| r.answer_type == AnswerType::Can) {
            r.hr_rank = ranks.get(&r.query_id).copied();
            r.fm = r.recompute_fm();
        }
    }
    let report = aggregate(&results, cfg.eval.formula)?;
    let header = Header::new("eval", cfg);
    export_hr_manifest(&manifest, &out_dir.join("hr_manifest.jsonl"))?;
    let output = EvalOutput {
        responder: cfg.eval.responder,
        report,
        exact_answers: exact,
        seconds: start.elapsed().as_secs_f64(),
        pairs: results,
    };
    write_json(&out_dir.join("report.json"), &header, &output)?;
    let table = format!(
        "{}\nexact answers {}/{}\n",
        output.report.render_table(),
        output.exact_answers,
        output.report.total
    );
    fs::write(out_dir.join("report.txt"), &table).with_context(|| format!("writing {}", out_dir.display()))?;
    info!("\n{table}");
    Ok(output)
}

pub fn build_service(cfg: &RunConfig) -> Result<axum::Router> {
    let responder = load_responder(cfg, cfg.serve.responder, cfg.serve.decoding)?;
    let scenes = if cfg.paths.data.join(ANNOTATION_FILE).exists() {
        let corpus = Corpus::load(&cfg.paths.data)?;
        corpus
            .dataset
            .entries
            .into_iter()
            .take(cfg.serve.max_scenes)
            .map(|e| e.scene)
            .collect()
    } else {
        tracing::warn!("no dataset at {}; only uploads are available", cfg.paths.data.display());
        Vec::new()
    };
    let state = crate::service::AppState::new(
        responder.into(),
        scenes,
        crate::service::ServiceOptions {
            image_size: cfg.gen.image_size,
            single_turn: cfg.serve.single_turn,
            max_upload_bytes: cfg.serve.max_upload_bytes,
        },
    );
    Ok(crate::service::router(
        std::sync::Arc::new(state),
        cfg.serve.static_dir.as_deref(),
    ))
}

pub async fn cmd_serve(cfg: &RunConfig) -> Result<()> {
    let app = build_service(cfg)?;
    crate::service::serve(&format!("{}:{}", cfg.serve.host, cfg.serve.port), app).await
}
