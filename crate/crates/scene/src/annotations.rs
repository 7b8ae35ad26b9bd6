//! Dataset generation and the JSON annotation file.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SceneError};
use crate::queries::{enumerate_queries, make_record, parse_question, QueryRecord};
use crate::render::{render, save_png};
use crate::rules::{Action, AnswerType};
use crate::scene::{dataset_scene, splitmix64, Scene, SceneConfig, SceneObject};
use crate::vocab::{Color, Material, Shape, Size};

pub const ANNOTATION_FILE: &str = "annotations.json";
pub const IMAGE_DIR: &str = "images";
pub const RECREATION_DIR: &str = "recreations";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub scenes: usize,
    pub scene: SceneConfig,
    pub allow_ambiguous: bool,
    /// Stamped into every date field; fixed so output is byte-reproducible.
    pub created: String,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            scenes: 100,
            scene: SceneConfig::default(),
            allow_ambiguous: false,
            created: "2024-01-01 00:00:00".to_string(),
        }
    }
}

impl DatasetConfig {
    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneEntry {
    pub scene: Scene,
    pub queries: Vec<QueryRecord>,
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub entries: Vec<SceneEntry>,
}

impl Dataset {
    pub fn pairs(&self) -> impl Iterator<Item = (&Scene, &QueryRecord)> {
        self.entries
            .iter()
            .flat_map(|e| e.queries.iter().map(move |q| (&e.scene, q)))
    }
}

/// Query-sampling seed for a scene, independent of its layout stream.
pub fn query_seed(scene: &Scene) -> u64 {
    splitmix64(scene.rng_seed ^ 0x5155_4552_5953)
}

pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    let mut entries = Vec::with_capacity(config.scenes);
    for idx in 0..config.scenes {
        let scene = dataset_scene(config.seed, idx, &config.scene)?;
        let mut rng = ChaCha8Rng::seed_from_u64(query_seed(&scene));
        let plan = enumerate_queries(&scene, &mut rng, config.allow_ambiguous)?;
        entries.push(SceneEntry {
            scene,
            queries: plan.queries,
            fallback: plan.fallback,
        });
    }
    Ok(Dataset {
        config: config.clone(),
        entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct License {
    pub id: String,
    pub url: String,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub index: usize,
    pub category_id: usize,
    pub size_id: usize,
    pub color_id: usize,
    pub bbox: [u32; 4],
    /// `(col, row, z)`; z is 0.70 on the ground plus 1.05 per stack level.
    #[serde(rename = "3d_coords")]
    pub coords: [f64; 3],
    pub material_id: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_idx: String,
    pub image_filename: String,
    pub id: String,
    pub object_number: usize,
    pub data_created: String,
    pub objects: Vec<ObjectEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct QuesEntry {
    pub ques_id: usize,
    pub ques_idx: usize,
    pub id: String,
    #[serde(rename = "type")]
    pub kind: u8,
    pub Q: Vec<String>,
    pub A: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionGroup {
    pub question_idx: String,
    pub question_id: String,
    pub question_number: usize,
    pub ques: Vec<QuesEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecreationAction {
    pub actions_id: usize,
    pub actions_idx: usize,
    pub rec_filename: String,
    pub object_number: usize,
    pub date_created: String,
    pub objects: Vec<ObjectEntry>,
}

/// One entry per query; `actions` is empty unless the query can be carried out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecreationEntry {
    pub rec_idx: String,
    pub rec_id: String,
    pub rec_num: usize,
    pub actions: Vec<RecreationAction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub seed: u64,
    pub scenes: usize,
    pub image_size: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub allow_ambiguous: bool,
    pub config_hash: String,
    pub code_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub contributor: String,
    pub data_created: String,
    pub url: String,
    pub description: String,
    pub vertion: String,
    pub licenses: License,
    pub categories: Vec<String>,
    pub sizes: Vec<String>,
    pub colors: Vec<String>,
    pub material: Vec<String>,
    pub actions: Vec<String>,
    pub images: Vec<ImageEntry>,
    pub questions: Vec<QuestionGroup>,
    pub recreations: Vec<RecreationEntry>,
    pub generator: GeneratorInfo,
}

fn joined<T: Copy>(all: &[T], word: impl Fn(T) -> &'static str) -> Vec<String> {
    vec![all.iter().map(|&v| word(v)).collect::<Vec<_>>().join(", ")]
}

fn object_entry(o: &SceneObject) -> ObjectEntry {
    ObjectEntry {
        index: o.index,
        category_id: o.shape.id(),
        size_id: o.size.id(),
        color_id: o.color.id(),
        bbox: o.bbox,
        coords: [o.cell.1 as f64, o.cell.0 as f64, 0.70 + 1.05 * o.level as f64],
        material_id: o.material.id(),
    }
}

fn object_from_entry(e: &ObjectEntry) -> Result<SceneObject> {
    let bad = |what: &str| SceneError::Parse(format!("object {}: bad {what}", e.index));
    let level = ((e.coords[2] - 0.70) / 1.05).round();
    if level < 0.0 || e.coords[0] < 0.0 || e.coords[1] < 0.0 {
        return Err(bad("3d_coords"));
    }
    Ok(SceneObject {
        index: e.index,
        shape: Shape::from_id(e.category_id).ok_or_else(|| bad("category_id"))?,
        size: Size::from_id(e.size_id).ok_or_else(|| bad("size_id"))?,
        color: Color::from_id(e.color_id).ok_or_else(|| bad("color_id"))?,
        material: Material::from_id(e.material_id).ok_or_else(|| bad("material_id"))?,
        cell: (e.coords[1] as usize, e.coords[0] as usize),
        level: level as usize,
        depth_rank: 0,
        bbox: e.bbox,
    })
}

pub fn image_filename(scene: &Scene) -> String {
    format!("{}.png", scene.scene_id)
}

pub fn recreation_filename(q: &QueryRecord) -> String {
    format!("{}.png", q.query_id)
}

pub fn to_annotations(ds: &Dataset) -> AnnotationFile {
    let cfg = &ds.config;
    let mut images = Vec::new();
    let mut questions = Vec::new();
    let mut recreations = Vec::new();
    let mut rec_counter = 0usize;
    for (i, e) in ds.entries.iter().enumerate() {
        images.push(ImageEntry {
            image_idx: format!("{:07}", i + 1),
            image_filename: image_filename(&e.scene),
            id: e.scene.scene_id.clone(),
            object_number: e.scene.objects.len(),
            data_created: cfg.created.clone(),
            objects: e.scene.objects.iter().map(object_entry).collect(),
        });
        questions.push(QuestionGroup {
            question_idx: format!("{:07}", i + 1),
            question_id: e.scene.scene_id.clone(),
            question_number: e.queries.len(),
            ques: e
                .queries
                .iter()
                .map(|q| QuesEntry {
                    ques_id: q.ques_id,
                    ques_idx: q.ques_id + 1,
                    id: q.query_id.clone(),
                    kind: q.answer_type.code(),
                    Q: vec![q.question.clone()],
                    A: vec![q.answer.clone()],
                })
                .collect(),
        });
        for q in &e.queries {
            rec_counter += 1;
            let actions: Vec<RecreationAction> = q
                .recreated
                .iter()
                .map(|r| RecreationAction {
                    actions_id: q.ques_id,
                    actions_idx: q.ques_id + 1,
                    rec_filename: recreation_filename(q),
                    object_number: r.objects.len(),
                    date_created: cfg.created.clone(),
                    objects: r.objects.iter().map(object_entry).collect(),
                })
                .collect();
            recreations.push(RecreationEntry {
                rec_idx: format!("{rec_counter:07}"),
                rec_id: q.query_id.clone(),
                rec_num: actions.len(),
                actions,
            });
        }
    }
    AnnotationFile {
        contributor: "atvc scene generator".into(),
        data_created: cfg.created.clone(),
        url: String::new(),
        description: "ATVC synthetic scenes".into(),
        vertion: "1.0".into(),
        licenses: License {
            id: "1".into(),
            url: "https://creativecommons.org/licenses/by/4.0/".into(),
            name: "Creative Commons Attribution (CC-BY 4.0)".into(),
        },
        categories: joined(Shape::ALL, Shape::word),
        sizes: joined(Size::ALL, Size::word),
        colors: joined(Color::ALL, Color::word),
        material: joined(Material::ALL, Material::word),
        actions: joined(Action::ALL, Action::phrase),
        images,
        questions,
        recreations,
        generator: GeneratorInfo {
            seed: cfg.seed,
            scenes: cfg.scenes,
            image_size: cfg.scene.image_size,
            min_objects: cfg.scene.min_objects,
            max_objects: cfg.scene.max_objects,
            allow_ambiguous: cfg.allow_ambiguous,
            config_hash: cfg.hash(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    }
}

/// Rebuild the in-memory dataset, checking every derived field against the file.
pub fn from_annotations(file: &AnnotationFile, created: &str) -> Result<Dataset> {
    let g = &file.generator;
    let config = DatasetConfig {
        seed: g.seed,
        scenes: g.scenes,
        scene: SceneConfig {
            image_size: g.image_size,
            min_objects: g.min_objects,
            max_objects: g.max_objects,
            ..SceneConfig::default()
        },
        allow_ambiguous: g.allow_ambiguous,
        created: created.to_string(),
    };
    if file.images.len() != file.questions.len() {
        return Err(SceneError::Parse("images and questions differ in length".into()));
    }
    let mut recs = file.recreations.iter();
    let mut entries = Vec::new();
    for (img, group) in file.images.iter().zip(&file.questions) {
        let idx: usize = img
            .image_idx
            .parse::<usize>()
            .ok()
            .and_then(|i| i.checked_sub(1))
            .ok_or_else(|| SceneError::Parse(format!("bad image_idx `{}`", img.image_idx)))?;
        let mut scene = Scene {
            scene_id: img.id.clone(),
            objects: img.objects.iter().map(object_from_entry).collect::<Result<_>>()?,
            image_size: g.image_size,
            rng_seed: splitmix64(g.seed ^ idx as u64),
        };
        let stored: Vec<[u32; 4]> = scene.objects.iter().map(|o| o.bbox).collect();
        scene.refresh_geometry()?;
        scene.validate(None)?;
        if group.question_id != scene.scene_id {
            return Err(SceneError::Parse(format!(
                "questions for `{}` listed under `{}`",
                scene.scene_id, group.question_id
            )));
        }
        if scene.objects.iter().map(|o| o.bbox).ne(stored) {
            return Err(SceneError::Parse(format!(
                "{}: bbox disagrees with the layout",
                scene.scene_id
            )));
        }
        let mut queries = Vec::new();
        for q in &group.ques {
            let text =
                q.Q.first()
                    .ok_or_else(|| SceneError::Parse(format!("{}: empty Q", q.id)))?;
            let (action, a, b) = parse_question(text)?;
            let rec = make_record(&scene, q.ques_id, action, a, b)?;
            let stored_type = AnswerType::from_code(q.kind);
            if rec.query_id != q.id || Some(rec.answer_type) != stored_type || q.A.first() != Some(&rec.answer) {
                return Err(SceneError::Parse(format!("{}: answer disagrees with the scene", q.id)));
            }
            let entry = recs
                .next()
                .ok_or_else(|| SceneError::Parse(format!("{}: no recreation entry", q.id)))?;
            let stored_rec = match entry.actions.as_slice() {
                [] => None,
                [act] => {
                    let mut s = scene.clone();
                    s.objects = act.objects.iter().map(object_from_entry).collect::<Result<_>>()?;
                    s.refresh_geometry()?;
                    Some(s)
                }
                _ => return Err(SceneError::Parse(format!("{}: several recreation actions", q.id))),
            };
            if entry.rec_id != q.id || stored_rec != rec.recreated {
                return Err(SceneError::Parse(format!(
                    "{}: recreation disagrees with the rules",
                    q.id
                )));
            }
            queries.push(rec);
        }
        entries.push(SceneEntry {
            scene,
            queries,
            fallback: false,
        });
    }
    Ok(Dataset { config, entries })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `annotations.json`, input images and ground-truth re-creations under `out_dir`.
pub fn write_dataset(ds: &Dataset, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    for e in &ds.entries {
        save_png(
            &render(&e.scene)?,
            &out_dir.join(IMAGE_DIR).join(image_filename(&e.scene)),
        )?;
        for q in &e.queries {
            if let Some(r) = &q.recreated {
                save_png(&render(r)?, &out_dir.join(RECREATION_DIR).join(recreation_filename(q)))?;
            }
        }
    }
    let path = out_dir.join(ANNOTATION_FILE);
    let json = serde_json::to_string_pretty(&to_annotations(ds)).expect("annotations serialize");
    fs::write(&path, json).map_err(io_err(&path))?;
    Ok(path)
}

pub fn read_annotations(path: &Path) -> Result<AnnotationFile> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| SceneError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a dataset directory written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let file = read_annotations(&dir.join(ANNOTATION_FILE))?;
    from_annotations(&file, &file.data_created.clone())
}
