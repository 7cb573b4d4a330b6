//! Interchange format: scene JSON, `.f32grid` attention files and result JSON.
//!
//! All numbers are written by `serde_json`, which emits the shortest decimal
//! representation that round-trips.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::types::{
    CandidateMask, Grid, ImageMeta, LeafInstance, MultiResAttention, PlantInstance, Point, StemSegment,
};

pub const SCHEMA_VERSION: &str = "1";
pub const SCENE_FILE: &str = "scene.json";
pub const ATTENTION_DIR: &str = "attention";

/// A loaded scene: image metadata, window-local candidates, and attention
/// levels keyed by candidate id.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: ImageMeta,
    pub candidates: Vec<CandidateMask>,
    pub attention: BTreeMap<u64, MultiResAttention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleDoc {
    pub w: u32,
    pub h: u32,
    pub runs: Vec<u32>,
}

impl From<&BinaryMask> for RleDoc {
    fn from(m: &BinaryMask) -> Self {
        RleDoc { w: m.width(), h: m.height(), runs: m.runs().to_vec() }
    }
}

impl RleDoc {
    fn into_mask(self, id: u64) -> Result<BinaryMask> {
        BinaryMask::from_runs(self.w, self.h, self.runs).map_err(|e| match e {
            Error::Schema { message, .. } => Error::schema_for(id, message),
            other => other,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateDoc {
    id: u64,
    window_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_scores: Option<BTreeMap<String, f64>>,
    rle: RleDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    image: ImageMeta,
    candidates: Vec<CandidateDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attention_dir: Option<String>,
}

/// Score assigned to candidates that carry none.
pub const DEFAULT_SCORE: f64 = 1.0;

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
}

/// Writes via a temporary sibling file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec(value).expect("serializing plain data cannot fail");
    bytes.push(b'\n');
    bytes
}

// ---------------------------------------------------------------------------
// f32grid
// ---------------------------------------------------------------------------

pub fn encode_grid(grid: &Grid) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + grid.values.len() * 4);
    out.extend_from_slice(&(grid.rows as u32).to_le_bytes());
    out.extend_from_slice(&(grid.cols as u32).to_le_bytes());
    for v in &grid.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid> {
    if bytes.len() < 8 {
        return Err(Error::schema("f32grid shorter than its 8-byte header"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 4 {
        return Err(Error::schema(format!(
            "f32grid header says {rows}x{cols} but body has {} bytes",
            body.len()
        )));
    }
    let values: Vec<f32> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::schema(format!("attention value {v} is not a finite non-negative number")));
    }
    Grid::new(rows, cols, values)
}

pub fn read_grid(path: &Path) -> Result<Grid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_grid(&bytes)
}

/// File name for attention level `level` of candidate `id`.
pub fn attention_file_name(id: u64, level: usize) -> String {
    format!("att_{id}_L{level}.f32grid")
}

/// Parses `att_<id>.f32grid` (single level) or `att_<id>_L<k>.f32grid`.
fn parse_attention_name(name: &str) -> Option<(u64, Option<usize>)> {
    let stem = name.strip_prefix("att_")?.strip_suffix(".f32grid")?;
    match stem.split_once("_L") {
        Some((id, level)) => Some((id.parse().ok()?, Some(level.parse().ok()?))),
        None => Some((stem.parse().ok()?, None)),
    }
}

fn load_attention_dir(dir: &Path, ids: &BTreeSet<u64>) -> Result<BTreeMap<u64, MultiResAttention>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: BTreeMap<u64, BTreeMap<Option<usize>, PathBuf>> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some((id, level)) = parse_attention_name(&name) else { continue };
        if !ids.contains(&id) {
            return Err(Error::schema_for(id, format!("dangling attention file {name}: no such candidate")));
        }
        files.entry(id).or_default().insert(level, entry.path());
    }

    let mut out = BTreeMap::new();
    for (id, levels) in files {
        if levels.contains_key(&None) && levels.len() > 1 {
            return Err(Error::schema_for(id, "both single-level and multi-level attention files present"));
        }
        let mut grids = Vec::with_capacity(levels.len());
        for (expected, (level, path)) in levels.into_iter().enumerate() {
            if let Some(k) = level {
                if k != expected {
                    return Err(Error::schema_for(id, format!("attention level L{expected} missing")));
                }
            }
            let grid = read_grid(&path).map_err(|e| match e {
                Error::Schema { message, .. } => {
                    Error::schema_for(id, format!("{}: {message}", path.display()))
                }
                other => other,
            })?;
            grids.push(grid);
        }
        out.insert(id, MultiResAttention { leaf_id: id, levels: grids });
    }
    Ok(out)
}

/// Loads `path` (a scene JSON file, or a directory containing `scene.json`).
pub fn load_scene(path: &Path) -> Result<Scene> {
    let file = if path.is_dir() { path.join(SCENE_FILE) } else { path.to_path_buf() };
    let doc: SceneDoc = read_json(&file)?;
    let image = ImageMeta::new(doc.image.width, doc.image.height, doc.image.source_id)?;

    let mut ids = BTreeSet::new();
    let mut candidates = Vec::with_capacity(doc.candidates.len());
    for c in doc.candidates {
        if !ids.insert(c.id) {
            return Err(Error::schema_for(c.id, "duplicate candidate id"));
        }
        let score = c.score.unwrap_or(DEFAULT_SCORE);
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::schema_for(c.id, format!("score {score} outside [0, 1]")));
        }
        let mask = c.rle.into_mask(c.id)?;
        if mask.is_empty() {
            return Err(Error::schema_for(c.id, "candidate mask has no foreground pixels"));
        }
        candidates.push(CandidateMask {
            id: c.id,
            mask,
            score,
            window_id: c.window_id,
            class_scores: c.class_scores.unwrap_or_default(),
        });
    }

    let attention = match doc.attention_dir {
        Some(rel) => {
            let base = file.parent().unwrap_or(Path::new("."));
            let dir = base.join(rel);
            if !dir.is_dir() {
                return Err(Error::schema(format!("attention_dir {} does not exist", dir.display())));
            }
            load_attention_dir(&dir, &ids)?
        }
        None => BTreeMap::new(),
    };
    Ok(Scene { image, candidates, attention })
}

fn scene_doc(scene: &Scene, attention_dir: Option<&str>) -> SceneDoc {
    SceneDoc {
        image: scene.image.clone(),
        candidates: scene
            .candidates
            .iter()
            .map(|c| CandidateDoc {
                id: c.id,
                window_id: c.window_id,
                score: Some(c.score),
                class_scores: (!c.class_scores.is_empty()).then(|| c.class_scores.clone()),
                rle: RleDoc::from(&c.mask),
            })
            .collect(),
        attention_dir: attention_dir.map(str::to_string),
    }
}

/// Canonical bytes of the scene JSON document.
pub fn scene_json_bytes(scene: &Scene) -> Vec<u8> {
    let dir = (!scene.attention.is_empty()).then_some(ATTENTION_DIR);
    to_json_bytes(&scene_doc(scene, dir))
}

/// Writes `scene.json` plus one `.f32grid` per attention level into `dir`.
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if !scene.attention.is_empty() {
        let att = dir.join(ATTENTION_DIR);
        fs::create_dir_all(&att).map_err(|e| Error::io(&att, e))?;
        for (id, multi) in &scene.attention {
            for (k, grid) in multi.levels.iter().enumerate() {
                write_atomic(&att.join(attention_file_name(*id, k)), &encode_grid(grid))?;
            }
        }
    }
    write_atomic(&dir.join(SCENE_FILE), &scene_json_bytes(scene))
}

// ---------------------------------------------------------------------------
// Result file
// ---------------------------------------------------------------------------

/// Why a leaf produced no stem segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemFailureKind {
    MissingAttention,
    DegenerateAttention,
    StemMiss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemFailure {
    pub leaf_id: u64,
    pub kind: StemFailureKind,
    /// Mask centroid used in place of a base point.
    pub pseudo_base: Point,
}

/// Leaves, stems and plants of one image. Ground truth uses the same schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub image: ImageMeta,
    pub leaves: Vec<LeafInstance>,
    pub stems: Vec<StemSegment>,
    pub plants: Vec<PlantInstance>,
    pub stem_failures: Vec<StemFailure>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LeafDoc {
    id: u64,
    score: f64,
    rle: RleDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlantDoc {
    id: u64,
    leaf_ids: Vec<u64>,
    center: Point,
    rle: RleDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultDoc {
    schema_version: String,
    image: ImageMeta,
    leaves: Vec<LeafDoc>,
    stems: Vec<StemSegment>,
    plants: Vec<PlantDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    stem_failures: Vec<StemFailure>,
}

pub fn result_json_bytes(result: &SegmentationResult) -> Vec<u8> {
    let doc = ResultDoc {
        schema_version: SCHEMA_VERSION.to_string(),
        image: result.image.clone(),
        leaves: result
            .leaves
            .iter()
            .map(|l| LeafDoc { id: l.id, score: l.score, rle: RleDoc::from(&l.mask) })
            .collect(),
        stems: result.stems.clone(),
        plants: result
            .plants
            .iter()
            .map(|p| PlantDoc {
                id: p.id,
                leaf_ids: p.leaf_ids.iter().copied().collect(),
                center: p.center,
                rle: RleDoc::from(&p.mask),
            })
            .collect(),
        stem_failures: result.stem_failures.clone(),
    };
    to_json_bytes(&doc)
}

pub fn save_instances(path: &Path, result: &SegmentationResult) -> Result<()> {
    write_atomic(path, &result_json_bytes(result))
}

pub fn parse_result(text: &str, path: &Path) -> Result<SegmentationResult> {
    let doc: ResultDoc =
        serde_json::from_str(text).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::schema(format!("unsupported schema_version {}", doc.schema_version)));
    }
    let image = ImageMeta::new(doc.image.width, doc.image.height, doc.image.source_id)?;
    let check_dims = |id: u64, m: &BinaryMask| {
        if m.width() != image.width || m.height() != image.height {
            Err(Error::schema_for(
                id,
                format!("mask is {}x{}, image is {}x{}", m.width(), m.height(), image.width, image.height),
            ))
        } else {
            Ok(())
        }
    };

    let mut leaf_ids = BTreeSet::new();
    let mut leaves = Vec::with_capacity(doc.leaves.len());
    for l in doc.leaves {
        if !leaf_ids.insert(l.id) {
            return Err(Error::schema_for(l.id, "duplicate leaf id"));
        }
        let mask = l.rle.into_mask(l.id)?;
        check_dims(l.id, &mask)?;
        leaves.push(LeafInstance { id: l.id, mask, score: l.score });
    }

    for s in &doc.stems {
        if !leaf_ids.contains(&s.leaf_id) {
            return Err(Error::schema_for(s.leaf_id, "stem references unknown leaf"));
        }
    }

    let mut plant_ids = BTreeSet::new();
    let mut plants = Vec::with_capacity(doc.plants.len());
    for p in doc.plants {
        if !plant_ids.insert(p.id) {
            return Err(Error::schema_for(p.id, "duplicate plant id"));
        }
        let mask = p.rle.into_mask(p.id)?;
        check_dims(p.id, &mask)?;
        if let Some(missing) = p.leaf_ids.iter().find(|id| !leaf_ids.contains(id)) {
            return Err(Error::schema_for(p.id, format!("plant references unknown leaf {missing}")));
        }
        plants.push(PlantInstance {
            id: p.id,
            leaf_ids: p.leaf_ids.into_iter().collect(),
            mask,
            center: p.center,
        });
    }

    Ok(SegmentationResult { image, leaves, stems: doc.stems, plants, stem_failures: doc.stem_failures })
}

pub fn load_result(path: &Path) -> Result<SegmentationResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_result(&text, path)
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    read_json(path)
}
