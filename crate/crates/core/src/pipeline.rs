//! End-to-end orchestration: prompts, oracle views, training, meshing,
//! assembly and preview, with content-hash caching and a run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::field::{read_checkpoint, train, write_checkpoint, LossReport, LossWeights, TrainConfig};
use crate::geometry::{CameraPose, Vec3};
use crate::mesh::{export_gltf, export_obj, extract_mesh, import_obj, refine_colors, write_refine_trace, ExtractionConfig, TriangleMesh};
use crate::oracle::{axis_lights, read_dataset, write_dataset, Combine, Dataset, Primitive, SdfAsset, Shape, Similarity};
use crate::prompt::{
    builtin_templates, dedupe_validate, enumerate_prompts, load_templates, rank_and_export, read_ranked_csv, score_prompts,
    CategoryLists, CsvRow, HeuristicEvaluator, PlausibilityTable, RemoteConfig, RemoteLlm,
};
use crate::scene::{
    assemble_scene, default_preview_camera, export_scene, load_floorplan, preview_lights, write_preview_png, FloorPlan, SceneFormat,
    TraceScene,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage {stage} is missing a dependency: {artifact}")]
    Dependency { stage: Stage, artifact: String },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prompts,
    Views,
    Train,
    Mesh,
    Assemble,
    Preview,
}

impl Stage {
    pub const ALL: [Stage; 6] = [Stage::Prompts, Stage::Views, Stage::Train, Stage::Mesh, Stage::Assemble, Stage::Preview];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prompts => "prompts",
            Stage::Views => "views",
            Stage::Train => "train",
            Stage::Mesh => "mesh",
            Stage::Assemble => "assemble",
            Stage::Preview => "preview",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Prompts => &[],
            Stage::Views => &[Stage::Prompts],
            Stage::Train => &[Stage::Views],
            Stage::Mesh => &[Stage::Views, Stage::Train],
            Stage::Assemble => &[Stage::Views, Stage::Mesh],
            Stage::Preview => &[Stage::Assemble],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `hash(global_seed, stage, index)` folded to 64 bits.
pub fn stage_seed(global: u64, stage: Stage, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(stage.name().as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    Ok(hash_bytes(&fs::read(path).map_err(io_err(path))?))
}

/// Cameras spread over rings at several elevations, all looking at the
/// origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub count: usize,
    pub radius: f64,
    pub elevations_deg: Vec<f64>,
    pub image_size: usize,
    pub fov_deg: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        CameraRig {
            count: 32,
            radius: 4.0,
            elevations_deg: vec![-30.0, 0.0, 30.0],
            image_size: 96,
            fov_deg: 30.0,
        }
    }
}

impl CameraRig {
    /// `count` cameras split as evenly as possible over the rings, each ring
    /// rotated by half a step relative to the previous one.
    pub fn cameras(&self) -> Result<Vec<CameraPose>, String> {
        let rings = self.elevations_deg.len();
        if rings == 0 || self.count < rings {
            return Err(format!("{} cameras cannot cover {rings} elevation rings", self.count));
        }
        if !(self.radius > 1.8) {
            return Err(format!("camera radius {} must keep cameras outside the unit asset box", self.radius));
        }
        if self.image_size == 0 || !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err("image_size must be positive and fov_deg in (0, 180)".into());
        }
        let mut cams = Vec::with_capacity(self.count);
        for (r, &e) in self.elevations_deg.iter().enumerate() {
            let n = self.count / rings + usize::from(r < self.count % rings);
            let e = e.to_radians();
            for i in 0..n {
                let az = std::f64::consts::TAU * (i as f64 + 0.5 * (r % 2) as f64) / n as f64;
                let eye = Vec3::new(az.cos() * e.cos(), az.sin() * e.cos(), e.sin()) * self.radius;
                cams.push(CameraPose::look_at(eye, Vec3::ZERO, self.fov_deg.to_radians(), self.image_size, self.image_size).map_err(|e| e.to_string())?);
            }
        }
        Ok(cams)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorKind {
    #[default]
    Heuristic,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptStage {
    /// Prompts enumerated and scored before ranking.
    pub max_prompts: usize,
    pub evaluator: EvaluatorKind,
    pub remote: RemoteConfig,
}

impl Default for PromptStage {
    fn default() -> Self {
        PromptStage {
            max_prompts: 300,
            evaluator: EvaluatorKind::Heuristic,
            remote: RemoteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshStage {
    /// Vertex-color refinement passes against the oracle views; 0 disables.
    pub refine_iters: usize,
}

impl Default for MeshStage {
    fn default() -> Self {
        MeshStage { refine_iters: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreviewStage {
    pub width: usize,
    pub height: usize,
    /// Number of preview cameras, placed at successive room corners.
    pub views: usize,
}

impl Default for PreviewStage {
    fn default() -> Self {
        PreviewStage {
            width: 480,
            height: 320,
            views: 2,
        }
    }
}

/// Input files. Unset entries fall back to the shipped data; relative paths
/// resolve against the configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub categories: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub plausibility: Option<PathBuf>,
    pub archetypes: Option<PathBuf>,
    pub floorplan: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub asset_count: usize,
    /// Assets trained concurrently.
    pub workers: usize,
    pub paths: PathsConfig,
    pub prompts: PromptStage,
    pub cameras: CameraRig,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub extraction: ExtractionConfig,
    pub mesh: MeshStage,
    pub preview: PreviewStage,
}

impl Default for PipelineConfig {
    /// The demo configuration: three assets, 64³ fields, 32 views at 96².
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            asset_count: 3,
            workers: 1,
            paths: PathsConfig {
                output: PathBuf::from("out"),
                ..Default::default()
            },
            prompts: PromptStage::default(),
            cameras: CameraRig::default(),
            train: TrainConfig {
                resolution: 64,
                steps: 600,
                rays_per_batch: 2048,
                samples_per_ray: 96,
                learning_rate: 0.1,
                density_lr_scale: 10.0,
                normal_weight_floor: 0.2,
                ..TrainConfig::default()
            },
            weights: LossWeights {
                smoothness: 1e-4,
                ..LossWeights::default()
            },
            extraction: ExtractionConfig::default(),
            mesh: MeshStage::default(),
            preview: PreviewStage::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(x) = p {
        if x.is_relative() {
            *x = base.join(&*x);
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<PipelineConfig, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Parses and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = PipelineConfig::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let p = &mut cfg.paths;
        for f in [&mut p.categories, &mut p.templates, &mut p.plausibility, &mut p.archetypes, &mut p.floorplan] {
            resolve(base, f);
        }
        if p.output.is_relative() {
            p.output = base.join(&p.output);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let p = &self.paths;
        for (name, f) in [
            ("categories", &p.categories),
            ("templates", &p.templates),
            ("plausibility", &p.plausibility),
            ("archetypes", &p.archetypes),
            ("floorplan", &p.floorplan),
        ] {
            if let Some(f) = f {
                if !f.is_file() {
                    return bad(format!("paths.{name}: {} does not exist", f.display()));
                }
            }
        }
        if p.output.as_os_str().is_empty() {
            return bad("paths.output must be set".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if self.prompts.max_prompts == 0 {
            return bad("prompts.max_prompts must be positive".into());
        }
        if self.prompts.evaluator == EvaluatorKind::Remote && self.prompts.remote.endpoint.is_empty() {
            return bad("prompts.remote.endpoint is required for the remote evaluator".into());
        }
        if self.preview.width == 0 || self.preview.height == 0 {
            return bad("preview size must be positive".into());
        }
        self.cameras.cameras().map_err(|e| PipelineError::Config(format!("cameras: {e}")))?;
        self.train.validate().map_err(|e| PipelineError::Config(format!("train: {e}")))?;
        self.weights.validate().map_err(|e| PipelineError::Config(format!("weights: {e}")))?;
        self.extraction.validate().map_err(|e| PipelineError::Config(format!("extraction: {e}")))?;
        self.category_lists()?;
        self.templates()?;
        self.plausibility()?;
        self.archetypes()?;
        self.floorplan()?;
        Ok(())
    }

    fn category_lists(&self) -> Result<CategoryLists, PipelineError> {
        let lists = match &self.paths.categories {
            Some(p) => CategoryLists::load(p),
            None => Ok(CategoryLists::builtin()),
        }
        .and_then(|l| dedupe_validate(&l));
        lists.map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn templates(&self) -> Result<Vec<crate::prompt::PromptTemplate>, PipelineError> {
        match &self.paths.templates {
            Some(p) => load_templates(p).map_err(|e| PipelineError::Config(e.to_string())),
            None => Ok(builtin_templates()),
        }
    }

    fn plausibility(&self) -> Result<PlausibilityTable, PipelineError> {
        match &self.paths.plausibility {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                PlausibilityTable::from_toml(&text).map_err(|e| PipelineError::Config(e.to_string()))
            }
            None => Ok(PlausibilityTable::builtin()),
        }
    }

    pub fn archetypes(&self) -> Result<ArchetypeMap, PipelineError> {
        match &self.paths.archetypes {
            Some(p) => ArchetypeMap::load(p),
            None => Ok(ArchetypeMap::builtin()),
        }
    }

    pub fn floorplan(&self) -> Result<FloorPlan, PipelineError> {
        match &self.paths.floorplan {
            Some(p) => load_floorplan(p).map_err(|e| PipelineError::Config(e.to_string())),
            None => Ok(builtin_floorplan()),
        }
    }

    /// External input files that feed `stage`.
    fn external_inputs(&self, stage: Stage) -> Vec<&Path> {
        let p = &self.paths;
        let files: Vec<&Option<PathBuf>> = match stage {
            Stage::Prompts => vec![&p.categories, &p.templates, &p.plausibility],
            Stage::Views => vec![&p.archetypes, &p.floorplan],
            Stage::Assemble => vec![&p.floorplan],
            _ => vec![],
        };
        files.into_iter().flatten().map(PathBuf::as_path).collect()
    }

    /// The configuration values that influence `stage`.
    fn stage_settings(&self, stage: Stage) -> serde_json::Value {
        use serde_json::json;
        match stage {
            Stage::Prompts => json!({ "seed": self.seed, "prompts": self.prompts }),
            Stage::Views => json!({ "seed": self.seed, "asset_count": self.asset_count, "cameras": self.cameras }),
            Stage::Train => json!({ "seed": self.seed, "train": self.train, "weights": self.weights }),
            Stage::Mesh => json!({ "extraction": self.extraction, "mesh": self.mesh }),
            Stage::Assemble => json!({ "seed": self.seed }),
            Stage::Preview => json!({ "preview": self.preview }),
        }
    }
}

const BUILTIN_ARCHETYPES: &str = include_str!("../data/archetypes.toml");
const BUILTIN_FLOORPLAN: &str = include_str!("../data/demo_room.json");

pub fn builtin_floorplan() -> FloorPlan {
    FloorPlan::from_json(BUILTIN_FLOORPLAN).expect("shipped floor plan is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypePart {
    pub shape: Shape,
    pub at: Vec3,
    /// Multiplies the asset color for this part.
    #[serde(default = "one")]
    pub shade: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archetype {
    pub combine: Combine,
    pub parts: Vec<ArchetypePart>,
}

/// Shipped keyword map from prompt objects to procedural archetypes, plus
/// color names to albedo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeMap {
    pub fallback: String,
    pub keywords: BTreeMap<String, String>,
    pub colors: BTreeMap<String, [f64; 3]>,
    pub archetypes: BTreeMap<String, Archetype>,
}

const NEUTRAL_ALBEDO: [f64; 3] = [0.7, 0.7, 0.7];

impl ArchetypeMap {
    pub fn from_toml(text: &str) -> Result<ArchetypeMap, PipelineError> {
        let map: ArchetypeMap = toml::from_str(text).map_err(|e| PipelineError::Config(format!("archetype map: {e}")))?;
        for (k, a) in map.keywords.iter().chain([(&"fallback".to_string(), &map.fallback)]) {
            if !map.archetypes.contains_key(a) {
                return Err(PipelineError::Config(format!("archetype map: {k} refers to unknown archetype {a}")));
            }
        }
        for name in map.archetypes.keys() {
            map.build(name, Vec3::from(NEUTRAL_ALBEDO)).map_err(|e| PipelineError::Config(format!("archetype {name}: {e}")))?;
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<ArchetypeMap, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        ArchetypeMap::from_toml(&text)
    }

    pub fn builtin() -> ArchetypeMap {
        ArchetypeMap::from_toml(BUILTIN_ARCHETYPES).expect("shipped archetype map is valid")
    }

    /// Exact object name, then the longest keyword contained in it, then
    /// the fallback.
    pub fn archetype_for(&self, object: &str) -> &str {
        let o = object.to_lowercase();
        if let Some(a) = self.keywords.get(&o) {
            return a;
        }
        self.keywords
            .iter()
            .filter(|(k, _)| o.contains(k.as_str()))
            .max_by_key(|(k, _)| k.len())
            .map_or(self.fallback.as_str(), |(_, a)| a.as_str())
    }

    pub fn albedo_for(&self, color: Option<&str>) -> Vec3 {
        Vec3::from(color.and_then(|c| self.colors.get(&c.to_lowercase())).copied().unwrap_or(NEUTRAL_ALBEDO))
    }

    pub fn build(&self, archetype: &str, albedo: Vec3) -> Result<SdfAsset, String> {
        let a = self.archetypes.get(archetype).ok_or_else(|| format!("unknown archetype {archetype}"))?;
        let prims = a
            .parts
            .iter()
            .map(|p| {
                let c = albedo * p.shade;
                Primitive::new(p.shape, Similarity::translate(p.at), Vec3::new(c.x.min(1.0), c.y.min(1.0), c.z.min(1.0)))
            })
            .collect();
        SdfAsset::new(prims, a.combine).map_err(|e| e.to_string())
    }
}

/// One generated asset, chosen from the ranked prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSpec {
    pub index: usize,
    pub prompt: String,
    pub object: String,
    pub color: Option<String>,
    pub archetype: String,
    pub seed: u64,
}

/// Best-ranked prompts with distinct objects, preferring objects the floor
/// plan has slots for.
pub fn select_assets<'a>(rows: &'a [CsvRow], plan: &FloorPlan, count: usize) -> Vec<&'a CsvRow> {
    let wanted: std::collections::BTreeSet<&str> = plan.slots.iter().map(|s| s.category.as_str()).collect();
    let ranked: Vec<&'a CsvRow> = rows.iter().filter(|r| r.rank.is_some() && r.object.is_some()).collect();
    let mut picked: Vec<&'a CsvRow> = Vec::new();
    let mut objects = std::collections::BTreeSet::new();
    for prefer in [true, false] {
        for &r in &ranked {
            if picked.len() == count {
                return picked;
            }
            let o = r.object.as_deref().expect("filtered");
            if wanted.contains(o) == prefer && objects.insert(o) {
                picked.push(r);
            }
        }
    }
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Cached,
    Skipped,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub fingerprint: String,
    /// Content hashes of consumed files, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// Content hashes of produced files, keyed by path relative to the
    /// output directory.
    pub outputs: BTreeMap<String, String>,
    pub seconds: f64,
    pub note: Option<String>,
    pub error: Option<String>,
}

impl StageRecord {
    pub fn usable(&self) -> bool {
        matches!(self.status, StageStatus::Completed | StageStatus::Cached)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub config: serde_json::Value,
    /// Always in pipeline order.
    pub stages: Vec<StageRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(config: &PipelineConfig) -> RunManifest {
        RunManifest {
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            stages: Vec::new(),
        }
    }

    /// Reads `out/manifest.json`, or starts a fresh one.
    pub fn load_or_new(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
        let path = config.paths.output.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(RunManifest::new(config));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let mut m: RunManifest =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: unreadable manifest: {e}", path.display())))?;
        m.software_version = env!("CARGO_PKG_VERSION").to_string();
        m.config = serde_json::to_value(config).expect("config serializes");
        Ok(m)
    }

    pub fn get(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn set(&mut self, record: StageRecord) {
        self.stages.retain(|r| r.stage != record.stage);
        self.stages.push(record);
        self.stages.sort_by_key(|r| r.stage);
    }

    /// Write-new-then-rename.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        let path = dir.join(MANIFEST_FILE);
        fs::write(&tmp, serde_json::to_string_pretty(self).expect("manifest serializes")).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Stages that ran (not cached, skipped or failed).
    pub fn executed(&self) -> Vec<Stage> {
        self.stages.iter().filter(|r| r.status == StageStatus::Completed).map(|r| r.stage).collect()
    }
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// Files under `dir`, recursively, in sorted order.
fn list_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(io_err(&d))? {
            let p = e.map_err(io_err(&d))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn verify_outputs(out: &Path, record: &StageRecord) -> Result<(), String> {
    for (file, expected) in &record.outputs {
        let p = out.join(file);
        match fs::read(&p) {
            Err(_) => return Err(format!("{file} is missing")),
            Ok(bytes) => {
                let found = hash_bytes(&bytes);
                if &found != expected {
                    return Err(format!("{file} changed since stage {} wrote it (hash {found}, expected {expected})", record.stage));
                }
            }
        }
    }
    Ok(())
}

fn stage_failure(stage: Stage) -> impl Fn(String) -> PipelineError {
    move |message| PipelineError::Stage { stage, message }
}

/// Runs one stage, or reuses its outputs when the fingerprint of its
/// settings and inputs is unchanged. The manifest on disk is updated either
/// way.
pub fn run_stage(stage: Stage, config: &PipelineConfig, manifest: &mut RunManifest) -> Result<StageRecord, PipelineError> {
    let out = config.paths.output.clone();
    let mut inputs = BTreeMap::new();
    let mut skip_note = None;
    for &dep in stage.dependencies() {
        let rec = manifest.get(dep).ok_or_else(|| PipelineError::Dependency {
            stage,
            artifact: format!("outputs of stage {dep} (run `{dep}` first)"),
        })?;
        match rec.status {
            StageStatus::Skipped => {
                skip_note = Some(format!("skipped because {dep} was skipped"));
                continue;
            }
            StageStatus::Failed => {
                return Err(PipelineError::Dependency {
                    stage,
                    artifact: format!("outputs of stage {dep}, which failed: {}", rec.error.as_deref().unwrap_or("unknown error")),
                })
            }
            _ => {}
        }
        verify_outputs(&out, rec).map_err(|artifact| PipelineError::Dependency { stage, artifact })?;
        inputs.extend(rec.outputs.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    if stage != Stage::Prompts && config.asset_count == 0 {
        skip_note = Some("asset_count = 0: no assets to process".into());
    }
    for f in config.external_inputs(stage) {
        inputs.insert(f.display().to_string(), hash_file(f)?);
    }
    let fingerprint = hash_bytes(
        serde_json::to_string(&serde_json::json!({
            "stage": stage,
            "settings": config.stage_settings(stage),
            "inputs": inputs,
        }))
        .expect("fingerprint serializes")
        .as_bytes(),
    );
    let mut record = StageRecord {
        stage,
        status: StageStatus::Completed,
        fingerprint,
        inputs,
        outputs: BTreeMap::new(),
        seconds: 0.0,
        note: None,
        error: None,
    };
    if let Some(note) = skip_note {
        record.status = StageStatus::Skipped;
        record.note = Some(note);
        manifest.set(record.clone());
        manifest.save(&out)?;
        return Ok(record);
    }
    if let Some(prev) = manifest.get(stage) {
        if prev.usable() && prev.fingerprint == record.fingerprint && verify_outputs(&out, prev).is_ok() {
            record.status = StageStatus::Cached;
            record.outputs = prev.outputs.clone();
            record.note = Some("cache hit: inputs and settings unchanged".into());
            manifest.set(record.clone());
            manifest.save(&out)?;
            return Ok(record);
        }
    }
    let dir = out.join(stage.name());
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let start = Instant::now();
    log::info!("running stage {stage}");
    let result = execute(stage, config, &out, &dir);
    record.seconds = start.elapsed().as_secs_f64();
    match result {
        Ok(note) => {
            for f in list_files(&dir)? {
                record.outputs.insert(rel(&out, &f), hash_file(&f)?);
            }
            record.note = note;
            manifest.set(record.clone());
            manifest.save(&out)?;
            Ok(record)
        }
        Err(e) => {
            let message = match &e {
                PipelineError::Stage { message, .. } => message.clone(),
                other => other.to_string(),
            };
            record.status = StageStatus::Failed;
            record.error = Some(message.clone());
            manifest.set(record);
            manifest.save(&out)?;
            Err(PipelineError::Stage { stage, message })
        }
    }
}

/// All six stages in order; stops at the first failure.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let mut manifest = RunManifest::load_or_new(config)?;
    for stage in Stage::ALL {
        run_stage(stage, config, &mut manifest)?;
    }
    Ok(manifest)
}

/// Runs a single stage against the manifest in the output directory.
pub fn run_single_stage(stage: Stage, config: &PipelineConfig) -> Result<StageRecord, PipelineError> {
    config.validate()?;
    let mut manifest = RunManifest::load_or_new(config)?;
    run_stage(stage, config, &mut manifest)
}

fn execute(stage: Stage, config: &PipelineConfig, out: &Path, dir: &Path) -> Result<Option<String>, PipelineError> {
    match stage {
        Stage::Prompts => run_prompts(config, dir),
        Stage::Views => run_views(config, out, dir),
        Stage::Train => run_train(config, out, dir),
        Stage::Mesh => run_mesh(config, out, dir),
        Stage::Assemble => run_assemble(config, out, dir),
        Stage::Preview => run_preview(config, out, dir),
    }
}

pub const RANKED_CSV: &str = "prompts/ranked.csv";
pub const ASSETS_JSON: &str = "views/assets.json";

fn asset_dir(out: &Path, i: usize) -> PathBuf {
    out.join("views").join(format!("asset_{i}"))
}

fn checkpoint_path(out: &Path, i: usize) -> PathBuf {
    out.join("train").join(format!("asset_{i}.field"))
}

fn mesh_path(out: &Path, i: usize) -> PathBuf {
    out.join("mesh").join(format!("asset_{i}.obj"))
}

fn run_prompts(config: &PipelineConfig, dir: &Path) -> Result<Option<String>, PipelineError> {
    let fail = stage_failure(Stage::Prompts);
    let lists = config.category_lists()?;
    let templates = config.templates()?;
    let records = enumerate_prompts(&lists, &templates, config.prompts.max_prompts, stage_seed(config.seed, Stage::Prompts, 0))
        .map_err(|e| fail(e.to_string()))?;
    let scored = match config.prompts.evaluator {
        EvaluatorKind::Heuristic => score_prompts(&records, &mut HeuristicEvaluator::new(config.plausibility()?)),
        EvaluatorKind::Remote => {
            let mut llm = RemoteLlm::new(config.prompts.remote.clone()).map_err(|e| fail(e.to_string()))?;
            score_prompts(&records, &mut llm)
        }
    };
    let failed = scored.iter().filter(|r| r.failure.is_some()).count();
    let rows = rank_and_export(&scored, &dir.join("ranked.csv")).map_err(|e| fail(e.to_string()))?;
    Ok(Some(format!("{} prompts ranked, {failed} unscored", rows.len())))
}

fn read_assets(out: &Path) -> Result<Vec<AssetSpec>, PipelineError> {
    let p = out.join(ASSETS_JSON);
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Stage {
        stage: Stage::Views,
        message: format!("{}: {e}", p.display()),
    })
}

fn run_views(config: &PipelineConfig, out: &Path, dir: &Path) -> Result<Option<String>, PipelineError> {
    let fail = stage_failure(Stage::Views);
    let rows = read_ranked_csv(&out.join(RANKED_CSV)).map_err(|e| fail(e.to_string()))?;
    let plan = config.floorplan()?;
    let map = config.archetypes()?;
    let cams = config.cameras.cameras().map_err(&fail)?;
    let chosen = select_assets(&rows, &plan, config.asset_count);
    let mut specs = Vec::new();
    for (i, row) in chosen.iter().enumerate() {
        let object = row.object.clone().expect("selected rows have objects");
        let archetype = map.archetype_for(&object).to_string();
        let seed = stage_seed(config.seed, Stage::Views, i as u64);
        let asset = map.build(&archetype, map.albedo_for(row.color.as_deref())).map_err(&fail)?;
        let ds = Dataset::render(&asset, &cams, &axis_lights(0.5), seed).map_err(|e| fail(e.to_string()))?;
        write_dataset(&ds, &asset_dir(out, i)).map_err(|e| fail(e.to_string()))?;
        specs.push(AssetSpec {
            index: i,
            prompt: row.prompt.clone(),
            object,
            color: row.color.clone(),
            archetype,
            seed,
        });
    }
    let p = dir.join("assets.json");
    fs::write(&p, serde_json::to_string_pretty(&specs).expect("assets serialize")).map_err(io_err(&p))?;
    let short = if specs.len() < config.asset_count {
        format!(" (only {} distinct ranked objects available)", specs.len())
    } else {
        String::new()
    };
    Ok(Some(format!("{} assets rendered, {} views each{short}", specs.len(), cams.len())))
}

fn write_trace(path: &Path, trace: &[LossReport]) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| e.to_string())?;
    for r in trace {
        w.serialize(r).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

fn train_one(config: &PipelineConfig, out: &Path, spec: &AssetSpec) -> Result<(), String> {
    let ds = read_dataset(&asset_dir(out, spec.index)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        seed: stage_seed(config.seed, Stage::Train, spec.index as u64),
        ..config.train.clone()
    };
    let (field, trace) = train(&ds, &config.weights, &cfg).map_err(|e| format!("asset {}: {e}", spec.index))?;
    write_checkpoint(&field, cfg.steps, &checkpoint_path(out, spec.index)).map_err(|e| e.to_string())?;
    write_trace(&out.join("train").join(format!("asset_{}_trace.csv", spec.index)), &trace)
}

fn run_train(config: &PipelineConfig, out: &Path, _dir: &Path) -> Result<Option<String>, PipelineError> {
    let specs = read_assets(out)?;
    for chunk in specs.chunks(config.workers.max(1)) {
        let results: Vec<Result<(), String>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|spec| s.spawn(move || train_one(config, out, spec))).collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("training thread panicked".into()))).collect()
        });
        for r in results {
            r.map_err(stage_failure(Stage::Train))?;
        }
    }
    Ok(Some(format!("{} fields trained for {} steps at {}³", specs.len(), config.train.steps, config.train.resolution)))
}

fn run_mesh(config: &PipelineConfig, out: &Path, dir: &Path) -> Result<Option<String>, PipelineError> {
    let fail = stage_failure(Stage::Mesh);
    let specs = read_assets(out)?;
    let mut tris = Vec::new();
    for spec in &specs {
        let (field, _) = read_checkpoint(&checkpoint_path(out, spec.index)).map_err(|e| fail(e.to_string()))?;
        let mut mesh = extract_mesh(&field, &config.extraction).map_err(|e| fail(format!("asset {}: {e}", spec.index)))?;
        if config.mesh.refine_iters > 0 {
            let ds = read_dataset(&asset_dir(out, spec.index)).map_err(|e| fail(e.to_string()))?;
            let (refined, trace) = refine_colors(&mesh, &ds, config.mesh.refine_iters).map_err(|e| fail(e.to_string()))?;
            write_refine_trace(&trace, &dir.join(format!("asset_{}_refine.csv", spec.index))).map_err(|e| fail(e.to_string()))?;
            mesh = refined;
        }
        export_obj(&mesh, &mesh_path(out, spec.index)).map_err(|e| fail(e.to_string()))?;
        export_gltf(&mesh, &dir.join(format!("asset_{}.gltf", spec.index))).map_err(|e| fail(e.to_string()))?;
        tris.push(mesh.triangles.len().to_string());
    }
    Ok(Some(format!("triangles per asset: [{}]", tris.join(", "))))
}

fn run_assemble(config: &PipelineConfig, out: &Path, dir: &Path) -> Result<Option<String>, PipelineError> {
    let fail = stage_failure(Stage::Assemble);
    let specs = read_assets(out)?;
    let mut assets: BTreeMap<String, Vec<TriangleMesh>> = BTreeMap::new();
    for spec in &specs {
        let mesh = import_obj(&mesh_path(out, spec.index)).map_err(|e| fail(e.to_string()))?;
        assets.entry(spec.object.clone()).or_default().push(mesh);
    }
    let mut plan = config.floorplan()?;
    let skipped: Vec<String> = plan.slots.iter().filter(|s| !assets.contains_key(&s.category)).map(|s| s.id.clone()).collect();
    plan.slots.retain(|s| assets.contains_key(&s.category));
    let scene = assemble_scene(&plan, &assets, stage_seed(config.seed, Stage::Assemble, 0)).map_err(|e| fail(e.to_string()))?;
    export_scene(&scene, &dir.join("scene.gltf"), SceneFormat::Gltf).map_err(|e| fail(e.to_string()))?;
    export_scene(&scene, &dir.join("scene.obj"), SceneFormat::Obj).map_err(|e| fail(e.to_string()))?;
    let p = dir.join("plan.json");
    fs::write(&p, plan.to_json()).map_err(io_err(&p))?;
    let placements: Vec<serde_json::Value> = scene
        .placed
        .iter()
        .map(|a| serde_json::json!({ "slot": a.slot_id, "category": a.category, "mesh": a.mesh, "transform": a.transform }))
        .collect();
    let p = dir.join("placements.json");
    fs::write(&p, serde_json::to_string_pretty(&placements).expect("placements serialize")).map_err(io_err(&p))?;
    let mut note = format!("{} of {} slots filled", scene.placed.len(), scene.placed.len() + skipped.len());
    if !skipped.is_empty() {
        note.push_str(&format!("; no matching asset for {}", skipped.join(", ")));
    }
    Ok(Some(note))
}

/// Preview cameras at successive corners of the plan's bounding box.
pub fn preview_cameras(plan: &FloorPlan, count: usize, width: usize, height: usize) -> Vec<CameraPose> {
    let base = default_preview_camera(plan, width, height);
    let b = crate::geometry::Aabb::from_points(plan.floor_polygon.iter().map(|p| Vec3::new(p[0], p[1], 0.0)));
    let c = b.center();
    let target = c + Vec3::new(0.0, 0.0, 0.25 * plan.wall_height);
    (0..count)
        .map(|k| {
            if k == 0 {
                return base;
            }
            let corner = [b.min, Vec3::new(b.max.x, b.min.y, 0.0), b.max, Vec3::new(b.min.x, b.max.y, 0.0)][k % 4];
            let eye = c + (Vec3::new(corner.x, corner.y, 0.0) - Vec3::new(c.x, c.y, 0.0)) * 0.85 + Vec3::new(0.0, 0.0, 0.8 * plan.wall_height);
            CameraPose::look_at(eye, target, base.fov_y, width, height).unwrap_or(base)
        })
        .collect()
}

fn run_preview(config: &PipelineConfig, out: &Path, dir: &Path) -> Result<Option<String>, PipelineError> {
    let fail = stage_failure(Stage::Preview);
    let plan_path = out.join("assemble").join("plan.json");
    let plan = FloorPlan::from_json(&fs::read_to_string(&plan_path).map_err(io_err(&plan_path))?).map_err(|e| fail(e.to_string()))?;
    let world = import_obj(&out.join("assemble").join("scene.obj")).map_err(|e| fail(e.to_string()))?;
    let trace = TraceScene::new(&world);
    let (w, h) = (config.preview.width, config.preview.height);
    let lights = preview_lights();
    for (k, cam) in preview_cameras(&plan, config.preview.views, w, h).iter().enumerate() {
        let img = trace.render(cam, &lights);
        write_preview_png(&dir.join(format!("room_{k}.png")), w, h, &img).map_err(|e| fail(e.to_string()))?;
    }
    Ok(Some(format!("{} preview images at {w}x{h}", config.preview.views)))
}
