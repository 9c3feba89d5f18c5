use std::fs;
use std::path::Path;

use roomforge::pipeline::{
    hash_file, run_pipeline, run_single_stage, CameraRig, MeshStage, PathsConfig, PipelineConfig, PipelineError, PreviewStage, PromptStage,
    RunManifest, Stage, StageStatus, MANIFEST_FILE,
};
use roomforge::{ExtractionConfig, TrainConfig};

fn tiny(out: &Path) -> PipelineConfig {
    PipelineConfig {
        seed: 11,
        asset_count: 1,
        workers: 1,
        paths: PathsConfig {
            output: out.to_path_buf(),
            ..Default::default()
        },
        prompts: PromptStage {
            max_prompts: 40,
            ..Default::default()
        },
        cameras: CameraRig {
            count: 6,
            image_size: 20,
            elevations_deg: vec![-20.0, 20.0],
            ..Default::default()
        },
        train: TrainConfig {
            resolution: 12,
            steps: 4,
            rays_per_batch: 64,
            samples_per_ray: 24,
            trace_every: 1,
            ..TrainConfig::default()
        },
        extraction: ExtractionConfig {
            iso: 0.05,
            smooth_iters: 1,
            ..ExtractionConfig::default()
        },
        mesh: MeshStage { refine_iters: 1 },
        preview: PreviewStage {
            width: 32,
            height: 24,
            views: 2,
        },
        ..PipelineConfig::default()
    }
}

fn output_hashes(m: &RunManifest, stage: Stage) -> Vec<(String, String)> {
    m.get(stage).unwrap().outputs.clone().into_iter().collect()
}

#[test]
fn full_run_then_cached_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let first = run_pipeline(&cfg).unwrap();
    assert_eq!(first.executed(), Stage::ALL.to_vec());
    for f in ["prompts/ranked.csv", "views/assets.json", "train/asset_0.field", "mesh/asset_0.obj", "mesh/asset_0.gltf", "assemble/scene.gltf", "preview/room_0.png", "preview/room_1.png"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let second = run_pipeline(&cfg).unwrap();
    assert!(second.executed().is_empty());
    assert!(second.stages.iter().all(|r| r.status == StageStatus::Cached && r.note.as_deref().unwrap().contains("cache hit")));
    let on_disk: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk.stages, second.stages);
    let order: Vec<Stage> = on_disk.stages.iter().map(|r| r.stage).collect();
    assert_eq!(order, Stage::ALL.to_vec());
    for r in &on_disk.stages {
        for (file, hash) in &r.outputs {
            assert_eq!(&hash_file(&dir.path().join(file)).unwrap(), hash);
        }
    }
}

#[test]
fn equal_seeds_give_identical_prompt_and_view_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run_pipeline(&tiny(a.path())).unwrap();
    let mb = run_pipeline(&tiny(b.path())).unwrap();
    for stage in [Stage::Prompts, Stage::Views, Stage::Train, Stage::Mesh] {
        assert_eq!(output_hashes(&ma, stage), output_hashes(&mb, stage), "{stage}");
    }
}

#[test]
fn settings_change_reruns_only_downstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    run_pipeline(&cfg).unwrap();
    cfg.extraction.smooth_iters = 2;
    let m = run_pipeline(&cfg).unwrap();
    assert_eq!(m.executed(), vec![Stage::Mesh, Stage::Assemble, Stage::Preview]);
}

#[test]
fn corrupted_checkpoint_is_a_mesh_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    for s in [Stage::Prompts, Stage::Views, Stage::Train] {
        run_single_stage(s, &cfg).unwrap();
    }
    let ckpt = dir.path().join("train/asset_0.field");
    let mut bytes = fs::read(&ckpt).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 0xff;
    fs::write(&ckpt, bytes).unwrap();
    match run_single_stage(Stage::Mesh, &cfg) {
        Err(PipelineError::Dependency { stage, artifact }) => {
            assert_eq!(stage, Stage::Mesh);
            assert!(artifact.contains("train/asset_0.field"), "{artifact}");
        }
        other => panic!("expected a dependency error, got {other:?}"),
    }
    for s in [Stage::Prompts, Stage::Views] {
        assert_eq!(run_single_stage(s, &cfg).unwrap().status, StageStatus::Cached);
    }
}

#[test]
fn zero_assets_runs_prompts_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        asset_count: 0,
        ..tiny(dir.path())
    };
    let m = run_pipeline(&cfg).unwrap();
    assert_eq!(m.executed(), vec![Stage::Prompts]);
    for r in &m.stages[1..] {
        assert_eq!(r.status, StageStatus::Skipped);
        assert!(r.note.is_some());
    }
    assert!(!dir.path().join("views").exists());
}

#[test]
fn failing_stage_is_recorded_and_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        extraction: ExtractionConfig {
            iso: 1e6,
            ..ExtractionConfig::default()
        },
        ..tiny(dir.path())
    };
    match run_pipeline(&cfg) {
        Err(PipelineError::Stage { stage, message }) => {
            assert_eq!(stage, Stage::Mesh);
            assert!(message.contains("empty"), "{message}");
        }
        other => panic!("expected a mesh failure, got {other:?}"),
    }
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    let mesh = m.get(Stage::Mesh).unwrap();
    assert_eq!(mesh.status, StageStatus::Failed);
    assert!(mesh.error.is_some());
    assert!(m.get(Stage::Assemble).is_none());
    assert_eq!(m.get(Stage::Train).unwrap().status, StageStatus::Completed);
}

#[test]
fn shipped_demo_config_matches_builtin_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/demo.toml");
    let mut cfg = PipelineConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    assert!(cfg.paths.output.ends_with("out/demo"));
    cfg.paths.output = PipelineConfig::default().paths.output;
    assert_eq!(cfg, PipelineConfig::default());
}

#[test]
fn shipped_acceptance_config_loads() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance_sphere.toml");
    let cfg = PipelineConfig::load(&path).unwrap();
    cfg.validate().unwrap();
    assert_eq!((cfg.train.resolution, cfg.train.steps), (128, 2000));
    assert_eq!(cfg.extraction.grid_resolution, Some(64));
}
