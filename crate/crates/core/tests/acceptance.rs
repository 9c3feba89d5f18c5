//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero when any fails.
//!
//! ```text
//! cargo test --release -p roomforge --test acceptance            # all
//! cargo test --release -p roomforge --test acceptance -- 3 9     # a subset
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomforge::field::{gradient_check, render_ray, train, LossWeights, TrainConfig, Trainer, VoxelField};
use roomforge::geometry::generate_camera_ring;
use roomforge::mesh::{connected_components, extract_mesh, largest_component, marching_cubes, mean_field_normal_error, ssim, ExtractionConfig, TriangleMesh};
use roomforge::oracle::{axis_lights, depth_to_normals, interior_mask, render_view, Dataset, OracleView, SdfAsset};
use roomforge::pipeline::{run_pipeline, CameraRig, PipelineConfig};
use roomforge::prompt::{
    enumerate_prompts, final_score, rank_and_export, read_ranked_csv, score_prompts, CategoryLists, HeuristicEvaluator, PlausibilityTable,
    PromptTemplate,
};
use roomforge::scene::{assemble_scene, check_collisions, default_preview_camera, fit_to_slot, preview_lights, FloorPlan, PlacementSlot, TraceScene};
use roomforge::{Aabb, CameraPose, Mat3, Ray, Vec3};

struct Outcome {
    id: &'static str,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Report(Vec<Outcome>);

impl Report {
    fn check(&mut self, id: &'static str, pass: bool, detail: impl Into<String>) {
        let detail = detail.into();
        println!("{} {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.0.push(Outcome { id, pass, detail });
    }
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Training, loss and extraction settings for the sphere runs.
fn sphere_config() -> PipelineConfig {
    PipelineConfig::load(&workspace_file("configs/acceptance_sphere.toml")).expect("acceptance config")
}

fn sphere_asset() -> SdfAsset {
    SdfAsset::sphere(0.5, Vec3::new(0.8, 0.3, 0.2)).unwrap()
}

fn sphere_dataset(count: usize, size: usize) -> Dataset {
    let rig = CameraRig {
        count,
        image_size: size,
        elevations_deg: vec![-35.0, 0.0, 35.0],
        ..CameraRig::default()
    };
    Dataset::render(&sphere_asset(), &rig.cameras().unwrap(), &axis_lights(0.5), 0).unwrap()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn fibonacci_sphere(n: usize, r: f64) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            Vec3::new(rho * th.cos(), rho * th.sin(), z) * r
        })
        .collect()
}

/// Latitude-longitude sphere with `2·slices·(stacks−1)` triangles.
fn uv_sphere(center: Vec3, r: f64, stacks: usize, slices: usize) -> TriangleMesh {
    let mut v = vec![center + Vec3::Z * r];
    for i in 1..stacks {
        let th = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let ph = std::f64::consts::TAU * j as f64 / slices as f64;
            v.push(center + Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()) * r);
        }
    }
    v.push(center - Vec3::Z * r);
    let ring = |i: usize, j: usize| (1 + (i - 1) * slices + j % slices) as u32;
    let bottom = (v.len() - 1) as u32;
    let mut t = Vec::new();
    for j in 0..slices {
        t.push([0, ring(1, j), ring(1, j + 1)]);
        t.push([bottom, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            t.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            t.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    TriangleMesh::new(v, t)
}

fn merge(a: &TriangleMesh, b: &TriangleMesh) -> TriangleMesh {
    let mut m = a.clone();
    let off = m.vertices.len() as u32;
    m.vertices.extend_from_slice(&b.vertices);
    m.triangles.extend(b.triangles.iter().map(|t| t.map(|i| i + off)));
    m
}

fn outside_mass_fraction(field: &VoxelField, aabb: &Aabb) -> f64 {
    let (mut out, mut total) = (0.0, 0.0);
    for i in 0..field.voxel_count() {
        let s = field.voxel_sigma(i);
        total += s;
        if !aabb.contains(field.voxel_center(i)) {
            out += s;
        }
    }
    out / total.max(1e-300)
}

fn criterion_1(r: &mut Report) {
    let t0 = Instant::now();
    let asset = sphere_asset();
    let cams = generate_camera_ring(3, 3.0, 0.4, Vec3::ZERO, 16, 0.6).unwrap();
    let ds = Dataset::render(&asset, &cams, &axis_lights(0.5), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut field = VoxelField::uniform(8, Aabb::cube(1.0), 1.0, Vec3::splat(0.5)).unwrap();
    for (i, p) in field.params_mut().iter_mut().enumerate() {
        *p = if i % 4 == 0 { rng.random_range(-1.0..4.0) } else { rng.random_range(-2.0..2.0) };
    }
    let cfg = TrainConfig {
        rays_per_batch: 48,
        samples_per_ray: 24,
        resolution: 8,
        normal_weight_floor: 0.0,
        silhouette_band: 1,
        ..TrainConfig::default()
    };
    let zero = LossWeights {
        photo: 0.0,
        ..LossWeights::photo_only()
    };
    let terms = [
        ("photo", LossWeights { photo: 1.0, ..zero }),
        ("sparsity", LossWeights { density: 1.0, ..zero }),
        ("orientation", LossWeights { orientation: 1.0, ..zero }),
        ("smoothness", LossWeights { smoothness: 1.0, ..zero }),
        ("normal", LossWeights { normal: 1.0, ..zero }),
    ];
    let mut worst = 0.0f64;
    let mut all = true;
    let mut parts = Vec::new();
    for (name, w) in terms {
        let mut trainer = Trainer::new(field.clone(), &ds, w, cfg.clone()).unwrap();
        let batch = trainer.batch(0);
        let check = gradient_check(&mut trainer, &batch, 32, 1e-6, 5);
        let ok = check.entries.len() >= 32 && check.max_relative_error < 1e-4;
        all &= ok;
        worst = worst.max(check.max_relative_error);
        parts.push(format!("{name} {:.1e} ({} params)", check.max_relative_error, check.entries.len()));
    }
    let secs = t0.elapsed().as_secs_f64();
    r.check("1 gradient correctness", all && secs < 60.0, format!("{}; worst {worst:.1e} < 1e-4; {secs:.1}s < 60s", parts.join(", ")));
}

fn criterion_2(r: &mut Report) {
    let sigma = 1.3;
    let field = VoxelField::uniform(4, Aabb::cube(1.0), sigma, Vec3::splat(0.25)).unwrap();
    let ray = Ray::new(Vec3::new(-3.0, 0.1, 0.2), Vec3::X);
    let exact = 1.0 - (-sigma * 2.0f64).exp();
    let got = render_ray(&field, &ray, 0.1, 10.0, 256).unwrap().opacity;
    r.check("2a homogeneous opacity", (got - exact).abs() < 1e-3, format!("|{got:.6} - {exact:.6}| < 1e-3"));
    let mut empty = VoxelField::uniform(8, Aabb::cube(1.0), 1.0, Vec3::splat(0.1)).unwrap();
    empty.params_mut().iter_mut().step_by(4).for_each(|p| *p = -1000.0);
    let out = render_ray(&empty, &Ray::new(Vec3::new(0.2, -3.0, 0.1), Vec3::Y), 0.1, 10.0, 256).unwrap();
    r.check("2b empty field is white", out.rgb == Vec3::ONE && out.opacity == 0.0, format!("rgb {:?}, opacity {}", out.rgb, out.opacity));
}

fn criterion_3(r: &mut Report) {
    let file = sphere_config();
    let ds = sphere_dataset(64, 128);
    let cfg = TrainConfig {
        steps: 2000,
        resolution: 128,
        ..file.train.clone()
    };
    let t0 = Instant::now();
    let (field, trace) = train(&ds, &file.weights, &cfg).unwrap();
    let mesh = extract_mesh(&field, &file.extraction);
    let secs = t0.elapsed().as_secs_f64();
    let photo = trace.last().map(|t| t.photo).unwrap_or(f64::NAN);
    let Ok(mesh) = mesh else {
        r.check("3a mesh radial error", false, "extraction produced no surface");
        r.check("3b mesh normal error", false, "extraction produced no surface");
        return;
    };
    let radial = mean(mesh.vertices.iter().map(|v| (v.norm() - 0.5).abs()));
    let normal = mean(mesh.vertices.iter().zip(&mesh.normals).map(|(v, n)| n.angle_to(*v).to_degrees()));
    let field_normal = mean_field_normal_error(&field, &mesh.vertices, |p| p.normalized());
    r.check("3a mesh radial error", radial < 0.01, format!("{radial:.4} < 0.01 ({} triangles)", mesh.triangles.len()));
    r.check("3b mesh normal error", normal < 10.0, format!("{normal:.2} deg < 10 deg"));
    r.check("3c field normal at surface", field_normal < 10.0, format!("{field_normal:.2} deg < 10 deg"));
    r.check("3d final photometric loss", photo < 5e-3, format!("{photo:.5} < 5e-3"));
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    r.check("3e wall clock", secs < 600.0, format!("{secs:.0}s < 600s on {cores} core(s)"));
}

/// Reduced-scale training shared by the two ablations.
fn ablation_train(weights: &LossWeights) -> (VoxelField, Dataset) {
    let file = sphere_config();
    let ds = sphere_dataset(24, 64);
    let cfg = TrainConfig {
        steps: 600,
        resolution: 48,
        seed: 3,
        ..file.train
    };
    (train(&ds, weights, &cfg).unwrap().0, ds)
}

fn criterion_4(r: &mut Report) {
    let base = sphere_config().weights;
    let (with, ds) = ablation_train(&LossWeights { density: 1e-4, ..base });
    let (without, _) = ablation_train(&LossWeights { density: 0.0, ..base });
    let (fw, fo) = (outside_mass_fraction(&with, &ds.asset_aabb), outside_mass_fraction(&without, &ds.asset_aabb));
    r.check("4a sparsity lowers outside mass", fw < fo, format!("{fw:.5} < {fo:.5}"));
    let cfg = ExtractionConfig::default();
    let count = |f: &VoxelField| marching_cubes(f, &cfg).map(|m| connected_components(&m).len()).unwrap_or(0);
    let (cw, co) = (count(&with), count(&without));
    r.check("4b components before cleanup", cw <= co, format!("{cw} <= {co}"));
}

fn criterion_5(r: &mut Report) {
    let base = sphere_config().weights;
    let (on, _) = ablation_train(&base);
    let (off, _) = ablation_train(&LossWeights {
        orientation: 0.0,
        smoothness: 0.0,
        normal: 0.0,
        ..base
    });
    let pts = fibonacci_sphere(2000, 0.5);
    let e_on = mean_field_normal_error(&on, &pts, |p| p.normalized());
    let e_off = mean_field_normal_error(&off, &pts, |p| p.normalized());
    r.check("5 normal regularization", e_on < e_off, format!("with {e_on:.2} deg < without {e_off:.2} deg"));
}

fn criterion_6(r: &mut Report) {
    let cam = CameraPose::new(Vec3::new(0.0, 0.0, 2.0), Mat3::IDENTITY, 0.9, 32, 32).unwrap();
    let mut view = OracleView::blank(cam);
    for i in 0..32 * 32 {
        let ray = cam.pixel_ray(i % 32, i / 32);
        view.depth[i] = (2.0 / -ray.direction.z) as f32;
        view.mask[i] = true;
    }
    let worst = depth_to_normals(&view).iter().map(|n| n.angle_to(Vec3::Z).to_degrees()).fold(0.0, f64::max);
    r.check("6a plane depth normals", worst < 0.1, format!("max {worst:.4} deg < 0.1 deg"));

    let cam = CameraPose::look_at(Vec3::new(0.0, -4.0, 0.0), Vec3::ZERO, 40f64.to_radians(), 128, 128).unwrap();
    let view = render_view(&sphere_asset(), &cam, &axis_lights(0.5));
    let normals = depth_to_normals(&view);
    let inner = interior_mask(&view.mask, 128, 128, 2);
    let err = mean((0..normals.len()).filter(|&i| inner[i]).map(|i| {
        let p = cam.pixel_ray(i % 128, i / 128).at(view.depth[i] as f64);
        normals[i].angle_to(p.normalized()).to_degrees()
    }));
    r.check("6b sphere depth normals", err < 2.0, format!("mean {err:.3} deg < 2 deg"));
}

fn criterion_7(r: &mut Report) {
    let rows = [((9.0, 9.0, 9.0), 9.0), ((9.0, 7.0, 8.0), 8.0), ((5.0, 9.0, 7.0), 7.0)];
    let exact = rows.iter().all(|&((c, s, k), want)| final_score(c, s, k) == want);
    r.check("7a score aggregation rows 1-3", exact, format!("{:?}", rows.map(|((c, s, k), _)| final_score(c, s, k))));

    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let lists = CategoryLists {
        objects: s(&["chair", "vase"]),
        materials: s(&["wood", "cotton"]),
        colors: s(&["black", "green"]),
        themes: s(&["Art Deco", "Japanese"]),
    };
    let templates = vec![
        PromptTemplate::new("a", "Design a [Color] [Material] [Object] inspired by [High-level Theme] aesthetics.").unwrap(),
        PromptTemplate::new("b", "A [High-level Theme] take on a [Color] [Object] made of [Material]").unwrap(),
        PromptTemplate::new("c", "Create a [Object] in [Color] [Material], [High-level Theme] style").unwrap(),
    ];
    let all = enumerate_prompts(&lists, &templates, 10_000, 1).unwrap();
    let unique: HashSet<_> = all.iter().map(|p| p.prompt.clone()).collect();
    r.check("7b enumeration count", all.len() == 48 && unique.len() == 48, format!("{} prompts, {} unique, expected 48", all.len(), unique.len()));

    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, seed: u64| {
        let prompts = enumerate_prompts(&CategoryLists::builtin(), &roomforge::prompt::builtin_templates(), 200, seed).unwrap();
        let mut eval = HeuristicEvaluator::new(PlausibilityTable::builtin());
        let scored = score_prompts(&prompts, &mut eval);
        let path = dir.path().join(name);
        let rows = rank_and_export(&scored, &path).unwrap();
        (path, rows)
    };
    let (p1, rows1) = write("a.csv", 7);
    let back = read_ranked_csv(&p1).unwrap();
    r.check("7c csv round trip", back == rows1, format!("{} rows read back identical", back.len()));
    let (p2, _) = write("b.csv", 7);
    let same = fs::read(&p1).unwrap() == fs::read(&p2).unwrap();
    r.check("7d identical seeds give identical files", same, "byte comparison of two exports with seed 7");
}

fn criterion_8(r: &mut Report) {
    let field = VoxelField::from_fn(64, Aabb::cube(1.0), |p| (if p.norm() <= 0.5 { 10.0 } else { 0.0 }, Vec3::splat(0.5))).unwrap();
    let mesh = marching_cubes(&field, &ExtractionConfig::default()).unwrap();
    let diag = 3f64.sqrt() * field.voxel_size();
    let worst = mesh.vertices.iter().map(|v| (v.norm() - 0.5).abs()).fold(0.0, f64::max);
    let closed = mesh.is_closed_oriented() && mesh.boundary_edge_count() == 0;
    r.check("8a indicator sphere surface", closed && worst <= diag, format!("closed 2-manifold {closed}; max |r - 0.5| {worst:.4} <= {diag:.4}"));

    let body = uv_sphere(Vec3::ZERO, 0.5, 51, 50);
    let speck = uv_sphere(Vec3::new(0.6, 0.0, 0.0), 0.05, 6, 4);
    let kept = largest_component(&merge(&body, &speck), 0.1).unwrap();
    r.check(
        "8b speckle removal",
        kept == body,
        format!("{} + {} triangles -> {}", body.triangles.len(), speck.triangles.len(), kept.triangles.len()),
    );
}

fn criterion_9(r: &mut Report) {
    let img: Vec<Vec3> = (0..32 * 32).map(|i| Vec3::splat(((i * 37) % 101) as f64 / 100.0)).collect();
    let same = ssim(&img, &img, 32, 32).unwrap();
    r.check("9a identical images", (same - 1.0).abs() < 1e-12, format!("{same}"));
    let a = vec![Vec3::splat(0.2); 32 * 32];
    let b = vec![Vec3::splat(0.8); 32 * 32];
    let got = ssim(&a, &b, 32, 32).unwrap();
    r.check("9b constant 0.2 vs 0.8", (got - 0.7055).abs() <= 1e-3, format!("{got:.4} vs expected 0.7055 +- 1e-3"));
}

fn room_plan() -> FloorPlan {
    let slot = |id: &str, cat: &str, x: f64, y: f64, yaw: f64, e: Vec3| PlacementSlot {
        id: id.into(),
        category: cat.into(),
        position: Vec3::new(x, y, 0.0),
        yaw,
        extent: e,
    };
    FloorPlan {
        name: "four".into(),
        floor_polygon: vec![[0.0, 0.0], [6.0, 0.0], [6.0, 3.0], [3.0, 3.0], [3.0, 5.0], [0.0, 5.0]],
        wall_height: 2.5,
        slots: vec![
            slot("table", "table", 1.5, 1.5, 0.3, Vec3::new(1.2, 0.8, 0.75)),
            slot("chair", "chair", 4.5, 1.5, 1.2, Vec3::new(0.6, 0.6, 0.9)),
            slot("lamp", "lamp", 1.0, 4.2, 0.0, Vec3::new(0.4, 0.4, 1.6)),
            slot("vase", "vase", 2.3, 4.0, 2.0, Vec3::new(0.3, 0.3, 0.5)),
        ],
    }
}

fn random_mesh(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let n = rng.random_range(3..40);
    let scale = Vec3::new(rng.random_range(0.1..3.0), rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
    let off = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let vertices: Vec<Vec3> = (0..n)
        .map(|_| off + Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).mul_elem(scale))
        .collect();
    let triangles = (0..n as u32 - 2).map(|i| [i, i + 1, i + 2]).collect();
    TriangleMesh::new(vertices, triangles)
}

fn criterion_10(r: &mut Report) {
    let plan = room_plan();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut library: BTreeMap<String, Vec<TriangleMesh>> = BTreeMap::new();
    for s in &plan.slots {
        library.insert(s.category.clone(), (0..3).map(|_| random_mesh(&mut rng)).collect());
    }
    let mut clean = 0;
    for seed in 0..100 {
        if let Ok(scene) = assemble_scene(&plan, &library, seed) {
            if scene.placed.len() == 4 && check_collisions(&scene).is_empty() {
                clean += 1;
            }
        }
    }
    r.check("10a seeded assemblies collision free", clean == 100, format!("{clean}/100"));

    let mut contained = 0;
    for i in 0..1000 {
        let mesh = random_mesh(&mut rng);
        let slot = PlacementSlot {
            id: format!("s{i}"),
            category: "x".into(),
            position: Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..2.0)),
            yaw: rng.random_range(-4.0..4.0),
            extent: Vec3::new(rng.random_range(0.05..3.0), rng.random_range(0.05..3.0), rng.random_range(0.05..3.0)),
        };
        let placed = fit_to_slot(&mesh, &slot).unwrap().apply_mesh(&mesh);
        if slot.slot_box().contains_box(&placed.bounds(), 1e-9) {
            contained += 1;
        }
    }
    r.check("10b fit_to_slot containment", contained == 1000, format!("{contained}/1000"));

    let scene = assemble_scene(&plan, &library, 0).unwrap();
    let trace = TraceScene::new(&scene.world_mesh());
    let cam = default_preview_camera(&plan, 64, 64);
    let lights = preview_lights();
    let (fast, slow) = (trace.render(&cam, &lights), trace.render_brute_force(&cam, &lights));
    let same = fast.len() == slow.len() && fast.iter().zip(&slow).all(|(a, b)| a.to_array().map(f64::to_bits) == b.to_array().map(f64::to_bits));
    r.check("10c BVH equals brute force", same, format!("64x64 probe over {} triangles", scene.triangle_count()));
}

fn criterion_11(r: &mut Report) {
    let mut cfg = PipelineConfig::load(&workspace_file("configs/demo.toml")).expect("demo config");
    let dir = tempfile::tempdir().unwrap();
    cfg.paths.output = dir.path().to_path_buf();
    let t0 = Instant::now();
    let first = run_pipeline(&cfg);
    let secs = t0.elapsed().as_secs_f64();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match first {
        Ok(m) => {
            let n = m.stages.iter().filter(|s| s.usable()).count();
            r.check("11a demo pipeline", n == 6 && secs < 900.0, format!("{n}/6 stages in {secs:.0}s < 900s on {cores} core(s)"));
        }
        Err(e) => r.check("11a demo pipeline", false, format!("failed after {secs:.0}s: {e}")),
    }
    match run_pipeline(&cfg) {
        Ok(m) => {
            let ex = m.executed();
            r.check("11b rerun is a full cache hit", ex.is_empty(), format!("{} stages executed", ex.len()));
        }
        Err(e) => r.check("11b rerun is a full cache hit", false, e.to_string()),
    }
}

fn main() {
    let criteria: [(&str, fn(&mut Report)); 11] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("8", criterion_8),
        ("9", criterion_9),
        ("10", criterion_10),
        ("11", criterion_11),
    ];
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut report = Report::default();
    for (id, run) in criteria {
        if wanted.is_empty() || wanted.iter().any(|w| w == id) {
            run(&mut report);
        }
    }
    let failed: Vec<&Outcome> = report.0.iter().filter(|o| !o.pass).collect();
    println!("\n{} passed, {} failed", report.0.len() - failed.len(), failed.len());
    for o in &failed {
        println!("  failed {}: {}", o.id, o.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
