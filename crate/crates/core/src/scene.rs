//! Floor plans with placement slots, asset fitting, collision checks, scene
//! export and a BVH ray-traced preview.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::mix_seed;
use crate::geometry::{Aabb, CameraPose, Mat3, Ray, Vec3};
use crate::mesh::{export_obj, from_gltf_axes, import_obj, to_gltf_axes, GltfBuilder, GltfDocument, MeshError, TriangleMesh};
use crate::oracle::{lambert, write_png_rgb, DirectionalLight, OracleError};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid floor plan: {0}")]
    Validation(String),
    #[error("degenerate asset: extent {0:?} has an axis below 1e-9")]
    DegenerateAsset(Vec3),
    #[error("slot {slot} needs a {category} asset but none was supplied")]
    UnfillableSlot { slot: String, category: String },
    #[error("placement collides: {}", format_violations(.0))]
    Collision(Vec<Violation>),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Image(#[from] OracleError),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("{}/{}", x.a, x.b)).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementSlot {
    pub id: String,
    pub category: String,
    /// Floor anchor in meters.
    pub position: Vec3,
    pub yaw: f64,
    pub extent: Vec3,
}

impl PlacementSlot {
    /// Axis-aligned box the placed asset must fit in: centered on the anchor
    /// in x and y, standing on it in z.
    pub fn slot_box(&self) -> Aabb {
        let h = Vec3::new(self.extent.x * 0.5, self.extent.y * 0.5, 0.0);
        Aabb {
            min: self.position - h,
            max: self.position + h + Vec3::new(0.0, 0.0, self.extent.z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorPlan {
    pub name: String,
    pub floor_polygon: Vec<[f64; 2]>,
    pub wall_height: f64,
    pub slots: Vec<PlacementSlot>,
}

fn cross2(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

pub fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum::<f64>()
        * 0.5
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed segment intersection, touching included.
pub fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (d1, d2) = (cross2(c, d, a), cross2(c, d, b));
    let (d3, d4) = (cross2(a, b, c), cross2(a, b, d));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

fn segments_cross_properly(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (d1, d2) = (cross2(c, d, a), cross2(c, d, b));
    let (d3, d4) = (cross2(a, b, c), cross2(a, b, d));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Even-odd point in polygon test.
pub fn point_in_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Whether the rectangle `[lo, hi]` lies inside the polygon. Touching the
/// boundary is allowed up to `eps`.
pub fn rect_inside_polygon(poly: &[[f64; 2]], lo: [f64; 2], hi: [f64; 2], eps: f64) -> bool {
    let (lo, hi) = ([lo[0] + eps, lo[1] + eps], [hi[0] - eps, hi[1] - eps]);
    if lo[0] > hi[0] || lo[1] > hi[1] {
        return point_in_polygon(poly, [(lo[0] + hi[0]) * 0.5, (lo[1] + hi[1]) * 0.5]);
    }
    let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
    if !corners.iter().all(|&c| point_in_polygon(poly, c)) {
        return false;
    }
    if poly.iter().any(|p| p[0] > lo[0] && p[0] < hi[0] && p[1] > lo[1] && p[1] < hi[1]) {
        return false;
    }
    let n = poly.len();
    !(0..n).any(|i| (0..4).any(|k| segments_cross_properly(poly[i], poly[(i + 1) % n], corners[k], corners[(k + 1) % 4])))
}

impl FloorPlan {
    pub fn from_json(text: &str) -> Result<FloorPlan, SceneError> {
        let plan: FloorPlan = serde_json::from_str(text).map_err(|e| SceneError::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("floor plan serializes")
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::Validation(m));
        let poly = &self.floor_polygon;
        let n = poly.len();
        if n < 3 {
            return bad(format!("polygon of {} has {n} points, needs at least 3", self.name));
        }
        if poly.iter().flatten().any(|v| !v.is_finite()) {
            return bad("polygon has non-finite coordinates".into());
        }
        for i in 0..n {
            if poly[i] == poly[(i + 1) % n] {
                return bad(format!("polygon repeats point {i} ({:?})", poly[i]));
            }
        }
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            let c = poly[(i + 2) % n];
            if cross2(a, b, c) == 0.0 && (b[0] - a[0]) * (c[0] - b[0]) + (b[1] - a[1]) * (c[1] - b[1]) < 0.0 {
                return bad(format!("polygon folds back on itself at point {}", (i + 1) % n));
            }
            for j in i + 2..n {
                if (j + 1) % n == i {
                    continue;
                }
                if segments_intersect(a, b, poly[j], poly[(j + 1) % n]) {
                    return bad(format!("polygon is not simple: edge {i} intersects edge {j}"));
                }
            }
        }
        if signed_area(poly) <= 0.0 {
            return bad("polygon is clockwise; floor_polygon must be counter-clockwise".into());
        }
        if !(self.wall_height > 0.0 && self.wall_height.is_finite()) {
            return bad(format!("wall_height {} must be positive", self.wall_height));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.slots {
            if !seen.insert(s.id.as_str()) {
                return bad(format!("duplicate slot id {:?}", s.id));
            }
            if !(s.extent.x > 0.0 && s.extent.y > 0.0 && s.extent.z > 0.0) || !s.extent.is_finite() {
                return bad(format!("slot {:?} has non-positive extent {:?}", s.id, s.extent));
            }
            if !s.position.is_finite() || !s.yaw.is_finite() {
                return bad(format!("slot {:?} has non-finite position or yaw", s.id));
            }
            if !point_in_polygon(poly, [s.position.x, s.position.y]) {
                return bad(format!("slot {:?} anchor {:?} lies outside the floor polygon", s.id, s.position));
            }
        }
        Ok(())
    }

    pub fn slot(&self, id: &str) -> Option<&PlacementSlot> {
        self.slots.iter().find(|s| s.id == id)
    }
}

pub fn load_floorplan(path: &Path) -> Result<FloorPlan, SceneError> {
    let text = fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let plan: FloorPlan = serde_json::from_str(&text).map_err(|e| SceneError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    plan.validate()?;
    Ok(plan)
}

/// Uniform scale, then rotation about +z, then translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub scale: f64,
    pub yaw: f64,
    pub translation: Vec3,
}

impl Placement {
    pub fn identity() -> Placement {
        Placement {
            scale: 1.0,
            yaw: 0.0,
            translation: Vec3::ZERO,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        Mat3::rotation_z(self.yaw) * (p * self.scale) + self.translation
    }

    pub fn apply_mesh(&self, mesh: &TriangleMesh) -> TriangleMesh {
        let mut out = mesh.clone();
        out.vertices = mesh.vertices.iter().map(|&v| self.apply(v)).collect();
        let r = Mat3::rotation_z(self.yaw);
        out.normals = mesh.normals.iter().map(|&n| r * n).collect();
        out
    }
}

/// Fits `mesh` into `slot` with one uniform scale, standing on the anchor.
pub fn fit_to_slot(mesh: &TriangleMesh, slot: &PlacementSlot) -> Result<Placement, SceneError> {
    if mesh.vertices.is_empty() {
        return Err(SceneError::Mesh(MeshError::EmptyMesh));
    }
    let r = Mat3::rotation_z(slot.yaw);
    let rotated = Aabb::from_points(mesh.vertices.iter().map(|&v| r * v));
    let e = rotated.extent();
    if e.min_component() < 1e-9 {
        return Err(SceneError::DegenerateAsset(e));
    }
    let s = (slot.extent.x / e.x).min(slot.extent.y / e.y).min(slot.extent.z / e.z);
    let c = rotated.center();
    Ok(Placement {
        scale: s,
        yaw: slot.yaw,
        translation: Vec3::new(slot.position.x - s * c.x, slot.position.y - s * c.y, slot.position.z - s * rotated.min.z),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub a: String,
    /// Another slot id, or `"wall"`.
    pub b: String,
}

pub const WALL: &str = "wall";

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedAsset {
    pub slot_id: String,
    pub category: String,
    /// Index into [`SceneGraph::library`].
    pub mesh: usize,
    pub transform: Placement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGraph {
    pub plan: FloorPlan,
    pub floor: TriangleMesh,
    pub walls: TriangleMesh,
    pub wall_count: usize,
    pub library: Vec<TriangleMesh>,
    pub placed: Vec<PlacedAsset>,
}

const FLOOR_COLOR: Vec3 = Vec3::new(0.72, 0.66, 0.58);
const WALL_COLOR: Vec3 = Vec3::new(0.9, 0.9, 0.88);
const DEFAULT_ASSET_COLOR: Vec3 = Vec3::new(0.7, 0.7, 0.7);

/// Ear clipping of a simple counter-clockwise polygon.
pub fn triangulate_polygon(poly: &[[f64; 2]]) -> Vec<[u32; 3]> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut out = Vec::with_capacity(poly.len().saturating_sub(2));
    let inside_tri = |a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]| {
        cross2(a, b, p) >= 0.0 && cross2(b, c, p) >= 0.0 && cross2(c, a, p) >= 0.0
    };
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for k in 0..m {
            let (ia, ib, ic) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
            let (a, b, c) = (poly[ia], poly[ib], poly[ic]);
            if cross2(a, b, c) <= 0.0 {
                continue;
            }
            let blocked = idx.iter().any(|&j| j != ia && j != ib && j != ic && poly[j] != a && poly[j] != b && poly[j] != c && inside_tri(a, b, c, poly[j]));
            if !blocked {
                out.push([ia as u32, ib as u32, ic as u32]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            // Only collinear runs remain: drop a flat vertex.
            let m = idx.len();
            let k = (0..m)
                .find(|&k| cross2(poly[idx[(k + m - 1) % m]], poly[idx[k]], poly[idx[(k + 1) % m]]) == 0.0)
                .unwrap_or(0);
            idx.remove(k);
        }
    }
    if idx.len() == 3 && cross2(poly[idx[0]], poly[idx[1]], poly[idx[2]]) > 0.0 {
        out.push([idx[0] as u32, idx[1] as u32, idx[2] as u32]);
    }
    out
}

fn floor_mesh(plan: &FloorPlan) -> TriangleMesh {
    let vertices = plan.floor_polygon.iter().map(|p| Vec3::new(p[0], p[1], 0.0)).collect::<Vec<_>>();
    let mut m = TriangleMesh::new(vertices, triangulate_polygon(&plan.floor_polygon));
    m.colors = vec![FLOOR_COLOR; m.vertices.len()];
    m
}

/// One inward-facing quad per polygon edge.
fn wall_mesh(plan: &FloorPlan) -> TriangleMesh {
    let poly = &plan.floor_polygon;
    let h = plan.wall_height;
    let mut m = TriangleMesh::default();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let base = m.vertices.len() as u32;
        m.vertices.extend([
            Vec3::new(a[0], a[1], 0.0),
            Vec3::new(b[0], b[1], 0.0),
            Vec3::new(b[0], b[1], h),
            Vec3::new(a[0], a[1], h),
        ]);
        m.triangles.push([base, base + 2, base + 1]);
        m.triangles.push([base, base + 3, base + 2]);
    }
    m.colors = vec![WALL_COLOR; m.vertices.len()];
    m
}

impl SceneGraph {
    /// Floor and walls for `plan` with no assets placed.
    pub fn empty(plan: &FloorPlan) -> SceneGraph {
        SceneGraph {
            plan: plan.clone(),
            floor: floor_mesh(plan),
            walls: wall_mesh(plan),
            wall_count: plan.floor_polygon.len(),
            library: Vec::new(),
            placed: Vec::new(),
        }
    }

    /// Places `mesh` in slot `slot_id` without any checks.
    pub fn place(&mut self, slot_id: &str, category: &str, mesh: usize, transform: Placement) {
        self.placed.push(PlacedAsset {
            slot_id: slot_id.to_string(),
            category: category.to_string(),
            mesh,
            transform,
        });
    }

    pub fn asset_world_mesh(&self, asset: &PlacedAsset) -> TriangleMesh {
        asset.transform.apply_mesh(&self.library[asset.mesh])
    }

    pub fn asset_bounds(&self, asset: &PlacedAsset) -> Aabb {
        let lib = &self.library[asset.mesh];
        Aabb::from_points(lib.vertices.iter().map(|&v| asset.transform.apply(v)))
    }

    /// Every triangle of the scene in world space, with vertex colors:
    /// floor first, then walls, then assets in placement order.
    pub fn world_mesh(&self) -> TriangleMesh {
        let mut out = TriangleMesh::default();
        let mut append = |m: &TriangleMesh| {
            let base = out.vertices.len() as u32;
            out.vertices.extend_from_slice(&m.vertices);
            if m.colors.len() == m.vertices.len() {
                out.colors.extend_from_slice(&m.colors);
            } else {
                out.colors.extend(std::iter::repeat_n(DEFAULT_ASSET_COLOR, m.vertices.len()));
            }
            out.triangles.extend(m.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        };
        append(&self.floor);
        append(&self.walls);
        for a in &self.placed {
            append(&self.asset_world_mesh(a));
        }
        out
    }

    pub fn triangle_count(&self) -> usize {
        self.floor.triangles.len()
            + self.walls.triangles.len()
            + self.placed.iter().map(|a| self.library[a.mesh].triangles.len()).sum::<usize>()
    }
}

/// Pairwise AABB overlaps among placed assets, then footprints leaving the
/// floor polygon. Touching boxes do not collide.
pub fn check_collisions(scene: &SceneGraph) -> Vec<Violation> {
    let boxes: Vec<Aabb> = scene.placed.iter().map(|a| scene.asset_bounds(a)).collect();
    let mut out = Vec::new();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if boxes[i].overlaps(&boxes[j]) {
                out.push(Violation {
                    a: scene.placed[i].slot_id.clone(),
                    b: scene.placed[j].slot_id.clone(),
                });
            }
        }
    }
    for (a, b) in scene.placed.iter().zip(&boxes) {
        if !rect_inside_polygon(&scene.plan.floor_polygon, [b.min.x, b.min.y], [b.max.x, b.max.y], 1e-9) {
            out.push(Violation {
                a: a.slot_id.clone(),
                b: WALL.into(),
            });
        }
    }
    out
}

/// Fills every slot with a seeded choice among the assets of its category.
pub fn assemble_scene(plan: &FloorPlan, assets: &BTreeMap<String, Vec<TriangleMesh>>, seed: u64) -> Result<SceneGraph, SceneError> {
    plan.validate()?;
    let mut scene = SceneGraph::empty(plan);
    let mut library_index: HashMap<(String, usize), usize> = HashMap::new();
    for (k, slot) in plan.slots.iter().enumerate() {
        let candidates = assets.get(&slot.category).filter(|c| !c.is_empty()).ok_or_else(|| SceneError::UnfillableSlot {
            slot: slot.id.clone(),
            category: slot.category.clone(),
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, k as u64]));
        let pick = rng.random_range(0..candidates.len());
        let mesh = &candidates[pick];
        let transform = fit_to_slot(mesh, slot)?;
        let next = scene.library.len();
        let lib = *library_index.entry((slot.category.clone(), pick)).or_insert(next);
        if lib == next {
            scene.library.push(mesh.clone());
        }
        scene.place(&slot.id, &slot.category, lib, transform);
    }
    let violations = check_collisions(&scene);
    if !violations.is_empty() {
        return Err(SceneError::Collision(violations));
    }
    Ok(scene)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneFormat {
    Gltf,
    Obj,
}

impl SceneFormat {
    pub fn from_path(path: &Path) -> Option<SceneFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "gltf" => Some(SceneFormat::Gltf),
            "obj" => Some(SceneFormat::Obj),
            _ => None,
        }
    }
}

fn yaw_quaternion(yaw: f64) -> [f64; 4] {
    // Rotation about world +z is rotation about glTF +y.
    let (s, c) = (yaw * 0.5).sin_cos();
    [0.0, s, 0.0, c]
}

fn quat_rotate(q: [f64; 4], v: Vec3) -> Vec3 {
    let u = Vec3::new(q[0], q[1], q[2]);
    let w = q[3];
    u * (2.0 * u.dot(v)) + v * (w * w - u.dot(u)) + u.cross(v) * (2.0 * w)
}

/// glTF keeps one mesh per library entry and one node per placed asset;
/// OBJ merges everything in world space.
pub fn export_scene(scene: &SceneGraph, path: &Path, format: SceneFormat) -> Result<(), SceneError> {
    match format {
        SceneFormat::Obj => Ok(export_obj(&scene.world_mesh(), path)?),
        SceneFormat::Gltf => {
            let mut b = GltfBuilder::default();
            let floor = b.add_mesh(&scene.floor, "floor");
            let walls = b.add_mesh(&scene.walls, "walls");
            let lib: Vec<usize> = scene.library.iter().enumerate().map(|(i, m)| b.add_mesh(m, &format!("asset_{i}"))).collect();
            let mut nodes = vec![
                serde_json::json!({ "name": "floor", "mesh": floor }),
                serde_json::json!({ "name": "walls", "mesh": walls }),
            ];
            for a in &scene.placed {
                let t = to_gltf_axes(a.transform.translation);
                let s = a.transform.scale;
                nodes.push(serde_json::json!({
                    "name": a.slot_id,
                    "mesh": lib[a.mesh],
                    "translation": [t.x, t.y, t.z],
                    "rotation": yaw_quaternion(a.transform.yaw),
                    "scale": [s, s, s],
                    "extras": { "category": a.category }
                }));
            }
            let roots = (0..nodes.len()).collect();
            Ok(b.write(path, nodes, roots)?)
        }
    }
}

fn json_vec(v: &serde_json::Value, default: &[f64]) -> Vec<f64> {
    v.as_array()
        .map(|a| a.iter().map(|x| x.as_f64().unwrap_or(0.0)).collect())
        .unwrap_or_else(|| default.to_vec())
}

/// Reads a scene file back as one merged world-space mesh.
pub fn import_scene(path: &Path) -> Result<TriangleMesh, SceneError> {
    match SceneFormat::from_path(path) {
        Some(SceneFormat::Obj) => Ok(import_obj(path)?),
        Some(SceneFormat::Gltf) => {
            let doc = GltfDocument::load(path)?;
            doc.validate()?;
            let mut out = TriangleMesh::default();
            let nodes = doc.json["nodes"].as_array().cloned().unwrap_or_default();
            for n in &nodes {
                let Some(m) = n["mesh"].as_u64() else { continue };
                let local = doc.mesh(m as usize)?;
                let t = json_vec(&n["translation"], &[0.0, 0.0, 0.0]);
                let q = json_vec(&n["rotation"], &[0.0, 0.0, 0.0, 1.0]);
                let s = json_vec(&n["scale"], &[1.0, 1.0, 1.0]);
                if t.len() != 3 || q.len() != 4 || s.len() != 3 {
                    return Err(SceneError::Parse {
                        path: path.display().to_string(),
                        message: "malformed node transform".into(),
                    });
                }
                let base = out.vertices.len() as u32;
                for v in &local.vertices {
                    let g = to_gltf_axes(*v);
                    let g = quat_rotate([q[0], q[1], q[2], q[3]], Vec3::new(g.x * s[0], g.y * s[1], g.z * s[2])) + Vec3::new(t[0], t[1], t[2]);
                    out.vertices.push(from_gltf_axes(g));
                }
                if local.colors.len() == local.vertices.len() {
                    out.colors.extend_from_slice(&local.colors);
                } else {
                    out.colors.extend(std::iter::repeat_n(DEFAULT_ASSET_COLOR, local.vertices.len()));
                }
                out.triangles.extend(local.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
            }
            Ok(out)
        }
        None => Err(SceneError::Parse {
            path: path.display().to_string(),
            message: "unknown scene extension (expected .gltf or .obj)".into(),
        }),
    }
}

/// Möller–Trumbore. Returns `(t, u, v)` for hits with `t > 1e-9`.
pub fn intersect_triangle(ray: &Ray, tri: &[Vec3; 3]) -> Option<(f64, f64, f64)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = ray.direction.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - tri[0];
    let u = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = ray.direction.dot(q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > 1e-9).then_some((t, u, v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceHit {
    pub t: f64,
    pub triangle: usize,
    pub u: f64,
    pub v: f64,
}

fn closer(hit: &TraceHit, best: &Option<TraceHit>) -> bool {
    match best {
        None => true,
        Some(b) => hit.t < b.t || (hit.t == b.t && hit.triangle < b.triangle),
    }
}

/// Nearest hit over every triangle; ties go to the lowest index.
pub fn brute_force_hit(tris: &[[Vec3; 3]], ray: &Ray) -> Option<TraceHit> {
    let mut best = None;
    for (i, tri) in tris.iter().enumerate() {
        if let Some((t, u, v)) = intersect_triangle(ray, tri) {
            let h = TraceHit { t, triangle: i, u, v };
            if closer(&h, &best) {
                best = Some(h);
            }
        }
    }
    best
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    /// Leaf when `count > 0`: triangles `order[start..start + count]`.
    start: usize,
    count: usize,
    left: usize,
    right: usize,
}

/// Bounding volume hierarchy with median splits over triangle centroids.
#[derive(Debug, Clone)]
pub struct Bvh {
    tris: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(tris: Vec<[Vec3; 3]>) -> Bvh {
        let mut bvh = Bvh {
            order: (0..tris.len()).collect(),
            tris,
            nodes: Vec::new(),
        };
        if !bvh.tris.is_empty() {
            let centroids: Vec<Vec3> = bvh.tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
            bvh.build_node(0, bvh.tris.len(), &centroids);
        }
        bvh
    }

    fn build_node(&mut self, start: usize, end: usize, centroids: &[Vec3]) -> usize {
        let mut bounds = Aabb::from_points(self.order[start..end].iter().flat_map(|&i| self.tris[i]));
        let pad = (bounds.extent().max_component() + 1.0) * 1e-9;
        bounds.min -= Vec3::splat(pad);
        bounds.max += Vec3::splat(pad);
        let id = self.nodes.len();
        self.nodes.push(BvhNode {
            bounds,
            start,
            count: end - start,
            left: 0,
            right: 0,
        });
        let cb = Aabb::from_points(self.order[start..end].iter().map(|&i| centroids[i]));
        let ext = cb.extent();
        if end - start <= LEAF_SIZE || ext.max_component() <= 0.0 {
            return id;
        }
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        self.order[start..end].sort_by(|&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b)));
        let mid = start + (end - start) / 2;
        let left = self.build_node(start, mid, centroids);
        let right = self.build_node(mid, end, centroids);
        let node = &mut self.nodes[id];
        node.count = 0;
        node.left = left;
        node.right = right;
        id
    }

    pub fn triangles(&self) -> &[[Vec3; 3]] {
        &self.tris
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn box_entry(b: &Aabb, ray: &Ray, inv: Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for axis in 0..3 {
            let (o, d) = (ray.origin[axis], ray.direction[axis]);
            let (lo, hi) = (b.min[axis], b.max[axis]);
            if d == 0.0 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let (mut a, mut c) = ((lo - o) * inv[axis], (hi - o) * inv[axis]);
            if a > c {
                std::mem::swap(&mut a, &mut c);
            }
            t0 = t0.max(a);
            t1 = t1.min(c);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }

    /// Same result as [`brute_force_hit`], including tie-breaking.
    pub fn intersect(&self, ray: &Ray) -> Option<TraceHit> {
        if self.nodes.is_empty() {
            return None;
        }
        let d = ray.direction;
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut best: Option<TraceHit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let limit = best.map_or(f64::INFINITY, |b| b.t);
            if Self::box_entry(&node.bounds, ray, inv, limit).is_none() {
                continue;
            }
            if node.count > 0 {
                for &i in &self.order[node.start..node.start + node.count] {
                    if let Some((t, u, v)) = intersect_triangle(ray, &self.tris[i]) {
                        let h = TraceHit { t, triangle: i, u, v };
                        if closer(&h, &best) {
                            best = Some(h);
                        }
                    }
                }
            } else {
                let (l, r) = (node.left, node.right);
                let el = Self::box_entry(&self.nodes[l].bounds, ray, inv, limit).unwrap_or(f64::INFINITY);
                let er = Self::box_entry(&self.nodes[r].bounds, ray, inv, limit).unwrap_or(f64::INFINITY);
                if el <= er {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

/// Triangles and per-vertex colors of a world mesh, ready for tracing.
pub struct TraceScene {
    pub bvh: Bvh,
    colors: Vec<[Vec3; 3]>,
}

impl TraceScene {
    pub fn new(mesh: &TriangleMesh) -> TraceScene {
        let tris = (0..mesh.triangles.len()).map(|t| mesh.triangle(t)).collect();
        let colors = mesh
            .triangles
            .iter()
            .map(|t| {
                let c = |i: u32| mesh.colors.get(i as usize).copied().unwrap_or(DEFAULT_ASSET_COLOR);
                [c(t[0]), c(t[1]), c(t[2])]
            })
            .collect();
        TraceScene { bvh: Bvh::build(tris), colors }
    }

    pub fn shade(&self, ray: &Ray, hit: Option<TraceHit>, lights: &[DirectionalLight]) -> Vec3 {
        let Some(h) = hit else { return Vec3::ONE };
        let tri = &self.bvh.tris[h.triangle];
        let mut n = (tri[1] - tri[0]).cross(tri[2] - tri[0]).normalized();
        if n.dot(ray.direction) > 0.0 {
            n = -n;
        }
        let c = self.colors[h.triangle];
        let albedo = c[0] * (1.0 - h.u - h.v) + c[1] * h.u + c[2] * h.v;
        let l = lambert(n, lights);
        Vec3::new((albedo.x * l).clamp(0.0, 1.0), (albedo.y * l).clamp(0.0, 1.0), (albedo.z * l).clamp(0.0, 1.0))
    }

    /// Renders with `hit_fn` choosing the nearest hit per pixel.
    pub fn render_with<F>(&self, camera: &CameraPose, lights: &[DirectionalLight], hit_fn: F) -> Vec<Vec3>
    where
        F: Fn(&Ray) -> Option<TraceHit> + Sync,
    {
        let w = camera.width;
        (0..camera.pixel_count())
            .into_par_iter()
            .map(|i| {
                let ray = camera.pixel_ray(i % w, i / w);
                self.shade(&ray, hit_fn(&ray), lights)
            })
            .collect()
    }

    pub fn render(&self, camera: &CameraPose, lights: &[DirectionalLight]) -> Vec<Vec3> {
        self.render_with(camera, lights, |r| self.bvh.intersect(r))
    }

    pub fn render_brute_force(&self, camera: &CameraPose, lights: &[DirectionalLight]) -> Vec<Vec3> {
        self.render_with(camera, lights, |r| brute_force_hit(&self.bvh.tris, r))
    }
}

/// Ray-traced Lambert preview on a white background, no shadows.
pub fn preview_render(scene: &SceneGraph, camera: &CameraPose, lights: &[DirectionalLight]) -> Vec<Vec3> {
    TraceScene::new(&scene.world_mesh()).render(camera, lights)
}

/// Camera standing near the corner of the plan's bounding box, looking
/// across the room.
pub fn default_preview_camera(plan: &FloorPlan, width: usize, height: usize) -> CameraPose {
    let b = Aabb::from_points(plan.floor_polygon.iter().map(|p| Vec3::new(p[0], p[1], 0.0)));
    let c = b.center();
    let eye = c + (b.min - c) * 0.85 + Vec3::new(0.0, 0.0, 0.8 * plan.wall_height);
    let target = c + Vec3::new(0.0, 0.0, 0.25 * plan.wall_height);
    CameraPose::look_at(eye, target, 65f64.to_radians(), width, height).expect("distinct eye and target")
}

pub fn preview_lights() -> Vec<DirectionalLight> {
    vec![
        DirectionalLight::new(Vec3::new(0.3, 0.5, 1.0), 0.75),
        DirectionalLight::new(Vec3::new(-0.6, -0.2, 0.4), 0.35),
        DirectionalLight::new(Vec3::new(0.2, -0.8, 0.3), 0.25),
    ]
}

pub fn write_preview_png(path: &Path, width: usize, height: usize, rgb: &[Vec3]) -> Result<(), SceneError> {
    let px: Vec<[f32; 3]> = rgb.iter().map(|c| [c.x as f32, c.y as f32, c.z as f32]).collect();
    Ok(write_png_rgb(path, width, height, &px)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tests::uv_sphere;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn square_room(slots: Vec<PlacementSlot>) -> FloorPlan {
        FloorPlan {
            name: "square".into(),
            floor_polygon: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]],
            wall_height: 2.5,
            slots,
        }
    }

    fn slot(id: &str, category: &str, x: f64, y: f64, extent: Vec3) -> PlacementSlot {
        PlacementSlot {
            id: id.into(),
            category: category.into(),
            position: Vec3::new(x, y, 0.0),
            yaw: 0.0,
            extent,
        }
    }

    fn box_mesh(lo: Vec3, hi: Vec3) -> TriangleMesh {
        let b = Aabb { min: lo, max: hi };
        let v = b.corners().to_vec();
        let t = vec![
            [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
            [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
        ];
        TriangleMesh::new(v, t)
    }

    #[test]
    fn parses_square_room_with_two_slots() {
        let json = r#"{"name":"room","floor_polygon":[[0,0],[4,0],[4,4],[0,4]],"wall_height":2.5,
            "slots":[{"id":"a","category":"chair","position":[1,1,0],"yaw":0,"extent":[1,1,1]},
                     {"id":"b","category":"vase","position":[3,3,0],"yaw":1.0,"extent":[0.5,0.5,0.8]}]}"#;
        let plan = FloorPlan::from_json(json).unwrap();
        assert_eq!(plan.slots.len(), 2);
        assert_eq!(plan.slot("b").unwrap().category, "vase");
    }

    #[test]
    fn rejects_invalid_plans() {
        let outside = square_room(vec![slot("far", "chair", 10.0, 10.0, Vec3::ONE)]);
        let e = outside.validate().unwrap_err().to_string();
        assert!(e.contains("far") && e.contains("outside"), "{e}");

        let mut cw = square_room(vec![]);
        cw.floor_polygon.reverse();
        assert!(cw.validate().unwrap_err().to_string().contains("clockwise"));

        let dup = square_room(vec![slot("a", "chair", 1.0, 1.0, Vec3::ONE), slot("a", "vase", 2.0, 2.0, Vec3::ONE)]);
        assert!(dup.validate().unwrap_err().to_string().contains("duplicate slot id \"a\""));

        let mut bowtie = square_room(vec![]);
        bowtie.floor_polygon = vec![[0.0, 0.0], [4.0, 4.0], [4.0, 0.0], [0.0, 4.0]];
        assert!(bowtie.validate().unwrap_err().to_string().contains("not simple"));

        let flat = square_room(vec![slot("a", "chair", 1.0, 1.0, Vec3::new(1.0, 0.0, 1.0))]);
        assert!(flat.validate().is_err());
    }

    #[test]
    fn fit_scale_examples() {
        let s = slot("s", "x", 0.0, 0.0, Vec3::ONE);
        let m = box_mesh(Vec3::splat(-1.0), Vec3::splat(1.0));
        assert!((fit_to_slot(&m, &s).unwrap().scale - 0.5).abs() < 1e-15);

        let s = slot("s", "x", 2.0, 2.0, Vec3::splat(2.0));
        let m = box_mesh(Vec3::ZERO, Vec3::new(1.0, 2.0, 1.0));
        let p = fit_to_slot(&m, &s).unwrap();
        assert!((p.scale - 1.0).abs() < 1e-15);
        let b = Aabb::from_points(m.vertices.iter().map(|&v| p.apply(v)));
        assert!((b.min.z - s.position.z).abs() < 1e-9);
        assert!((b.center().x - 2.0).abs() < 1e-12 && (b.center().y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_degenerate_extent() {
        let m = TriangleMesh::new(vec![Vec3::ZERO, Vec3::X, Vec3::Y], vec![[0, 1, 2]]);
        assert!(matches!(fit_to_slot(&m, &slot("s", "x", 0.0, 0.0, Vec3::ONE)), Err(SceneError::DegenerateAsset(_))));
    }

    #[test]
    fn collision_examples() {
        let plan = square_room(vec![
            slot("a", "chair", 1.0, 1.0, Vec3::ONE),
            slot("b", "chair", 3.0, 3.0, Vec3::ONE),
            slot("c", "chair", 1.0, 1.0, Vec3::ONE),
        ]);
        let mesh = box_mesh(Vec3::ZERO, Vec3::ONE);
        let mut scene = SceneGraph::empty(&plan);
        scene.library.push(mesh.clone());
        for id in ["a", "b"] {
            scene.place(id, "chair", 0, fit_to_slot(&mesh, plan.slot(id).unwrap()).unwrap());
        }
        assert!(check_collisions(&scene).is_empty());
        scene.place("c", "chair", 0, fit_to_slot(&mesh, plan.slot("c").unwrap()).unwrap());
        assert_eq!(check_collisions(&scene), vec![Violation { a: "a".into(), b: "c".into() }]);
    }

    #[test]
    fn oversized_slot_against_wall_is_a_wall_violation() {
        // Anchor 0.3 m from the x = 0 wall with a 1 m wide box: the footprint
        // reaches x = -0.2.
        let plan = square_room(vec![slot("w", "chair", 0.3, 2.0, Vec3::ONE)]);
        let mesh = box_mesh(Vec3::ZERO, Vec3::ONE);
        let mut assets = BTreeMap::new();
        assets.insert("chair".to_string(), vec![mesh]);
        match assemble_scene(&plan, &assets, 0) {
            Err(SceneError::Collision(v)) => assert_eq!(v, vec![Violation { a: "w".into(), b: WALL.into() }]),
            other => panic!("expected a wall violation, got {other:?}"),
        }
        // Flush against the wall is fine.
        let plan = square_room(vec![slot("w", "chair", 0.5, 2.0, Vec3::ONE)]);
        assert!(assemble_scene(&plan, &assets, 0).is_ok());
    }

    #[test]
    fn assemble_counts_and_missing_category() {
        let plan = square_room(vec![slot("c1", "chair", 2.0, 2.0, Vec3::ONE)]);
        let mut assets = BTreeMap::new();
        assets.insert("chair".to_string(), vec![uv_sphere(Vec3::ZERO, 1.0, 8, 12)]);
        let scene = assemble_scene(&plan, &assets, 3).unwrap();
        assert_eq!(scene.floor.triangles.len(), 2);
        assert_eq!(scene.wall_count, 4);
        assert_eq!(scene.walls.triangles.len(), 8);
        assert_eq!(scene.placed.len(), 1);

        let plan = square_room(vec![slot("p", "piano", 2.0, 2.0, Vec3::ONE)]);
        match assemble_scene(&plan, &assets, 0) {
            Err(SceneError::UnfillableSlot { slot, category }) => assert_eq!((slot.as_str(), category.as_str()), ("p", "piano")),
            other => panic!("expected unfillable slot, got {other:?}"),
        }
    }

    #[test]
    fn seeded_choice_is_valid_for_every_seed() {
        let plan = square_room(vec![slot("a", "chair", 1.0, 1.0, Vec3::ONE), slot("b", "chair", 3.0, 3.0, Vec3::ONE)]);
        let mut assets = BTreeMap::new();
        assets.insert(
            "chair".to_string(),
            vec![uv_sphere(Vec3::ZERO, 1.0, 6, 8), box_mesh(Vec3::ZERO, Vec3::new(1.0, 0.5, 2.0))],
        );
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..32 {
            let scene = assemble_scene(&plan, &assets, seed).unwrap();
            assert!(check_collisions(&scene).is_empty());
            let picks: Vec<usize> = scene.placed.iter().map(|a| scene.library[a.mesh].triangles.len()).collect();
            seen.insert(picks);
            assert_eq!(scene, assemble_scene(&plan, &assets, seed).unwrap());
        }
        assert!(seen.len() > 1);
    }

    #[test]
    fn ear_clipping_covers_concave_polygon() {
        let l = vec![[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [2.0, 2.0], [2.0, 4.0], [0.0, 4.0]];
        let tris = triangulate_polygon(&l);
        assert_eq!(tris.len(), 4);
        let area: f64 = tris.iter().map(|t| cross2(l[t[0] as usize], l[t[1] as usize], l[t[2] as usize]) * 0.5).sum();
        assert!((area - 12.0).abs() < 1e-12);
        assert!(tris.iter().all(|t| cross2(l[t[0] as usize], l[t[1] as usize], l[t[2] as usize]) > 0.0));
    }

    #[test]
    fn gltf_instancing_and_round_trip() {
        let plan = square_room(vec![slot("a", "chair", 1.0, 1.0, Vec3::ONE), slot("b", "chair", 3.0, 3.0, Vec3::new(1.0, 1.0, 1.5))]);
        let mut plan2 = plan.clone();
        plan2.slots[1].yaw = 0.7;
        let mut assets = BTreeMap::new();
        let mut sphere = uv_sphere(Vec3::new(0.2, -0.1, 0.3), 0.8, 8, 12);
        sphere.colors = vec![Vec3::new(0.2, 0.4, 0.6); sphere.vertices.len()];
        assets.insert("chair".to_string(), vec![sphere]);
        let scene = assemble_scene(&plan2, &assets, 1).unwrap();
        assert_eq!(scene.library.len(), 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.gltf");
        export_scene(&scene, &path, SceneFormat::Gltf).unwrap();
        let doc = GltfDocument::load(&path).unwrap();
        assert_eq!(doc.json["nodes"].as_array().unwrap().len(), scene.placed.len() + 2);
        assert_eq!(doc.mesh_count(), 3);
        assert_eq!(doc.json["nodes"][2]["mesh"], doc.json["nodes"][3]["mesh"]);

        let world = scene.world_mesh();
        for fmt in [SceneFormat::Gltf, SceneFormat::Obj] {
            let p = dir.path().join(if fmt == SceneFormat::Gltf { "s.gltf" } else { "s.obj" });
            export_scene(&scene, &p, fmt).unwrap();
            let back = import_scene(&p).unwrap();
            assert_eq!(back.triangles.len(), world.triangles.len());
            let (a, b) = (world.bounds(), back.bounds());
            assert!((a.min - b.min).norm() < 1e-5 && (a.max - b.max).norm() < 1e-5, "{fmt:?}");
            let max_err = world.vertices.iter().zip(&back.vertices).map(|(p, q)| (*p - *q).norm()).fold(0.0, f64::max);
            assert!(max_err < 1e-5, "{fmt:?} {max_err}");
        }
    }

    #[test]
    fn empty_scene_renders_white() {
        let cam = CameraPose::look_at(Vec3::new(0.0, -5.0, 1.0), Vec3::ZERO, 0.8, 16, 16).unwrap();
        let img = TraceScene::new(&TriangleMesh::default()).render(&cam, &preview_lights());
        assert!(img.iter().all(|&c| c == Vec3::ONE));
    }

    #[test]
    fn red_triangle_shades_center_red() {
        let cam = CameraPose::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, 0.8, 9, 9).unwrap();
        let mut m = TriangleMesh::new(vec![Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)], vec![[0, 1, 2]]);
        m.colors = vec![Vec3::new(1.0, 0.0, 0.0); 3];
        let img = TraceScene::new(&m).render(&cam, &preview_lights());
        let c = img[4 * 9 + 4];
        assert!(c.x > 0.1 && c.y == 0.0 && c.z == 0.0, "{c:?}");
    }

    #[test]
    fn bvh_matches_brute_force_bitwise() {
        let plan = square_room(vec![slot("a", "chair", 1.0, 1.0, Vec3::ONE), slot("b", "vase", 3.0, 2.5, Vec3::new(0.6, 0.6, 1.2))]);
        let mut assets = BTreeMap::new();
        assets.insert("chair".to_string(), vec![box_mesh(Vec3::ZERO, Vec3::new(1.0, 1.0, 1.2))]);
        assets.insert("vase".to_string(), vec![uv_sphere(Vec3::ZERO, 1.0, 12, 16)]);
        let scene = assemble_scene(&plan, &assets, 0).unwrap();
        let trace = TraceScene::new(&scene.world_mesh());
        let cam = default_preview_camera(&plan, 64, 64);
        let lights = preview_lights();
        let a = trace.render(&cam, &lights);
        let b = trace.render_brute_force(&cam, &lights);
        assert!(a.iter().zip(&b).all(|(x, y)| x.x.to_bits() == y.x.to_bits() && x.y.to_bits() == y.y.to_bits() && x.z.to_bits() == y.z.to_bits()));
        assert!(a.iter().any(|&c| c != Vec3::ONE));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fit_always_contains(
            seed in any::<u64>(),
            yaw in -3.2f64..3.2,
            ex in 0.05f64..3.0, ey in 0.05f64..3.0, ez in 0.05f64..3.0,
            px in -5.0f64..5.0, py in -5.0f64..5.0, pz in 0.0f64..2.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vertices: Vec<Vec3> = (0..12)
                .map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-1.0..2.0), rng.random_range(-0.5..4.0)))
                .collect();
            let mesh = TriangleMesh::new(vertices, vec![[0, 1, 2]]);
            let s = PlacementSlot { id: "p".into(), category: "x".into(), position: Vec3::new(px, py, pz), yaw, extent: Vec3::new(ex, ey, ez) };
            let p = fit_to_slot(&mesh, &s).unwrap();
            let b = Aabb::from_points(mesh.vertices.iter().map(|&v| p.apply(v)));
            prop_assert!(s.slot_box().contains_box(&b, 1e-6));
            prop_assert!((b.min.z - pz).abs() < 1e-9);
        }

        #[test]
        fn bvh_matches_brute_force(seed in any::<u64>(), n in 1usize..120) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pt = |r: f64| Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r));
            let tris: Vec<[Vec3; 3]> = (0..n)
                .map(|_| {
                    let c = pt(2.0);
                    [c + pt(0.4), c + pt(0.4), c + pt(0.4)]
                })
                .collect();
            let bvh = Bvh::build(tris);
            for _ in 0..64 {
                let (o, d) = (pt(4.0), pt(1.0));
                let ray = Ray::new(o, if d.norm() < 1e-3 { Vec3::X } else { d });
                let fast = bvh.intersect(&ray);
                let slow = brute_force_hit(bvh.triangles(), &ray);
                prop_assert_eq!(fast.map(|h| (h.t.to_bits(), h.triangle)), slow.map(|h| (h.t.to_bits(), h.triangle)));
            }
        }
    }
}
