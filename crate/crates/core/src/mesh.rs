//! Field-to-mesh distillation: isosurface extraction, cleanup, smoothing,
//! color baking and refinement, plus SSIM and mesh file formats.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{density_normal, field_sample, VoxelField};
use crate::geometry::{Aabb, CameraPose, Vec3};
use crate::oracle::{lambert, Dataset, DirectionalLight};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("level set is empty: no triangles extracted")]
    EmptyMesh,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed mesh file {path}: {message}")]
    Parse { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MeshError + '_ {
    move |source| MeshError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Empty, or one rgb per vertex.
    pub colors: Vec<Vec3>,
    /// Empty, or one unit normal per vertex.
    pub normals: Vec<Vec3>,
}

pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        TriangleMesh {
            vertices,
            triangles,
            colors: Vec::new(),
            normals: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Unnormalized face normal (twice the area vector).
    pub fn face_cross(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(c - a)
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.face_cross(t).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter().copied())
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i as usize >= n) {
                return Err(MeshError::InvalidArgument(format!("triangle {t} indexes past {n} vertices")));
            }
            if self.triangle_area(t) <= MIN_TRIANGLE_AREA {
                return Err(MeshError::InvalidArgument(format!("triangle {t} is degenerate")));
            }
        }
        if !self.colors.is_empty() && self.colors.len() != n {
            return Err(MeshError::InvalidArgument("color count differs from vertex count".into()));
        }
        if !self.normals.is_empty() && self.normals.len() != n {
            return Err(MeshError::InvalidArgument("normal count differs from vertex count".into()));
        }
        Ok(())
    }

    /// Count of undirected edges used by other than exactly two triangles.
    pub fn boundary_edge_count(&self) -> usize {
        let mut count: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        count.values().filter(|&&c| c != 2).count()
    }

    /// Every edge shared by two triangles that traverse it in opposite
    /// directions.
    pub fn is_closed_oriented(&self) -> bool {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Signed volume; positive for closed meshes with outward orientation.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = [self.vertices[t[0] as usize], self.vertices[t[1] as usize], self.vertices[t[2] as usize]];
                a.dot(b.cross(c)) / 6.0
            })
            .sum()
    }

    /// Area-weighted vertex normals.
    pub fn compute_vertex_normals(&mut self) {
        let mut acc = vec![Vec3::ZERO; self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let n = self.face_cross(t);
            for &i in tri {
                acc[i as usize] += n;
            }
        }
        self.normals = acc.into_iter().map(|n| if n.norm() > 0.0 { n.normalized() } else { Vec3::Z }).collect();
    }

    /// Drops triangles at or below the degenerate-area threshold and
    /// unreferenced vertices.
    pub fn remove_degenerate(&mut self) {
        let keep: Vec<bool> = (0..self.triangles.len()).map(|t| self.triangle_area(t) > MIN_TRIANGLE_AREA).collect();
        let tris: Vec<[u32; 3]> = self.triangles.iter().zip(&keep).filter(|(_, k)| **k).map(|(t, _)| *t).collect();
        self.triangles = tris;
        self.compact();
    }

    /// Removes unreferenced vertices, preserving the order of the rest.
    fn compact(&mut self) {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut next = 0u32;
        for t in &self.triangles {
            for &i in t {
                if remap[i as usize] == u32::MAX {
                    remap[i as usize] = 0;
                }
            }
        }
        for r in remap.iter_mut() {
            if *r == 0 {
                *r = next;
                next += 1;
            }
        }
        let pick = |v: &Vec<Vec3>| -> Vec<Vec3> { v.iter().zip(&remap).filter(|(_, r)| **r != u32::MAX).map(|(x, _)| *x).collect() };
        self.vertices = pick(&self.vertices);
        if !self.colors.is_empty() {
            self.colors = pick(&self.colors);
        }
        if !self.normals.is_empty() {
            self.normals = pick(&self.normals);
        }
        for t in self.triangles.iter_mut() {
            for i in t.iter_mut() {
                *i = remap[*i as usize];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub iso: f64,
    /// Lattice points per axis; the field resolution when unset.
    pub grid_resolution: Option<usize>,
    pub smooth_iters: usize,
    pub smooth_lambda: f64,
    pub min_component_fraction: f64,
    /// Raise enclosed below-iso pockets above iso so no inner shells form.
    pub fill_cavities: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            iso: 5.0,
            grid_resolution: None,
            smooth_iters: 5,
            smooth_lambda: 0.5,
            min_component_fraction: 0.1,
            fill_cavities: true,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), MeshError> {
        if !(self.iso > 0.0) {
            return Err(MeshError::InvalidArgument(format!("iso must be > 0, got {}", self.iso)));
        }
        if !(self.smooth_lambda > 0.0 && self.smooth_lambda <= 1.0) {
            return Err(MeshError::InvalidArgument(format!("smooth_lambda must be in (0,1], got {}", self.smooth_lambda)));
        }
        if !(self.min_component_fraction > 0.0 && self.min_component_fraction <= 1.0) {
            return Err(MeshError::InvalidArgument("min_component_fraction must be in (0,1]".into()));
        }
        if self.grid_resolution.is_some_and(|r| r < 2) {
            return Err(MeshError::InvalidArgument("grid_resolution must be >= 2".into()));
        }
        Ok(())
    }
}

// Cube corners: bit k of the case index is corner k.
const CORNERS: [[usize; 3]; 8] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];
const EDGES: [[usize; 2]; 12] = [[0, 1], [1, 2], [2, 3], [3, 0], [4, 5], [5, 6], [6, 7], [7, 4], [0, 4], [1, 5], [2, 6], [3, 7]];
// Faces with corners counter-clockwise about the outward normal.
const FACES: [[usize; 4]; 6] = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [3, 7, 6, 2], [0, 4, 7, 3], [1, 2, 6, 5]];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|e| (e[0] == a && e[1] == b) || (e[0] == b && e[1] == a))
        .expect("adjacent corners share an edge")
}

fn edges_share_face(a: usize, b: usize) -> bool {
    FACES.iter().any(|f| {
        let on = |e: usize| (0..4).any(|k| edge_between(f[k], f[(k + 1) % 4]) == e);
        on(a) && on(b)
    })
}

/// Table entries at or above this index name the centroid of loop
/// `index − LOOP_CENTER` instead of an edge point.
const LOOP_CENTER: usize = 12;

/// Triangles (as edge-index triples) for each of the 256 corner cases.
///
/// Each face contributes one directed segment per run of consecutive inside
/// corners, so ambiguous faces always separate the inside corners and
/// neighboring cubes agree on the shared face. Segments chain into closed
/// loops that are fanned into triangles.
struct CaseEntry {
    tris: Vec<[usize; 3]>,
    loops: Vec<Vec<usize>>,
}

fn case_table() -> &'static Vec<CaseEntry> {
    static TABLE: OnceLock<Vec<CaseEntry>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..256usize)
            .map(|case| {
                let inside = |c: usize| case & (1 << c) != 0;
                let mut next = [usize::MAX; 12];
                for face in FACES {
                    for k in 0..4 {
                        let (prev, cur) = (face[(k + 3) % 4], face[k]);
                        if inside(cur) && !inside(prev) {
                            // Run starts at `cur`; find where it ends.
                            let mut j = k;
                            while inside(face[(j + 1) % 4]) {
                                j = (j + 1) % 4;
                            }
                            let enter = edge_between(prev, cur);
                            let leave = edge_between(face[j], face[(j + 1) % 4]);
                            next[enter] = leave;
                        }
                    }
                }
                let mut seen = [false; 12];
                let mut tris = Vec::new();
                let mut loops: Vec<Vec<usize>> = Vec::new();
                for start in 0..12 {
                    if next[start] == usize::MAX || seen[start] {
                        continue;
                    }
                    let mut lp = vec![start];
                    seen[start] = true;
                    let mut e = next[start];
                    while e != start {
                        seen[e] = true;
                        lp.push(e);
                        e = next[e];
                    }
                    let n = lp.len();
                    // A fan diagonal between two points of one face would
                    // duplicate an edge of the neighboring cube.
                    let fan = (0..n).find(|&s| (2..n.saturating_sub(1)).all(|k| !edges_share_face(lp[s], lp[(s + k) % n])));
                    match fan {
                        Some(s) => {
                            for i in 1..n - 1 {
                                tris.push([lp[s], lp[(s + i) % n], lp[(s + i + 1) % n]]);
                            }
                        }
                        None => {
                            let center = LOOP_CENTER + loops.len();
                            for i in 0..n {
                                tris.push([center, lp[i], lp[(i + 1) % n]]);
                            }
                        }
                    }
                    loops.push(lp);
                }
                CaseEntry { tris, loops }
            })
            .collect()
    })
}

/// Triangle count of every marching-cubes case.
pub fn case_triangle_counts() -> Vec<usize> {
    case_table().iter().map(|t| t.tris.len()).collect()
}

/// Regular scalar lattice.
#[derive(Debug, Clone)]
pub struct ScalarGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn point(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + Vec3::new(x as f64, y as f64, z as f64) * self.spacing
    }

    /// Samples activated density at `m³` voxel-center positions of `field`'s
    /// bounds plus a one-point margin on each side, which lies outside the
    /// bounds and therefore has zero density.
    pub fn from_field(field: &VoxelField, m: usize) -> ScalarGrid {
        let b = field.bounds();
        let spacing = b.extent().x / m as f64;
        let origin = b.min - Vec3::splat(0.5 * spacing);
        let d = m + 2;
        let mut values = vec![0.0; d * d * d];
        values.par_chunks_mut(d * d).enumerate().for_each(|(z, slab)| {
            for y in 0..d {
                for x in 0..d {
                    let p = origin + Vec3::new(x as f64, y as f64, z as f64) * spacing;
                    slab[x + d * y] = field_sample(field, p).sigma;
                }
            }
        });
        ScalarGrid {
            dims: [d, d, d],
            origin,
            spacing,
            values,
        }
    }

    /// Raises below-`iso` points not connected (6-neighborhood) to the
    /// lattice boundary to `2·iso`. Returns the number of points raised.
    pub fn fill_cavities(&mut self, iso: f64) -> usize {
        let [dx, dy, dz] = self.dims;
        let mut reached = vec![false; self.values.len()];
        let mut stack = Vec::new();
        for z in 0..dz {
            for y in 0..dy {
                for x in 0..dx {
                    let on_boundary = x == 0 || y == 0 || z == 0 || x == dx - 1 || y == dy - 1 || z == dz - 1;
                    let i = self.index(x, y, z);
                    if on_boundary && self.values[i] < iso {
                        reached[i] = true;
                        stack.push((x, y, z));
                    }
                }
            }
        }
        while let Some((x, y, z)) = stack.pop() {
            let mut visit = |x: usize, y: usize, z: usize| {
                let i = self.index(x, y, z);
                if !reached[i] && self.values[i] < iso {
                    reached[i] = true;
                    stack.push((x, y, z));
                }
            };
            if x > 0 {
                visit(x - 1, y, z);
            }
            if x + 1 < dx {
                visit(x + 1, y, z);
            }
            if y > 0 {
                visit(x, y - 1, z);
            }
            if y + 1 < dy {
                visit(x, y + 1, z);
            }
            if z > 0 {
                visit(x, y, z - 1);
            }
            if z + 1 < dz {
                visit(x, y, z + 1);
            }
        }
        let mut raised = 0;
        for (v, r) in self.values.iter_mut().zip(&reached) {
            if *v < iso && !r {
                *v = 2.0 * iso;
                raised += 1;
            }
        }
        raised
    }
}

/// Marching cubes on a lattice. Points with value `>= iso` are inside;
/// triangles wind counter-clockwise seen from outside (toward lower values).
pub fn marching_cubes_grid(grid: &ScalarGrid, iso: f64) -> Result<TriangleMesh, MeshError> {
    let [dx, dy, dz] = grid.dims;
    if dx < 2 || dy < 2 || dz < 2 || grid.values.len() != dx * dy * dz {
        return Err(MeshError::InvalidArgument("lattice needs at least 2 points per axis".into()));
    }
    let table = case_table();
    let mut vertex_of: HashMap<(usize, usize), u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for z in 0..dz - 1 {
        for y in 0..dy - 1 {
            for x in 0..dx - 1 {
                let ids: [usize; 8] = CORNERS.map(|c| grid.index(x + c[0], y + c[1], z + c[2]));
                let mut case = 0usize;
                for (k, &i) in ids.iter().enumerate() {
                    if grid.values[i] >= iso {
                        case |= 1 << k;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let entry = &table[case];
                let mut edge_vertex = |e: usize, vertices: &mut Vec<Vec3>| -> u32 {
                    let (a, b) = (ids[EDGES[e][0]], ids[EDGES[e][1]]);
                    *vertex_of.entry((a.min(b), a.max(b))).or_insert_with(|| {
                        let (va, vb) = (grid.values[a], grid.values[b]);
                        let t = ((iso - va) / (vb - va)).clamp(0.0, 1.0);
                        let (ca, cb) = (CORNERS[EDGES[e][0]], CORNERS[EDGES[e][1]]);
                        let pa = grid.point(x + ca[0], y + ca[1], z + ca[2]);
                        let pb = grid.point(x + cb[0], y + cb[1], z + cb[2]);
                        vertices.push(pa + (pb - pa) * t);
                        (vertices.len() - 1) as u32
                    })
                };
                let mut centers = [u32::MAX; 4];
                for tri in &entry.tris {
                    let mut out = [0u32; 3];
                    for (slot, &e) in tri.iter().enumerate() {
                        out[slot] = if e < LOOP_CENTER {
                            edge_vertex(e, &mut vertices)
                        } else {
                            let l = e - LOOP_CENTER;
                            if centers[l] == u32::MAX {
                                let lp = &entry.loops[l];
                                let sum = lp.iter().fold(Vec3::ZERO, |acc, &e| {
                                    let i = edge_vertex(e, &mut vertices);
                                    acc + vertices[i as usize]
                                });
                                vertices.push(sum / lp.len() as f64);
                                centers[l] = (vertices.len() - 1) as u32;
                            }
                            centers[l]
                        };
                    }
                    triangles.push(out);
                }
            }
        }
    }
    let mut mesh = TriangleMesh::new(vertices, triangles);
    mesh.remove_degenerate();
    if mesh.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    Ok(mesh)
}

/// Extracts the `σ = iso` surface of a field.
pub fn marching_cubes(field: &VoxelField, config: &ExtractionConfig) -> Result<TriangleMesh, MeshError> {
    config.validate()?;
    let m = config.grid_resolution.unwrap_or(field.resolution());
    let mut grid = ScalarGrid::from_field(field, m);
    if config.fill_cavities {
        grid.fill_cavities(config.iso);
    }
    marching_cubes_grid(&grid, config.iso)
}

/// Connected components (by shared vertices) as lists of triangle indices.
pub fn connected_components(mesh: &TriangleMesh) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..mesh.vertices.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for t in &mesh.triangles {
        let r0 = find(&mut parent, t[0] as usize);
        for &v in &t[1..] {
            let r = find(&mut parent, v as usize);
            if r != r0 {
                parent[r] = r0;
            }
        }
    }
    let mut groups: HashMap<usize, usize> = HashMap::new();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for (i, t) in mesh.triangles.iter().enumerate() {
        let root = find(&mut parent, t[0] as usize);
        let g = *groups.entry(root).or_insert_with(|| {
            comps.push(Vec::new());
            comps.len() - 1
        });
        comps[g].push(i);
    }
    comps
}

/// Keeps every component with at least `fraction` of the largest one's
/// triangle count.
pub fn largest_component(mesh: &TriangleMesh, fraction: f64) -> Result<TriangleMesh, MeshError> {
    if mesh.is_empty() {
        return Err(MeshError::EmptyMesh);
    }
    let comps = connected_components(mesh);
    let largest = comps.iter().map(Vec::len).max().unwrap_or(0);
    let mut keep = vec![false; mesh.triangles.len()];
    for c in comps.iter().filter(|c| c.len() as f64 >= fraction * largest as f64) {
        for &t in c {
            keep[t] = true;
        }
    }
    let mut out = mesh.clone();
    out.triangles = mesh.triangles.iter().zip(&keep).filter(|(_, k)| **k).map(|(t, _)| *t).collect();
    out.compact();
    Ok(out)
}

fn vertex_neighbors(mesh: &TriangleMesh) -> Vec<Vec<u32>> {
    let mut nb: Vec<Vec<u32>> = vec![Vec::new(); mesh.vertices.len()];
    for t in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            nb[a as usize].push(b);
            nb[b as usize].push(a);
        }
    }
    for n in nb.iter_mut() {
        n.sort_unstable();
        n.dedup();
    }
    nb
}

/// `iters` rounds of `v ← v + λ·(mean(neighbors) − v)`.
pub fn laplacian_smooth(mesh: &TriangleMesh, iters: usize, lambda: f64) -> Result<TriangleMesh, MeshError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(MeshError::InvalidArgument(format!("lambda must be in (0,1], got {lambda}")));
    }
    let mut out = mesh.clone();
    if iters == 0 {
        return Ok(out);
    }
    let nb = vertex_neighbors(mesh);
    for _ in 0..iters {
        let prev = out.vertices.clone();
        out.vertices.par_iter_mut().enumerate().for_each(|(i, v)| {
            if nb[i].is_empty() {
                return;
            }
            let c = nb[i].iter().fold(Vec3::ZERO, |a, &j| a + prev[j as usize]) / nb[i].len() as f64;
            *v = prev[i] + (c - prev[i]) * lambda;
        });
    }
    if !out.normals.is_empty() {
        out.compute_vertex_normals();
    }
    Ok(out)
}

/// Samples field color half a voxel inside each vertex.
pub fn bake_vertex_colors(mesh: &TriangleMesh, field: &VoxelField) -> TriangleMesh {
    let mut out = mesh.clone();
    if out.normals.len() != out.vertices.len() {
        out.compute_vertex_normals();
    }
    let offset = 0.5 * field.voxel_size();
    out.colors = out
        .vertices
        .par_iter()
        .zip(&out.normals)
        .map(|(&v, &n)| {
            let c = field_sample(field, v - n * offset).rgb;
            Vec3::new(c.x.clamp(0.0, 1.0), c.y.clamp(0.0, 1.0), c.z.clamp(0.0, 1.0))
        })
        .collect();
    out
}

/// Extraction, cleanup, smoothing and color baking in one call.
pub fn extract_mesh(field: &VoxelField, config: &ExtractionConfig) -> Result<TriangleMesh, MeshError> {
    let raw = marching_cubes(field, config)?;
    let clean = largest_component(&raw, config.min_component_fraction)?;
    let mut smooth = laplacian_smooth(&clean, config.smooth_iters, config.smooth_lambda)?;
    smooth.remove_degenerate();
    smooth.compute_vertex_normals();
    Ok(bake_vertex_colors(&smooth, field))
}

/// Mean angle (degrees) between density normals at mesh vertices and a
/// reference normal function.
pub fn mean_field_normal_error(field: &VoxelField, points: &[Vec3], reference: impl Fn(Vec3) -> Vec3) -> f64 {
    let h = crate::field::default_normal_step(field);
    let errs: Vec<f64> = points
        .iter()
        .filter_map(|&p| density_normal(field, p, h).map(|n| n.angle_to(reference(p)).to_degrees()))
        .collect();
    errs.iter().sum::<f64>() / errs.len().max(1) as f64
}

/// Per-pixel rasterization record: the covering triangle, its barycentric
/// weights and flat shading factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fragment {
    pub triangle: u32,
    pub bary: [f64; 3],
    pub shade: f64,
}

/// Z-buffered rasterization at pixel centers. Faces are two-sided and
/// flat-shaded with the face normal turned toward the camera.
pub fn rasterize(mesh: &TriangleMesh, camera: &CameraPose, lights: &[DirectionalLight]) -> Vec<Option<Fragment>> {
    let (w, h) = (camera.width, camera.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut frags: Vec<Option<Fragment>> = vec![None; w * h];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let pts = tri.map(|i| camera.project(mesh.vertices[i as usize]));
        let [Some(a), Some(b), Some(c)] = pts else { continue };
        let area = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
        if area.abs() < 1e-12 {
            continue;
        }
        let mut n = mesh.face_cross(t).normalized();
        let centroid = (mesh.vertices[tri[0] as usize] + mesh.vertices[tri[1] as usize] + mesh.vertices[tri[2] as usize]) / 3.0;
        if n.dot(camera.position - centroid) < 0.0 {
            n = -n;
        }
        let shade = lambert(n, lights);
        let x0 = a.0.min(b.0).min(c.0).floor().max(0.0) as usize;
        let x1 = (a.0.max(b.0).max(c.0).ceil() as isize).min(w as isize - 1);
        let y0 = a.1.min(b.1).min(c.1).floor().max(0.0) as usize;
        let y1 = (a.1.max(b.1).max(c.1).ceil() as isize).min(h as isize - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        for py in y0..=y1 as usize {
            for px in x0..=x1 as usize {
                let (u, v) = (px as f64 + 0.5, py as f64 + 0.5);
                let w0 = ((b.0 - u) * (c.1 - v) - (b.1 - v) * (c.0 - u)) / area;
                let w1 = ((c.0 - u) * (a.1 - v) - (c.1 - v) * (a.0 - u)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                // Perspective-correct barycentrics from inverse depths.
                let (i0, i1, i2) = (w0 / a.2, w1 / b.2, w2 / c.2);
                let inv = i0 + i1 + i2;
                let z = 1.0 / inv;
                let k = py * w + px;
                if z < depth[k] {
                    depth[k] = z;
                    frags[k] = Some(Fragment {
                        triangle: t as u32,
                        bary: [i0 * z, i1 * z, i2 * z],
                        shade,
                    });
                }
            }
        }
    }
    frags
}

fn fragment_color(mesh: &TriangleMesh, f: &Fragment) -> Vec3 {
    let tri = mesh.triangles[f.triangle as usize];
    let c = (0..3).fold(Vec3::ZERO, |acc, k| acc + mesh.colors[tri[k] as usize] * f.bary[k]);
    c * f.shade
}

/// Flat-Lambertian render over a white background.
pub fn render_mesh(mesh: &TriangleMesh, camera: &CameraPose, lights: &[DirectionalLight]) -> Vec<Vec3> {
    let frags = rasterize(mesh, camera, lights);
    frags
        .iter()
        .map(|f| match f {
            Some(f) if !mesh.colors.is_empty() => fragment_color(mesh, f),
            Some(f) => Vec3::splat(0.5 * f.shade),
            None => Vec3::ONE,
        })
        .collect()
}

pub fn to_gray(rgb: &[Vec3]) -> Vec<f64> {
    rgb.iter().map(|c| 0.299 * c.x + 0.587 * c.y + 0.114 * c.z).collect()
}

const SSIM_WINDOW: usize = 8;
const SSIM_STRIDE: usize = 4;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean SSIM over 8×8 windows at stride 4 on grayscale images. Images
/// smaller than a window are treated as a single window.
pub fn ssim(a: &[Vec3], b: &[Vec3], width: usize, height: usize) -> Result<f64, MeshError> {
    if a.len() != width * height || b.len() != width * height || a.is_empty() {
        return Err(MeshError::InvalidArgument(format!(
            "ssim needs two {width}x{height} images, got {} and {} pixels",
            a.len(),
            b.len()
        )));
    }
    let (ga, gb) = (to_gray(a), to_gray(b));
    let (ww, wh) = (SSIM_WINDOW.min(width), SSIM_WINDOW.min(height));
    let (mut sum, mut count) = (0.0, 0usize);
    let mut y = 0;
    while y + wh <= height {
        let mut x = 0;
        while x + ww <= width {
            let n = (ww * wh) as f64;
            let (mut ma, mut mb) = (0.0, 0.0);
            for r in y..y + wh {
                for c in x..x + ww {
                    ma += ga[r * width + c];
                    mb += gb[r * width + c];
                }
            }
            ma /= n;
            mb /= n;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for r in y..y + wh {
                for c in x..x + ww {
                    let (da, db) = (ga[r * width + c] - ma, gb[r * width + c] - mb);
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= n;
            vb /= n;
            cov /= n;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
            x += SSIM_STRIDE;
        }
        y += SSIM_STRIDE;
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineRecord {
    pub iter: usize,
    pub mse: f64,
    pub ssim: f64,
}

struct ViewCoverage {
    frags: Vec<Option<Fragment>>,
}

fn refine_metrics(mesh: &TriangleMesh, dataset: &Dataset, cover: &[ViewCoverage]) -> (f64, f64) {
    let (mut se, mut n, mut s) = (0.0, 0usize, 0.0);
    for (view, cv) in dataset.views.iter().zip(cover) {
        let img: Vec<Vec3> = cv.frags.iter().map(|f| f.map_or(Vec3::ONE, |f| fragment_color(mesh, &f))).collect();
        for (i, f) in cv.frags.iter().enumerate() {
            if f.is_some() && view.mask[i] {
                se += (img[i] - view.rgb_at(i)).norm_squared();
                n += 1;
            }
        }
        let target: Vec<Vec3> = (0..view.rgb.len()).map(|i| view.rgb_at(i)).collect();
        s += ssim(&img, &target, view.width(), view.height()).unwrap_or(0.0);
    }
    (se / (3 * n.max(1)) as f64, s / dataset.views.len() as f64)
}

/// Fits vertex colors to the dataset images with Jacobi-preconditioned
/// gradient steps on the foreground mean squared error. Geometry is fixed,
/// so each view is rasterized once. The trace has one record per iteration
/// plus the initial state.
pub fn refine_colors(mesh: &TriangleMesh, dataset: &Dataset, iters: usize) -> Result<(TriangleMesh, Vec<RefineRecord>), MeshError> {
    if dataset.views.is_empty() {
        return Err(MeshError::InvalidArgument("dataset has no views".into()));
    }
    let mut out = mesh.clone();
    if out.colors.len() != out.vertices.len() {
        out.colors = vec![Vec3::splat(0.5); out.vertices.len()];
    }
    if iters == 0 {
        return Ok((out, Vec::new()));
    }
    let cover: Vec<ViewCoverage> = dataset
        .views
        .par_iter()
        .map(|v| ViewCoverage {
            frags: rasterize(mesh, &v.camera, &dataset.lights),
        })
        .collect();
    let nv = out.vertices.len();
    let mut diag = vec![0.0; nv];
    for (view, cv) in dataset.views.iter().zip(&cover) {
        for (i, f) in cv.frags.iter().enumerate() {
            if let (Some(f), true) = (f, view.mask[i]) {
                let tri = out.triangles[f.triangle as usize];
                for k in 0..3 {
                    diag[tri[k] as usize] += (f.shade * f.bary[k]).powi(2);
                }
            }
        }
    }
    let (mse, s) = refine_metrics(&out, dataset, &cover);
    let mut trace = vec![RefineRecord { iter: 0, mse, ssim: s }];
    const DAMPING: f64 = 0.5;
    for it in 1..=iters {
        let mut grad = vec![Vec3::ZERO; nv];
        for (view, cv) in dataset.views.iter().zip(&cover) {
            for (i, f) in cv.frags.iter().enumerate() {
                if let (Some(f), true) = (f, view.mask[i]) {
                    let r = fragment_color(&out, f) - view.rgb_at(i);
                    let tri = out.triangles[f.triangle as usize];
                    for k in 0..3 {
                        grad[tri[k] as usize] += r * (f.shade * f.bary[k]);
                    }
                }
            }
        }
        for ((c, g), d) in out.colors.iter_mut().zip(&grad).zip(&diag) {
            if *d > 1e-12 {
                let nc = *c - *g * (DAMPING / d);
                *c = Vec3::new(nc.x.clamp(0.0, 1.0), nc.y.clamp(0.0, 1.0), nc.z.clamp(0.0, 1.0));
            }
        }
        let (mse, s) = refine_metrics(&out, dataset, &cover);
        trace.push(RefineRecord { iter: it, mse, ssim: s });
    }
    Ok((out, trace))
}

pub fn write_refine_trace(trace: &[RefineRecord], path: &Path) -> Result<(), MeshError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| MeshError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    for r in trace {
        w.serialize(r).map_err(|e| MeshError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Gltf,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<MeshFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "gltf" => Some(MeshFormat::Gltf),
            _ => None,
        }
    }
}

pub fn export_mesh(mesh: &TriangleMesh, path: &Path, format: MeshFormat) -> Result<(), MeshError> {
    mesh.validate()?;
    match format {
        MeshFormat::Obj => export_obj(mesh, path),
        MeshFormat::Gltf => export_gltf(mesh, path),
    }
}

pub fn import_mesh(path: &Path) -> Result<TriangleMesh, MeshError> {
    match MeshFormat::from_path(path) {
        Some(MeshFormat::Obj) => import_obj(path),
        Some(MeshFormat::Gltf) => import_gltf(path),
        None => Err(MeshError::InvalidArgument(format!("unknown mesh extension: {}", path.display()))),
    }
}

/// Writes `v x y z [r g b]` and 1-based `f a b c` lines.
pub fn export_obj(mesh: &TriangleMesh, path: &Path) -> Result<(), MeshError> {
    let mut s = String::with_capacity(64 * (mesh.vertices.len() + mesh.triangles.len()));
    use std::fmt::Write as _;
    for (i, v) in mesh.vertices.iter().enumerate() {
        match mesh.colors.get(i) {
            Some(c) => writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c.x, c.y, c.z),
            None => writeln!(s, "v {} {} {}", v.x, v.y, v.z),
        }
        .expect("string write");
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
    }
    fs::write(path, s).map_err(io_err(path))
}

pub fn import_obj(path: &Path) -> Result<TriangleMesh, MeshError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize, msg: &str| MeshError::Parse {
        path: path.display().to_string(),
        message: format!("line {}: {msg}", line + 1),
    };
    let mut mesh = TriangleMesh::default();
    let mut colored = None;
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let nums: Vec<f64> = it.map(|x| x.parse::<f64>().map_err(|_| bad(ln, "bad number"))).collect::<Result<_, _>>()?;
                let has_color = match nums.len() {
                    3 => false,
                    6 => true,
                    _ => return Err(bad(ln, "vertex needs 3 or 6 values")),
                };
                if *colored.get_or_insert(has_color) != has_color {
                    return Err(bad(ln, "mixed colored and uncolored vertices"));
                }
                mesh.vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
                if has_color {
                    mesh.colors.push(Vec3::new(nums[3], nums[4], nums[5]));
                }
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|x| {
                        let first = x.split('/').next().unwrap_or("");
                        first.parse::<u32>().ok().filter(|&i| i >= 1).map(|i| i - 1).ok_or_else(|| bad(ln, "bad face index"))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(bad(ln, "face needs 3 indices"));
                }
                for k in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if mesh.triangles.iter().flatten().any(|&i| i as usize >= mesh.vertices.len()) {
        return Err(MeshError::Parse {
            path: path.display().to_string(),
            message: "face index out of range".into(),
        });
    }
    Ok(mesh)
}

const GL_FLOAT: u32 = 5126;
const GL_UNSIGNED_BYTE: u32 = 5121;
const GL_UNSIGNED_INT: u32 = 5125;
const GL_ARRAY_BUFFER: u32 = 34962;
const GL_ELEMENT_ARRAY_BUFFER: u32 = 34963;

/// Maps the z-up world frame onto glTF's y-up frame.
pub(crate) fn to_gltf_axes(v: Vec3) -> Vec3 {
    Vec3::new(v.x, v.z, -v.y)
}

pub(crate) fn from_gltf_axes(v: Vec3) -> Vec3 {
    Vec3::new(v.x, -v.z, v.y)
}

/// Accumulates binary chunks and matching glTF views/accessors.
#[derive(Default)]
pub(crate) struct GltfBuilder {
    pub bin: Vec<u8>,
    pub views: Vec<serde_json::Value>,
    pub accessors: Vec<serde_json::Value>,
    pub meshes: Vec<serde_json::Value>,
}

impl GltfBuilder {
    fn push_view(&mut self, bytes: &[u8], target: u32) -> usize {
        while self.bin.len() % 4 != 0 {
            self.bin.push(0);
        }
        let offset = self.bin.len();
        self.bin.extend_from_slice(bytes);
        self.views.push(serde_json::json!({
            "buffer": 0, "byteOffset": offset, "byteLength": bytes.len(), "target": target
        }));
        self.views.len() - 1
    }

    /// Adds a mesh primitive and returns its mesh index.
    pub fn add_mesh(&mut self, mesh: &TriangleMesh, name: &str) -> usize {
        let mut pos = Vec::with_capacity(mesh.vertices.len() * 12);
        let (mut lo, mut hi) = ([f32::INFINITY; 3], [f32::NEG_INFINITY; 3]);
        for v in &mesh.vertices {
            let g = to_gltf_axes(*v);
            let p = [g.x as f32, g.y as f32, g.z as f32];
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
                pos.extend_from_slice(&p[k].to_le_bytes());
            }
        }
        let view = self.push_view(&pos, GL_ARRAY_BUFFER);
        self.accessors.push(serde_json::json!({
            "bufferView": view, "componentType": GL_FLOAT, "count": mesh.vertices.len(),
            "type": "VEC3", "min": lo, "max": hi
        }));
        let mut attributes = serde_json::json!({ "POSITION": self.accessors.len() - 1 });
        if !mesh.colors.is_empty() {
            let mut col = Vec::with_capacity(mesh.colors.len() * 4);
            for c in &mesh.colors {
                for v in [c.x, c.y, c.z, 1.0] {
                    col.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
            let view = self.push_view(&col, GL_ARRAY_BUFFER);
            self.accessors.push(serde_json::json!({
                "bufferView": view, "componentType": GL_UNSIGNED_BYTE, "normalized": true,
                "count": mesh.colors.len(), "type": "VEC4"
            }));
            attributes["COLOR_0"] = (self.accessors.len() - 1).into();
        }
        let mut idx = Vec::with_capacity(mesh.triangles.len() * 12);
        let mut max_index = 0u32;
        for i in mesh.triangles.iter().flatten() {
            idx.extend_from_slice(&i.to_le_bytes());
            max_index = max_index.max(*i);
        }
        let view = self.push_view(&idx, GL_ELEMENT_ARRAY_BUFFER);
        self.accessors.push(serde_json::json!({
            "bufferView": view, "componentType": GL_UNSIGNED_INT, "count": mesh.triangles.len() * 3,
            "type": "SCALAR", "min": [0], "max": [max_index]
        }));
        self.meshes.push(serde_json::json!({
            "name": name,
            "primitives": [{ "attributes": attributes, "indices": self.accessors.len() - 1, "mode": 4 }]
        }));
        self.meshes.len() - 1
    }

    /// Writes `<path>` (JSON) and a sibling `.bin` buffer.
    pub fn write(self, path: &Path, nodes: Vec<serde_json::Value>, scene_nodes: Vec<usize>) -> Result<(), MeshError> {
        let bin_path = path.with_extension("bin");
        let bin_name = bin_path.file_name().and_then(|s| s.to_str()).unwrap_or("buffer.bin").to_string();
        let doc = serde_json::json!({
            "asset": { "version": "2.0", "generator": "roomforge" },
            "scene": 0,
            "scenes": [{ "nodes": scene_nodes }],
            "nodes": nodes,
            "meshes": self.meshes,
            "accessors": self.accessors,
            "bufferViews": self.views,
            "buffers": [{ "uri": bin_name, "byteLength": self.bin.len() }]
        });
        fs::write(&bin_path, &self.bin).map_err(io_err(&bin_path))?;
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(serde_json::to_string_pretty(&doc).expect("json").as_bytes()).map_err(io_err(path))
    }
}

/// glTF 2.0 as `.gltf` JSON plus a `.bin` buffer next to it.
pub fn export_gltf(mesh: &TriangleMesh, path: &Path) -> Result<(), MeshError> {
    let mut b = GltfBuilder::default();
    let m = b.add_mesh(mesh, "mesh");
    b.write(path, vec![serde_json::json!({ "mesh": m, "name": "mesh" })], vec![0])
}

/// Parsed glTF document with its binary buffer.
pub struct GltfDocument {
    pub json: serde_json::Value,
    pub bin: Vec<u8>,
    path: String,
}

impl GltfDocument {
    pub fn load(path: &Path) -> Result<GltfDocument, MeshError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| MeshError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let uri = json["buffers"][0]["uri"].as_str().ok_or_else(|| MeshError::Parse {
            path: path.display().to_string(),
            message: "missing buffer uri".into(),
        })?;
        let bin_path = path.parent().unwrap_or(Path::new(".")).join(uri);
        let bin = fs::read(&bin_path).map_err(io_err(&bin_path))?;
        Ok(GltfDocument {
            json,
            bin,
            path: path.display().to_string(),
        })
    }

    fn err(&self, message: impl Into<String>) -> MeshError {
        MeshError::Parse {
            path: self.path.clone(),
            message: message.into(),
        }
    }

    /// Structural checks: buffer sizes, view ranges, accessor sizes and
    /// index bounds.
    pub fn validate(&self) -> Result<(), MeshError> {
        let j = &self.json;
        if j["asset"]["version"] != "2.0" {
            return Err(self.err("asset.version must be 2.0"));
        }
        if j["buffers"][0]["byteLength"].as_u64() != Some(self.bin.len() as u64) {
            return Err(self.err("buffer byteLength does not match the .bin file"));
        }
        let views = j["bufferViews"].as_array().ok_or_else(|| self.err("missing bufferViews"))?;
        for v in views {
            let end = v["byteOffset"].as_u64().unwrap_or(0) + v["byteLength"].as_u64().unwrap_or(u64::MAX);
            if end > self.bin.len() as u64 {
                return Err(self.err("bufferView exceeds buffer"));
            }
        }
        let accessors = j["accessors"].as_array().ok_or_else(|| self.err("missing accessors"))?;
        for a in accessors {
            let view = &views[a["bufferView"].as_u64().ok_or_else(|| self.err("accessor without view"))? as usize];
            let comps = match a["type"].as_str() {
                Some("SCALAR") => 1,
                Some("VEC3") => 3,
                Some("VEC4") => 4,
                _ => return Err(self.err("unsupported accessor type")),
            };
            let size = match a["componentType"].as_u64().map(|c| c as u32) {
                Some(GL_FLOAT) | Some(GL_UNSIGNED_INT) => 4,
                Some(GL_UNSIGNED_BYTE) => 1,
                _ => return Err(self.err("unsupported component type")),
            };
            let need = a["count"].as_u64().unwrap_or(0) * comps * size;
            if need > view["byteLength"].as_u64().unwrap_or(0) {
                return Err(self.err("accessor larger than its bufferView"));
            }
        }
        for m in j["meshes"].as_array().ok_or_else(|| self.err("missing meshes"))? {
            for p in m["primitives"].as_array().into_iter().flatten() {
                let pos = self.accessor_index(&p["attributes"]["POSITION"])?;
                let n = accessors[pos]["count"].as_u64().unwrap_or(0) as u32;
                let idx = self.read_u32(self.accessor_index(&p["indices"])?)?;
                if idx.len() % 3 != 0 || idx.iter().any(|&i| i >= n) {
                    return Err(self.err("index out of bounds or not a triangle list"));
                }
            }
        }
        Ok(())
    }

    fn accessor_index(&self, v: &serde_json::Value) -> Result<usize, MeshError> {
        v.as_u64().map(|x| x as usize).ok_or_else(|| self.err("missing accessor reference"))
    }

    fn accessor_bytes(&self, i: usize, elem: usize) -> Result<&[u8], MeshError> {
        let a = &self.json["accessors"][i];
        let v = &self.json["bufferViews"][a["bufferView"].as_u64().ok_or_else(|| self.err("bad accessor"))? as usize];
        let off = v["byteOffset"].as_u64().unwrap_or(0) as usize + a["byteOffset"].as_u64().unwrap_or(0) as usize;
        let len = a["count"].as_u64().ok_or_else(|| self.err("bad accessor count"))? as usize * elem;
        self.bin.get(off..off + len).ok_or_else(|| self.err("accessor out of buffer range"))
    }

    fn read_u32(&self, i: usize) -> Result<Vec<u32>, MeshError> {
        Ok(self.accessor_bytes(i, 4)?.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn read_vec3(&self, i: usize) -> Result<Vec<Vec3>, MeshError> {
        let f: Vec<f64> = self.accessor_bytes(i, 12)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Ok(f.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
    }

    /// Mesh `m` of the document in its local frame, converted back to z-up.
    pub fn mesh(&self, m: usize) -> Result<TriangleMesh, MeshError> {
        let p = &self.json["meshes"][m]["primitives"][0];
        let vertices = self.read_vec3(self.accessor_index(&p["attributes"]["POSITION"])?)?.into_iter().map(from_gltf_axes).collect();
        let idx = self.read_u32(self.accessor_index(&p["indices"])?)?;
        let mut mesh = TriangleMesh::new(vertices, idx.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
        if let Some(ci) = p["attributes"]["COLOR_0"].as_u64() {
            let bytes = self.accessor_bytes(ci as usize, 4)?;
            mesh.colors = bytes
                .chunks_exact(4)
                .map(|c| Vec3::new(c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0))
                .collect();
        }
        Ok(mesh)
    }

    pub fn mesh_count(&self) -> usize {
        self.json["meshes"].as_array().map_or(0, Vec::len)
    }
}

pub fn import_gltf(path: &Path) -> Result<TriangleMesh, MeshError> {
    let doc = GltfDocument::load(path)?;
    doc.validate()?;
    doc.mesh(0)
}
