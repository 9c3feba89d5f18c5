//! Analytic multi-view oracle.
//!
//! Procedural SDF objects are sphere traced into posed RGB, depth, normal and
//! mask images on a white background. The module also carries the image
//! preprocessing used on generated views (foreground segmentation with
//! padding) and the depth-gradient normals used as geometry supervision.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Aabb, CameraPose, Mat3, Ray, Vec3};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no foreground pixel found")]
    EmptyForeground,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {file}: {field}: {message}")]
    Parse {
        file: String,
        field: String,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OracleError + '_ {
    move |source| OracleError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, field: &str, message: impl ToString) -> OracleError {
    OracleError::Parse {
        file: path.display().to_string(),
        field: field.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
    /// Ring in the local xy-plane.
    Torus { major: f64, minor: f64 },
    /// Capped cylinder along the local z axis.
    Cylinder { radius: f64, half_height: f64 },
}

impl Shape {
    fn distance(&self, p: Vec3) -> f64 {
        match *self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half_extents } => {
                let q = p.abs() - half_extents;
                q.max_elem(Vec3::ZERO).norm() + q.max_component().min(0.0)
            }
            Shape::Torus { major, minor } => {
                let qx = (p.x * p.x + p.y * p.y).sqrt() - major;
                (qx * qx + p.z * p.z).sqrt() - minor
            }
            Shape::Cylinder { radius, half_height } => {
                let dx = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - half_height;
                dx.max(dz).min(0.0) + (dx.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt()
            }
        }
    }

    /// Radius of a ball around the local origin containing the shape.
    fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { radius } => radius,
            Shape::Box { half_extents } => half_extents.norm(),
            Shape::Torus { major, minor } => major + minor,
            Shape::Cylinder { radius, half_height } => (radius * radius + half_height * half_height).sqrt(),
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            Shape::Sphere { radius } => radius > 0.0,
            Shape::Box { half_extents } => half_extents.min_component() > 0.0,
            Shape::Torus { major, minor } => major > 0.0 && minor > 0.0,
            Shape::Cylinder { radius, half_height } => radius > 0.0 && half_height > 0.0,
        }
    }
}

/// Rigid motion followed by uniform scale: `world = rotation · (scale · local) + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for Similarity {
    fn default() -> Self {
        Similarity {
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
            scale: 1.0,
        }
    }
}

impl Similarity {
    pub fn translate(t: Vec3) -> Self {
        Similarity {
            translation: t,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub transform: Similarity,
    pub albedo: Vec3,
}

impl Primitive {
    pub fn new(shape: Shape, transform: Similarity, albedo: Vec3) -> Self {
        Primitive { shape, transform, albedo }
    }

    fn distance(&self, p: Vec3) -> f64 {
        let t = &self.transform;
        let local = t.rotation.transpose() * (p - t.translation) / t.scale;
        self.shape.distance(local) * t.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Combine {
    Union,
    SmoothUnion { k: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfAsset {
    primitives: Vec<Primitive>,
    combine: Combine,
}

/// Polynomial smooth minimum; returns the blended value and the blend
/// factor toward `a`.
fn smooth_min(a: f64, b: f64, k: f64) -> (f64, f64) {
    let h = (0.5 + 0.5 * (b - a) / k).clamp(0.0, 1.0);
    (b + (a - b) * h - k * h * (1.0 - h), h)
}

impl SdfAsset {
    pub fn new(primitives: Vec<Primitive>, combine: Combine) -> Result<Self, OracleError> {
        if primitives.is_empty() {
            return Err(OracleError::InvalidArgument("asset needs at least one primitive".into()));
        }
        if let Combine::SmoothUnion { k } = combine {
            if !(k > 0.0) {
                return Err(OracleError::InvalidArgument(format!("smooth-union k must be > 0, got {k}")));
            }
        }
        for (i, p) in primitives.iter().enumerate() {
            if !p.shape.is_valid() || !(p.transform.scale > 0.0) {
                return Err(OracleError::InvalidArgument(format!("primitive {i} has non-positive size or scale")));
            }
            if !p.transform.rotation.is_rotation(1e-6) {
                return Err(OracleError::InvalidArgument(format!("primitive {i} rotation is not orthonormal")));
            }
        }
        let asset = SdfAsset { primitives, combine };
        let b = asset.bounds();
        if !Aabb::cube(1.0).contains_box(&b, 1e-9) {
            return Err(OracleError::InvalidArgument(format!("asset bounds {b:?} exceed [-1,1]^3")));
        }
        Ok(asset)
    }

    pub fn sphere(radius: f64, albedo: Vec3) -> Result<Self, OracleError> {
        SdfAsset::new(
            vec![Primitive::new(Shape::Sphere { radius }, Similarity::default(), albedo)],
            Combine::Union,
        )
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    /// Conservative bounding box from per-primitive bounding balls
    /// (exact for spheres), grown by the smooth-union bulge.
    pub fn bounds(&self) -> Aabb {
        let pad = match self.combine {
            Combine::SmoothUnion { k } => 0.25 * k,
            Combine::Union => 0.0,
        };
        let mut b = Aabb::empty();
        for p in &self.primitives {
            let r = p.shape.bounding_radius() * p.transform.scale + pad;
            b.grow(p.transform.translation - Vec3::splat(r));
            b.grow(p.transform.translation + Vec3::splat(r));
        }
        b
    }

    /// Signed distance in meters (negative inside).
    pub fn sdf_eval(&self, p: Vec3) -> f64 {
        let mut d = self.primitives[0].distance(p);
        for prim in &self.primitives[1..] {
            let e = prim.distance(p);
            d = match self.combine {
                Combine::Union => d.min(e),
                Combine::SmoothUnion { k } => smooth_min(d, e, k).0,
            };
        }
        d
    }

    /// Surface albedo near `p`: the closest primitive's color for plain
    /// unions, blended with the smooth-min weights otherwise.
    pub fn albedo_at(&self, p: Vec3) -> Vec3 {
        let mut d = self.primitives[0].distance(p);
        let mut c = self.primitives[0].albedo;
        for prim in &self.primitives[1..] {
            let e = prim.distance(p);
            match self.combine {
                Combine::Union => {
                    if e < d {
                        d = e;
                        c = prim.albedo;
                    }
                }
                Combine::SmoothUnion { k } => {
                    let (v, h) = smooth_min(d, e, k);
                    c = c * h + prim.albedo * (1.0 - h);
                    d = v;
                }
            }
        }
        c
    }

    /// Normalized central-difference gradient of the SDF.
    pub fn normal_at(&self, p: Vec3) -> Vec3 {
        const H: f64 = 1e-6;
        let g = Vec3::new(
            self.sdf_eval(p + Vec3::X * H) - self.sdf_eval(p - Vec3::X * H),
            self.sdf_eval(p + Vec3::Y * H) - self.sdf_eval(p - Vec3::Y * H),
            self.sdf_eval(p + Vec3::Z * H) - self.sdf_eval(p - Vec3::Z * H),
        );
        g.normalized()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
}

const TRACE_EPS: f64 = 1e-6;
const TRACE_MAX_STEPS: usize = 1024;

/// First SDF zero crossing along the ray within `max_t`.
pub fn sphere_trace(asset: &SdfAsset, ray: &Ray, max_t: f64) -> Option<Hit> {
    // Everything lives in [-1,1]^3, so only march inside that box.
    let (enter, exit) = Aabb::cube(1.0 + 1e-3).intersect_ray(ray)?;
    let end = exit.min(max_t);
    let mut t = enter;
    for _ in 0..TRACE_MAX_STEPS {
        if t > end {
            return None;
        }
        let p = ray.at(t);
        let d = asset.sdf_eval(p);
        if d < TRACE_EPS {
            return Some(Hit {
                t,
                point: p,
                normal: asset.normal_at(p),
            });
        }
        t += d;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalLight {
    /// Unit vector pointing from the surface toward the light.
    pub direction: Vec3,
    pub intensity: f64,
}

impl DirectionalLight {
    pub fn new(direction: Vec3, intensity: f64) -> Self {
        DirectionalLight {
            direction: direction.normalized(),
            intensity,
        }
    }
}

/// Six axis-aligned lights of equal intensity; every normal receives
/// between `intensity` and `√3·intensity` of irradiance.
pub fn axis_lights(intensity: f64) -> Vec<DirectionalLight> {
    [Vec3::X, -Vec3::X, Vec3::Y, -Vec3::Y, Vec3::Z, -Vec3::Z]
        .into_iter()
        .map(|d| DirectionalLight::new(d, intensity))
        .collect()
}

/// Lambertian irradiance factor `Σ max(0, n·l)·intensity`.
pub fn lambert(normal: Vec3, lights: &[DirectionalLight]) -> f64 {
    lights.iter().map(|l| normal.dot(l.direction).max(0.0) * l.intensity).sum()
}

#[inline]
fn quantize8(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

/// One posed oracle image set. Channels are row-major; `rgb` is stored at
/// 8-bit precision so that a PNG round trip is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleView {
    pub camera: CameraPose,
    pub rgb: Vec<[f32; 3]>,
    pub depth: Vec<f32>,
    pub normal: Vec<[f32; 3]>,
    pub mask: Vec<bool>,
}

impl OracleView {
    pub fn width(&self) -> usize {
        self.camera.width
    }

    pub fn height(&self) -> usize {
        self.camera.height
    }

    pub fn rgb_at(&self, i: usize) -> Vec3 {
        let c = self.rgb[i];
        Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64)
    }

    pub fn normal_vec(&self, i: usize) -> Vec3 {
        let n = self.normal[i];
        Vec3::new(n[0] as f64, n[1] as f64, n[2] as f64)
    }

    /// A view with every pixel background.
    pub fn blank(camera: CameraPose) -> Self {
        let n = camera.pixel_count();
        OracleView {
            camera,
            rgb: vec![[1.0; 3]; n],
            depth: vec![f32::INFINITY; n],
            normal: vec![[0.0; 3]; n],
            mask: vec![false; n],
        }
    }
}

/// Sphere traces every pixel and shades hits with Lambertian lighting on a
/// white background. Depth is the Euclidean distance along the ray.
pub fn render_view(asset: &SdfAsset, camera: &CameraPose, lights: &[DirectionalLight]) -> OracleView {
    let w = camera.width;
    let mut view = OracleView::blank(*camera);
    let hits: Vec<Option<Hit>> = (0..camera.pixel_count())
        .into_par_iter()
        .map(|i| sphere_trace(asset, &camera.pixel_ray(i % w, i / w), 1e3))
        .collect();
    for (i, hit) in hits.into_iter().enumerate() {
        if let Some(h) = hit {
            let shade = lambert(h.normal, lights);
            let c = asset.albedo_at(h.point) * shade;
            view.rgb[i] = [quantize8(c.x), quantize8(c.y), quantize8(c.z)];
            view.depth[i] = h.t as f32;
            view.normal[i] = [h.normal.x as f32, h.normal.y as f32, h.normal.z as f32];
            view.mask[i] = true;
        }
    }
    view
}

/// Normals from depth gradients: every foreground pixel is unprojected and
/// the normal is the cross product of the image-space tangents, oriented
/// toward the camera. Background and isolated pixels map to zero.
pub fn depth_to_normals(view: &OracleView) -> Vec<Vec3> {
    let (w, h) = (view.width(), view.height());
    let cam = &view.camera;
    let point = |c: usize, r: usize| -> Option<Vec3> {
        let i = r * w + c;
        if !view.mask[i] || !view.depth[i].is_finite() {
            return None;
        }
        Some(cam.pixel_ray(c, r).at(view.depth[i] as f64))
    };
    // Central difference when both neighbors exist, one-sided otherwise.
    let tangent = |prev: Option<Vec3>, here: Vec3, next: Option<Vec3>| -> Option<Vec3> {
        match (prev, next) {
            (Some(a), Some(b)) => Some((b - a) * 0.5),
            (None, Some(b)) => Some(b - here),
            (Some(a), None) => Some(here - a),
            (None, None) => None,
        }
    };
    let mut out = vec![Vec3::ZERO; w * h];
    for r in 0..h {
        for c in 0..w {
            let Some(p) = point(c, r) else { continue };
            let du = tangent(
                if c > 0 { point(c - 1, r) } else { None },
                p,
                if c + 1 < w { point(c + 1, r) } else { None },
            );
            let dv = tangent(
                if r > 0 { point(c, r - 1) } else { None },
                p,
                if r + 1 < h { point(c, r + 1) } else { None },
            );
            let (Some(du), Some(dv)) = (du, dv) else { continue };
            let n = du.cross(dv);
            if n.norm() < 1e-15 {
                continue;
            }
            let mut n = n.normalized();
            if n.dot(p - cam.position) > 0.0 {
                n = -n;
            }
            out[r * w + c] = n;
        }
    }
    out
}

/// Foreground mask shrunk by `band` pixels: a pixel survives only if every
/// pixel within Chebyshev distance `band` is foreground.
pub fn interior_mask(mask: &[bool], width: usize, height: usize, band: usize) -> Vec<bool> {
    let b = band as isize;
    let mut out = vec![false; mask.len()];
    for r in 0..height as isize {
        for c in 0..width as isize {
            if !mask[(r * width as isize + c) as usize] {
                continue;
            }
            let mut ok = true;
            'scan: for dr in -b..=b {
                for dc in -b..=b {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr < 0 || cc < 0 || rr >= height as isize || cc >= width as isize || !mask[(rr * width as isize + cc) as usize] {
                        ok = false;
                        break 'scan;
                    }
                }
            }
            out[(r * width as isize + c) as usize] = ok;
        }
    }
    out
}

/// Rotates every nonzero normal by a half-normal angle (scale `noise_deg`)
/// about a random axis perpendicular to it.
pub fn perturb_supervision(normals: &[Vec3], noise_deg: f64, seed: u64) -> Result<Vec<Vec3>, OracleError> {
    if !(noise_deg >= 0.0) {
        return Err(OracleError::InvalidArgument(format!("noise_deg must be >= 0, got {noise_deg}")));
    }
    if noise_deg == 0.0 {
        return Ok(normals.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, noise_deg.to_radians()).expect("finite scale");
    Ok(normals
        .iter()
        .map(|&n| {
            if n.norm_squared() == 0.0 {
                return n;
            }
            let angle: f64 = dist.sample(&mut rng);
            let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            let (t1, t2) = orthonormal_basis(n);
            let axis = t1 * phi.cos() + t2 * phi.sin();
            (Mat3::axis_angle(axis, angle.abs()) * n).normalized()
        })
        .collect())
}

/// Two unit vectors completing `n` to an orthonormal frame.
pub fn orthonormal_basis(n: Vec3) -> (Vec3, Vec3) {
    let n = n.normalized();
    let helper = if n.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
    let t1 = n.cross(helper).normalized();
    (t1, n.cross(t1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmented {
    pub size: usize,
    pub rgb: Vec<[f32; 3]>,
    pub mask: Vec<bool>,
}

/// Segments a (near-)white-background image and recenters the foreground on
/// a square white canvas of side `ceil(1.4 · s)`, where `s` is the longer
/// side of the foreground bounding box (20% of `s` padding per side).
pub fn segment_and_pad(rgb: &[[f32; 3]], width: usize, height: usize, threshold: f64) -> Result<Segmented, OracleError> {
    if width == 0 || height == 0 || rgb.len() != width * height {
        return Err(OracleError::InvalidArgument("image must be nonempty and match its dimensions".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(OracleError::InvalidArgument(format!("threshold {threshold} outside (0,1)")));
    }
    let is_fg = |c: &[f32; 3]| {
        let (r, g, b) = (c[0] as f64, c[1] as f64, c[2] as f64);
        let lum = 0.299 * r + 0.587 * g + 0.114 * b;
        let dist = ((1.0 - r).powi(2) + (1.0 - g).powi(2) + (1.0 - b).powi(2)).sqrt();
        lum < threshold || dist > threshold / 2.0
    };
    let (mut c0, mut c1, mut r0, mut r1) = (usize::MAX, 0, usize::MAX, 0);
    for r in 0..height {
        for c in 0..width {
            if is_fg(&rgb[r * width + c]) {
                c0 = c0.min(c);
                c1 = c1.max(c);
                r0 = r0.min(r);
                r1 = r1.max(r);
            }
        }
    }
    if c0 == usize::MAX {
        return Err(OracleError::EmptyForeground);
    }
    let (bw, bh) = (c1 - c0 + 1, r1 - r0 + 1);
    let side = bw.max(bh);
    let size = (14 * side).div_ceil(10);
    let (off_c, off_r) = ((size - bw) / 2, (size - bh) / 2);
    let mut out = vec![[1.0f32; 3]; size * size];
    let mut mask = vec![false; size * size];
    for r in 0..bh {
        for c in 0..bw {
            let src = &rgb[(r0 + r) * width + c0 + c];
            if is_fg(src) {
                let dst = (off_r + r) * size + off_c + c;
                out[dst] = *src;
                mask[dst] = true;
            }
        }
    }
    Ok(Segmented { size, rgb: out, mask })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<OracleView>,
    pub asset_aabb: Aabb,
    pub seed: u64,
    pub lights: Vec<DirectionalLight>,
}

impl Dataset {
    pub fn new(views: Vec<OracleView>, asset_aabb: Aabb, seed: u64, lights: Vec<DirectionalLight>) -> Result<Self, OracleError> {
        if views.len() < 2 {
            return Err(OracleError::InvalidArgument("dataset needs at least 2 views".into()));
        }
        let (w, h) = (views[0].width(), views[0].height());
        if views.iter().any(|v| v.width() != w || v.height() != h) {
            return Err(OracleError::InvalidArgument("all views must share image dimensions".into()));
        }
        Ok(Dataset {
            views,
            asset_aabb,
            seed,
            lights,
        })
    }

    /// Renders `asset` from every camera.
    pub fn render(asset: &SdfAsset, cameras: &[CameraPose], lights: &[DirectionalLight], seed: u64) -> Result<Self, OracleError> {
        let views = cameras.iter().map(|c| render_view(asset, c, lights)).collect();
        Dataset::new(views, asset.bounds(), seed, lights.to_vec())
    }

    pub fn pixel_count(&self) -> usize {
        self.views.iter().map(|v| v.rgb.len()).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    seed: u64,
    asset_aabb: Aabb,
    lights: Vec<DirectionalLight>,
    view_count: usize,
}

fn view_path(dir: &Path, index: usize, suffix: &str) -> PathBuf {
    dir.join("views").join(format!("{index:04}.{suffix}"))
}

/// Writes a little-endian PFM; `channels` is 1 (`Pf`) or 3 (`PF`). Rows are
/// stored bottom to top as the format requires.
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<(), OracleError> {
    assert!(channels == 1 || channels == 3);
    assert_eq!(data.len(), width * height * channels);
    let mut buf = Vec::with_capacity(32 + data.len() * 4);
    write!(buf, "{}\n{} {}\n-1.0\n", if channels == 3 { "PF" } else { "Pf" }, width, height).expect("write to vec");
    for r in (0..height).rev() {
        for v in &data[r * width * channels..(r + 1) * width * channels] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(io_err(path))
}

/// Reads a PFM written by [`write_pfm`] (either endianness). Returns
/// `(width, height, channels, data)` with rows top to bottom.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f32>), OracleError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<fs::File>, field: &str| -> Result<String, OracleError> {
        line.clear();
        reader.read_line(&mut line).map_err(io_err(path))?;
        if line.is_empty() {
            return Err(parse_err(path, field, "unexpected end of file"));
        }
        Ok(line.trim().to_string())
    };
    let channels = match next_line(&mut reader, "magic")?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(parse_err(path, "magic", format!("expected PF or Pf, found {other:?}"))),
    };
    let dims = next_line(&mut reader, "dimensions")?;
    let mut it = dims.split_whitespace().map(|s| s.parse::<usize>());
    let (Some(Ok(width)), Some(Ok(height))) = (it.next(), it.next()) else {
        return Err(parse_err(path, "dimensions", format!("cannot parse {dims:?}")));
    };
    let scale: f64 = next_line(&mut reader, "scale")?
        .parse()
        .map_err(|e| parse_err(path, "scale", e))?;
    let little = scale < 0.0;
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(io_err(path))?;
    let n = width * height * channels;
    if raw.len() != n * 4 {
        return Err(parse_err(path, "data", format!("expected {} bytes, found {}", n * 4, raw.len())));
    }
    let mut data = vec![0f32; n];
    for (r_out, r_in) in (0..height).rev().enumerate() {
        for k in 0..width * channels {
            let o = (r_in * width * channels + k) * 4;
            let b = [raw[o], raw[o + 1], raw[o + 2], raw[o + 3]];
            data[r_out * width * channels + k] = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok((width, height, channels, data))
}

pub fn rgb_to_bytes(rgb: &[[f32; 3]]) -> Vec<u8> {
    rgb.iter()
        .flat_map(|c| c.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect()
}

pub fn write_png_rgb(path: &Path, width: usize, height: usize, rgb: &[[f32; 3]]) -> Result<(), OracleError> {
    image::save_buffer(path, &rgb_to_bytes(rgb), width as u32, height as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| OracleError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })
}

fn read_png(path: &Path) -> Result<image::DynamicImage, OracleError> {
    if !path.exists() {
        return Err(OracleError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        });
    }
    image::open(path).map_err(|e| parse_err(path, "image", e))
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), OracleError> {
    fs::create_dir_all(dir.join("views")).map_err(io_err(dir))?;
    for (i, v) in dataset.views.iter().enumerate() {
        let (w, h) = (v.width(), v.height());
        write_png_rgb(&view_path(dir, i, "rgb.png"), w, h, &v.rgb)?;
        write_pfm(&view_path(dir, i, "depth.pfm"), w, h, 1, &v.depth)?;
        let normals: Vec<f32> = v.normal.iter().flatten().copied().collect();
        write_pfm(&view_path(dir, i, "normal.pfm"), w, h, 3, &normals)?;
        let mask: Vec<u8> = v.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        let mask_path = view_path(dir, i, "mask.png");
        image::save_buffer(&mask_path, &mask, w as u32, h as u32, image::ExtendedColorType::L8).map_err(|e| OracleError::Io {
            path: mask_path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
    }
    let cameras: Vec<CameraPose> = dataset.views.iter().map(|v| v.camera).collect();
    geometry::write_cameras(&dir.join("cameras.json"), &cameras).map_err(|e| OracleError::Io {
        path: dir.join("cameras.json").display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let meta = DatasetMeta {
        seed: dataset.seed,
        asset_aabb: dataset.asset_aabb,
        lights: dataset.lights.clone(),
        view_count: dataset.views.len(),
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(io_err(&meta_path))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, OracleError> {
    let cam_path = dir.join("cameras.json");
    let text = fs::read_to_string(&cam_path).map_err(|e| parse_err(&cam_path, "cameras", format!("cannot read: {e}")))?;
    let cameras = geometry::cameras_from_json(&text).map_err(|m| parse_err(&cam_path, "cameras", m))?;
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| parse_err(&meta_path, "meta", format!("cannot read: {e}")))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| parse_err(&meta_path, "meta", e))?;
    if meta.view_count != cameras.len() {
        return Err(parse_err(
            &meta_path,
            "view_count",
            format!("{} views declared but {} cameras listed", meta.view_count, cameras.len()),
        ));
    }
    let mut views = Vec::with_capacity(cameras.len());
    for (i, camera) in cameras.into_iter().enumerate() {
        let (w, h) = (camera.width, camera.height);
        let rgb_path = view_path(dir, i, "rgb.png");
        let img = read_png(&rgb_path)?.to_rgb8();
        if img.width() as usize != w || img.height() as usize != h {
            return Err(parse_err(&rgb_path, "dimensions", "image size does not match camera"));
        }
        let rgb = img
            .pixels()
            .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
            .collect();
        let depth_path = view_path(dir, i, "depth.pfm");
        let (dw, dh, dc, depth) = read_pfm(&depth_path)?;
        if (dw, dh, dc) != (w, h, 1) {
            return Err(parse_err(&depth_path, "dimensions", "depth map does not match camera"));
        }
        let normal_path = view_path(dir, i, "normal.pfm");
        let (nw, nh, nc, normal) = read_pfm(&normal_path)?;
        if (nw, nh, nc) != (w, h, 3) {
            return Err(parse_err(&normal_path, "dimensions", "normal map does not match camera"));
        }
        let mask_path = view_path(dir, i, "mask.png");
        let mask_img = read_png(&mask_path)?.to_luma8();
        let mask = mask_img.pixels().map(|p| p[0] > 127).collect();
        views.push(OracleView {
            camera,
            rgb,
            depth,
            normal: normal.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            mask,
        });
    }
    Dataset::new(views, meta.asset_aabb, meta.seed, meta.lights)
}
