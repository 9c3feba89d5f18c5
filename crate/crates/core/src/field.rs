//! Dense voxel radiance field and its trainer.
//!
//! Density is `softplus(raw)` and color `sigmoid(raw)`, both trilinearly
//! interpolated between voxel centers after activation. Rays are composited
//! over a white background. Training minimizes the photometric error plus
//! four geometric regularizers: a log-density sparsity term, an orientation
//! penalty on back-facing normals, a jittered normal smoothness term and a
//! cosine loss against depth-derived normals. All gradients are analytic.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Ray, Vec3};
use crate::oracle::{self, Dataset};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("training diverged at step {}: total loss {}", .0.step, .0.total)]
    Diverged(LossReport),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("malformed config {path}: {message}")]
    Config { path: String, message: String },
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Raw parameter whose softplus equals `sigma`.
pub fn softplus_inverse(sigma: f64) -> f64 {
    if sigma > 30.0 {
        sigma
    } else {
        sigma.exp_m1().ln()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Trilinear stencil: eight voxel indices and weights.
#[derive(Debug, Clone, Copy)]
struct Stencil {
    idx: [usize; 8],
    w: [f64; 8],
}

#[derive(Debug, Clone, Copy)]
struct GridSpec {
    res: usize,
    min: Vec3,
    max: Vec3,
    inv_voxel: f64,
}

impl GridSpec {
    #[inline]
    fn stencil(&self, p: Vec3) -> Option<Stencil> {
        if !(p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y && p.z >= self.min.z && p.z <= self.max.z) {
            return None;
        }
        let n = self.res;
        let top = (n - 1) as f64;
        let axis = |v: f64, lo: f64| -> (usize, usize, f64) {
            let g = ((v - lo) * self.inv_voxel - 0.5).clamp(0.0, top);
            let i0 = (g as usize).min(n.saturating_sub(2));
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, g - i0 as f64)
        };
        let (x0, x1, fx) = axis(p.x, self.min.x);
        let (y0, y1, fy) = axis(p.y, self.min.y);
        let (z0, z1, fz) = axis(p.z, self.min.z);
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        let at = |x: usize, y: usize, z: usize| x + n * (y + n * z);
        Some(Stencil {
            idx: [
                at(x0, y0, z0),
                at(x1, y0, z0),
                at(x0, y1, z0),
                at(x1, y1, z0),
                at(x0, y0, z1),
                at(x1, y0, z1),
                at(x0, y1, z1),
                at(x1, y1, z1),
            ],
            w: [gx * gy * gz, fx * gy * gz, gx * fy * gz, fx * fy * gz, gx * gy * fz, fx * gy * fz, gx * fy * fz, fx * fy * fz],
        })
    }
}

/// Activated density and color at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub rgb: Vec3,
}

/// Anything that yields activated `[σ, r, g, b]` per voxel.
trait VoxelSource: Sync {
    fn spec(&self) -> &GridSpec;
    fn voxel(&self, i: usize) -> [f64; 4];

    #[inline]
    fn sigma_at(&self, p: Vec3) -> f64 {
        match self.spec().stencil(p) {
            Some(s) => (0..8).map(|k| s.w[k] * self.voxel(s.idx[k])[0]).sum(),
            None => 0.0,
        }
    }

    #[inline]
    fn sample_at(&self, p: Vec3) -> FieldSample {
        match self.spec().stencil(p) {
            Some(s) => {
                let mut acc = [0.0; 4];
                for k in 0..8 {
                    let v = self.voxel(s.idx[k]);
                    for c in 0..4 {
                        acc[c] += s.w[k] * v[c];
                    }
                }
                FieldSample {
                    sigma: acc[0],
                    rgb: Vec3::new(acc[1], acc[2], acc[3]),
                }
            }
            None => FieldSample {
                sigma: 0.0,
                rgb: Vec3::ZERO,
            },
        }
    }

    /// Central-difference density gradient at `p` with step `h`.
    #[inline]
    fn sigma_gradient(&self, p: Vec3, h: f64) -> Vec3 {
        let inv = 0.5 / h;
        Vec3::new(
            (self.sigma_at(p + Vec3::X * h) - self.sigma_at(p - Vec3::X * h)) * inv,
            (self.sigma_at(p + Vec3::Y * h) - self.sigma_at(p - Vec3::Y * h)) * inv,
            (self.sigma_at(p + Vec3::Z * h) - self.sigma_at(p - Vec3::Z * h)) * inv,
        )
    }
}

/// Trainable dense grid. Parameters are stored interleaved per voxel as
/// `[raw density, raw r, raw g, raw b]`, x fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelField {
    resolution: usize,
    bounds: Aabb,
    params: Vec<f64>,
}

pub const DEFAULT_RESOLUTION: usize = 128;

impl VoxelField {
    /// Uniform field with activated density `sigma` and color `rgb` (each
    /// channel strictly inside (0,1)).
    pub fn uniform(resolution: usize, bounds: Aabb, sigma: f64, rgb: Vec3) -> Result<Self, FieldError> {
        if resolution < 2 {
            return Err(FieldError::InvalidArgument("field resolution must be >= 2".into()));
        }
        let e = bounds.extent();
        if !(e.x > 0.0) || (e.x - e.y).abs() > 1e-12 * e.x || (e.x - e.z).abs() > 1e-12 * e.x {
            return Err(FieldError::InvalidArgument(format!("field bounds must be a nonempty cube, got {bounds:?}")));
        }
        let raw = [softplus_inverse(sigma), logit(rgb.x), logit(rgb.y), logit(rgb.z)];
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::InvalidArgument("initial density must be > 0 and colors in (0,1)".into()));
        }
        let n = resolution.pow(3);
        let mut params = Vec::with_capacity(4 * n);
        for _ in 0..n {
            params.extend_from_slice(&raw);
        }
        Ok(VoxelField { resolution, bounds, params })
    }

    pub fn from_raw(resolution: usize, bounds: Aabb, params: Vec<f64>) -> Result<Self, FieldError> {
        if params.len() != 4 * resolution.pow(3) {
            return Err(FieldError::InvalidArgument(format!(
                "expected {} parameters for resolution {resolution}, got {}",
                4 * resolution.pow(3),
                params.len()
            )));
        }
        let mut f = VoxelField::uniform(resolution, bounds, 1.0, Vec3::splat(0.5))?;
        f.params = params;
        Ok(f)
    }

    /// Builds a field from activated per-voxel-center functions.
    pub fn from_fn(resolution: usize, bounds: Aabb, f: impl Fn(Vec3) -> (f64, Vec3)) -> Result<Self, FieldError> {
        let mut field = VoxelField::uniform(resolution, bounds, 1.0, Vec3::splat(0.5))?;
        for i in 0..resolution.pow(3) {
            let (sigma, rgb) = f(field.voxel_center(i));
            field.set_voxel(i, sigma, rgb);
        }
        Ok(field)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn voxel_size(&self) -> f64 {
        self.bounds.extent().x / self.resolution as f64
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.pow(3)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn voxel_center(&self, i: usize) -> Vec3 {
        let n = self.resolution;
        let (x, y, z) = (i % n, (i / n) % n, i / (n * n));
        self.bounds.min + Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * self.voxel_size()
    }

    /// Sets activated values of one voxel. Colors are clamped into (0,1).
    pub fn set_voxel(&mut self, i: usize, sigma: f64, rgb: Vec3) {
        let c = |v: f64| logit(v.clamp(1e-6, 1.0 - 1e-6));
        self.params[4 * i] = softplus_inverse(sigma.max(1e-12));
        self.params[4 * i + 1] = c(rgb.x);
        self.params[4 * i + 2] = c(rgb.y);
        self.params[4 * i + 3] = c(rgb.z);
    }

    pub fn voxel_sigma(&self, i: usize) -> f64 {
        softplus(self.params[4 * i])
    }

    fn spec_of(&self) -> GridSpec {
        GridSpec {
            res: self.resolution,
            min: self.bounds.min,
            max: self.bounds.max,
            inv_voxel: 1.0 / self.voxel_size(),
        }
    }

    fn activated(&self) -> Activated {
        let mut values = vec![[0.0; 4]; self.voxel_count()];
        values.par_iter_mut().enumerate().for_each(|(i, v)| {
            let p = &self.params[4 * i..4 * i + 4];
            *v = [softplus(p[0]), sigmoid(p[1]), sigmoid(p[2]), sigmoid(p[3])];
        });
        Activated { spec: self.spec_of(), values }
    }
}

/// Field with activations evaluated once per voxel.
struct Activated {
    spec: GridSpec,
    values: Vec<[f64; 4]>,
}

impl VoxelSource for Activated {
    fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    fn voxel(&self, i: usize) -> [f64; 4] {
        self.values[i]
    }
}

/// Evaluates activations lazily; used outside the training loop.
struct Lazy<'a> {
    spec: GridSpec,
    params: &'a [f64],
}

impl VoxelSource for Lazy<'_> {
    fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    fn voxel(&self, i: usize) -> [f64; 4] {
        let p = &self.params[4 * i..4 * i + 4];
        [softplus(p[0]), sigmoid(p[1]), sigmoid(p[2]), sigmoid(p[3])]
    }
}

impl VoxelField {
    fn lazy(&self) -> Lazy<'_> {
        Lazy {
            spec: self.spec_of(),
            params: &self.params,
        }
    }
}

/// Trilinear interpolation of activated density and color; zero density
/// outside the bounds.
pub fn field_sample(field: &VoxelField, p: Vec3) -> FieldSample {
    field.lazy().sample_at(p)
}

/// Default finite-difference step for density normals.
pub fn default_normal_step(field: &VoxelField) -> f64 {
    1e-3 * field.bounds().extent().max_component()
}

const NORMAL_EPS: f64 = 1e-8;

/// Outward normal `−∇σ/‖∇σ‖` from central differences; `None` where the
/// gradient vanishes.
pub fn density_normal(field: &VoxelField, p: Vec3, h: f64) -> Option<Vec3> {
    let g = field.lazy().sigma_gradient(p, h);
    let n = g.norm();
    (n >= NORMAL_EPS).then(|| -g / n)
}

/// Quadrature record for one sample along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeSample {
    pub t: f64,
    pub delta: f64,
    pub sigma: f64,
    pub color: Vec3,
    pub alpha: f64,
    pub transmittance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    pub rgb: Vec3,
    pub depth: f64,
    pub opacity: f64,
    pub samples: Vec<VolumeSample>,
}

/// Sample distances: `n` equal strata over `[near, far]` clipped to the
/// field bounds, one sample per stratum at relative offset `offset(i)`.
fn sample_ts(bounds: &Aabb, ray: &Ray, near: f64, far: f64, n: usize, mut offset: impl FnMut(usize) -> f64) -> Vec<(f64, f64)> {
    let Some((t_in, t_out)) = bounds.intersect_ray(ray) else {
        return Vec::new();
    };
    let (a, b) = (near.max(t_in), far.min(t_out));
    if !(b > a) {
        return Vec::new();
    }
    let step = (b - a) / n as f64;
    let ts: Vec<f64> = (0..n).map(|i| a + (i as f64 + offset(i)) * step).collect();
    (0..n)
        .map(|i| {
            let next = if i + 1 < n { ts[i + 1] } else { b };
            (ts[i], next - ts[i])
        })
        .collect()
}

fn composite(samples: &mut [VolumeSample]) -> (Vec3, f64, f64) {
    let mut trans = 1.0;
    let (mut rgb, mut depth, mut opacity) = (Vec3::ZERO, 0.0, 0.0);
    for s in samples.iter_mut() {
        s.alpha = 1.0 - (-s.sigma * s.delta).exp();
        s.transmittance = trans;
        s.weight = trans * s.alpha;
        trans *= 1.0 - s.alpha;
        rgb += s.color * s.weight;
        depth += s.weight * s.t;
        opacity += s.weight;
    }
    let rgb = rgb + Vec3::ONE * (1.0 - opacity);
    (rgb, depth / opacity.max(1e-8), opacity)
}

fn validate_interval(near: f64, far: f64, n: usize) -> Result<(), FieldError> {
    if !(near < far) || n == 0 {
        return Err(FieldError::InvalidArgument(format!("need near < far and n_samples >= 1, got [{near}, {far}] with {n}")));
    }
    Ok(())
}

/// Volume-renders a ray at stratum midpoints. Samples only cover the part
/// of `[near, far]` inside the field bounds; density is zero elsewhere.
pub fn render_ray(field: &VoxelField, ray: &Ray, near: f64, far: f64, n_samples: usize) -> Result<RayRender, FieldError> {
    render_ray_with(field, ray, near, far, n_samples, |_| 0.5)
}

/// [`render_ray`] with caller-chosen offsets within each stratum (values in [0,1)).
pub fn render_ray_with(
    field: &VoxelField,
    ray: &Ray,
    near: f64,
    far: f64,
    n_samples: usize,
    offset: impl FnMut(usize) -> f64,
) -> Result<RayRender, FieldError> {
    validate_interval(near, far, n_samples)?;
    let src = field.lazy();
    let mut samples: Vec<VolumeSample> = sample_ts(&field.bounds, ray, near, far, n_samples, offset)
        .into_iter()
        .map(|(t, delta)| {
            let s = src.sample_at(ray.at(t));
            VolumeSample {
                t,
                delta,
                sigma: s.sigma,
                color: s.rgb,
                alpha: 0.0,
                transmittance: 0.0,
                weight: 0.0,
            }
        })
        .collect();
    let (rgb, depth, opacity) = composite(&mut samples);
    Ok(RayRender { rgb, depth, opacity, samples })
}

/// `mean(log(σ + ε))` over all samples.
pub fn loss_sparsity(sigmas: &[f64], floor: f64) -> Result<f64, FieldError> {
    if sigmas.is_empty() {
        return Err(FieldError::InvalidArgument("sparsity loss over an empty batch".into()));
    }
    Ok(sigmas.iter().map(|s| (s + floor).ln()).sum::<f64>() / sigmas.len() as f64)
}

#[inline]
fn orientation_penalty(normal: Vec3, dir: Vec3) -> f64 {
    normal.dot(dir).max(0.0).powi(2)
}

/// `Σ wᵢ · max(0, n̂ᵢ·d)²` over samples whose normal is defined.
pub fn loss_orientation(samples: &[(f64, Option<Vec3>)], view_dir: Vec3) -> f64 {
    samples
        .iter()
        .filter_map(|&(w, n)| n.map(|n| w * orientation_penalty(n, view_dir)))
        .sum()
}

/// Uniform random offset inside a ball of radius `r`.
fn ball_offset<R: Rng>(rng: &mut R, r: f64) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0);
        if v.norm_squared() <= 1.0 {
            return v * r;
        }
    }
}

/// Default jitter radius for the smoothness loss.
pub fn default_smooth_jitter(field: &VoxelField) -> f64 {
    1e-2 * field.bounds().extent().max_component()
}

/// Mean of `‖n̂(p) − n̂(p + u)‖²` with `u` uniform in a `jitter` ball; pairs
/// with an undefined normal are skipped.
pub fn loss_smoothness(field: &VoxelField, points: &[Vec3], jitter: f64, seed: u64) -> f64 {
    let h = default_normal_step(field);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut count) = (0.0, 0usize);
    for &p in points {
        let q = p + ball_offset(&mut rng, jitter);
        if let (Some(a), Some(b)) = (density_normal(field, p, h), density_normal(field, q, h)) {
            sum += (a - b).norm_squared();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Weight-averaged normal of a ray; `None` when opacity is below 0.5 or no
/// sample carries a normal.
pub fn rendered_normal(samples: &[(f64, Option<Vec3>)]) -> Option<Vec3> {
    let opacity: f64 = samples.iter().map(|s| s.0).sum();
    if opacity < 0.5 {
        return None;
    }
    let acc = samples
        .iter()
        .filter_map(|&(w, n)| n.map(|n| n * w))
        .fold(Vec3::ZERO, |a, b| a + b);
    (acc.norm() > NORMAL_EPS).then(|| acc.normalized())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisionLoss {
    pub value: f64,
    /// Set when no ray was eligible; `value` is then 0.
    pub empty_mask: bool,
}

/// Mean cosine distance `1 − n̂·n̂ˢ` over masked rays with a rendered normal.
pub fn loss_normal_supervision(rendered: &[Option<Vec3>], supervision: &[Vec3], mask: &[bool]) -> SupervisionLoss {
    let (mut sum, mut count) = (0.0, 0usize);
    for ((r, s), &m) in rendered.iter().zip(supervision).zip(mask) {
        if let (true, Some(n)) = (m, r) {
            sum += 1.0 - n.dot(*s);
            count += 1;
        }
    }
    if count == 0 {
        log::warn!("normal supervision mask selected no rays");
        SupervisionLoss { value: 0.0, empty_mask: true }
    } else {
        SupervisionLoss {
            value: sum / count as f64,
            empty_mask: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub photo: f64,
    pub density: f64,
    pub orientation: f64,
    pub smoothness: f64,
    pub normal: f64,
    /// ε_d in `log(σ + ε_d)`.
    pub density_floor: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            photo: 1.0,
            density: 1e-4,
            orientation: 1e-2,
            smoothness: 1e-3,
            normal: 5e-2,
            density_floor: 1e-2,
        }
    }
}

impl LossWeights {
    pub fn photo_only() -> Self {
        LossWeights {
            photo: 1.0,
            density: 0.0,
            orientation: 0.0,
            smoothness: 0.0,
            normal: 0.0,
            density_floor: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let all = [self.photo, self.density, self.orientation, self.smoothness, self.normal];
        if all.iter().any(|w| !(*w >= 0.0)) || !(self.density_floor >= 0.0) {
            return Err(FieldError::InvalidArgument(format!("loss weights must be >= 0: {self:?}")));
        }
        Ok(())
    }

    fn needs_normals(&self) -> bool {
        self.orientation > 0.0 || self.smoothness > 0.0 || self.normal > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub photo: f64,
    pub sparsity: f64,
    pub orientation: f64,
    pub smoothness: f64,
    pub normal: f64,
    pub total: f64,
    /// Rays that entered the normal-supervision mean.
    pub normal_rays: usize,
    /// Point pairs that entered the smoothness mean.
    pub smooth_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub rays_per_batch: usize,
    pub samples_per_ray: usize,
    pub learning_rate: f64,
    /// Multiplier on `learning_rate` for the density parameters.
    pub density_lr_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub supervision_noise_deg: f64,
    pub near: f64,
    pub far: f64,
    pub resolution: usize,
    /// Half side of the cubic field bounds centered at the origin.
    pub bounds_half_extent: f64,
    /// Initial activated density everywhere.
    pub init_density: f64,
    /// Random offsets within each stratum; midpoints when false.
    pub stratified: bool,
    /// Samples with a rendering weight below this carry no normal in the
    /// orientation and supervision terms. Zero keeps every sample.
    pub normal_weight_floor: f64,
    /// Pixels this close to the silhouette get no normal supervision.
    pub silhouette_band: usize,
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            rays_per_batch: 4096,
            samples_per_ray: 128,
            learning_rate: 1e-2,
            density_lr_scale: 1.0,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            seed: 0,
            supervision_noise_deg: 0.0,
            near: 0.1,
            far: 10.0,
            resolution: DEFAULT_RESOLUTION,
            bounds_half_extent: 1.0,
            init_density: 0.1,
            stratified: true,
            normal_weight_floor: 5e-3,
            silhouette_band: 2,
            trace_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.rays_per_batch == 0 || self.samples_per_ray == 0 || self.trace_every == 0 {
            return Err(FieldError::InvalidArgument("batch, sample and trace counts must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.density_lr_scale > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(FieldError::InvalidArgument("invalid optimizer settings".into()));
        }
        if !(self.near < self.far) || !(self.near >= 0.0) {
            return Err(FieldError::InvalidArgument(format!("need 0 <= near < far, got [{}, {}]", self.near, self.far)));
        }
        if !(self.supervision_noise_deg >= 0.0) || !(self.init_density > 0.0) || !(self.bounds_half_extent > 0.0) {
            return Err(FieldError::InvalidArgument("noise, initial density and bounds must be positive".into()));
        }
        Ok(())
    }

    pub fn initial_field(&self) -> Result<VoxelField, FieldError> {
        VoxelField::uniform(self.resolution, Aabb::cube(self.bounds_half_extent), self.init_density, Vec3::splat(0.5))
    }
}

/// Both config sections as stored in a training TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingFile {
    pub train: TrainConfig,
    pub weights: LossWeights,
}

impl TrainingFile {
    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let text = fs::read_to_string(path).map_err(|source| FieldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| FieldError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("training config serializes")
    }
}

/// Mixes integers into a well-distributed 64-bit seed (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// One training ray with everything needed to evaluate the loss.
#[derive(Debug, Clone)]
pub struct BatchRay {
    pub ray: Ray,
    pub target: Vec3,
    /// World-frame supervision normal, if the pixel has one.
    pub supervision: Option<Vec3>,
    /// Stratum offsets in [0,1), one per sample.
    pub offsets: Vec<f64>,
    /// Jitter applied to this ray's smoothness point.
    pub jitter: Vec3,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub rays: Vec<BatchRay>,
}

/// Gradient contribution at a point, with respect to activated values.
#[derive(Debug, Clone, Copy)]
struct PointGrad {
    p: Vec3,
    d_sigma: f64,
    d_color: Vec3,
}

#[derive(Debug, Clone, Copy, Default)]
struct NormalEval {
    n: Vec3,
    g_norm: f64,
}

struct SampleRec {
    p: Vec3,
    sigma: f64,
    color: Vec3,
    delta: f64,
    weight: f64,
    /// Transmittance after this sample.
    trans_after: f64,
    normal: Option<NormalEval>,
}

struct RayForward {
    samples: Vec<SampleRec>,
    rgb: Vec3,
    orientation: f64,
    /// Unnormalized weighted normal sum, when the ray enters supervision.
    supervised: Option<(Vec3, Vec3)>,
    /// `(p, n_p, q, n_q)` for the smoothness pair.
    smooth: Option<(Vec3, NormalEval, Vec3, NormalEval)>,
}

fn eval_normal<S: VoxelSource>(src: &S, p: Vec3, h: f64) -> Option<NormalEval> {
    let g = src.sigma_gradient(p, h);
    let g_norm = g.norm();
    (g_norm >= NORMAL_EPS).then(|| NormalEval { n: -g / g_norm, g_norm })
}

/// Backpropagates `dL/dn̂` through `n̂ = −g/‖g‖` and the central
/// differences onto the six stencil points.
fn push_normal_grad(out: &mut Vec<PointGrad>, p: Vec3, ne: &NormalEval, d_n: Vec3, h: f64) {
    let n = ne.n;
    let d_g = -(d_n - n * n.dot(d_n)) / ne.g_norm;
    let s = 0.5 / h;
    for (axis, e) in [Vec3::X, Vec3::Y, Vec3::Z].into_iter().enumerate() {
        let c = d_g[axis] * s;
        out.push(PointGrad { p: p + e * h, d_sigma: c, d_color: Vec3::ZERO });
        out.push(PointGrad { p: p - e * h, d_sigma: -c, d_color: Vec3::ZERO });
    }
}

struct LossContext<'a> {
    weights: &'a LossWeights,
    config: &'a TrainConfig,
    h: f64,
}

impl LossContext<'_> {
    fn forward<S: VoxelSource>(&self, src: &S, br: &BatchRay) -> RayForward {
        let cfg = self.config;
        let spec = src.spec();
        let bounds = Aabb { min: spec.min, max: spec.max };
        let ts = sample_ts(&bounds, &br.ray, cfg.near, cfg.far, cfg.samples_per_ray, |i| br.offsets[i]);
        let mut samples = Vec::with_capacity(ts.len());
        let mut trans = 1.0;
        let (mut rgb, mut opacity) = (Vec3::ZERO, 0.0);
        for (t, delta) in ts {
            let p = br.ray.at(t);
            let s = src.sample_at(p);
            let alpha = 1.0 - (-s.sigma * delta).exp();
            let weight = trans * alpha;
            trans *= 1.0 - alpha;
            rgb += s.rgb * weight;
            opacity += weight;
            samples.push(SampleRec {
                p,
                sigma: s.sigma,
                color: s.rgb,
                delta,
                weight,
                trans_after: trans,
                normal: None,
            });
        }
        let rgb = rgb + Vec3::ONE * (1.0 - opacity);
        let mut fwd = RayForward {
            samples,
            rgb,
            orientation: 0.0,
            supervised: None,
            smooth: None,
        };
        if !self.weights.needs_normals() {
            return fwd;
        }
        let d = br.ray.direction;
        let mut acc = Vec3::ZERO;
        let mut any = false;
        for s in fwd.samples.iter_mut() {
            if s.weight < cfg.normal_weight_floor || s.weight <= 0.0 {
                continue;
            }
            s.normal = eval_normal(src, s.p, self.h);
            if let Some(ne) = s.normal {
                fwd.orientation += s.weight * orientation_penalty(ne.n, d);
                acc += ne.n * s.weight;
                any = true;
            }
        }
        if let (Some(sup), true) = (br.supervision, any && opacity >= 0.5 && acc.norm() > NORMAL_EPS) {
            fwd.supervised = Some((acc, sup));
        }
        if opacity >= 0.5 {
            let best = fwd
                .samples
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |b, (i, s)| if s.weight > b.1 { (i, s.weight) } else { b })
                .0;
            let p = fwd.samples[best].p;
            let q = p + br.jitter;
            let np = fwd.samples[best].normal.or_else(|| eval_normal(src, p, self.h));
            if let (Some(np), Some(nq)) = (np, eval_normal(src, q, self.h)) {
                fwd.smooth = Some((p, np, q, nq));
            }
        }
        fwd
    }

    /// Gradients of the λ-weighted, batch-normalized total loss for one ray.
    fn backward(&self, br: &BatchRay, fwd: &RayForward, norms: &Normalizers) -> Vec<PointGrad> {
        let wts = self.weights;
        let n = fwd.samples.len();
        let mut out = Vec::with_capacity(n + 16);
        if n == 0 {
            return out;
        }
        let d = br.ray.direction;
        // dL/dC for the photometric term.
        let d_rgb = (fwd.rgb - br.target) * (2.0 * wts.photo / (3.0 * norms.rays));
        let mut d_w = vec![0.0; n];
        let mut d_n: Vec<Vec3> = vec![Vec3::ZERO; n];
        for (i, s) in fwd.samples.iter().enumerate() {
            d_w[i] = d_rgb.dot(s.color - Vec3::ONE);
        }
        if wts.orientation > 0.0 {
            let k = wts.orientation / norms.rays;
            for (i, s) in fwd.samples.iter().enumerate() {
                if let Some(ne) = s.normal {
                    let c = ne.n.dot(d).max(0.0);
                    d_w[i] += k * c * c;
                    d_n[i] += d * (2.0 * k * s.weight * c);
                }
            }
        }
        if let (Some((acc, sup)), true) = (fwd.supervised, wts.normal > 0.0) {
            let len = acc.norm();
            let nn = acc / len;
            let d_acc = -(sup - nn * nn.dot(sup)) * (wts.normal / (len * norms.normal_rays));
            for (i, s) in fwd.samples.iter().enumerate() {
                if let Some(ne) = s.normal {
                    d_w[i] += d_acc.dot(ne.n);
                    d_n[i] += d_acc * s.weight;
                }
            }
        }
        // Backprop through compositing: dL/dσ_k = δ_k (T_{k+1} gw_k − Σ_{i>k} gw_i w_i).
        let mut suffix = 0.0;
        let mut d_sigma = vec![0.0; n];
        for k in (0..n).rev() {
            let s = &fwd.samples[k];
            d_sigma[k] = s.delta * (s.trans_after * d_w[k] - suffix);
            suffix += d_w[k] * s.weight;
        }
        let sparsity_scale = wts.density / norms.samples;
        for (k, s) in fwd.samples.iter().enumerate() {
            let mut ds = d_sigma[k];
            if wts.density > 0.0 {
                ds += sparsity_scale / (s.sigma + wts.density_floor);
            }
            out.push(PointGrad {
                p: s.p,
                d_sigma: ds,
                d_color: d_rgb * s.weight,
            });
            if let Some(ne) = s.normal {
                if d_n[k] != Vec3::ZERO {
                    push_normal_grad(&mut out, s.p, &ne, d_n[k], self.h);
                }
            }
        }
        if let (Some((p, np, q, nq)), true) = (fwd.smooth, wts.smoothness > 0.0) {
            let diff = (np.n - nq.n) * (2.0 * wts.smoothness / norms.smooth_pairs);
            push_normal_grad(&mut out, p, &np, diff, self.h);
            push_normal_grad(&mut out, q, &nq, -diff, self.h);
        }
        out
    }
}

struct Normalizers {
    rays: f64,
    samples: f64,
    normal_rays: f64,
    smooth_pairs: f64,
}

/// Loss terms and, optionally, the gradient with respect to activated
/// voxel values (`[σ, r, g, b]` per voxel).
fn evaluate<S: VoxelSource>(src: &S, batch: &Batch, weights: &LossWeights, config: &TrainConfig, h: f64, grad: Option<&mut [[f64; 4]]>) -> LossReport {
    let ctx = LossContext { weights, config, h };
    let forwards: Vec<RayForward> = batch.rays.par_iter().map(|br| ctx.forward(src, br)).collect();
    let rays = batch.rays.len().max(1) as f64;
    let total_samples: usize = forwards.iter().map(|f| f.samples.len()).sum();
    let normal_rays = forwards.iter().filter(|f| f.supervised.is_some()).count();
    let smooth_pairs = forwards.iter().filter(|f| f.smooth.is_some()).count();

    let mut photo = 0.0;
    let mut log_sum = 0.0;
    let mut orient = 0.0;
    let mut normal_sum = 0.0;
    let mut smooth_sum = 0.0;
    for (f, br) in forwards.iter().zip(&batch.rays) {
        photo += (f.rgb - br.target).norm_squared();
        log_sum += f.samples.iter().map(|s| (s.sigma + weights.density_floor).ln()).sum::<f64>();
        orient += f.orientation;
        if let Some((acc, sup)) = f.supervised {
            normal_sum += 1.0 - acc.normalized().dot(sup);
        }
        if let Some((_, np, _, nq)) = f.smooth {
            smooth_sum += (np.n - nq.n).norm_squared();
        }
    }
    let mut report = LossReport {
        step: 0,
        photo: photo / (3.0 * rays),
        sparsity: if total_samples > 0 { log_sum / total_samples as f64 } else { 0.0 },
        orientation: orient / rays,
        smoothness: if smooth_pairs > 0 { smooth_sum / smooth_pairs as f64 } else { 0.0 },
        normal: if normal_rays > 0 { normal_sum / normal_rays as f64 } else { 0.0 },
        total: 0.0,
        normal_rays,
        smooth_pairs,
    };
    report.total = weights.photo * report.photo
        + weights.density * report.sparsity
        + weights.orientation * report.orientation
        + weights.smoothness * report.smoothness
        + weights.normal * report.normal;

    if let Some(grad) = grad {
        let norms = Normalizers {
            rays,
            samples: total_samples.max(1) as f64,
            normal_rays: normal_rays.max(1) as f64,
            smooth_pairs: smooth_pairs.max(1) as f64,
        };
        let per_ray: Vec<Vec<PointGrad>> = forwards
            .par_iter()
            .zip(&batch.rays)
            .map(|(f, br)| ctx.backward(br, f, &norms))
            .collect();
        // Fixed-order scatter keeps the result independent of thread count.
        let spec = src.spec();
        for pg in per_ray.iter().flatten() {
            if let Some(st) = spec.stencil(pg.p) {
                for k in 0..8 {
                    let g = &mut grad[st.idx[k]];
                    let w = st.w[k];
                    g[0] += w * pg.d_sigma;
                    g[1] += w * pg.d_color.x;
                    g[2] += w * pg.d_color.y;
                    g[3] += w * pg.d_color.z;
                }
            }
        }
    }
    report
}

/// Chains activated-value gradients to raw parameters.
fn raw_gradient(field: &VoxelField, act_grad: &[[f64; 4]]) -> Vec<f64> {
    let mut out = vec![0.0; field.params.len()];
    out.par_chunks_mut(4).enumerate().for_each(|(i, o)| {
        let p = &field.params[4 * i..4 * i + 4];
        let g = act_grad[i];
        o[0] = g[0] * sigmoid(p[0]);
        for c in 1..4 {
            let s = sigmoid(p[c]);
            o[c] = g[c] * s * (1.0 - s);
        }
    });
    out
}

/// Trainer state: the field, Adam moments and per-view supervision normals.
pub struct Trainer<'a> {
    pub field: VoxelField,
    dataset: &'a Dataset,
    weights: LossWeights,
    config: TrainConfig,
    supervision: Vec<Vec<Vec3>>,
    m: Vec<f64>,
    v: Vec<f64>,
    act_grad: Vec<[f64; 4]>,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(field: VoxelField, dataset: &'a Dataset, weights: LossWeights, config: TrainConfig) -> Result<Self, FieldError> {
        weights.validate()?;
        config.validate()?;
        if dataset.views.is_empty() {
            return Err(FieldError::InvalidArgument("dataset has no views".into()));
        }
        let supervision = dataset
            .views
            .iter()
            .enumerate()
            .map(|(i, view)| {
                let normals = oracle::depth_to_normals(view);
                let keep = oracle::interior_mask(&view.mask, view.width(), view.height(), config.silhouette_band);
                let masked: Vec<Vec3> = normals.iter().zip(&keep).map(|(&n, &k)| if k { n } else { Vec3::ZERO }).collect();
                oracle::perturb_supervision(&masked, config.supervision_noise_deg, mix_seed(&[config.seed, 0x5eed, i as u64]))
                    .map_err(|e| FieldError::InvalidArgument(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let n = field.params.len();
        Ok(Trainer {
            act_grad: vec![[0.0; 4]; field.voxel_count()],
            field,
            dataset,
            weights,
            config,
            supervision,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn normal_step(&self) -> f64 {
        default_normal_step(&self.field)
    }

    /// The deterministic ray batch for a given step.
    pub fn batch(&self, step: usize) -> Batch {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, step as u64]));
        let per_view = self.dataset.views[0].rgb.len();
        let total = self.dataset.pixel_count();
        let jitter = default_smooth_jitter(&self.field);
        let picks: Vec<usize> = (0..cfg.rays_per_batch).map(|_| rng.random_range(0..total)).collect();
        let rays = picks
            .into_par_iter()
            .enumerate()
            .map(|(r, pix)| {
                let mut ray_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, step as u64, r as u64, 1]));
                let (vi, i) = (pix / per_view, pix % per_view);
                let view = &self.dataset.views[vi];
                let w = view.width();
                let sup = self.supervision[vi][i];
                BatchRay {
                    ray: view.camera.pixel_ray(i % w, i / w),
                    target: view.rgb_at(i),
                    supervision: (sup != Vec3::ZERO).then_some(sup),
                    offsets: (0..cfg.samples_per_ray)
                        .map(|_| if cfg.stratified { ray_rng.random::<f64>() } else { 0.5 })
                        .collect(),
                    jitter: ball_offset(&mut ray_rng, jitter),
                }
            })
            .collect();
        Batch { rays }
    }

    /// Loss on a batch for the current parameters.
    pub fn loss(&self, batch: &Batch) -> LossReport {
        evaluate(&self.field.activated(), batch, &self.weights, &self.config, self.normal_step(), None)
    }

    /// Loss and gradient with respect to every raw parameter.
    pub fn loss_and_gradient(&self, batch: &Batch) -> (LossReport, Vec<f64>) {
        let mut act_grad = vec![[0.0; 4]; self.field.voxel_count()];
        let report = evaluate(&self.field.activated(), batch, &self.weights, &self.config, self.normal_step(), Some(&mut act_grad));
        (report, raw_gradient(&self.field, &act_grad))
    }

    /// One Adam update on the batch for the current step.
    pub fn train_step(&mut self) -> Result<LossReport, FieldError> {
        let batch = self.batch(self.step);
        self.act_grad.par_iter_mut().for_each(|g| *g = [0.0; 4]);
        let mut report = evaluate(&self.field.activated(), &batch, &self.weights, &self.config, self.normal_step(), Some(&mut self.act_grad));
        report.step = self.step;
        if !report.total.is_finite() {
            return Err(FieldError::Diverged(report));
        }
        let cfg = &self.config;
        let t = (self.step + 1) as i32;
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let (lr, eps) = (cfg.learning_rate, cfg.adam_eps);
        let act_grad = &self.act_grad;
        self.field
            .params
            .par_chunks_mut(4)
            .zip(self.m.par_chunks_mut(4))
            .zip(self.v.par_chunks_mut(4))
            .enumerate()
            .for_each(|(i, ((p, m), v))| {
                let ag = act_grad[i];
                for c in 0..4 {
                    let g = if ag[c] == 0.0 {
                        0.0
                    } else if c == 0 {
                        ag[c] * sigmoid(p[c])
                    } else {
                        let s = sigmoid(p[c]);
                        ag[c] * s * (1.0 - s)
                    };
                    if g == 0.0 && m[c] == 0.0 && v[c] == 0.0 {
                        continue;
                    }
                    m[c] = b1 * m[c] + (1.0 - b1) * g;
                    v[c] = b2 * v[c] + (1.0 - b2) * g * g;
                    let lr = if c == 0 { lr * cfg.density_lr_scale } else { lr };
                    p[c] -= lr * (m[c] / bc1) / ((v[c] / bc2).sqrt() + eps);
                }
            });
        self.step += 1;
        Ok(report)
    }
}

/// Runs `config.steps` updates from `config.initial_field()`; the trace
/// holds the report of every `trace_every`-th step.
pub fn train(dataset: &Dataset, weights: &LossWeights, config: &TrainConfig) -> Result<(VoxelField, Vec<LossReport>), FieldError> {
    train_from(config.initial_field()?, dataset, weights, config)
}

pub fn train_from(
    field: VoxelField,
    dataset: &Dataset,
    weights: &LossWeights,
    config: &TrainConfig,
) -> Result<(VoxelField, Vec<LossReport>), FieldError> {
    let mut trainer = Trainer::new(field, dataset, *weights, config.clone())?;
    let mut trace = Vec::new();
    for step in 0..config.steps {
        let report = trainer.train_step()?;
        if step % config.trace_every == 0 {
            log::debug!("step {step}: total {:.6} photo {:.6}", report.total, report.photo);
            trace.push(report);
        }
    }
    Ok((trainer.field, trace))
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    resolution: usize,
    bounds: Aabb,
    density_activation: String,
    color_activation: String,
    step: usize,
}

const CHECKPOINT_FORMAT: &str = "roomforge-voxel-field-v1";

/// Writes a JSON header line followed by density (N³) then color (N³·3)
/// raw parameters as little-endian f32.
pub fn write_checkpoint(field: &VoxelField, step: usize, path: &Path) -> Result<(), FieldError> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        resolution: field.resolution,
        bounds: field.bounds,
        density_activation: "softplus".into(),
        color_activation: "sigmoid".into(),
        step,
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    for i in 0..field.voxel_count() {
        buf.extend_from_slice(&(field.params[4 * i] as f32).to_le_bytes());
    }
    for i in 0..field.voxel_count() {
        for c in 1..4 {
            buf.extend_from_slice(&(field.params[4 * i + c] as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|source| FieldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(&buf).map_err(|source| FieldError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a checkpoint; returns the field and its recorded step.
pub fn read_checkpoint(path: &Path) -> Result<(VoxelField, usize), FieldError> {
    let bad = |message: String| FieldError::Checkpoint {
        path: path.display().to_string(),
        message,
    };
    let bytes = fs::read(path).map_err(|source| FieldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.density_activation != "softplus" || header.color_activation != "sigmoid" {
        return Err(bad("unsupported format or activations".into()));
    }
    let n = header.resolution.pow(3);
    let body = &bytes[nl + 1..];
    if body.len() != n * 16 {
        return Err(bad(format!("expected {} payload bytes, found {}", n * 16, body.len())));
    }
    let read = |k: usize| f32::from_le_bytes([body[4 * k], body[4 * k + 1], body[4 * k + 2], body[4 * k + 3]]) as f64;
    let mut params = vec![0.0; 4 * n];
    for i in 0..n {
        params[4 * i] = read(i);
        for c in 0..3 {
            params[4 * i + 1 + c] = read(n + 3 * i + c);
        }
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite parameter".into()));
    }
    Ok((VoxelField::from_raw(header.resolution, header.bounds, params)?, header.step))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    /// `(parameter index, analytic, numeric)` for every checked entry.
    pub entries: Vec<(usize, f64, f64)>,
    pub max_relative_error: f64,
}

/// Compares the analytic gradient against central differences of step
/// `eps` on up to `count` random parameters whose analytic magnitude is at
/// least `1e-3` of the largest entry.
pub fn gradient_check(trainer: &mut Trainer<'_>, batch: &Batch, count: usize, eps: f64, seed: u64) -> GradientCheck {
    let (_, grad) = trainer.loss_and_gradient(batch);
    let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let candidates: Vec<usize> = (0..grad.len()).filter(|&i| gmax > 0.0 && grad[i].abs() >= 1e-3 * gmax).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = rand::seq::index::sample(&mut rng, candidates.len(), count.min(candidates.len()));
    let mut entries = Vec::new();
    let mut max_relative_error = 0.0f64;
    for k in picked.iter() {
        let i = candidates[k];
        let orig = trainer.field.params[i];
        trainer.field.params[i] = orig + eps;
        let up = trainer.loss(batch).total;
        trainer.field.params[i] = orig - eps;
        let down = trainer.loss(batch).total;
        trainer.field.params[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-300);
        max_relative_error = max_relative_error.max(rel);
        entries.push((i, grad[i], numeric));
    }
    GradientCheck { entries, max_relative_error }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_camera_ring, CameraPose};
    use crate::oracle::{axis_lights, SdfAsset};

    fn tiny_dataset(size: usize) -> Dataset {
        let asset = SdfAsset::sphere(0.5, Vec3::new(0.8, 0.3, 0.2)).unwrap();
        let cams = generate_camera_ring(3, 3.0, 0.4, Vec3::ZERO, size, 0.6).unwrap();
        Dataset::render(&asset, &cams, &axis_lights(0.5), 1).unwrap()
    }

    fn random_field(res: usize, seed: u64) -> VoxelField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = VoxelField::uniform(res, Aabb::cube(1.0), 1.0, Vec3::splat(0.5)).unwrap();
        for (i, p) in f.params_mut().iter_mut().enumerate() {
            *p = if i % 4 == 0 { rng.random_range(-1.0..4.0) } else { rng.random_range(-2.0..2.0) };
        }
        f
    }

    fn check_config() -> TrainConfig {
        TrainConfig {
            rays_per_batch: 48,
            samples_per_ray: 24,
            resolution: 8,
            normal_weight_floor: 0.0,
            silhouette_band: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn homogeneous_medium_matches_closed_form() {
        let sigma = 1.0;
        let field = VoxelField::uniform(4, Aabb::cube(1.0), sigma, Vec3::splat(0.25)).unwrap();
        let ray = Ray::new(Vec3::new(-3.0, 0.1, 0.2), Vec3::X);
        let exact = 1.0 - (-sigma * 2.0f64).exp();
        let err = |n: usize| (render_ray(&field, &ray, 0.1, 10.0, n).unwrap().opacity - exact).abs();
        assert!(err(256) < 1e-3, "{}", err(256));
        let (e64, e128, e256) = (err(64), err(128), err(256));
        assert!(e128 < e64 && e256 < e128);
        assert!((e64 / e128 - 2.0).abs() < 0.1 && (e128 / e256 - 2.0).abs() < 0.1);
        let r = render_ray(&field, &ray, 0.1, 10.0, 256).unwrap();
        let expected_rgb = 0.25 * r.opacity + (1.0 - r.opacity);
        assert!((r.rgb.x - expected_rgb).abs() < 1e-12);
    }

    #[test]
    fn single_sample_weight() {
        // One stratum over [0.5, 1.5] clipped from a ray starting inside;
        // the midpoint sample at 1.0 gets δ = 0.5.
        let sigma = 4.0;
        let field = VoxelField::uniform(4, Aabb::cube(1.0), sigma, Vec3::new(0.2, 0.4, 0.6)).unwrap();
        let ray = Ray::new(Vec3::new(-1.0, 0.0, 0.0), Vec3::X);
        let r = render_ray(&field, &ray, 0.5, 1.5, 1).unwrap();
        assert_eq!(r.samples.len(), 1);
        assert!((r.samples[0].t - 1.0).abs() < 1e-12 && (r.samples[0].delta - 0.5).abs() < 1e-12);
        let w = 1.0 - (-2.0f64).exp();
        assert!((r.samples[0].weight - 0.8647).abs() < 1e-4);
        assert!((r.opacity - w).abs() < 1e-12);
        assert!((r.rgb.x - (0.2 * w + 1.0 - w)).abs() < 1e-6);
        assert!((r.depth - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rays_missing_the_bounds_are_white() {
        let field = VoxelField::uniform(4, Aabb::cube(1.0), 50.0, Vec3::splat(0.1)).unwrap();
        let r = render_ray(&field, &Ray::new(Vec3::new(-3.0, 2.0, 0.0), Vec3::X), 0.1, 10.0, 32).unwrap();
        assert!(r.samples.is_empty());
        assert_eq!(r.rgb, Vec3::ONE);
        assert_eq!(r.opacity, 0.0);
        assert_eq!(field_sample(&field, Vec3::new(1.5, 0.0, 0.0)).sigma, 0.0);
        assert!(render_ray(&field, &Ray::new(Vec3::ZERO, Vec3::X), 2.0, 1.0, 8).is_err());
        assert!(render_ray(&field, &Ray::new(Vec3::ZERO, Vec3::X), 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn trilinear_reproduces_linear_density() {
        let field = VoxelField::from_fn(8, Aabb::cube(1.0), |p| (2.0 + p.x - 0.5 * p.y + 0.25 * p.z, Vec3::splat(0.5))).unwrap();
        for p in [Vec3::new(0.1, -0.3, 0.6), Vec3::new(-0.8, 0.8, 0.0), Vec3::ZERO] {
            let s = field_sample(&field, p).sigma;
            assert!((s - (2.0 + p.x - 0.5 * p.y + 0.25 * p.z)).abs() < 1e-9, "{s}");
        }
        // Values at voxel centers are exact.
        let c = field.voxel_center(37);
        assert!((field_sample(&field, c).sigma - field.voxel_sigma(37)).abs() < 1e-12);
    }

    #[test]
    fn density_normal_points_outward() {
        let field = VoxelField::from_fn(32, Aabb::cube(1.0), |p| ((8.0 * (0.5 - p.norm())).exp(), Vec3::splat(0.5))).unwrap();
        let h = default_normal_step(&field);
        for dir in [Vec3::X, Vec3::new(1.0, 1.0, 0.3).normalized(), -Vec3::Z] {
            let n = density_normal(&field, dir * 0.5, h).unwrap();
            assert!(n.angle_to(dir).to_degrees() < 5.0, "{dir:?} {}", n.angle_to(dir).to_degrees());
        }
        let flat = VoxelField::uniform(4, Aabb::cube(1.0), 1.0, Vec3::splat(0.5)).unwrap();
        assert!(density_normal(&flat, Vec3::ZERO, 1e-3).is_none());
    }

    #[test]
    fn loss_term_examples() {
        assert!((loss_sparsity(&[0.0, 0.0], 0.01).unwrap() - 0.01f64.ln()).abs() < 1e-12);
        assert!(loss_sparsity(&[], 0.01).is_err());
        let d = Vec3::new(0.0, 0.0, -1.0);
        // Normal facing the camera costs nothing; one facing away costs w.
        assert_eq!(loss_orientation(&[(0.7, Some(-d))], d), 0.0);
        assert!((loss_orientation(&[(0.7, Some(d)), (0.2, None)], d) - 0.7).abs() < 1e-12);
        let tilted = Vec3::new(0.6, 0.0, -0.8);
        assert!((loss_orientation(&[(1.0, Some(tilted))], d) - 0.64).abs() < 1e-12);

        let r = rendered_normal(&[(0.3, Some(Vec3::X)), (0.3, Some(Vec3::Y))]).unwrap();
        assert!((r - Vec3::new(1.0, 1.0, 0.0).normalized()).norm() < 1e-12);
        assert!(rendered_normal(&[(0.4, Some(Vec3::X))]).is_none());

        let l = loss_normal_supervision(&[Some(Vec3::X), Some(Vec3::Y)], &[Vec3::X, Vec3::X], &[true, true]);
        assert!((l.value - 0.5).abs() < 1e-12 && !l.empty_mask);
        let e = loss_normal_supervision(&[Some(Vec3::X)], &[Vec3::X], &[false]);
        assert_eq!(e, SupervisionLoss { value: 0.0, empty_mask: true });
    }

    #[test]
    fn smoothness_is_zero_for_planar_density() {
        let field = VoxelField::from_fn(16, Aabb::cube(1.0), |p| (1.0 + 0.5 * p.x, Vec3::splat(0.5))).unwrap();
        let pts = [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.4, 0.0, 0.1)];
        assert!(loss_smoothness(&field, &pts, 0.02, 3) < 1e-18);
        let sphere = VoxelField::from_fn(16, Aabb::cube(1.0), |p| ((4.0 * (0.5 - p.norm())).exp(), Vec3::splat(0.5))).unwrap();
        assert!(loss_smoothness(&sphere, &pts, 0.3, 3) > 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences_per_term() {
        let ds = tiny_dataset(16);
        let terms: [(&str, fn(&mut LossWeights)); 5] = [
            ("photo", |w| w.photo = 1.0),
            ("sparsity", |w| w.density = 1.0),
            ("orientation", |w| w.orientation = 1.0),
            ("smoothness", |w| w.smoothness = 1.0),
            ("normal", |w| w.normal = 1.0),
        ];
        for (name, set) in terms {
            let mut weights = LossWeights { photo: 0.0, ..LossWeights::photo_only() };
            set(&mut weights);
            let mut trainer = Trainer::new(random_field(8, 11), &ds, weights, check_config()).unwrap();
            let batch = trainer.batch(0);
            let report = trainer.loss(&batch);
            match name {
                "normal" => assert!(report.normal_rays > 0, "{report:?}"),
                "smoothness" => assert!(report.smooth_pairs > 0, "{report:?}"),
                _ => {}
            }
            let check = gradient_check(&mut trainer, &batch, 32, 1e-6, 5);
            assert_eq!(check.entries.len(), 32, "{name}");
            assert!(check.max_relative_error < 1e-4, "{name}: {check:?}");
        }
    }

    #[test]
    fn gradient_of_default_objective_with_weight_floor() {
        let ds = tiny_dataset(16);
        let cfg = TrainConfig { normal_weight_floor: 5e-3, ..check_config() };
        let mut trainer = Trainer::new(random_field(8, 2), &ds, LossWeights::default(), cfg).unwrap();
        let batch = trainer.batch(3);
        let check = gradient_check(&mut trainer, &batch, 32, 1e-6, 9);
        assert!(check.max_relative_error < 1e-4, "{check:?}");
    }

    #[test]
    fn empty_field_is_optimal_for_white_views() {
        let cams = generate_camera_ring(2, 3.0, 0.2, Vec3::ZERO, 8, 0.6).unwrap();
        let views: Vec<_> = cams.into_iter().map(oracle::OracleView::blank).collect();
        let ds = Dataset::new(views, Aabb::cube(0.5), 0, vec![]).unwrap();
        let field = VoxelField::uniform(8, Aabb::cube(1.0), 1e-12, Vec3::splat(0.5)).unwrap();
        let trainer = Trainer::new(field, &ds, LossWeights::photo_only(), check_config()).unwrap();
        let (report, grad) = trainer.loss_and_gradient(&trainer.batch(0));
        assert!(report.photo < 1e-20);
        assert!(grad.iter().all(|g| g.abs() < 1e-10));
    }

    #[test]
    fn training_reduces_photo_loss_and_is_deterministic() {
        let ds = tiny_dataset(24);
        let cfg = TrainConfig {
            steps: 60,
            rays_per_batch: 256,
            samples_per_ray: 32,
            resolution: 16,
            learning_rate: 5e-2,
            trace_every: 10,
            ..TrainConfig::default()
        };
        let (f1, trace) = train(&ds, &LossWeights::default(), &cfg).unwrap();
        assert_eq!(trace.len(), 6);
        assert_eq!(trace[1].step, 10);
        assert!(trace.last().unwrap().photo < 0.5 * trace[0].photo, "{trace:?}");
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (f2, _) = pool.install(|| train(&ds, &LossWeights::default(), &cfg)).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn zero_steps_leave_the_field_untouched() {
        let ds = tiny_dataset(8);
        let cfg = TrainConfig { steps: 0, resolution: 8, ..TrainConfig::default() };
        let (f, trace) = train(&ds, &LossWeights::default(), &cfg).unwrap();
        assert!(trace.is_empty());
        assert_eq!(f, cfg.initial_field().unwrap());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let ds = tiny_dataset(8);
        let f = || VoxelField::uniform(4, Aabb::cube(1.0), 0.1, Vec3::splat(0.5)).unwrap();
        let bad_lr = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(Trainer::new(f(), &ds, LossWeights::default(), bad_lr).is_err());
        let bad_w = LossWeights { smoothness: -1.0, ..LossWeights::default() };
        assert!(Trainer::new(f(), &ds, bad_w, TrainConfig::default()).is_err());
        assert!(VoxelField::uniform(1, Aabb::cube(1.0), 0.1, Vec3::splat(0.5)).is_err());
        assert!(VoxelField::uniform(4, Aabb::cube(1.0), 0.0, Vec3::splat(0.5)).is_err());
        assert!(VoxelField::from_raw(4, Aabb::cube(1.0), vec![0.0; 7]).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = tiny_dataset(8);
        let mut field = random_field(4, 1);
        field.params_mut()[0] = f64::NAN;
        let cfg = TrainConfig { steps: 1, resolution: 4, rays_per_batch: 512, ..TrainConfig::default() };
        let err = train_from(field, &ds, &LossWeights::default(), &cfg).unwrap_err();
        assert!(matches!(err, FieldError::Diverged(_)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.bin");
        let field = random_field(6, 4);
        write_checkpoint(&field, 17, &path).unwrap();
        let (back, step) = read_checkpoint(&path).unwrap();
        assert_eq!(step, 17);
        assert_eq!(back.resolution(), 6);
        for (a, b) in field.params().iter().zip(back.params()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(FieldError::Checkpoint { .. })));
        fs::write(&path, b"garbage").unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn config_file_round_trip_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.toml");
        fs::write(&path, "[train]\nsteps = 10\n[weights]\nnormal = 0.0\n").unwrap();
        let cfg = TrainingFile::load(&path).unwrap();
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.train.rays_per_batch, 4096);
        assert_eq!(cfg.weights.normal, 0.0);
        assert_eq!(cfg.weights.photo, 1.0);
        let back: TrainingFile = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        fs::write(&path, "[train]\nsteps = \"many\"\n").unwrap();
        assert!(matches!(TrainingFile::load(&path), Err(FieldError::Config { .. })));
    }

    #[test]
    fn activations_are_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(softplus_inverse(0.05)) - 0.05).abs() < 1e-12);
        assert!((sigmoid(logit(0.3)) - 0.3).abs() < 1e-12);
        assert_eq!(sigmoid(-1000.0), 0.0);
        let _ = CameraPose::look_at(Vec3::X, Vec3::ZERO, 0.5, 2, 2).unwrap();
    }
}
