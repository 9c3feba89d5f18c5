//! Vectors, rotations, pinhole cameras and rays shared by every stage.
//!
//! Conventions: right-handed world frame with +z up. A camera looks down its
//! local −z axis with +y up and +x right in the image. Pixel centers sit at
//! half-integer coordinates, image row 0 is the top row.

use std::fs;
use std::ops::{Add, AddAssign, Div, Index, Mul, MulAssign, Neg, Sub, SubAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);
    pub const ONE: Vec3 = Vec3::new(1.0, 1.0, 1.0);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub const fn splat(v: f64) -> Self {
        Vec3::new(v, v, v)
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction; the zero vector maps to itself.
    #[inline]
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            self
        }
    }

    #[inline]
    pub fn mul_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    #[inline]
    pub fn min_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn max_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline]
    pub fn abs(self) -> Vec3 {
        Vec3::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn min_component(self) -> f64 {
        self.x.min(self.y).min(self.z)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Angle between two vectors in radians, robust near 0 and π.
    pub fn angle_to(self, o: Vec3) -> f64 {
        self.cross(o).norm().atan2(self.dot(o))
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl MulAssign<f64> for Vec3 {
    #[inline]
    fn mul_assign(&mut self, s: f64) {
        *self = *self * s;
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn from_cols(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3 {
            rows: [[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]],
        }
    }

    pub fn from_row_major(v: [f64; 9]) -> Mat3 {
        Mat3 {
            rows: [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]],
        }
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let r = &self.rows;
        [r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2]]
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.rows[0][j], self.rows[1][j], self.rows[2][j])
    }

    pub fn rotation_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3 {
            rows: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn rotation_x(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3 {
            rows: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        }
    }

    pub fn rotation_y(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3 {
            rows: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        }
    }

    /// Rodrigues rotation about a unit axis.
    pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3 {
            rows: [
                [t * a.x * a.x + c, t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y],
                [t * a.x * a.y + s * a.z, t * a.y * a.y + c, t * a.y * a.z - s * a.x],
                [t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c],
            ],
        }
    }

    pub fn transpose(&self) -> Mat3 {
        let r = &self.rows;
        Mat3 {
            rows: [[r[0][0], r[1][0], r[2][0]], [r[0][1], r[1][1], r[2][1]], [r[0][2], r[1][2], r[2][2]]],
        }
    }

    pub fn determinant(&self) -> f64 {
        let r = &self.rows;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    /// Largest absolute deviation of RᵀR from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let p = self.transpose() * *self;
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((p.rows[i][j] - target).abs());
            }
        }
        err
    }

    pub fn is_rotation(&self, tol: f64) -> bool {
        self.orthonormality_error() <= tol && (self.determinant() - 1.0).abs() <= tol
    }
}

impl Mul<Vec3> for Mat3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut rows = [[0.0; 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.rows[i][k] * o.rows[k][j]).sum();
            }
        }
        Mat3 { rows }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing the direction.
    pub fn new(origin: Vec3, direction: Vec3) -> Ray {
        Ray {
            origin,
            direction: direction.normalized(),
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Result<Aabb, GeometryError> {
        if min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(GeometryError::InvalidArgument(format!(
                "aabb min {min:?} exceeds max {max:?}"
            )));
        }
        Ok(Aabb { min, max })
    }

    pub fn cube(half: f64) -> Aabb {
        Aabb {
            min: Vec3::splat(-half),
            max: Vec3::splat(half),
        }
    }

    /// An inverted box that any `grow` call replaces.
    pub fn empty() -> Aabb {
        Aabb {
            min: Vec3::splat(f64::INFINITY),
            max: Vec3::splat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<I: IntoIterator<Item = Vec3>>(points: I) -> Aabb {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: Vec3) {
        self.min = self.min.min_elem(p);
        self.max = self.max.max_elem(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: self.min.min_elem(o.min),
            max: self.max.max_elem(o.max),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Whether `o` lies inside `self` up to `tol`.
    pub fn contains_box(&self, o: &Aabb, tol: f64) -> bool {
        o.min.x >= self.min.x - tol
            && o.min.y >= self.min.y - tol
            && o.min.z >= self.min.z - tol
            && o.max.x <= self.max.x + tol
            && o.max.y <= self.max.y + tol
            && o.max.z <= self.max.z + tol
    }

    /// True when the interiors overlap (touching faces do not count).
    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x < o.max.x
            && o.min.x < self.max.x
            && self.min.y < o.max.y
            && o.min.y < self.max.y
            && self.min.z < o.max.z
            && o.min.z < self.max.z
    }

    /// Slab test. Returns the parametric interval `[t_enter, t_exit]` of the
    /// ray inside the box, clipped to `t >= 0`.
    pub fn intersect_ray(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut t0: f64 = 0.0;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            let o = ray.origin[axis];
            let d = ray.direction[axis];
            let (lo, hi) = (self.min[axis], self.max[axis]);
            if d.abs() < 1e-300 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut a, mut b) = ((lo - o) * inv, (hi - o) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }
}

/// Pinhole camera. `rotation` maps camera-frame vectors to world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub rotation: Mat3,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    pub fn new(position: Vec3, rotation: Mat3, fov_y: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let cam = CameraPose {
            position,
            rotation,
            fov_y,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(GeometryError::InvalidArgument(format!("fov_y {} outside (0, pi)", self.fov_y)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::InvalidArgument("camera dimensions must be >= 1".into()));
        }
        if !self.rotation.is_rotation(1e-6) {
            return Err(GeometryError::InvalidArgument("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    /// Camera at `position` looking at `target` with world up +z. Falls back
    /// to +y as up when the view direction is vertical.
    pub fn look_at(position: Vec3, target: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let back = (position - target).normalized();
        if back.norm_squared() == 0.0 {
            return Err(GeometryError::InvalidArgument("camera position equals look-at target".into()));
        }
        let mut right = Vec3::Z.cross(back);
        if right.norm() < 1e-9 {
            right = Vec3::Y.cross(back);
        }
        let right = right.normalized();
        let up = back.cross(right);
        CameraPose::new(position, Mat3::from_cols(right, up, back), fov_y, width, height)
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y).tan()
    }

    /// Camera-frame direction (not normalized, z = −1) through pixel (u, v),
    /// where integer `u`, `v` address pixel corners.
    #[inline]
    pub fn camera_dir_at(&self, u: f64, v: f64) -> Vec3 {
        let f = self.focal_px();
        Vec3::new(
            (u - 0.5 * self.width as f64) / f,
            -(v - 0.5 * self.height as f64) / f,
            -1.0,
        )
    }

    /// World-frame ray through the center of pixel (col, row).
    #[inline]
    pub fn pixel_ray(&self, col: usize, row: usize) -> Ray {
        let d = self.camera_dir_at(col as f64 + 0.5, row as f64 + 0.5);
        Ray::new(self.position, self.rotation * d)
    }

    pub fn forward(&self) -> Vec3 {
        -self.rotation.col(2)
    }

    /// World point → camera frame.
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.position)
    }

    /// Projects a world point to continuous pixel coordinates `(u, v)` and
    /// its camera-space depth along the optical axis. `None` behind the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z >= -1e-12 {
            return None;
        }
        let depth = -c.z;
        let f = self.focal_px();
        let u = 0.5 * self.width as f64 + f * c.x / depth;
        let v = 0.5 * self.height as f64 - f * c.y / depth;
        Some((u, v, depth))
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Per-pixel ray origins and unit directions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RayMap {
    pub width: usize,
    pub height: usize,
    pub origins: Vec<Vec3>,
    pub directions: Vec<Vec3>,
}

impl RayMap {
    pub fn ray(&self, col: usize, row: usize) -> Ray {
        let i = row * self.width + col;
        Ray {
            origin: self.origins[i],
            direction: self.directions[i],
        }
    }
}

/// Cameras evenly spaced in azimuth on a horizontal circle around `look_at`.
/// Azimuth 0 lies on +x; azimuth increases counter-clockwise seen from +z.
pub fn generate_camera_ring(
    count: usize,
    radius: f64,
    elevation: f64,
    look_at: Vec3,
    image_size: usize,
    fov_y: f64,
) -> Result<Vec<CameraPose>, GeometryError> {
    if count == 0 {
        return Err(GeometryError::InvalidArgument("camera count must be >= 1".into()));
    }
    if radius <= 0.0 || !radius.is_finite() {
        return Err(GeometryError::InvalidArgument(format!("ring radius {radius} must be > 0")));
    }
    (0..count)
        .map(|i| {
            let azimuth = std::f64::consts::TAU * i as f64 / count as f64;
            let offset = Vec3::new(
                radius * elevation.cos() * azimuth.cos(),
                radius * elevation.cos() * azimuth.sin(),
                radius * elevation.sin(),
            );
            CameraPose::look_at(look_at + offset, look_at, fov_y, image_size, image_size)
        })
        .collect()
}

/// World-frame rays through every pixel center.
pub fn camera_rays(camera: &CameraPose) -> RayMap {
    let n = camera.pixel_count();
    let mut origins = Vec::with_capacity(n);
    let mut directions = Vec::with_capacity(n);
    for row in 0..camera.height {
        for col in 0..camera.width {
            let r = camera.pixel_ray(col, row);
            origins.push(r.origin);
            directions.push(r.direction);
        }
    }
    RayMap {
        width: camera.width,
        height: camera.height,
        origins,
        directions,
    }
}

/// `camera_rays(camera)` expressed in the frame of `reference`.
pub fn compute_raymap(camera: &CameraPose, reference: &CameraPose) -> RayMap {
    let world = camera_rays(camera);
    let inv = reference.rotation.transpose();
    RayMap {
        width: world.width,
        height: world.height,
        origins: world.origins.iter().map(|&o| inv * (o - reference.position)).collect(),
        directions: world.directions.iter().map(|&d| (inv * d).normalized()).collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraRecord {
    position: [f64; 3],
    rotation: [f64; 9],
    fov_y: f64,
    width: usize,
    height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraList {
    cameras: Vec<CameraRecord>,
}

pub fn cameras_to_json(cameras: &[CameraPose]) -> String {
    let list = CameraList {
        cameras: cameras
            .iter()
            .map(|c| CameraRecord {
                position: c.position.to_array(),
                rotation: c.rotation.to_row_major(),
                fov_y: c.fov_y,
                width: c.width,
                height: c.height,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&list).expect("camera list serializes")
}

pub fn cameras_from_json(text: &str) -> Result<Vec<CameraPose>, String> {
    let list: CameraList = serde_json::from_str(text).map_err(|e| e.to_string())?;
    list.cameras
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            CameraPose::new(r.position.into(), Mat3::from_row_major(r.rotation), r.fov_y, r.width, r.height)
                .map_err(|e| format!("cameras[{i}]: {e}"))
        })
        .collect()
}

pub fn write_cameras(path: &Path, cameras: &[CameraPose]) -> Result<(), GeometryError> {
    fs::write(path, cameras_to_json(cameras)).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraPose>, GeometryError> {
    let text = fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    cameras_from_json(&text).map_err(|message| GeometryError::Parse {
        path: path.display().to_string(),
        message,
    })
}
