//! Shared fixtures for the benchmarks.

use roomforge::field::VoxelField;
use roomforge::geometry::generate_camera_ring;
use roomforge::oracle::{axis_lights, Dataset, SdfAsset};
use roomforge::{Aabb, Vec3};

/// Soft sphere of radius 0.5 with a red tint.
pub fn sphere_field(resolution: usize) -> VoxelField {
    VoxelField::from_fn(resolution, Aabb::cube(1.0), |p| {
        let sigma = 40.0 / (1.0 + ((p.norm() - 0.5) * 60.0).exp());
        (sigma, Vec3::new(0.8, 0.3, 0.2))
    })
    .expect("valid field")
}

pub fn sphere_dataset(views: usize, size: usize) -> Dataset {
    let asset = SdfAsset::sphere(0.5, Vec3::new(0.8, 0.3, 0.2)).expect("valid asset");
    let cams = generate_camera_ring(views, 4.0, 0.4, Vec3::ZERO, size, 30f64.to_radians()).expect("valid ring");
    Dataset::render(&asset, &cams, &axis_lights(0.5), 0).expect("renders")
}
