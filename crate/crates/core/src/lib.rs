//! Text prompt → placed 3D mesh asset pipeline.
//!
//! The crate is organized by stage: [`prompt`] builds and ranks text prompts,
//! [`oracle`] renders posed multi-view images of procedural objects,
//! [`field`] fits a voxel radiance field to those views, [`mesh`] turns the
//! field into a colored triangle mesh, [`scene`] places meshes into floor
//! plans and [`pipeline`] runs everything end to end.

pub mod geometry;
pub mod oracle;
pub mod field;
pub mod mesh;
pub mod prompt;
pub mod scene;
pub mod pipeline;

pub use field::{FieldError, LossReport, LossWeights, TrainConfig, VoxelField};
pub use geometry::{Aabb, CameraPose, Mat3, Ray, RayMap, Vec3};
pub use mesh::{ExtractionConfig, MeshError, TriangleMesh};
pub use oracle::{Dataset, DirectionalLight, OracleView, SdfAsset};
pub use pipeline::{PipelineConfig, PipelineError, RunManifest, Stage};
pub use prompt::{PromptRecord, PromptTemplate, Scores, Slot};
pub use scene::{FloorPlan, PlacementSlot, SceneGraph};
