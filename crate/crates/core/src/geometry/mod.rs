//! Mesh ingestion, unit-sphere normalization and weighted surface sampling.

mod cloud;
mod mesh;
mod normalize;
mod sampling;

pub use cloud::{fmt_real, read_pts, read_seg, write_pts, write_seg, LabeledPointCloud};
pub use mesh::{label_sidecar, read_labels, Point3, TriangleMesh};
pub use normalize::{bbox_center, max_norm, unit_sphere_normalize, CenterMode};
pub use sampling::{
    barycentric, equilaterality_ratio, point_in_triangle, sample_surface, triangle_area, SamplingWeights,
};
