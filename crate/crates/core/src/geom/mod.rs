//! Geometry: vectors, quaternions, meshes, signed distance voxelization and
//! point-set sampling.

pub mod bvh;
pub mod mesh;
pub mod points;
pub mod quat;
pub mod sdf;
pub mod vec;

pub use mesh::TriMesh;
pub use points::{fps, kmeans, kmeans_detailed, knn, KMeansResult, KnnGrid, PointSet};
pub use quat::{quat_blend, quat_compose, quat_normalize, RawQuat, UnitQuat};
pub use sdf::{
    interior_centers, sdf_from_mesh, shell_centers, shell_padding, voxel_size_search, MeshSdf,
    SdfGrid,
};
pub use vec::{Mat3, Vec3};
