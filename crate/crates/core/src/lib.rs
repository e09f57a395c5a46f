//! Procedural trees and forests.
//!
//! An L-system derivation fixes the branching pattern of a tree; template
//! triangle meshes (trunk, branch, sub-branch, leaf) are instanced along the
//! resulting skeleton with randomized attachment transforms; forests place
//! trees at locations drawn from an inhomogeneous Poisson process.
//!
//! ```
//! use treesim::{build_tree, MeshLibrary, TreeParams};
//!
//! let params = TreeParams { branch_count: 8, seed: 7, ..Default::default() };
//! let tree = build_tree(&params, &MeshLibrary::builtin()).unwrap();
//! assert_eq!(tree.skeleton.count_at_depth(1), 8);
//! ```

pub mod forest;
pub mod geometry;
pub mod ipp;
pub mod library;
pub mod lsystem;
pub mod rng;
pub mod stl;
pub mod transform;
pub mod tree;

pub use forest::{
    compose_forest, export_scene, regenerate_from_manifest, scene_stats, ExportMode, ExportOptions, Scene,
    SceneConfig, SceneManifest,
};
pub use ipp::{integrate_intensity, min_distance_filter, sample_homogeneous, sample_ipp_thinning, IntensityField, PointPattern, Region};
pub use library::MeshLibrary;
pub use lsystem::{count_branch_symbols, interpret_turtle, parse_lsystem, rewrite, DerivationString, LSystem, Skeleton};
pub use rng::SeedStream;
pub use stl::{mesh_stats, read_stl, recompute_normals, triangle_centroid, write_stl, StlFormat, Triangle, TriangleMesh};
pub use transform::{apply_to_mesh, compose, random_attachment_transform, AngleJitterParams, RigidTransform};
pub use tree::{build_tree, Stage, TreeModel, TreeParams};
