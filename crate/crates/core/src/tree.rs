//! Staged tree assembly: skeleton, trunk and branches, sub-branches, leaves.
//!
//! The trunk template is scaled to the trunk height. First-level branches are
//! `depth_scale_decay · trunk_height` long, and each deeper level is shorter
//! by another factor of `depth_scale_decay`. Every non-trunk node gets a
//! random attachment transform. Its rotation and scale carry over to the
//! node's descendants, so children stay on their parent's axis.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::align_z_to;
use crate::library::{MeshLibrary, Role, Template};
use crate::lsystem::{
    child_direction, interpret_turtle, synthesize_derivation, AzimuthPolicy, Skeleton, SkeletonNode, TrunkSpec,
    TurtleConfig, TurtleError,
};
use crate::rng::{streams, SeedStream};
use crate::stl::{triangle_centroid, Triangle, TriangleMesh};
use crate::transform::{apply_to_mesh, random_attachment_transform, AngleJitterParams, RigidTransform};

/// Leaves start this far along their host axis and run to its tip.
pub const LEAF_STATION_START: f64 = 0.30;
/// Tilt of a leaf off its host axis, degrees.
pub const LEAF_PITCH: f64 = 50.0;
/// Leaf length relative to its host branch.
pub const LEAF_LENGTH_RATIO: f64 = 0.3;
/// Azimuth step between consecutive leaves on one host, degrees.
pub const GOLDEN_ANGLE: f64 = 137.507_764_050_037_85;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid tree parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Turtle(#[from] TurtleError),
    #[error("{0} template is empty")]
    EmptyTemplate(Role),
}

fn default_pitch() -> f64 {
    40.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub branch_count: usize,
    #[serde(default)]
    pub subbranches_per_branch: usize,
    #[serde(default)]
    pub leaves_per_subbranch: usize,
    pub trunk_height: f64,
    #[serde(default)]
    pub jitter: AngleJitterParams,
    pub depth_scale_decay: f64,
    /// Tilt of each branch off its parent axis, degrees.
    #[serde(default = "default_pitch")]
    pub branch_pitch: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            branch_count: 8,
            subbranches_per_branch: 0,
            leaves_per_subbranch: 0,
            trunk_height: 10.0,
            jitter: AngleJitterParams::default(),
            depth_scale_decay: 0.5,
            branch_pitch: default_pitch(),
            seed: 0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        let bad = |m: &str| Err(TreeError::InvalidParams(m.to_string()));
        if self.branch_count < 1 {
            return bad("branch_count must be at least 1");
        }
        if !(self.trunk_height.is_finite() && self.trunk_height > 0.0) {
            return bad("trunk_height must be positive");
        }
        if !(self.depth_scale_decay > 0.0 && self.depth_scale_decay <= 1.0) {
            return bad("depth_scale_decay must lie in (0, 1]");
        }
        if !(0.0..=180.0).contains(&self.branch_pitch) {
            return bad("branch_pitch must lie in [0, 180]");
        }
        if !self.jitter.is_valid() {
            return bad("jitter ranges must be non-negative with 0 < scale min <= max");
        }
        Ok(())
    }

    /// Hosts that carry leaves: sub-branches, or branches when there are none.
    pub fn leaf_host_depth(&self) -> u32 {
        if self.subbranches_per_branch == 0 {
            1
        } else {
            2
        }
    }

    pub fn leaf_count(&self) -> usize {
        let hosts = if self.subbranches_per_branch == 0 {
            self.branch_count
        } else {
            self.branch_count * self.subbranches_per_branch
        };
        hosts * self.leaves_per_subbranch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Skeleton,
    Branches,
    Subbranches,
    Leaves,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Skeleton, Stage::Branches, Stage::Subbranches, Stage::Leaves];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Skeleton => "skeleton",
            Stage::Branches => "branches",
            Stage::Subbranches => "subbranches",
            Stage::Leaves => "leaves",
        })
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| format!("unknown stage {s:?} (expected skeleton, branches, subbranches or leaves)"))
    }
}

/// Triangle counts at the end of each mesh stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageCounts {
    pub trunk: usize,
    pub branches: usize,
    pub subbranches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub skeleton: Skeleton,
    /// Trunk, branches and sub-branches, in that order.
    pub mesh: TriangleMesh,
    pub leaf_mesh: TriangleMesh,
    /// One per leaf triangle, in order.
    pub leaf_centroids: Vec<Point3<f64>>,
    pub params: TreeParams,
    pub stage_counts: StageCounts,
}

impl TreeModel {
    /// The geometry a stage adds up to. The skeleton stage is a stick figure.
    pub fn stage_mesh(&self, stage: Stage) -> TriangleMesh {
        let name = format!("tree_{stage}");
        match stage {
            Stage::Skeleton => {
                let mut m = skeleton_mesh(&self.skeleton, 0.01 * self.params.trunk_height);
                m.name = name;
                m
            }
            Stage::Branches => TriangleMesh::new(name, self.mesh.triangles[..self.stage_counts.branches].to_vec()),
            Stage::Subbranches => TriangleMesh::new(name, self.mesh.triangles.clone()),
            Stage::Leaves => {
                let mut m = TriangleMesh::new(name, self.mesh.triangles.clone());
                m.extend_from(&self.leaf_mesh);
                m
            }
        }
    }

    /// Wood and leaves together.
    pub fn full_mesh(&self) -> TriangleMesh {
        self.stage_mesh(Stage::Leaves)
    }

    pub fn triangle_count(&self) -> usize {
        self.mesh.len() + self.leaf_mesh.len()
    }
}

/// Builds the skeleton: `branch_count` first-level nodes, each with
/// `subbranches_per_branch` children, with jittered attachment frames.
pub fn build_skeleton(params: &TreeParams) -> Result<Skeleton, TreeError> {
    params.validate()?;
    let derivation = synthesize_derivation(params.branch_count, params.subbranches_per_branch);
    let cfg = TurtleConfig {
        step_length: params.trunk_height * params.depth_scale_decay,
        yaw_angle: None,
        branch_pitch: params.branch_pitch,
        azimuth_policy: AzimuthPolicy::UniformSpacing,
        jitter_range: 0.0,
        length_decay: params.depth_scale_decay,
    };
    let trunk = TrunkSpec::new(params.trunk_height, Point3::origin());
    let mut rng = SeedStream::with_stream(params.seed, streams::SKELETON);
    let nominal = interpret_turtle(&derivation, &cfg, &trunk, &mut rng)?;
    Ok(perturb_skeleton(&nominal, &params.jitter, &mut rng))
}

/// Applies a random attachment transform to every non-trunk node and carries
/// each node's rotation and scale over to its descendants.
pub fn perturb_skeleton(nominal: &Skeleton, jitter: &AngleJitterParams, rng: &mut SeedStream) -> Skeleton {
    let n = nominal.nodes.len();
    let mut rotation = vec![Rotation3::identity(); n];
    let mut scale = vec![1.0; n];
    let mut nodes: Vec<SkeletonNode> = Vec::with_capacity(n);
    nodes.push(nominal.nodes[0].clone());
    for (i, node) in nominal.nodes.iter().enumerate().skip(1) {
        let p = node.parent.expect("non-trunk node has a parent");
        let parent = &nodes[p];
        let attachment = parent.attachment + parent.direction * (node.station * parent.length);
        let direction = rotation[p] * node.direction;
        let t = random_attachment_transform(&attachment, &direction, jitter, rng);
        rotation[i] = t.rotation * align_z_to(&direction).inverse() * rotation[p];
        scale[i] = scale[p] * t.scale;
        nodes.push(SkeletonNode {
            attachment,
            direction: (t.rotation * Vector3::z()).normalize(),
            length: node.length * scale[i],
            ..node.clone()
        });
    }
    Skeleton { nodes }
}

/// Transform that places `template` along `node`.
pub fn node_transform(node: &SkeletonNode, template: &Template) -> RigidTransform {
    RigidTransform::new(
        align_z_to(&node.direction),
        node.attachment.coords,
        node.length / template.axis_extent,
    )
}

fn check_template(lib: &MeshLibrary, role: Role) -> Result<&Template, TreeError> {
    let t = lib.get(role);
    if t.is_empty() {
        Err(TreeError::EmptyTemplate(role))
    } else {
        Ok(t)
    }
}

/// Trunk plus one branch instance per first-level node.
pub fn attach_branches(skeleton: &Skeleton, lib: &MeshLibrary, _params: &TreeParams) -> Result<TriangleMesh, TreeError> {
    let trunk = check_template(lib, Role::Trunk)?;
    let branch = check_template(lib, Role::Branch)?;
    let mut mesh = apply_to_mesh(&node_transform(skeleton.trunk(), trunk), &trunk.mesh);
    mesh.name = "tree".to_string();
    for (_, node) in skeleton.nodes_at_depth(1) {
        mesh.extend_from(&apply_to_mesh(&node_transform(node, branch), &branch.mesh));
    }
    Ok(mesh)
}

/// Appends one sub-branch instance per node deeper than the first level.
pub fn attach_subbranches(
    skeleton: &Skeleton,
    mesh: &TriangleMesh,
    lib: &MeshLibrary,
    params: &TreeParams,
) -> Result<TriangleMesh, TreeError> {
    let mut out = mesh.clone();
    if params.subbranches_per_branch == 0 && skeleton.max_depth() < 2 {
        return Ok(out);
    }
    let sub = check_template(lib, Role::SubBranch)?;
    for node in skeleton.nodes.iter().filter(|n| n.depth >= 2) {
        out.extend_from(&apply_to_mesh(&node_transform(node, sub), &sub.mesh));
    }
    Ok(out)
}

/// Leaf instances along the distal part of every host axis, with the
/// centroid of every leaf triangle.
pub fn attach_leaves(
    skeleton: &Skeleton,
    lib: &MeshLibrary,
    params: &TreeParams,
) -> Result<(TriangleMesh, Vec<Point3<f64>>), TreeError> {
    let mut leaves = TriangleMesh::new("leaves", Vec::new());
    let m = params.leaves_per_subbranch;
    if m == 0 {
        return Ok((leaves, Vec::new()));
    }
    let leaf = check_template(lib, Role::Leaf)?;
    let mut rng = SeedStream::with_stream(params.seed, streams::LEAVES);
    for (_, host) in skeleton.nodes_at_depth(params.leaf_host_depth()) {
        for j in 0..m {
            let station = LEAF_STATION_START + (1.0 - LEAF_STATION_START) * (j as f64 + 0.5) / m as f64;
            let point = host.attachment + host.direction * (station * host.length);
            let nominal = child_direction(&host.direction, LEAF_PITCH, j as f64 * GOLDEN_ANGLE);
            let t = random_attachment_transform(&point, &nominal, &params.jitter, &mut rng);
            let placed = RigidTransform::new(
                t.rotation,
                t.translation,
                t.scale * LEAF_LENGTH_RATIO * host.length / leaf.axis_extent,
            );
            leaves.extend_from(&apply_to_mesh(&placed, &leaf.mesh));
        }
    }
    let centroids = leaves.triangles.iter().map(triangle_centroid).collect();
    Ok((leaves, centroids))
}

pub fn build_tree(params: &TreeParams, lib: &MeshLibrary) -> Result<TreeModel, TreeError> {
    let skeleton = build_skeleton(params)?;
    let branches = attach_branches(&skeleton, lib, params)?;
    let with_subs = attach_subbranches(&skeleton, &branches, lib, params)?;
    let (leaf_mesh, leaf_centroids) = attach_leaves(&skeleton, lib, params)?;
    let stage_counts = StageCounts {
        trunk: lib.trunk.len(),
        branches: branches.len(),
        subbranches: with_subs.len(),
    };
    Ok(TreeModel {
        skeleton,
        mesh: with_subs,
        leaf_mesh,
        leaf_centroids,
        params: params.clone(),
        stage_counts,
    })
}

/// `x,y,z` header plus one centroid per line, shortest round-trip decimals.
pub fn leaf_centroids_csv(centroids: &[Point3<f64>]) -> String {
    use std::fmt::Write;
    let mut s = String::from("x,y,z\n");
    for c in centroids {
        let _ = writeln!(s, "{},{},{}", c.x, c.y, c.z);
    }
    s
}

/// Stick figure of a skeleton: one triangular prism per node.
pub fn skeleton_mesh(skeleton: &Skeleton, radius: f64) -> TriangleMesh {
    let mut tris = Vec::with_capacity(8 * skeleton.nodes.len());
    for node in &skeleton.nodes {
        let r = radius * (node.length / skeleton.trunk().length).sqrt();
        let (e1, e2) = crate::geometry::perpendicular_frame(&node.direction);
        let corner = |k: usize, at: Point3<f64>| {
            let (s, c) = (std::f64::consts::TAU * k as f64 / 3.0).sin_cos();
            at + (e1 * c + e2 * s) * r
        };
        let base = node.attachment;
        let tip = node.tip();
        let lo: Vec<_> = (0..3).map(|k| corner(k, base)).collect();
        let hi: Vec<_> = (0..3).map(|k| corner(k, tip)).collect();
        for k in 0..3 {
            let n = (k + 1) % 3;
            tris.push(Triangle::from_vertices(lo[k], lo[n], hi[n]));
            tris.push(Triangle::from_vertices(lo[k], hi[n], hi[k]));
        }
        tris.push(Triangle::from_vertices(lo[0], lo[2], lo[1]));
        tris.push(Triangle::from_vertices(hi[0], hi[1], hi[2]));
    }
    TriangleMesh::new("skeleton", tris)
}
