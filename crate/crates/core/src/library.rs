//! Template meshes for the four tree parts and the JSON manifest that points
//! at them.
//!
//! Every template lives in its own local frame: the attachment base at the
//! origin and the growth axis along `+Z`. A manifest declares, per role, the
//! STL path (relative to the manifest) and the origin and axis of that frame
//! in file coordinates; loading maps each mesh into the local frame.
//!
//! ```json
//! {
//!   "trunk":      { "path": "trunk.stl",      "origin": [0, 0, 0], "axis": [0, 0, 1] },
//!   "branch":     { "path": "branch.stl",     "origin": [0, 0, 0], "axis": [0, 0, 1] },
//!   "sub_branch": { "path": "sub_branch.stl", "origin": [0, 0, 0], "axis": [0, 0, 1] },
//!   "leaf":       { "path": "leaf.stl",       "origin": [0, 0, 0], "axis": [0, 0, 1] }
//! }
//! ```

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::align_z_to;
use crate::stl::{self, StlError, StlFormat, Triangle, TriangleMesh};
use crate::transform::{apply_to_mesh, RigidTransform};

pub const MANIFEST_FILE: &str = "library.json";

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid library manifest: {source}")]
    Manifest {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{role} template: {source}")]
    Stl {
        role: Role,
        #[source]
        source: StlError,
    },
    #[error("{0} template is empty")]
    EmptyTemplate(Role),
    #[error("{0} template has no extent along its growth axis")]
    ZeroExtent(Role),
    #[error("{0} template axis must be a non-zero finite vector")]
    InvalidAxis(Role),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Trunk,
    Branch,
    SubBranch,
    Leaf,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Trunk, Role::Branch, Role::SubBranch, Role::Leaf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Trunk => "trunk",
            Role::Branch => "branch",
            Role::SubBranch => "sub_branch",
            Role::Leaf => "leaf",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A mesh in its local frame plus its length along `+Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub mesh: TriangleMesh,
    /// Largest `z` over the vertices.
    pub axis_extent: f64,
}

impl Template {
    pub fn new(role: Role, mesh: TriangleMesh) -> Result<Self, LibraryError> {
        if mesh.is_empty() {
            return Err(LibraryError::EmptyTemplate(role));
        }
        mesh.check_finite().map_err(|source| LibraryError::Stl { role, source })?;
        let axis_extent = mesh.vertices().map(|v| v.z).fold(f64::NEG_INFINITY, f64::max);
        if axis_extent.is_nan() || axis_extent <= 0.0 {
            return Err(LibraryError::ZeroExtent(role));
        }
        Ok(Self { mesh, axis_extent })
    }

    pub fn len(&self) -> usize {
        self.mesh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.is_empty()
    }

    /// Vertices on the base plane `z = 0`.
    pub fn base_vertices(&self) -> impl Iterator<Item = &Point3<f64>> {
        self.mesh.vertices().filter(|v| v.z.abs() <= 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshLibrary {
    pub trunk: Template,
    pub branch: Template,
    pub sub_branch: Template,
    pub leaf: Template,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateEntry {
    pub path: PathBuf,
    #[serde(default = "origin_default")]
    pub origin: [f64; 3],
    #[serde(default = "axis_default")]
    pub axis: [f64; 3],
}

fn origin_default() -> [f64; 3] {
    [0.0, 0.0, 0.0]
}

fn axis_default() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryManifest {
    pub trunk: TemplateEntry,
    pub branch: TemplateEntry,
    pub sub_branch: TemplateEntry,
    pub leaf: TemplateEntry,
}

impl LibraryManifest {
    pub fn entry(&self, role: Role) -> &TemplateEntry {
        match role {
            Role::Trunk => &self.trunk,
            Role::Branch => &self.branch,
            Role::SubBranch => &self.sub_branch,
            Role::Leaf => &self.leaf,
        }
    }
}

fn to_local_frame(role: Role, mesh: &TriangleMesh, entry: &TemplateEntry) -> Result<TriangleMesh, LibraryError> {
    let axis = Vector3::from(entry.axis);
    let norm = axis.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(LibraryError::InvalidAxis(role));
    }
    let rotation = align_z_to(&(axis / norm)).inverse();
    let origin = Vector3::from(entry.origin);
    let to_local = RigidTransform::new(rotation, -(rotation * origin), 1.0);
    Ok(apply_to_mesh(&to_local, mesh))
}

impl MeshLibrary {
    pub fn get(&self, role: Role) -> &Template {
        match role {
            Role::Trunk => &self.trunk,
            Role::Branch => &self.branch,
            Role::SubBranch => &self.sub_branch,
            Role::Leaf => &self.leaf,
        }
    }

    /// Loads a library from a manifest file.
    pub fn load(manifest_path: &Path) -> Result<Self, LibraryError> {
        let text = fs::read_to_string(manifest_path).map_err(|source| LibraryError::Io {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let manifest: LibraryManifest = serde_json::from_str(&text).map_err(|source| LibraryError::Manifest {
            path: manifest_path.display().to_string(),
            source,
        })?;
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let load = |role: Role| -> Result<Template, LibraryError> {
            let entry = manifest.entry(role);
            let (mesh, _) =
                stl::read_stl_file(&dir.join(&entry.path)).map_err(|source| LibraryError::Stl { role, source })?;
            Template::new(role, to_local_frame(role, &mesh, entry)?)
        };
        Ok(Self {
            trunk: load(Role::Trunk)?,
            branch: load(Role::Branch)?,
            sub_branch: load(Role::SubBranch)?,
            leaf: load(Role::Leaf)?,
        })
    }

    /// Writes the four templates as binary STL plus `library.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf, LibraryError> {
        fs::create_dir_all(dir).map_err(|source| LibraryError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let entry = |role: Role| TemplateEntry {
            path: PathBuf::from(format!("{role}.stl")),
            origin: origin_default(),
            axis: axis_default(),
        };
        for role in Role::ALL {
            stl::write_stl_file(&self.get(role).mesh, StlFormat::Binary, &dir.join(&entry(role).path))
                .map_err(|source| LibraryError::Stl { role, source })?;
        }
        let manifest = LibraryManifest {
            trunk: entry(Role::Trunk),
            branch: entry(Role::Branch),
            sub_branch: entry(Role::SubBranch),
            leaf: entry(Role::Leaf),
        };
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|source| LibraryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(path)
    }

    /// Procedurally built templates: a tapered trunk, gently bent tapered
    /// branch and sub-branch tubes, and a two-triangle leaf blade. All have
    /// unit length along `+Z`.
    pub fn builtin() -> Self {
        let trunk = tube(
            "trunk",
            |t| Point3::new(0.0, 0.0, t),
            |t| 0.06 - 0.035 * t,
            12,
            6,
        );
        let branch = tube(
            "branch",
            |t| Point3::new(0.03 * t * t, 0.0, t),
            |t| 0.035 * (1.0 - 0.7 * t),
            8,
            8,
        );
        let sub_branch = tube(
            "sub_branch",
            |t| Point3::new(0.05 * t * t, 0.0, t),
            |t| 0.03 * (1.0 - 0.75 * t),
            6,
            6,
        );
        Self {
            trunk: Template::new(Role::Trunk, trunk).expect("builtin trunk"),
            branch: Template::new(Role::Branch, branch).expect("builtin branch"),
            sub_branch: Template::new(Role::SubBranch, sub_branch).expect("builtin sub-branch"),
            leaf: Template::new(Role::Leaf, leaf_blade()).expect("builtin leaf"),
        }
    }
}

/// Capped tube along `centerline(t)`, `t ∈ [0, 1]`, with horizontal rings.
/// The base ring is centred on `centerline(0)`.
fn tube(
    name: &str,
    centerline: impl Fn(f64) -> Point3<f64>,
    radius: impl Fn(f64) -> f64,
    segments: usize,
    rings: usize,
) -> TriangleMesh {
    let ring = |j: usize| -> Vec<Point3<f64>> {
        let t = j as f64 / rings as f64;
        let c = centerline(t);
        let r = radius(t);
        (0..segments)
            .map(|i| {
                let (s, co) = (TAU * i as f64 / segments as f64).sin_cos();
                Point3::new(c.x + r * co, c.y + r * s, c.z)
            })
            .collect()
    };
    let rings_pts: Vec<Vec<Point3<f64>>> = (0..=rings).map(ring).collect();
    let mut tris = Vec::new();
    for j in 0..rings {
        let (lo, hi) = (&rings_pts[j], &rings_pts[j + 1]);
        for i in 0..segments {
            let k = (i + 1) % segments;
            tris.push(Triangle::from_vertices(lo[i], lo[k], hi[k]));
            tris.push(Triangle::from_vertices(lo[i], hi[k], hi[i]));
        }
    }
    let base = centerline(0.0);
    let tip = centerline(1.0);
    let (first, last) = (&rings_pts[0], &rings_pts[rings]);
    for i in 0..segments {
        let k = (i + 1) % segments;
        tris.push(Triangle::from_vertices(base, first[k], first[i]));
        tris.push(Triangle::from_vertices(tip, last[i], last[k]));
    }
    TriangleMesh::new(name, tris)
}

fn leaf_blade() -> TriangleMesh {
    let base = Point3::origin();
    let right = Point3::new(0.3, 0.0, 0.45);
    let tip = Point3::new(0.0, 0.0, 1.0);
    let left = Point3::new(-0.3, 0.0, 0.45);
    TriangleMesh::new(
        "leaf",
        vec![
            Triangle::from_vertices(base, right, tip),
            Triangle::from_vertices(base, tip, left),
        ],
    )
}
