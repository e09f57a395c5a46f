//! Forest scenes: tree locations from a thinned Poisson process, one tree
//! per location with its own seed, and export to STL plus a `scene.json`
//! manifest.
//!
//! Tree `i` is built with seed `derive_seed(master_seed, i)`; locations come
//! from stream `POINTS` of the master seed. Per-tree STL files are written in
//! the tree's local frame (trunk base at the origin); the merged STL holds
//! every tree translated to `(x, y, 0)`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ipp::{min_distance_filter, sample_ipp_thinning, IntensityField, IppError, Region};
use crate::library::MeshLibrary;
use crate::rng::{derive_seed, streams, SeedStream};
use crate::stl::{mesh_stats, write_stl, Aabb, StlError, StlFormat, TriangleMesh};
use crate::transform::{apply_to_mesh, RigidTransform};
use crate::tree::{build_tree, Stage, TreeError, TreeModel, TreeParams};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "scene.json";
pub const MERGED_FILE: &str = "forest.stl";

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ipp(#[from] IppError),
    #[error("tree {index}: {source}")]
    Tree {
        index: usize,
        #[source]
        source: TreeError,
    },
    #[error("{path}: {source}")]
    Stl {
        path: String,
        #[source]
        source: StlError,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Optional per-tree variation, inclusive ranges.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterJitter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_count: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunk_height: Option<(f64, f64)>,
}

fn default_stage() -> Stage {
    Stage::Leaves
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub region: Region,
    pub intensity: IntensityField,
    /// Per-tree seeds replace `seed`.
    pub tree_params: TreeParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_jitter: Option<ParameterJitter>,
    #[serde(default)]
    pub min_spacing: f64,
    pub master_seed: u64,
    /// Geometry exported per tree.
    #[serde(default = "default_stage")]
    pub stage: Stage,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), ForestError> {
        let bad = |m: String| Err(ForestError::InvalidConfig(m));
        self.region.validate()?;
        self.intensity.validate()?;
        if !(self.min_spacing.is_finite() && self.min_spacing >= 0.0) {
            return bad(format!("min_spacing must be non-negative, got {}", self.min_spacing));
        }
        self.tree_params
            .validate()
            .map_err(|e| ForestError::InvalidConfig(format!("tree_params: {e}")))?;
        if let Some(j) = &self.parameter_jitter {
            if let Some((lo, hi)) = j.branch_count {
                if lo < 1 || lo > hi {
                    return bad(format!("parameter_jitter.branch_count must satisfy 1 <= min <= max, got ({lo}, {hi})"));
                }
            }
            if let Some((lo, hi)) = j.trunk_height {
                if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                    return bad(format!("parameter_jitter.trunk_height must satisfy 0 < min <= max, got ({lo}, {hi})"));
                }
            }
        }
        Ok(())
    }

    /// Parameters of tree `index`: its derived seed plus any parameter jitter.
    pub fn tree_params_for(&self, index: usize) -> TreeParams {
        let seed = derive_seed(self.master_seed, index as u64);
        let mut params = TreeParams {
            seed,
            ..self.tree_params.clone()
        };
        if let Some(j) = &self.parameter_jitter {
            let mut rng = SeedStream::with_stream(seed, streams::PARAMETERS);
            if let Some((lo, hi)) = j.branch_count {
                let span = (hi - lo + 1) as f64;
                params.branch_count = lo + ((rng.unit() * span) as usize).min(hi - lo);
            }
            if let Some((lo, hi)) = j.trunk_height {
                params.trunk_height = rng.uniform(lo, hi);
            }
        }
        params
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub index: usize,
    pub location: [f64; 2],
    pub tree_seed: u64,
    /// In its local frame, trunk base at the origin.
    pub tree: TreeModel,
}

impl Placement {
    pub fn offset(&self) -> RigidTransform {
        RigidTransform::translation(Vector3::new(self.location[0], self.location[1], 0.0))
    }

    /// Exported geometry in the tree's local frame.
    pub fn local_mesh(&self, stage: Stage) -> TriangleMesh {
        let mut m = self.tree.stage_mesh(stage);
        m.name = format!("tree_{}", self.index);
        m
    }

    /// Exported geometry translated to the tree's location.
    pub fn placed_mesh(&self, stage: Stage) -> TriangleMesh {
        apply_to_mesh(&self.offset(), &self.local_mesh(stage))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub placements: Vec<Placement>,
    pub config: SceneConfig,
}

fn build_placements(
    items: Vec<(usize, [f64; 2], TreeParams)>,
    lib: &MeshLibrary,
) -> Result<Vec<Placement>, ForestError> {
    items
        .into_par_iter()
        .map(|(index, location, params)| {
            let tree = build_tree(&params, lib).map_err(|source| ForestError::Tree { index, source })?;
            Ok(Placement {
                index,
                location,
                tree_seed: params.seed,
                tree,
            })
        })
        .collect()
}

pub fn compose_forest(config: &SceneConfig, lib: &MeshLibrary) -> Result<Scene, ForestError> {
    config.validate()?;
    let mut rng = SeedStream::with_stream(config.master_seed, streams::POINTS);
    let pattern = sample_ipp_thinning(&config.intensity, &config.region, &mut rng)?;
    let located = min_distance_filter(&pattern, config.min_spacing);
    let items = located
        .points
        .iter()
        .enumerate()
        .map(|(i, &p)| (i, p, config.tree_params_for(i)))
        .collect();
    Ok(Scene {
        placements: build_placements(items, lib)?,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportMode {
    Merged,
    PerTree,
}

impl fmt::Display for ExportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportMode::Merged => "merged",
            ExportMode::PerTree => "per-tree",
        })
    }
}

impl FromStr for ExportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "merged" => Ok(ExportMode::Merged),
            "per-tree" => Ok(ExportMode::PerTree),
            other => Err(format!("unknown export mode {other:?} (expected merged or per-tree)")),
        }
    }
}

fn stl_format_name(f: &StlFormat) -> &'static str {
    match f {
        StlFormat::Binary => "binary",
        StlFormat::Ascii => "ascii",
    }
}

mod format_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(f: &StlFormat, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(stl_format_name(f))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<StlFormat, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEntry {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub seed: u64,
    pub params: TreeParams,
    /// `None` in merged mode.
    pub file: Option<String>,
    pub triangles: usize,
}

/// Contents of `scene.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub version: u32,
    pub master_seed: u64,
    pub region: Region,
    pub intensity: IntensityField,
    pub tree_params: TreeParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parameter_jitter: Option<ParameterJitter>,
    pub min_spacing: f64,
    pub stage: Stage,
    pub mode: ExportMode,
    #[serde(with = "format_serde")]
    pub format: StlFormat,
    /// `builtin` or the library manifest path as given.
    pub library: String,
    pub tree_count: usize,
    pub total_triangles: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_file: Option<String>,
    pub trees: Vec<TreeEntry>,
}

impl SceneManifest {
    pub fn config(&self) -> SceneConfig {
        SceneConfig {
            region: self.region,
            intensity: self.intensity.clone(),
            tree_params: self.tree_params.clone(),
            parameter_jitter: self.parameter_jitter,
            min_spacing: self.min_spacing,
            master_seed: self.master_seed,
            stage: self.stage,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ForestError> {
        let text = fs::read_to_string(path).map_err(|source| ForestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ForestError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportOptions {
    pub mode: ExportMode,
    pub format: StlFormat,
    pub library: String,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            mode: ExportMode::PerTree,
            format: StlFormat::Binary,
            library: "builtin".to_string(),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ForestError> {
    fs::write(path, bytes).map_err(|source| ForestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn stl_bytes(mesh: &TriangleMesh, format: StlFormat, path: &Path) -> Result<Vec<u8>, ForestError> {
    write_stl(mesh, format).map_err(|source| ForestError::Stl {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the scene into `dir` and returns the manifest written to `scene.json`.
pub fn export_scene(scene: &Scene, dir: &Path, options: &ExportOptions) -> Result<SceneManifest, ForestError> {
    fs::create_dir_all(dir).map_err(|source| ForestError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let stage = scene.config.stage;
    let mut trees = Vec::with_capacity(scene.placements.len());
    let mut merged = TriangleMesh::new("forest", Vec::new());
    for p in &scene.placements {
        let local = p.local_mesh(stage);
        let file = match options.mode {
            ExportMode::PerTree => {
                let name = format!("tree_{}.stl", p.index);
                let path = dir.join(&name);
                write_file(&path, &stl_bytes(&local, options.format, &path)?)?;
                Some(name)
            }
            ExportMode::Merged => {
                merged.extend_from(&apply_to_mesh(&p.offset(), &local));
                None
            }
        };
        trees.push(TreeEntry {
            index: p.index,
            x: p.location[0],
            y: p.location[1],
            seed: p.tree_seed,
            params: p.tree.params.clone(),
            file,
            triangles: local.len(),
        });
    }
    let merged_file = match options.mode {
        ExportMode::Merged if !scene.placements.is_empty() => {
            let path = dir.join(MERGED_FILE);
            write_file(&path, &stl_bytes(&merged, options.format, &path)?)?;
            Some(MERGED_FILE.to_string())
        }
        _ => None,
    };
    let c = &scene.config;
    let manifest = SceneManifest {
        version: MANIFEST_VERSION,
        master_seed: c.master_seed,
        region: c.region,
        intensity: c.intensity.clone(),
        tree_params: c.tree_params.clone(),
        parameter_jitter: c.parameter_jitter,
        min_spacing: c.min_spacing,
        stage,
        mode: options.mode,
        format: options.format,
        library: options.library.clone(),
        tree_count: trees.len(),
        total_triangles: trees.iter().map(|t| t.triangles).sum(),
        merged_file,
        trees,
    };
    write_file(&dir.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

/// Rebuilds the scene recorded in a manifest from the per-tree entries
/// alone (locations, parameters and seeds), without resampling.
pub fn scene_from_manifest(manifest: &SceneManifest, lib: &MeshLibrary) -> Result<Scene, ForestError> {
    if manifest.version != MANIFEST_VERSION {
        return Err(ForestError::InvalidConfig(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    let config = manifest.config();
    config.validate()?;
    let items = manifest
        .trees
        .iter()
        .map(|t| {
            if t.params.seed != t.seed {
                return Err(ForestError::InvalidConfig(format!("tree {}: seed does not match params", t.index)));
            }
            Ok((t.index, [t.x, t.y], t.params.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scene {
        placements: build_placements(items, lib)?,
        config,
    })
}

pub fn regenerate_from_manifest(
    manifest: &SceneManifest,
    lib: &MeshLibrary,
    dir: &Path,
) -> Result<SceneManifest, ForestError> {
    let scene = scene_from_manifest(manifest, lib)?;
    let options = ExportOptions {
        mode: manifest.mode,
        format: manifest.format,
        library: manifest.library.clone(),
    };
    export_scene(&scene, dir, &options)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneStats {
    pub tree_count: usize,
    pub total_triangles: usize,
    pub bounds: Aabb,
    /// `+inf` with fewer than two trees.
    pub nearest_neighbor_min_distance: f64,
}

pub fn nearest_neighbor_min_distance(points: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.min((a[0] - b[0]).hypot(a[1] - b[1]));
        }
    }
    best
}

pub fn scene_stats(scene: &Scene) -> SceneStats {
    let stage = scene.config.stage;
    let mut bounds = Aabb::empty();
    let mut total = 0;
    for p in &scene.placements {
        let s = mesh_stats(&p.local_mesh(stage));
        total += s.triangle_count;
        if !s.bounds.is_empty() {
            let off = Vector3::new(p.location[0], p.location[1], 0.0);
            bounds.include(&Point3::from(s.bounds.min.coords + off));
            bounds.include(&Point3::from(s.bounds.max.coords + off));
        }
    }
    let locations: Vec<[f64; 2]> = scene.placements.iter().map(|p| p.location).collect();
    SceneStats {
        tree_count: scene.placements.len(),
        total_triangles: total,
        bounds,
        nearest_neighbor_min_distance: nearest_neighbor_min_distance(&locations),
    }
}

/// Path of the manifest inside an export directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
