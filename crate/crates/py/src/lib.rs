//! Python bindings: `import treesim`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use ::treesim as core;
use core::forest::{ExportMode, ExportOptions, SceneConfig, SceneManifest};
use core::ipp::{min_distance_filter, sample_ipp_thinning, sample_replications, IntensityField, Region};
use core::library::MeshLibrary;
use core::rng::SeedStream;
use core::stl::{StlError, StlFormat, Triangle, TriangleMesh};
use core::tree::{Stage, TreeParams};
use nalgebra::Point3;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn stl_err(e: StlError) -> PyErr {
    match e {
        StlError::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

fn library(path: Option<PathBuf>) -> PyResult<MeshLibrary> {
    match path {
        None => Ok(MeshLibrary::builtin()),
        Some(p) => {
            let manifest = if p.is_dir() { p.join(core::library::MANIFEST_FILE) } else { p };
            MeshLibrary::load(&manifest).map_err(|e| PyIOError::new_err(e.to_string()))
        }
    }
}

type Vec3 = (f64, f64, f64);

fn tuple(p: &Point3<f64>) -> Vec3 {
    (p.x, p.y, p.z)
}

/// A D0L L-system.
#[pyclass(module = "treesim", frozen)]
struct LSystem {
    inner: core::LSystem,
}

#[pymethods]
impl LSystem {
    /// Parses grammar text (`vars:`, `consts:`, `axiom:`, `rule: X -> w`).
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        core::parse_lsystem(text)
            .map(|inner| Self { inner })
            .map_err(value_err)
    }

    #[getter]
    fn axiom(&self) -> String {
        self.inner.axiom().to_string()
    }

    #[getter]
    fn productions(&self) -> Vec<(char, String)> {
        self.inner.productions().map(|p| (p.predecessor, p.successor)).collect()
    }

    /// Derivation string after `iterations` parallel rewrites.
    #[pyo3(signature = (iterations = 1))]
    fn rewrite(&self, iterations: usize) -> String {
        core::rewrite(&self.inner, iterations).symbols
    }

    fn __repr__(&self) -> String {
        format!("LSystem({:?})", self.inner.to_string())
    }
}

/// Number of branch symbols (`d`) in a derivation string.
#[pyfunction]
fn count_branch_symbols(s: &str) -> usize {
    core::count_branch_symbols(&core::DerivationString::new(s, 0))
}

/// A triangle mesh.
#[pyclass(module = "treesim", frozen)]
struct Mesh {
    inner: TriangleMesh,
}

#[pymethods]
impl Mesh {
    /// Builds a mesh from `[(v0, v1, v2), ...]`; normals come from the winding.
    #[staticmethod]
    #[pyo3(signature = (triangles, name = "mesh"))]
    fn from_triangles(triangles: Vec<(Vec3, Vec3, Vec3)>, name: &str) -> Self {
        let p = |v: Vec3| Point3::new(v.0, v.1, v.2);
        let tris = triangles
            .into_iter()
            .map(|(a, b, c)| Triangle::from_vertices(p(a), p(b), p(c)))
            .collect();
        Self {
            inner: TriangleMesh::new(name, tris),
        }
    }

    /// Parses STL bytes, binary or ASCII.
    #[staticmethod]
    fn from_stl(data: &[u8]) -> PyResult<Self> {
        core::read_stl(data).map(|inner| Self { inner }).map_err(stl_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        core::stl::read_stl_file(&path)
            .map(|(inner, _)| Self { inner })
            .map_err(stl_err)
    }

    #[pyo3(signature = (format = "binary"))]
    fn to_stl<'py>(&self, py: Python<'py>, format: &str) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = core::write_stl(&self.inner, parse(format)?).map_err(stl_err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[pyo3(signature = (path, format = "binary"))]
    fn save(&self, path: PathBuf, format: &str) -> PyResult<()> {
        core::stl::write_stl_file(&self.inner, parse(format)?, &path).map_err(stl_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `[(v0, v1, v2), ...]`
    fn triangles(&self) -> Vec<(Vec3, Vec3, Vec3)> {
        self.inner
            .triangles
            .iter()
            .map(|t| (tuple(&t.vertices[0]), tuple(&t.vertices[1]), tuple(&t.vertices[2])))
            .collect()
    }

    fn normals(&self) -> Vec<Vec3> {
        self.inner.triangles.iter().map(|t| (t.normal.x, t.normal.y, t.normal.z)).collect()
    }

    fn centroids(&self) -> Vec<Vec3> {
        self.inner.triangles.iter().map(|t| tuple(&core::triangle_centroid(t))).collect()
    }

    /// `(triangle_count, (min, max) or None, total_area)`
    fn stats(&self) -> (usize, Option<(Vec3, Vec3)>, f64) {
        let s = core::mesh_stats(&self.inner);
        let bounds = (!s.bounds.is_empty()).then(|| (tuple(&s.bounds.min), tuple(&s.bounds.max)));
        (s.triangle_count, bounds, s.total_area)
    }

    fn __repr__(&self) -> String {
        format!("Mesh(name={:?}, triangles={})", self.inner.name, self.inner.len())
    }
}

/// A generated tree.
#[pyclass(module = "treesim", frozen)]
struct Tree {
    inner: core::TreeModel,
}

#[pymethods]
impl Tree {
    #[getter]
    fn branch_count(&self) -> usize {
        self.inner.skeleton.count_at_depth(1)
    }

    #[getter]
    fn subbranch_count(&self) -> usize {
        self.inner.skeleton.count_at_depth(2)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.params.seed
    }

    #[getter]
    fn triangle_count(&self) -> usize {
        self.inner.triangle_count()
    }

    /// Triangle count at the end of the branches, sub-branches and leaves stages.
    fn stage_counts(&self) -> (usize, usize, usize) {
        let c = self.inner.stage_counts;
        (c.branches, c.subbranches, c.subbranches + self.inner.leaf_mesh.len())
    }

    /// One `(x, y, z)` per leaf triangle.
    fn leaf_centroids(&self) -> Vec<Vec3> {
        self.inner.leaf_centroids.iter().map(tuple).collect()
    }

    /// `(attachment, direction, depth, length)` per skeleton node; node 0 is the trunk.
    fn skeleton(&self) -> Vec<(Vec3, Vec3, u32, f64)> {
        self.inner
            .skeleton
            .nodes
            .iter()
            .map(|n| (tuple(&n.attachment), (n.direction.x, n.direction.y, n.direction.z), n.depth, n.length))
            .collect()
    }

    /// Geometry up to `stage`: skeleton, branches, subbranches or leaves.
    #[pyo3(signature = (stage = "leaves"))]
    fn mesh(&self, stage: &str) -> PyResult<Mesh> {
        let stage: Stage = parse(stage)?;
        Ok(Mesh {
            inner: self.inner.stage_mesh(stage),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Tree(branches={}, triangles={}, seed={})",
            self.branch_count(),
            self.triangle_count(),
            self.seed()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (branches, subbranches = 3, leaves = 4, height = 10.0, decay = 0.5, pitch = 40.0, seed = 0, lib = None))]
#[allow(clippy::too_many_arguments)]
fn build_tree(
    branches: usize,
    subbranches: usize,
    leaves: usize,
    height: f64,
    decay: f64,
    pitch: f64,
    seed: u64,
    lib: Option<PathBuf>,
) -> PyResult<Tree> {
    let params = TreeParams {
        branch_count: branches,
        subbranches_per_branch: subbranches,
        leaves_per_subbranch: leaves,
        trunk_height: height,
        depth_scale_decay: decay,
        branch_pitch: pitch,
        seed,
        ..TreeParams::default()
    };
    let lib = library(lib)?;
    core::build_tree(&params, &lib)
        .map(|inner| Tree { inner })
        .map_err(value_err)
}

fn region(r: (f64, f64, f64, f64)) -> PyResult<Region> {
    Region::new(r.0, r.1, r.2, r.3).map_err(value_err)
}

fn intensity(spec: &str) -> PyResult<IntensityField> {
    spec.parse().map_err(value_err)
}

/// One point pattern. `intensity` is `constant:VALUE` or `raster:FILE`.
#[pyfunction]
#[pyo3(signature = (region, intensity, seed, min_spacing = 0.0))]
fn sample_points(
    py: Python<'_>,
    region: (f64, f64, f64, f64),
    intensity: &str,
    seed: u64,
    min_spacing: f64,
) -> PyResult<Vec<(f64, f64)>> {
    let (r, f) = (self::region(region)?, self::intensity(intensity)?);
    let pattern = py
        .detach(|| sample_ipp_thinning(&f, &r, &mut SeedStream::new(seed)))
        .map_err(value_err)?;
    Ok(min_distance_filter(&pattern, min_spacing)
        .points
        .iter()
        .map(|p| (p[0], p[1]))
        .collect())
}

/// Point counts of `reps` independent replications.
#[pyfunction]
fn sample_counts(
    py: Python<'_>,
    region: (f64, f64, f64, f64),
    intensity: &str,
    seed: u64,
    reps: usize,
) -> PyResult<Vec<usize>> {
    let (r, f) = (self::region(region)?, self::intensity(intensity)?);
    let patterns = py
        .detach(|| sample_replications(&f, &r, seed, reps))
        .map_err(value_err)?;
    Ok(patterns.iter().map(|p| p.len()).collect())
}

/// Expected number of points in the region.
#[pyfunction]
fn integrate_intensity(region: (f64, f64, f64, f64), intensity: &str) -> PyResult<f64> {
    core::integrate_intensity(&self::intensity(intensity)?, &self::region(region)?).map_err(value_err)
}

/// A composed forest.
#[pyclass(module = "treesim", frozen)]
struct Forest {
    inner: core::Scene,
    library: String,
}

#[pymethods]
impl Forest {
    /// Composes a scene from a JSON config string.
    #[staticmethod]
    #[pyo3(signature = (config_json, lib = None))]
    fn compose(py: Python<'_>, config_json: &str, lib: Option<PathBuf>) -> PyResult<Self> {
        let config: SceneConfig = serde_json::from_str(config_json).map_err(value_err)?;
        let name = lib.as_ref().map_or("builtin".to_string(), |p| p.display().to_string());
        let lib = library(lib)?;
        let inner = py.detach(|| core::compose_forest(&config, &lib)).map_err(value_err)?;
        Ok(Self { inner, library: name })
    }

    #[getter]
    fn tree_count(&self) -> usize {
        self.inner.placements.len()
    }

    fn locations(&self) -> Vec<(f64, f64)> {
        self.inner.placements.iter().map(|p| (p.location[0], p.location[1])).collect()
    }

    fn tree_seeds(&self) -> Vec<u64> {
        self.inner.placements.iter().map(|p| p.tree_seed).collect()
    }

    /// All trees in world coordinates.
    fn merged_mesh(&self) -> Mesh {
        let stage = self.inner.config.stage;
        let mut mesh = TriangleMesh::new("forest", Vec::new());
        for p in &self.inner.placements {
            mesh.extend_from(&p.placed_mesh(stage));
        }
        Mesh { inner: mesh }
    }

    /// Writes the scene into `out_dir` and returns the manifest JSON.
    #[pyo3(signature = (out_dir, mode = "per-tree", format = "binary"))]
    fn export(&self, py: Python<'_>, out_dir: PathBuf, mode: &str, format: &str) -> PyResult<String> {
        let options = ExportOptions {
            mode: parse::<ExportMode>(mode)?,
            format: parse::<StlFormat>(format)?,
            library: self.library.clone(),
        };
        let manifest = py
            .detach(|| core::export_scene(&self.inner, &out_dir, &options))
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(manifest.to_json())
    }

    fn __repr__(&self) -> String {
        format!("Forest(trees={}, seed={})", self.tree_count(), self.inner.config.master_seed)
    }
}

/// Re-exports a scene from its `scene.json`; returns the new manifest JSON.
#[pyfunction]
#[pyo3(signature = (manifest_path, out_dir, lib = None))]
fn regenerate(py: Python<'_>, manifest_path: PathBuf, out_dir: PathBuf, lib: Option<PathBuf>) -> PyResult<String> {
    let manifest = SceneManifest::load(&manifest_path).map_err(value_err)?;
    let lib = library(lib)?;
    py.detach(|| core::regenerate_from_manifest(&manifest, &lib, &out_dir))
        .map(|m| m.to_json())
        .map_err(|e| PyIOError::new_err(e.to_string()))
}

/// Writes the builtin template library (STL files plus `library.json`) into `out_dir`.
#[pyfunction]
fn write_builtin_library(out_dir: PathBuf) -> PyResult<String> {
    MeshLibrary::builtin()
        .write_to_dir(&out_dir)
        .map(|p| p.display().to_string())
        .map_err(|e| PyIOError::new_err(e.to_string()))
}

#[pymodule(name = "treesim")]
fn treesim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LSystem>()?;
    m.add_class::<Mesh>()?;
    m.add_class::<Tree>()?;
    m.add_class::<Forest>()?;
    m.add_function(wrap_pyfunction!(count_branch_symbols, m)?)?;
    m.add_function(wrap_pyfunction!(build_tree, m)?)?;
    m.add_function(wrap_pyfunction!(sample_points, m)?)?;
    m.add_function(wrap_pyfunction!(sample_counts, m)?)?;
    m.add_function(wrap_pyfunction!(integrate_intensity, m)?)?;
    m.add_function(wrap_pyfunction!(regenerate, m)?)?;
    m.add_function(wrap_pyfunction!(write_builtin_library, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
