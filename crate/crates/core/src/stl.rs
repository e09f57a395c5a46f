//! STL triangle meshes: binary and ASCII reading and writing, normals,
//! centroids and summary statistics.
//!
//! Binary layout: an 80-byte header (the mesh name, zero padded), a
//! little-endian `u32` facet count, then 50 bytes per facet: twelve
//! little-endian `f32` (normal, three vertices) and a `u16` attribute that is
//! ignored on read and written as zero.

use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

pub const HEADER_LEN: usize = 80;
pub const FACET_LEN: usize = 50;
/// Header plus facet count.
pub const PREAMBLE_LEN: usize = HEADER_LEN + 4;

#[derive(Debug, Error)]
pub enum StlError {
    #[error("empty input")]
    Empty,
    #[error("truncated binary STL: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("ASCII STL line {line}: {message}")]
    Ascii { line: usize, message: String },
    #[error("triangle {index} has a non-finite value")]
    NonFinite { index: usize },
    #[error("triangle {index} has a non-unit normal (norm {norm}); recompute normals before writing")]
    NonUnitNormal { index: usize, norm: f64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StlFormat {
    Binary,
    Ascii,
}

impl fmt::Display for StlFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StlFormat::Binary => "binary",
            StlFormat::Ascii => "ascii",
        })
    }
}

impl std::str::FromStr for StlFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "binary" => Ok(StlFormat::Binary),
            "ascii" => Ok(StlFormat::Ascii),
            other => Err(format!("unknown STL format {other:?} (expected binary or ascii)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub normal: Vector3<f64>,
    pub vertices: [Point3<f64>; 3],
}

impl Triangle {
    pub fn new(normal: Vector3<f64>, vertices: [Point3<f64>; 3]) -> Self {
        Self { normal, vertices }
    }

    /// Triangle with its right-hand-rule normal (zero when degenerate).
    pub fn from_vertices(v0: Point3<f64>, v1: Point3<f64>, v2: Point3<f64>) -> Self {
        let mut t = Self::new(Vector3::zeros(), [v0, v1, v2]);
        t.normal = face_normal(&t).unwrap_or_else(Vector3::zeros);
        t
    }

    pub fn is_finite(&self) -> bool {
        self.normal.iter().all(|c| c.is_finite())
            && self.vertices.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }

    /// `(v1 - v0) × (v2 - v0)`.
    pub fn cross(&self) -> Vector3<f64> {
        let [v0, v1, v2] = self.vertices;
        (v1 - v0).cross(&(v2 - v0))
    }

    pub fn area(&self) -> f64 {
        0.5 * self.cross().norm()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub name: String,
    pub triangles: Vec<Triangle>,
}

impl TriangleMesh {
    pub fn new(name: impl Into<String>, triangles: Vec<Triangle>) -> Self {
        Self {
            name: name.into(),
            triangles,
        }
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn extend_from(&mut self, other: &TriangleMesh) {
        self.triangles.extend_from_slice(&other.triangles);
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Point3<f64>> {
        self.triangles.iter().flat_map(|t| t.vertices.iter())
    }

    pub fn check_finite(&self) -> Result<(), StlError> {
        match self.triangles.iter().position(|t| !t.is_finite()) {
            Some(index) => Err(StlError::NonFinite { index }),
            None => Ok(()),
        }
    }
}

/// Axis-aligned bounds. The empty box has `min = +inf`, `max = -inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Default for Aabb {
    fn default() -> Self {
        Self::empty()
    }
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn include(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&mut self, other: &Aabb) {
        if !other.is_empty() {
            self.include(&other.min);
            self.include(&other.max);
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.include(p);
        }
        b
    }

    pub fn extent(&self) -> Vector3<f64> {
        if self.is_empty() {
            Vector3::zeros()
        } else {
            self.max - self.min
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshStats {
    pub triangle_count: usize,
    pub bounds: Aabb,
    pub total_area: f64,
}

pub fn mesh_stats(mesh: &TriangleMesh) -> MeshStats {
    MeshStats {
        triangle_count: mesh.len(),
        bounds: Aabb::from_points(mesh.vertices()),
        total_area: mesh.triangles.iter().map(Triangle::area).sum(),
    }
}

pub fn triangle_centroid(t: &Triangle) -> Point3<f64> {
    let [a, b, c] = t.vertices;
    Point3::from((a.coords + b.coords + c.coords) / 3.0)
}

/// Unit right-hand-rule normal, `None` for a zero-area triangle.
pub fn face_normal(t: &Triangle) -> Option<Vector3<f64>> {
    let [v0, v1, v2] = t.vertices;
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let c = e1.cross(&e2);
    let n = c.norm();
    if n == 0.0 || n <= 4.0 * f64::EPSILON * e1.norm() * e2.norm() {
        None
    } else {
        Some(c / n)
    }
}

/// Recomputes every normal from vertex order. Returns the mesh and the
/// indices of degenerate triangles, whose normals are set to zero.
pub fn recompute_normals(mesh: &TriangleMesh) -> (TriangleMesh, Vec<usize>) {
    let mut degenerate = Vec::new();
    let triangles = mesh
        .triangles
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let normal = face_normal(t).unwrap_or_else(|| {
                degenerate.push(i);
                Vector3::zeros()
            });
            Triangle::new(normal, t.vertices)
        })
        .collect();
    (TriangleMesh::new(mesh.name.clone(), triangles), degenerate)
}

fn is_writable_normal(n: &Vector3<f64>) -> Option<f64> {
    let norm = n.norm();
    ((1.0 - 1e-3..=1.0 + 1e-3).contains(&norm)).then_some(norm)
}

fn check_writable(mesh: &TriangleMesh) -> Result<(), StlError> {
    mesh.check_finite()?;
    for (index, t) in mesh.triangles.iter().enumerate() {
        if is_writable_normal(&t.normal).is_none() {
            return Err(StlError::NonUnitNormal {
                index,
                norm: t.normal.norm(),
            });
        }
    }
    Ok(())
}

pub fn write_stl(mesh: &TriangleMesh, format: StlFormat) -> Result<Vec<u8>, StlError> {
    check_writable(mesh)?;
    Ok(match format {
        StlFormat::Binary => write_binary(mesh),
        StlFormat::Ascii => write_ascii(mesh).into_bytes(),
    })
}

pub fn write_stl_file(mesh: &TriangleMesh, format: StlFormat, path: &Path) -> Result<(), StlError> {
    let bytes = write_stl(mesh, format)?;
    fs::write(path, bytes).map_err(|source| StlError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_stl_file(path: &Path) -> Result<(TriangleMesh, StlFormat), StlError> {
    let bytes = fs::read(path).map_err(|source| StlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_stl_with_format(&bytes)
}

fn write_binary(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREAMBLE_LEN + FACET_LEN * mesh.len());
    let mut header = [0u8; HEADER_LEN];
    let name = mesh.name.as_bytes();
    let n = name.len().min(HEADER_LEN);
    header[..n].copy_from_slice(&name[..n]);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.len() as u32).to_le_bytes());
    for t in &mesh.triangles {
        for c in t.normal.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        for v in &t.vertices {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

fn ascii_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect::<String>()
        .trim()
        .to_string()
}

fn write_ascii(mesh: &TriangleMesh) -> String {
    use std::fmt::Write;
    let name = ascii_name(&mesh.name);
    let mut s = String::with_capacity(64 + 260 * mesh.len());
    let solid = if name.is_empty() { String::new() } else { format!(" {name}") };
    let _ = writeln!(s, "solid{solid}");
    for t in &mesh.triangles {
        let n = t.normal;
        let _ = writeln!(s, "  facet normal {:.8e} {:.8e} {:.8e}", n.x, n.y, n.z);
        s.push_str("    outer loop\n");
        for v in &t.vertices {
            let _ = writeln!(s, "      vertex {:.8e} {:.8e} {:.8e}", v.x, v.y, v.z);
        }
        s.push_str("    endloop\n  endfacet\n");
    }
    let _ = writeln!(s, "endsolid{solid}");
    s
}

pub fn read_stl(bytes: &[u8]) -> Result<TriangleMesh, StlError> {
    read_stl_with_format(bytes).map(|(mesh, _)| mesh)
}

/// Reads either flavour. Input starting with `solid` is tried as ASCII first;
/// if that fails and the length is consistent with the binary facet count,
/// it is read as binary.
pub fn read_stl_with_format(bytes: &[u8]) -> Result<(TriangleMesh, StlFormat), StlError> {
    if bytes.is_empty() {
        return Err(StlError::Empty);
    }
    let looks_ascii = bytes.trim_ascii_start().starts_with(b"solid");
    if looks_ascii {
        match read_ascii(bytes) {
            Ok(mesh) => return Ok((mesh, StlFormat::Ascii)),
            Err(err) => {
                if binary_size_matches(bytes) {
                    return read_binary(bytes).map(|m| (m, StlFormat::Binary));
                }
                return Err(err);
            }
        }
    }
    read_binary(bytes).map(|m| (m, StlFormat::Binary))
}

fn binary_size_matches(bytes: &[u8]) -> bool {
    bytes.len() >= PREAMBLE_LEN && bytes.len() == PREAMBLE_LEN + FACET_LEN * declared_count(bytes)
}

fn declared_count(bytes: &[u8]) -> usize {
    u32::from_le_bytes(bytes[HEADER_LEN..PREAMBLE_LEN].try_into().unwrap()) as usize
}

fn read_binary(bytes: &[u8]) -> Result<TriangleMesh, StlError> {
    if bytes.len() < PREAMBLE_LEN {
        return Err(StlError::Truncated {
            expected: PREAMBLE_LEN,
            actual: bytes.len(),
        });
    }
    let count = declared_count(bytes);
    let expected = PREAMBLE_LEN + FACET_LEN * count;
    if bytes.len() < expected {
        return Err(StlError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let header = &bytes[..HEADER_LEN];
    let end = header.iter().position(|&b| b == 0).unwrap_or(HEADER_LEN);
    let name = String::from_utf8_lossy(&header[..end]).into_owned();

    let f = |chunk: &[u8], i: usize| -> f64 { f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap()) as f64 };
    let mut triangles = Vec::with_capacity(count);
    for (index, chunk) in bytes[PREAMBLE_LEN..expected].chunks_exact(FACET_LEN).enumerate() {
        let normal = Vector3::new(f(chunk, 0), f(chunk, 1), f(chunk, 2));
        let v = |k: usize| Point3::new(f(chunk, 3 + 3 * k), f(chunk, 4 + 3 * k), f(chunk, 5 + 3 * k));
        let t = Triangle::new(normal, [v(0), v(1), v(2)]);
        if !t.is_finite() {
            return Err(StlError::NonFinite { index });
        }
        triangles.push(t);
    }
    Ok(TriangleMesh { name, triangles })
}

struct AsciiLines<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> AsciiLines<'a> {
    /// Next non-blank line as whitespace-separated tokens.
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.lines.by_ref() {
            self.last = i + 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if !tokens.is_empty() {
                return Some((i + 1, tokens));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, Vec<&'a str>), StlError> {
        self.next_tokens().ok_or_else(|| StlError::Ascii {
            line: self.last + 1,
            message: format!("unexpected end of input, expected `{what}`"),
        })
    }
}

fn ascii_err(line: usize, message: impl Into<String>) -> StlError {
    StlError::Ascii {
        line,
        message: message.into(),
    }
}

fn parse_triple(tokens: &[&str], line: usize) -> Result<[f64; 3], StlError> {
    if tokens.len() != 3 {
        return Err(ascii_err(line, format!("expected 3 numbers, found {}", tokens.len())));
    }
    let mut out = [0.0; 3];
    for (slot, tok) in out.iter_mut().zip(tokens) {
        let v: f64 = tok
            .parse()
            .map_err(|_| ascii_err(line, format!("invalid number {tok:?}")))?;
        if !v.is_finite() {
            return Err(ascii_err(line, format!("non-finite number {tok:?}")));
        }
        *slot = v;
    }
    Ok(out)
}

fn read_ascii(bytes: &[u8]) -> Result<TriangleMesh, StlError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        ascii_err(line, "invalid UTF-8")
    })?;
    let mut lines = AsciiLines {
        lines: text.lines().enumerate(),
        last: 0,
    };

    let (line, tokens) = lines.expect("solid")?;
    if tokens[0] != "solid" {
        return Err(ascii_err(line, "expected `solid`"));
    }
    let name = text
        .lines()
        .nth(line - 1)
        .unwrap_or("")
        .trim()
        .strip_prefix("solid")
        .unwrap_or("")
        .trim()
        .to_string();

    let mut triangles = Vec::new();
    loop {
        let (line, tokens) = lines.expect("facet or endsolid")?;
        match tokens[0] {
            "endsolid" => break,
            "facet" => {
                if tokens.get(1) != Some(&"normal") {
                    return Err(ascii_err(line, "expected `facet normal nx ny nz`"));
                }
                let n = parse_triple(&tokens[2..], line)?;
                let (line, tokens) = lines.expect("outer loop")?;
                if tokens != ["outer", "loop"] {
                    return Err(ascii_err(line, "expected `outer loop`"));
                }
                let mut vertices = [Point3::origin(); 3];
                for v in vertices.iter_mut() {
                    let (line, tokens) = lines.expect("vertex")?;
                    if tokens[0] != "vertex" {
                        return Err(ascii_err(line, "expected `vertex x y z`"));
                    }
                    let [x, y, z] = parse_triple(&tokens[1..], line)?;
                    *v = Point3::new(x, y, z);
                }
                let (line, tokens) = lines.expect("endloop")?;
                if tokens != ["endloop"] {
                    return Err(ascii_err(line, "expected `endloop`"));
                }
                let (line, tokens) = lines.expect("endfacet")?;
                if tokens != ["endfacet"] {
                    return Err(ascii_err(line, "expected `endfacet`"));
                }
                triangles.push(Triangle::new(Vector3::new(n[0], n[1], n[2]), vertices));
            }
            other => return Err(ascii_err(line, format!("unexpected token {other:?}"))),
        }
    }
    if let Some((line, _)) = lines.next_tokens() {
        return Err(ascii_err(line, "content after `endsolid`"));
    }
    Ok(TriangleMesh { name, triangles })
}
