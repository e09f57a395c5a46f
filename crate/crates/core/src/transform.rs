//! Similarity transforms (rotation, uniform scale, translation) used to
//! instance template meshes, and their randomized generation.

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::align_z_to;
use crate::rng::SeedStream;
use crate::stl::{Triangle, TriangleMesh};

/// `p ↦ scale · R · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>, scale: f64) -> Self {
        debug_assert!(scale > 0.0);
        Self {
            rotation,
            translation,
            scale,
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn rotation(r: Rotation3<f64>) -> Self {
        Self {
            rotation: r,
            ..Self::identity()
        }
    }

    pub fn uniform_scale(s: f64) -> Self {
        Self {
            scale: s,
            ..Self::identity()
        }
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords * self.scale + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v * self.scale
    }

    /// Maps a normal: rotation only, re-normalized.
    pub fn apply_normal(&self, n: &Vector3<f64>) -> Vector3<f64> {
        let r = self.rotation * n;
        let norm = r.norm();
        if norm > 0.0 {
            r / norm
        } else {
            r
        }
    }

    pub fn inverse(&self) -> Self {
        let rot = self.rotation.inverse();
        let scale = 1.0 / self.scale;
        Self {
            rotation: rot,
            translation: -(rot * self.translation) * scale,
            scale,
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        self.rotation.matrix()
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        (self.rotation.matrix() - other.rotation.matrix()).abs().max() <= tol
            && (self.translation - other.translation).abs().max() <= tol
            && (self.scale - other.scale).abs() <= tol
    }
}

/// `compose(a, b)` applies `b` first, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    RigidTransform {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation * a.scale + a.translation,
        scale: a.scale * b.scale,
    }
}

pub fn apply_to_triangle(t: &RigidTransform, tri: &Triangle) -> Triangle {
    Triangle {
        normal: t.apply_normal(&tri.normal),
        vertices: tri.vertices.map(|v| t.apply_point(&v)),
    }
}

pub fn apply_to_mesh(t: &RigidTransform, mesh: &TriangleMesh) -> TriangleMesh {
    TriangleMesh {
        name: mesh.name.clone(),
        triangles: mesh.triangles.iter().map(|tri| apply_to_triangle(t, tri)).collect(),
    }
}

/// Half-widths of the uniform perturbations applied when instancing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleJitterParams {
    /// Degrees; rotation about the world vertical.
    pub azimuth_range: f64,
    /// Degrees; tilt in the vertical plane of the direction.
    pub pitch_range: f64,
    pub scale_range: (f64, f64),
}

impl Default for AngleJitterParams {
    fn default() -> Self {
        Self {
            azimuth_range: 10.0,
            pitch_range: 10.0,
            scale_range: (0.85, 1.15),
        }
    }
}

impl AngleJitterParams {
    pub fn none() -> Self {
        Self {
            azimuth_range: 0.0,
            pitch_range: 0.0,
            scale_range: (1.0, 1.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        let (lo, hi) = self.scale_range;
        self.azimuth_range.is_finite()
            && self.azimuth_range >= 0.0
            && self.pitch_range.is_finite()
            && self.pitch_range >= 0.0
            && lo.is_finite()
            && hi.is_finite()
            && lo > 0.0
            && lo <= hi
    }
}

/// Horizontal axis about which a tilt changes the polar angle of `d`.
fn tilt_axis(d: &Vector3<f64>) -> Unit<Vector3<f64>> {
    let h = Vector3::z().cross(d);
    let n = h.norm();
    if n < 1e-12 {
        Vector3::x_axis()
    } else {
        Unit::new_unchecked(h / n)
    }
}

/// Transform that places a `+Z`-aligned template at `point`, pointing along
/// `direction` perturbed by uniform pitch and azimuth jitter, with a uniform
/// random scale. Draws exactly three values from `rng`.
pub fn random_attachment_transform(
    point: &Point3<f64>,
    direction: &Vector3<f64>,
    jitter: &AngleJitterParams,
    rng: &mut SeedStream,
) -> RigidTransform {
    let pitch = rng.symmetric(jitter.pitch_range).to_radians();
    let azimuth = rng.symmetric(jitter.azimuth_range).to_radians();
    let scale = rng.uniform(jitter.scale_range.0, jitter.scale_range.1);

    let base = align_z_to(direction);
    let rotation = if pitch == 0.0 && azimuth == 0.0 {
        base
    } else {
        let tilt = Rotation3::from_axis_angle(&tilt_axis(direction), pitch);
        let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), azimuth);
        spin * tilt * base
    };
    RigidTransform::new(rotation, point.coords, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_right_triangle() -> TriangleMesh {
        TriangleMesh::new(
            "t",
            vec![Triangle::new(
                Vector3::z(),
                [Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)],
            )],
        )
    }

    fn sample_transform(seed: u64) -> RigidTransform {
        let mut rng = SeedStream::new(seed);
        let axis = Vector3::new(rng.symmetric(1.0), rng.symmetric(1.0), rng.symmetric(1.0)).normalize();
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), rng.symmetric(3.0));
        let t = Vector3::new(rng.symmetric(5.0), rng.symmetric(5.0), rng.symmetric(5.0));
        RigidTransform::new(r, t, rng.uniform(0.5, 2.0))
    }

    #[test]
    fn identity_composition() {
        let t = sample_transform(3);
        assert!(compose(&RigidTransform::identity(), &t).approx_eq(&t, 0.0));
        assert!(compose(&t, &t.inverse()).approx_eq(&RigidTransform::identity(), 1e-9));
        assert!(compose(&t.inverse(), &t).approx_eq(&RigidTransform::identity(), 1e-9));
    }

    #[test]
    fn compose_matches_sequential_application() {
        let a = sample_transform(1);
        let b = sample_transform(2);
        let p = Point3::new(0.3, -1.2, 2.5);
        let lhs = compose(&a, &b).apply_point(&p);
        let rhs = a.apply_point(&b.apply_point(&p));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn identity_and_translation_on_mesh() {
        let m = unit_right_triangle();
        assert_eq!(apply_to_mesh(&RigidTransform::identity(), &m), m);
        let moved = apply_to_mesh(&RigidTransform::translation(Vector3::new(1.0, 2.0, 3.0)), &m);
        for (a, b) in moved.triangles[0].vertices.iter().zip(m.triangles[0].vertices.iter()) {
            assert_eq!(a - b, Vector3::new(1.0, 2.0, 3.0));
        }
    }

    #[test]
    fn zero_jitter_frames() {
        let none = AngleJitterParams::none();
        let t = random_attachment_transform(&Point3::origin(), &Vector3::z(), &none, &mut SeedStream::new(0));
        assert!(t.approx_eq(&RigidTransform::identity(), 0.0));

        let t = random_attachment_transform(
            &Point3::new(0.0, 0.0, 5.0),
            &Vector3::x(),
            &none,
            &mut SeedStream::new(0),
        );
        assert!((t.rotation * Vector3::z() - Vector3::x()).norm() < 1e-15);
        assert_eq!(t.translation, Vector3::new(0.0, 0.0, 5.0));
        assert_eq!(t.scale, 1.0);
    }

    #[test]
    fn attachment_is_reproducible() {
        let j = AngleJitterParams::default();
        let d = Vector3::new(0.5, 0.1, 0.8).normalize();
        let p = Point3::new(1.0, 2.0, 3.0);
        let a = random_attachment_transform(&p, &d, &j, &mut SeedStream::new(77));
        let b = random_attachment_transform(&p, &d, &j, &mut SeedStream::new(77));
        assert_eq!(a, b);
        assert!((a.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pitch_jitter_distribution() {
        // Uniform(-10°, 10°) has E|X| = 5°; 1e4 samples give a standard error
        // of about 0.029°, so ±0.2° is a generous band.
        let j = AngleJitterParams {
            azimuth_range: 0.0,
            pitch_range: 10.0,
            scale_range: (1.0, 1.0),
        };
        let d = Vector3::new(0.6, 0.0, 0.8);
        let mut rng = SeedStream::new(2024);
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let t = random_attachment_transform(&Point3::origin(), &d, &j, &mut rng);
            let got = t.rotation * Vector3::z();
            let dev = got.dot(&d).clamp(-1.0, 1.0).acos().to_degrees();
            assert!(dev <= 10.0 + 1e-9);
            sum += dev;
        }
        let mean = sum / n as f64;
        assert!((mean - 5.0).abs() < 0.2, "mean |pitch deviation| = {mean}");
    }

    #[test]
    fn jitter_validation() {
        assert!(AngleJitterParams::default().is_valid());
        assert!(!AngleJitterParams {
            scale_range: (2.0, 1.0),
            ..Default::default()
        }
        .is_valid());
        assert!(!AngleJitterParams {
            pitch_range: -1.0,
            ..Default::default()
        }
        .is_valid());
    }
}
