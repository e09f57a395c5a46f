//! Small vector helpers shared by the skeleton and transform code.

use nalgebra::{Rotation3, Unit, Vector3};

/// Deterministic orthonormal pair `(e1, e2)` perpendicular to unit `axis`,
/// with `e1 × e2 = axis`. For `axis = +Z` this is `(+X, +Y)`.
pub fn perpendicular_frame(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - axis * helper.dot(axis)).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

/// Minimal rotation taking `+Z` onto unit `target`. The antipodal case is a
/// half turn about `+X`.
pub fn align_z_to(target: &Vector3<f64>) -> Rotation3<f64> {
    let z = Vector3::z();
    let cross = z.cross(target);
    let sin = cross.norm();
    let cos = target.z;
    if sin < 1e-12 {
        if cos > 0.0 {
            Rotation3::identity()
        } else {
            Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
        }
    } else {
        Rotation3::from_axis_angle(&Unit::new_unchecked(cross / sin), sin.atan2(cos))
    }
}
