use nalgebra::{Point3, Rotation3, Unit, Vector3};
use proptest::prelude::*;

use treesim::geometry::align_z_to;
use treesim::ipp::{sample_homogeneous, sample_ipp_thinning, IntensityField, PointPattern, Raster, Region};
use treesim::library::{MeshLibrary, Role};
use treesim::lsystem::{
    count_branch_symbols, interpret_turtle, parse_lsystem, rewrite, synthesize_derivation, AzimuthPolicy,
    DerivationString, LSystem, TrunkSpec, TurtleConfig,
};
use treesim::rng::SeedStream;
use treesim::stl::{read_stl, recompute_normals, triangle_centroid, write_stl, StlFormat, Triangle, TriangleMesh};
use treesim::transform::{apply_to_mesh, compose, RigidTransform};
use treesim::tree::{build_tree, node_transform, TreeParams};

// ---- L-systems ----

/// Expands symbol by symbol, straight from the definition of parallel rewriting.
fn naive_expand(ls: &LSystem, c: char, n: usize) -> String {
    match ls.production(c) {
        Some(succ) if n > 0 => succ.chars().map(|x| naive_expand(ls, x, n - 1)).collect(),
        _ => c.to_string(),
    }
}

fn body() -> impl Strategy<Value = String> {
    // Variables a, b; constant d; controls, with brackets kept balanced.
    let atom = prop_oneof![
        Just("a".to_string()),
        Just("b".to_string()),
        Just("d".to_string()),
        Just("+".to_string()),
        Just("-".to_string()),
        Just("(d)".to_string()),
        Just("[d]".to_string()),
        Just("[a]".to_string()),
    ];
    prop::collection::vec(atom, 1..5).prop_map(|v| v.concat())
}

fn grammar() -> impl Strategy<Value = String> {
    (body(), body(), body()).prop_map(|(axiom, ra, rb)| {
        format!("vars: a b\nconsts: d\naxiom: {axiom}\nrule: a -> {ra}\nrule: b -> {rb}\n")
    })
}

proptest! {
    #[test]
    fn rewrite_matches_naive_expansion(text in grammar(), n in 0usize..5) {
        let ls = parse_lsystem(&text).unwrap();
        let expected: String = ls.axiom().chars().map(|c| naive_expand(&ls, c, n)).collect();
        let got = rewrite(&ls, n);
        prop_assert_eq!(got.as_str(), expected.as_str());
        prop_assert_eq!(got.level, n);
    }

    #[test]
    fn constants_and_controls_are_fixed_points(text in grammar(), s in "[d+\\-()\\[\\]]{0,20}") {
        let ls = parse_lsystem(&text).unwrap();
        prop_assert_eq!(treesim::lsystem::rewrite_once(&ls, &s), s);
    }

    #[test]
    fn branch_count_is_monotone(text in grammar(), n in 0usize..4) {
        let ls = parse_lsystem(&text).unwrap();
        // d is a constant, so every d survives the next rewrite.
        prop_assert!(count_branch_symbols(&rewrite(&ls, n)) <= count_branch_symbols(&rewrite(&ls, n + 1)));
    }

    #[test]
    fn uniform_spacing_azimuths(k in 1usize..24, seed in any::<u64>()) {
        let d = synthesize_derivation(k, 0);
        let cfg = TurtleConfig { azimuth_policy: AzimuthPolicy::UniformSpacing, ..Default::default() };
        let sk = interpret_turtle(&d, &cfg, &TrunkSpec::new(1.0, Point3::origin()), &mut SeedStream::new(seed)).unwrap();
        let az: Vec<f64> = sk.nodes_at_depth(1).map(|(_, n)| n.azimuth).collect();
        prop_assert_eq!(az.len(), k);
        for (i, a) in az.iter().enumerate() {
            prop_assert!((a - 360.0 * i as f64 / k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn synthesized_derivation_counts(k in 1usize..30, s in 0usize..6) {
        let d = synthesize_derivation(k, s);
        prop_assert_eq!(count_branch_symbols(&d), k * (1 + s));
        let sk = interpret_turtle(&d, &TurtleConfig::default(), &TrunkSpec::new(2.0, Point3::origin()), &mut SeedStream::new(0)).unwrap();
        prop_assert_eq!(sk.count_at_depth(1), k);
        prop_assert_eq!(sk.count_at_depth(2), k * s);
    }
}

#[test]
fn turtle_rejects_bracket_underflow() {
    let d = DerivationString::new("d]d", 1);
    let r = interpret_turtle(&d, &TurtleConfig::default(), &TrunkSpec::new(1.0, Point3::origin()), &mut SeedStream::new(1));
    assert!(r.is_err());
}

// ---- STL and meshes ----

fn coord() -> impl Strategy<Value = f64> {
    -100.0..100.0f64
}

fn point() -> impl Strategy<Value = Point3<f64>> {
    (coord(), coord(), coord()).prop_map(|(x, y, z)| Point3::new(x, y, z))
}

fn triangle() -> impl Strategy<Value = Triangle> {
    (point(), point(), point())
        .prop_filter("non-degenerate", |(a, b, c)| (b - a).cross(&(c - a)).norm() > 1e-3)
        .prop_map(|(a, b, c)| Triangle::from_vertices(a, b, c))
}

fn mesh() -> impl Strategy<Value = TriangleMesh> {
    prop::collection::vec(triangle(), 0..40).prop_map(|t| TriangleMesh::new("prop", t))
}

fn rotation() -> impl Strategy<Value = Rotation3<f64>> {
    (coord(), coord(), coord(), -10.0..10.0f64)
        .prop_filter("axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-6)
        .prop_map(|(x, y, z, a)| Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(x, y, z)), a))
}

fn rigid() -> impl Strategy<Value = RigidTransform> {
    (rotation(), point(), 0.1..10.0f64).prop_map(|(r, t, s)| RigidTransform::new(r, t.coords, s))
}

fn f32_exact(m: &TriangleMesh) -> TriangleMesh {
    read_stl(&write_stl(m, StlFormat::Binary).unwrap()).unwrap()
}

proptest! {
    #[test]
    fn binary_round_trip_is_byte_identical(m in mesh()) {
        let bytes = write_stl(&m, StlFormat::Binary).unwrap();
        prop_assert_eq!(bytes.len(), 84 + 50 * m.len());
        let again = write_stl(&read_stl(&bytes).unwrap(), StlFormat::Binary).unwrap();
        prop_assert_eq!(bytes, again);
    }

    #[test]
    fn ascii_round_trip_relative_error(m in mesh()) {
        let back = read_stl(&write_stl(&m, StlFormat::Ascii).unwrap()).unwrap();
        prop_assert_eq!(back.len(), m.len());
        for (a, b) in m.triangles.iter().zip(&back.triangles) {
            for (p, q) in a.vertices.iter().zip(&b.vertices) {
                for k in 0..3 {
                    let scale = p[k].abs().max(1e-300);
                    prop_assert!((p[k] - q[k]).abs() / scale < 1e-6 || (p[k] - q[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn recomputed_normals_idempotent_and_orthogonal(m in mesh()) {
        let (once, degenerate) = recompute_normals(&m);
        prop_assert!(degenerate.is_empty());
        let (twice, _) = recompute_normals(&once);
        prop_assert_eq!(&once, &twice);
        for t in &once.triangles {
            let [a, b, c] = t.vertices;
            let scale = (b - a).norm().max((c - a).norm());
            prop_assert!(t.normal.dot(&(b - a)).abs() <= 1e-9 * scale);
            prop_assert!(t.normal.dot(&(c - a)).abs() <= 1e-9 * scale);
            prop_assert!((t.normal.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn area_invariant_under_rotation_and_translation(m in mesh(), r in rotation(), t in point()) {
        let xf = RigidTransform::new(r, t.coords, 1.0);
        let before: f64 = m.triangles.iter().map(Triangle::area).sum();
        let after: f64 = apply_to_mesh(&xf, &m).triangles.iter().map(Triangle::area).sum();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
    }

    #[test]
    fn centroid_ignores_vertex_order(t in triangle(), perm in 0usize..6) {
        const P: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let v = t.vertices;
        let q = Triangle::from_vertices(v[P[perm][0]], v[P[perm][1]], v[P[perm][2]]);
        prop_assert!((triangle_centroid(&t) - triangle_centroid(&q)).norm() < 1e-12);
    }

    #[test]
    fn compose_is_associative(a in rigid(), b in rigid(), c in rigid()) {
        let left = compose(&compose(&a, &b), &c);
        let right = compose(&a, &compose(&b, &c));
        prop_assert!(left.approx_eq(&right, 1e-9 * left.translation.norm().max(1.0)));
    }

    #[test]
    fn compose_applies_right_operand_first(a in rigid(), b in rigid(), p in point()) {
        let direct = a.apply_point(&b.apply_point(&p));
        let composed = compose(&a, &b).apply_point(&p);
        prop_assert!((direct - composed).norm() <= 1e-9 * direct.coords.norm().max(1.0));
    }

    #[test]
    fn edge_lengths_scale_exactly(tri in triangle(), xf in rigid()) {
        let img = apply_to_mesh(&xf, &TriangleMesh::new("t", vec![tri]));
        let [a, b, c] = tri.vertices;
        let [a2, b2, c2] = img.triangles[0].vertices;
        for (before, after) in [((b - a).norm(), (b2 - a2).norm()), ((c - b).norm(), (c2 - b2).norm()), ((a - c).norm(), (a2 - c2).norm())] {
            prop_assert!((after - xf.scale * before).abs() <= 1e-9 * xf.scale * before);
        }
    }

    #[test]
    fn inverse_round_trips(xf in rigid(), p in point()) {
        let back = xf.inverse().apply_point(&xf.apply_point(&p));
        prop_assert!((back - p).norm() < 1e-9 * p.coords.norm().max(1.0) * xf.scale.max(1.0 / xf.scale));
    }

    #[test]
    fn align_z_hits_target(x in coord(), y in coord(), z in coord()) {
        let v = Vector3::new(x, y, z);
        prop_assume!(v.norm() > 1e-6);
        let d = v.normalize();
        prop_assert!((align_z_to(&d) * Vector3::z() - d).norm() < 1e-12);
    }

    #[test]
    fn f32_storage_is_idempotent(m in mesh()) {
        let once = f32_exact(&m);
        prop_assert_eq!(f32_exact(&once), once);
    }
}

// ---- trees ----

fn tree_params() -> impl Strategy<Value = TreeParams> {
    (1usize..17, 0usize..4, 0usize..4, 1.0..20.0f64, 0.3..0.8f64, any::<u64>()).prop_map(|(b, s, l, h, d, seed)| {
        TreeParams {
            branch_count: b,
            subbranches_per_branch: s,
            leaves_per_subbranch: l,
            trunk_height: h,
            depth_scale_decay: d,
            seed,
            ..TreeParams::default()
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn branch_bases_sit_on_attachment_points(params in tree_params()) {
        let lib = MeshLibrary::builtin();
        let tree = build_tree(&params, &lib).unwrap();
        for node in &tree.skeleton.nodes[1..] {
            let template = lib.get(if node.depth == 1 { Role::Branch } else { Role::SubBranch });
            let base: Vec<_> = template.base_vertices().collect();
            let n = base.len() as f64;
            let centroid = base.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
            let placed = node_transform(node, template).apply_point(&Point3::from(centroid));
            prop_assert!((placed - node.attachment).norm() < 1e-6);
        }
    }

    #[test]
    fn children_attach_on_parent_axis(params in tree_params()) {
        let tree = build_tree(&params, &MeshLibrary::builtin()).unwrap();
        let nodes = &tree.skeleton.nodes;
        for node in &nodes[1..] {
            let parent = &nodes[node.parent.unwrap()];
            let rel = node.attachment - parent.attachment;
            let along = rel.dot(&parent.direction);
            let off_axis = (rel - parent.direction * along).norm();
            prop_assert!(off_axis < 1e-9 * parent.length.max(1.0));
            prop_assert!(along >= -1e-9 && along <= parent.length * (1.0 + 1e-9));
        }
    }

    #[test]
    fn triangle_ledger_is_additive(params in tree_params()) {
        let lib = MeshLibrary::builtin();
        let tree = build_tree(&params, &lib).unwrap();
        let b = params.branch_count;
        let s = b * params.subbranches_per_branch;
        prop_assert_eq!(tree.skeleton.count_at_depth(1), b);
        prop_assert_eq!(tree.skeleton.count_at_depth(2), s);
        let expected = lib.trunk.len()
            + b * lib.branch.len()
            + s * lib.sub_branch.len()
            + params.leaf_count() * lib.leaf.len();
        prop_assert_eq!(tree.triangle_count(), expected);
        prop_assert_eq!(tree.leaf_centroids.len(), tree.leaf_mesh.len());
    }

    #[test]
    fn trees_are_deterministic(params in tree_params()) {
        let lib = MeshLibrary::builtin();
        prop_assert_eq!(build_tree(&params, &lib).unwrap(), build_tree(&params, &lib).unwrap());
    }
}

// ---- point processes ----

fn brute_force_min_distance(points: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min((points[i][0] - points[j][0]).hypot(points[i][1] - points[j][1]));
        }
    }
    best
}

proptest! {
    #[test]
    fn min_distance_filter_respects_spacing(seed in any::<u64>(), r in 0.1..5.0f64) {
        let region = Region::new(0.0, 20.0, 0.0, 20.0).unwrap();
        let pattern = sample_homogeneous(&region, 1.0, &mut SeedStream::new(seed)).unwrap();
        let kept = treesim::ipp::min_distance_filter(&pattern, r);
        prop_assert!(brute_force_min_distance(&kept.points) >= r);
        // Greedy maximality: every dropped point is within r of a kept one.
        for p in &pattern.points {
            let near = kept.points.iter().any(|q| (p[0] - q[0]).hypot(p[1] - q[1]) < r || p == q);
            prop_assert!(near);
        }
    }

    #[test]
    fn samples_lie_in_region(seed in any::<u64>(), x0 in -50.0..50.0f64, w in 0.5..30.0f64, h in 0.5..30.0f64) {
        let region = Region::new(x0, x0 + w, -x0, -x0 + h).unwrap();
        let field = IntensityField::constant(0.5).unwrap();
        let p = sample_ipp_thinning(&field, &region, &mut SeedStream::new(seed)).unwrap();
        prop_assert!(p.points.iter().all(|q| region.contains(*q)));
    }

    #[test]
    fn same_seed_same_pattern(seed in any::<u64>()) {
        let region = Region::new(0.0, 10.0, 0.0, 10.0).unwrap();
        let field = IntensityField::constant(0.3).unwrap();
        let a = sample_ipp_thinning(&field, &region, &mut SeedStream::new(seed)).unwrap();
        let b = sample_ipp_thinning(&field, &region, &mut SeedStream::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zero_cells_never_receive_points(seed in any::<u64>()) {
        let bounds = Region::new(0.0, 4.0, 0.0, 4.0).unwrap();
        let raster = Raster::new(bounds, 2.0, 2.0, 2, 2, vec![0.0, 3.0, 3.0, 0.0]).unwrap();
        let field = IntensityField::Raster(raster);
        let p = sample_ipp_thinning(&field, &bounds, &mut SeedStream::new(seed)).unwrap();
        for q in &p.points {
            prop_assert!(field.at(q[0], q[1]) > 0.0);
        }
    }
}

/// One-sample Kolmogorov–Smirnov statistic against U(lo, hi).
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = (x - lo) / (hi - lo);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[test]
fn homogeneous_coordinates_pass_ks_at_one_percent() {
    let region = Region::new(-3.0, 7.0, 10.0, 30.0).unwrap();
    let p: PointPattern = sample_homogeneous(&region, 20.0, &mut SeedStream::new(77)).unwrap();
    let n = p.len() as f64;
    assert!(n > 3000.0);
    // Asymptotic critical value for α = 0.01.
    let crit = 1.6276 / n.sqrt();
    let dx = ks_uniform(p.points.iter().map(|q| q[0]).collect(), -3.0, 7.0);
    let dy = ks_uniform(p.points.iter().map(|q| q[1]).collect(), 10.0, 30.0);
    assert!(dx < crit, "x: D = {dx}, crit {crit}");
    assert!(dy < crit, "y: D = {dy}, crit {crit}");
}

#[test]
fn index_of_dispersion_near_one() {
    let region = Region::new(0.0, 10.0, 0.0, 10.0).unwrap();
    let field = IntensityField::constant(0.4).unwrap();
    let counts: Vec<f64> = treesim::ipp::sample_replications(&field, &region, 99, 3000)
        .unwrap()
        .iter()
        .map(|p| p.len() as f64)
        .collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let d = var / mean;
    assert!((0.85..1.15).contains(&d), "dispersion {d}");
}
