use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use treesim::forest::SceneManifest;
use treesim::stl::{read_stl, PREAMBLE_LEN};

const RULE_1: &str = "vars: g\nconsts: d\naxiom: g\nrule: g -> d(d)+d)[d(d)+d)\n";

fn treesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treesim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn summary(out: &Output) -> BTreeMap<String, String> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_single_error_line(out: &Output) {
    let err = stderr(out);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"), "{err}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn rewrite_rule_one() {
    let dir = TempDir::new().unwrap();
    let g = dir.path().join("rule1.txt");
    fs::write(&g, RULE_1).unwrap();
    let out = treesim(&["rewrite", "--grammar", p(&g), "--iterations", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let s = summary(&out);
    assert_eq!(s["derivation"], "d(d)+d)[d(d)+d)");
    assert_eq!(s["branch_symbols"], "6");
}

#[test]
fn rewrite_parse_error_exits_3_with_line() {
    let dir = TempDir::new().unwrap();
    let g = dir.path().join("bad.txt");
    fs::write(&g, "vars: g\naxiom: g\nrule: g -> g]\n").unwrap();
    let out = treesim(&["rewrite", "--grammar", p(&g), "--iterations", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert_single_error_line(&out);
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn tree_branches_stage() {
    let dir = TempDir::new().unwrap();
    let out_file = dir.path().join("t8.stl");
    let out = treesim(&["tree", "--branches", "8", "--seed", "5", "--stage", "branches", "--out", p(&out_file)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let s = summary(&out);
    assert_eq!(s["branches"], "8");
    let bytes = fs::read(&out_file).unwrap();
    let t: usize = s["triangles"].parse().unwrap();
    assert_eq!(bytes.len(), PREAMBLE_LEN + 50 * t);
    assert!(!dir.path().join("leaves.csv").exists());
}

#[test]
fn tree_leaves_writes_centroids() {
    let dir = TempDir::new().unwrap();
    let out_file = dir.path().join("t12.stl");
    let out = treesim(&["tree", "--branches", "12", "--seed", "9", "--stage", "leaves", "--out", p(&out_file)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("leaves.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,y,z"));
    assert_eq!(lines.count().to_string(), summary(&out)["leaves"]);
}

#[test]
fn tree_same_seed_same_bytes() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.stl");
    let b = dir.path().join("b.stl");
    for f in [&a, &b] {
        let out = treesim(&["tree", "--branches", "12", "--seed", "42", "--format", "ascii", "--out", p(f)]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn tree_without_seed_reports_one() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("x.stl");
    let out = treesim(&["tree", "--branches", "8", "--stage", "skeleton", "--out", p(&f)]);
    assert!(out.status.success());
    let seed = summary(&out)["seed"].clone();
    let g = dir.path().join("y.stl");
    let again = treesim(&["tree", "--branches", "8", "--stage", "skeleton", "--seed", &seed, "--out", p(&g)]);
    assert!(again.status.success());
    assert_eq!(fs::read(f).unwrap(), fs::read(g).unwrap());
}

#[test]
fn tree_flag_errors_exit_2() {
    let out = treesim(&["tree", "--branches", "zero", "--out", "x.stl"]);
    assert_eq!(out.status.code(), Some(2));
    assert_single_error_line(&out);
    let out = treesim(&["tree", "--branches", "0", "--out", "x.stl"]);
    assert_eq!(out.status.code(), Some(2));
    assert_single_error_line(&out);
    let out = treesim(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tree_bad_library_exits_3() {
    let dir = TempDir::new().unwrap();
    let out = treesim(&[
        "tree",
        "--branches",
        "8",
        "--lib",
        p(&dir.path().join("missing.json")),
        "--out",
        p(&dir.path().join("t.stl")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_single_error_line(&out);
}

#[test]
fn tree_unwritable_output_exits_4() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = treesim(&["tree", "--branches", "8", "--seed", "1", "--out", p(&blocker.join("t.stl"))]);
    assert_eq!(out.status.code(), Some(4));
    assert_single_error_line(&out);
}

#[test]
fn tree_with_exported_library() {
    let dir = TempDir::new().unwrap();
    let lib_dir = dir.path().join("lib");
    treesim::MeshLibrary::builtin().write_to_dir(&lib_dir).unwrap();
    let a = dir.path().join("a.stl");
    let b = dir.path().join("b.stl");
    let out = treesim(&["tree", "--branches", "8", "--seed", "3", "--lib", p(&lib_dir), "--out", p(&a)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = treesim(&["tree", "--branches", "8", "--seed", "3", "--out", p(&b)]);
    assert!(out.status.success());
    // f32 storage moves the templates slightly; the structure is unchanged.
    let ma = read_stl(&fs::read(a).unwrap()).unwrap();
    let mb = read_stl(&fs::read(b).unwrap()).unwrap();
    assert_eq!(ma.len(), mb.len());
}

fn write_scene(dir: &Path, lambda: f64, seed: u64) -> std::path::PathBuf {
    let path = dir.join("scene_config.json");
    let config = format!(
        r#"{{
  "region": {{"x_min": 0, "x_max": 40, "y_min": 0, "y_max": 40}},
  "intensity": {{"kind": "constant", "value": {lambda}}},
  "tree_params": {{"branch_count": 8, "subbranches_per_branch": 2, "leaves_per_subbranch": 2,
                  "trunk_height": 6, "depth_scale_decay": 0.5}},
  "min_spacing": 2.0,
  "master_seed": {seed}
}}"#
    );
    fs::write(&path, config).unwrap();
    path
}

#[test]
fn forest_per_tree_file_count_matches_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_scene(dir.path(), 0.005, 11);
    let out_dir = dir.path().join("out");
    let out = treesim(&["forest", "--config", p(&cfg), "--out", p(&out_dir), "--mode", "per-tree"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = SceneManifest::load(&out_dir.join("scene.json")).unwrap();
    let stl_files = fs::read_dir(&out_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "stl"))
        .count();
    assert!(manifest.tree_count > 0);
    assert_eq!(stl_files, manifest.tree_count);
    assert_eq!(summary(&out)["trees"], manifest.tree_count.to_string());
}

#[test]
fn forest_zero_intensity_is_empty() {
    let dir = TempDir::new().unwrap();
    let cfg = write_scene(dir.path(), 0.0, 1);
    let out_dir = dir.path().join("out");
    let out = treesim(&["forest", "--config", p(&cfg), "--out", p(&out_dir), "--mode", "merged"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = SceneManifest::load(&out_dir.join("scene.json")).unwrap();
    assert_eq!(manifest.tree_count, 0);
    assert!(manifest.trees.is_empty());
}

#[test]
fn forest_regenerates_from_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_scene(dir.path(), 0.004, 23);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(treesim(&["forest", "--config", p(&cfg), "--out", p(&a), "--mode", "merged"]).status.success());
    let out = treesim(&["forest", "--config", p(&a.join("scene.json")), "--out", p(&b)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in ["scene.json", "forest.stl"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn forest_invalid_config_exits_5() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{"region": {"x_min": 5, "x_max": 0, "y_min": 0, "y_max": 1},
            "intensity": {"kind": "constant", "value": 1},
            "tree_params": {"branch_count": 8, "trunk_height": 1, "depth_scale_decay": 0.5},
            "master_seed": 1}"#,
    )
    .unwrap();
    let out = treesim(&["forest", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(5));
    assert_single_error_line(&out);

    fs::write(&cfg, "{ not json").unwrap();
    let out = treesim(&["forest", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn ipp_constant_zero_gives_empty_csv() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("pts");
    let out = treesim(&[
        "ipp-sample",
        "--region",
        "0,100,0,100",
        "--intensity",
        "constant:0",
        "--seed",
        "4",
        "--out",
        p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(out_dir.join("rep_0000.csv")).unwrap(), "x,y\n");
}

#[test]
fn ipp_counts_only_mean() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("counts.csv");
    let out = treesim(&[
        "ipp-sample",
        "--region",
        "0,100,0,100",
        "--intensity",
        "constant:0.01",
        "--seed",
        "2024",
        "--reps",
        "2000",
        "--counts-only",
        "--out",
        p(&f),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let counts: Vec<f64> = fs::read_to_string(&f)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 2000);
    let mean = counts.iter().sum::<f64>() / 2000.0;
    // 3 standard errors of a Poisson(100) mean over 2000 draws.
    assert!((mean - 100.0).abs() < 0.67, "mean {mean}");
    let reported: f64 = summary(&out)["mean"].parse().unwrap();
    assert_eq!(reported, mean);
}

#[test]
fn ipp_negative_raster_cell_exits_5() {
    let dir = TempDir::new().unwrap();
    let raster = dir.path().join("r.json");
    fs::write(
        &raster,
        r#"{"region": {"x_min": 0, "x_max": 10, "y_min": 0, "y_max": 10}, "cell_size": 5,
            "values": [[1, 1], [1, -0.5]]}"#,
    )
    .unwrap();
    let intensity = format!("raster:{}", p(&raster));
    let out = treesim(&[
        "ipp-sample",
        "--region",
        "0,10,0,10",
        "--intensity",
        &intensity,
        "--seed",
        "1",
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert_single_error_line(&out);
    assert!(stderr(&out).contains("row 1, col 1"), "{}", stderr(&out));
}

#[test]
fn ipp_bad_region_exits_2() {
    let out = treesim(&["ipp-sample", "--region", "0,1,0", "--intensity", "constant:1", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert_single_error_line(&out);
}

#[test]
fn stl_info_empty_binary() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("empty.stl");
    fs::write(&f, [0u8; 84]).unwrap();
    let out = treesim(&["stl-info", p(&f)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let s = summary(&out);
    assert_eq!(s["triangles"], "0");
    assert_eq!(s["format"], "binary");
}

#[test]
fn stl_info_truncated_reports_sizes() {
    let dir = TempDir::new().unwrap();
    let f = dir.path().join("trunc.stl");
    let mut bytes = vec![0u8; 84];
    bytes[80..84].copy_from_slice(&3u32.to_le_bytes());
    bytes.extend_from_slice(&[0u8; 60]);
    fs::write(&f, &bytes).unwrap();
    let out = treesim(&["stl-info", p(&f)]);
    assert_eq!(out.status.code(), Some(3));
    assert_single_error_line(&out);
    let err = stderr(&out);
    assert!(err.contains("234") && err.contains("144"), "{err}");
}

#[test]
fn help_exits_0() {
    let out = treesim(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ipp-sample"));
}
