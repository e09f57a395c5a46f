use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::Value;

use treesim::forest::{ExportMode, ExportOptions, SceneConfig, SceneManifest};
use treesim::ipp::{IntensityField, IppError, Region};
use treesim::library::{MeshLibrary, MANIFEST_FILE as LIBRARY_FILE};
use treesim::lsystem::{count_branch_symbols, parse_lsystem, rewrite};
use treesim::rng::splitmix64;
use treesim::stl::{mesh_stats, read_stl_file, write_stl, Aabb, StlFormat};
use treesim::tree::{build_tree, leaf_centroids_csv, Stage, TreeParams};
use treesim::ipp::{min_distance_filter, sample_replications};
use treesim::{compose_forest, export_scene, regenerate_from_manifest};

const EXIT_USAGE: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_WRITE: u8 = 4;
const EXIT_CONFIG: u8 = 5;

#[derive(Parser)]
#[command(name = "treesim", version, about = "Procedural trees and forests as STL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build one tree and write a stage mesh.
    Tree(TreeArgs),
    /// Sample tree locations and export a forest.
    Forest(ForestArgs),
    /// Sample point patterns from a Poisson process.
    IppSample(IppArgs),
    /// Summarize an STL file.
    StlInfo {
        file: PathBuf,
    },
    /// Rewrite an L-system grammar.
    Rewrite {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long, default_value_t = 1)]
        iterations: usize,
    },
}

#[derive(clap::Args)]
struct TreeArgs {
    #[arg(long)]
    branches: usize,
    #[arg(long, default_value_t = 3)]
    subbranches: usize,
    #[arg(long, default_value_t = 4)]
    leaves: usize,
    #[arg(long, default_value_t = 10.0)]
    height: f64,
    #[arg(long, default_value_t = 0.5)]
    decay: f64,
    #[arg(long, default_value_t = 40.0)]
    pitch: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Template library manifest (or its directory); builtin templates if omitted.
    #[arg(long)]
    lib: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "leaves")]
    stage: Stage,
    #[arg(long, default_value = "binary")]
    format: StlFormat,
}

#[derive(clap::Args)]
struct ForestArgs {
    /// Scene config, or a previously exported scene.json to regenerate.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<ExportMode>,
    #[arg(long)]
    lib: Option<PathBuf>,
    #[arg(long)]
    format: Option<StlFormat>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct IppArgs {
    #[arg(long)]
    region: String,
    /// `constant:VALUE` or `raster:FILE`.
    #[arg(long)]
    intensity: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Output directory for per-replication CSVs, or the counts CSV with --counts-only.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    counts_only: bool,
    #[arg(long, default_value_t = 0.0)]
    min_spacing: f64,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: {}", first.trim_start_matches("error:").trim());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = match cli.command {
        Command::Tree(args) => run_tree(args),
        Command::Forest(args) => run_forest(args),
        Command::IppSample(args) => run_ipp_sample(args),
        Command::StlInfo { file } => run_stl_info(&file),
        Command::Rewrite { grammar, iterations } => run_rewrite(&grammar, iterations),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            // One line, whatever the source error looked like.
            eprintln!("error: {}", f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

/// Seeds are never silent: an unseeded run picks one and reports it.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as u64)
            .unwrap_or(0);
        splitmix64(nanos ^ u64::from(std::process::id()))
    })
}

fn load_library(path: Option<&Path>) -> Result<(MeshLibrary, String), Failure> {
    match path {
        None => Ok((MeshLibrary::builtin(), "builtin".to_string())),
        Some(p) => {
            let manifest = if p.is_dir() { p.join(LIBRARY_FILE) } else { p.to_path_buf() };
            let lib = MeshLibrary::load(&manifest).map_err(|e| fail(EXIT_INPUT, e))?;
            Ok((lib, manifest.display().to_string()))
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| fail(EXIT_WRITE, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| fail(EXIT_WRITE, format!("{}: {e}", path.display())))
}

fn bounds_line(key: &str, b: &Aabb) {
    if b.is_empty() {
        println!("{key}_min=none");
        println!("{key}_max=none");
    } else {
        println!("{key}_min={},{},{}", b.min.x, b.min.y, b.min.z);
        println!("{key}_max={},{},{}", b.max.x, b.max.y, b.max.z);
    }
}

fn run_tree(a: TreeArgs) -> Outcome {
    let seed = resolve_seed(a.seed);
    let params = TreeParams {
        branch_count: a.branches,
        subbranches_per_branch: a.subbranches,
        leaves_per_subbranch: a.leaves,
        trunk_height: a.height,
        depth_scale_decay: a.decay,
        branch_pitch: a.pitch,
        seed,
        ..TreeParams::default()
    };
    params.validate().map_err(|e| fail(EXIT_USAGE, e))?;
    let (lib, _) = load_library(a.lib.as_deref())?;
    let model = build_tree(&params, &lib).map_err(|e| fail(EXIT_CONFIG, e))?;

    let mesh = model.stage_mesh(a.stage);
    let bytes = write_stl(&mesh, a.format).map_err(|e| fail(EXIT_WRITE, e))?;
    write_bytes(&a.out, &bytes)?;
    let stats = mesh_stats(&mesh);

    println!("seed={seed}");
    println!("stage={}", a.stage);
    println!("format={}", a.format);
    println!("branches={}", model.skeleton.count_at_depth(1));
    println!("triangles={}", stats.triangle_count);
    bounds_line("bounds", &stats.bounds);
    println!("area={}", stats.total_area);
    println!("out={}", a.out.display());
    if a.stage == Stage::Leaves {
        let csv = a.out.with_file_name("leaves.csv");
        write_bytes(&csv, leaf_centroids_csv(&model.leaf_centroids).as_bytes())?;
        println!("leaves={}", model.leaf_centroids.len());
        println!("leaves_csv={}", csv.display());
    }
    Ok(())
}

/// A scene file is either a config or an exported manifest to regenerate.
enum SceneInput {
    Config(SceneConfig),
    Manifest(SceneManifest),
}

fn load_scene_input(path: &Path) -> Result<SceneInput, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
    let invalid = |e: serde_json::Error| fail(EXIT_CONFIG, format!("{}: {e}", path.display()));
    let value: Value = serde_json::from_str(&text).map_err(invalid)?;
    if value.get("trees").is_some() && value.get("version").is_some() {
        serde_json::from_value(value).map(SceneInput::Manifest).map_err(invalid)
    } else {
        serde_json::from_value(value).map(SceneInput::Config).map_err(invalid)
    }
}

fn run_forest(a: ForestArgs) -> Outcome {
    let input = load_scene_input(&a.config)?;
    let (lib, lib_name) = load_library(a.lib.as_deref())?;
    let manifest = match input {
        SceneInput::Manifest(mut m) if a.seed.is_none() || a.seed == Some(m.master_seed) => {
            if let Some(mode) = a.mode {
                m.mode = mode;
            }
            if let Some(format) = a.format {
                m.format = format;
            }
            if a.lib.is_some() {
                m.library = lib_name;
            }
            regenerate_from_manifest(&m, &lib, &a.out).map_err(forest_failure)?
        }
        other => {
            let mut config = match other {
                SceneInput::Config(c) => c,
                SceneInput::Manifest(m) => m.config(),
            };
            config.master_seed = a.seed.unwrap_or(config.master_seed);
            config.validate().map_err(|e| fail(EXIT_CONFIG, e))?;
            let scene = compose_forest(&config, &lib).map_err(forest_failure)?;
            let options = ExportOptions {
                mode: a.mode.unwrap_or(ExportMode::PerTree),
                format: a.format.unwrap_or(StlFormat::Binary),
                library: lib_name,
            };
            export_scene(&scene, &a.out, &options).map_err(forest_failure)?
        }
    };
    println!("seed={}", manifest.master_seed);
    println!("trees={}", manifest.tree_count);
    println!("triangles={}", manifest.total_triangles);
    println!("mode={}", manifest.mode);
    println!("format={}", manifest.format);
    println!("manifest={}", treesim::forest::manifest_path(&a.out).display());
    Ok(())
}

fn forest_failure(e: treesim::forest::ForestError) -> Failure {
    use treesim::forest::ForestError;
    let code = match &e {
        ForestError::Io { .. } | ForestError::Stl { .. } => EXIT_WRITE,
        _ => EXIT_CONFIG,
    };
    fail(code, e)
}

fn parse_intensity(s: &str) -> Result<IntensityField, Failure> {
    s.parse().map_err(|e: IppError| {
        let code = match (&e, s.starts_with("raster:")) {
            (IppError::File { .. }, _) => EXIT_INPUT,
            (_, true) => EXIT_CONFIG,
            _ => EXIT_USAGE,
        };
        fail(code, e)
    })
}

fn run_ipp_sample(a: IppArgs) -> Outcome {
    let region: Region = a.region.parse().map_err(|e| fail(EXIT_USAGE, e))?;
    if !(a.min_spacing.is_finite() && a.min_spacing >= 0.0) {
        return Err(fail(EXIT_USAGE, format!("--min-spacing must be non-negative, got {}", a.min_spacing)));
    }
    let field = parse_intensity(&a.intensity)?;
    let seed = resolve_seed(a.seed);
    let patterns: Vec<_> = sample_replications(&field, &region, seed, a.reps)
        .map_err(|e| fail(EXIT_CONFIG, e))?
        .iter()
        .map(|p| min_distance_filter(p, a.min_spacing))
        .collect();

    if a.counts_only {
        let mut csv = String::from("replication,count\n");
        for (i, p) in patterns.iter().enumerate() {
            csv.push_str(&format!("{i},{}\n", p.len()));
        }
        write_bytes(&a.out, csv.as_bytes())?;
    } else {
        fs::create_dir_all(&a.out).map_err(|e| fail(EXIT_WRITE, format!("{}: {e}", a.out.display())))?;
        for (i, p) in patterns.iter().enumerate() {
            write_bytes(&a.out.join(format!("rep_{i:04}.csv")), p.to_csv().as_bytes())?;
        }
    }

    let counts: Vec<f64> = patterns.iter().map(|p| p.len() as f64).collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let variance = if counts.len() > 1 {
        counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    println!("seed={seed}");
    println!("reps={}", a.reps);
    println!("mean={mean}");
    println!("variance={variance}");
    if mean > 0.0 {
        println!("dispersion={}", variance / mean);
    } else {
        println!("dispersion=nan");
    }
    println!("out={}", a.out.display());
    Ok(())
}

fn run_stl_info(file: &Path) -> Outcome {
    let (mesh, format) = read_stl_file(file).map_err(|e| fail(EXIT_INPUT, e))?;
    let stats = mesh_stats(&mesh);
    println!("format={format}");
    println!("triangles={}", stats.triangle_count);
    bounds_line("bounds", &stats.bounds);
    println!("area={}", stats.total_area);
    Ok(())
}

fn run_rewrite(grammar: &Path, iterations: usize) -> Outcome {
    let text = fs::read_to_string(grammar).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", grammar.display())))?;
    let ls = parse_lsystem(&text).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", grammar.display())))?;
    let d = rewrite(&ls, iterations);
    println!("iterations={iterations}");
    println!("derivation={}", d.as_str());
    println!("length={}", d.len());
    println!("branch_symbols={}", count_branch_symbols(&d));
    Ok(())
}
