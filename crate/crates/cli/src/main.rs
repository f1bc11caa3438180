mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use kernelsurf::diagnostics::{loss_report, DenseReference, LossConfig, SampleCounts};
use kernelsurf::extract::MaskMode;
use kernelsurf::io::{load_mesh, load_point_cloud_auto, save_mesh, MeshFormat};
use kernelsurf::metrics::{evaluate, sample_mesh, DEFAULT_SAMPLES, OBJECT_XI};
use kernelsurf::outofcore::{reconstruct_large, LargeConfig};
use kernelsurf::pipeline::{reconstruct, PipelineConfig, Preset, Reconstruction};
use kernelsurf::{Error, OrientedPointCloud, Result};

const SUBCOMMANDS: &[&str] = &["reconstruct", "reconstruct-large", "evaluate", "diagnose"];
const SWITCHES: &[&str] = &["color"];

#[derive(Parser)]
#[command(name = "kernelsurf", version, about = "Kernel-field surface reconstruction")]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a mesh from an oriented point cloud.
    #[command(args_override_self = true)]
    Reconstruct(ReconstructArgs),
    /// Reconstruct in overlapping chunks and merge the fields.
    #[command(name = "reconstruct-large", args_override_self = true)]
    ReconstructLarge(LargeArgs),
    /// Compare a predicted mesh against a reference mesh or cloud.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Reconstruct, then report fitting losses against a dense reference.
    #[command(args_override_self = true)]
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    None,
    Distance,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Input point cloud (.ply or .xyz).
    #[arg(long)]
    input: PathBuf,
    /// Hyperparameter preset: shapenet, abc, room or carla.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    adaptive_depth: Option<usize>,
    /// Feature dimension of the default constant field.
    #[arg(long)]
    feature_dim: Option<usize>,
    /// Kernel model file; a constant field is used when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "none")]
    mask: MaskArg,
    /// Distance-mask radius; twice the voxel size when absent.
    #[arg(long)]
    mask_tau: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Re-estimate normals from K nearest neighbors.
    #[arg(long, value_name = "K")]
    estimate_normals: Option<usize>,
    /// Write `G`, `Q` and `b` as triplet text files into this directory.
    #[arg(long, value_name = "DIR")]
    dump_matrices: Option<PathBuf>,
    /// Fit and attach per-vertex colors.
    #[arg(long)]
    color: bool,
}

#[derive(Args)]
struct ReconstructArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Output mesh (.ply or .obj).
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct LargeArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    chunk_size: Option<f64>,
    /// Overlap between neighboring chunks in world units.
    #[arg(long)]
    overlap: Option<f64>,
    /// Chunks solved concurrently.
    #[arg(long, default_value_t = 1)]
    max_in_flight: usize,
    /// Directory for per-chunk results; completed chunks are reused.
    #[arg(long)]
    persist_dir: Option<PathBuf>,
    /// Wall-clock budget in seconds; chunks not started in time are skipped.
    #[arg(long, value_name = "SECS")]
    time_budget: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reference mesh or oriented point cloud.
    #[arg(long)]
    gt: PathBuf,
    /// Predicted mesh.
    #[arg(long)]
    pred: PathBuf,
    /// F-score distance threshold.
    #[arg(long, default_value_t = OBJECT_XI)]
    xi: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Dense oriented reference cloud.
    #[arg(long)]
    reference: PathBuf,
    /// Band radius around the reference; the voxel size when absent.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Samples drawn per loss term.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn pipeline_config(a: &PipelineArgs) -> Result<PipelineConfig> {
    let mut cfg = match &a.preset {
        Some(p) => PipelineConfig::from_preset(Preset::parse(p)?),
        None => PipelineConfig::default(),
    };
    if let Some(w) = a.voxel_size {
        cfg.voxel_size = w;
    }
    if let Some(l) = a.levels {
        cfg.levels = l;
    }
    if let Some(l) = a.adaptive_depth {
        cfg.adaptive_depth = l;
    }
    if let Some(d) = a.feature_dim {
        cfg.feature_dim = d;
    }
    if let Some(t) = a.tolerance {
        cfg.solve.tolerance = t;
    }
    if let Some(m) = a.max_iters {
        cfg.solve.max_iterations = m;
    }
    if let Some(k) = a.estimate_normals {
        cfg.normal_neighbors = k;
        cfg.force_normals = true;
    }
    cfg.model_path = a.model.clone();
    cfg.solve.dump_dir = a.dump_matrices.clone();
    cfg.color = a.color;
    cfg.extraction.mask = match a.mask {
        MaskArg::None => MaskMode::None,
        MaskArg::Distance => MaskMode::Distance(a.mask_tau.unwrap_or(2.0 * cfg.voxel_size)),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn mesh_format(path: &Path) -> Result<MeshFormat> {
    MeshFormat::from_path(path)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown mesh format for {}", path.display())))
}

fn load_input(a: &PipelineArgs) -> Result<OrientedPointCloud> {
    let cloud = load_point_cloud_auto(&a.input)?;
    log::info!("loaded {} points from {}", cloud.len(), a.input.display());
    Ok(cloud)
}

fn fit_json(r: &Reconstruction) -> Value {
    let s = &r.fit.stats;
    json!({
        "vertices": r.mesh.vertices.len(),
        "triangles": r.mesh.triangles.len(),
        "voxels": r.model.hierarchy().counts(),
        "solver": {
            "iterations": s.iterations,
            "residual": s.final_residual,
            "converged": s.converged,
            "unknowns": s.unknowns,
            "constraints": s.constraints,
            "empty_rows": s.empty_rows,
            "nnz": s.nnz,
        },
        "timings": r.timings,
    })
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<Value> {
    let cfg = pipeline_config(&a.pipeline)?;
    let format = mesh_format(&a.output)?;
    let cloud = load_input(&a.pipeline)?;
    let r = reconstruct(&cloud, &cfg)?;
    if !r.fit.stats.converged {
        log::warn!(
            "solver stopped at residual {:e} after {} iterations",
            r.fit.stats.final_residual,
            r.fit.stats.iterations
        );
    }
    save_mesh(&r.mesh, &a.output, format)?;
    Ok(fit_json(&r))
}

fn cmd_reconstruct_large(a: &LargeArgs) -> Result<Value> {
    let cfg = pipeline_config(&a.pipeline)?;
    let format = mesh_format(&a.output)?;
    let cloud = load_input(&a.pipeline)?;
    let mut lc = LargeConfig::new(cfg);
    if let Some(c) = a.chunk_size {
        lc.chunk_size = c;
    }
    lc.overlap = a.overlap;
    lc.max_in_flight = a.max_in_flight;
    lc.persist_dir = a.persist_dir.clone();
    if let Some(secs) = a.time_budget {
        lc.time_budget = Some(
            Duration::try_from_secs_f64(secs)
                .map_err(|_| Error::InvalidConfig(format!("invalid time budget {secs}")))?,
        );
    }
    let t = Instant::now();
    let r = reconstruct_large(&cloud, &lc)?;
    save_mesh(&r.mesh, &a.output, format)?;
    Ok(json!({
        "vertices": r.mesh.vertices.len(),
        "triangles": r.mesh.triangles.len(),
        "chunks": r.summaries,
        "peak_unknowns": r.peak_unknowns,
        "seconds": t.elapsed().as_secs_f64(),
    }))
}

fn load_reference(path: &Path, samples: usize, seed: u64) -> Result<OrientedPointCloud> {
    match load_mesh(path) {
        Ok(mesh) if !mesh.triangles.is_empty() => sample_mesh(&mesh, samples, seed),
        Ok(_) | Err(Error::EmptyMesh) => load_point_cloud_auto(path),
        Err(e) => match load_point_cloud_auto(path) {
            Ok(c) => Ok(c),
            Err(_) => Err(e),
        },
    }
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<Value> {
    let gt = load_reference(&a.gt, a.samples, a.seed)?;
    if gt.normals().is_none() {
        return Err(Error::InvalidInput(format!("{} has no normals", a.gt.display())));
    }
    let pred = sample_mesh(&load_mesh(&a.pred)?, a.samples, a.seed)?;
    let report = evaluate(&gt, &pred, a.xi, a.seed)?;
    serde_json::to_value(report).map_err(|e| Error::InvalidInput(e.to_string()))
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<Value> {
    let cfg = pipeline_config(&a.pipeline)?;
    let cloud = load_input(&a.pipeline)?;
    let reference = DenseReference::new(
        load_point_cloud_auto(&a.reference)?,
        a.epsilon.unwrap_or(cfg.voxel_size),
    )?;
    let r = reconstruct(&cloud, &cfg)?;
    let loss_cfg = LossConfig {
        counts: SampleCounts {
            surface: a.samples,
            band: a.samples,
            normal: a.samples,
            outside: a.samples,
        },
        seed: a.seed,
        ..LossConfig::default()
    };
    let report = loss_report(&r.model, &r.fit, &reference, &loss_cfg)?;
    Ok(json!({ "fit": fit_json(&r), "losses": report }))
}

fn run(cli: Cli) -> Result<Value> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::ReconstructLarge(a) => cmd_reconstruct_large(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    }
}

fn fail(code: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "code": code, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KERNELSURF_LOG", "warn")).init();
    let argv: Vec<OsString> = std::env::args_os().collect();
    let argv = match config::expand(argv, SUBCOMMANDS, SWITCHES) {
        Ok(a) => a,
        Err(e) => return fail(e.code(), e.to_string()),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => return fail("UsageError", e.to_string().trim().replace('\n', " ")),
        Err(e) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.code(), e.to_string()),
    }
}
