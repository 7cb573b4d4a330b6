use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use plantseg::metrics::evaluate;
use plantseg::pipeline::{segment, StageCounts, StageTiming};
use plantseg::render::{load_rgb, render_overlay, save_png};
use plantseg::scene::{load_json, load_result, load_scene, save_instances, to_json_bytes, write_atomic, SCHEMA_VERSION};
use plantseg::synth::{generate_scene, write_generated, SceneSpec};
use plantseg::{Error, PipelineConfig};

const RESULT_FILE: &str = "result.json";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "plantseg", version = version_string(), about = "Hierarchical leaf/plant segmentation post-processing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

const fn version_string() -> &'static str {
    concat!(env!("CARGO_PKG_VERSION"), " (schema 1)")
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth.
    Generate(GenerateArgs),
    /// Run the pipeline on a scene.
    Segment(SegmentArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Draw a result as a PNG overlay.
    Render(RenderArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON scene spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    plants: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Minimum plant centre separation in units of eps.
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    min_leaves: Option<usize>,
    #[arg(long)]
    max_leaves: Option<usize>,
    #[arg(long)]
    duplicates: Option<f64>,
    #[arg(long)]
    boundary: Option<f64>,
    /// Attention noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    soil: Option<usize>,
}

#[derive(Args)]
struct SegmentArgs {
    /// scene.json or the directory holding it.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// RGB image for the colour-index fallback of unscored candidates.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// DBSCAN neighbourhood radius in pixels.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    /// Mahalanobis distance threshold for outlier assignment.
    #[arg(long)]
    dth: Option<f64>,
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    overlap: Option<u32>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted result file; repeat in the same order as --gt.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    result: PathBuf,
    /// Scene the result came from; checked for matching dimensions.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Optional RGB background.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    schema_version: &'static str,
    config: &'a PipelineConfig,
    inputs: ManifestInputs,
    outputs: Vec<String>,
    timings: &'a [StageTiming],
    counts: &'a StageCounts,
}

#[derive(Serialize)]
struct ManifestInputs {
    scene: String,
    config: Option<String>,
    image: Option<String>,
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_generate(a: GenerateArgs) -> anyhow::Result<()> {
    let mut spec: SceneSpec = match &a.spec {
        Some(p) => load_json(p)?,
        None => SceneSpec::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {$(
            if let Some(v) = a.$flag { $field = v; }
        )*};
    }
    set!(
        plants => spec.plants,
        seed => spec.seed,
        width => spec.width,
        height => spec.height,
        separation => spec.min_center_separation,
        min_leaves => spec.leaves_per_plant.0,
        max_leaves => spec.leaves_per_plant.1,
        duplicates => spec.duplicate_probability,
        boundary => spec.boundary_mask_probability,
        noise => spec.attention_noise,
        soil => spec.soil_masks,
    );
    let generated = generate_scene(&spec)?;
    write_generated(&a.out, &spec, &generated)?;
    info!(
        "{} plants, {} leaves, {} candidates -> {}",
        generated.ground_truth.plants.len(),
        generated.ground_truth.leaves.len(),
        generated.scene.candidates.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_segment(a: SegmentArgs) -> anyhow::Result<()> {
    let mut cfg: PipelineConfig = match &a.config {
        Some(p) => load_json(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.eps {
        cfg.eps = v;
    }
    if let Some(v) = a.min_pts {
        cfg.init_min_pts = v;
    }
    if let Some(v) = a.dth {
        cfg.mahalanobis_threshold = v;
    }
    if let Some(v) = a.window {
        cfg.window = v;
    }
    if let Some(v) = a.overlap {
        cfg.window_overlap = v;
    }
    cfg.validate()?;
    let scene = load_scene(&a.scene)?;
    let pixels = a.image.as_deref().map(load_rgb).transpose()?;
    if let Some(px) = &pixels {
        if px.width != scene.image.width || px.height != scene.image.height {
            return Err(Error::DimensionMismatch(format!(
                "image is {}x{} but scene is {}x{}",
                px.width, px.height, scene.image.width, scene.image.height
            ))
            .into());
        }
    }
    let run = segment(&scene, &cfg, pixels.as_ref())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let result_path = a.out.join(RESULT_FILE);
    save_instances(&result_path, &run.result)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
        config: &cfg,
        inputs: ManifestInputs {
            scene: display(&a.scene),
            config: a.config.as_deref().map(display),
            image: a.image.as_deref().map(display),
        },
        outputs: vec![display(&result_path)],
        timings: &run.timings,
        counts: &run.counts,
    };
    write_atomic(&a.out.join(MANIFEST_FILE), &to_json_bytes(&manifest))?;
    info!(
        "{} candidates -> {} leaves -> {} plants ({} stem failures)",
        run.counts.candidates, run.counts.leaves, run.counts.plants, run.counts.stem_failures
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    if a.pred.len() != a.gt.len() {
        bail!(Error::Config(format!("{} --pred files but {} --gt files", a.pred.len(), a.gt.len())));
    }
    let preds = a.pred.iter().map(|p| load_result(p)).collect::<Result<Vec<_>, _>>()?;
    let gts = a.gt.iter().map(|p| load_result(p)).collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<_> = preds.iter().zip(&gts).collect();
    let report = evaluate(&pairs)?;
    println!(
        "plant: prec50 {:.4} rec50 {:.4} ap50 {:.4} pq {:.4}",
        report.plant.prec50, report.plant.rec50, report.plant.ap50, report.plant.pq
    );
    println!(
        "leaf:  prec50 {:.4} rec50 {:.4} ap50 {:.4} pq {:.4}",
        report.leaf.prec50, report.leaf.rec50, report.leaf.ap50, report.leaf.pq
    );
    if let Some(path) = &a.report {
        write_atomic(path, &to_json_bytes(&report))?;
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> anyhow::Result<()> {
    let result = load_result(&a.result)?;
    if let Some(p) = &a.scene {
        let scene = load_scene(p)?;
        if (scene.image.width, scene.image.height) != (result.image.width, result.image.height) {
            return Err(Error::DimensionMismatch(format!(
                "scene is {}x{} but result is {}x{}",
                scene.image.width, scene.image.height, result.image.width, result.image.height
            ))
            .into());
        }
    }
    let background = a.image.as_deref().map(load_rgb).transpose()?;
    let img = render_overlay(&result, background.as_ref())?;
    save_png(&a.out, &img).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(e) if !e.is_input_error() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Render(a) => cmd_render(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
