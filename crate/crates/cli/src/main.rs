use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use planar_splat::config::{train_config_hash, RunConfig};
use planar_splat::dataio::{
    export_ply, load_checkpoint, load_dataset, load_meta, read_map_f32, save_checkpoint, synthetic_meta, write_dataset,
    write_map_f32, DatasetMeta, PlyOptions,
};
use planar_splat::geometry::{CameraView, Vec3};
use planar_splat::metrics::{evaluate, face_rects, instance_rects, sample_rects, MetricReport, SampledSurface};
use planar_splat::optimizer::{merge_planes, run_until, OptimState, PlaneInstance};
use planar_splat::renderer::{render_view, RenderedMaps};
use planar_splat::scene_init::initialize;
use planar_splat::synthetic::{generate, render_views};

const CONFIG_FILE: &str = "config.toml";
const CHECKPOINT_FILE: &str = "scene.ckpt";
const INSTANCES_FILE: &str = "instances.json";
const LOSS_FILE: &str = "loss.csv";
const PLY_FILE: &str = "planes.ply";

#[derive(Parser)]
#[command(name = "psplat", version, about = "Planar scene reconstruction by rectangle splatting")]
struct Cli {
    /// Worker threads; 0 or absent uses the hardware parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML config file applied on top of the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key; repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic box room and write it as a dataset.
    Synth(SynthArgs),
    /// Optimize primitives against a dataset and export the planes.
    Optimize(OptimizeArgs),
    /// Score a reconstruction against the dataset's ground-truth planes.
    Eval(EvalArgs),
    /// Render depth, normal and alpha maps of one view.
    Render(RenderArgs),
    /// Convert a 16-bit millimeter PNG depth image into a depth map.
    ConvertDepth(ConvertArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    boxes: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iters: Option<u64>,
    /// depth, sphere or gt.
    #[arg(long)]
    init: Option<String>,
    /// Initial radii of sphere-mode primitives.
    #[arg(long)]
    radii: Option<f64>,
    #[arg(long)]
    primitives: Option<usize>,
    #[arg(long)]
    merge_offset: Option<f64>,
    /// Continue from a checkpoint written under the same config.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the loss every this many iterations.
    #[arg(long, default_value_t = 500)]
    log_every: u64,
    /// Binary instead of ASCII PLY.
    #[arg(long)]
    binary_ply: bool,
    /// Snap exported rectangles onto their instance planes.
    #[arg(long)]
    project: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset directory with ground-truth planes.
    #[arg(long)]
    data: PathBuf,
    /// Run directory written by `optimize`.
    #[arg(long, required_unless_present = "gt_self")]
    run: Option<PathBuf>,
    /// Evaluate the ground truth against itself.
    #[arg(long, conflicts_with = "run")]
    gt_self: bool,
    #[arg(long)]
    fscore_tau: Option<f64>,
    /// Report directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    run: PathBuf,
    /// Camera id from cameras.txt.
    #[arg(long)]
    view: u32,
    /// Sharpness; defaults to the schedule value at the checkpoint iteration.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Raw units per meter.
    #[arg(long, default_value_t = 1000.0)]
    scale: f64,
}

fn flag<T: ToString>(overrides: &mut Vec<String>, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        overrides.push(format!("{key}={}", v.to_string()));
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut overrides = cli.set.clone();
    flag(&mut overrides, "run.threads", &cli.threads);
    match &cli.command {
        Command::Synth(a) => {
            flag(&mut overrides, "synth.boxes", &a.boxes);
            flag(&mut overrides, "synth.views", &a.views);
            flag(&mut overrides, "synth.seed", &a.seed);
            flag(&mut overrides, "synth.image_width", &a.width);
            flag(&mut overrides, "synth.image_height", &a.height);
        }
        Command::Optimize(a) => {
            flag(&mut overrides, "optim.iterations", &a.iters);
            flag(&mut overrides, "init.mode", &a.init.as_ref().map(|m| format!("\"{m}\"")));
            flag(&mut overrides, "init.sphere_radius_value", &a.radii);
            flag(&mut overrides, "init.n_primitives", &a.primitives);
            flag(&mut overrides, "optim.merge_offset", &a.merge_offset);
        }
        Command::Eval(a) => flag(&mut overrides, "metrics.fscore_tau", &a.fscore_tau),
        Command::Render(_) | Command::ConvertDepth(_) => {}
    }
    Ok(RunConfig::load(cli.config.as_deref(), std::env::vars(), &overrides)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_text(&dir.join(CONFIG_FILE), &cfg.to_toml())
}

fn cmd_synth(a: &SynthArgs, cfg: &RunConfig) -> Result<()> {
    let scene = generate(&cfg.synth)?;
    let rendered = render_views(&scene, &cfg.synth);
    let (views, instances): (Vec<CameraView>, Vec<Vec<u32>>) = rendered.into_iter().unzip();
    write_dataset(&a.out, &views, Some(&instances), &synthetic_meta(&scene))?;
    echo_config(&a.out, cfg)?;
    println!("{} faces, {} views -> {}", scene.faces.len(), views.len(), a.out.display());
    write_json(
        &a.out.join("synth.json"),
        &serde_json::json!({ "faces": scene.faces.len(), "views": views.len(), "boxes": scene.boxes.len() }),
    )
}

fn gt_of(meta: &DatasetMeta) -> Option<(&[planar_splat::synthetic::GtFace], Vec3)> {
    (!meta.gt_planes.is_empty()).then(|| (&meta.gt_planes[..], Vec3::from(meta.scene_center)))
}

fn cmd_optimize(a: &OptimizeArgs, cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(&a.data, cfg.dataset.stride)?;
    let train = cfg.train();
    let hash = train_config_hash(&train);
    let mut state = match &a.resume {
        Some(path) => load_checkpoint(path, Some(&hash))?.0,
        None => {
            let init = initialize(&ds.views, gt_of(&ds.meta), &cfg.init)?;
            OptimState::new(init.primitives, init.scene_center)
        }
    };
    println!(
        "{} views, {} primitives, iterations {}..{}",
        ds.views.len(),
        state.primitives.len(),
        state.iteration,
        train.optim.iterations
    );
    let every = a.log_every.max(1);
    let log = run_until(&mut state, &ds.views, &train, train.optim.iterations, |r| {
        if r.iteration % every == 0 {
            println!("iteration {:>6}  loss {:.6}  lambda {:7.2}  primitives {}", r.iteration, r.loss, r.lambda, r.primitives);
        }
    })?;
    let instances = merge_planes(&state.primitives, &state.scene_center, &train.optim.merge_params());

    echo_config(&a.out, cfg)?;
    save_checkpoint(&a.out.join(CHECKPOINT_FILE), &state, &hash)?;
    write_json(&a.out.join(INSTANCES_FILE), &instances)?;
    let mut csv = String::from("iteration,loss,lambda,primitives\n");
    for r in &log {
        csv.push_str(&format!("{},{},{},{}\n", r.iteration, r.loss, r.lambda, r.primitives));
    }
    write_text(&a.out.join(LOSS_FILE), &csv)?;
    let opts = PlyOptions {
        binary: a.binary_ply,
        project: a.project,
    };
    export_ply(&a.out.join(PLY_FILE), &instances, &state.primitives, &state.scene_center, opts)?;
    let summary = serde_json::json!({
        "primitives": state.primitives.len(),
        "instances": instances.len(),
        "iterations": state.iteration,
        "final_loss": log.last().map(|r| r.loss),
    });
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("{} primitives, {} instances -> {}", state.primitives.len(), instances.len(), a.out.display());
    Ok(())
}

fn read_instances(run: &Path) -> Result<Vec<PlaneInstance>> {
    let path = run.join(INSTANCES_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn report_table(r: &MetricReport) -> String {
    let p = &r.protocol;
    let g = &r.geometry;
    let s = &r.segmentation;
    let pl = &r.planar;
    format!(
        "chamfer            {:.4} m\n\
         f-score            {:.2} %  (precision {:.4}, recall {:.4})\n\
         voi                {:.4} nats\n\
         ri                 {:.4}\n\
         sc                 {:.4}\n\
         planar fidelity    {:.4} m\n\
         planar accuracy    {:.4} m\n\
         planar chamfer     {:.4} m  ({} of {} planes matched)\n\
         protocol           tau {} m, density {} pts/m^2, top {}, unmatched penalty {} m, seed {}\n",
        g.chamfer,
        g.fscore,
        g.precision,
        g.recall,
        s.voi,
        s.ri,
        s.sc,
        pl.fidelity,
        pl.accuracy,
        pl.chamfer,
        pl.matched,
        pl.evaluated,
        p.fscore_tau,
        p.density,
        p.top_k,
        p.unmatched_penalty,
        p.seed
    )
}

fn cmd_eval(a: &EvalArgs, cfg: &RunConfig) -> Result<()> {
    let meta = load_meta(&a.data)?;
    if meta.gt_planes.is_empty() {
        bail!("{}: dataset has no ground-truth planes to evaluate against", a.data.display());
    }
    let m = &cfg.metrics;
    let gt = sample_rects(&face_rects(&meta.gt_planes), m.density, m.seed)?;
    let pred: SampledSurface = match &a.run {
        Some(run) => {
            let (state, _) = load_checkpoint(&run.join(CHECKPOINT_FILE), None)?;
            let instances = read_instances(run)?;
            sample_rects(&instance_rects(&instances, &state.primitives), m.density, m.seed)?
        }
        None => gt.clone(),
    };
    let area: HashMap<u32, f64> = meta.gt_planes.iter().map(|f| (f.id, f.area())).collect();
    let report = evaluate(&pred, &gt, &area, m)?;
    let table = report_table(&report);
    print!("{table}");
    if let Some(dir) = a.out.as_ref().or(a.run.as_ref()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("report.json"), &report)?;
        write_text(&dir.join("report.txt"), &table)?;
    }
    Ok(())
}

fn preview(path: &Path, width: u32, height: u32, rgb: impl Iterator<Item = [f64; 3]>) -> Result<()> {
    let bytes: Vec<u8> = rgb.flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)).collect();
    image::save_buffer(path, &bytes, width, height, image::ColorType::Rgb8).with_context(|| format!("writing {}", path.display()))
}

fn write_render(dir: &Path, maps: &RenderedMaps) -> Result<()> {
    let (w, h) = (maps.width, maps.height);
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_map_f32(&dir.join("depth.f32"), w, h, &maps.depth.iter().map(|v| *v as f32).collect::<Vec<_>>())?;
    let normal: Vec<f32> = maps.normal.iter().flat_map(|n| [n.x as f32, n.y as f32, n.z as f32]).collect();
    write_map_f32(&dir.join("normal.f32"), w, h, &normal)?;
    write_map_f32(&dir.join("alpha.f32"), w, h, &maps.alpha.iter().map(|v| *v as f32).collect::<Vec<_>>())?;

    let valid = maps.depth.iter().copied().filter(|d| *d > 0.0);
    let (lo, hi) = valid.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    preview(
        &dir.join("depth.png"),
        w,
        h,
        maps.depth.iter().map(|d| {
            let g = if *d > 0.0 { 1.0 - (d - lo) / span } else { 0.0 };
            [g; 3]
        }),
    )?;
    preview(&dir.join("normal.png"), w, h, maps.normal.iter().map(|n| [0.5 * (n.x + 1.0), 0.5 * (n.y + 1.0), 0.5 * (n.z + 1.0)]))?;
    preview(&dir.join("alpha.png"), w, h, maps.alpha.iter().map(|a| [*a; 3]))
}

fn cmd_render(a: &RenderArgs, cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(&a.data, 1)?;
    let Some(view) = ds.views.iter().find(|v| v.id == a.view) else {
        let ids: Vec<u32> = ds.views.iter().map(|v| v.id).collect();
        bail!(
            "no view with id {} in {} (ids {}..={})",
            a.view,
            a.data.display(),
            ids.iter().min().unwrap_or(&0),
            ids.iter().max().unwrap_or(&0)
        );
    };
    let (state, _) = load_checkpoint(&a.run.join(CHECKPOINT_FILE), None)?;
    let train = cfg.train();
    let lambda = a.lambda.unwrap_or_else(|| train.splat.lambda(state.iteration));
    if !(lambda > 0.0) {
        bail!("lambda must be positive, got {lambda}");
    }
    let maps = render_view(view, &state.primitives, lambda, &train.render_settings());
    write_render(&a.out, &maps)?;
    let covered = maps.alpha.iter().filter(|a| **a > 0.99).count();
    println!(
        "view {} at lambda {lambda:.2}: {} of {} pixels covered -> {}",
        view.id,
        covered,
        maps.alpha.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    if !(a.scale > 0.0) {
        bail!("scale must be positive, got {}", a.scale);
    }
    let img = image::open(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let image::DynamicImage::ImageLuma16(depth) = img else {
        bail!("{}: expected a single-channel 16-bit PNG, found {:?}", a.input.display(), img.color());
    };
    let meters: Vec<f32> = depth.pixels().map(|p| (p.0[0] as f64 / a.scale) as f32).collect();
    write_map_f32(&a.output, depth.width(), depth.height(), &meters)?;
    let (w, h, _) = read_map_f32(&a.output, 1)?;
    println!("{}x{} depth map -> {}", w, h, a.output.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    if cfg.run.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &cfg),
        Command::Optimize(a) => cmd_optimize(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Render(a) => cmd_render(a, &cfg),
        Command::ConvertDepth(a) => cmd_convert(a),
    }
}
