use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dgsr::config::RunConfig;
use dgsr::eval::{self, synth_scene, EvalConfig, GtView, SyntheticScene};
use dgsr::image::{tonemap_depth, tonemap_normal};
use dgsr::orchestrate::{
    execute, partition_cameras, read_message, run_cloud, run_device, run_edge, stage_synthetic_inputs, wait_for_message,
    write_message, DeviceInputs, ExecuteOptions, PartitionSpec, RunLayout, Topology, CLOUD_PLY_FILE, RUN_MANIFEST_FILE,
    TRAIN_LOG_FILE,
};
use dgsr::scene::{format, ply, CameraSet, GaussianModel};
use dgsr::{Error, Result};

const CONFIG_FILE: &str = "config.toml";
const TOPOLOGY_FILE: &str = "topology.txt";
const REPORT_FILE: &str = "report.csv";

#[derive(Parser)]
#[command(name = "dgsr", version, about = "Distributed Gaussian-splatting surface reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration. Defaults to the run's saved config, then built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct EvalFlags {
    /// Absolute F-score threshold in world units.
    #[arg(long)]
    eps: Option<f64>,
    /// Absolute TSDF voxel size in world units.
    #[arg(long)]
    voxel: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene's ground truth to a directory.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition the scene's cameras and stage each device's private inputs.
    Partition {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "(1x1)*1")]
        spec: String,
        #[arg(long)]
        run: PathBuf,
    },
    /// Train one device and publish its model.
    TrainDevice {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        device: String,
    },
    /// Aggregate one edge's device models once all are published.
    AggregateEdge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        edge: String,
    },
    /// Aggregate the edge models into the cloud model.
    AggregateCloud {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
    },
    /// Partition, train, aggregate and evaluate in one go.
    RunAll {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalFlags,
        #[arg(long, default_value = "(1x1)*1")]
        spec: String,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate a model against the synthetic scene's hold-out views and surfaces.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalFlags,
        #[arg(long)]
        run: Option<PathBuf>,
        /// Model file; defaults to the run's cloud model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Report path; defaults to stdout, or the run's report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract a TSDF mesh from a model's rendered depth.
    Mesh {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalFlags,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a run's manifest and evaluation report.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn load_config(common: &Common, run: Option<&Path>) -> Result<RunConfig> {
    let saved = run.map(|r| r.join(CONFIG_FILE)).filter(|p| p.is_file());
    let mut cfg = match (&common.config, saved) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) => RunConfig::load(&p)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn eval_config(cfg: &RunConfig, flags: &EvalFlags) -> EvalConfig {
    EvalConfig {
        eps: flags.eps.or(cfg.eval.eps),
        voxel: flags.voxel.or(cfg.eval.voxel),
        seed: cfg.seed,
        ..cfg.eval.clone()
    }
}

fn scene_for(cfg: &RunConfig) -> Result<SyntheticScene> {
    synth_scene(cfg.seed, &cfg.scene)
}

fn write_views(dir: &Path, views: &[GtView]) -> Result<()> {
    for v in views {
        let (w, h) = (v.camera.width as usize, v.camera.height as usize);
        v.rgb.save_png(&dir.join(format!("{}_rgb.png", v.camera.id)))?;
        tonemap_depth(&v.depth, &v.valid, w, h).save_png(&dir.join(format!("{}_depth.png", v.camera.id)))?;
        tonemap_normal(&v.normal).save_png(&dir.join(format!("{}_normal.png", v.camera.id)))?;
    }
    Ok(())
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scene = scene_for(cfg)?;
    let images = out.join("images");
    fs::create_dir_all(&images)?;
    let train: Vec<GtView> = scene.cameras.iter().map(|c| scene.render_gt(c)).collect::<Result<_>>()?;
    let holdout: Vec<GtView> = scene.holdout.iter().map(|c| scene.render_gt(c)).collect::<Result<_>>()?;
    write_views(&images, &train)?;
    write_views(&images, &holdout)?;
    fs::write(out.join("cameras.txt"), CameraSet::new(scene.cameras.clone())?.to_text())?;
    fs::write(out.join("holdout.txt"), CameraSet::new(scene.holdout.clone())?.to_text())?;
    let eps = cfg.eval.threshold(&scene.extent());
    let gt = scene.visible_samples(cfg.eval.gt_spacing_fraction * eps, &scene.cameras);
    ply::write_points_ply(&gt, &out.join("gt_points.ply"))?;
    println!("{} training and {} hold-out views, {} surface samples", train.len(), holdout.len(), gt.len());
    Ok(())
}

fn partition(cfg: &RunConfig, spec: &str, run: &Path) -> Result<Topology> {
    let spec: PartitionSpec = spec.parse()?;
    let scene = scene_for(cfg)?;
    let cams = CameraSet::new(scene.cameras.clone())?;
    let topo = partition_cameras(&cams, spec, &scene.extent())?;
    fs::create_dir_all(run)?;
    fs::write(run.join(CONFIG_FILE), cfg.to_toml())?;
    fs::write(run.join(TOPOLOGY_FILE), topo.to_text())?;
    stage_synthetic_inputs(&scene, &topo, &RunLayout::new(run), cfg)?;
    Ok(topo)
}

/// `(edge, devices)` pairs listed in a run's topology file.
fn read_topology(run: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let text = fs::read_to_string(run.join(TOPOLOGY_FILE))?;
    let mut edges: Vec<(String, Vec<String>)> = Vec::new();
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let device = line.split_whitespace().next().unwrap_or_default().to_string();
        let edge = device
            .split_once('_')
            .map(|(e, _)| e.to_string())
            .ok_or_else(|| Error::Parse {
                context: TOPOLOGY_FILE.into(),
                reason: format!("bad device id `{device}`"),
            })?;
        match edges.iter_mut().find(|(e, _)| *e == edge) {
            Some((_, ds)) if !ds.contains(&device) => ds.push(device),
            Some(_) => {}
            None => edges.push((edge, vec![device])),
        }
    }
    Ok(edges)
}

fn evaluate(cfg: &RunConfig, flags: &EvalFlags, model: &GaussianModel) -> Result<String> {
    let scene = scene_for(cfg)?;
    let holdout: Vec<GtView> = scene.holdout.iter().map(|c| scene.render_gt(c)).collect::<Result<_>>()?;
    let report = eval::evaluate(model, &scene, &holdout, &eval_config(cfg, flags))?;
    Ok(report.to_text())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, out } => synth(&load_config(&common, None)?, &out),
        Command::Partition { common, spec, run } => {
            let cfg = load_config(&common, None)?;
            let topo = partition(&cfg, &spec, &run)?;
            for d in topo.devices() {
                println!("{} {} cameras", d.id, d.cameras.len());
            }
            Ok(())
        }
        Command::TrainDevice { common, run, device } => {
            let cfg = load_config(&common, Some(&run))?;
            let layout = RunLayout::new(&run);
            let inputs = DeviceInputs::read(&layout.private_dir(&device))?;
            let (msg, out) = run_device(&device, &inputs, &cfg)?;
            fs::write(layout.private_dir(&device).join(TRAIN_LOG_FILE), &out.log)?;
            write_message(&layout.device_dir(&device), &msg)?;
            println!("{device}: {} primitives", out.model.len());
            Ok(())
        }
        Command::AggregateEdge { common, run, edge } => {
            let cfg = load_config(&common, Some(&run))?;
            let layout = RunLayout::new(&run);
            let devices = read_topology(&run)?
                .into_iter()
                .find(|(e, _)| *e == edge)
                .map(|(_, d)| d)
                .ok_or_else(|| Error::Config(format!("edge `{edge}` not in the topology")))?;
            let msgs = devices
                .iter()
                .map(|d| wait_for_message(&layout.device_dir(d), d, cfg.stage_timeout()))
                .collect::<Result<Vec<_>>>()?;
            let (msg, report) = run_edge(&edge, &msgs, &cfg)?;
            write_message(&layout.edge_dir(&edge), &msg)?;
            fs::write(run.join(format!("{edge}_aggregation.csv")), report.to_text())?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::AggregateCloud { common, run } => {
            let cfg = load_config(&common, Some(&run))?;
            let layout = RunLayout::new(&run);
            let msgs = read_topology(&run)?
                .iter()
                .map(|(e, _)| wait_for_message(&layout.edge_dir(e), e, cfg.stage_timeout()))
                .collect::<Result<Vec<_>>>()?;
            let (model, msg, report) = run_cloud(&msgs, &cfg)?;
            write_message(&layout.cloud_dir(), &msg)?;
            ply::write_gaussian_ply(&model, &run.join(CLOUD_PLY_FILE))?;
            fs::write(run.join("cloud_aggregation.csv"), report.to_text())?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::RunAll {
            common,
            eval,
            spec,
            run,
            workers,
        } => {
            let mut cfg = load_config(&common, None)?;
            if let Some(w) = workers {
                cfg.pipeline.workers = w;
            }
            let topo = partition(&cfg, &spec, &run)?;
            let layout = RunLayout::new(&run);
            let manifest = execute(&topo, &layout, &cfg, &ExecuteOptions::default())?;
            print!("{}", manifest.to_text());
            let model = read_message(&layout.cloud_dir(), "cloud")?.decode_model()?;
            let report = evaluate(&cfg, &eval, &model)?;
            fs::write(run.join(REPORT_FILE), &report)?;
            print!("{report}");
            Ok(())
        }
        Command::Eval {
            common,
            eval,
            run,
            model,
            out,
        } => {
            let cfg = load_config(&common, run.as_deref())?;
            let path = match (&model, &run) {
                (Some(m), _) => m.clone(),
                (None, Some(r)) => RunLayout::new(r).cloud_artifact(),
                (None, None) => return Err(Error::Config("eval needs --model or --run".into())),
            };
            let report = evaluate(&cfg, &eval, &format::load(&path)?)?;
            match out.or_else(|| run.map(|r| r.join(REPORT_FILE))) {
                Some(p) => fs::write(p, &report)?,
                None => print!("{report}"),
            }
            Ok(())
        }
        Command::Mesh {
            common,
            eval,
            model,
            out,
        } => {
            let cfg = load_config(&common, None)?;
            let scene = scene_for(&cfg)?;
            let ecfg = eval_config(&cfg, &eval);
            let extent = scene.extent();
            let mesh = eval::model_mesh(&format::load(&model)?, &scene.cameras, &extent, ecfg.voxel_size(&extent), &ecfg)?;
            ply::write_mesh_ply(&mesh, &out)?;
            println!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
            Ok(())
        }
        Command::Report { run } => {
            for f in [RUN_MANIFEST_FILE, REPORT_FILE] {
                match fs::read_to_string(run.join(f)) {
                    Ok(t) => print!("{t}"),
                    Err(_) => eprintln!("{f}: not found"),
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
