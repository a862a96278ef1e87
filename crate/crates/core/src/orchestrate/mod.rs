//! Device, edge and cloud agents and the barrier-synchronized pipeline
//! that connects them through the directory protocol.

pub mod partition;
pub mod protocol;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::aggregate::{aggregate, AggregationConfig, AggregationReport, LocalModel};
use crate::config::{derive_seed, RunConfig};
use crate::error::{Error, Result};
use crate::eval::SyntheticScene;
use crate::image::ImageBuf;
use crate::math::Vec3;
use crate::scene::{ply, Camera, CameraSet, GaussianModel};
use crate::train::{init_from_points, train, TrainOutcome, TrainView, TrainerConfig};

pub use partition::{device_id, edge_grid, edge_id, partition_cameras, DeviceNode, EdgeNode, PartitionSpec, Topology};
pub use protocol::{privacy_scan, read_message, write_message, AgentMessage, CameraList, Finding, Stage};

pub const IMAGES_FILE: &str = "images.txt";
pub const POINTS_FILE: &str = "points.txt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.txt";
pub const CLOUD_PLY_FILE: &str = "model.ply";
pub const CLOUD_ID: &str = "cloud";

/// Paths of one run under its root directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    /// Device-local inputs. Never read by any other agent.
    pub fn private_dir(&self, device: &str) -> PathBuf {
        self.root.join("private").join(device)
    }

    pub fn device_dir(&self, device: &str) -> PathBuf {
        self.root.join("devices").join(device)
    }

    pub fn edge_dir(&self, edge: &str) -> PathBuf {
        self.root.join("edges").join(edge)
    }

    pub fn cloud_dir(&self) -> PathBuf {
        self.root.join(CLOUD_ID)
    }

    /// Directories holding inter-agent artifacts.
    pub fn exchange_dirs(&self) -> Vec<PathBuf> {
        vec![self.root.join("devices"), self.root.join("edges"), self.cloud_dir()]
    }

    pub fn cloud_artifact(&self) -> PathBuf {
        self.cloud_dir().join(protocol::ARTIFACT_FILE)
    }
}

/// A device's private training inputs: cameras with image paths and an
/// initial colored point cloud.
#[derive(Clone, Debug, Default)]
pub struct DeviceInputs {
    pub cameras: CameraSet,
    pub points: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
}

impl DeviceInputs {
    /// Writes `images.txt` (camera line followed by the image path) and
    /// `points.txt` (`x y z r g b`).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut images = String::new();
        for c in &self.cameras {
            let path = c.image_ref.as_ref().ok_or_else(|| Error::InvalidCamera {
                id: c.id.clone(),
                reason: "no image path".into(),
            })?;
            let _ = writeln!(images, "{} {}", c.to_line(), path.display());
        }
        fs::write(dir.join(IMAGES_FILE), images)?;
        let mut pts = String::new();
        for (p, c) in self.points.iter().zip(&self.colors) {
            let _ = writeln!(pts, "{} {} {} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]);
        }
        fs::write(dir.join(POINTS_FILE), pts)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<DeviceInputs> {
        let images = fs::read_to_string(dir.join(IMAGES_FILE))?;
        let mut cameras = CameraSet::default();
        for line in images.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 20 {
                return Err(Error::parse(IMAGES_FILE, format!("expected a camera line and a path: `{line}`")));
            }
            let mut cam = Camera::from_line(&fields[..19].join(" "))?;
            let rel = fields[19..].join(" ");
            let path = if Path::new(&rel).is_absolute() {
                PathBuf::from(rel)
            } else {
                dir.join(rel)
            };
            cam.image_ref = Some(path);
            cameras.insert(cam)?;
        }
        let mut out = DeviceInputs {
            cameras,
            ..Default::default()
        };
        for line in fs::read_to_string(dir.join(POINTS_FILE))?.lines().filter(|l| !l.trim().is_empty()) {
            let v = line
                .split_whitespace()
                .map(|s| s.parse::<f64>().map_err(|e| Error::parse(POINTS_FILE, e.to_string())))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != 6 {
                return Err(Error::parse(POINTS_FILE, format!("expected 6 fields, found {}", v.len())));
            }
            out.points.push(Vec3::new(v[0], v[1], v[2]));
            out.colors.push([v[3], v[4], v[5]]);
        }
        Ok(out)
    }

    pub fn load_views(&self) -> Result<Vec<TrainView>> {
        self.cameras
            .iter()
            .map(|c| {
                let path = c.image_ref.as_deref().ok_or_else(|| Error::InvalidCamera {
                    id: c.id.clone(),
                    reason: "no image path".into(),
                })?;
                Ok(TrainView {
                    camera: c.clone(),
                    image: ImageBuf::load_png(path)?,
                })
            })
            .collect()
    }
}

/// Renders each device's ground-truth images into its private directory
/// and writes its inputs. Returns every image path written.
pub fn stage_synthetic_inputs(scene: &SyntheticScene, topo: &Topology, layout: &RunLayout, cfg: &RunConfig) -> Result<Vec<String>> {
    let mut paths = Vec::new();
    for d in topo.devices() {
        let dir = layout.private_dir(&d.id);
        fs::create_dir_all(dir.join("images"))?;
        let mut inputs = DeviceInputs::default();
        for cam in &d.cameras {
            let gt = scene.render_gt(cam)?;
            let path = dir.join("images").join(format!("{}.png", cam.id));
            gt.rgb.save_png(&path)?;
            paths.push(path.to_string_lossy().into_owned());
            inputs.cameras.insert(Camera {
                image_ref: Some(PathBuf::from(format!("images/{}.png", cam.id))),
                ..cam.clone()
            })?;
        }
        let (points, colors) = scene.observed_points(
            d.cameras.as_slice(),
            cfg.init.stride,
            cfg.init.noise,
            derive_seed(cfg.seed, &format!("{}.init", d.id)),
        );
        inputs.points = points;
        inputs.colors = colors;
        inputs.write(&dir)?;
    }
    Ok(paths)
}

fn device_trainer(id: &str, cfg: &RunConfig) -> TrainerConfig {
    TrainerConfig {
        seed: derive_seed(cfg.seed, id),
        ..cfg.trainer.clone()
    }
}

fn aggregator(id: &str, cfg: &RunConfig) -> AggregationConfig {
    AggregationConfig {
        seed: derive_seed(cfg.seed, id),
        ..cfg.aggregation.clone()
    }
}

/// Initializes and trains one device model and packages it for its edge.
pub fn run_device(id: &str, inputs: &DeviceInputs, cfg: &RunConfig) -> Result<(AgentMessage, TrainOutcome)> {
    let t0 = Instant::now();
    let views = inputs.load_views()?;
    let init = init_from_points(id, cfg.sh_degree, &inputs.points, &inputs.colors)?;
    let mut out = train(init, &views, &device_trainer(id, cfg), &cfg.scheduled_weights())?;
    out.model.model_id = id.to_string();
    out.model.canonicalize();
    let msg = AgentMessage::new(id, Stage::DeviceToEdge, &out.model, CameraList::from(&inputs.cameras))
        .with("primitives", out.model.len())
        .with("initial_points", inputs.points.len())
        .with("pruned", out.pruned)
        .with("final_loss", out.last.total)
        .with("seconds", format!("{:.3}", t0.elapsed().as_secs_f64()));
    Ok((msg, out))
}

fn aggregate_messages(id: &str, stage: Stage, msgs: &[AgentMessage], cfg: &RunConfig) -> Result<(GaussianModel, AgentMessage, AggregationReport)> {
    let t0 = Instant::now();
    let locals = msgs
        .iter()
        .map(|m| {
            Ok(LocalModel {
                model: m.decode_model()?,
                cameras: m.cameras.to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut model, cameras, report) = aggregate(id, &locals, &aggregator(id, cfg), &cfg.scheduled_weights())?;
    model.canonicalize();
    let msg = AgentMessage::new(id, stage, &model, CameraList::from(cameras.as_slice()))
        .with("inputs", msgs.len())
        .with("merged", report.merged)
        .with("primitives", model.len())
        .with("seconds", format!("{:.3}", t0.elapsed().as_secs_f64()));
    Ok((model, msg, report))
}

/// Aggregates the device models of edge `id`.
pub fn run_edge(id: &str, devices: &[AgentMessage], cfg: &RunConfig) -> Result<(AgentMessage, AggregationReport)> {
    let (_, msg, report) = aggregate_messages(id, Stage::EdgeToCloud, devices, cfg)?;
    Ok((msg, report))
}

/// Aggregates the edge models into the final model.
pub fn run_cloud(edges: &[AgentMessage], cfg: &RunConfig) -> Result<(GaussianModel, AgentMessage, AggregationReport)> {
    aggregate_messages(CLOUD_ID, Stage::Cloud, edges, cfg)
}

/// Reads `sender`'s message, polling until `timeout` while it is absent.
pub fn wait_for_message(dir: &Path, sender: &str, timeout: Duration) -> Result<AgentMessage> {
    let start = Instant::now();
    loop {
        match read_message(dir, sender) {
            Err(Error::MissingArtifact { .. }) if start.elapsed() < timeout => std::thread::sleep(Duration::from_millis(50)),
            r => return r,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExecuteOptions {
    /// Overrides the configured worker count.
    pub workers: Option<usize>,
    /// Device workers that die before publishing, for failure testing.
    pub fail_devices: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: String,
    pub agents: usize,
    pub seconds: f64,
    pub peak_primitives: usize,
    pub peak_bytes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunManifest {
    pub spec: String,
    pub seed: u64,
    pub workers: usize,
    pub stages: Vec<StageRecord>,
    /// `(agent, artifact sha256)`; the hash is `missing` for agents that
    /// did not publish.
    pub artifacts: Vec<(String, String)>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn completed(&self) -> bool {
        self.error.is_none()
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "spec={}", self.spec);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "workers={}", self.workers);
        let _ = writeln!(s, "status={}", if self.completed() { "complete" } else { "failed" });
        if let Some(e) = &self.error {
            let _ = writeln!(s, "error={}", e.replace('\n', " "));
        }
        for st in &self.stages {
            let _ = writeln!(s, "stage.{}.agents={}", st.stage, st.agents);
            let _ = writeln!(s, "stage.{}.seconds={:.3}", st.stage, st.seconds);
            let _ = writeln!(s, "stage.{}.peak_primitives={}", st.stage, st.peak_primitives);
            let _ = writeln!(s, "stage.{}.peak_bytes={}", st.stage, st.peak_bytes);
        }
        for (agent, sha) in &self.artifacts {
            let _ = writeln!(s, "artifact.{agent}={sha}");
        }
        s
    }
}

/// Runs `jobs` on `workers` threads, returning results in job order.
fn run_pool<T: Send>(jobs: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..jobs).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs {
                    break;
                }
                let r = f(i);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every job ran")).collect()
}

fn stage_record(stage: &str, msgs: &[&AgentMessage], seconds: f64) -> StageRecord {
    StageRecord {
        stage: stage.to_string(),
        agents: msgs.len(),
        seconds,
        peak_primitives: msgs.iter().filter_map(|m| m.meta("primitives")?.parse().ok()).max().unwrap_or(0),
        peak_bytes: msgs.iter().map(|m| m.model.len()).max().unwrap_or(0),
    }
}

/// Trains every device, then aggregates each edge once all of its devices
/// have published, then the cloud once every edge has. The run manifest is
/// written to the run root whether or not the run completes.
pub fn execute(topo: &Topology, layout: &RunLayout, cfg: &RunConfig, opts: &ExecuteOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let workers = opts.workers.unwrap_or(cfg.pipeline.workers).max(1);
    let mut manifest = RunManifest {
        spec: topo.spec.to_string(),
        seed: cfg.seed,
        workers,
        ..Default::default()
    };
    let result = execute_stages(topo, layout, cfg, opts, workers, &mut manifest);
    for d in topo.devices() {
        manifest.artifacts.push((d.id.clone(), artifact_hash(&layout.device_dir(&d.id))));
    }
    for e in &topo.edges {
        manifest.artifacts.push((e.id.clone(), artifact_hash(&layout.edge_dir(&e.id))));
    }
    manifest.artifacts.push((CLOUD_ID.into(), artifact_hash(&layout.cloud_dir())));
    if let Err(e) = &result {
        manifest.error = Some(e.to_string());
    }
    fs::create_dir_all(&layout.root)?;
    fs::write(layout.root.join(RUN_MANIFEST_FILE), manifest.to_text())?;
    result.map(|_| manifest)
}

fn artifact_hash(dir: &Path) -> String {
    fs::read(dir.join(protocol::ARTIFACT_FILE))
        .map(|b| protocol::sha256_hex(&b))
        .unwrap_or_else(|_| "missing".into())
}

fn execute_stages(
    topo: &Topology,
    layout: &RunLayout,
    cfg: &RunConfig,
    opts: &ExecuteOptions,
    workers: usize,
    manifest: &mut RunManifest,
) -> Result<()> {
    for dir in layout.exchange_dirs() {
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
    }
    let devices: Vec<&DeviceNode> = topo.devices().collect();
    let t0 = Instant::now();
    let device_results = run_pool(devices.len(), workers, |i| -> Result<AgentMessage> {
        let d = devices[i];
        if opts.fail_devices.contains(&d.id) {
            return Err(Error::StageFailed {
                stage: "devices".into(),
                reason: format!("worker for `{}` terminated", d.id),
            });
        }
        let private = layout.private_dir(&d.id);
        let inputs = DeviceInputs::read(&private)?;
        let (msg, out) = run_device(&d.id, &inputs, cfg)?;
        fs::write(private.join(TRAIN_LOG_FILE), &out.log)?;
        write_message(&layout.device_dir(&d.id), &msg)?;
        log::info!("device {} published {} primitives", d.id, out.model.len());
        Ok(msg)
    });
    let published: Vec<&AgentMessage> = device_results.iter().filter_map(|r| r.as_ref().ok()).collect();
    manifest.stages.push(stage_record("devices", &published, t0.elapsed().as_secs_f64()));
    for (d, r) in devices.iter().zip(&device_results) {
        if let Err(e) = r {
            log::error!("device {} failed: {e}", d.id);
        }
    }

    // Edges read only what the barrier let through; an absent device
    // artifact fails its edge.
    let t1 = Instant::now();
    let edge_results = run_pool(topo.edges.len(), workers, |j| -> Result<AgentMessage> {
        let edge = &topo.edges[j];
        let inputs = edge
            .devices
            .iter()
            .map(|d| read_message(&layout.device_dir(&d.id), &d.id))
            .collect::<Result<Vec<_>>>()?;
        let (msg, report) = run_edge(&edge.id, &inputs, cfg)?;
        write_message(&layout.edge_dir(&edge.id), &msg)?;
        fs::write(layout.root.join(format!("{}_aggregation.csv", edge.id)), report.to_text())?;
        Ok(msg)
    });
    let edge_msgs = edge_results.into_iter().collect::<Result<Vec<_>>>();
    let edge_msgs = match edge_msgs {
        Ok(m) => m,
        Err(e) => {
            manifest.stages.push(stage_record("edges", &[], t1.elapsed().as_secs_f64()));
            return Err(e);
        }
    };
    manifest
        .stages
        .push(stage_record("edges", &edge_msgs.iter().collect::<Vec<_>>(), t1.elapsed().as_secs_f64()));

    let t2 = Instant::now();
    let inputs = topo
        .edges
        .iter()
        .map(|e| read_message(&layout.edge_dir(&e.id), &e.id))
        .collect::<Result<Vec<_>>>()?;
    let (model, msg, report) = run_cloud(&inputs, cfg)?;
    write_message(&layout.cloud_dir(), &msg)?;
    ply::write_gaussian_ply(&model, &layout.root.join(CLOUD_PLY_FILE))?;
    fs::write(layout.root.join("cloud_aggregation.csv"), report.to_text())?;
    manifest.stages.push(stage_record("cloud", &[&msg], t2.elapsed().as_secs_f64()));
    Ok(())
}
