//! The `nfseg` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nfseg_core::cluster;
use nfseg_core::eval::{evaluate_renders, render_test_views, EvalOptions};
use nfseg_core::render::{render_view, RenderOptions};
use nfseg_core::synthetic::make_synthetic_scene;
use nfseg_core::train::{Stage, TrainState};
use nfseg_core::{Scene, SyntheticSpec};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{self, Profile};
use crate::error::{Error, Result};
use crate::image_io::write_png;
use crate::manifest::{scene_hash, RunManifest};
use crate::pipeline::{stage_checkpoint, RunSummary, StageSelect, Trainer};
use crate::{report, scene_io, visualize};

#[derive(Debug, Parser)]
#[command(name = "nfseg", version, about = "Object segmentation with a radiance field and frozen features")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural scene with masks and one-hot-noise features.
    MakeSynthetic(MakeSynthetic),
    /// Run stage 1 (radiance), stage 2 (segmentation) or both.
    Train(Train),
    /// Render color, depth and segmentation images of chosen views.
    Render(Render),
    /// Cluster test-view renders and score them against the masks.
    Eval(Eval),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneKind {
    Sphere,
    TwoObjects,
}

#[derive(Debug, Args)]
pub struct MakeSynthetic {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SceneKind::Sphere)]
    pub kind: SceneKind,
    /// JSON scene description; replaces --kind.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub views: Option<usize>,
    /// Every n-th view (starting at 0) is held out.
    #[arg(long)]
    pub test_every: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    #[arg(long, value_enum, default_value_t = StageSelect::All)]
    pub stage: StageSelect,
    /// Checkpoint to resume or to start stage 2 from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct Render {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated view ids, or `train`, `test`, `all`.
    #[arg(long, default_value = "test")]
    pub views: String,
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct Eval {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 32)]
    pub samples: usize,
    #[arg(long)]
    pub quiet: bool,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write(p: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::io(p, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::MakeSynthetic(c) => make_synthetic(c),
        Command::Train(c) => train(c),
        Command::Render(c) => render(c),
        Command::Eval(c) => eval(c),
    }
}

pub fn synthetic_spec(c: &MakeSynthetic) -> Result<SyntheticSpec> {
    let mut spec = match &c.spec {
        Some(p) => {
            let text = fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice(&text).map_err(|source| Error::Json { path: p.clone(), source })?
        }
        None => match c.kind {
            SceneKind::Sphere => SyntheticSpec::single_sphere(),
            SceneKind::TwoObjects => SyntheticSpec::two_objects(),
        },
    };
    if let Some(v) = c.views {
        spec.views = v;
    }
    if let Some(v) = c.test_every {
        spec.test_every = v;
    }
    if let Some(v) = c.width {
        spec.width = v;
    }
    if let Some(v) = c.height {
        spec.height = v;
    }
    if let Some(v) = c.feature_noise {
        spec.feature_noise = v;
    }
    spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
    Ok(spec)
}

fn make_synthetic(c: MakeSynthetic) -> Result<()> {
    let spec = synthetic_spec(&c)?;
    let scene = make_synthetic_scene(&spec, c.seed)?;
    let written = scene_io::save_scene(&scene, &c.out)?;
    let spec_path = c.out.join("synthetic.json");
    let mut json = serde_json::to_vec_pretty(&spec).expect("spec serializes");
    json.push(b'\n');
    write(&spec_path, &json)?;
    let mut m = RunManifest::new("make-synthetic", c.seed);
    m.scene_hash = Some(scene_hash(&c.out)?);
    m.outputs = written
        .iter()
        .chain([&spec_path])
        .map(|p| p.strip_prefix(&c.out).unwrap_or(p).display().to_string())
        .collect();
    // no timings, so that equal seeds give equal directories
    m.write(&c.out.join("manifest.json"))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint::load(path)
}

fn train(c: Train) -> Result<()> {
    let mut config = config::load_config(c.config.as_deref(), c.profile)?;
    if let Some(s) = c.seed {
        config.seed = s;
    }
    let scene = scene_io::load_scene(&c.scene)?;
    create_dir(&c.out)?;
    let trainer = Trainer {
        scene: &scene,
        config: &config,
        out: &c.out,
        verbose: !c.quiet,
    };
    let mut summary = RunSummary::default();
    let mut inputs = vec![c.scene.display().to_string()];
    let resume = |p: &Path| -> Result<TrainState> {
        let ck = load_checkpoint(p)?;
        if ck.config.field != config.field || ck.state.seed != config.seed {
            return Err(Error::Usage(format!(
                "{} was written with a different field config or seed",
                p.display()
            )));
        }
        Ok(ck.state)
    };
    match c.stage {
        StageSelect::One | StageSelect::All => {
            let mut state = match &c.checkpoint {
                Some(p) => {
                    inputs.push(p.display().to_string());
                    resume(p)?
                }
                None => TrainState::new(&config)?,
            };
            if state.stage == Stage::Radiance {
                trainer.stage1(&mut state, &mut summary)?;
            }
            if c.stage == StageSelect::All {
                trainer.stage2(&mut state, &mut summary)?;
            }
        }
        StageSelect::Two => {
            let p = c
                .checkpoint
                .clone()
                .unwrap_or_else(|| stage_checkpoint(&c.out, Stage::Radiance));
            inputs.push(p.display().to_string());
            let mut state = resume(&p)?;
            trainer.stage2(&mut state, &mut summary)?;
        }
    }
    let cfg_path = c.out.join("config.toml");
    write(&cfg_path, config::to_toml(&config).as_bytes())?;
    let mut m = RunManifest::new("train", config.seed);
    m.config = Some(config);
    m.scene_hash = Some(scene_hash(&c.scene)?);
    m.inputs = inputs;
    m.outputs = summary
        .outputs
        .iter()
        .chain([&cfg_path])
        .map(|p| p.display().to_string())
        .collect();
    m.timings.extend(summary.timings);
    m.write(&c.out.join("train_manifest.json"))
}

fn select_views(scene: &Scene, spec: &str) -> Result<Vec<usize>> {
    match spec {
        "all" => Ok((0..scene.views.len()).collect()),
        "train" => Ok(scene.split.train.clone()),
        "test" => Ok(scene.split.test.clone()),
        list => list
            .split(',')
            .map(|id| {
                scene
                    .views
                    .iter()
                    .position(|v| v.id == id.trim())
                    .ok_or_else(|| Error::Usage(format!("unknown view id {id:?}")))
            })
            .collect(),
    }
}

fn render(c: Render) -> Result<()> {
    let ck = load_checkpoint(&c.checkpoint)?;
    let scene = scene_io::load_scene(&c.scene)?;
    let picks = select_views(&scene, &c.views)?;
    if picks.is_empty() {
        return Err(Error::Usage("no views selected".into()));
    }
    create_dir(&c.out)?;
    let t = Instant::now();
    let cam = &scene.camera;
    let (w, h) = (cam.width, cam.height);
    let opts = if ck.state.stage == Stage::Segmentation {
        RenderOptions::FULL
    } else {
        RenderOptions::RADIANCE
    };
    let renders = picks
        .iter()
        .map(|&i| render_view(&ck.state.params, cam, &scene.views[i].pose, c.samples, 4096, opts))
        .collect::<nfseg_core::Result<Vec<_>>>()?;
    let labels = if opts.seg != nfseg_core::render::SegMode::Off {
        let dim = renders[0].seg_channels;
        let pooled: Vec<f64> = renders.iter().flat_map(|r| r.seg.iter().copied()).collect();
        let model = cluster::fit_kmeans(
            &pooled,
            dim,
            c.clusters,
            c.seed,
            cluster::DEFAULT_MAX_ITER,
            cluster::DEFAULT_TOL,
        )?;
        Some(
            renders
                .iter()
                .map(|r| cluster::assign(&model, &r.seg))
                .collect::<nfseg_core::Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let mut m = RunManifest::new("render", c.seed);
    m.scene_hash = Some(scene_hash(&c.scene)?);
    m.inputs = vec![c.checkpoint.display().to_string(), c.scene.display().to_string()];
    for (k, (&i, r)) in picks.iter().zip(&renders).enumerate() {
        let id = &scene.views[i].id;
        let p = c.out.join(format!("{id}_color.png"));
        write_png(&p, w, h, 3, &visualize::color_image(r))?;
        m.output(&p);
        let p = c.out.join(format!("{id}_depth.png"));
        write_png(&p, w, h, 3, &visualize::depth_image(r, cam.near, cam.far))?;
        m.output(&p);
        if let Some(labels) = &labels {
            let p = c.out.join(format!("{id}_labels.png"));
            write_png(&p, w, h, 1, &visualize::label_image(&labels[k], c.clusters))?;
            m.output(&p);
            let p = c.out.join(format!("{id}_overlay.png"));
            write_png(&p, w, h, 3, &visualize::overlay_image(r, &labels[k]))?;
            m.output(&p);
        }
    }
    m.timings.insert("render".into(), t.elapsed().as_secs_f64());
    m.write(&c.out.join("render_manifest.json"))
}

fn eval(c: Eval) -> Result<()> {
    let ck = load_checkpoint(&c.checkpoint)?;
    if ck.state.stage != Stage::Segmentation {
        return Err(Error::Usage(format!(
            "{} is a stage-1 checkpoint; evaluation needs a trained segmentation head",
            c.checkpoint.display()
        )));
    }
    let scene = scene_io::load_scene(&c.scene)?;
    if scene.split.test.is_empty() {
        return Err(Error::Usage("the scene's test split is empty".into()));
    }
    create_dir(&c.out)?;
    let t = Instant::now();
    let opts = EvalOptions {
        n_clusters: c.clusters,
        seed: c.seed,
        samples: c.samples,
        ..EvalOptions::default()
    };
    let renders = render_test_views(&ck.state.params, &scene, &opts)?;
    let (rep, labels) = evaluate_renders(&scene, &renders, &opts)?;
    let mut m = RunManifest::new("eval", c.seed);
    m.scene_hash = Some(scene_hash(&c.scene)?);
    m.inputs = vec![c.checkpoint.display().to_string(), c.scene.display().to_string()];
    let csv_path = c.out.join("metrics.csv");
    write(&csv_path, &report::metrics_csv(&rep))?;
    m.output(&csv_path);
    let table = report::metrics_table(&rep);
    let table_path = c.out.join("metrics.txt");
    write(&table_path, table.as_bytes())?;
    m.output(&table_path);
    let json_path = c.out.join("metrics.json");
    let mut json = serde_json::to_vec_pretty(&rep).expect("report serializes");
    json.push(b'\n');
    write(&json_path, &json)?;
    m.output(&json_path);
    let mask_dir = c.out.join("masks");
    create_dir(&mask_dir)?;
    let (w, h) = (scene.camera.width, scene.camera.height);
    for (v, l) in scene.test_views().zip(&labels) {
        let p = mask_dir.join(format!("{}.png", v.id));
        let bytes: Vec<u8> = l.iter().map(|&x| x as u8).collect();
        write_png(&p, w, h, 1, &bytes)?;
        m.output(&p);
    }
    if !c.quiet {
        print!("{table}");
    }
    m.timings.insert("eval".into(), t.elapsed().as_secs_f64());
    m.write(&c.out.join("eval_manifest.json"))
}
