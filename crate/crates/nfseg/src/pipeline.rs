//! Training runs with checkpoints and logs on disk.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nfseg_core::eval::{evaluate_scene, EvalOptions};
use nfseg_core::train::{stage1_step, stage2_step, IterationLog, Stage, TrainState};
use nfseg_core::{Scene, TrainConfig};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StageSelect {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

pub fn stage_checkpoint(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("stage{}.ckpt", stage.number()))
}

pub fn stage_log(out: &Path, stage: Stage) -> PathBuf {
    out.join(format!("stage{}_log.csv", stage.number()))
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub outputs: Vec<PathBuf>,
    pub timings: Vec<(String, f64)>,
    pub final_psnr: Option<f64>,
}

pub struct Trainer<'a> {
    pub scene: &'a Scene,
    pub config: &'a TrainConfig,
    pub out: &'a Path,
    /// Print progress to stderr.
    pub verbose: bool,
}

impl Trainer<'_> {
    fn progress(&self, log: &IterationLog, total: u64) {
        let every = (total / 20).max(1);
        if self.verbose && ((log.iteration + 1) % every == 0 || log.iteration + 1 == total) {
            eprintln!(
                "stage {} iter {}/{} loss {:.6} psnr {:.2}",
                log.stage,
                log.iteration + 1,
                total,
                log.loss,
                log.psnr
            );
        }
    }

    fn flush(&self, stage: Stage, logs: &mut Vec<IterationLog>, state: &TrainState) -> Result<()> {
        report::append_iteration_log(&stage_log(self.out, stage), logs)?;
        logs.clear();
        checkpoint::save(&stage_checkpoint(self.out, stage), self.config, state)
    }

    /// Starts a fresh log when the stage starts from scratch.
    fn open_log(&self, stage: Stage, from: u64) -> Result<()> {
        let p = stage_log(self.out, stage);
        if from == 0 && p.exists() {
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    pub fn stage1(&self, state: &mut TrainState, summary: &mut RunSummary) -> Result<()> {
        let total = self.config.stage1_iters;
        self.open_log(Stage::Radiance, state.iteration)?;
        let t = Instant::now();
        let mut logs = Vec::new();
        while state.iteration < total {
            let log = stage1_step(self.scene, self.config, state)?;
            self.progress(&log, total);
            summary.final_psnr = Some(log.psnr);
            logs.push(log);
            let every = self.config.checkpoint_every;
            if every > 0 && state.iteration % every == 0 && state.iteration < total {
                self.flush(Stage::Radiance, &mut logs, state)?;
            }
        }
        self.flush(Stage::Radiance, &mut logs, state)?;
        summary.timings.push(("stage1".into(), t.elapsed().as_secs_f64()));
        summary.outputs.push(stage_checkpoint(self.out, Stage::Radiance));
        summary.outputs.push(stage_log(self.out, Stage::Radiance));
        Ok(())
    }

    pub fn stage2(&self, state: &mut TrainState, summary: &mut RunSummary) -> Result<()> {
        if state.stage == Stage::Radiance {
            if state.iteration < self.config.stage1_iters {
                return Err(Error::Usage(format!(
                    "stage-1 checkpoint stopped at iteration {} of {}; finish stage 1 first",
                    state.iteration, self.config.stage1_iters
                )));
            }
            state.begin_stage2(self.config);
        }
        for &i in &self.scene.split.train {
            let v = &self.scene.views[i];
            if v.features.is_none() {
                return Err(Error::Missing {
                    what: "feature map",
                    path: PathBuf::from(format!("features/{}.nsf", v.id)),
                    hint: "stage 2 needs a feature file for every training view",
                });
            }
        }
        let total = self.config.stage2_iters;
        self.open_log(Stage::Segmentation, state.iteration)?;
        let eval_log = self.out.join("stage2_eval.csv");
        if state.iteration == 0 && eval_log.exists() {
            std::fs::remove_file(&eval_log).map_err(|e| Error::io(&eval_log, e))?;
        }
        let t = Instant::now();
        let mut logs = Vec::new();
        while state.iteration < total {
            let log = stage2_step(self.scene, self.config, state)?;
            self.progress(&log, total);
            logs.push(log);
            let every = self.config.checkpoint_every;
            if every > 0 && state.iteration % every == 0 && state.iteration < total {
                self.flush(Stage::Segmentation, &mut logs, state)?;
            }
            let every = self.config.eval_every;
            if every > 0 && state.iteration % every == 0 && !self.scene.split.test.is_empty() {
                let opts = EvalOptions {
                    seed: self.config.seed,
                    ..EvalOptions::default()
                };
                let (rep, _) = evaluate_scene(&state.params, self.scene, &opts)?;
                append_eval_row(&eval_log, state.iteration, &rep)?;
            }
        }
        self.flush(Stage::Segmentation, &mut logs, state)?;
        summary.timings.push(("stage2".into(), t.elapsed().as_secs_f64()));
        summary.outputs.push(stage_checkpoint(self.out, Stage::Segmentation));
        summary.outputs.push(stage_log(self.out, Stage::Segmentation));
        Ok(())
    }
}

fn append_eval_row(path: &Path, iteration: u64, rep: &nfseg_core::EvalReport) -> Result<()> {
    use std::io::Write;
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str("iteration,psnr,ssim,nv_ari,iou_bg,iou_fg,miou,pooled_ari\n");
    }
    let m = &rep.mean;
    text.push_str(&format!(
        "{iteration},{},{},{},{},{},{},{}\n",
        rep.psnr, rep.ssim, m.nv_ari, m.iou_bg, m.iou_fg, m.miou, rep.pooled_ari
    ));
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
