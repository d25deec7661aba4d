//! Per-frame segmentation scores, leave-one-family-out cross-validation and
//! the arm ablation grid.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kinematics::KinematicsSample;
use crate::metrics::{dice, iou};
use crate::model::{train, Arm, Model, ModelConfig, Sample, Trainer};
use crate::render::{median, LabelMask};
use crate::synth::{PriorRenderer, SceneFamily};

pub const PART_NAMES: [&str; 3] = ["base", "wrist", "tip"];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn mean_std(xs: &[f64]) -> MeanStd {
    if xs.is_empty() {
        return MeanStd::default();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

/// Dice and IoU of classes base, wrist, tip for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScores {
    pub dice: [f64; 3],
    pub iou: [f64; 3],
}

pub fn score_frame(pred: &LabelMask, gt: &LabelMask) -> Result<FrameScores> {
    let mut s = FrameScores {
        dice: [0.0; 3],
        iou: [0.0; 3],
    };
    for k in 0..3 {
        s.dice[k] = dice(pred, gt, k as u8 + 1)?;
        s.iou[k] = iou(pred, gt, k as u8 + 1)?;
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub frames: usize,
    pub dice: [MeanStd; 3],
    pub iou: [MeanStd; 3],
}

impl MetricReport {
    pub fn from_frames(frames: &[FrameScores]) -> Self {
        let col =
            |f: &dyn Fn(&FrameScores) -> f64| mean_std(&frames.iter().map(f).collect::<Vec<_>>());
        MetricReport {
            frames: frames.len(),
            dice: [0, 1, 2].map(|k| col(&|s| s.dice[k])),
            iou: [0, 1, 2].map(|k| col(&|s| s.iou[k])),
        }
    }

    pub fn tip_dice(&self) -> f64 {
        self.dice[2].mean
    }

    pub fn tip_iou(&self) -> f64 {
        self.iou[2].mean
    }
}

/// Drops the kinematics prior for arms that do not take one.
fn model_input(arm: Arm, sample: &Sample) -> Option<&crate::diff::Tensor> {
    if arm.uses_kinematics() {
        sample.rendered.as_ref()
    } else {
        None
    }
}

pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<Vec<FrameScores>> {
    let arm = model.config().arm;
    samples
        .iter()
        .map(|s| score_frame(&model.predict(&s.image, model_input(arm, s))?, &s.target))
        .collect()
}

pub const EPOCH_CSV_HEADER: &str = "epoch,L_seg,L_nc,L_ds,L_train,val_dice_tip";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub seg: f64,
    pub nc: f64,
    pub ds: f64,
    pub train: f64,
    pub val_dice_tip: f64,
}

pub fn epochs_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{EPOCH_CSV_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?}",
            r.epoch, r.seg, r.nc, r.ds, r.train, r.val_dice_tip
        );
    }
    out
}

/// Median wall-clock costs in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    pub train_step_ms: f64,
    pub infer_ms: f64,
}

impl Timing {
    pub fn train_fps(&self) -> f64 {
        1000.0 / self.train_step_ms
    }

    pub fn infer_fps(&self) -> f64 {
        1000.0 / self.infer_ms
    }
}

fn median_ms(frames: usize, mut f: impl FnMut(usize) -> Result<()>) -> Result<f64> {
    let mut times = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = Instant::now();
        f(i)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(median(&mut times))
}

/// Median per-frame time of the prior rendering path over `frames` frames,
/// cycling through `kin`.
pub fn time_render(prior: &PriorRenderer, kin: &[KinematicsSample], frames: usize) -> Result<f64> {
    if kin.is_empty() {
        return Err(Error::Dataset("no kinematics samples to time".into()));
    }
    median_ms(frames, |i| prior.render(&kin[i % kin.len()]).map(|_| ()))
}

/// Inference and training-step timings on a scratch copy of `model`.
pub fn time_model(model: &Model, samples: &[Sample], frames: usize) -> Result<Timing> {
    if samples.is_empty() {
        return Err(Error::Dataset("no samples to time".into()));
    }
    let arm = model.config().arm;
    let infer_ms = median_ms(frames, |i| {
        let s = &samples[i % samples.len()];
        model.predict(&s.image, model_input(arm, s)).map(|_| ())
    })?;
    let mut scratch = model.clone();
    let mut trainer = Trainer::new(&scratch);
    let train_step_ms = median_ms(frames, |i| {
        trainer
            .step(&mut scratch, &strip(arm, &samples[i % samples.len()]), 0.0)
            .map(|_| ())
    })?;
    Ok(Timing {
        train_step_ms,
        infer_ms,
    })
}

fn strip(arm: Arm, s: &Sample) -> Sample {
    Sample {
        image: s.image.clone(),
        rendered: model_input(arm, s).cloned(),
        target: s.target.clone(),
    }
}

pub const TIMING_CSV_HEADER: &str = "stage,fold,median_ms,fps";

pub fn timing_row(stage: &str, fold: &str, ms: f64) -> String {
    format!("{stage},{fold},{ms:.3},{:.1}\n", 1000.0 / ms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub family: SceneFamily,
    pub train_count: usize,
    pub frames: Vec<FrameScores>,
    pub report: MetricReport,
    pub epochs: Vec<EpochRecord>,
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalReport {
    pub arm: Arm,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
}

impl CrossvalReport {
    /// Unweighted mean and spread of the fold means.
    pub fn over_folds(&self) -> MetricReport {
        let col = |f: &dyn Fn(&MetricReport) -> f64| {
            mean_std(&self.folds.iter().map(|r| f(&r.report)).collect::<Vec<_>>())
        };
        MetricReport {
            frames: self.folds.iter().map(|f| f.report.frames).sum(),
            dice: [0, 1, 2].map(|k| col(&|r| r.dice[k].mean)),
            iou: [0, 1, 2].map(|k| col(&|r| r.iou[k].mean)),
        }
    }

    /// Statistics pooled over every test frame of every fold.
    pub fn over_frames(&self) -> MetricReport {
        let all: Vec<FrameScores> = self
            .folds
            .iter()
            .flat_map(|f| f.frames.iter().copied())
            .collect();
        MetricReport::from_frames(&all)
    }

    pub fn aggregate_tip_dice(&self) -> f64 {
        self.over_folds().tip_dice()
    }

    /// Per-fold rows followed by fold-level and frame-level aggregates.
    /// Contains no timings, so reruns reproduce it exactly.
    pub fn metrics_csv(&self) -> String {
        let mut out =
            String::from("fold,frames,dice_base,dice_wrist,dice_tip,iou_base,iou_wrist,iou_tip\n");
        let mut row = |name: &str, frames: usize, d: [f64; 3], i: [f64; 3]| {
            let _ = writeln!(
                out,
                "{name},{frames},{:?},{:?},{:?},{:?},{:?},{:?}",
                d[0], d[1], d[2], i[0], i[1], i[2]
            );
        };
        for f in &self.folds {
            row(
                f.family.name(),
                f.report.frames,
                f.report.dice.map(|m| m.mean),
                f.report.iou.map(|m| m.mean),
            );
        }
        let folds = self.over_folds();
        row(
            "mean",
            folds.frames,
            folds.dice.map(|m| m.mean),
            folds.iou.map(|m| m.mean),
        );
        row(
            "std",
            folds.frames,
            folds.dice.map(|m| m.std),
            folds.iou.map(|m| m.std),
        );
        let frames = self.over_frames();
        row(
            "frames_mean",
            frames.frames,
            frames.dice.map(|m| m.mean),
            frames.iou.map(|m| m.mean),
        );
        row(
            "frames_std",
            frames.frames,
            frames.dice.map(|m| m.std),
            frames.iou.map(|m| m.std),
        );
        out
    }

    /// `stage,fold,median_ms,fps` rows for the training and inference paths.
    pub fn timing_csv(&self) -> String {
        let mut out = format!("{TIMING_CSV_HEADER}\n");
        for f in &self.folds {
            if let Some(t) = f.timing {
                out.push_str(&timing_row("train_step", f.family.name(), t.train_step_ms));
                out.push_str(&timing_row("infer", f.family.name(), t.infer_ms));
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("arm {} seed {}\n", self.arm, self.seed);
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>16} {:>16} {:>16}",
            "fold", "frames", "dice base", "dice wrist", "dice tip"
        );
        let cell = |m: MeanStd| format!("{:.3} ± {:.3}", m.mean, m.std);
        for f in &self.folds {
            let d = f.report.dice;
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>16} {:>16} {:>16}",
                f.family.name(),
                f.report.frames,
                cell(d[0]),
                cell(d[1]),
                cell(d[2])
            );
        }
        for (name, r) in [("folds", self.over_folds()), ("frames", self.over_frames())] {
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>16} {:>16} {:>16}",
                name,
                r.frames,
                cell(r.dice[0]),
                cell(r.dice[1]),
                cell(r.dice[2])
            );
        }
        let r = self.over_folds();
        let _ = writeln!(
            out,
            "tip IoU (folds) {:.3} ± {:.3}",
            r.iou[2].mean, r.iou[2].std
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossvalOptions {
    /// Frames per timing measurement; zero skips timing.
    pub timing_frames: usize,
}

impl Default for CrossvalOptions {
    fn default() -> Self {
        CrossvalOptions { timing_frames: 30 }
    }
}

/// Splits `data` into one fold per family: that family is the test set and
/// every other listed family is the training set.
pub fn fold_split<'a>(
    data: &'a [(SceneFamily, Sample)],
    families: &[SceneFamily],
) -> Result<Vec<(SceneFamily, Vec<&'a Sample>, Vec<&'a Sample>)>> {
    if families.len() < 2 {
        return Err(Error::Config(vec![format!(
            "cross-validation needs at least 2 families, got {}",
            families.len()
        )]));
    }
    let mut seen = Vec::new();
    for f in families {
        if seen.contains(f) {
            return Err(Error::Config(vec![format!("family {f} listed twice")]));
        }
        seen.push(*f);
    }
    let empty: Vec<String> = families
        .iter()
        .filter(|f| !data.iter().any(|(g, _)| g == *f))
        .map(|f| format!("family {f} has no samples"))
        .collect();
    if !empty.is_empty() {
        return Err(Error::Dataset(empty.join("; ")));
    }
    Ok(families
        .iter()
        .map(|&test| {
            let pick = |keep: &dyn Fn(SceneFamily) -> bool| {
                data.iter()
                    .filter(|(g, _)| families.contains(g) && keep(*g))
                    .map(|(_, s)| s)
                    .collect()
            };
            (test, pick(&|g| g != test), pick(&|g| g == test))
        })
        .collect())
}

pub fn crossval(
    data: &[(SceneFamily, Sample)],
    families: &[SceneFamily],
    cfg: &ModelConfig,
    opts: &CrossvalOptions,
) -> Result<CrossvalReport> {
    cfg.validate()?;
    let arm = cfg.arm;
    let mut folds = Vec::new();
    for (family, train_set, test_set) in fold_split(data, families)? {
        let train_set: Vec<Sample> = train_set.into_iter().map(|s| strip(arm, s)).collect();
        let test_set: Vec<Sample> = test_set.into_iter().map(|s| strip(arm, s)).collect();
        let mut model = Model::new(cfg.clone())?;
        let mut epochs = Vec::new();
        let mut eval_err = None;
        train(&mut model, &train_set, |m, log| {
            let val = match evaluate(m, &test_set) {
                Ok(f) => MetricReport::from_frames(&f).tip_dice(),
                Err(e) => {
                    eval_err.get_or_insert(e);
                    f64::NAN
                }
            };
            epochs.push(EpochRecord {
                epoch: log.epoch,
                seg: log.loss.seg,
                nc: log.loss.nc,
                ds: log.loss.ds,
                train: log.loss.total,
                val_dice_tip: val,
            });
        })?;
        if let Some(e) = eval_err {
            return Err(e);
        }
        let frames = evaluate(&model, &test_set)?;
        let timing = if opts.timing_frames > 0 {
            Some(time_model(&model, &test_set, opts.timing_frames)?)
        } else {
            None
        };
        folds.push(FoldResult {
            family,
            train_count: train_set.len(),
            report: MetricReport::from_frames(&frames),
            frames,
            epochs,
            timing,
        });
    }
    Ok(CrossvalReport {
        arm,
        seed: cfg.seed,
        folds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: Arm,
    /// One cross-validation per seed, in seed order.
    pub runs: Vec<CrossvalReport>,
}

impl AblationRow {
    pub fn tip_dice_per_seed(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(CrossvalReport::aggregate_tip_dice)
            .collect()
    }

    /// Mean over seeds of the aggregate tip Dice.
    pub fn tip_dice(&self) -> f64 {
        mean_std(&self.tip_dice_per_seed()).mean
    }
}

/// Runs cross-validation for every arm under every seed. Arms share data,
/// fold splits and seeds; only the architecture differs.
pub fn ablation_grid(
    data: &[(SceneFamily, Sample)],
    families: &[SceneFamily],
    base: &ModelConfig,
    arms: &[Arm],
    seeds: &[u64],
    opts: &CrossvalOptions,
    mut on_run: impl FnMut(&CrossvalReport),
) -> Result<Vec<AblationRow>> {
    if arms.is_empty() || seeds.is_empty() {
        return Err(Error::Config(vec![
            "ablation needs at least one arm and one seed".into(),
        ]));
    }
    let mut rows = Vec::new();
    for &arm in arms {
        let mut runs = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.arm = arm;
            cfg.seed = seed;
            let r = crossval(data, families, &cfg, opts)?;
            on_run(&r);
            runs.push(r);
        }
        rows.push(AblationRow { arm, runs });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("arm,seeds,dice_base,dice_wrist,dice_tip,dice_tip_std,iou_tip\n");
    for r in rows {
        let per = |f: &dyn Fn(&MetricReport) -> f64| {
            mean_std(
                &r.runs
                    .iter()
                    .map(|c| f(&c.over_folds()))
                    .collect::<Vec<_>>(),
            )
            .mean
        };
        let tip = mean_std(&r.tip_dice_per_seed());
        let _ = writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?},{:?}",
            r.arm,
            r.runs.len(),
            per(&|m| m.dice[0].mean),
            per(&|m| m.dice[1].mean),
            tip.mean,
            tip.std,
            per(&|m| m.iou[2].mean)
        );
    }
    out
}

pub fn ablation_text(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<12} {:>6} {:>10} {:>10} {:>18} {:>9}\n",
        "arm", "seeds", "dice base", "dice wrist", "dice tip", "iou tip"
    );
    for r in rows {
        let tip = mean_std(&r.tip_dice_per_seed());
        let fold = |k: usize| {
            mean_std(
                &r.runs
                    .iter()
                    .map(|c| c.over_folds().dice[k].mean)
                    .collect::<Vec<_>>(),
            )
            .mean
        };
        let iou_tip = mean_std(
            &r.runs
                .iter()
                .map(|c| c.over_folds().tip_iou())
                .collect::<Vec<_>>(),
        )
        .mean;
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>10.3} {:>10.3} {:>18} {:>9.3}",
            r.arm.name(),
            r.runs.len(),
            fold(0),
            fold(1),
            format!("{:.3} ± {:.3}", tip.mean, tip.std),
            iou_tip
        );
    }
    out
}
