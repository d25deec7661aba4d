use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use tipseg::config::KeyValues;
use tipseg::eval::{
    ablation_csv, ablation_grid, crossval as run_crossval, epochs_csv, evaluate, score_frame,
    time_model, time_render, timing_row, CrossvalOptions, CrossvalReport, EpochRecord, FrameScores,
    MetricReport, TIMING_CSV_HEADER,
};
use tipseg::kinematics::{load_kinematics_log, nearest_sample, Pose7};
use tipseg::mesh::{load_mesh, PartId};
use tipseg::model::{parse_arms, train as run_train, Arm, Model, ModelConfig, Sample};
use tipseg::params::ParamStore;
use tipseg::render::{
    benchmark_render, CameraIntrinsics, LabelMask, RenderConfig, SilhouetteRenderer,
};
use tipseg::synth::{benchmark_fixture, gen_dataset, Dataset, PriorRenderer, SceneFamily};

use crate::settings::{
    absorb, data_settings, families_key, finish, model_config, parse_families, parse_sets, resolve,
    synth_config, DataSettings, DataSource, DATA_KEYS, MODEL_KEYS, SYNTH_KEYS,
};
use crate::{Common, DataFlags, ModelFlags, UsageError};

pub struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn set_opt<T: ToString>(kv: &mut KeyValues, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v.to_string());
    }
}

fn path_opt(kv: &mut KeyValues, key: &str, v: &Option<PathBuf>) {
    if let Some(p) = v {
        kv.set(key, p.display());
    }
}

fn base_flags(common: &Common) -> Result<KeyValues> {
    let mut kv = KeyValues::default();
    parse_sets(&common.set, &mut kv)?;
    Ok(kv)
}

fn model_flags(kv: &mut KeyValues, m: &ModelFlags) {
    set_opt(kv, "arm", &m.arm);
    set_opt(kv, "epochs", &m.epochs);
    set_opt(kv, "lr", &m.lr);
    set_opt(kv, "seed", &m.seed);
    set_opt(kv, "feature_channels", &m.feature_channels);
    set_opt(kv, "tau", &m.tau);
    set_opt(kv, "image_size", &m.image_size);
}

fn data_flags(kv: &mut KeyValues, d: &DataFlags) {
    path_opt(kv, "data", &d.data);
    set_opt(kv, "families", &d.families);
    set_opt(kv, "per_family", &d.per_family);
    set_opt(kv, "data_seed", &d.data_seed);
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| tipseg::Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| tipseg::Error::io(path, e))?;
    Ok(())
}

fn write_run(out: &Path, command: &str, mut kv: KeyValues) -> Result<()> {
    kv.set("command", command);
    write(&out.join("run.txt"), &kv.to_text())
}

fn get_path(kv: &KeyValues, key: &str) -> Option<PathBuf> {
    kv.get_str(key).map(PathBuf::from)
}

/// Loads the intrinsics file and its near-plane distance.
fn intrinsics(path: &Path) -> Result<(CameraIntrinsics, f64)> {
    Ok(CameraIntrinsics::load(path)?)
}

#[allow(clippy::too_many_arguments)]
pub fn render(
    common: &Common,
    mesh: Option<PathBuf>,
    kinematics: Option<PathBuf>,
    intr_path: Option<PathBuf>,
    time: Option<f64>,
    scale: Option<usize>,
    decimation: Option<usize>,
    png: bool,
    log: &Log,
) -> Result<()> {
    const KEYS: &[&str] = &[
        "mesh",
        "kinematics",
        "intrinsics",
        "time",
        "scale",
        "decimation",
        "png",
    ];
    let mut flags = base_flags(common)?;
    path_opt(&mut flags, "mesh", &mesh);
    path_opt(&mut flags, "kinematics", &kinematics);
    path_opt(&mut flags, "intrinsics", &intr_path);
    set_opt(&mut flags, "time", &time);
    set_opt(&mut flags, "scale", &scale);
    set_opt(&mut flags, "decimation", &decimation);
    if png {
        flags.set("png", true);
    }
    let mut kv = resolve(common.config.as_deref(), &flags, &[KEYS])?;
    let mut problems = Vec::new();
    let mesh = get_path(&kv, "mesh");
    let kin = get_path(&kv, "kinematics");
    let intr_file = get_path(&kv, "intrinsics");
    for (key, v) in [
        ("mesh", &mesh),
        ("kinematics", &kin),
        ("intrinsics", &intr_file),
    ] {
        if v.is_none() {
            problems.push(format!("{key}: missing"));
        }
    }
    let mut cfg = RenderConfig::REFERENCE;
    let mut t = None::<f64>;
    let mut png = false;
    kv.read_into("scale", &mut cfg.scale, &mut problems);
    kv.read_into("decimation", &mut cfg.decimation_rate, &mut problems);
    kv.read_into("png", &mut png, &mut problems);
    if kv.contains("time") {
        let mut v = 0.0;
        kv.read_into("time", &mut v, &mut problems);
        t = Some(v);
    }
    finish(problems)?;
    let (mesh, kin, intr_file) = (mesh.unwrap(), kin.unwrap(), intr_file.unwrap());

    let (intr, near) = intrinsics(&intr_file)?;
    cfg.near_clip = near;
    cfg.validate(&intr)?;
    let mesh = load_mesh(&mesh)?;
    let stream = load_kinematics_log(&kin)?;
    let sample = match t {
        Some(t) => nearest_sample(&stream, t)?,
        None => stream.samples().first().ok_or(tipseg::Error::EmptyStream)?,
    };
    let renderer = SilhouetteRenderer::new(&mesh, cfg)?;
    let t0 = Instant::now();
    let mask = renderer.render_instruments(&sample.instruments, &sample.camera, &intr)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;

    std::fs::create_dir_all(&common.out).map_err(|e| tipseg::Error::io(&common.out, e))?;
    mask.write_pgm(&common.out.join("mask.pgm"))?;
    if png {
        mask.write_false_color_png(&common.out.join("mask.png"))?;
    }
    kv.set("scale", cfg.scale);
    kv.set("decimation", cfg.decimation_rate);
    kv.set("time", sample.timestamp);
    write_run(&common.out, "render", kv)?;
    println!(
        "{} sample t={} {}x{}: background {} base {} wrist {} tip {} ({ms:.3} ms)",
        cfg.label(),
        sample.timestamp,
        mask.width(),
        mask.height(),
        mask.count(PartId::Background),
        mask.count(PartId::Base),
        mask.count(PartId::Wrist),
        mask.count(PartId::Tip)
    );
    log.info(format!("wrote {}", common.out.join("mask.pgm").display()));
    Ok(())
}

/// Parses labels such as `s2_r10`.
fn parse_render_configs(s: &str, near: f64) -> std::result::Result<Vec<RenderConfig>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let t = t.trim();
            let parsed = t
                .strip_prefix('s')
                .and_then(|r| r.split_once("_r"))
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)));
            match parsed {
                Some((scale, rate)) => Ok(RenderConfig {
                    scale,
                    decimation_rate: rate,
                    near_clip: near,
                }),
                None => Err(format!(
                    "configs: `{t}` is not of the form s<scale>_r<rate>"
                )),
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn benchmark(
    common: &Common,
    mesh: Option<PathBuf>,
    detail: Option<usize>,
    kinematics: Option<PathBuf>,
    intr_path: Option<PathBuf>,
    configs: Option<String>,
    repeats: Option<usize>,
    log: &Log,
) -> Result<()> {
    const KEYS: &[&str] = &[
        "mesh",
        "detail",
        "kinematics",
        "intrinsics",
        "configs",
        "repeats",
    ];
    let mut flags = base_flags(common)?;
    path_opt(&mut flags, "mesh", &mesh);
    set_opt(&mut flags, "detail", &detail);
    path_opt(&mut flags, "kinematics", &kinematics);
    path_opt(&mut flags, "intrinsics", &intr_path);
    set_opt(&mut flags, "configs", &configs);
    set_opt(&mut flags, "repeats", &repeats);
    let mut kv = resolve(common.config.as_deref(), &flags, &[KEYS])?;
    let mut problems = Vec::new();
    let mut detail = 8usize;
    let mut repeats = 10usize;
    let mut configs = "s2_r10".to_string();
    kv.read_into("detail", &mut detail, &mut problems);
    kv.read_into("repeats", &mut repeats, &mut problems);
    kv.read_into("configs", &mut configs, &mut problems);
    finish(problems)?;

    let (fixture_mesh, fixture_poses, fixture_intr) = benchmark_fixture(detail);
    let (intr, near) = match get_path(&kv, "intrinsics") {
        Some(p) => intrinsics(&p)?,
        None => (fixture_intr, RenderConfig::REFERENCE.near_clip),
    };
    let mesh = match get_path(&kv, "mesh") {
        Some(p) => load_mesh(&p)?,
        None => fixture_mesh,
    };
    let (instruments, camera) = match get_path(&kv, "kinematics") {
        Some(p) => {
            let stream = load_kinematics_log(&p)?;
            let s = stream.samples().first().ok_or(tipseg::Error::EmptyStream)?;
            (s.instruments.clone(), s.camera)
        }
        None => (vec![fixture_poses], Pose7::IDENTITY),
    };
    let cfgs = parse_render_configs(&configs, near).map_err(|p| tipseg::Error::Config(vec![p]))?;
    log.info(format!(
        "benchmarking {} triangles at {}x{}",
        mesh.triangle_count(),
        intr.width,
        intr.height
    ));
    let report = benchmark_render(&mesh, &instruments, &camera, &intr, &cfgs, repeats)?;
    write(&common.out.join("bench.csv"), &report.to_csv())?;
    write(&common.out.join("bench.txt"), &report.to_text())?;
    kv.set("detail", detail);
    kv.set("repeats", repeats);
    kv.set("configs", configs);
    write_run(&common.out, "benchmark", kv)?;
    print!("{}", report.to_text());
    Ok(())
}

pub fn gen_data(
    common: &Common,
    families: Option<String>,
    per_family: Option<usize>,
    data_seed: Option<u64>,
    image_size: Option<usize>,
    log: &Log,
) -> Result<()> {
    let mut flags = base_flags(common)?;
    set_opt(&mut flags, "families", &families);
    set_opt(&mut flags, "per_family", &per_family);
    set_opt(&mut flags, "data_seed", &data_seed);
    set_opt(&mut flags, "image_size", &image_size);
    let kv = resolve(
        common.config.as_deref(),
        &flags,
        &[SYNTH_KEYS, &["families", "per_family", "data_seed"]],
    )?;
    let mut problems = Vec::new();
    let synth = synth_config(&kv, &mut problems);
    absorb(synth.validate(), &mut problems);
    let data = data_settings(&kv, &mut problems);
    finish(problems)?;
    let DataSource::Generate {
        per_family,
        data_seed,
    } = data.source
    else {
        unreachable!("no data key accepted")
    };
    let t0 = Instant::now();
    let manifest = gen_dataset(&data.families, per_family, data_seed, &synth, &common.out)?;
    let mut run = synth.to_key_values();
    data.write_keys(&mut run);
    write_run(&common.out, "gen-data", run)?;
    println!(
        "wrote {} scenes ({}) to {} in {:.1}s",
        manifest.entries.len(),
        families_key(&data.families),
        common.out.display(),
        t0.elapsed().as_secs_f64()
    );
    log.info(format!(
        "manifest: {}",
        common.out.join("manifest.csv").display()
    ));
    Ok(())
}

/// Resolved settings shared by the training commands.
struct Experiment {
    model: ModelConfig,
    data: DataSettings,
    dataset: Dataset,
    run: KeyValues,
}

/// Loads or generates the dataset and reconciles the model image size with it.
fn experiment(kv: &KeyValues, out: &Path, log: &Log) -> Result<Experiment> {
    let mut problems = Vec::new();
    let mut model = model_config(kv, &mut problems);
    let mut synth = synth_config(kv, &mut problems);
    synth.image_size = model.image_size;
    let mut data = data_settings(kv, &mut problems);
    absorb(model.validate(), &mut problems);
    if matches!(data.source, DataSource::Generate { .. }) {
        absorb(synth.validate(), &mut problems);
    }
    finish(problems)?;
    let dataset = match &data.source {
        DataSource::Dir(dir) => {
            let ds = Dataset::load(dir)?;
            if kv.contains("image_size") && ds.cfg.image_size != model.image_size {
                return Err(tipseg::Error::Config(vec![format!(
                    "image_size {} does not match dataset image size {}",
                    model.image_size, ds.cfg.image_size
                )])
                .into());
            }
            model.image_size = ds.cfg.image_size;
            if !kv.contains("families") {
                data.families = ds.families();
            }
            ds
        }
        DataSource::Generate {
            per_family,
            data_seed,
        } => {
            let dir = out.join("data");
            log.info(format!(
                "generating {} scenes per family into {}",
                per_family,
                dir.display()
            ));
            gen_dataset(&data.families, *per_family, *data_seed, &synth, &dir)?;
            Dataset::load(&dir)?
        }
    };
    let mut run = model.to_key_values();
    run.merge(&dataset.cfg.to_key_values());
    data.write_keys(&mut run);
    Ok(Experiment {
        model,
        data,
        dataset,
        run,
    })
}

fn family_samples(ds: &Dataset, families: &[SceneFamily]) -> Result<Vec<(SceneFamily, Sample)>> {
    Ok(ds
        .samples()?
        .into_iter()
        .filter(|(f, _)| families.contains(f))
        .collect())
}

fn strip_for(arm: Arm, s: Sample) -> Sample {
    Sample {
        rendered: if arm.uses_kinematics() {
            s.rendered
        } else {
            None
        },
        ..s
    }
}

pub fn train(
    common: &Common,
    m: &ModelFlags,
    d: &DataFlags,
    holdout: Option<String>,
    log: &Log,
) -> Result<()> {
    let mut flags = base_flags(common)?;
    model_flags(&mut flags, m);
    data_flags(&mut flags, d);
    set_opt(&mut flags, "holdout", &holdout);
    let kv = resolve(
        common.config.as_deref(),
        &flags,
        &[MODEL_KEYS, SYNTH_KEYS, DATA_KEYS, &["holdout"]],
    )?;
    let holdout = match kv.get_str("holdout") {
        Some(h) => parse_families(h)?,
        None => Vec::new(),
    };
    let mut exp = experiment(&kv, &common.out, log)?;
    let arm = exp.model.arm;
    let all = family_samples(&exp.dataset, &exp.data.families)?;
    let (val, train_set): (Vec<_>, Vec<_>) =
        all.into_iter().partition(|(f, _)| holdout.contains(f));
    let train_set: Vec<Sample> = train_set
        .into_iter()
        .map(|(_, s)| strip_for(arm, s))
        .collect();
    let val: Vec<Sample> = val.into_iter().map(|(_, s)| strip_for(arm, s)).collect();
    if train_set.is_empty() {
        return Err(tipseg::Error::Dataset(
            "no training samples after removing the holdout families".into(),
        )
        .into());
    }
    log.info(format!(
        "training {arm} on {} samples, validating on {}",
        train_set.len(),
        val.len()
    ));
    let mut model = Model::new(exp.model.clone())?;
    let mut records = Vec::new();
    let mut eval_err = None;
    run_train(&mut model, &train_set, |m, l| {
        let val_dice_tip = if val.is_empty() {
            f64::NAN
        } else {
            match evaluate(m, &val) {
                Ok(f) => MetricReport::from_frames(&f).tip_dice(),
                Err(e) => {
                    eval_err.get_or_insert(e);
                    f64::NAN
                }
            }
        };
        log.info(format!(
            "epoch {} lr {:.5} loss {:.4} val tip dice {:.4}",
            l.epoch, l.lr, l.loss.total, val_dice_tip
        ));
        records.push(EpochRecord {
            epoch: l.epoch,
            seg: l.loss.seg,
            nc: l.loss.nc,
            ds: l.loss.ds,
            train: l.loss.total,
            val_dice_tip,
        });
    })?;
    if let Some(e) = eval_err {
        return Err(e.into());
    }
    model.params().save(&common.out.join("model.ckpt"))?;
    write(&common.out.join("epochs.csv"), &epochs_csv(&records))?;
    if !holdout.is_empty() {
        exp.run.set("holdout", families_key(&holdout));
    }
    write_run(&common.out, "train", exp.run)?;
    println!(
        "trained {arm} for {} epochs; checkpoint {}",
        records.len(),
        common.out.join("model.ckpt").display()
    );
    Ok(())
}

fn frames_csv_rows(out: &mut String, name: &str, r: &MetricReport) {
    out.push_str(&format!(
        "{name},{},{:?},{:?},{:?},{:?},{:?},{:?}\n",
        r.frames,
        r.dice[0].mean,
        r.dice[1].mean,
        r.dice[2].mean,
        r.iou[0].mean,
        r.iou[1].mean,
        r.iou[2].mean
    ));
}

/// Side-by-side prediction and ground truth, separated by one background column.
fn pair_mask(pred: &LabelMask, gt: &LabelMask) -> Result<LabelMask> {
    let (w, h) = (pred.width(), pred.height());
    let mut labels = Vec::with_capacity((2 * w + 1) * h);
    for v in 0..h {
        labels.extend_from_slice(&pred.labels()[v * w..(v + 1) * w]);
        labels.push(0);
        labels.extend_from_slice(&gt.labels()[v * w..(v + 1) * w]);
    }
    Ok(LabelMask::from_labels(2 * w + 1, h, labels)?)
}

pub fn eval(
    common: &Common,
    checkpoint: Option<PathBuf>,
    d: &DataFlags,
    overlays: Option<usize>,
    log: &Log,
) -> Result<()> {
    let mut flags = base_flags(common)?;
    data_flags(&mut flags, d);
    path_opt(&mut flags, "checkpoint", &checkpoint);
    set_opt(&mut flags, "overlays", &overlays);
    // without --config the training run recorded beside the checkpoint
    // supplies the model settings
    let sibling = checkpoint
        .as_ref()
        .and_then(|c| c.parent())
        .map(|d| d.join("run.txt"))
        .filter(|p| p.is_file());
    let mut kv = resolve(
        common.config.as_deref().or(sibling.as_deref()),
        &flags,
        &[
            MODEL_KEYS,
            SYNTH_KEYS,
            DATA_KEYS,
            &["holdout", "checkpoint", "overlays"],
        ],
    )?;
    let Some(ckpt) = get_path(&kv, "checkpoint") else {
        return Err(UsageError(
            "eval needs --checkpoint (or `checkpoint` in the config file)".into(),
        )
        .into());
    };
    let mut overlays = 0usize;
    let mut problems = Vec::new();
    kv.read_into("overlays", &mut overlays, &mut problems);
    finish(problems)?;
    // evaluate the holdout families of a training run when present
    if let Some(h) = kv.get_str("holdout").map(str::to_string) {
        if d.families.is_none() {
            kv.set("families", h);
        }
    }
    let exp = experiment(&kv, &common.out, log)?;
    let mut model = Model::new(exp.model.clone())?;
    model.params_mut().assign(&ParamStore::load(&ckpt)?)?;
    let arm = exp.model.arm;
    let data = family_samples(&exp.dataset, &exp.data.families)?;
    if data.is_empty() {
        return Err(tipseg::Error::Dataset("no samples in the selected families".into()).into());
    }
    let mut csv =
        String::from("family,frames,dice_base,dice_wrist,dice_tip,iou_base,iou_wrist,iou_tip\n");
    let mut all: Vec<FrameScores> = Vec::new();
    let mut written = 0;
    for &fam in &exp.data.families {
        let mut frames = Vec::new();
        for (_, s) in data.iter().filter(|(f, _)| *f == fam) {
            let s = strip_for(arm, s.clone());
            let pred = model.predict(&s.image, s.rendered.as_ref())?;
            frames.push(score_frame(&pred, &s.target)?);
            if written < overlays {
                pair_mask(&pred, &s.target)?.write_false_color_png(
                    &common.out.join(format!("overlays/{fam}_{written:03}.png")),
                )?;
                written += 1;
            }
        }
        frames_csv_rows(&mut csv, fam.name(), &MetricReport::from_frames(&frames));
        all.extend(frames);
    }
    let total = MetricReport::from_frames(&all);
    frames_csv_rows(&mut csv, "all", &total);
    write(&common.out.join("metrics.csv"), &csv)?;

    let samples: Vec<Sample> = data
        .iter()
        .map(|(_, s)| strip_for(arm, s.clone()))
        .collect();
    let timing = time_model(&model, &samples, 30)?;
    let prior = PriorRenderer::new(&exp.dataset.cfg)?;
    let kin: Vec<_> = exp.dataset.scenes.iter().map(|s| s.kin.clone()).collect();
    let render_ms = time_render(&prior, &kin, 30)?;
    let mut timing_csv = format!("{TIMING_CSV_HEADER}\n");
    timing_csv.push_str(&timing_row("infer", "all", timing.infer_ms));
    timing_csv.push_str(&timing_row("render", "all", render_ms));
    write(&common.out.join("timing.csv"), &timing_csv)?;

    let mut run = exp.run;
    run.set("checkpoint", ckpt.display());
    run.set("overlays", overlays);
    write_run(&common.out, "eval", run)?;
    println!(
        "{arm} on {} frames: tip dice {:.4} ± {:.4}, tip IoU {:.4} ± {:.4}; infer {:.1} fps, render {:.1} fps",
        total.frames,
        total.dice[2].mean,
        total.dice[2].std,
        total.iou[2].mean,
        total.iou[2].std,
        1000.0 / timing.infer_ms,
        1000.0 / render_ms
    );
    Ok(())
}

fn write_crossval(dir: &Path, r: &CrossvalReport, render_ms: Option<f64>) -> Result<()> {
    write(&dir.join("metrics.csv"), &r.metrics_csv())?;
    write(&dir.join("report.txt"), &r.to_text())?;
    for f in &r.folds {
        write(
            &dir.join(format!("epochs_{}.csv", f.family)),
            &epochs_csv(&f.epochs),
        )?;
    }
    let mut timing = r.timing_csv();
    if let Some(ms) = render_ms {
        timing.push_str(&timing_row("render", "all", ms));
    }
    write(&dir.join("timing.csv"), &timing)
}

fn render_timing(exp: &Experiment, frames: usize) -> Result<Option<f64>> {
    if frames == 0 {
        return Ok(None);
    }
    let prior = PriorRenderer::new(&exp.dataset.cfg)?;
    let kin: Vec<_> = exp.dataset.scenes.iter().map(|s| s.kin.clone()).collect();
    Ok(Some(time_render(&prior, &kin, frames)?))
}

pub fn crossval(
    common: &Common,
    m: &ModelFlags,
    d: &DataFlags,
    timing_frames: Option<usize>,
    log: &Log,
) -> Result<()> {
    let mut flags = base_flags(common)?;
    model_flags(&mut flags, m);
    data_flags(&mut flags, d);
    set_opt(&mut flags, "timing_frames", &timing_frames);
    let kv = resolve(
        common.config.as_deref(),
        &flags,
        &[MODEL_KEYS, SYNTH_KEYS, DATA_KEYS, &["timing_frames"]],
    )?;
    let mut opts = CrossvalOptions::default();
    let mut problems = Vec::new();
    kv.read_into("timing_frames", &mut opts.timing_frames, &mut problems);
    finish(problems)?;
    let mut exp = experiment(&kv, &common.out, log)?;
    let data = family_samples(&exp.dataset, &exp.data.families)?;
    log.info(format!(
        "cross-validating {} over {} families ({} samples)",
        exp.model.arm,
        exp.data.families.len(),
        data.len()
    ));
    let t0 = Instant::now();
    let report = run_crossval(&data, &exp.data.families, &exp.model, &opts)?;
    write_crossval(
        &common.out,
        &report,
        render_timing(&exp, opts.timing_frames)?,
    )?;
    exp.run.set("timing_frames", opts.timing_frames);
    write_run(&common.out, "crossval", exp.run)?;
    print!("{}", report.to_text());
    log.info(format!("done in {:.1}s", t0.elapsed().as_secs_f64()));
    Ok(())
}

fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| format!("seeds: cannot parse `{t}`"))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn ablate(
    common: &Common,
    m: &ModelFlags,
    d: &DataFlags,
    arms: Option<String>,
    seeds: Option<String>,
    timing_frames: Option<usize>,
    log: &Log,
) -> Result<()> {
    let mut flags = base_flags(common)?;
    model_flags(&mut flags, m);
    data_flags(&mut flags, d);
    set_opt(&mut flags, "arms", &arms);
    set_opt(&mut flags, "seeds", &seeds);
    set_opt(&mut flags, "timing_frames", &timing_frames);
    let kv = resolve(
        common.config.as_deref(),
        &flags,
        &[
            MODEL_KEYS,
            SYNTH_KEYS,
            DATA_KEYS,
            &["arms", "seeds", "timing_frames"],
        ],
    )?;
    let mut problems = Vec::new();
    let arms = match kv.get_str("arms") {
        Some(a) => parse_arms(a).unwrap_or_else(|e| {
            absorb(Err(e), &mut problems);
            Vec::new()
        }),
        None => Arm::ALL.to_vec(),
    };
    let seeds = match kv.get_str("seeds") {
        Some(s) => parse_seeds(s).unwrap_or_else(|p| {
            problems.push(p);
            Vec::new()
        }),
        None => vec![ModelConfig::default().seed],
    };
    let mut opts = CrossvalOptions { timing_frames: 0 };
    kv.read_into("timing_frames", &mut opts.timing_frames, &mut problems);
    finish(problems)?;
    let mut exp = experiment(&kv, &common.out, log)?;
    let data = family_samples(&exp.dataset, &exp.data.families)?;
    let rows = ablation_grid(
        &data,
        &exp.data.families,
        &exp.model,
        &arms,
        &seeds,
        &opts,
        |r| {
            log.info(format!(
                "{} seed {}: aggregate tip dice {:.4}",
                r.arm,
                r.seed,
                r.aggregate_tip_dice()
            ));
            let dir = common
                .out
                .join(format!("{}_seed{}", r.arm.name().replace('+', "_"), r.seed));
            if let Err(e) = write_crossval(&dir, r, None) {
                log.info(format!("could not write {}: {e}", dir.display()));
            }
        },
    )?;
    write(&common.out.join("ablation.csv"), &ablation_csv(&rows))?;
    let text = tipseg::eval::ablation_text(&rows);
    write(&common.out.join("ablation.txt"), &text)?;
    exp.run.set(
        "arms",
        arms.iter().map(|a| a.name()).collect::<Vec<_>>().join(","),
    );
    exp.run.set(
        "seeds",
        seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(","),
    );
    exp.run.set("timing_frames", opts.timing_frames);
    write_run(&common.out, "ablate", exp.run)?;
    print!("{text}");
    Ok(())
}
