//! Dual-branch segmentation model, its ablation arms and training loop.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::config::KeyValues;
use crate::diff::{Tape, Tensor, Var};
use crate::encoders::{
    partition_and_pool, Decoder, DecoderConfig, DeepSupervisionHeads, Encoder, EncoderConfig,
};
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LossConfig, CLASSES};
use crate::params::{Bound, ParamStore};
use crate::part_graph::{fuse_attention, Gcn, PartGraph};
use crate::render::LabelMask;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Vis,
    VisGcn,
    VisKin,
    VisKinGcn,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::Vis,
        Arm::VisGcn,
        Arm::VisKin,
        Arm::VisKinGcn,
        Arm::Full,
    ];

    pub fn uses_kinematics(self) -> bool {
        matches!(self, Arm::VisKin | Arm::VisKinGcn | Arm::Full)
    }

    pub fn uses_gcn(self) -> bool {
        matches!(self, Arm::VisGcn | Arm::VisKinGcn | Arm::Full)
    }

    pub fn uses_contrastive(self) -> bool {
        self == Arm::Full
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Vis => "VIS",
            Arm::VisGcn => "VIS+GCN",
            Arm::VisKin => "VIS+KIN",
            Arm::VisKinGcn => "VIS+KIN+GCN",
            Arm::Full => "FULL",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Config(vec![format!(
                    "unknown arm `{s}` (expected VIS, VIS+GCN, VIS+KIN, VIS+KIN+GCN or FULL)"
                )])
            })
    }
}

/// Parses a comma-separated arm list.
pub fn parse_arms(s: &str) -> Result<Vec<Arm>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Multiply the step size by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub clip_norm: f64,
    pub epochs: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.01,
            momentum: 0.9,
            decay_every: 5,
            decay_factor: 0.8,
            clip_norm: 5.0,
            epochs: 10,
        }
    }
}

impl OptimConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = if self.decay_every == 0 {
            0
        } else {
            epoch / self.decay_every
        };
        self.lr * self.decay_factor.powi(steps as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub arm: Arm,
    pub image_size: usize,
    pub feature_channels: usize,
    pub downsample_factor: usize,
    pub gcn_layers: usize,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arm: Arm::Full,
            image_size: 64,
            feature_channels: 48,
            downsample_factor: 8,
            gcn_layers: 3,
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_arm(arm: Arm) -> Self {
        ModelConfig {
            arm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.feature_channels == 0 || self.feature_channels % 3 != 0 {
            p.push(format!(
                "feature_channels {} must be a positive multiple of 3",
                self.feature_channels
            ));
        }
        if !self.downsample_factor.is_power_of_two() || self.downsample_factor.trailing_zeros() > 5
        {
            p.push(format!(
                "downsample_factor {} must be a power of two no larger than 32",
                self.downsample_factor
            ));
        } else if self.image_size == 0 || self.image_size % self.downsample_factor != 0 {
            p.push(format!(
                "image_size {} must be a positive multiple of downsample_factor {}",
                self.image_size, self.downsample_factor
            ));
        }
        if self.gcn_layers == 0 {
            p.push("gcn_layers must be at least 1".into());
        }
        p.extend(self.loss.problems());
        let o = &self.optim;
        if !(o.lr >= 0.0) {
            p.push(format!("lr must be non-negative, got {}", o.lr));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            p.push(format!("momentum must be in [0, 1), got {}", o.momentum));
        }
        if !(o.decay_factor > 0.0) {
            p.push(format!(
                "decay_factor must be positive, got {}",
                o.decay_factor
            ));
        }
        if !(o.clip_norm >= 0.0) {
            p.push(format!(
                "clip_norm must be non-negative, got {}",
                o.clip_norm
            ));
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("arm", self.arm);
        kv.set("image_size", self.image_size);
        kv.set("feature_channels", self.feature_channels);
        kv.set("downsample_factor", self.downsample_factor);
        kv.set("gcn_layers", self.gcn_layers);
        kv.set("lambda1", self.loss.lambda1);
        kv.set("lambda2", self.loss.lambda2);
        kv.set("tau", self.loss.tau);
        kv.set("normalize_embeddings", self.loss.normalize_embeddings);
        kv.set("lr", self.optim.lr);
        kv.set("momentum", self.optim.momentum);
        kv.set("decay_every", self.optim.decay_every);
        kv.set("decay_factor", self.optim.decay_factor);
        kv.set("clip_norm", self.optim.clip_norm);
        kv.set("epochs", self.optim.epochs);
        kv.set("seed", self.seed);
        kv
    }

    /// Overrides fields present in `kv`; every malformed value is reported.
    pub fn apply_key_values(&mut self, kv: &KeyValues, problems: &mut Vec<String>) {
        kv.read_into("arm", &mut self.arm, problems);
        kv.read_into("image_size", &mut self.image_size, problems);
        kv.read_into("feature_channels", &mut self.feature_channels, problems);
        kv.read_into("downsample_factor", &mut self.downsample_factor, problems);
        kv.read_into("gcn_layers", &mut self.gcn_layers, problems);
        kv.read_into("lambda1", &mut self.loss.lambda1, problems);
        kv.read_into("lambda2", &mut self.loss.lambda2, problems);
        kv.read_into("tau", &mut self.loss.tau, problems);
        kv.read_into(
            "normalize_embeddings",
            &mut self.loss.normalize_embeddings,
            problems,
        );
        kv.read_into("lr", &mut self.optim.lr, problems);
        kv.read_into("momentum", &mut self.optim.momentum, problems);
        kv.read_into("decay_every", &mut self.optim.decay_every, problems);
        kv.read_into("decay_factor", &mut self.optim.decay_factor, problems);
        kv.read_into("clip_norm", &mut self.optim.clip_norm, problems);
        kv.read_into("epochs", &mut self.optim.epochs, problems);
        kv.read_into("seed", &mut self.seed, problems);
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `3×H×W`.
    pub image: Tensor,
    /// `1×H×W` rendered kinematics prior, label codes divided by 3.
    pub rendered: Option<Tensor>,
    pub target: LabelMask,
}

/// Encodes a rendered label mask as the single-channel kinematics input.
pub fn rendered_tensor(mask: &LabelMask) -> Tensor {
    let data = mask.labels().iter().map(|&l| l as f64 / 3.0).collect();
    Tensor::new(&[1, mask.height(), mask.width()], data).expect("mask dimensions")
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `4×H×W` class logits.
    pub logits: Var,
    /// `3×d` visual node states.
    pub vis_nodes: Var,
    /// `3×d` kinematics node states, for arms with the kinematics branch.
    pub kin_nodes: Option<Var>,
    pub ds_logits: [Var; 3],
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore,
    graph: PartGraph,
    vis_encoder: Encoder,
    kin_encoder: Option<Encoder>,
    heads: DeepSupervisionHeads,
    vis_gcn: Option<Gcn>,
    kin_gcn: Option<Gcn>,
    decoder: Decoder,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(cfg.seed, "init");
        let mut params = ParamStore::new();
        let (c, f) = (cfg.feature_channels, cfg.downsample_factor);
        let arm = cfg.arm;
        let vis_encoder = Encoder::new(
            "vis_enc",
            EncoderConfig::toy(3, c, f),
            &mut params,
            &mut rng,
        )?;
        let kin_encoder = if arm.uses_kinematics() {
            Some(Encoder::new(
                "kin_enc",
                EncoderConfig::toy(1, c, f),
                &mut params,
                &mut rng,
            )?)
        } else {
            None
        };
        let heads = DeepSupervisionHeads::new("ds", c, &mut params, &mut rng);
        let vis_gcn = arm
            .uses_gcn()
            .then(|| Gcn::new("vis_gcn", c / 3, cfg.gcn_layers, &mut params, &mut rng));
        let kin_gcn = (arm.uses_gcn() && arm.uses_kinematics())
            .then(|| Gcn::new("kin_gcn", c / 3, cfg.gcn_layers, &mut params, &mut rng));
        let dec_in = if arm.uses_kinematics() { 2 * c } else { c };
        let decoder = Decoder::new(
            "dec",
            DecoderConfig::toy(dec_in, f, CLASSES)?,
            &mut params,
            &mut rng,
        )?;
        Ok(Model {
            cfg,
            params,
            graph: PartGraph::build(),
            vis_encoder,
            kin_encoder,
            heads,
            vis_gcn,
            kin_gcn,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        image: &Tensor,
        rendered: Option<&Tensor>,
    ) -> Result<ForwardOutput> {
        let arm = self.cfg.arm;
        let size = self.cfg.image_size;
        if image.shape() != [3, size, size] {
            return Err(Error::shape(
                "forward image",
                image.shape(),
                &[3, size, size],
            ));
        }
        match (arm.uses_kinematics(), rendered) {
            (true, None) => {
                return Err(Error::ArmInput(format!(
                    "arm {arm} needs a rendered kinematics mask"
                )))
            }
            (false, Some(_)) => {
                return Err(Error::ArmInput(format!(
                    "arm {arm} takes no kinematics input"
                )))
            }
            (_, Some(r)) if r.shape() != [1, size, size] => {
                return Err(Error::shape(
                    "forward rendered mask",
                    r.shape(),
                    &[1, size, size],
                ))
            }
            _ => {}
        }

        let x = tape.constant(image.clone());
        let f_vis = self.vis_encoder.encode(tape, p, x)?;
        let ds_logits = self.heads.forward(tape, p, f_vis)?;
        let pooled = partition_and_pool(tape, f_vis)?;
        let vis_nodes = match &self.vis_gcn {
            Some(g) => g.forward(tape, p, &self.graph, pooled)?,
            None => pooled,
        };
        let fused_vis = fuse_attention(tape, f_vis, vis_nodes)?;

        let (decoder_in, kin_nodes) = match (rendered, &self.kin_encoder) {
            (Some(r), Some(enc)) => {
                let rv = tape.constant(r.clone());
                let f_kin = enc.encode(tape, p, rv)?;
                let pooled = partition_and_pool(tape, f_kin)?;
                let kin_nodes = match &self.kin_gcn {
                    Some(g) => g.forward(tape, p, &self.graph, pooled)?,
                    None => pooled,
                };
                let fused_kin = fuse_attention(tape, f_kin, kin_nodes)?;
                (tape.concat0(&[fused_vis, fused_kin])?, Some(kin_nodes))
            }
            _ => (fused_vis, None),
        };
        let logits = self.decoder.decode(tape, p, decoder_in)?;
        Ok(ForwardOutput {
            logits,
            vis_nodes,
            kin_nodes,
            ds_logits,
        })
    }

    /// Training objective for one sample; the contrastive term is present
    /// only for the full arm.
    pub fn loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        sample: &Sample,
    ) -> Result<(Var, LossBreakdown)> {
        let out = self.forward(tape, p, &sample.image, sample.rendered.as_ref())?;
        let seg = losses::ce_dice_loss(tape, out.logits, &sample.target)?;
        let ds = losses::deep_supervision_loss(tape, &out.ds_logits, &sample.target)?;
        let nc = match (self.cfg.arm.uses_contrastive(), out.kin_nodes) {
            (true, Some(k)) => Some(losses::node_contrastive_loss(
                tape,
                out.vis_nodes,
                k,
                &self.cfg.loss,
            )?),
            _ => None,
        };
        losses::total_loss(tape, seg, nc, Some(ds), &self.cfg.loss)
    }

    /// Per-pixel argmax of the class logits.
    pub fn predict(&self, image: &Tensor, rendered: Option<&Tensor>) -> Result<LabelMask> {
        let mut tape = Tape::new();
        let p = self.params.bind_constant(&mut tape);
        let out = self.forward(&mut tape, &p, image, rendered)?;
        let size = self.cfg.image_size;
        argmax_mask(tape.value(out.logits), size, size)
    }
}

/// Class argmax over a `4×H×W` tensor; ties go to the lower class index.
pub fn argmax_mask(logits: &Tensor, width: usize, height: usize) -> Result<LabelMask> {
    if logits.shape() != [CLASSES, height, width] {
        return Err(Error::shape(
            "argmax",
            logits.shape(),
            &[CLASSES, height, width],
        ));
    }
    let n = width * height;
    let d = logits.data();
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..CLASSES {
                if d[c * n + i] > d[best * n + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::from_labels(width, height, labels)
}

/// Momentum gradient descent: `v ← μv + g`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Trainer {
    velocity: Vec<Vec<f64>>,
}

impl Trainer {
    pub fn new(model: &Model) -> Self {
        Trainer {
            velocity: model
                .params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect(),
        }
    }

    pub fn step(&mut self, model: &mut Model, sample: &Sample, lr: f64) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let (loss, breakdown) = model.loss(&mut tape, &p, sample)?;
        tape.backward(loss)?;
        let grads: Vec<&[f64]> = p
            .vars()
            .iter()
            .map(|&v| tape.grad(v).unwrap_or(&[]))
            .collect();
        let clip = model.cfg.optim.clip_norm;
        let mut scale = 1.0;
        if clip > 0.0 {
            let norm = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    seg: breakdown.seg,
                    nc: breakdown.nc,
                    ds: breakdown.ds,
                });
            }
            if norm > clip {
                scale = clip / norm;
            }
        }
        let mu = model.cfg.optim.momentum;
        for ((t, v), g) in model
            .params
            .tensors_mut()
            .iter_mut()
            .zip(&mut self.velocity)
            .zip(&grads)
        {
            if g.is_empty() {
                continue;
            }
            for ((w, v), &g) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(g.iter()) {
                *v = mu * *v + scale * g;
                *w -= lr * *v;
            }
        }
        Ok(breakdown)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Means over the epoch's training steps.
    pub loss: LossBreakdown,
}

/// Trains for `cfg.optim.epochs` epochs with batch size 1, visiting samples
/// in a fresh seeded order every epoch. `on_epoch` runs after each epoch.
pub fn train(
    model: &mut Model,
    samples: &[Sample],
    mut on_epoch: impl FnMut(&Model, &EpochLog),
) -> Result<Vec<EpochLog>> {
    let mut trainer = Trainer::new(model);
    let mut rng = substream(model.cfg.seed, "train");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut logs = Vec::new();
    for epoch in 0..model.cfg.optim.epochs {
        let lr = model.cfg.optim.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        for &i in &order {
            let b = trainer.step(model, &samples[i], lr)?;
            acc.seg += b.seg;
            acc.nc += b.nc;
            acc.ds += b.ds;
            acc.total += b.total;
        }
        let n = samples.len().max(1) as f64;
        let log = EpochLog {
            epoch,
            lr,
            loss: LossBreakdown {
                seg: acc.seg / n,
                nc: acc.nc / n,
                ds: acc.ds / n,
                total: acc.total / n,
            },
        };
        on_epoch(model, &log);
        logs.push(log);
    }
    Ok(logs)
}
