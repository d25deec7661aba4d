//! Strided convolutional encoders, channel partitioning with global average
//! pooling, per-partition deep-supervision heads and the mask decoder.

use rand::Rng;

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};

/// One convolution stage: `out` channels, `k×k` kernel, stride, and for the
/// decoder whether a ×2 nearest upsample precedes it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub upsample: bool,
}

impl ConvSpec {
    pub const fn new(out: usize, kernel: usize, stride: usize) -> Self {
        ConvSpec {
            out,
            kernel,
            stride,
            upsample: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub feature_channels: usize,
    pub downsample_factor: usize,
    pub stages: Vec<ConvSpec>,
}

fn log2_exact(n: usize) -> Option<usize> {
    (n > 0 && n.is_power_of_two()).then(|| n.trailing_zeros() as usize)
}

impl EncoderConfig {
    /// `log2(downsample)` stride-2 3×3 stages with channels growing towards
    /// `C`, then a stride-1 3×3 stage and a stride-1 1×1 stage at `C`.
    pub fn toy(in_channels: usize, feature_channels: usize, downsample_factor: usize) -> Self {
        let n = log2_exact(downsample_factor).unwrap_or(0);
        let mut stages: Vec<ConvSpec> = (0..n)
            .map(|i| ConvSpec::new((feature_channels >> (n - 1 - i)).max(4), 3, 2))
            .collect();
        stages.push(ConvSpec::new(feature_channels, 3, 1));
        stages.push(ConvSpec::new(feature_channels, 1, 1));
        EncoderConfig {
            in_channels,
            feature_channels,
            downsample_factor,
            stages,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.feature_channels == 0 || self.feature_channels % 3 != 0 {
            p.push(format!(
                "feature channels {} must be a positive multiple of 3",
                self.feature_channels
            ));
        }
        if self.in_channels == 0 {
            p.push("encoder needs at least one input channel".into());
        }
        let total_stride: usize = self.stages.iter().map(|s| s.stride).product();
        if total_stride != self.downsample_factor {
            p.push(format!(
                "encoder strides multiply to {total_stride}, expected downsample factor {}",
                self.downsample_factor
            ));
        }
        if self.stages.last().map(|s| s.out) != Some(self.feature_channels) {
            p.push("last encoder stage must output the feature channels".into());
        }
        for s in &self.stages {
            if s.kernel == 0 || s.kernel % 2 == 0 || !(1..=2).contains(&s.stride) || s.out == 0 {
                p.push(format!(
                    "unsupported encoder stage {s:?} (odd kernel, stride 1 or 2)"
                ));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    spec: ConvSpec,
}

fn make_layers(
    prefix: &str,
    in_ch: usize,
    specs: &[ConvSpec],
    store: &mut ParamStore,
    rng: &mut impl Rng,
) -> Vec<ConvLayer> {
    let mut c = in_ch;
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let fan_in = c * s.kernel * s.kernel;
            let w = store.add_uniform(
                format!("{prefix}.{i}.w"),
                &[s.out, c, s.kernel, s.kernel],
                fan_in,
                rng,
            );
            let b = store.add_zeros(format!("{prefix}.{i}.b"), &[s.out]);
            c = s.out;
            ConvLayer { w, b, spec: *s }
        })
        .collect()
}

fn conv(tape: &mut Tape, p: &Bound, l: &ConvLayer, x: Var) -> Result<Var> {
    tape.conv2d(x, p[l.w], Some(p[l.b]), l.spec.stride, l.spec.kernel / 2)
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    layers: Vec<ConvLayer>,
}

impl Encoder {
    pub fn new(
        prefix: &str,
        cfg: EncoderConfig,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let layers = make_layers(prefix, cfg.in_channels, &cfg.stages, store, rng);
        Ok(Encoder { cfg, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// `in×H×W → C×(H/f)×(W/f)`, ReLU after every stage.
    pub fn encode(&self, tape: &mut Tape, p: &Bound, input: Var) -> Result<Var> {
        let s = tape.shape(input).to_vec();
        let f = self.cfg.downsample_factor;
        if s.len() != 3 || s[0] != self.cfg.in_channels || s[1] % f != 0 || s[2] % f != 0 {
            return Err(Error::shape("encode", &s, &[self.cfg.in_channels, f, f]));
        }
        let mut x = input;
        for l in &self.layers {
            let y = conv(tape, p, l, x)?;
            x = tape.relu(y);
        }
        Ok(x)
    }
}

/// Spatial means of the three channel blocks of `F` (order base, wrist, tip),
/// stacked as a `3×(C/3)` node matrix.
pub fn partition_and_pool(tape: &mut Tape, f: Var) -> Result<Var> {
    let c = tape.shape(f)[0];
    if c % 3 != 0 {
        return Err(Error::shape("partition_and_pool", tape.shape(f), &[3]));
    }
    let pooled = tape.mean_spatial(f)?;
    tape.reshape(pooled, &[3, c / 3])
}

/// Per-partition 1×1 convolutions to a single logit map each.
#[derive(Debug, Clone)]
pub struct DeepSupervisionHeads {
    heads: [ConvLayer; 3],
}

impl DeepSupervisionHeads {
    pub fn new(
        prefix: &str,
        feature_channels: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Self {
        let d = feature_channels / 3;
        let heads = [0, 1, 2].map(|k| {
            make_layers(
                &format!("{prefix}.{k}"),
                d,
                &[ConvSpec::new(1, 1, 1)],
                store,
                rng,
            )
            .remove(0)
        });
        DeepSupervisionHeads { heads }
    }

    pub fn ids(&self, part: usize) -> (ParamId, ParamId) {
        (self.heads[part].w, self.heads[part].b)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, f: Var) -> Result<[Var; 3]> {
        let d = tape.shape(f)[0] / 3;
        let mut out = Vec::with_capacity(3);
        for (k, head) in self.heads.iter().enumerate() {
            let block = tape.slice0(f, k * d, d)?;
            out.push(conv(tape, p, head, block)?);
        }
        Ok([out[0], out[1], out[2]])
    }
}

/// Number of decoder stages.
pub const DECODER_STAGES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderConfig {
    pub in_channels: usize,
    pub upscale: usize,
    pub classes: usize,
    /// Exactly five stages; the last one outputs `classes` channels.
    pub stages: Vec<ConvSpec>,
}

impl DecoderConfig {
    /// Five stages, of which the last `log2(upscale)` upsample first.
    pub fn toy(in_channels: usize, upscale: usize, classes: usize) -> Result<Self> {
        let ups = log2_exact(upscale)
            .filter(|&u| u <= DECODER_STAGES)
            .ok_or_else(|| {
                Error::Config(vec![format!(
                    "decoder upscale {upscale} is not reachable with {DECODER_STAGES} doublings"
                )])
            })?;
        let plan = [(32, 1), (32, 3), (16, 3), (8, 3), (classes, 3)];
        let stages = plan
            .iter()
            .enumerate()
            .map(|(i, &(out, k))| ConvSpec {
                out,
                kernel: k,
                stride: 1,
                upsample: i >= DECODER_STAGES - ups,
            })
            .collect();
        let cfg = DecoderConfig {
            in_channels,
            upscale,
            classes,
            stages,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut p = Vec::new();
        if self.stages.len() != DECODER_STAGES {
            p.push(format!(
                "decoder needs {DECODER_STAGES} stages, got {}",
                self.stages.len()
            ));
        }
        let doublings = self.stages.iter().filter(|s| s.upsample).count();
        if 1usize.checked_shl(doublings as u32) != Some(self.upscale) {
            p.push(format!(
                "decoder doubles {doublings} times but upscale is {}",
                self.upscale
            ));
        }
        if self.stages.last().map(|s| s.out) != Some(self.classes) {
            p.push("last decoder stage must output the class count".into());
        }
        for s in &self.stages {
            if s.kernel % 2 == 0 || s.stride != 1 || s.out == 0 {
                p.push(format!(
                    "unsupported decoder stage {s:?} (odd kernel, stride 1)"
                ));
            }
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    cfg: DecoderConfig,
    layers: Vec<ConvLayer>,
}

impl Decoder {
    pub fn new(
        prefix: &str,
        cfg: DecoderConfig,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let layers = make_layers(prefix, cfg.in_channels, &cfg.stages, store, rng);
        Ok(Decoder { cfg, layers })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    /// `in×h×w → classes×(h·upscale)×(w·upscale)` logits.
    pub fn decode(&self, tape: &mut Tape, p: &Bound, f: Var) -> Result<Var> {
        if tape.shape(f).len() != 3 || tape.shape(f)[0] != self.cfg.in_channels {
            return Err(Error::shape(
                "decode",
                tape.shape(f),
                &[self.cfg.in_channels],
            ));
        }
        let mut x = f;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            if l.spec.upsample {
                x = tape.upsample(x, 2)?;
            }
            x = conv(tape, p, l, x)?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}
