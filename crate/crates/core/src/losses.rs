//! Segmentation, deep-supervision and node contrastive losses.

use crate::diff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::render::LabelMask;

pub const CLASSES: usize = 4;
/// Smoothing added to numerator and denominator of soft Dice.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    /// L2-normalize node embeddings before the contrastive dot products.
    pub normalize_embeddings: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 1.0,
            lambda2: 0.05,
            tau: 0.1,
            normalize_embeddings: true,
        }
    }
}

impl LossConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.lambda1 >= 0.0) {
            p.push(format!(
                "lambda1 must be non-negative, got {}",
                self.lambda1
            ));
        }
        if !(self.lambda2 >= 0.0) {
            p.push(format!(
                "lambda2 must be non-negative, got {}",
                self.lambda2
            ));
        }
        if !(self.tau > 0.0) {
            p.push(format!("tau must be positive, got {}", self.tau));
        }
        p
    }
}

fn one_hot(target: &LabelMask) -> Tensor {
    let n = target.width() * target.height();
    let mut t = Tensor::zeros(&[CLASSES, target.height(), target.width()]);
    for (i, &l) in target.labels().iter().enumerate() {
        t.data_mut()[l as usize * n + i] = 1.0;
    }
    t
}

/// Mean pixel cross-entropy plus one minus the mean soft Dice of the three
/// foreground classes.
pub fn ce_dice_loss(tape: &mut Tape, logits: Var, target: &LabelMask) -> Result<Var> {
    let shape = [CLASSES, target.height(), target.width()];
    if tape.shape(logits) != shape {
        return Err(Error::shape("ce_dice_loss", tape.shape(logits), &shape));
    }
    let n = (target.width() * target.height()) as f64;
    let oh_t = one_hot(target);
    let gsum: Vec<f64> = oh_t
        .data()
        .chunks_exact(n as usize)
        .map(|c| c.iter().sum())
        .collect();
    let oh = tape.constant(oh_t);

    let lsm = tape.log_softmax(logits, 0)?;
    let picked = tape.mul(lsm, oh)?;
    let total = tape.sum(picked);
    let ce = tape.scale(total, -1.0 / n);

    let probs = tape.softmax(logits, 0)?;
    let inter = tape.mul(probs, oh)?;
    let inter = tape.mean_spatial(inter)?;
    let psum = tape.mean_spatial(probs)?;
    let num = tape.scale(inter, 2.0 * n);
    let num = tape.add_scalar(num, DICE_SMOOTH);
    let den = tape.scale(psum, n);
    let g = tape.constant(Tensor::new(
        &[CLASSES],
        gsum.iter().map(|g| g + DICE_SMOOTH).collect(),
    )?);
    let den = tape.add(den, g)?;
    let dice = tape.div(num, den)?;
    let fg = tape.slice0(dice, 1, CLASSES - 1)?;
    let mean_dice = tape.mean(fg);
    let one_minus = tape.scale(mean_dice, -1.0);
    let dice_term = tape.add_scalar(one_minus, 1.0);
    tape.add(ce, dice_term)
}

/// Binary CE on logits plus one minus soft Dice on their sigmoid.
pub fn binary_ce_dice(tape: &mut Tape, logits: Var, target: &[f64]) -> Result<Var> {
    if tape.value(logits).len() != target.len() {
        return Err(Error::shape(
            "binary_ce_dice",
            tape.shape(logits),
            &[target.len()],
        ));
    }
    let shape = tape.shape(logits).to_vec();
    let t = tape.constant(Tensor::new(&shape, target.to_vec())?);
    let sp = tape.softplus(logits);
    let tx = tape.mul(t, logits)?;
    let bce = tape.sub(sp, tx)?;
    let bce = tape.mean(bce);

    let p = tape.sigmoid(logits);
    let pt = tape.mul(p, t)?;
    let inter = tape.sum(pt);
    let psum = tape.sum(p);
    let tsum: f64 = target.iter().sum();
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, DICE_SMOOTH);
    let den = tape.add_scalar(psum, tsum + DICE_SMOOTH);
    let dice = tape.div(num, den)?;
    let one_minus = tape.scale(dice, -1.0);
    let dice_term = tape.add_scalar(one_minus, 1.0);
    tape.add(bce, dice_term)
}

/// Binary target for `class_id` at `1/factor` resolution: a cell is positive
/// when at least half of its pixels carry the class.
pub fn majority_downsample(mask: &LabelMask, factor: usize, class_id: u8) -> Result<Vec<f64>> {
    if factor == 0 || mask.width() % factor != 0 || mask.height() % factor != 0 {
        return Err(Error::MaskSize(mask.width(), mask.height(), factor, factor));
    }
    let (w, h) = (mask.width() / factor, mask.height() / factor);
    let mut out = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let mut count = 0;
            for dy in 0..factor {
                for dx in 0..factor {
                    count += (mask.get(u * factor + dx, v * factor + dy) == class_id) as usize;
                }
            }
            if 2 * count >= factor * factor {
                out[v * w + u] = 1.0;
            }
        }
    }
    Ok(out)
}

/// Mean over base, wrist and tip of the binary CEDice between each head and
/// the majority-pooled part mask.
pub fn deep_supervision_loss(tape: &mut Tape, heads: &[Var; 3], target: &LabelMask) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    for (k, &head) in heads.iter().enumerate() {
        let s = tape.shape(head).to_vec();
        if s.len() != 3 || s[1] == 0 || target.height() % s[1] != 0 || target.width() % s[2] != 0 {
            return Err(Error::shape(
                "deep_supervision_loss",
                &s,
                &[1, target.height(), target.width()],
            ));
        }
        let factor = target.height() / s[1];
        if target.width() / s[2] != factor {
            return Err(Error::shape(
                "deep_supervision_loss",
                &s,
                &[1, target.height(), target.width()],
            ));
        }
        let t = majority_downsample(target, factor, k as u8 + 1)?;
        let l = binary_ce_dice(tape, head, &t)?;
        terms.push(tape.reshape(l, &[1])?);
    }
    let all = tape.concat0(&terms)?;
    Ok(tape.mean(all))
}

fn l2_normalize_rows(tape: &mut Tape, h: Var) -> Result<Var> {
    let (r, d) = (tape.shape(h)[0], tape.shape(h)[1]);
    let sq = tape.mul(h, h)?;
    let ones = tape.constant(Tensor::full(&[d, 1], 1.0));
    let norms2 = tape.matmul(sq, ones)?;
    let norms2 = tape.add_scalar(norms2, 1e-12);
    let ln = tape.ln(norms2);
    let half = tape.scale(ln, -0.5);
    let inv = tape.exp(half);
    let inv = tape.reshape(inv, &[r])?;
    tape.scale_channels(h, inv)
}

/// Node-wise InfoNCE over both graphs. Every node of either graph is an
/// anchor; its positive is the same-index node of the other graph and its
/// negatives are the other-graph nodes with different index.
pub fn node_contrastive_loss(
    tape: &mut Tape,
    h_vis: Var,
    h_kin: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    if tape.shape(h_vis) != tape.shape(h_kin) || tape.shape(h_vis).len() != 2 {
        return Err(Error::shape(
            "node_contrastive_loss",
            tape.shape(h_vis),
            tape.shape(h_kin),
        ));
    }
    if !tape.value(h_vis).all_finite() || !tape.value(h_kin).all_finite() {
        return Err(Error::NonFinite("node embeddings"));
    }
    let n = tape.shape(h_vis)[0];
    let (hv, hk) = if cfg.normalize_embeddings {
        (
            l2_normalize_rows(tape, h_vis)?,
            l2_normalize_rows(tape, h_kin)?,
        )
    } else {
        (h_vis, h_kin)
    };
    let hk_t = tape.transpose(hk)?;
    let dots = tape.matmul(hv, hk_t)?;
    let s = tape.scale(dots, 1.0 / cfg.tau);
    // rows: visual anchors; columns: kinematics anchors
    let row_lse = tape.logsumexp(s, 1)?;
    let col_lse = tape.logsumexp(s, 0)?;
    let eye = tape.constant(Tensor::from_fn(&[n, n], |k| {
        if k / n == k % n {
            1.0
        } else {
            0.0
        }
    }));
    let diag = tape.mul(s, eye)?;
    let trace = tape.sum(diag);
    let rs = tape.sum(row_lse);
    let cs = tape.sum(col_lse);
    let lse_total = tape.add(rs, cs)?;
    let twice_trace = tape.scale(trace, 2.0);
    let total = tape.sub(lse_total, twice_trace)?;
    Ok(tape.scale(total, 1.0 / (2 * n) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub seg: f64,
    pub nc: f64,
    pub ds: f64,
    pub total: f64,
}

/// `seg + λ1·nc + λ2·ds`; absent terms count as zero.
pub fn total_loss(
    tape: &mut Tape,
    seg: Var,
    nc: Option<Var>,
    ds: Option<Var>,
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let mut total = seg;
    let mut b = LossBreakdown {
        seg: tape.value(seg).item(),
        ..Default::default()
    };
    if let Some(nc) = nc {
        b.nc = tape.value(nc).item();
        let t = tape.scale(nc, cfg.lambda1);
        total = tape.add(total, t)?;
    }
    if let Some(ds) = ds {
        b.ds = tape.value(ds).item();
        let t = tape.scale(ds, cfg.lambda2);
        total = tape.add(total, t)?;
    }
    b.total = tape.value(total).item();
    if !b.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            seg: b.seg,
            nc: b.nc,
            ds: b.ds,
        });
    }
    Ok((total, b))
}

/// Scalar form of the weighted sum.
pub fn combine(seg: f64, nc: f64, ds: f64, cfg: &LossConfig) -> f64 {
    seg + cfg.lambda1 * nc + cfg.lambda2 * ds
}
