//! Finite-difference checks of the tape against every loss and layer used in
//! training, and of the assembled FULL model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tipseg::diff::{grad_check, grad_check_coords, Tape, Tensor, Var};
use tipseg::encoders::partition_and_pool;
use tipseg::losses::{self, LossConfig};
use tipseg::model::{rendered_tensor, Arm, Model, ModelConfig, Sample};
use tipseg::part_graph::{fuse_attention, gcn_forward, PartGraph};
use tipseg::render::LabelMask;
use tipseg::Result;

const EPS: f64 = 1e-6;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], amp: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-amp..amp))
}

fn rand_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> LabelMask {
    LabelMask::from_labels(w, h, (0..w * h).map(|_| rng.gen_range(0..4)).collect()).unwrap()
}

/// Contracts `v` with a fixed random tensor so the objective is a scalar
/// with a non-trivial gradient everywhere.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(v).to_vec();
    let r = tape.constant(rand_tensor(&mut rng, &shape, 1.0));
    tape.dot(v, r)
}

#[test]
fn gcn_stack_wrt_states_and_every_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = PartGraph::build();
    let d = 5;
    let h0 = rand_tensor(&mut rng, &[3, d], 1.0);
    let ws: Vec<Tensor> = (0..3)
        .map(|_| rand_tensor(&mut rng, &[d, d], 0.8))
        .collect();

    let err = grad_check(
        |tape, h| {
            let w: Vec<Var> = ws.iter().map(|w| tape.constant(w.clone())).collect();
            let out = gcn_forward(tape, &g, h, &w)?;
            project(tape, out, 7)
        },
        &h0,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "wrt H0: {err:e}");

    for layer in 0..3 {
        let err = grad_check(
            |tape, wv| {
                let h = tape.constant(h0.clone());
                let w: Vec<Var> = ws
                    .iter()
                    .enumerate()
                    .map(|(l, w)| {
                        if l == layer {
                            wv
                        } else {
                            tape.constant(w.clone())
                        }
                    })
                    .collect();
                let out = gcn_forward(tape, &g, h, &w)?;
                project(tape, out, 7)
            },
            &ws[layer],
            EPS,
        )
        .unwrap();
        assert!(err < 1e-5, "wrt W{layer}: {err:e}");
    }
}

#[test]
fn contrastive_wrt_both_graphs_raw_and_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hv = rand_tensor(&mut rng, &[3, 4], 1.0);
    let hk = rand_tensor(&mut rng, &[3, 4], 1.0);
    for normalize in [false, true] {
        let cfg = LossConfig {
            tau: 0.5,
            normalize_embeddings: normalize,
            ..Default::default()
        };
        let e1 = grad_check(
            |tape, v| {
                let k = tape.constant(hk.clone());
                losses::node_contrastive_loss(tape, v, k, &cfg)
            },
            &hv,
            EPS,
        )
        .unwrap();
        let e2 = grad_check(
            |tape, k| {
                let v = tape.constant(hv.clone());
                losses::node_contrastive_loss(tape, v, k, &cfg)
            },
            &hk,
            EPS,
        )
        .unwrap();
        assert!(
            e1 < 1e-5 && e2 < 1e-5,
            "normalize={normalize}: {e1:e} {e2:e}"
        );
    }
}

#[test]
fn ce_dice_and_deep_supervision() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let target = rand_mask(&mut rng, 6, 4);
    let logits = rand_tensor(&mut rng, &[4, 4, 6], 2.0);
    let err = grad_check(
        |tape, x| losses::ce_dice_loss(tape, x, &target),
        &logits,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "ce_dice: {err:e}");

    let target = rand_mask(&mut rng, 8, 8);
    let heads = rand_tensor(&mut rng, &[3, 1, 4, 4], 2.0);
    let err = grad_check(
        |tape, x| {
            let flat = tape.reshape(x, &[3, 16])?;
            let hs: Vec<Var> = (0..3)
                .map(|k| {
                    let s = tape.slice0(flat, k, 1)?;
                    tape.reshape(s, &[1, 4, 4])
                })
                .collect::<Result<_>>()?;
            losses::deep_supervision_loss(tape, &[hs[0], hs[1], hs[2]], &target)
        },
        &heads,
        EPS,
    )
    .unwrap();
    assert!(err < 1e-5, "deep supervision: {err:e}");
}

#[test]
fn total_loss_gradient_is_linear_in_terms() {
    let cfg = LossConfig::default();
    let x = Tensor::new(&[3], vec![0.7, -1.2, 2.5]).unwrap();
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let parts: Vec<Var> = (0..3)
        .map(|k| tape.slice0(v, k, 1).map(|s| tape.sum(s)))
        .collect::<Result<_>>()
        .unwrap();
    let (total, b) =
        losses::total_loss(&mut tape, parts[0], Some(parts[1]), Some(parts[2]), &cfg).unwrap();
    tape.backward(total).unwrap();
    assert_eq!(tape.grad(v).unwrap(), &[1.0, cfg.lambda1, cfg.lambda2]);
    assert!((b.total - losses::combine(0.7, -1.2, 2.5, &cfg)).abs() < 1e-12);
}

#[test]
fn layers_used_by_the_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[2, 7, 6], 1.0);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], 1.0);
    let b = rand_tensor(&mut rng, &[3], 1.0);
    for stride in [1, 2] {
        let e = grad_check(
            |tape, xv| {
                let (wv, bv) = (tape.constant(w.clone()), tape.constant(b.clone()));
                let y = tape.conv2d(xv, wv, Some(bv), stride, 1)?;
                project(tape, y, 11)
            },
            &x,
            EPS,
        )
        .unwrap();
        let ew = grad_check(
            |tape, wv| {
                let (xv, bv) = (tape.constant(x.clone()), tape.constant(b.clone()));
                let y = tape.conv2d(xv, wv, Some(bv), stride, 1)?;
                project(tape, y, 11)
            },
            &w,
            EPS,
        )
        .unwrap();
        assert!(e < 1e-5 && ew < 1e-5, "conv stride {stride}: {e:e} {ew:e}");
    }

    let f = rand_tensor(&mut rng, &[6, 3, 3], 1.0);
    let e = grad_check(
        |tape, fv| {
            let up = tape.upsample(fv, 2)?;
            let nodes = partition_and_pool(tape, fv)?;
            let fused = fuse_attention(tape, up, nodes)?;
            project(tape, fused, 12)
        },
        &f,
        EPS,
    )
    .unwrap();
    assert!(e < 1e-5, "pool/upsample/attention: {e:e}");

    let s = rand_tensor(&mut rng, &[4, 5], 3.0);
    for axis in [0, 1] {
        let e = grad_check(
            |tape, v| {
                let a = tape.softmax(v, axis)?;
                let b = tape.log_softmax(v, axis)?;
                let c = tape.logsumexp(v, axis)?;
                let pa = project(tape, a, 13)?;
                let pb = project(tape, b, 14)?;
                let pc = project(tape, c, 15)?;
                let ab = tape.add(pa, pb)?;
                tape.add(ab, pc)
            },
            &s,
            EPS,
        )
        .unwrap();
        assert!(e < 1e-5, "softmax axis {axis}: {e:e}");
    }
}

fn toy_sample(rng: &mut ChaCha8Rng, size: usize) -> Sample {
    // blocky target so every class and every pooled cell is populated
    let labels: Vec<u8> = (0..size * size)
        .map(|i| (((i % size) / 4 + (i / size) / 4) % 4) as u8)
        .collect();
    let target = LabelMask::from_labels(size, size, labels).unwrap();
    let rendered = rand_mask(rng, size, size);
    Sample {
        image: rand_tensor(rng, &[3, size, size], 0.5),
        rendered: Some(rendered_tensor(&rendered)),
        target,
    }
}

#[test]
fn full_arm_loss_wrt_every_parameter_tensor() {
    let cfg = ModelConfig {
        arm: Arm::Full,
        image_size: 16,
        feature_channels: 6,
        downsample_factor: 4,
        ..Default::default()
    };
    let mut model = Model::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // zero-initialized biases put all-zero inputs exactly on the ReLU kink
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        if model.params().name(id).ends_with(".b") {
            for b in model.params_mut().get_mut(id).data_mut() {
                *b = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let sample = toy_sample(&mut rng, 16);
    let store = model.params();
    for id in store.ids() {
        let t = store.get(id);
        if t.is_empty() {
            continue;
        }
        let coords: Vec<usize> = (0..t.len().min(12))
            .map(|k| k * t.len() / t.len().min(12))
            .collect();
        let e = grad_check_coords(
            |tape, v| {
                let p = store.bind_replacing(tape, id, v);
                Ok(model.loss(tape, &p, &sample)?.0)
            },
            t,
            EPS,
            Some(&coords),
        )
        .unwrap();
        assert!(e < 1e-3, "{}: {e:e}", store.name(id));
    }
}

#[test]
fn sum_of_squares_is_exact_under_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[5, 4], 3.0);
    let e = grad_check(
        |tape, v| {
            let sq = tape.mul(v, v)?;
            Ok(tape.sum(sq))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(e < 1e-7, "{e:e}");
}

#[test]
fn elementwise_and_structural_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::from_fn(&[2, 3, 4], |_| rng.gen_range(0.2..2.0));
    let y = Tensor::from_fn(&[2, 3, 4], |_| rng.gen_range(0.2..2.0));
    type Op = fn(&mut Tape, Var, Var) -> Result<Var>;
    let ops: [(&str, Op); 12] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("div", |t, a, b| t.div(a, b)),
        ("sigmoid", |t, a, _| Ok(t.sigmoid(a))),
        ("softplus", |t, a, _| Ok(t.softplus(a))),
        ("exp", |t, a, _| Ok(t.exp(a))),
        ("ln", |t, a, _| Ok(t.ln(a))),
        ("relu", |t, a, b| {
            let d = t.sub(a, b)?;
            Ok(t.relu(d))
        }),
        ("scalar", |t, a, _| {
            let s = t.scale(a, -1.7);
            Ok(t.add_scalar(s, 0.3))
        }),
        ("concat/slice", |t, a, b| {
            let c = t.concat0(&[a, b])?;
            t.slice0(c, 1, 2)
        }),
        ("scale_channels", |t, a, b| {
            let s = t.slice0(b, 0, 1)?;
            let s = t.reshape(s, &[12])?;
            let s = t.slice0(s, 0, 2)?;
            t.scale_channels(a, s)
        }),
    ];
    for (name, op) in ops {
        for wrt in 0..2 {
            let (var, other) = if wrt == 0 { (&x, &y) } else { (&y, &x) };
            let e = grad_check(
                |tape, v| {
                    let o = tape.constant(other.clone());
                    let out = if wrt == 0 {
                        op(tape, v, o)?
                    } else {
                        op(tape, o, v)?
                    };
                    project(tape, out, 16)
                },
                var,
                EPS,
            )
            .unwrap();
            assert!(e < 1e-5, "{name} wrt arg {wrt}: {e:e}");
        }
    }

    let a = rand_tensor(&mut rng, &[3, 5], 1.0);
    let b = rand_tensor(&mut rng, &[4, 5], 1.0);
    let e = grad_check(
        |tape, v| {
            let bv = tape.constant(b.clone());
            let bt = tape.transpose(bv)?;
            let m = tape.matmul(v, bt)?;
            let s = tape.mean(m);
            let d = tape.dot(m, m)?;
            tape.add(s, d)
        },
        &a,
        EPS,
    )
    .unwrap();
    assert!(e < 1e-5, "matmul/transpose/mean/dot: {e:e}");
}

#[test]
fn composite_conv_relu_pool_matmul_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = rand_tensor(&mut rng, &[3, 8, 8], 1.0);
    let w1 = rand_tensor(&mut rng, &[6, 3, 3, 3], 0.5);
    let w2 = rand_tensor(&mut rng, &[6, 4], 0.5);
    let target = Tensor::new(&[4], vec![0.0, 1.0, 0.0, 0.0]).unwrap();
    let f = |tape: &mut Tape, w1v: Var, w2v: Var| -> Result<Var> {
        let x = tape.constant(img.clone());
        let h = tape.conv2d(x, w1v, None, 2, 1)?;
        let h = tape.relu(h);
        let pooled = tape.mean_spatial(h)?;
        let row = tape.reshape(pooled, &[1, 6])?;
        let z = tape.matmul(row, w2v)?;
        let z = tape.reshape(z, &[4])?;
        let lsm = tape.log_softmax(z, 0)?;
        let t = tape.constant(target.clone());
        let nll = tape.dot(lsm, t)?;
        Ok(tape.scale(nll, -1.0))
    };
    let e1 = grad_check(
        |tape, v| {
            let w2v = tape.constant(w2.clone());
            f(tape, v, w2v)
        },
        &w1,
        1e-5,
    )
    .unwrap();
    let e2 = grad_check(
        |tape, v| {
            let w1v = tape.constant(w1.clone());
            f(tape, w1v, v)
        },
        &w2,
        1e-5,
    )
    .unwrap();
    assert!(e1 < 1e-4 && e2 < 1e-4, "{e1:e} {e2:e}");
}
