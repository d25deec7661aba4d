//! Part graph message passing, attention fusion, pooling and the overlap
//! metrics against dense or exhaustive references.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tipseg::diff::{Tape, Tensor, Var};
use tipseg::encoders::partition_and_pool;
use tipseg::eval::{score_frame, FrameScores, MetricReport};
use tipseg::metrics::{dice, iou};
use tipseg::part_graph::{fuse_attention, gcn_forward, PartGraph};
use tipseg::render::LabelMask;

type Mat = Vec<Vec<f64>>;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r)
        .map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    (0..a.len())
        .map(|i| {
            (0..b[0].len())
                .map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn to_tensor(m: &Mat) -> Tensor {
    Tensor::new(&[m.len(), m[0].len()], m.concat()).unwrap()
}

/// Normalized adjacency written out from the edge list and degree counts.
fn dense_adjacency(edges: &[(usize, usize)]) -> Mat {
    let indeg = |n: usize| edges.iter().filter(|e| e.1 == n).count().max(1) as f64;
    let mut a = vec![vec![0.0; 3]; 3];
    for &(s, d) in edges {
        a[d][s] = 1.0 / (indeg(d).sqrt() * indeg(s).sqrt());
    }
    a
}

fn dense_gcn(a: &Mat, h0: &Mat, ws: &[Mat]) -> Mat {
    let mut h = h0.clone();
    for (l, w) in ws.iter().enumerate() {
        h = matmul(&matmul(a, &h), w);
        if l + 1 < ws.len() {
            h.iter_mut().flatten().for_each(|x| *x = x.max(0.0));
        }
    }
    h
}

fn run_gcn(g: &PartGraph, h0: &Mat, ws: &[Mat]) -> Vec<f64> {
    let mut tape = Tape::new();
    let h = tape.constant(to_tensor(h0));
    let w: Vec<Var> = ws.iter().map(|w| tape.constant(to_tensor(w))).collect();
    let out = gcn_forward(&mut tape, g, h, &w).unwrap();
    tape.value(out).data().to_vec()
}

const EDGES: [(usize, usize); 5] = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2)];

#[test]
fn normalized_adjacency_by_hand() {
    let a = PartGraph::build().adjacency();
    let r2 = 2f64.sqrt();
    let want = [[1.0, 0.0, 0.0], [1.0 / r2, 0.5, 0.0], [0.0, 0.5, 0.5]];
    for i in 0..3 {
        for j in 0..3 {
            assert!((a[i][j] - want[i][j]).abs() < 1e-15, "({i},{j})");
        }
    }
}

#[test]
fn gcn_matches_dense_oracle_at_every_depth() {
    let g = PartGraph::build();
    let a = dense_adjacency(&EDGES);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..30 {
        let d = rng.gen_range(1..8);
        let h0 = rand_mat(&mut rng, 3, d);
        let ws: Vec<Mat> = (0..3).map(|_| rand_mat(&mut rng, d, d)).collect();
        for depth in 1..=3 {
            let got = run_gcn(&g, &h0, &ws[..depth]);
            let want = dense_gcn(&a, &h0, &ws[..depth]).concat();
            for (x, y) in got.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "depth {depth}");
            }
        }
    }
}

#[test]
fn without_self_loops_tip_state_never_reaches_base_or_wrist() {
    let g = PartGraph::with_edges(&[(0, 1), (1, 2)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = 4;
    let h0 = rand_mat(&mut rng, 3, d);
    let ws: Vec<Mat> = (0..3).map(|_| rand_mat(&mut rng, d, d)).collect();
    let mut bumped = h0.clone();
    bumped[2].iter_mut().for_each(|x| *x += 5.0);
    for depth in 1..=3 {
        let a = run_gcn(&g, &h0, &ws[..depth]);
        let b = run_gcn(&g, &bumped, &ws[..depth]);
        assert_eq!(a[..2 * d], b[..2 * d], "depth {depth}");
        assert!(a.iter().all(|x| x.is_finite()));
    }
    // with a path into the tip the perturbation of the base does propagate
    let mut base_bumped = h0.clone();
    base_bumped[0].iter_mut().for_each(|x| *x += 5.0);
    let a = run_gcn(&g, &h0, &ws[..2]);
    let b = run_gcn(&g, &base_bumped, &ws[..2]);
    assert_ne!(a[2 * d..], b[2 * d..]);
}

fn fuse(f: &Tensor, nodes: &Tensor) -> Vec<f64> {
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let nv = tape.constant(nodes.clone());
    let y = fuse_attention(&mut tape, fv, nv).unwrap();
    assert_eq!(tape.shape(y), f.shape());
    tape.value(y).data().to_vec()
}

#[test]
fn attention_matches_channel_loop_and_saturates() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (c, h, w) = (6, 3, 5);
    let f = Tensor::from_fn(&[c, h, w], |_| rng.gen_range(-2.0..2.0));
    let nodes = Tensor::from_fn(&[3, 2], |_| rng.gen_range(-3.0..3.0));
    let got = fuse(&f, &nodes);
    for ch in 0..c {
        let s = 1.0 / (1.0 + (-nodes.data()[ch]).exp());
        for y in 0..h {
            for x in 0..w {
                let k = (ch * h + y) * w + x;
                assert!((got[k] - s * f.data()[k]).abs() < 1e-15);
            }
        }
    }
    let hi = fuse(&f, &Tensor::full(&[3, 2], 800.0));
    let lo = fuse(&f, &Tensor::full(&[3, 2], -800.0));
    assert_eq!(hi, f.data());
    assert!(lo.iter().all(|&x| x == 0.0));
}

#[test]
fn pooling_matches_spatial_mean_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (c, h, w) = (9, 4, 3);
    let f = Tensor::from_fn(&[c, h, w], |_| rng.gen_range(-1.0..1.0));
    let mut tape = Tape::new();
    let fv = tape.constant(f.clone());
    let p = partition_and_pool(&mut tape, fv).unwrap();
    assert_eq!(tape.shape(p), &[3, 3]);
    for ch in 0..c {
        let mean: f64 = f.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64;
        assert!((tape.value(p).data()[ch] - mean).abs() < 1e-15);
    }
}

fn mask_from_bits(bits: u32, class: u8) -> LabelMask {
    LabelMask::from_labels(
        3,
        3,
        (0..9)
            .map(|k| if bits >> k & 1 == 1 { class } else { 0 })
            .collect(),
    )
    .unwrap()
}

#[test]
fn metrics_match_counting_on_every_3x3_pair() {
    let class = 3;
    for a in 0u32..512 {
        let pred = mask_from_bits(a, class);
        for b in 0u32..512 {
            let gt = mask_from_bits(b, class);
            let (p, g, i) = (a.count_ones(), b.count_ones(), (a & b).count_ones());
            let u = (a | b).count_ones();
            let want_dice = if p + g == 0 {
                1.0
            } else {
                2.0 * i as f64 / (p + g) as f64
            };
            let want_iou = if u == 0 { 1.0 } else { i as f64 / u as f64 };
            assert_eq!(dice(&pred, &gt, class).unwrap(), want_dice, "{a} {b}");
            assert_eq!(iou(&pred, &gt, class).unwrap(), want_iou, "{a} {b}");
        }
    }
}

#[test]
fn dice_iou_identity_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let (w, h) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let m = |rng: &mut ChaCha8Rng| {
            LabelMask::from_labels(w, h, (0..w * h).map(|_| rng.gen_range(0..4)).collect()).unwrap()
        };
        let (p, g) = (m(&mut rng), m(&mut rng));
        for class in 1..4 {
            let (d, j) = (dice(&p, &g, class).unwrap(), iou(&p, &g, class).unwrap());
            assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
            assert!(d >= j && (0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&j));
        }
    }
}

#[test]
fn hand_counted_fixtures() {
    // |P| = 2, |G| = 2, |P∩G| = 1
    let p = LabelMask::from_labels(2, 2, vec![3, 3, 0, 0]).unwrap();
    let g = LabelMask::from_labels(2, 2, vec![3, 0, 3, 0]).unwrap();
    assert_eq!(dice(&p, &g, 3).unwrap(), 0.5);
    assert!((iou(&p, &g, 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert!(dice(&p, &LabelMask::new(3, 2), 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gcn_is_equivariant_to_hidden_permutations(
        h0 in prop::collection::vec(-1.0f64..1.0, 15),
        w in prop::collection::vec(-1.0f64..1.0, 50),
        perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let g = PartGraph::build();
        let h: Mat = h0.chunks(5).map(<[f64]>::to_vec).collect();
        let ws: Vec<Mat> = w.chunks(25).map(|c| c.chunks(5).map(<[f64]>::to_vec).collect()).collect();
        let ph: Mat = h.iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect();
        let pws: Vec<Mat> = ws.iter().map(|m| perm.iter().map(|&i| perm.iter().map(|&j| m[i][j]).collect()).collect()).collect();
        let out = run_gcn(&g, &h, &ws);
        let pout = run_gcn(&g, &ph, &pws);
        for n in 0..3 {
            for (k, &p) in perm.iter().enumerate() {
                prop_assert!((pout[n * 5 + k] - out[n * 5 + p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooling_is_linear(f in prop::collection::vec(-5.0f64..5.0, 48), alpha in -4.0f64..4.0) {
        let pool = |data: Vec<f64>| {
            let mut tape = Tape::new();
            let fv = tape.constant(Tensor::new(&[6, 2, 4], data).unwrap());
            let p = partition_and_pool(&mut tape, fv).unwrap();
            tape.value(p).data().to_vec()
        };
        let base = pool(f.clone());
        let scaled = pool(f.iter().map(|x| alpha * x).collect());
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((alpha * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_never_amplifies(
        f in prop::collection::vec(-10.0f64..10.0, 24),
        a in prop::collection::vec(-50.0f64..50.0, 6),
    ) {
        let ft = Tensor::new(&[6, 2, 2], f.clone()).unwrap();
        let out = fuse(&ft, &Tensor::new(&[3, 2], a).unwrap());
        for (o, x) in out.iter().zip(&f) {
            prop_assert!(o.abs() <= x.abs());
        }
    }

    #[test]
    fn report_is_invariant_to_frame_order(
        scores in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 1..20),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let frames: Vec<FrameScores> = scores
            .iter()
            .map(|s| FrameScores { dice: [s[0], s[1], s[2]], iou: [s[3], s[4], s[5]] })
            .collect();
        let mut shuffled = frames.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (MetricReport::from_frames(&frames), MetricReport::from_frames(&shuffled));
        for k in 0..3 {
            prop_assert!((a.dice[k].mean - b.dice[k].mean).abs() < 1e-12);
            prop_assert!((a.iou[k].std - b.iou[k].std).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_scores_are_bounded(
        p in prop::collection::vec(0u8..4, 36),
        g in prop::collection::vec(0u8..4, 36),
    ) {
        let s = score_frame(&LabelMask::from_labels(6, 6, p).unwrap(), &LabelMask::from_labels(6, 6, g).unwrap()).unwrap();
        for k in 0..3 {
            prop_assert!(s.dice[k] >= s.iou[k] && s.dice[k] <= 1.0 && s.iou[k] >= 0.0);
        }
    }
}
