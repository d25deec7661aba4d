#[path = "support/raster_oracle.rs"]
mod raster_oracle;

use proptest::prelude::*;
use raster_oracle::{oracle_rasterize, random_scene};
use tipseg::render::{rasterize, LabelMask};

#[test]
fn rasterizer_matches_brute_force_on_seeded_scenes() {
    for seed in 0..100 {
        let (meshes, intr) = random_scene(seed);
        let fast = rasterize(&meshes, &intr, 1.0);
        let slow = oracle_rasterize(&meshes, &intr, 1.0);
        assert_eq!(fast, slow, "seed {seed}");
    }
}

#[test]
fn oracle_square_fixture() {
    // square [10,20)^2 at depth 100 with fx = 100 and principal point at 0
    let intr = tipseg::render::CameraIntrinsics::new(100.0, 100.0, 0.0, 0.0, 64, 64).unwrap();
    let sq = tipseg::mesh::TriangleMesh::new(
        vec![
            [10.0, 10.0, 100.0],
            [20.0, 10.0, 100.0],
            [20.0, 20.0, 100.0],
            [10.0, 20.0, 100.0],
        ],
        vec![[0, 1, 2], [0, 2, 3]],
        vec![tipseg::mesh::PartId::Tip; 2],
    )
    .unwrap();
    assert_eq!(
        oracle_rasterize(&[sq], &intr, 1.0).count(tipseg::mesh::PartId::Tip),
        100
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn render_is_deterministic_and_labels_come_from_input(seed in 1000u64..100_000) {
        let (meshes, intr) = random_scene(seed);
        let a = rasterize(&meshes, &intr, 1.0);
        let b = rasterize(&meshes, &intr, 1.0);
        prop_assert_eq!(&a, &b);
        let mut allowed = vec![0u8];
        for m in &meshes {
            allowed.extend(m.labels().iter().map(|l| l.code()));
        }
        for l in a.label_set() {
            prop_assert!(allowed.contains(&l));
        }
    }

    #[test]
    fn upsampling_adds_no_labels(
        (w, h, labels) in (1usize..8, 1usize..8).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0u8..4, w * h))),
        factor in 1usize..4,
    ) {
        let m = LabelMask::from_labels(w, h, labels).unwrap();
        let up = m.upsample(factor);
        prop_assert_eq!(up.label_set(), m.label_set());
        prop_assert_eq!(up.width(), w * factor);
        for v in 0..up.height() {
            for u in 0..up.width() {
                prop_assert_eq!(up.get(u, v), m.get(u / factor, v / factor));
            }
        }
    }
}
