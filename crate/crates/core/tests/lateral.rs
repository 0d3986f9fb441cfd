mod common;

use common::{oriented_scene, salient_set, target_truth};
use hebbsal::lateral::{count_dissimilar, similarity, stage_two, LayerWeightGrid, WeightGrids};
use hebbsal::oja::LearnedWeight;
use hebbsal::{detect, Channel, Grid, LearnConfig, PatchLayout, SaliencyConfig, WeightVector};
use proptest::prelude::*;

type Cells = Vec<Option<(f64, f64)>>;

fn weight_grids(rows: usize, cols: usize, channels: &[Vec<Cells>]) -> WeightGrids {
    let layout = PatchLayout::new(16, cols * 16, rows * 16).unwrap();
    let channels = channels
        .iter()
        .zip(Channel::ALL)
        .map(|(layers, channel)| {
            layers
                .iter()
                .enumerate()
                .map(|(layer_index, cells)| LayerWeightGrid {
                    channel,
                    layer_index,
                    cells: Grid::from_vec(
                        rows,
                        cols,
                        cells
                            .iter()
                            .map(|c| {
                                c.map(|(a, b)| LearnedWeight {
                                    weight: WeightVector::new(a, b),
                                    low_confidence: false,
                                })
                            })
                            .collect(),
                    ),
                })
                .collect()
        })
        .collect();
    WeightGrids { layout, channels }
}

fn cells_strategy(n: usize) -> impl Strategy<Value = Cells> {
    prop::collection::vec(
        prop::option::weighted(0.8, (0.0f64..std::f64::consts::TAU).prop_map(|t| (t.cos(), t.sin()))),
        n,
    )
}

fn scene_strategy() -> impl Strategy<Value = (usize, usize, Vec<Vec<Cells>>)> {
    (1usize..5, 1usize..5, 1usize..4).prop_flat_map(|(rows, cols, layers)| {
        (
            Just(rows),
            Just(cols),
            prop::collection::vec(prop::collection::vec(cells_strategy(rows * cols), layers), 3),
        )
    })
}

fn low_cfg() -> SaliencyConfig {
    SaliencyConfig {
        count_threshold: 1,
        ..SaliencyConfig::default()
    }
}

proptest! {
    #[test]
    fn similarity_is_symmetric(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0) {
        let (u, v) = (WeightVector::new(a, b), WeightVector::new(c, d));
        prop_assert_eq!(similarity(&u, &v), similarity(&v, &u));
    }

    #[test]
    fn absolute_comparison_ignores_weight_sign((rows, cols, chans) in scene_strategy(), flips in any::<u64>()) {
        let cfg = low_cfg();
        let original = stage_two(&weight_grids(rows, cols, &chans), &cfg).unwrap();
        let mut bit = 0;
        let flipped: Vec<Vec<Cells>> = chans
            .iter()
            .map(|layers| {
                layers
                    .iter()
                    .map(|cells| {
                        cells
                            .iter()
                            .map(|c| {
                                bit = (bit + 1) % 64;
                                c.map(|(a, b)| if flips >> bit & 1 == 1 { (-a, -b) } else { (a, b) })
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let after = stage_two(&weight_grids(rows, cols, &flipped), &cfg).unwrap();
        for (x, y) in original.channels.iter().zip(&after.channels) {
            prop_assert_eq!(&x.counts, &y.counts);
        }
        prop_assert_eq!(original.salient, after.salient);
    }

    #[test]
    fn counts_grow_with_dissimilarity_threshold((rows, cols, chans) in scene_strategy(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let weights = weight_grids(rows, cols, &chans);
        let at = |t: f64| stage_two(&weights, &SaliencyConfig { dissim_threshold: t, ..low_cfg() }).unwrap();
        let (a, b) = (at(lo), at(hi));
        for (x, y) in a.channels.iter().zip(&b.channels) {
            for (p, q) in x.counts.as_slice().iter().zip(y.counts.as_slice()) {
                prop_assert!(p <= q);
            }
        }
    }

    #[test]
    fn channel_masks_shrink_with_count_threshold((rows, cols, chans) in scene_strategy(), lo in 0u32..12, extra in 0u32..12) {
        let weights = weight_grids(rows, cols, &chans);
        let at = |t: u32| stage_two(&weights, &SaliencyConfig { count_threshold: t, ..low_cfg() }).unwrap();
        let (a, b) = (at(lo), at(lo + extra));
        for (x, y) in a.channels.iter().zip(&b.channels) {
            for (p, q) in x.mask.as_slice().iter().zip(y.mask.as_slice()) {
                prop_assert!(!q || *p);
            }
        }
    }

    #[test]
    fn channel_order_does_not_matter((rows, cols, chans) in scene_strategy(), perm in prop::sample::select(vec![[0usize, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]])) {
        let cfg = low_cfg();
        let base = stage_two(&weight_grids(rows, cols, &chans), &cfg).unwrap();
        let permuted: Vec<Vec<Cells>> = perm.iter().map(|&i| chans[i].clone()).collect();
        let other = stage_two(&weight_grids(rows, cols, &permuted), &cfg).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(&other.channels[k].mask, &base.channels[i].mask);
        }
        prop_assert_eq!(other.frequencies, base.frequencies);
        prop_assert_eq!(other.salient_incidences, base.salient_incidences);
        prop_assert_eq!(other.salient, base.salient);
    }
}

#[test]
fn inactive_centre_and_neighbours() {
    let ortho = Some((0.0, 1.0));
    let mut cells: Cells = vec![Some((1.0, 0.0)); 9];
    cells[4] = None;
    let w = weight_grids(3, 3, &[vec![cells.clone()], vec![cells.clone()], vec![cells]]);
    let cfg = SaliencyConfig::default();
    assert_eq!(count_dissimilar(&w.channels[0][0], 1, 1, &cfg), None);

    let mut cells: Cells = vec![None; 9];
    cells[4] = Some((1.0, 0.0));
    cells[0] = ortho;
    cells[8] = ortho;
    let w = weight_grids(3, 3, &[vec![cells.clone()], vec![cells.clone()], vec![cells]]);
    assert_eq!(count_dissimilar(&w.channels[0][0], 1, 1, &cfg), Some(2));
}

fn scene_salient(target: (usize, usize, usize, usize)) -> Grid<bool> {
    let img = oriented_scene(256, target, false);
    let learn = LearnConfig {
        seed: 1,
        ..LearnConfig::default()
    };
    detect(&img, 10, &SaliencyConfig::default(), &learn)
        .unwrap()
        .salient
}

#[test]
fn odd_region_is_found() {
    let target = (6, 6, 2, 2);
    let salient = scene_salient(target);
    assert_eq!(salient, target_truth(16, 16, target));
}

#[test]
fn one_patch_shift_moves_the_result() {
    let a = salient_set(&scene_salient((5, 3, 2, 2)));
    let b = salient_set(&scene_salient((5, 4, 2, 2)));
    assert!(!a.is_empty());
    let shifted: Vec<_> = a.iter().map(|&(r, c)| (r, c + 1)).collect();
    assert_eq!(shifted, b);
}

#[test]
fn flat_image_has_no_salient_patches() {
    let img = hebbsal::RgbImage::from_fn(64, 48, 16, |_, _| [0.3, 0.6, 0.9]).unwrap();
    let out = detect(&img, 10, &SaliencyConfig::default(), &LearnConfig::default()).unwrap();
    assert_eq!(out.salient_count(), 0);
    assert_eq!(out.salient_incidences, 0);
}
