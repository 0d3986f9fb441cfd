use hebbsal::eval::{
    average, classify_patches, evaluate, precision, recall, render_overlay, weighted_precision,
    weighted_recall, write_reports_csv,
};
use hebbsal::{Grid, RgbImage, RoiMap};
use proptest::prelude::*;

const P: usize = 4;

/// ROI map whose 4x4 patch footprints are filled with `per_patch[r][c]`.
fn block_roi(rows: usize, cols: usize, per_patch: &[u32]) -> RoiMap {
    let (w, h) = (cols * P, rows * P);
    let counts = (0..w * h)
        .map(|i| per_patch[(i / w / P) * cols + (i % w) / P])
        .collect();
    RoiMap::new(w, h, counts).unwrap()
}

fn case() -> impl Strategy<Value = (usize, usize, Vec<u32>, Vec<bool>, Vec<bool>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(rows, cols)| {
        let n = rows * cols;
        (
            Just(rows),
            Just(cols),
            prop::collection::vec(prop::sample::select(vec![0u32, 0, 1, 2, 5, 9]), n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn in_unit(v: Option<f64>) -> bool {
    v.is_none_or(|x| (0.0..=1.0).contains(&x))
}

proptest! {
    #[test]
    fn growing_selection_never_lowers_recall((rows, cols, roi, a, extra) in case()) {
        let roi = block_roi(rows, cols, &roi);
        let small = Grid::from_vec(rows, cols, a.clone());
        let big = Grid::from_vec(rows, cols, a.iter().zip(&extra).map(|(x, y)| *x || *y).collect());
        let r = |s: &Grid<bool>| recall(&classify_patches(s, &roi).unwrap()).unwrap_or(0.0);
        let wr = |s: &Grid<bool>| weighted_recall(s, &roi).unwrap().unwrap_or(0.0);
        let wp = |s: &Grid<bool>| weighted_precision(s, &roi).unwrap().unwrap_or(0.0);
        prop_assert!(r(&small) <= r(&big));
        prop_assert!(wr(&small) <= wr(&big));
        prop_assert!(wp(&small) <= wp(&big));
    }

    #[test]
    fn metrics_stay_in_unit_interval((rows, cols, roi, sel, _) in case()) {
        let roi = block_roi(rows, cols, &roi);
        let s = Grid::from_vec(rows, cols, sel);
        let rep = evaluate("x", &s, &roi).unwrap();
        prop_assert!(in_unit(rep.recall) && in_unit(rep.precision));
        prop_assert!(in_unit(rep.weighted_recall) && in_unit(rep.weighted_precision));
        prop_assert_eq!(rep.tp + rep.fn_count, roi_positive(&roi, rows, cols));
    }

    #[test]
    fn uniform_roi_counts_make_weighted_recall_equal_recall((rows, cols, roi, sel, _) in case(), level in 1u32..20) {
        let flat: Vec<u32> = roi.iter().map(|&v| if v > 0 { level } else { 0 }).collect();
        let roi = block_roi(rows, cols, &flat);
        let s = Grid::from_vec(rows, cols, sel);
        let r = recall(&classify_patches(&s, &roi).unwrap());
        let wr = weighted_recall(&s, &roi).unwrap();
        match (r, wr) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
            (a, b) => prop_assert_eq!(a.is_none(), b.is_none()),
        }
    }

    #[test]
    fn selecting_heaviest_patches_favours_weighted_recall((rows, cols, roi, _, _) in case(), k in 0usize..30) {
        // choose the k heaviest positive patches: weighted recall cannot fall below recall
        let mut order: Vec<usize> = (0..roi.len()).filter(|&i| roi[i] > 0).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(roi[i]));
        let mut sel = vec![false; roi.len()];
        for &i in order.iter().take(k) {
            sel[i] = true;
        }
        let map = block_roi(rows, cols, &roi);
        let s = Grid::from_vec(rows, cols, sel);
        if let (Some(r), Some(wr)) = (recall(&classify_patches(&s, &map).unwrap()), weighted_recall(&s, &map).unwrap()) {
            prop_assert!(wr + 1e-12 >= r);
        }
    }
}

fn roi_positive(roi: &RoiMap, rows: usize, cols: usize) -> usize {
    let mut n = 0;
    for r in 0..rows {
        for c in 0..cols {
            let any = (0..P).any(|dy| (0..P).any(|dx| roi.count(c * P + dx, r * P + dy) > 0));
            n += usize::from(any);
        }
    }
    n
}

#[test]
fn hand_computed_fixture() {
    // patches: [3, 0; 1, 0], selected: top row
    let roi = block_roi(2, 2, &[3, 0, 1, 0]);
    let s = Grid::from_vec(2, 2, vec![true, true, false, false]);
    let rep = evaluate("fixture", &s, &roi).unwrap();
    assert_eq!((rep.tp, rep.fp, rep.fn_count), (1, 1, 1));
    assert_eq!(rep.recall, Some(0.5));
    assert_eq!(rep.precision, Some(0.5));
    let wp = rep.weighted_precision.unwrap();
    assert!((wp - 48.0 / 64.0).abs() < 1e-9);
    // shifted masses: 16 * 4 = 64 selected, 16 * 2 = 32 missed
    let wr = rep.weighted_recall.unwrap();
    assert!((wr - 64.0 / 96.0).abs() < 1e-9);
}

#[test]
fn empty_roi_and_empty_selection() {
    let roi = block_roi(1, 2, &[0, 0]);
    let s = Grid::from_vec(1, 2, vec![false, true]);
    let rep = evaluate("blank", &s, &roi).unwrap();
    assert_eq!(rep.recall, None);
    assert_eq!(rep.weighted_precision, None);
    assert_eq!(rep.precision, Some(0.0));

    let none = Grid::filled(1, 2, false);
    let roi = block_roi(1, 2, &[1, 0]);
    assert_eq!(precision(&classify_patches(&none, &roi).unwrap()), None);
}

#[test]
fn csv_average_skips_undefined() {
    let roi_a = block_roi(1, 2, &[2, 0]);
    let roi_b = block_roi(1, 2, &[0, 0]);
    let s = Grid::from_vec(1, 2, vec![true, true]);
    let reports = vec![
        evaluate("a", &s, &roi_a).unwrap(),
        evaluate("b", &s, &roi_b).unwrap(),
    ];
    let avg = average(&reports);
    assert_eq!(avg.recall, Some(1.0));
    assert_eq!(avg.precision, Some(0.25));

    let mut buf = Vec::new();
    write_reports_csv(&reports, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "image,recall,precision,weighted_recall,weighted_precision");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("b,NA,0"));
    assert!(lines[3].starts_with("average,1"));
}

#[test]
fn overlay_without_roi_outlines_selection() {
    let img = RgbImage::from_fn(32, 16, 16, |_, _| [0.2; 3]).unwrap();
    let s = Grid::from_vec(1, 2, vec![false, true]);
    let out = render_overlay(&img, &s, None).unwrap();
    assert_eq!(out.dimensions(), (32, 16));
    assert_eq!(out.get_pixel(16, 0).0, [255, 255, 0]);
    assert_eq!(out.get_pixel(24, 8).0, [51, 51, 51]);
    assert_eq!(out.get_pixel(0, 0).0, [51, 51, 51]);
}
