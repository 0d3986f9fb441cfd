//! Synthetic scenes shared by the integration tests.
#![allow(dead_code)]

use hebbsal::{Grid, RgbImage};

pub const BACKGROUND: f64 = 0.5;
/// Cross-section of a stroke, outermost rows first. Spans layers 6, 7 and 9.
pub const STROKE_PROFILE: [f64; 5] = [0.65, 0.75, 0.95, 0.75, 0.65];
pub const STROKE_LEN: usize = 12;

/// Intensity at `(x, y)` inside one 16x16 cell holding a centred stroke.
fn stroke_cell(x: usize, y: usize, vertical: bool) -> f64 {
    let (along, across) = if vertical { (y, x) } else { (x, y) };
    let start = (16 - STROKE_LEN) / 2;
    let first = (16 - STROKE_PROFILE.len()) / 2;
    if (start..start + STROKE_LEN).contains(&along)
        && (first..first + STROKE_PROFILE.len()).contains(&across)
    {
        STROKE_PROFILE[across - first]
    } else {
        BACKGROUND
    }
}

/// Gray field with one short stroke per 16x16 cell. Cells inside the
/// `target` rectangle (patch units: row, col, height, width) carry strokes
/// perpendicular to the background ones.
pub fn oriented_scene(
    size: usize,
    target: (usize, usize, usize, usize),
    background_vertical: bool,
) -> RgbImage {
    let (tr, tc, th, tw) = target;
    RgbImage::from_fn(size, size, 16, |x, y| {
        let (r, c) = (y / 16, x / 16);
        let in_target = (tr..tr + th).contains(&r) && (tc..tc + tw).contains(&c);
        let v = stroke_cell(x % 16, y % 16, background_vertical != in_target);
        [v; 3]
    })
    .unwrap()
}

/// Target rectangle of [`acceptance_scene`] in patch units. Off-centre so a
/// 90 degree rotation moves it.
pub const ACCEPTANCE_TARGET: (usize, usize, usize, usize) = (3, 10, 2, 2);

/// 256x256 horizontal-stroke scene with one 32x32 vertical-stroke region.
pub fn acceptance_scene() -> RgbImage {
    oriented_scene(256, ACCEPTANCE_TARGET, false)
}

pub fn target_truth(rows: usize, cols: usize, target: (usize, usize, usize, usize)) -> Grid<bool> {
    let (tr, tc, th, tw) = target;
    Grid::from_fn(rows, cols, |r, c| {
        (tr..tr + th).contains(&r) && (tc..tc + tw).contains(&c)
    })
}

/// Rotates a square image 90 degrees clockwise.
pub fn rotate_cw(img: &RgbImage) -> RgbImage {
    let n = img.width();
    RgbImage::from_fn(n, n, 16, |x, y| img.pixel(y, n - 1 - x)).unwrap()
}

/// Rotates a square grid 90 degrees clockwise.
pub fn rotate_grid_cw<T: Clone>(g: &Grid<T>) -> Grid<T> {
    let n = g.rows();
    Grid::from_fn(n, n, |r, c| g[(n - 1 - c, r)].clone())
}

pub fn salient_set(g: &Grid<bool>) -> Vec<(usize, usize)> {
    g.iter_indexed().filter(|(_, _, &b)| b).map(|(r, c, _)| (r, c)).collect()
}
