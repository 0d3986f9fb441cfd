//! Patch-level comparison of a salient set against an integrated ROI map.
//!
//! A patch is ROI-positive when any pixel in its footprint has a nonzero
//! count. Selected positive patches are true positives, selected all-zero
//! patches false positives, unselected positive patches false negatives.
//! Metrics with a zero denominator are `None` rather than 0.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ingest::{to_u8, RgbImage, RoiMap};

pub type PatchCoord = (usize, usize);

/// ROI statistics per patch footprint.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct PatchMass {
    positive: bool,
    count_sum: u64,
    pixels: u64,
}

impl PatchMass {
    /// Mass after adding one to every pixel's count.
    fn shifted(&self) -> f64 {
        (self.count_sum + self.pixels) as f64
    }
}

fn patch_masses(salient: &Grid<bool>, roi: &RoiMap) -> Result<Grid<PatchMass>> {
    let (rows, cols) = (salient.rows(), salient.cols());
    if rows == 0 || cols == 0 {
        return Err(Error::Validation("salient grid is empty".into()));
    }
    let divisible = roi.width.is_multiple_of(cols) && roi.height.is_multiple_of(rows);
    if !divisible || roi.width / cols != roi.height / rows {
        return Err(Error::Validation(format!(
            "ROI map {}x{} does not tile a {cols}x{rows} patch grid",
            roi.width, roi.height
        )));
    }
    let size = roi.width / cols;
    Ok(Grid::from_fn(rows, cols, |r, c| {
        let mut mass = PatchMass {
            pixels: (size * size) as u64,
            ..PatchMass::default()
        };
        for y in r * size..(r + 1) * size {
            for x in c * size..(c + 1) * size {
                let v = roi.count(x, y);
                mass.positive |= v > 0;
                mass.count_sum += u64::from(v);
            }
        }
        mass
    }))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchClassification {
    pub true_positives: Vec<PatchCoord>,
    pub false_positives: Vec<PatchCoord>,
    pub false_negatives: Vec<PatchCoord>,
}

impl PatchClassification {
    pub fn tp(&self) -> usize {
        self.true_positives.len()
    }

    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_count(&self) -> usize {
        self.false_negatives.len()
    }
}

pub fn classify_patches(salient: &Grid<bool>, roi: &RoiMap) -> Result<PatchClassification> {
    let masses = patch_masses(salient, roi)?;
    let mut out = PatchClassification::default();
    for (r, c, mass) in masses.iter_indexed() {
        match (salient[(r, c)], mass.positive) {
            (true, true) => out.true_positives.push((r, c)),
            (true, false) => out.false_positives.push((r, c)),
            (false, true) => out.false_negatives.push((r, c)),
            (false, false) => {}
        }
    }
    Ok(out)
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// `tp / (tp + fp)`
pub fn precision(c: &PatchClassification) -> Option<f64> {
    ratio(c.tp() as f64, (c.tp() + c.fp()) as f64)
}

/// `tp / (tp + fn)`
pub fn recall(c: &PatchClassification) -> Option<f64> {
    ratio(c.tp() as f64, (c.tp() + c.fn_count()) as f64)
}

/// Share of the normalised ROI mass that falls inside selected patches.
pub fn weighted_precision(salient: &Grid<bool>, roi: &RoiMap) -> Result<Option<f64>> {
    let masses = patch_masses(salient, roi)?;
    let total: u64 = masses.as_slice().iter().map(|m| m.count_sum).sum();
    let inside: u64 = masses
        .iter_indexed()
        .filter(|&(r, c, _)| salient[(r, c)])
        .map(|(_, _, m)| m.count_sum)
        .sum();
    Ok(ratio(inside as f64, total as f64))
}

/// Recall with each positive patch weighted by its pixel count sum after
/// adding one to every count.
pub fn weighted_recall(salient: &Grid<bool>, roi: &RoiMap) -> Result<Option<f64>> {
    let masses = patch_masses(salient, roi)?;
    let (mut hit, mut all) = (0.0, 0.0);
    for (r, c, m) in masses.iter_indexed() {
        if m.positive {
            all += m.shifted();
            if salient[(r, c)] {
                hit += m.shifted();
            }
        }
    }
    Ok(ratio(hit, all))
}

/// Sum of `count + 1` over all selected patches, positive or not.
pub fn selected_shifted_mass(salient: &Grid<bool>, roi: &RoiMap) -> Result<f64> {
    let masses = patch_masses(salient, roi)?;
    Ok(masses
        .iter_indexed()
        .filter(|&(r, c, _)| salient[(r, c)])
        .map(|(_, _, m)| m.shifted())
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub image: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub weighted_recall: Option<f64>,
    pub weighted_precision: Option<f64>,
    /// Diagnostic: `count + 1` summed over tp and fp patches.
    pub tp_fp_shifted_mass: f64,
}

pub fn evaluate(image: &str, salient: &Grid<bool>, roi: &RoiMap) -> Result<EvalReport> {
    let c = classify_patches(salient, roi)?;
    Ok(EvalReport {
        image: image.to_owned(),
        tp: c.tp(),
        fp: c.fp(),
        fn_count: c.fn_count(),
        recall: recall(&c),
        precision: precision(&c),
        weighted_recall: weighted_recall(salient, roi)?,
        weighted_precision: weighted_precision(salient, roi)?,
        tp_fp_shifted_mass: selected_shifted_mass(salient, roi)?,
    })
}

/// Column-wise mean over the defined entries only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricAverages {
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub weighted_recall: Option<f64>,
    pub weighted_precision: Option<f64>,
}

pub fn average(reports: &[EvalReport]) -> MetricAverages {
    let mean = |f: fn(&EvalReport) -> Option<f64>| {
        let vals: Vec<f64> = reports.iter().filter_map(f).collect();
        ratio(vals.iter().sum(), vals.len() as f64)
    };
    MetricAverages {
        recall: mean(|r| r.recall),
        precision: mean(|r| r.precision),
        weighted_recall: mean(|r| r.weighted_recall),
        weighted_precision: mean(|r| r.weighted_precision),
    }
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |v| v.to_string())
}

/// `image,recall,precision,weighted_recall,weighted_precision` rows followed
/// by an `average` row. Undefined values are written as `NA`.
pub fn write_reports_csv(reports: &[EvalReport], out: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "image",
        "recall",
        "precision",
        "weighted_recall",
        "weighted_precision",
    ])?;
    for r in reports {
        wtr.write_record([
            r.image.clone(),
            fmt_metric(r.recall),
            fmt_metric(r.precision),
            fmt_metric(r.weighted_recall),
            fmt_metric(r.weighted_precision),
        ])?;
    }
    let avg = average(reports);
    wtr.write_record([
        "average".to_owned(),
        fmt_metric(avg.recall),
        fmt_metric(avg.precision),
        fmt_metric(avg.weighted_recall),
        fmt_metric(avg.weighted_precision),
    ])?;
    wtr.flush().map_err(|e| Error::io("<eval csv>", e))?;
    Ok(())
}

const OUTLINE: [u8; 3] = [255, 255, 0];

/// Blue-to-red ramp for `t` in `[0, 1]`.
fn heat(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    if t < 0.5 {
        [0.0, 2.0 * t, 1.0 - 2.0 * t]
    } else {
        [2.0 * t - 1.0, 2.0 - 2.0 * t, 0.0]
    }
}

/// Draws one-pixel outlines around salient patches on top of the image.
/// With an ROI map, pixels with nonzero counts are first blended half-way
/// towards a blue (rare) to red (frequent) heat colour.
pub fn render_overlay(img: &RgbImage, salient: &Grid<bool>, roi: Option<&RoiMap>) -> Result<image::RgbImage> {
    let (w, h) = (img.width(), img.height());
    let (rows, cols) = (salient.rows(), salient.cols());
    if rows == 0 || cols == 0 || w % cols != 0 || rows * (w / cols) != h {
        return Err(Error::Validation(format!(
            "{cols}x{rows} salient grid does not tile a {w}x{h} image"
        )));
    }
    let size = w / cols;
    let mut out = img.to_rgb8();
    if let Some(roi) = roi {
        if roi.width != w || roi.height != h {
            return Err(Error::Validation(format!(
                "ROI map {}x{} does not match image {w}x{h}",
                roi.width, roi.height
            )));
        }
        let max = roi.counts.iter().copied().max().unwrap_or(0);
        if max > 0 {
            for (i, px) in out.pixels_mut().enumerate() {
                let count = roi.counts[i];
                if count > 0 {
                    let color = heat(f64::from(count) / f64::from(max));
                    let base = img.pixels()[i];
                    px.0 = [0, 1, 2].map(|k| to_u8(0.5 * base[k] + 0.5 * color[k]));
                }
            }
        }
    }
    for (r, c, &on) in salient.iter_indexed() {
        if !on {
            continue;
        }
        let (x0, y0) = (c * size, r * size);
        for k in 0..size {
            for (x, y) in [
                (x0 + k, y0),
                (x0 + k, y0 + size - 1),
                (x0, y0 + k),
                (x0 + size - 1, y0 + k),
            ] {
                out.put_pixel(x as u32, y as u32, image::Rgb(OUTLINE));
            }
        }
    }
    Ok(out)
}
