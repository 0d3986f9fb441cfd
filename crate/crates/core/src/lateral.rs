//! Stage 2: lateral comparison of neighbouring patch neurons and salient
//! region selection.
//!
//! Each active patch compares its learned weight vector with those of its (up
//! to) eight neighbours in the same channel and layer. A neighbour whose dot
//! product falls below `dissim_threshold` counts as dissimilar. Counts are
//! summed over the layers of a channel; a patch is salient for that channel
//! when the sum exceeds `count_threshold`. Channel masks are then added into a
//! per-patch frequency in `0..=3`, and patches whose frequency falls below the
//! expected value are discarded.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ingest::{
    decompose_layers, split_channels, tile_patches, BinaryLayer, Channel, PatchLayout, RgbImage,
};
use crate::oja::{learn_patch, patch_seed, LearnConfig, LearnedWeight, WeightVector};

/// Learned weights of every patch in one channel/layer. `None` marks an
/// inactive patch.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeightGrid {
    pub channel: Channel,
    pub layer_index: usize,
    pub cells: Grid<Option<LearnedWeight>>,
}

/// How the expected-value cutoff is derived from the raw incidence ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffMode {
    /// Incidences over channels and layers divided by patches per layer.
    #[default]
    Literal,
    /// Literal ratio capped at the number of channels.
    Clamp,
    /// Literal ratio divided by the number of layers.
    PerLayer,
}

impl CutoffMode {
    pub fn apply(self, raw: f64, num_channels: usize, num_layers: usize) -> f64 {
        match self {
            CutoffMode::Literal => raw,
            CutoffMode::Clamp => raw.min(num_channels as f64),
            CutoffMode::PerLayer => raw / num_layers.max(1) as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencyConfig {
    pub dissim_threshold: f64,
    /// A channel marks a patch salient when its summed count is strictly greater.
    pub count_threshold: u32,
    /// Compare `|w_c . w_i|` so the sign ambiguity of the learned PC1 is ignored.
    pub use_absolute_dot: bool,
    pub cutoff: CutoffMode,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig {
            dissim_threshold: 0.1,
            count_threshold: 10,
            use_absolute_dot: true,
            cutoff: CutoffMode::Literal,
        }
    }
}

impl SaliencyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dissim_threshold) {
            return Err(Error::Config(format!(
                "dissim_threshold must lie in [0, 1], got {}",
                self.dissim_threshold
            )));
        }
        Ok(())
    }
}

/// `w_c . w_i`
pub fn similarity(center: &WeightVector, other: &WeightVector) -> f64 {
    center.dot(other)
}

fn is_dissimilar(center: &WeightVector, other: &WeightVector, cfg: &SaliencyConfig) -> bool {
    let sim = similarity(center, other);
    let sim = if cfg.use_absolute_dot { sim.abs() } else { sim };
    sim < cfg.dissim_threshold
}

/// Number of active in-bounds neighbours dissimilar to the patch at
/// `(row, col)`. `None` when the centre patch itself is inactive.
pub fn count_dissimilar(
    grid: &LayerWeightGrid,
    row: usize,
    col: usize,
    cfg: &SaliencyConfig,
) -> Option<u32> {
    let center = grid.cells[(row, col)]?.weight;
    let count = grid
        .cells
        .neighbours(row, col)
        .filter_map(|(r, c)| grid.cells[(r, c)])
        .filter(|n| is_dissimilar(&center, &n.weight, cfg))
        .count();
    Some(count as u32)
}

fn layer_counts(grid: &LayerWeightGrid, cfg: &SaliencyConfig) -> Grid<u32> {
    Grid::from_fn(grid.cells.rows(), grid.cells.cols(), |r, c| {
        count_dissimilar(grid, r, c, cfg).unwrap_or(0)
    })
}

/// Per-channel Stage 2 result.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSaliency {
    pub channel: Channel,
    /// Dissimilar-neighbour counts for each layer, in layer order.
    pub layer_counts: Vec<Grid<u32>>,
    /// Sum of `layer_counts`.
    pub counts: Grid<u32>,
    pub mask: Grid<bool>,
}

impl ChannelSaliency {
    /// Layers in which a salient patch had at least one dissimilar neighbour.
    pub fn salient_incidences(&self) -> usize {
        self.layer_counts
            .iter()
            .map(|layer| {
                layer
                    .as_slice()
                    .iter()
                    .zip(self.mask.as_slice())
                    .filter(|(&n, &salient)| salient && n > 0)
                    .count()
            })
            .sum()
    }
}

pub fn channel_saliency(layers: &[LayerWeightGrid], cfg: &SaliencyConfig) -> Result<ChannelSaliency> {
    let first = layers
        .first()
        .ok_or_else(|| Error::Validation("channel has no layers".into()))?;
    if layers.iter().any(|l| !l.cells.same_shape(&first.cells) || l.channel != first.channel) {
        return Err(Error::Validation(
            "layers of one channel must share channel and grid shape".into(),
        ));
    }
    let layer_counts: Vec<Grid<u32>> = layers.iter().map(|l| layer_counts(l, cfg)).collect();
    let (rows, cols) = (first.cells.rows(), first.cells.cols());
    let counts = Grid::from_fn(rows, cols, |r, c| {
        layer_counts.iter().map(|g| g[(r, c)]).sum::<u32>()
    });
    let mask = counts.map(|&n| n > cfg.count_threshold);
    Ok(ChannelSaliency {
        channel: first.channel,
        layer_counts,
        counts,
        mask,
    })
}

/// Number of channel masks set at each patch.
pub fn aggregate_channels(masks: &[&Grid<bool>]) -> Result<Grid<u8>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Validation("no channel masks".into()))?;
    if masks.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::Validation("channel masks differ in shape".into()));
    }
    Ok(Grid::from_fn(first.rows(), first.cols(), |r, c| {
        masks.iter().filter(|m| m[(r, c)]).count() as u8
    }))
}

/// Keeps patches with nonzero frequency at or above `expected_value`.
pub fn apply_cutoff(frequencies: &Grid<u8>, expected_value: f64) -> Grid<bool> {
    frequencies.map(|&f| f > 0 && f64::from(f) >= expected_value)
}

/// Expected value is `salient_incidences / total_patches`; returns the
/// surviving patches together with it.
pub fn expected_value_cutoff(
    frequencies: &Grid<u8>,
    salient_incidences: usize,
    total_patches: usize,
) -> Result<(Grid<bool>, f64)> {
    if total_patches == 0 {
        return Err(Error::Validation("total patch count is zero".into()));
    }
    let expected = salient_incidences as f64 / total_patches as f64;
    Ok((apply_cutoff(frequencies, expected), expected))
}

/// Stage 1 output for a whole image.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightGrids {
    pub layout: PatchLayout,
    /// Indexed by channel, then layer.
    pub channels: Vec<Vec<LayerWeightGrid>>,
}

impl WeightGrids {
    pub fn num_layers(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    /// Dumps every patch as `channel,layer,row,col,w1,w2,status`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["channel", "layer", "row", "col", "w1", "w2", "status"])?;
        for grid in self.channels.iter().flatten() {
            for (r, c, cell) in grid.cells.iter_indexed() {
                let (w1, w2, status) = match cell {
                    Some(lw) => (
                        lw.weight.w1.to_string(),
                        lw.weight.w2.to_string(),
                        if lw.low_confidence { "isotropic" } else { "ok" },
                    ),
                    None => (String::new(), String::new(), "inactive"),
                };
                wtr.write_record([
                    grid.channel.label(),
                    &grid.layer_index.to_string(),
                    &r.to_string(),
                    &c.to_string(),
                    &w1,
                    &w2,
                    status,
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("<weights csv>", e))?;
        Ok(())
    }
}

pub fn learn_layer(
    layer: &BinaryLayer,
    patch_size: usize,
    global_seed: u64,
    learn_cfg: &LearnConfig,
) -> Result<LayerWeightGrid> {
    let patches = tile_patches(layer, patch_size)?;
    let cells = patches.map(|p| {
        let cfg = LearnConfig {
            seed: patch_seed(
                global_seed,
                layer.channel.index(),
                layer.layer_index,
                p.grid_row,
                p.grid_col,
            ),
            ..learn_cfg.clone()
        };
        learn_patch(p, &cfg)
    });
    Ok(LayerWeightGrid {
        channel: layer.channel,
        layer_index: layer.layer_index,
        cells,
    })
}

/// Stage 1 over every channel and layer, run in parallel. Patch shuffles are
/// seeded from `learn_cfg.seed` and the patch position, so the result does
/// not depend on scheduling.
pub fn learn_weights(img: &RgbImage, num_layers: usize, learn_cfg: &LearnConfig) -> Result<WeightGrids> {
    learn_cfg.validate()?;
    if num_layers == 0 {
        return Err(Error::Config("num_layers must be at least 1".into()));
    }
    let layout = img.layout();
    let channels = split_channels(img)
        .par_iter()
        .map(|plane| {
            decompose_layers(plane, num_layers)
                .par_iter()
                .map(|layer| learn_layer(layer, layout.patch_size, learn_cfg.seed, learn_cfg))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightGrids { layout, channels })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyGrid {
    pub layout: PatchLayout,
    pub num_layers: usize,
    pub channels: Vec<ChannelSaliency>,
    pub frequencies: Grid<u8>,
    pub salient_incidences: usize,
    /// Incidence ratio before the configured [`CutoffMode`] is applied.
    pub raw_expected_value: f64,
    pub expected_value: f64,
    pub salient: Grid<bool>,
}

/// Stage 2 over precomputed weights.
pub fn stage_two(weights: &WeightGrids, cfg: &SaliencyConfig) -> Result<SaliencyGrid> {
    cfg.validate()?;
    let channels = weights
        .channels
        .iter()
        .map(|layers| channel_saliency(layers, cfg))
        .collect::<Result<Vec<_>>>()?;
    let masks: Vec<&Grid<bool>> = channels.iter().map(|c| &c.mask).collect();
    let frequencies = aggregate_channels(&masks)?;
    let salient_incidences = channels.iter().map(ChannelSaliency::salient_incidences).sum();
    let (_, raw_expected_value) =
        expected_value_cutoff(&frequencies, salient_incidences, frequencies.len())?;
    let num_layers = weights.num_layers();
    let expected_value = cfg
        .cutoff
        .apply(raw_expected_value, channels.len(), num_layers);
    let salient = apply_cutoff(&frequencies, expected_value);
    Ok(SaliencyGrid {
        layout: weights.layout,
        num_layers,
        channels,
        frequencies,
        salient_incidences,
        raw_expected_value,
        expected_value,
        salient,
    })
}

/// Full pipeline: channel split, layer decomposition, tiling, per-patch Oja
/// learning, then Stage 2.
pub fn detect(
    img: &RgbImage,
    num_layers: usize,
    cfg: &SaliencyConfig,
    learn_cfg: &LearnConfig,
) -> Result<SaliencyGrid> {
    let weights = learn_weights(img, num_layers, learn_cfg)?;
    stage_two(&weights, cfg)
}

/// JSON form of a [`SaliencyGrid`]. Grids are flattened row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyReport {
    pub patch_size: usize,
    pub source_width: usize,
    pub source_height: usize,
    pub width_patches: usize,
    pub height_patches: usize,
    pub num_layers: usize,
    pub expected_value: f64,
    pub raw_expected_value: f64,
    pub salient_incidences: usize,
    /// Summed dissimilarity counts in R, G, B order.
    pub per_channel_counts: Vec<Vec<u32>>,
    pub channel_masks: Vec<Vec<u8>>,
    pub frequencies: Vec<u8>,
    pub salient: Vec<u8>,
}

impl SaliencyGrid {
    pub fn salient_count(&self) -> usize {
        self.salient.as_slice().iter().filter(|&&b| b).count()
    }

    pub fn to_report(&self) -> SaliencyReport {
        let bits = |g: &Grid<bool>| g.as_slice().iter().map(|&b| u8::from(b)).collect();
        SaliencyReport {
            patch_size: self.layout.patch_size,
            source_width: self.layout.source_width,
            source_height: self.layout.source_height,
            width_patches: self.salient.cols(),
            height_patches: self.salient.rows(),
            num_layers: self.num_layers,
            expected_value: self.expected_value,
            raw_expected_value: self.raw_expected_value,
            salient_incidences: self.salient_incidences,
            per_channel_counts: self
                .channels
                .iter()
                .map(|c| c.counts.as_slice().to_vec())
                .collect(),
            channel_masks: self.channels.iter().map(|c| bits(&c.mask)).collect(),
            frequencies: self.frequencies.as_slice().to_vec(),
            salient: bits(&self.salient),
        }
    }
}

impl SaliencyReport {
    pub fn layout(&self) -> Result<PatchLayout> {
        let layout = PatchLayout::new(self.patch_size, self.source_width, self.source_height)?;
        if layout.cols() != self.width_patches || layout.rows() != self.height_patches {
            return Err(Error::Validation(format!(
                "saliency grid {}x{} does not match a {}x{} image at patch size {}",
                self.width_patches,
                self.height_patches,
                self.source_width,
                self.source_height,
                self.patch_size
            )));
        }
        Ok(layout)
    }

    pub fn salient_grid(&self) -> Result<Grid<bool>> {
        if self.salient.len() != self.width_patches * self.height_patches {
            return Err(Error::Validation("salient array length mismatch".into()));
        }
        Ok(Grid::from_vec(
            self.height_patches,
            self.width_patches,
            self.salient.iter().map(|&v| v != 0).collect(),
        ))
    }
}

/// Salient grid upsampled to pixels: 255 for salient patches, 0 elsewhere.
pub fn salient_mask_image(salient: &Grid<bool>, patch_size: usize) -> image::GrayImage {
    let (w, h) = (salient.cols() * patch_size, salient.rows() * patch_size);
    image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let on = salient[(y as usize / patch_size, x as usize / patch_size)];
        image::Luma([if on { 255 } else { 0 }])
    })
}
