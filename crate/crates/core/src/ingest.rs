//! Image and ROI-map loading, channel split, intensity-layer decomposition and
//! patch tiling.
//!
//! Every channel is quantised into `n` ordered intensity layers of width
//! `1/n`. Layer `j` holds the pixels whose intensity lies in `(j/n, (j+1)/n]`,
//! so exact zeros belong to no layer and full intensity lands in the top one.
//! Layers are then cut into non-overlapping square patches. Images whose sides
//! are not a multiple of the patch size are zero-padded on the right and bottom.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_PATCH_SIZE: usize = 16;
pub const DEFAULT_NUM_LAYERS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    #[serde(rename = "R")]
    Red,
    #[serde(rename = "G")]
    Green,
    #[serde(rename = "B")]
    Blue,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Red, Channel::Green, Channel::Blue];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Channel::Red => "R",
            Channel::Green => "G",
            Channel::Blue => "B",
        }
    }
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Source dimensions of an image and the patch size it is tiled with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchLayout {
    pub patch_size: usize,
    pub source_width: usize,
    pub source_height: usize,
}

impl PatchLayout {
    pub fn new(patch_size: usize, source_width: usize, source_height: usize) -> Result<Self> {
        if patch_size < 2 {
            return Err(Error::Validation(format!(
                "patch size must be at least 2, got {patch_size}"
            )));
        }
        if source_width == 0 || source_height == 0 {
            return Err(Error::Validation("image has zero area".into()));
        }
        Ok(PatchLayout {
            patch_size,
            source_width,
            source_height,
        })
    }

    pub fn padded_width(&self) -> usize {
        self.source_width.div_ceil(self.patch_size) * self.patch_size
    }

    pub fn padded_height(&self) -> usize {
        self.source_height.div_ceil(self.patch_size) * self.patch_size
    }

    /// Patch-grid rows.
    pub fn rows(&self) -> usize {
        self.padded_height() / self.patch_size
    }

    /// Patch-grid columns.
    pub fn cols(&self) -> usize {
        self.padded_width() / self.patch_size
    }

    pub fn total_patches(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Whether a raw `width x height` raster pads to the same dimensions.
    fn pads_to_same(&self, width: usize, height: usize) -> bool {
        width > 0
            && height > 0
            && width <= self.padded_width()
            && height <= self.padded_height()
            && width.div_ceil(self.patch_size) == self.cols()
            && height.div_ceil(self.patch_size) == self.rows()
    }
}

/// An RGB image with channel values in `[0, 1]`, already padded to a
/// multiple of its patch size.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    layout: PatchLayout,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    /// Builds an image from unpadded row-major pixels and pads it with zeros.
    pub fn from_pixels(
        width: usize,
        height: usize,
        pixels: Vec<[f64; 3]>,
        patch_size: usize,
    ) -> Result<Self> {
        let layout = PatchLayout::new(patch_size, width, height)?;
        if pixels.len() != width * height {
            return Err(Error::Validation(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .flatten()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Validation(format!(
                "channel value {bad} outside [0, 1]"
            )));
        }
        let (pw, ph) = (layout.padded_width(), layout.padded_height());
        let mut padded = vec![[0.0; 3]; pw * ph];
        for y in 0..height {
            padded[y * pw..y * pw + width].copy_from_slice(&pixels[y * width..(y + 1) * width]);
        }
        Ok(RgbImage {
            layout,
            pixels: padded,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        patch_size: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::from_pixels(width, height, pixels, patch_size)
    }

    pub fn from_rgb8(img: &image::RgbImage, patch_size: usize) -> Result<Self> {
        let pixels = img
            .pixels()
            .map(|p| p.0.map(|v| f64::from(v) / 255.0))
            .collect();
        Self::from_pixels(img.width() as usize, img.height() as usize, pixels, patch_size)
    }

    pub fn layout(&self) -> PatchLayout {
        self.layout
    }

    /// Padded width.
    pub fn width(&self) -> usize {
        self.layout.padded_width()
    }

    /// Padded height.
    pub fn height(&self) -> usize {
        self.layout.padded_height()
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width() + x]
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    /// Quantises back to 8 bits per channel at padded size.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width() as u32, self.height() as u32);
        for (dst, src) in out.pixels_mut().zip(&self.pixels) {
            dst.0 = src.map(to_u8);
        }
        out
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads a PNG or PPM file, normalises 8-bit values by 255 and pads to
/// `patch_size`. Alpha is ignored.
pub fn load_image(path: impl AsRef<Path>, patch_size: usize) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{format:?} images are not supported, use PNG or PPM"),
        });
    }
    let decoded =
        image::load_from_memory_with_format(&bytes, format).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    RgbImage::from_rgb8(&decoded.to_rgb8(), patch_size)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPlane {
    pub channel: Channel,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ChannelPlane {
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

pub fn split_channels(img: &RgbImage) -> [ChannelPlane; 3] {
    Channel::ALL.map(|channel| ChannelPlane {
        channel,
        width: img.width(),
        height: img.height(),
        values: img.pixels.iter().map(|p| p[channel.index()]).collect(),
    })
}

/// Layer holding `value` out of `num_layers`, or `None` for exact zero.
///
/// Values within 1e-9 of a layer's upper edge stay in that layer so that
/// 8-bit inputs like 51/255 = 0.2 land in `(0.1, 0.2]` despite rounding.
pub fn layer_index(value: f64, num_layers: usize) -> Option<usize> {
    if value <= 0.0 {
        return None;
    }
    let scaled = (value * num_layers as f64 - 1e-9).ceil();
    Some((scaled.max(1.0) as usize - 1).min(num_layers - 1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinaryLayer {
    pub channel: Channel,
    pub layer_index: usize,
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl BinaryLayer {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Splits a plane into `num_layers` binary layers of step `1 / num_layers`.
pub fn decompose_layers(plane: &ChannelPlane, num_layers: usize) -> Vec<BinaryLayer> {
    assert!(num_layers >= 1, "need at least one layer");
    let mut layers: Vec<BinaryLayer> = (0..num_layers)
        .map(|layer_index| BinaryLayer {
            channel: plane.channel,
            layer_index,
            width: plane.width,
            height: plane.height,
            mask: vec![false; plane.values.len()],
        })
        .collect();
    for (i, &v) in plane.values.iter().enumerate() {
        if let Some(j) = layer_index(v, num_layers) {
            layers[j].mask[i] = true;
        }
    }
    layers
}

/// One square receptive field cut from a binary layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    pub grid_row: usize,
    pub grid_col: usize,
    pub size: usize,
    /// Row-major `size x size` bits.
    pub bits: Vec<bool>,
    pub active_count: usize,
}

impl Patch {
    pub fn from_bits(grid_row: usize, grid_col: usize, size: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), size * size);
        let active_count = bits.iter().filter(|&&b| b).count();
        Patch {
            grid_row,
            grid_col,
            size,
            bits,
            active_count,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.size + col]
    }

    /// `(row, col)` of every set bit, row-major.
    pub fn active_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.size, i % self.size))
    }
}

pub fn tile_patches(layer: &BinaryLayer, patch_size: usize) -> Result<Grid<Patch>> {
    if patch_size == 0 || !layer.width.is_multiple_of(patch_size) || !layer.height.is_multiple_of(patch_size) {
        return Err(Error::Validation(format!(
            "{}x{} layer is not a multiple of patch size {patch_size}",
            layer.width, layer.height
        )));
    }
    let rows = layer.height / patch_size;
    let cols = layer.width / patch_size;
    Ok(Grid::from_fn(rows, cols, |gr, gc| {
        let mut bits = Vec::with_capacity(patch_size * patch_size);
        for y in gr * patch_size..(gr + 1) * patch_size {
            let start = y * layer.width + gc * patch_size;
            bits.extend_from_slice(&layer.mask[start..start + patch_size]);
        }
        Patch::from_bits(gr, gc, patch_size, bits)
    }))
}

/// Integrated ROI frequency map: per-pixel number of subjects who selected it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiMap {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl RoiMap {
    pub fn new(width: usize, height: usize, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != width * height {
            return Err(Error::Validation(format!(
                "ROI map of {width}x{height} needs {} counts, got {}",
                width * height,
                counts.len()
            )));
        }
        Ok(RoiMap {
            width,
            height,
            counts,
        })
    }

    pub fn from_rows(rows: &[Vec<u32>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Validation(format!(
                "ROI row {bad} has {} values, expected {width}",
                rows[bad].len()
            )));
        }
        Self::new(width, rows.len(), rows.concat())
    }

    pub fn count(&self, x: usize, y: usize) -> u32 {
        self.counts[y * self.width + x]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    /// Zero-pads to the padded dimensions of `layout`, rejecting maps whose
    /// size differs from the image by more than padding.
    pub fn padded_to(&self, layout: &PatchLayout) -> Result<Self> {
        if !layout.pads_to_same(self.width, self.height) {
            return Err(Error::Validation(format!(
                "ROI map is {}x{} but the image pads to {}x{}",
                self.width,
                self.height,
                layout.padded_width(),
                layout.padded_height()
            )));
        }
        let (pw, ph) = (layout.padded_width(), layout.padded_height());
        let mut counts = vec![0; pw * ph];
        for y in 0..self.height {
            counts[y * pw..y * pw + self.width]
                .copy_from_slice(&self.counts[y * self.width..(y + 1) * self.width]);
        }
        Ok(RoiMap {
            width: pw,
            height: ph,
            counts,
        })
    }
}

/// Parses comma-separated non-negative integer counts, one raster row per line.
pub fn parse_roi_csv(reader: impl Read) -> Result<RoiMap> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field.parse::<u32>().map_err(|_| {
                    Error::Validation(format!(
                        "ROI line {}: {field:?} is not a non-negative integer",
                        line + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    RoiMap::from_rows(&rows)
}

/// Loads a CSV or grayscale-image ROI map and pads it to match `layout`.
pub fn load_roi_map(path: impl AsRef<Path>, layout: &PatchLayout) -> Result<RoiMap> {
    let path = path.as_ref();
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv") || e.eq_ignore_ascii_case("txt"));
    let raw = if is_csv {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        parse_roi_csv(file)?
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let img = image::load_from_memory(&bytes).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let luma = img.to_luma8();
        RoiMap::new(
            luma.width() as usize,
            luma.height() as usize,
            luma.pixels().map(|p| u32::from(p.0[0])).collect(),
        )?
    };
    raw.padded_to(layout)
}
