//! `hebbsal` command line: `detect`, `evaluate` and `inspect`.
//!
//! Configuration comes from an optional TOML file (see [`RunConfig`]) with
//! flags layered on top. The seed is taken from `--seed`, then the config
//! file, then `HEBBSAL_SEED`, then 0.
//!
//! Every run writes into one output directory:
//!
//! ```text
//! <out>/manifest.json        effective config + per-image status
//! <out>/config.toml          effective config, loadable with --config
//! <out>/<image>/saliency.json
//! <out>/<image>/mask.png
//! <out>/<image>/overlay.png
//! <out>/<image>/weights.csv  (with --emit-diagnostics)
//! ```

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, MetricAverages};
use crate::grid::Grid;
use crate::ingest::{
    self, decompose_layers, load_image, load_roi_map, split_channels, PatchLayout, RgbImage,
    DEFAULT_NUM_LAYERS, DEFAULT_PATCH_SIZE,
};
use crate::lateral::{learn_weights, salient_mask_image, stage_two, SaliencyConfig, SaliencyReport};
use crate::oja::LearnConfig;

pub const SEED_ENV: &str = "HEBBSAL_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub patch_size: usize,
    pub num_layers: usize,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub emit_diagnostics: bool,
    pub learn: LearnConfig,
    pub saliency: SaliencyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            patch_size: DEFAULT_PATCH_SIZE,
            num_layers: DEFAULT_NUM_LAYERS,
            seed: None,
            output_dir: PathBuf::from("hebbsal-out"),
            emit_diagnostics: false,
            learn: LearnConfig::default(),
            saliency: SaliencyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::Config("patch_size must be at least 2".into()));
        }
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be at least 1".into()));
        }
        self.learn.validate()?;
        self.saliency.validate()
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn learn_config(&self) -> LearnConfig {
        LearnConfig {
            seed: self.effective_seed(),
            ..self.learn.clone()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hebbsal", version, about = "Bottom-up saliency detection with Oja-learned patch orientations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect salient patches in one or more images.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score saliency results against integrated ROI maps.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// ROI map per input, in the same order (CSV or grayscale image).
        #[arg(long = "roi", required = true)]
        rois: Vec<PathBuf>,
        /// saliency.json files or images to run detection on.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Dump an intermediate stage of the pipeline.
    Inspect {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        stage: Stage,
        image: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Channels,
    Layers,
    Weights,
}

#[derive(Debug, Default, Args)]
struct CommonArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: hebbsal-out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the per-patch sample shuffles.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; does not change results.
    #[arg(long)]
    workers: Option<usize>,
    /// Layer step; must be the reciprocal of an integer.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    patch_size: Option<usize>,
    /// Neighbours whose |w . w'| falls below this are dissimilar.
    #[arg(long)]
    dissim_threshold: Option<f64>,
    /// A channel marks a patch when its summed count exceeds this.
    #[arg(long)]
    count_threshold: Option<u32>,
    /// Compare signed dot products instead of absolute values.
    #[arg(long)]
    no_absolute_dot: bool,
    /// Also write per-patch weights.csv.
    #[arg(long)]
    emit_diagnostics: bool,
}

fn layers_for_epsilon(eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Validation(format!("epsilon must lie in (0, 1], got {eps}")));
    }
    let n = (1.0 / eps).round();
    if (n * eps - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "epsilon {eps} is not the reciprocal of an integer"
        )));
    }
    Ok(n as usize)
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.seed = match (self.seed, cfg.seed) {
            (Some(s), _) | (None, Some(s)) => Some(s),
            (None, None) => Some(match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().map_err(|_| {
                    Error::Validation(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
                })?,
                Err(_) => 0,
            }),
        };
        if let Some(eps) = self.epsilon {
            cfg.num_layers = layers_for_epsilon(eps)?;
        }
        if let Some(p) = self.patch_size {
            cfg.patch_size = p;
        }
        if let Some(t) = self.dissim_threshold {
            cfg.saliency.dissim_threshold = t;
        }
        if let Some(t) = self.count_threshold {
            cfg.saliency.count_threshold = t;
        }
        if self.no_absolute_dot {
            cfg.saliency.use_absolute_dot = false;
        }
        if self.emit_diagnostics {
            cfg.emit_diagnostics = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Validation("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Name used for an input's output directory and eval row. A report written
/// by `detect` is named after its image directory.
fn stem(path: &Path) -> String {
    let parent = path.parent().and_then(Path::file_name);
    if let (Some(dir), true) = (parent, path.file_name().is_some_and(|f| f == "saliency.json")) {
        return dir.to_string_lossy().into_owned();
    }
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_owned())
}

/// Output subdirectory names, de-duplicated by suffixing `-2`, `-3`, ...
fn unique_names(paths: &[PathBuf]) -> Vec<String> {
    let mut seen = HashSet::new();
    paths
        .iter()
        .map(|p| {
            let base = stem(p);
            let mut name = base.clone();
            let mut k = 2;
            while !seen.insert(name.clone()) {
                name = format!("{base}-{k}");
                k += 1;
            }
            name
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub status: String,
    pub error: Option<String>,
    pub salient_patches: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub images: Vec<ImageRecord>,
}

impl Manifest {
    pub fn failures(&self) -> usize {
        self.images.iter().filter(|r| r.error.is_some()).count()
    }
}

fn detect_one(input: &Path, dir: &Path, cfg: &RunConfig) -> Result<usize> {
    let img = load_image(input, cfg.patch_size)?;
    let weights = learn_weights(&img, cfg.num_layers, &cfg.learn_config())?;
    let grid = stage_two(&weights, &cfg.saliency)?;
    create_dir(dir)?;
    let mut json = serde_json::to_string_pretty(&grid.to_report())?;
    json.push('\n');
    write_file(&dir.join("saliency.json"), json)?;
    save_png(&salient_mask_image(&grid.salient, cfg.patch_size), &dir.join("mask.png"))?;
    save_png(
        &eval::render_overlay(&img, &grid.salient, None)?,
        &dir.join("overlay.png"),
    )?;
    if cfg.emit_diagnostics {
        let path = dir.join("weights.csv");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        weights.write_csv(std::io::BufWriter::new(file))?;
    }
    Ok(grid.salient_count())
}

/// Runs detection on every image. Per-image failures are recorded in the
/// manifest and do not stop the batch.
pub fn cmd_detect(images: &[PathBuf], cfg: &RunConfig, workers: Option<usize>) -> Result<Manifest> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    create_dir(out)?;
    let names = unique_names(images);
    let pool = thread_pool(workers)?;
    let records: Vec<ImageRecord> = pool.install(|| {
        images
            .par_iter()
            .zip(names.par_iter())
            .map(|(input, name)| {
                let dir = out.join(name);
                let result = detect_one(input, &dir, cfg);
                ImageRecord {
                    input: input.clone(),
                    output_dir: dir,
                    status: if result.is_ok() { "ok" } else { "error" }.to_owned(),
                    salient_patches: result.as_ref().ok().copied(),
                    error: result.err().map(|e| e.to_string()),
                }
            })
            .collect()
    });
    let manifest = Manifest {
        config: cfg.clone(),
        images: records,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    write_file(&out.join("manifest.json"), json)?;
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub reports: Vec<EvalReport>,
    pub average: MetricAverages,
}

fn load_salient(input: &Path, cfg: &RunConfig) -> Result<(PatchLayout, Grid<bool>)> {
    let is_json = input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
        let report: SaliencyReport = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: input.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok((report.layout()?, report.salient_grid()?))
    } else {
        let img = load_image(input, cfg.patch_size)?;
        let weights = learn_weights(&img, cfg.num_layers, &cfg.learn_config())?;
        let grid = stage_two(&weights, &cfg.saliency)?;
        Ok((img.layout(), grid.salient))
    }
}

/// Pairs each input with the ROI map at the same position. All inputs and ROI
/// maps are loaded and validated before anything is written.
pub fn cmd_evaluate(
    inputs: &[PathBuf],
    rois: &[PathBuf],
    cfg: &RunConfig,
    workers: Option<usize>,
) -> Result<EvalSummary> {
    cfg.validate()?;
    if inputs.len() != rois.len() {
        return Err(Error::Validation(format!(
            "{} inputs but {} ROI maps",
            inputs.len(),
            rois.len()
        )));
    }
    let names = unique_names(inputs);
    let pool = thread_pool(workers)?;
    let reports = pool.install(|| {
        inputs
            .par_iter()
            .zip(rois.par_iter())
            .zip(names.par_iter())
            .map(|((input, roi_path), name)| {
                let (layout, salient) = load_salient(input, cfg)?;
                let roi = load_roi_map(roi_path, &layout)?;
                eval::evaluate(name, &salient, &roi)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let out = &cfg.output_dir;
    create_dir(out)?;
    let mut csv_bytes = Vec::new();
    eval::write_reports_csv(&reports, &mut csv_bytes)?;
    write_file(&out.join("eval.csv"), csv_bytes)?;
    let summary = EvalSummary {
        average: eval::average(&reports),
        reports,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write_file(&out.join("eval.json"), json)?;
    Ok(summary)
}

fn plane_image(values: &[f64], width: usize, height: usize) -> image::GrayImage {
    image::GrayImage::from_fn(width as u32, height as u32, |x, y| {
        image::Luma([ingest::to_u8(values[y as usize * width + x as usize])])
    })
}

/// Writes the requested intermediate for one image into `<out>/<image>/` and
/// returns the files written.
pub fn cmd_inspect(image: &Path, stage: Stage, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let img: RgbImage = load_image(image, cfg.patch_size)?;
    let dir = cfg.output_dir.join(stem(image));
    create_dir(&dir)?;
    let mut written = Vec::new();
    match stage {
        Stage::Channels => {
            for plane in split_channels(&img) {
                let path = dir.join(format!("channel_{}.png", plane.channel));
                save_png(&plane_image(&plane.values, plane.width, plane.height), &path)?;
                written.push(path);
            }
        }
        Stage::Layers => {
            for plane in split_channels(&img) {
                for layer in decompose_layers(&plane, cfg.num_layers) {
                    let path = dir.join(format!("layer_{}_{:02}.png", layer.channel, layer.layer_index));
                    let mask = image::GrayImage::from_fn(layer.width as u32, layer.height as u32, |x, y| {
                        image::Luma([if layer.get(x as usize, y as usize) { 255 } else { 0 }])
                    });
                    save_png(&mask, &path)?;
                    written.push(path);
                }
            }
        }
        Stage::Weights => {
            let weights = learn_weights(&img, cfg.num_layers, &cfg.learn_config())?;
            let path = dir.join("weights.csv");
            let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            weights.write_csv(std::io::BufWriter::new(file))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Parses `args` (including the program name) and runs the chosen command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Detect { common, images } => {
            let cfg = common.resolve()?;
            let manifest = cmd_detect(&images, &cfg, common.workers)?;
            for rec in &manifest.images {
                match &rec.error {
                    Some(err) => eprintln!("error: {err}"),
                    None => println!(
                        "{}: {} salient patches",
                        rec.input.display(),
                        rec.salient_patches.unwrap_or(0)
                    ),
                }
            }
            Ok(if manifest.failures() == 0 { 0 } else { 1 })
        }
        Command::Evaluate {
            common,
            rois,
            inputs,
        } => {
            let cfg = common.resolve()?;
            let summary = cmd_evaluate(&inputs, &rois, &cfg, common.workers)?;
            eval::write_reports_csv(&summary.reports, std::io::stdout().lock())?;
            Ok(0)
        }
        Command::Inspect {
            common,
            stage,
            image,
        } => {
            let cfg = common.resolve()?;
            for path in cmd_inspect(&image, stage, &cfg)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}
