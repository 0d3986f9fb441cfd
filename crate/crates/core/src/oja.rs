//! Stage 1: per-patch first principal component via Oja's normalised
//! Hebbian rule.
//!
//! A patch neuron sees the `(x, y)` coordinates of the active pixels in its
//! receptive field, one at a time, and adjusts its two synaptic weights with
//! `w <- w + mu * (y * x - y^2 * w)` where `y = w . x`. The weights settle on
//! the unit vector along the direction of maximum variance (up to sign).
//!
//! The plain Hebbian update and a closed-form 2x2 covariance eigensolver are
//! kept here as well; the first for comparison, the second as a reference for
//! tests and for flagging isotropic patches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Patch;

/// Relative eigenvalue gap below which a covariance is treated as isotropic.
pub const ISOTROPY_TOLERANCE: f64 = 1e-9;

/// Pixel coordinates relative to the active-pixel centroid of a patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordinateSample {
    pub x: f64,
    pub y: f64,
}

impl CoordinateSample {
    pub fn new(x: f64, y: f64) -> Self {
        CoordinateSample { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w1: f64,
    pub w2: f64,
}

impl WeightVector {
    pub const fn new(w1: f64, w2: f64) -> Self {
        WeightVector { w1, w2 }
    }

    pub fn dot(&self, other: &WeightVector) -> f64 {
        self.w1 * other.w1 + self.w2 * other.w2
    }

    pub fn norm(&self) -> f64 {
        self.w1.hypot(self.w2)
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        WeightVector::new(self.w1 / n, self.w2 / n)
    }

    pub fn negated(&self) -> Self {
        WeightVector::new(-self.w1, -self.w2)
    }

    /// Angle in degrees between the lines spanned by two vectors, in `[0, 90]`.
    pub fn line_angle_deg(&self, other: &WeightVector) -> f64 {
        let cos = (self.dot(other) / (self.norm() * other.norm())).abs();
        cos.min(1.0).acos().to_degrees()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    /// Initial learning rate.
    pub mu: f64,
    /// Learning-rate decay constant `tau`: step `k` uses `mu * tau / (tau + k)`.
    /// Zero keeps the rate constant.
    pub decay_steps: f64,
    /// Presentations of each sample.
    pub epochs: usize,
    /// Lower bound on total updates; small sample sets get extra epochs.
    pub min_iterations: usize,
    /// Forgetting rate of the plain Hebbian rule. Unused by Oja's rule.
    pub alpha: f64,
    /// Shuffle seed. The detector overrides this with a per-patch seed.
    #[serde(skip)]
    pub seed: u64,
    /// Starting weights, normalised to unit length before learning.
    pub init: [f64; 2],
    /// Divide centred samples by their RMS radius before learning.
    pub rescale_inputs: bool,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            mu: 0.15,
            decay_steps: 50.0,
            epochs: 5,
            min_iterations: 500,
            alpha: 1.0,
            seed: 0,
            init: [0.1, 0.5],
            rescale_inputs: true,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.decay_steps >= 0.0 && self.decay_steps.is_finite()) {
            return Err(Error::Config(format!(
                "decay_steps must be non-negative, got {}",
                self.decay_steps
            )));
        }
        let [a, b] = self.init;
        if !(a.is_finite() && b.is_finite()) || a.hypot(b) == 0.0 {
            return Err(Error::Config("init weights must be finite and nonzero".into()));
        }
        Ok(())
    }

    /// Learning rate for the `step`-th update (0-based).
    pub fn rate(&self, step: usize) -> f64 {
        let tau = self.decay_steps;
        if tau > 0.0 {
            self.mu * tau / (tau + step as f64)
        } else {
            self.mu
        }
    }
}

/// `y = w . x`
pub fn neuron_output(w: &WeightVector, x: &CoordinateSample) -> f64 {
    w.w1 * x.x + w.w2 * x.y
}

/// `w + mu * (y * x - alpha * w)`
pub fn hebbian_step(w: &WeightVector, x: &CoordinateSample, mu: f64, alpha: f64) -> WeightVector {
    let y = neuron_output(w, x);
    WeightVector::new(
        w.w1 + mu * (y * x.x - alpha * w.w1),
        w.w2 + mu * (y * x.y - alpha * w.w2),
    )
}

/// `w + mu * (y * x - y^2 * w)`
pub fn oja_step(w: &WeightVector, x: &CoordinateSample, mu: f64) -> WeightVector {
    let y = neuron_output(w, x);
    let y2 = y * y;
    WeightVector::new(
        w.w1 + mu * (y * x.x - y2 * w.w1),
        w.w2 + mu * (y * x.y - y2 * w.w2),
    )
}

fn has_two_distinct(samples: &[CoordinateSample]) -> bool {
    match samples.split_first() {
        Some((first, rest)) => rest.iter().any(|s| s != first),
        None => false,
    }
}

fn centred(samples: &[CoordinateSample]) -> Vec<CoordinateSample> {
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.x).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.y).sum::<f64>() / n;
    samples
        .iter()
        .map(|s| CoordinateSample::new(s.x - mx, s.y - my))
        .collect()
}

/// Runs Oja's rule over `samples` and returns the final weight vector.
///
/// Samples are re-centred (a no-op for [`patch_to_samples`] output) and, with
/// `rescale_inputs`, scaled to unit RMS radius so one learning-rate schedule
/// fits every patch size. Each epoch presents the samples in a fresh seeded
/// shuffle.
pub fn oja_learn(samples: &[CoordinateSample], cfg: &LearnConfig) -> Result<WeightVector> {
    if !has_two_distinct(samples) {
        return Err(Error::Degenerate("need at least two distinct samples"));
    }
    let mut inputs = centred(samples);
    if cfg.rescale_inputs {
        let rms = (inputs.iter().map(|s| s.x * s.x + s.y * s.y).sum::<f64>()
            / inputs.len() as f64)
            .sqrt();
        for s in &mut inputs {
            s.x /= rms;
            s.y /= rms;
        }
    }

    let n = inputs.len();
    let epochs = cfg.epochs.max(cfg.min_iterations.div_ceil(n));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = WeightVector::new(cfg.init[0], cfg.init[1]).normalized();
    let mut step = 0;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            w = oja_step(&w, &inputs[i], cfg.rate(step));
            step += 1;
        }
    }
    Ok(w)
}

/// Leading eigenpair of a 2x2 sample covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrincipalAxis {
    /// Unit eigenvector of the larger eigenvalue; first nonzero component positive.
    pub direction: WeightVector,
    pub major: f64,
    pub minor: f64,
    /// Eigenvalues equal within [`ISOTROPY_TOLERANCE`]; `direction` is arbitrary.
    pub isotropic: bool,
}

/// Closed-form PCA of 2-D samples (population covariance).
pub fn batch_pca_oracle(samples: &[CoordinateSample]) -> Result<PrincipalAxis> {
    if !has_two_distinct(samples) {
        return Err(Error::Degenerate("need at least two distinct samples"));
    }
    let inputs = centred(samples);
    let n = inputs.len() as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for s in &inputs {
        sxx += s.x * s.x;
        sxy += s.x * s.y;
        syy += s.y * s.y;
    }
    let (a, b, c) = (sxx / n, sxy / n, syy / n);

    let mean = 0.5 * (a + c);
    let radius = (0.5 * (a - c)).hypot(b);
    let (major, minor) = (mean + radius, mean - radius);
    let isotropic = major - minor <= ISOTROPY_TOLERANCE * (major + minor).max(f64::MIN_POSITIVE);

    let direction = if isotropic {
        WeightVector::new(1.0, 0.0)
    } else {
        let v = if a >= c {
            WeightVector::new(major - c, b)
        } else {
            WeightVector::new(b, major - a)
        };
        let v = v.normalized();
        if v.w1 < 0.0 || (v.w1 == 0.0 && v.w2 < 0.0) {
            v.negated()
        } else {
            v
        }
    };
    Ok(PrincipalAxis {
        direction,
        major,
        minor,
        isotropic,
    })
}

/// One sample per active pixel, as `(col, row)` offsets from the active-pixel
/// centroid.
pub fn patch_to_samples(patch: &Patch) -> Vec<CoordinateSample> {
    if patch.active_count == 0 {
        return Vec::new();
    }
    let n = patch.active_count as f64;
    let (sum_r, sum_c) = patch
        .active_pixels()
        .fold((0.0, 0.0), |(r, c), (pr, pc)| (r + pr as f64, c + pc as f64));
    let (cr, cc) = (sum_r / n, sum_c / n);
    patch
        .active_pixels()
        .map(|(r, c)| CoordinateSample::new(c as f64 - cc, r as f64 - cr))
        .collect()
}

/// Learned weights for an active patch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearnedWeight {
    pub weight: WeightVector,
    /// The patch covariance is isotropic, so any direction is a valid PC1.
    pub low_confidence: bool,
}

/// Stage 1 for a single patch. `None` means the patch is inactive: fewer
/// than two active pixels, so there is no principal direction.
pub fn learn_patch(patch: &Patch, cfg: &LearnConfig) -> Option<LearnedWeight> {
    let samples = patch_to_samples(patch);
    let axis = batch_pca_oracle(&samples).ok()?;
    let weight = oja_learn(&samples, cfg).ok()?;
    Some(LearnedWeight {
        weight,
        low_confidence: axis.isotropic,
    })
}

/// Shuffle seed for one patch learner, mixed from the run seed and the
/// patch's position in the channel/layer/grid hierarchy.
pub fn patch_seed(global: u64, channel: usize, layer: usize, row: usize, col: usize) -> u64 {
    [channel, layer, row, col]
        .into_iter()
        .fold(splitmix64(global), |h, v| splitmix64(h ^ v as u64))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
