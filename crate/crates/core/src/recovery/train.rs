use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{LossTerms, LossWeights};
use super::network::{radn_backward, RadnParams, Sample, MIN_INPUT_SIDE};
use crate::error::{Error, Result};
use crate::radial::LightCenter;

/// Smallest training set accepted by [`train_toy`].
pub const MIN_TRAIN_PAIRS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            patch_size: 48,
            batch_size: 2,
            steps: 200,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.patch_size < MIN_INPUT_SIDE {
            return Err(Error::Config(format!(
                "patch_size must be >= {MIN_INPUT_SIDE}, got {}",
                self.patch_size
            )));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be >= 1".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        self.loss_weights.validate()
    }
}

/// Per-step loss terms, averaged over the batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub steps: Vec<LossTerms>,
}

impl LossCurve {
    /// Mean of `f` over the first `frac` of the steps (at least one step).
    pub fn head_mean(&self, frac: f64, f: impl Fn(&LossTerms) -> f64) -> f64 {
        let k = ((self.steps.len() as f64 * frac).round() as usize).clamp(1, self.steps.len());
        self.steps[..k].iter().map(&f).sum::<f64>() / k as f64
    }

    /// Mean of `f` over the last `frac` of the steps (at least one step).
    pub fn tail_mean(&self, frac: f64, f: impl Fn(&LossTerms) -> f64) -> f64 {
        let k = ((self.steps.len() as f64 * frac).round() as usize).clamp(1, self.steps.len());
        self.steps[self.steps.len() - k..].iter().map(&f).sum::<f64>() / k as f64
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step,total,L_re,L_pre,L_rg")?;
        for (i, t) in self.steps.iter().enumerate() {
            writeln!(out, "{},{:e},{:e},{:e},{:e}", i + 1, t.total, t.re, t.pre, t.rg)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        buf.flush().map_err(|e| Error::io(path, e))
    }
}

/// Adam moments for every parameter tensor.
struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(params: &RadnParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut RadnParams, grad: &RadnParams, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (k, (p, g)) in params.tensors_mut().into_iter().zip(grad.tensors()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

fn random_patch(s: &Sample, patch: usize, rng: &mut impl Rng) -> Result<Sample> {
    let (h, w) = (s.input.height(), s.input.width());
    let top = rng.random_range(0..=h - patch);
    let left = rng.random_range(0..=w - patch);
    Ok(Sample {
        input: s.input.crop(top, left, patch, patch)?,
        reference: s.reference.crop(top, left, patch, patch)?,
        center: LightCenter::new(s.center.x - left as f64, s.center.y - top as f64),
    })
}

/// Adam on random patches; single-threaded and deterministic for a given seed.
pub fn train_toy(params: &RadnParams, dataset: &[Sample], cfg: &TrainConfig) -> Result<(RadnParams, LossCurve)> {
    cfg.validate()?;
    if dataset.len() < MIN_TRAIN_PAIRS {
        return Err(Error::Data(format!(
            "need at least {MIN_TRAIN_PAIRS} training pairs, got {}",
            dataset.len()
        )));
    }
    for (i, s) in dataset.iter().enumerate() {
        if !s.input.same_shape(&s.reference) {
            return Err(Error::Data(format!("pair {i}: input and reference differ in shape")));
        }
        if s.input.height() < cfg.patch_size || s.input.width() < cfg.patch_size {
            return Err(Error::Data(format!("pair {i} is smaller than the {}px patch", cfg.patch_size)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = params.clone();
    let mut adam = Adam::new(&params);
    let mut curve = LossCurve::default();
    for _ in 0..cfg.steps {
        let batch = (0..cfg.batch_size)
            .map(|_| {
                let idx = rng.random_range(0..dataset.len());
                random_patch(&dataset[idx], cfg.patch_size, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let (terms, grad) = radn_backward(&params, &batch, &cfg.loss_weights)?;
        adam.step(&mut params, &grad, cfg);
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters after an Adam step".into()));
        }
        curve.steps.push(terms.scaled(1.0 / cfg.batch_size as f64));
    }
    Ok((params, curve))
}
