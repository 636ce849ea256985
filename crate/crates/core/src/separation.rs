//! Halo layer separation and removal.
//!
//! Two families live here:
//!
//! * supervised loss evaluators that score an estimated layer against a known
//!   one (the fidelity + reweighted radial-gradient objective, the IRLS weight
//!   update, and the gradient smoothing loss);
//! * [`blind_separate`], which estimates the layer from a single degraded
//!   image, and [`remove_halo`], which divides it back out.
//!
//! The blind solver works on the log-luminance `L = ln(max(Y, div_floor))`.
//! Pixels are binned by their distance to the light center and each bin level
//! is fitted by iteratively reweighted least squares with weights
//! `1 / (|residual| + eps_k)`, `eps_k = eps * 0.9^(k-1)`. With those weights
//! every iteration is a majorize-minimize step of
//!
//! ```text
//! J_eps(r) = mean( |r| + eps * ln((R + eps) / (|r| + eps)) ),   R = max L - min L
//! ```
//!
//! and `J_eps` grows with `eps`, so the recorded history never increases even
//! while `eps` is annealed. The fitted levels are smoothed (second
//! differences, reflected about r = 0 so the profile is flat at the center,
//! penalty scaled by the robust residual variance), projected
//! onto the non-increasing cone with pool-adjacent-violators, interpolated
//! linearly in radius, and exponentiated back into a unit-maximum layer.
//!
//! [`refine_center`] polishes a centroid estimate of the light center by
//! minimizing the ring variance of blurred log-luminance.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imgcore::ImageF;
use crate::radial::{
    plane_gradient, radial_gradient_plane, HaloLayer, LightCenter, V_FLOOR,
};

/// Annealing factor applied to the IRLS stabilizer every iteration.
pub const EPSILON_DECAY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationConfig {
    /// Weight of the radial-gradient term.
    pub lambda: f64,
    /// IRLS stabilizer.
    pub epsilon: f64,
    pub max_iters: usize,
    /// Number of radius bins; `None` means `min(h, w) / 2`.
    pub n_bins: Option<usize>,
    /// Weight of the smoothing loss.
    pub smooth_weight: f64,
    /// Lower bound applied to the halo before dividing.
    pub div_floor: f64,
    /// Second-difference penalty on the radial profile before the monotone
    /// projection, relative to the robust residual variance. Zero disables it.
    pub profile_smoothing: f64,
    /// Blur (pixels) applied to log-luminance by [`refine_center`].
    pub center_blur: f64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            epsilon: 1e-3,
            max_iters: 10,
            n_bins: None,
            smooth_weight: 0.05,
            div_floor: 1e-3,
            profile_smoothing: 6000.0,
            center_blur: 4.0,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("epsilon", self.epsilon),
            ("smooth_weight", self.smooth_weight),
            ("div_floor", self.div_floor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("profile_smoothing", self.profile_smoothing),
            ("center_blur", self.center_blur),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.n_bins == Some(0) {
            return Err(Error::Config("n_bins must be at least 1".into()));
        }
        Ok(())
    }

    pub fn bins_for(&self, height: usize, width: usize) -> usize {
        self.n_bins.unwrap_or(height.min(width) / 2).max(1)
    }
}

/// Evolving state of one IRLS solve.
#[derive(Debug, Clone, PartialEq)]
pub struct IrlsState {
    /// 1-based iteration index.
    pub k: usize,
    pub weights: Vec<f64>,
    pub epsilon: f64,
    pub lambda: f64,
    pub objective_history: Vec<f64>,
}

impl IrlsState {
    /// First-iteration state: unit weights.
    pub fn new(n: usize, epsilon: f64, lambda: f64) -> Self {
        Self {
            k: 1,
            weights: vec![1.0; n],
            epsilon,
            lambda,
            objective_history: Vec::new(),
        }
    }
}

fn check_layers(v_gt: &HaloLayer, v_low: &HaloLayer) -> Result<()> {
    if !v_gt.field().same_size(v_low.field()) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            v_gt.height(),
            v_gt.width(),
            v_low.height(),
            v_low.width()
        )));
    }
    if v_gt.center() != v_low.center() {
        return Err(Error::CenterMismatch(format!(
            "{:?} vs {:?}",
            v_gt.center(),
            v_low.center()
        )));
    }
    Ok(())
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v * v;
        n += 1;
    }
    (s / n as f64).sqrt()
}

/// `RMS(v_gt - v_low) + lambda * mean(w * |psi(v_gt) - psi(v_low)|)`, with the
/// radial gradient taken about the reference layer's center.
pub fn supervised_halo_loss(v_gt: &HaloLayer, v_low: &HaloLayer, state: &IrlsState) -> Result<f64> {
    check_layers(v_gt, v_low)?;
    let n = v_gt.values().len();
    if state.weights.len() != n {
        return Err(Error::Shape(format!(
            "{} weights for {n} pixels",
            state.weights.len()
        )));
    }
    let fidelity = rms(v_gt.values().iter().zip(v_low.values()).map(|(a, b)| a - b));
    let residual = psi_residual(v_gt, v_low);
    let sparse = residual
        .iter()
        .zip(&state.weights)
        .map(|(r, w)| w * r.abs())
        .sum::<f64>()
        / n as f64;
    Ok(fidelity + state.lambda * sparse)
}

fn psi_residual(v_gt: &HaloLayer, v_ref: &HaloLayer) -> Vec<f64> {
    let (h, w, c) = (v_gt.height(), v_gt.width(), v_gt.center());
    let a = radial_gradient_plane(v_gt.values(), h, w, c);
    let b = radial_gradient_plane(v_ref.values(), h, w, c);
    a.iter().zip(&b).map(|(a, b)| a - b).collect()
}

/// Next-iteration weights `1 / (|psi(v_gt) - psi(v_prev)| + eps)`.
pub fn update_weights(state: &IrlsState, v_gt: &HaloLayer, v_prev: &HaloLayer) -> Result<IrlsState> {
    check_layers(v_gt, v_prev)?;
    Ok(update_weights_from_residual(state, &psi_residual(v_gt, v_prev)))
}

/// Weight update on an explicit residual map.
pub fn update_weights_from_residual(state: &IrlsState, residual: &[f64]) -> IrlsState {
    IrlsState {
        k: state.k + 1,
        weights: residual
            .iter()
            .map(|r| 1.0 / (r.abs() + state.epsilon))
            .collect(),
        ..state.clone()
    }
}

/// `lambda1 * sqrt(mean |grad v_gt - grad v_low|^2)` over one-channel fields.
pub fn smooth_loss(v_gt: &ImageF, v_low: &ImageF, lambda1: f64) -> Result<f64> {
    if !v_gt.same_shape(v_low) || v_gt.channels() != 1 {
        return Err(Error::Shape("smooth loss expects equal one-channel fields".into()));
    }
    let (h, w) = (v_gt.height(), v_gt.width());
    let (ax, ay) = plane_gradient(v_gt.data(), h, w);
    let (bx, by) = plane_gradient(v_low.data(), h, w);
    let mean_sq = (0..h * w)
        .map(|i| (ax[i] - bx[i]).powi(2) + (ay[i] - by[i]).powi(2))
        .sum::<f64>()
        / (h * w) as f64;
    Ok(lambda1 * mean_sq.sqrt())
}

/// Per-radius luminance profile fitted by the blind solver (log domain).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadialProfile {
    pub n_bins: usize,
    pub bin_width: f64,
    /// Non-increasing per-bin levels.
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
    /// Radius each level is anchored at (mean radius of the bin's pixels).
    pub radii: Vec<f64>,
}

impl RadialProfile {
    /// Piecewise-linear level at radius `r`, constant beyond the end knots.
    pub fn eval(&self, r: f64) -> f64 {
        let k = &self.radii;
        if r <= k[0] {
            return self.values[0];
        }
        let last = k.len() - 1;
        if r >= k[last] {
            return self.values[last];
        }
        let j = k.partition_point(|&x| x <= r);
        let t = (r - k[j - 1]) / (k[j] - k[j - 1]);
        self.values[j - 1] + t * (self.values[j] - self.values[j - 1])
    }
}

/// Output of [`blind_separate`].
#[derive(Debug, Clone)]
pub struct Separation {
    pub halo: HaloLayer,
    pub state: IrlsState,
    pub profile: Option<RadialProfile>,
    /// Set for constant inputs, for which a flat layer is returned.
    pub degenerate: bool,
}

/// Per-solve record written next to pipeline outputs.
#[derive(Debug, Clone, Serialize)]
pub struct SeparationDiagnostics {
    pub center: LightCenter,
    pub iterations: usize,
    pub degenerate: bool,
    pub objective_history: Vec<f64>,
    pub profile: Option<RadialProfile>,
}

impl Separation {
    pub fn diagnostics(&self) -> SeparationDiagnostics {
        SeparationDiagnostics {
            center: self.halo.center(),
            iterations: self.state.objective_history.len(),
            degenerate: self.degenerate,
            objective_history: self.state.objective_history.clone(),
            profile: self.profile.clone(),
        }
    }
}

/// Pool-adjacent-violators projection onto non-increasing sequences.
pub(crate) fn pava_non_increasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let wt = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / wt, wt, n1 + n2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, n)| std::iter::repeat_n(m, n))
        .collect()
}

/// Minimizes `sum w_b (p_b - m_b)^2 + penalty * sum (second difference of p)^2`.
/// Bins with zero weight are filled by the smoother. With `mirror_origin` the
/// sequence is reflected about the first bin, which forces zero slope at r = 0.
pub(crate) fn whittaker(values: &[f64], weights: &[f64], penalty: f64, mirror_origin: bool) -> Vec<f64> {
    let n = values.len();
    if penalty <= 0.0 || n < 3 {
        return values.to_vec();
    }
    // symmetric pentadiagonal system: diag, first and second off-diagonals
    let mut d0: Vec<f64> = weights.iter().map(|w| w + 1e-12).collect();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    let c = [1.0, -2.0, 1.0];
    for k in 0..n - 2 {
        for a in 0..3 {
            d0[k + a] += penalty * c[a] * c[a];
            if a + 1 < 3 {
                d1[k + a + 1] += penalty * c[a] * c[a + 1];
            }
        }
        d2[k + 2] += penalty * c[0] * c[2];
    }
    if mirror_origin {
        // second difference across r = 0 with p[-1] = p[0]: penalizes p[1] - p[0]
        d0[0] += penalty;
        d0[1] += penalty;
        d1[1] -= penalty;
    }
    // banded Cholesky: row i holds l2 = L[i][i-2], l1 = L[i][i-1], l0 = L[i][i]
    let (mut l0, mut l1, mut l2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        if i >= 2 {
            l2[i] = d2[i] / l0[i - 2];
        }
        if i >= 1 {
            let prev = if i >= 2 { l2[i] * l1[i - 1] } else { 0.0 };
            l1[i] = (d1[i] - prev) / l0[i - 1];
        }
        l0[i] = (d0[i] - l2[i] * l2[i] - l1[i] * l1[i]).sqrt();
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = weights[i] * values[i];
        if i >= 1 {
            acc -= l1[i] * y[i - 1];
        }
        if i >= 2 {
            acc -= l2[i] * y[i - 2];
        }
        y[i] = acc / l0[i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        if i + 1 < n {
            acc -= l1[i + 1] * x[i + 1];
        }
        if i + 2 < n {
            acc -= l2[i + 2] * x[i + 2];
        }
        x[i] = acc / l0[i];
    }
    x
}

/// Mean squared deviation of log-luminance from its per-radius mean (1 px
/// rings) about `center`. Smallest when `center` explains the radial falloff.
pub fn radial_fit_residual(logl: &[f64], h: usize, w: usize, center: LightCenter) -> f64 {
    let rings = (h as f64).hypot(w as f64) as usize + 2;
    let mut sum = vec![0.0; rings];
    let mut sq = vec![0.0; rings];
    let mut cnt = vec![0.0; rings];
    for y in 0..h {
        for x in 0..w {
            let r = (x as f64 - center.x).hypot(y as f64 - center.y);
            let b = (r as usize).min(rings - 1);
            let v = logl[y * w + x];
            sum[b] += v;
            sq[b] += v * v;
            cnt[b] += 1.0;
        }
    }
    let ss: f64 = (0..rings)
        .filter(|&b| cnt[b] > 0.0)
        .map(|b| sq[b] - sum[b] * sum[b] / cnt[b])
        .sum();
    ss / (h * w) as f64
}

const NEIGHBORS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
    (1.0, 1.0),
    (1.0, -1.0),
    (-1.0, 1.0),
    (-1.0, -1.0),
];

/// Polishes a light-center estimate: pattern search from `init` over
/// [`radial_fit_residual`] of blurred log-luminance, down to quarter-pixel
/// steps. The blur suppresses scene texture so the radial falloff dominates.
pub fn refine_center(z: &ImageF, init: LightCenter, cfg: &SeparationConfig) -> Result<LightCenter> {
    cfg.validate()?;
    if !init.is_finite() {
        return Err(Error::Param("non-finite light center".into()));
    }
    let (h, w) = (z.height(), z.width());
    let logl: Vec<f64> = z.luminance().data().iter().map(|&y| y.max(cfg.div_floor).ln()).collect();
    let logl = if cfg.center_blur > 0.0 {
        blur_plane(&logl, h, w, cfg.center_blur)
    } else {
        logl
    };
    let mut best = init.clamped(h, w);
    let mut best_f = radial_fit_residual(&logl, h, w, best);
    let mut step = (h.min(w) as f64 / 16.0).max(1.0);
    while step >= 0.25 {
        let mut moved = true;
        while moved {
            moved = false;
            for (dx, dy) in NEIGHBORS {
                let cand = LightCenter::new(best.x + dx * step, best.y + dy * step).clamped(h, w);
                let f = radial_fit_residual(&logl, h, w, cand);
                if f < best_f {
                    best_f = f;
                    best = cand;
                    moved = true;
                }
            }
        }
        step /= 2.0;
    }
    Ok(best)
}

/// Same-size separable Gaussian blur with edge clamping.
fn blur_plane(p: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let rad = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-rad..=rad).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    let clampi = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * p[y * w + clampi(x as isize + j as isize - rad, w)])
                .sum::<f64>()
                / total;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = taps
                .iter()
                .enumerate()
                .map(|(j, t)| t * tmp[clampi(y as isize + j as isize - rad, h) * w + x])
                .sum::<f64>()
                / total;
        }
    }
    out
}

/// `1.4826 * median(|r|)`, a Gaussian-consistent scale estimate.
fn robust_sigma(residual: &[f64]) -> f64 {
    let mut a: Vec<f64> = residual.iter().map(|r| r.abs()).collect();
    let mid = a.len() / 2;
    let (_, m, _) = a.select_nth_unstable_by(mid, f64::total_cmp);
    1.4826 * *m
}

fn robust_objective(residuals: &[f64], eps: f64, range: f64) -> f64 {
    residuals
        .iter()
        .map(|r| {
            let a = r.abs();
            a + eps * ((range + eps) / (a + eps)).ln()
        })
        .sum::<f64>()
        / residuals.len() as f64
}

/// Estimates the halo layer of a single degraded image around `center`.
pub fn blind_separate(z: &ImageF, center: LightCenter, cfg: &SeparationConfig) -> Result<Separation> {
    cfg.validate()?;
    if !center.is_finite() {
        return Err(Error::Param("non-finite light center".into()));
    }
    let (h, w) = (z.height(), z.width());
    let center = center.clamped(h, w);
    let n = h * w;

    let lum = z.luminance();
    let logl: Vec<f64> = lum.data().iter().map(|&y| y.max(cfg.div_floor).ln()).collect();
    let (lo, hi) = logl
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi == lo {
        return Ok(Separation {
            halo: HaloLayer::flat(h, w, center)?,
            state: IrlsState::new(n, cfg.epsilon, cfg.lambda),
            profile: None,
            degenerate: true,
        });
    }
    let range = hi - lo;

    let radius: Vec<f64> = (0..n)
        .map(|i| ((i % w) as f64 - center.x).hypot((i / w) as f64 - center.y))
        .collect();
    let n_bins = cfg.bins_for(h, w);
    let r_max = radius.iter().cloned().fold(0.0, f64::max);
    let bin_width = r_max / n_bins as f64;
    let bin: Vec<usize> = radius
        .iter()
        .map(|&r| ((r / bin_width) as usize).min(n_bins - 1))
        .collect();

    let mut counts = vec![0usize; n_bins];
    let mut radius_sum = vec![0.0; n_bins];
    for i in 0..n {
        counts[bin[i]] += 1;
        radius_sum[bin[i]] += radius[i];
    }

    let mut state = IrlsState::new(n, cfg.epsilon, cfg.lambda);
    let mut means = vec![0.0; n_bins];
    let mut residual = vec![0.0; n];
    loop {
        let mut num = vec![0.0; n_bins];
        let mut den = vec![0.0; n_bins];
        for i in 0..n {
            num[bin[i]] += state.weights[i] * logl[i];
            den[bin[i]] += state.weights[i];
        }
        for b in 0..n_bins {
            if counts[b] > 0 {
                means[b] = num[b] / den[b];
            }
        }
        for i in 0..n {
            residual[i] = logl[i] - means[bin[i]];
        }
        state
            .objective_history
            .push(robust_objective(&residual, state.epsilon, range));
        if state.k >= cfg.max_iters {
            break;
        }
        state.epsilon *= EPSILON_DECAY;
        state = update_weights_from_residual(&state, &residual);
    }

    let mean_count = n as f64 / n_bins as f64;
    let bin_w: Vec<f64> = counts.iter().map(|&c| c as f64 / mean_count).collect();
    // penalty scales with the robust residual variance: noise-free fits stay unsmoothed
    let noise = robust_sigma(&residual);
    let means = whittaker(&means, &bin_w, cfg.profile_smoothing * noise * noise, true);

    // monotone projection over occupied bins, then fill the empty ones
    let occupied: Vec<usize> = (0..n_bins).filter(|&b| counts[b] > 0).collect();
    let fitted = pava_non_increasing(
        &occupied.iter().map(|&b| means[b]).collect::<Vec<_>>(),
        &occupied.iter().map(|&b| counts[b] as f64).collect::<Vec<_>>(),
    );
    let mut values = vec![0.0; n_bins];
    for (j, &b) in occupied.iter().enumerate() {
        values[b] = fitted[j];
    }
    for b in 0..n_bins {
        if counts[b] > 0 {
            continue;
        }
        let prev = occupied.iter().rev().find(|&&o| o < b);
        let next = occupied.iter().find(|&&o| o > b);
        values[b] = match (prev, next) {
            (Some(&p), Some(&q)) => {
                let t = (b - p) as f64 / (q - p) as f64;
                values[p] + t * (values[q] - values[p])
            }
            (Some(&p), None) => values[p],
            (None, Some(&q)) => values[q],
            (None, None) => unreachable!("at least one bin is occupied"),
        };
    }
    let radii: Vec<f64> = (0..n_bins)
        .map(|b| {
            if counts[b] > 0 {
                radius_sum[b] / counts[b] as f64
            } else {
                (b as f64 + 0.5) * bin_width
            }
        })
        .collect();
    let profile = RadialProfile {
        n_bins,
        bin_width,
        values,
        counts,
        radii,
    };

    let peak = profile.values.iter().cloned().fold(f64::MIN, f64::max);
    let mut field: Vec<f64> = radius.iter().map(|&r| (profile.eval(r) - peak).exp()).collect();
    let top = field.iter().cloned().fold(f64::MIN, f64::max);
    for v in &mut field {
        *v = (*v / top).max(V_FLOOR);
    }
    let halo = HaloLayer::new(ImageF::new(h, w, 1, field)?, center, None)?;
    Ok(Separation {
        halo,
        state,
        profile: Some(profile),
        degenerate: false,
    })
}

/// `clamp(z / max(v, div_floor), 0, 1)`, with `v` broadcast over channels.
pub fn remove_halo(z: &ImageF, v: &HaloLayer, div_floor: f64) -> Result<ImageF> {
    if !(div_floor.is_finite() && div_floor > 0.0) {
        return Err(Error::Config(format!("div_floor must be positive, got {div_floor}")));
    }
    if !z.same_size(v.field()) {
        return Err(Error::Shape(format!(
            "image {}x{} vs halo {}x{}",
            z.height(),
            z.width(),
            v.height(),
            v.width()
        )));
    }
    let n = z.pixels();
    let hv = v.values();
    let data = z
        .data()
        .iter()
        .enumerate()
        .map(|(i, &s)| (s / hv[i % n].max(div_floor)).clamp(0.0, 1.0))
        .collect();
    ImageF::new(z.height(), z.width(), z.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::{apply_halo, synth_halo, HaloParams};

    fn layer(p: HaloParams, c: LightCenter) -> HaloLayer {
        synth_halo(16, 16, &p, c).unwrap()
    }

    #[test]
    fn supervised_loss_zero_for_identical() {
        let c = LightCenter::new(7.0, 8.0);
        let v = layer(HaloParams::gaussian(5.0, 0.3), c);
        let st = IrlsState::new(256, 1e-3, 0.1);
        assert_eq!(supervised_halo_loss(&v, &v, &st).unwrap(), 0.0);
    }

    #[test]
    fn supervised_loss_lambda_zero_is_rms() {
        let c = LightCenter::new(7.0, 8.0);
        let a = layer(HaloParams::gaussian(5.0, 0.3), c);
        let b = layer(HaloParams::cosine4(4.0, 0.2), c);
        let st = IrlsState::new(256, 1e-3, 0.0);
        let mut s = 0.0;
        for y in 0..16 {
            for x in 0..16 {
                s += (a.get(y, x) - b.get(y, x)).powi(2);
            }
        }
        let oracle = (s / 256.0).sqrt();
        assert!((supervised_halo_loss(&a, &b, &st).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn supervised_loss_two_term_oracle() {
        // second, independent evaluation of both terms with explicit loops
        let c = LightCenter::new(6.0, 9.0);
        let a = layer(HaloParams::gaussian(5.0, 0.3), c);
        let b = layer(HaloParams::gaussian(8.0, 0.4), c);
        let st = IrlsState::new(256, 1e-3, 0.1);
        let psi = |v: &HaloLayer, x: usize, y: usize| -> f64 {
            let dx = match x {
                0 => v.get(y, 1) - v.get(y, 0),
                15 => v.get(y, 15) - v.get(y, 14),
                _ => (v.get(y, x + 1) - v.get(y, x - 1)) / 2.0,
            };
            let dy = match y {
                0 => v.get(1, x) - v.get(0, x),
                15 => v.get(15, x) - v.get(14, x),
                _ => (v.get(y + 1, x) - v.get(y - 1, x)) / 2.0,
            };
            let (rx, ry) = (x as f64 - 6.0, y as f64 - 9.0);
            let r = (rx * rx + ry * ry).sqrt();
            if r < 0.5 {
                0.0
            } else {
                (dx * rx + dy * ry) / r
            }
        };
        let (mut sq, mut l1) = (0.0, 0.0);
        for y in 0..16 {
            for x in 0..16 {
                sq += (a.get(y, x) - b.get(y, x)).powi(2);
                l1 += (psi(&a, x, y) - psi(&b, x, y)).abs();
            }
        }
        let oracle = (sq / 256.0).sqrt() + 0.1 * l1 / 256.0;
        assert!((supervised_halo_loss(&a, &b, &st).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn supervised_loss_errors() {
        let a = layer(HaloParams::gaussian(5.0, 0.3), LightCenter::new(6.0, 9.0));
        let b = layer(HaloParams::gaussian(5.0, 0.3), LightCenter::new(6.0, 8.0));
        let st = IrlsState::new(256, 1e-3, 0.1);
        assert!(matches!(
            supervised_halo_loss(&a, &b, &st),
            Err(Error::CenterMismatch(_))
        ));
        let c = synth_halo(16, 17, &HaloParams::flat(), LightCenter::new(6.0, 9.0)).unwrap();
        assert!(matches!(supervised_halo_loss(&a, &c, &st), Err(Error::Shape(_))));
    }

    #[test]
    fn weight_update_examples() {
        let st = IrlsState::new(4, 1e-3, 0.1);
        let next = update_weights_from_residual(&st, &[0.0, 1e-3, -1e-3, 0.5]);
        assert_eq!(next.k, 2);
        assert_eq!(next.weights[0], 1.0 / 1e-3);
        assert_eq!(next.weights[1], 1.0 / 2e-3);
        assert_eq!(next.weights[2], 1.0 / 2e-3);
        assert!((next.weights[3] - 1.0 / 0.501).abs() < 1e-12);

        let c = LightCenter::new(7.0, 8.0);
        let v = layer(HaloParams::gaussian(5.0, 0.3), c);
        let st = IrlsState::new(256, 1e-3, 0.1);
        let same = update_weights(&st, &v, &v).unwrap();
        assert!(same.weights.iter().all(|&w| w == 1.0 / 1e-3));
    }

    #[test]
    fn weight_update_matches_loop() {
        let c = LightCenter::new(7.5, 8.25);
        let a = layer(HaloParams::gaussian(5.0, 0.3), c);
        let b = layer(HaloParams::cosine4(3.0, 0.5), c);
        let st = IrlsState::new(256, 2e-3, 0.1);
        let next = update_weights(&st, &a, &b).unwrap();
        let pa = crate::radial::radial_gradient(a.field(), c).unwrap();
        let pb = crate::radial::radial_gradient(b.field(), c).unwrap();
        for i in 0..256 {
            let oracle = 1.0 / ((pa.values[i] - pb.values[i]).abs() + 2e-3);
            assert!((next.weights[i] - oracle).abs() <= 1e-12 * oracle.max(1.0));
            assert!(next.weights[i] > 0.0 && next.weights[i] <= 1.0 / 2e-3);
        }
    }

    #[test]
    fn smooth_loss_examples() {
        let g = ImageF::from_fn(20, 25, 1, |_, y, x| ((x * y) as f64 * 0.01).sin()).unwrap();
        assert_eq!(smooth_loss(&g, &g, 0.05).unwrap(), 0.0);
        let shifted = g.map(|v| v + 0.3).unwrap();
        assert!(smooth_loss(&g, &shifted, 0.05).unwrap() < 1e-15);
        let ramp = ImageF::from_fn(20, 25, 1, |_, y, x| g.get(0, y, x) + 0.1 * x as f64 / 25.0).unwrap();
        let got = smooth_loss(&g, &ramp, 0.05).unwrap();
        assert!((got - 0.05 * 0.1 / 25.0).abs() < 1e-6);
        let other = ImageF::filled(20, 24, 1, 0.0).unwrap();
        assert!(matches!(smooth_loss(&g, &other, 0.05), Err(Error::Shape(_))));
    }

    #[test]
    fn pava_examples() {
        assert_eq!(pava_non_increasing(&[3.0, 2.0, 1.0], &[1.0; 3]), vec![3.0, 2.0, 1.0]);
        assert_eq!(pava_non_increasing(&[1.0, 3.0], &[1.0; 2]), vec![2.0, 2.0]);
        assert_eq!(
            pava_non_increasing(&[1.0, 4.0, 2.0], &[3.0, 1.0, 1.0]),
            vec![1.8, 1.8, 1.8]
        );
        assert_eq!(
            pava_non_increasing(&[5.0, 1.0, 2.0, 0.0], &[1.0; 4]),
            vec![5.0, 1.5, 1.5, 0.0]
        );
    }

    #[test]
    fn blind_recovers_halo_on_constant_scene() {
        let c = LightCenter::new(50.0, 40.0);
        let truth = synth_halo(96, 112, &HaloParams::gaussian(20.0, 0.3), c).unwrap();
        let scene = ImageF::filled(96, 112, 3, 0.9).unwrap();
        let z = apply_halo(&scene, &truth).unwrap();
        let sep = blind_separate(&z, c, &SeparationConfig::default()).unwrap();
        let mae = sep.halo.mean_abs_error(&truth).unwrap();
        assert!(mae <= 0.02, "mae {mae}");
        let hist = &sep.state.objective_history;
        assert_eq!(hist.len(), 10);
        for k in 1..hist.len() {
            assert!(hist[k] <= hist[k - 1] + 1e-9, "{hist:?}");
        }
    }

    #[test]
    fn blind_on_undegraded_scene_is_flat() {
        let scene = ImageF::from_fn(64, 64, 3, |c, y, x| {
            0.5 + 0.1 * ((x as f64 * 1.3 + c as f64).sin() * (y as f64 * 0.9).cos())
        })
        .unwrap();
        let sep = blind_separate(&scene, LightCenter::new(30.0, 33.0), &SeparationConfig::default())
            .unwrap();
        let worst = sep.halo.values().iter().map(|v| (1.0 - v).abs()).fold(0.0, f64::max);
        assert!(worst <= 0.01 + 0.05, "worst {worst}");
        let mean = sep.halo.values().iter().map(|v| 1.0 - v).sum::<f64>() / 4096.0;
        assert!(mean <= 0.01, "mean deviation {mean}");
    }

    #[test]
    fn blind_constant_input_is_degenerate() {
        let z = ImageF::filled(32, 32, 3, 0.4).unwrap();
        let sep = blind_separate(&z, LightCenter::new(3.0, 3.0), &SeparationConfig::default()).unwrap();
        assert!(sep.degenerate);
        assert!(sep.halo.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn blind_rejects_bad_config() {
        let z = ImageF::filled(32, 32, 3, 0.4).unwrap();
        for cfg in [
            SeparationConfig {
                max_iters: 0,
                ..Default::default()
            },
            SeparationConfig {
                epsilon: 0.0,
                ..Default::default()
            },
            SeparationConfig {
                n_bins: Some(0),
                ..Default::default()
            },
        ] {
            assert!(matches!(
                blind_separate(&z, LightCenter::new(3.0, 3.0), &cfg),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn remove_halo_examples() {
        let c = LightCenter::new(10.0, 10.0);
        let z = ImageF::from_fn(20, 20, 3, |c, y, x| ((c + y * x) % 7) as f64 / 7.0).unwrap();
        let flat = HaloLayer::flat(20, 20, c).unwrap();
        assert_eq!(remove_halo(&z, &flat, 1e-3).unwrap(), z);

        // floored division then clamp
        let mut field = vec![0.0005f64.max(V_FLOOR); 64];
        field[63] = 1.0;
        let v = HaloLayer::new(ImageF::new(8, 8, 1, field).unwrap(), c, None).unwrap();
        let half = ImageF::filled(8, 8, 1, 0.5).unwrap();
        let out = remove_halo(&half, &v, 1e-3).unwrap();
        assert_eq!(out.get(0, 0, 0), 1.0);
        assert_eq!(out.get(0, 7, 7), 0.5);
        assert!(matches!(remove_halo(&half, &v, 0.0), Err(Error::Config(_))));
        assert!(matches!(remove_halo(&z, &v, 1e-3), Err(Error::Shape(_))));
    }

    #[test]
    fn remove_inverts_apply() {
        let c = LightCenter::new(12.0, 7.0);
        let img = ImageF::from_fn(24, 30, 3, |c, y, x| ((c * 3 + y + 2 * x) % 11) as f64 / 10.0).unwrap();
        let halo = synth_halo(24, 30, &HaloParams::gaussian(6.0, 0.05), c).unwrap();
        let back = remove_halo(&apply_halo(&img, &halo).unwrap(), &halo, 1e-3).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn whittaker_keeps_lines_and_matches_dense_solve() {
        let line: Vec<f64> = (0..9).map(|i| 2.0 - 0.3 * i as f64).collect();
        let out = whittaker(&line, &[1.0; 9], 50.0, false);
        for (a, b) in out.iter().zip(&line) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(whittaker(&line, &[1.0; 9], 0.0, false), line);

        let m = [0.3, 1.1, -0.4, 0.8, 0.2, 0.9];
        let wts = [1.0, 0.0, 2.0, 0.5, 1.0, 3.0];
        for mirror in [false, true] {
            let expected = dense_whittaker(&m, &wts, 1.7, mirror);
            let got = whittaker(&m, &wts, 1.7, mirror);
            for (g, e) in got.iter().zip(&expected) {
                assert!((g - e).abs() < 1e-9, "{got:?} vs {expected:?}");
            }
        }
    }

    /// Normal equations assembled densely and solved by Gaussian elimination.
    fn dense_whittaker(m: &[f64], wts: &[f64], pen: f64, mirror: bool) -> Vec<f64> {
        let n = m.len();
        let mut a = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            a[i][i] += wts[i];
            rhs[i] = wts[i] * m[i];
        }
        // each penalty row is a difference stencil over consecutive entries
        let mut rows: Vec<(usize, Vec<f64>)> = (0..n - 2).map(|k| (k, vec![1.0, -2.0, 1.0])).collect();
        if mirror {
            rows.push((0, vec![-1.0, 1.0]));
        }
        for (k, c) in rows {
            for p in 0..c.len() {
                for q in 0..c.len() {
                    a[k + p][k + q] += pen * c[p] * c[q];
                }
            }
        }
        for col in 0..n {
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for j in col..n {
                    a[row][j] -= f * a[col][j];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
            x[i] = (rhs[i] - s) / a[i][i];
        }
        x
    }

    #[test]
    fn refine_center_recovers_offset_start() {
        let scene = ImageF::from_fn(96, 96, 3, |c, y, x| {
            0.6 + 0.08 * ((x as f64 * 0.9 + c as f64).sin() + (y as f64 * 0.7 + x as f64 * 0.3).cos())
        })
        .unwrap();
        let truth = LightCenter::new(41.3, 55.8);
        let v = synth_halo(96, 96, &HaloParams::cosine4(30.0, 0.3), truth).unwrap();
        let z = apply_halo(&scene, &v).unwrap();
        let got = refine_center(&z, LightCenter::new(47.0, 50.0), &SeparationConfig::default()).unwrap();
        assert!(got.distance(&truth) < 1.0, "{got:?}");
    }
}
