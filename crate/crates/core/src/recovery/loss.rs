use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{ImageF, LUMA_WEIGHTS};
use crate::metrics::{
    filter_valid_adjoint, gaussian_taps, ssim_map, window_stats, SSIM_SIGMA, SSIM_WINDOW,
};
use crate::radial::{radial_gradient_adjoint_plane, radial_gradient_plane, LightCenter};

/// Weights of the reconstruction, SSIM and radial-gradient terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mu1: 1.0,
            mu2: 0.5,
            mu3: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu1", self.mu1), ("mu2", self.mu2), ("mu3", self.mu3)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossTerms {
    pub total: f64,
    pub re: f64,
    pub pre: f64,
    pub rg: f64,
}

impl std::ops::AddAssign for LossTerms {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.re += o.re;
        self.pre += o.pre;
        self.rg += o.rg;
    }
}

impl LossTerms {
    pub fn scaled(self, f: f64) -> Self {
        Self {
            total: self.total * f,
            re: self.re * f,
            pre: self.pre * f,
            rg: self.rg * f,
        }
    }
}

/// `sqrt(mean(d^2))` and its gradient with respect to `d` (zero where the RMS vanishes).
pub(crate) fn rms_with_grad(d: &[f64]) -> (f64, Vec<f64>) {
    let n = d.len() as f64;
    let rms = (d.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms == 0.0 {
        return (0.0, vec![0.0; d.len()]);
    }
    (rms, d.iter().map(|v| v / (n * rms)).collect())
}

fn luminance_plane(data: &[f64], c: usize, p: usize) -> Vec<f64> {
    if c == 1 {
        return data.to_vec();
    }
    (0..p)
        .map(|i| (0..3).map(|k| LUMA_WEIGHTS[k] * data[k * p + i]).sum())
        .collect()
}

/// Mean SSIM of the luminance planes and its gradient with respect to `pred`.
pub(crate) fn ssim_with_grad(pred: &[f64], reference: &[f64], c: usize, h: usize, w: usize) -> (f64, Vec<f64>) {
    let p = h * w;
    let x = luminance_plane(pred, c, p);
    let y = luminance_plane(reference, c, p);
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let s = window_stats(&x, &y, h, w, &taps);
    let map = ssim_map(&s);
    let nw = map.len() as f64;
    let mean = map.iter().sum::<f64>() / nw;

    let (c1, c2) = crate::metrics::ssim_constants();
    let mut d_mu = vec![0.0; map.len()];
    let mut d_exx = vec![0.0; map.len()];
    let mut d_exy = vec![0.0; map.len()];
    for i in 0..map.len() {
        let (mx, my) = (s.mu_x[i], s.mu_y[i]);
        let a = 2.0 * mx * my + c1;
        let b = 2.0 * s.cov[i] + c2;
        let cc = mx * mx + my * my + c1;
        let d = s.var_x[i] + s.var_y[i] + c2;
        let si = map[i] / nw;
        let (mxc, myc) = (s.mu_xc[i], s.mu_yc[i]);
        d_mu[i] = si * (2.0 * my / a - 2.0 * myc / b - 2.0 * mx / cc + 2.0 * mxc / d);
        d_exy[i] = si * 2.0 / b;
        d_exx[i] = -si / d;
    }
    let g_mu = filter_valid_adjoint(&d_mu, h, w, &taps);
    let g_exx = filter_valid_adjoint(&d_exx, h, w, &taps);
    let g_exy = filter_valid_adjoint(&d_exy, h, w, &taps);
    // moments are about the global means, which are held fixed: the value
    // does not depend on the choice of offset
    let (ox, oy) = s.offset;
    let g_lum: Vec<f64> = (0..p)
        .map(|i| g_mu[i] + 2.0 * (x[i] - ox) * g_exx[i] + (y[i] - oy) * g_exy[i])
        .collect();
    let mut grad = vec![0.0; c * p];
    if c == 1 {
        grad = g_lum;
    } else {
        for k in 0..3 {
            for i in 0..p {
                grad[k * p + i] = LUMA_WEIGHTS[k] * g_lum[i];
            }
        }
    }
    (mean, grad)
}

/// RMS over channels and pixels of `psi(pred - ref)` and its gradient.
pub(crate) fn radial_rms_with_grad(
    pred: &[f64],
    reference: &[f64],
    c: usize,
    h: usize,
    w: usize,
    center: LightCenter,
) -> (f64, Vec<f64>) {
    let p = h * w;
    let mut psi = Vec::with_capacity(c * p);
    for k in 0..c {
        let diff: Vec<f64> = (0..p).map(|i| pred[k * p + i] - reference[k * p + i]).collect();
        psi.extend(radial_gradient_plane(&diff, h, w, center));
    }
    let (rms, g_psi) = rms_with_grad(&psi);
    let mut grad = vec![0.0; c * p];
    for k in 0..c {
        radial_gradient_adjoint_plane(&g_psi[k * p..(k + 1) * p], h, w, center, &mut grad[k * p..(k + 1) * p]);
    }
    (rms, grad)
}

fn check(pred: &ImageF, reference: &ImageF) -> Result<()> {
    if !pred.same_shape(reference) {
        return Err(Error::Shape("prediction and reference differ in shape".into()));
    }
    if pred.height() < SSIM_WINDOW || pred.width() < SSIM_WINDOW {
        return Err(Error::Dimension(format!("loss needs at least {SSIM_WINDOW}px sides")));
    }
    Ok(())
}

/// Loss terms and the gradient of `total` with respect to the prediction samples.
pub(crate) fn loss_and_grad(
    pred: &[f64],
    reference: &[f64],
    c: usize,
    h: usize,
    w: usize,
    center: LightCenter,
    mu: &LossWeights,
) -> (LossTerms, Vec<f64>) {
    let diff: Vec<f64> = pred.iter().zip(reference).map(|(a, b)| a - b).collect();
    let (rms, g_re) = rms_with_grad(&diff);
    let (ssim, g_ssim) = ssim_with_grad(pred, reference, c, h, w);
    let (rg, g_rg) = radial_rms_with_grad(pred, reference, c, h, w, center);
    let terms = LossTerms {
        re: mu.mu1 * rms,
        pre: -mu.mu2 * ssim,
        rg: mu.mu3 * rg,
        total: mu.mu1 * rms - mu.mu2 * ssim + mu.mu3 * rg,
    };
    let grad = (0..pred.len())
        .map(|i| mu.mu1 * g_re[i] - mu.mu2 * g_ssim[i] + mu.mu3 * g_rg[i])
        .collect();
    (terms, grad)
}

/// Reconstruction + structural + radial-gradient loss of a prediction.
pub fn recovery_loss(pred: &ImageF, reference: &ImageF, center: LightCenter, mu: &LossWeights) -> Result<LossTerms> {
    check(pred, reference)?;
    mu.validate()?;
    let (c, h, w) = (pred.channels(), pred.height(), pred.width());
    Ok(loss_and_grad(pred.data(), reference.data(), c, h, w, center, mu).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ssim;
    use crate::radial::radial_gradient;

    fn img(seed: f64) -> ImageF {
        ImageF::from_fn(48, 48, 3, |c, y, x| {
            0.5 + 0.3 * ((x as f64 * 0.31 + seed).sin() * (y as f64 * 0.17 + c as f64 * seed).cos())
        })
        .unwrap()
    }

    #[test]
    fn identical_gives_minus_mu2() {
        let a = img(1.0);
        let mu = LossWeights::default();
        let t = recovery_loss(&a, &a, LightCenter::new(20.0, 20.0), &mu).unwrap();
        assert_eq!(t.re, 0.0);
        assert_eq!(t.rg, 0.0);
        assert_eq!(t.total, -0.5);
    }

    #[test]
    fn constant_offset_rms() {
        let a = img(2.0);
        let b = a.map(|v| v + 0.1).unwrap();
        let mu = LossWeights {
            mu1: 1.0,
            mu2: 0.0,
            mu3: 0.0,
        };
        let t = recovery_loss(&b, &a, LightCenter::new(5.0, 5.0), &mu).unwrap();
        assert!((t.total - 0.1).abs() < 1e-12);
    }

    #[test]
    fn terms_match_second_implementation() {
        let (a, b) = (img(1.3), img(2.1));
        let center = LightCenter::new(17.0, 30.0);
        let mu = LossWeights::default();
        let t = recovery_loss(&a, &b, center, &mu).unwrap();

        let n = a.data().len() as f64;
        let rms = (a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n).sqrt();
        let ssim_ref = ssim(&a, &b).unwrap();
        let mut sq = 0.0;
        for c in 0..3 {
            let pa = radial_gradient(&a.channel(c), center).unwrap();
            let pb = radial_gradient(&b.channel(c), center).unwrap();
            sq += pa.values.iter().zip(&pb.values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        let rg = (sq / n).sqrt();
        assert!((t.re - rms).abs() <= 1e-8);
        assert!((t.pre + 0.5 * ssim_ref).abs() <= 1e-8);
        assert!((t.rg - 0.2 * rg).abs() <= 1e-8);
        assert!((t.total - (t.re + t.pre + t.rg)).abs() <= 1e-12);
    }

    #[test]
    fn rejects_bad_shapes() {
        let a = img(1.0);
        let small = ImageF::filled(10, 10, 3, 0.5).unwrap();
        assert!(matches!(
            recovery_loss(&a, &a.channel(0), LightCenter::new(0.0, 0.0), &LossWeights::default()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            recovery_loss(&small, &small, LightCenter::new(0.0, 0.0), &LossWeights::default()),
            Err(Error::Dimension(_))
        ));
    }
}
