//! Full-reference (MSE, PSNR, SSIM, PCQI) and no-reference (entropy, UIQM,
//! UCIQE) image quality metrics.
//!
//! Pinned constants:
//!
//! * SSIM: 11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic
//!   range 1, "valid" windows only, on Rec.601 luminance.
//! * PCQI: same window on 8-bit-scaled luminance, C = 3, L = 256. PCQI is
//!   reference-first and not symmetric.
//! * UIQM: c1 = 0.0282, c2 = 0.2953, c3 = 3.5753 on 8-bit-scaled samples,
//!   alpha-trimmed chroma statistics with alpha = 0.1, 8x8 blocks.
//! * UCIQE: 0.4680 * std(chroma)/100 + 0.2745 * (P99(L) - P1(L))/100 +
//!   0.2576 * mean(C / sqrt(C^2 + L^2)) in CIELab (sRGB, D65).
//! * MSE is reported scaled by 100; [`mse_raw`] gives the plain value.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{quantize8, ImageF};

pub const PSNR_CAP_DB: f64 = 120.0;
pub const MSE_REPORT_SCALE: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

const PCQI_C: f64 = 3.0;
const PCQI_L: f64 = 256.0;

pub const UIQM_COEFFS: [f64; 3] = [0.0282, 0.2953, 3.5753];
pub const UCIQE_COEFFS: [f64; 3] = [0.4680, 0.2745, 0.2576];
const UIQM_ALPHA: f64 = 0.1;
const UIQM_BLOCK: usize = 8;

/// Column order used by every report.
pub const METRIC_NAMES: [&str; 7] = ["mse", "psnr", "ssim", "pcqi", "entropy", "uiqm", "uciqe"];

fn check_pair(a: &ImageF, b: &ImageF) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    Ok(())
}

pub fn mse_raw(a: &ImageF, b: &ImageF) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// MSE in report units (raw value times 100).
pub fn mse(a: &ImageF, b: &ImageF) -> Result<f64> {
    Ok(mse_raw(a, b)? * MSE_REPORT_SCALE)
}

/// PSNR in dB for unit peak, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageF, b: &ImageF) -> Result<f64> {
    let m = mse_raw(a, b)?;
    if m < 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D Gaussian taps.
pub(crate) fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" correlation of an `h x w` plane with `taps x taps`.
pub(crate) fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for (j, t) in taps.iter().enumerate() {
            let src = &rows[(y + j) * ow..(y + j + 1) * ow];
            for (o, v) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += t * v;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: spreads an `(h-k+1) x (w-k+1)` map back onto `h x w`.
pub(crate) fn filter_valid_adjoint(map: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..oh {
        for (j, t) in taps.iter().enumerate() {
            let dst = &mut rows[(y + j) * ow..(y + j + 1) * ow];
            for (d, v) in dst.iter_mut().zip(&map[y * ow..(y + 1) * ow]) {
                *d += t * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for x in 0..ow {
            let g = rows[y * ow + x];
            for (d, t) in dst[x..x + k].iter_mut().zip(taps) {
                *d += t * g;
            }
        }
    }
    out
}

/// Windowed first and second moments of a pair of planes.
///
/// Second moments are taken about each plane's global mean, which leaves the
/// statistics unchanged but avoids cancellation in `E[x^2] - mu^2`.
pub(crate) struct WindowStats {
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    /// Window means of the centered planes.
    pub mu_xc: Vec<f64>,
    pub mu_yc: Vec<f64>,
    pub var_x: Vec<f64>,
    pub var_y: Vec<f64>,
    pub cov: Vec<f64>,
    /// Global means used for centering.
    pub offset: (f64, f64),
}

pub(crate) fn window_stats(x: &[f64], y: &[f64], h: usize, w: usize, taps: &[f64]) -> WindowStats {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let xc: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - my).collect();
    let xx: Vec<f64> = xc.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = yc.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xc.iter().zip(&yc).map(|(a, b)| a * b).collect();
    let mu_xc = filter_valid(&xc, h, w, taps);
    let mu_yc = filter_valid(&yc, h, w, taps);
    let exx = filter_valid(&xx, h, w, taps);
    let eyy = filter_valid(&yy, h, w, taps);
    let exy = filter_valid(&xy, h, w, taps);
    let len = mu_xc.len();
    let mut s = WindowStats {
        mu_x: mu_xc.iter().map(|v| v + mx).collect(),
        mu_y: mu_yc.iter().map(|v| v + my).collect(),
        var_x: vec![0.0; len],
        var_y: vec![0.0; len],
        cov: vec![0.0; len],
        mu_xc,
        mu_yc,
        offset: (mx, my),
    };
    for i in 0..len {
        s.var_x[i] = exx[i] - s.mu_xc[i] * s.mu_xc[i];
        s.var_y[i] = eyy[i] - s.mu_yc[i] * s.mu_yc[i];
        s.cov[i] = exy[i] - s.mu_xc[i] * s.mu_yc[i];
    }
    s
}

pub(crate) fn ssim_constants() -> (f64, f64) {
    ((SSIM_K1 * 1.0f64).powi(2), (SSIM_K2 * 1.0f64).powi(2))
}

pub(crate) fn ssim_map(stats: &WindowStats) -> Vec<f64> {
    let (c1, c2) = ssim_constants();
    (0..stats.mu_x.len())
        .map(|i| {
            let (mx, my) = (stats.mu_x[i], stats.mu_y[i]);
            ((2.0 * mx * my + c1) * (2.0 * stats.cov[i] + c2))
                / ((mx * mx + my * my + c1) * (stats.var_x[i] + stats.var_y[i] + c2))
        })
        .collect()
}

fn check_window(img: &ImageF) -> Result<()> {
    if img.height() < SSIM_WINDOW || img.width() < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "{}x{} is smaller than the {SSIM_WINDOW}px window",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Mean SSIM over all valid windows of the luminance planes.
pub fn ssim(a: &ImageF, b: &ImageF) -> Result<f64> {
    check_pair(a, b)?;
    check_window(a)?;
    let (la, lb) = (a.luminance(), b.luminance());
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let stats = window_stats(la.data(), lb.data(), a.height(), a.width(), &taps);
    let map = ssim_map(&stats);
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Patch-based contrast quality of `b` relative to the reference `a`.
///
/// Mean over windows of `q_i * q_c * q_s` with
/// `q_i = exp(-|mu_a - mu_b| / L)`,
/// `q_c = (4/pi) atan((cov + C) / (var_a + C))`,
/// `q_s = (cov + C) / (sd_a sd_b + C)`.
pub fn pcqi(a: &ImageF, b: &ImageF) -> Result<f64> {
    check_pair(a, b)?;
    check_window(a)?;
    let scale = |img: &ImageF| -> Vec<f64> { img.luminance().data().iter().map(|v| v * 255.0).collect() };
    let (la, lb) = (scale(a), scale(b));
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let s = window_stats(&la, &lb, a.height(), a.width(), &taps);
    let n = s.mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let va = s.var_x[i].max(0.0);
            let vb = s.var_y[i].max(0.0);
            let qi = (-(s.mu_x[i] - s.mu_y[i]).abs() / PCQI_L).exp();
            let qc = 4.0 / std::f64::consts::PI * ((s.cov[i] + PCQI_C) / (va + PCQI_C)).atan();
            let qs = (s.cov[i] + PCQI_C) / (va.sqrt() * vb.sqrt() + PCQI_C);
            qi * qc * qs
        })
        .sum();
    Ok(total / n as f64)
}

/// Shannon entropy (bits) of the 256-bin histogram of 8-bit luminance.
pub fn entropy8(img: &ImageF) -> f64 {
    let mut hist = [0usize; 256];
    let lum = img.luminance();
    for &v in lum.data() {
        hist[quantize8(v) as usize] += 1;
    }
    let n = lum.data().len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UiqmComponents {
    pub uicm: f64,
    pub uism: f64,
    pub uiconm: f64,
    pub uiqm: f64,
}

fn require_rgb(img: &ImageF, what: &str) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!("{what} needs an RGB image")));
    }
    Ok(())
}

fn trimmed_mean(values: &mut [f64], alpha: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    let lo = (alpha * k as f64).ceil() as usize;
    let hi = (alpha * k as f64).floor() as usize;
    let kept = &values[lo..k - hi];
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn uicm(r: &[f64], g: &[f64], b: &[f64]) -> f64 {
    let mut rg: Vec<f64> = r.iter().zip(g).map(|(r, g)| r - g).collect();
    let mut yb: Vec<f64> = (0..r.len()).map(|i| (r[i] + g[i]) / 2.0 - b[i]).collect();
    let var = |v: &[f64], mu: f64| v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / v.len() as f64;
    let mu_rg = trimmed_mean(&mut rg.clone(), UIQM_ALPHA);
    let mu_yb = trimmed_mean(&mut yb.clone(), UIQM_ALPHA);
    let s_rg = var(&rg, mu_rg);
    let s_yb = var(&yb, mu_yb);
    rg.clear();
    yb.clear();
    -0.0268 * (mu_rg * mu_rg + mu_yb * mu_yb).sqrt() + 0.1586 * (s_rg + s_yb).sqrt()
}

/// Index reflection for the Sobel boundary (edge sample repeated).
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i - 1) as usize
    } else if i as usize >= n {
        2 * n - 1 - i as usize
    } else {
        i as usize
    }
}

/// Sobel gradient magnitude, rescaled so its maximum is 255.
fn sobel_magnitude(p: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| p[reflect(y, h) * w + reflect(x, w)];
    let mut mag = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            mag[y as usize * w + x as usize] = gx.hypot(gy);
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for m in &mut mag {
            *m *= 255.0 / max;
        }
    }
    mag
}

/// Visits the full `UIQM_BLOCK`-sized blocks, yielding (min, max) over the given planes.
fn block_extrema(planes: &[&[f64]], h: usize, w: usize, mut f: impl FnMut(f64, f64)) -> usize {
    let (k1, k2) = (w / UIQM_BLOCK, h / UIQM_BLOCK);
    for by in 0..k2 {
        for bx in 0..k1 {
            let (mut lo, mut hi) = (f64::MAX, f64::MIN);
            for p in planes {
                for y in by * UIQM_BLOCK..(by + 1) * UIQM_BLOCK {
                    for &v in &p[y * w + bx * UIQM_BLOCK..y * w + (bx + 1) * UIQM_BLOCK] {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            f(lo, hi);
        }
    }
    k1 * k2
}

fn eme(p: &[f64], h: usize, w: usize) -> f64 {
    let mut acc = 0.0;
    let blocks = block_extrema(&[p], h, w, |lo, hi| {
        if lo > 0.0 && hi > 0.0 {
            acc += (hi / lo).ln();
        }
    });
    2.0 / blocks as f64 * acc
}

fn uiconm(planes: &[&[f64]], h: usize, w: usize) -> f64 {
    let mut acc = 0.0;
    let blocks = block_extrema(planes, h, w, |lo, hi| {
        let (top, bot) = (hi - lo, hi + lo);
        if top > 0.0 && bot > 0.0 {
            let m = top / bot;
            acc += m * m.ln();
        }
    });
    -acc / blocks as f64
}

/// UIQM and its three components.
pub fn uiqm(img: &ImageF) -> Result<UiqmComponents> {
    require_rgb(img, "UIQM")?;
    if img.height() < 16 || img.width() < 16 {
        return Err(Error::Dimension("UIQM needs at least 16x16".into()));
    }
    let (h, w) = (img.height(), img.width());
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| img.plane(c).iter().map(|v| v * 255.0).collect())
        .collect();
    let uicm = uicm(&planes[0], &planes[1], &planes[2]);

    let lambdas = crate::imgcore::LUMA_WEIGHTS;
    let uism = (0..3)
        .map(|c| {
            let mag = sobel_magnitude(&planes[c], h, w);
            let edge: Vec<f64> = mag.iter().zip(&planes[c]).map(|(m, v)| m * v).collect();
            lambdas[c] * eme(&edge, h, w)
        })
        .sum::<f64>();

    let refs: Vec<&[f64]> = planes.iter().map(|p| p.as_slice()).collect();
    let uiconm = uiconm(&refs, h, w);
    let [c1, c2, c3] = UIQM_COEFFS;
    Ok(UiqmComponents {
        uicm,
        uism,
        uiconm,
        uiqm: c1 * uicm + c2 * uism + c3 * uiconm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UciqeComponents {
    pub chroma_std: f64,
    pub luminance_contrast: f64,
    pub mean_saturation: f64,
    pub uciqe: f64,
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn srgb_to_linear(c: f64) -> f64 {
    let c = c.clamp(0.0, 1.0);
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// sRGB in `[0, 1]` to CIELab under D65. The white point is taken as the
/// image of RGB(1, 1, 1) so that achromatic input maps to `a = b = 0`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz: Vec<f64> = SRGB_TO_XYZ
        .iter()
        .map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2])
        .collect();
    let white: Vec<f64> = SRGB_TO_XYZ.iter().map(|row| row[0] + row[1] + row[2]).collect();
    let fx = lab_f(xyz[0] / white[0]);
    let fy = lab_f(xyz[1] / white[1]);
    let fz = lab_f(xyz[2] / white[2]);
    let l = 116.0 * fy - 16.0;
    if rgb[0] == rgb[1] && rgb[1] == rgb[2] {
        return [l, 0.0, 0.0];
    }
    [l, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn uciqe(img: &ImageF) -> Result<UciqeComponents> {
    require_rgb(img, "UCIQE")?;
    let n = img.pixels();
    let (mut ls, mut chroma, mut sat) = (Vec::with_capacity(n), Vec::with_capacity(n), 0.0);
    for i in 0..n {
        let [l, a, b] = srgb_to_lab([img.plane(0)[i], img.plane(1)[i], img.plane(2)[i]]);
        let c = a.hypot(b);
        let denom = c.hypot(l);
        if denom > 0.0 {
            sat += c / denom;
        }
        ls.push(l);
        chroma.push(c);
    }
    let mean_c = chroma.iter().sum::<f64>() / n as f64;
    let chroma_std = (chroma.iter().map(|c| (c - mean_c).powi(2)).sum::<f64>() / n as f64).sqrt() / 100.0;
    ls.sort_by(f64::total_cmp);
    let luminance_contrast = (percentile_sorted(&ls, 0.99) - percentile_sorted(&ls, 0.01)) / 100.0;
    let mean_saturation = sat / n as f64;
    let [c1, c2, c3] = UCIQE_COEFFS;
    Ok(UciqeComponents {
        chroma_std,
        luminance_contrast,
        mean_saturation,
        uciqe: c1 * chroma_std + c2 * luminance_contrast + c3 * mean_saturation,
    })
}

/// All metrics for one image; full-reference entries are `None` without a reference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub image: String,
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub pcqi: Option<f64>,
    pub entropy: f64,
    pub uiqm: Option<f64>,
    pub uciqe: Option<f64>,
    /// Unscaled MSE, kept alongside the report-scale column.
    pub mse_raw: Option<f64>,
}

impl MetricRow {
    pub fn values(&self) -> [Option<f64>; 7] {
        [
            self.mse,
            self.psnr,
            self.ssim,
            self.pcqi,
            Some(self.entropy),
            self.uiqm,
            self.uciqe,
        ]
    }
}

/// Switches for the costlier metrics; disabled columns are left empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSelection {
    pub pcqi: bool,
    pub uiqm: bool,
    pub uciqe: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self {
            pcqi: true,
            uiqm: true,
            uciqe: true,
        }
    }
}

/// Scores `pred`, against `reference` when one is given.
pub fn evaluate(name: &str, pred: &ImageF, reference: Option<&ImageF>) -> Result<MetricRow> {
    evaluate_selected(name, pred, reference, &MetricSelection::default())
}

pub fn evaluate_selected(
    name: &str,
    pred: &ImageF,
    reference: Option<&ImageF>,
    sel: &MetricSelection,
) -> Result<MetricRow> {
    let (mut mse_v, mut mse_r, mut psnr_v, mut ssim_v, mut pcqi_v) = (None, None, None, None, None);
    if let Some(r) = reference {
        let raw = mse_raw(r, pred)?;
        mse_r = Some(raw);
        mse_v = Some(raw * MSE_REPORT_SCALE);
        psnr_v = Some(psnr(r, pred)?);
        ssim_v = Some(ssim(r, pred)?);
        if sel.pcqi {
            pcqi_v = Some(pcqi(r, pred)?);
        }
    }
    let rgb = pred.channels() == 3;
    Ok(MetricRow {
        image: name.to_string(),
        mse: mse_v,
        psnr: psnr_v,
        ssim: ssim_v,
        pcqi: pcqi_v,
        entropy: entropy8(pred),
        uiqm: if sel.uiqm && rgb && pred.height() >= 16 && pred.width() >= 16 {
            Some(uiqm(pred)?.uiqm)
        } else {
            None
        },
        uciqe: if sel.uciqe && rgb { Some(uciqe(pred)?.uciqe) } else { None },
        mse_raw: mse_r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

fn aggregate(values: &mut [f64]) -> Option<Aggregate> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let median = if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    };
    Some(Aggregate {
        mean: values.iter().sum::<f64>() / n as f64,
        median,
        count: n,
    })
}

/// Per-image metric rows plus per-metric aggregates.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    /// MSE columns are multiplied by this factor.
    pub mse_scale: f64,
    pub images: usize,
    pub metrics: Vec<(String, Option<Aggregate>)>,
}

impl MetricReport {
    pub fn summary(&self) -> MetricSummary {
        let metrics = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mut col: Vec<f64> = self.rows.iter().filter_map(|r| r.values()[j]).collect();
                (name.to_string(), aggregate(&mut col))
            })
            .collect();
        MetricSummary {
            mse_scale: MSE_REPORT_SCALE,
            images: self.rows.len(),
            metrics,
        }
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# mse column is raw MSE x {MSE_REPORT_SCALE}")?;
        writeln!(out, "image,{}", METRIC_NAMES.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .values()
                .iter()
                .map(|v| v.map(|v| format!("{v:.6}")).unwrap_or_default())
                .collect();
            writeln!(out, "{},{}", row.image, cells.join(","))?;
        }
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, summary_path: &Path) -> Result<()> {
        let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(csv_path, e))?;
        let json = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        std::fs::write(summary_path, json + "\n").map_err(|e| Error::io(summary_path, e))
    }
}
