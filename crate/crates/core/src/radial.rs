//! Light centers, the radial gradient operator, and parametric halo layers.
//!
//! The radial gradient of a field `v` about a center `(x0, y0)` is the
//! directional derivative of `v` along the ray from the center:
//!
//! ```text
//! psi(x, y) = (dv/dx * (x - x0) + dv/dy * (y - y0)) / |r|
//! ```
//!
//! Derivatives use central differences inside the frame and one-sided
//! differences on its border. `psi` is defined as zero within half a pixel of
//! the center and on the pixel that contains the center.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{elementwise_mul, ImageF};

/// Smallest value a halo layer may take. Bounds the later division by 1000x.
pub const V_FLOOR: f64 = 1e-3;

/// Sub-pixel light-source position (`x` column, `y` row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightCenter {
    pub x: f64,
    pub y: f64,
}

impl LightCenter {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Geometric center of an `h x w` frame.
    pub fn frame_center(height: usize, width: usize) -> Self {
        Self::new((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
    }

    pub fn clamped(self, height: usize, width: usize) -> Self {
        Self::new(
            self.x.clamp(0.0, width as f64 - 1.0),
            self.y.clamp(0.0, height as f64 - 1.0),
        )
    }

    pub fn distance(&self, other: &LightCenter) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Per-pixel radial gradient values about a center.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub center: LightCenter,
}

impl RadialField {
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HaloModel {
    Gaussian,
    Cosine4,
    Flat,
}

impl fmt::Display for HaloModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HaloModel::Gaussian => "gaussian",
            HaloModel::Cosine4 => "cosine4",
            HaloModel::Flat => "flat",
        })
    }
}

impl FromStr for HaloModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "gaussian" => Ok(HaloModel::Gaussian),
            "cosine4" => Ok(HaloModel::Cosine4),
            "flat" => Ok(HaloModel::Flat),
            other => Err(Error::Param(format!("unknown halo model '{other}'"))),
        }
    }
}

/// Falloff parameters of a synthetic halo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaloParams {
    pub model: HaloModel,
    /// Falloff scale in pixels.
    pub sigma: f64,
    /// Asymptotic floor far from the center.
    pub ambient: f64,
    /// Shape exponent of the gaussian family.
    pub beta: f64,
}

impl HaloParams {
    pub fn gaussian(sigma: f64, ambient: f64) -> Self {
        Self {
            model: HaloModel::Gaussian,
            sigma,
            ambient,
            beta: 1.0,
        }
    }

    pub fn cosine4(sigma: f64, ambient: f64) -> Self {
        Self {
            model: HaloModel::Cosine4,
            ..Self::gaussian(sigma, ambient)
        }
    }

    pub fn flat() -> Self {
        Self {
            model: HaloModel::Flat,
            ..Self::gaussian(1.0, 0.5)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::Param(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(V_FLOOR..1.0).contains(&self.ambient) {
            return Err(Error::Param(format!(
                "ambient must lie in [{V_FLOOR}, 1), got {}",
                self.ambient
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.5) {
            return Err(Error::Param(format!("beta must be >= 0.5, got {}", self.beta)));
        }
        Ok(())
    }

    /// Attenuation at radius `r` before normalization.
    pub fn profile(&self, r: f64) -> f64 {
        let a = self.ambient;
        match self.model {
            HaloModel::Gaussian => a + (1.0 - a) * (-(r / self.sigma).powf(2.0 * self.beta)).exp(),
            HaloModel::Cosine4 => {
                let t = (r / (2.0 * self.sigma)).min(std::f64::consts::FRAC_PI_2);
                a + (1.0 - a) * t.cos().powi(4)
            }
            HaloModel::Flat => 1.0,
        }
    }
}

/// A positive multiplicative illumination field with unit maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct HaloLayer {
    field: ImageF,
    center: LightCenter,
    /// `None` for estimated layers.
    model: Option<HaloModel>,
}

impl HaloLayer {
    /// Wraps a one-channel field, checking the `[V_FLOOR, 1]` range and unit maximum.
    pub fn new(field: ImageF, center: LightCenter, model: Option<HaloModel>) -> Result<Self> {
        if field.channels() != 1 {
            return Err(Error::Shape("halo layers have one channel".into()));
        }
        let mut max = f64::MIN;
        for &v in field.data() {
            if !(V_FLOOR..=1.0).contains(&v) {
                return Err(Error::Param(format!("halo value {v} outside [{V_FLOOR}, 1]")));
            }
            max = max.max(v);
        }
        if max != 1.0 {
            return Err(Error::Param(format!("halo maximum is {max}, expected 1")));
        }
        if !center.is_finite() {
            return Err(Error::Param("non-finite light center".into()));
        }
        Ok(Self {
            field,
            center,
            model,
        })
    }

    pub fn flat(height: usize, width: usize, center: LightCenter) -> Result<Self> {
        Self::new(
            ImageF::filled(height, width, 1, 1.0)?,
            center,
            Some(HaloModel::Flat),
        )
    }

    pub fn field(&self) -> &ImageF {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.data()
    }

    pub fn center(&self) -> LightCenter {
        self.center
    }

    pub fn model(&self) -> Option<HaloModel> {
        self.model
    }

    pub fn height(&self) -> usize {
        self.field.height()
    }

    pub fn width(&self) -> usize {
        self.field.width()
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.field.get(0, y, x)
    }

    /// Writes the layer as a 16-bit gray PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::imgcore::save_gray16(&self.field, path)
    }

    /// Mean absolute difference to another layer of the same size.
    pub fn mean_abs_error(&self, other: &HaloLayer) -> Result<f64> {
        if !self.field.same_size(&other.field) {
            return Err(Error::Shape("halo sizes differ".into()));
        }
        let n = self.field.pixels() as f64;
        Ok(self
            .values()
            .iter()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n)
    }
}

/// Result of [`estimate_center`]. `degenerate` is set for constant images,
/// in which case the frame center is returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterEstimate {
    pub center: LightCenter,
    pub degenerate: bool,
}

pub const DEFAULT_TOP_FRACTION: f64 = 0.01;

/// Intensity-weighted centroid of the brightest `ceil(top_fraction * N)` pixels.
///
/// Ties at the selection threshold are admitted in row-major order.
pub fn estimate_center(img: &ImageF, top_fraction: f64) -> Result<CenterEstimate> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Param(format!(
            "top_fraction must lie in (0, 1], got {top_fraction}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let lum = img.luminance();
    let lum = lum.data();

    let (lo, hi) = lum
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi == lo {
        return Ok(CenterEstimate {
            center: LightCenter::frame_center(h, w),
            degenerate: true,
        });
    }

    let n = lum.len();
    let k = ((top_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal luminance keeps row-major order
    order.sort_by(|&a, &b| lum[b].total_cmp(&lum[a]));

    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for &i in &order[..k] {
        let wgt = lum[i].max(0.0);
        sw += wgt;
        sx += wgt * (i % w) as f64;
        sy += wgt * (i / w) as f64;
    }
    let center = if sw > 0.0 {
        LightCenter::new(sx / sw, sy / sw)
    } else {
        let (sx, sy) = order[..k].iter().fold((0.0, 0.0), |(sx, sy), &i| {
            (sx + (i % w) as f64, sy + (i / w) as f64)
        });
        LightCenter::new(sx / k as f64, sy / k as f64)
    };
    Ok(CenterEstimate {
        center: center.clamped(h, w),
        degenerate: false,
    })
}

/// Unit radial direction per pixel; zero at the singular pixels.
pub(crate) fn radial_directions(h: usize, w: usize, center: LightCenter) -> (Vec<f64>, Vec<f64>) {
    let mut cx = vec![0.0; h * w];
    let mut cy = vec![0.0; h * w];
    let home = (center.x.round(), center.y.round());
    for y in 0..h {
        for x in 0..w {
            let (rx, ry) = (x as f64 - center.x, y as f64 - center.y);
            let r = rx.hypot(ry);
            if r < 0.5 || (x as f64, y as f64) == home {
                continue;
            }
            cx[y * w + x] = rx / r;
            cy[y * w + x] = ry / r;
        }
    }
    (cx, cy)
}

#[inline]
fn diff_x(v: &[f64], w: usize, y: usize, x: usize) -> f64 {
    let row = &v[y * w..(y + 1) * w];
    if x == 0 {
        row[1] - row[0]
    } else if x == w - 1 {
        row[w - 1] - row[w - 2]
    } else {
        0.5 * (row[x + 1] - row[x - 1])
    }
}

#[inline]
fn diff_y(v: &[f64], h: usize, w: usize, y: usize, x: usize) -> f64 {
    if y == 0 {
        v[w + x] - v[x]
    } else if y == h - 1 {
        v[(h - 1) * w + x] - v[(h - 2) * w + x]
    } else {
        0.5 * (v[(y + 1) * w + x] - v[(y - 1) * w + x])
    }
}

/// Central differences `(dv/dx, dv/dy)` of one plane, one-sided on the border.
pub(crate) fn plane_gradient(v: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            gx[y * w + x] = diff_x(v, w, y, x);
            gy[y * w + x] = diff_y(v, h, w, y, x);
        }
    }
    (gx, gy)
}

/// Adds the adjoint of the difference operators applied to `(ux, uy)` into `out`.
pub(crate) fn plane_gradient_adjoint(ux: &[f64], uy: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let u = ux[i];
            if u != 0.0 {
                if x == 0 {
                    out[i + 1] += u;
                    out[i] -= u;
                } else if x == w - 1 {
                    out[i] += u;
                    out[i - 1] -= u;
                } else {
                    out[i + 1] += 0.5 * u;
                    out[i - 1] -= 0.5 * u;
                }
            }
            let u = uy[i];
            if u != 0.0 {
                if y == 0 {
                    out[i + w] += u;
                    out[i] -= u;
                } else if y == h - 1 {
                    out[i] += u;
                    out[i - w] -= u;
                } else {
                    out[i + w] += 0.5 * u;
                    out[i - w] -= 0.5 * u;
                }
            }
        }
    }
}

/// Radial gradient of a raw plane. The center is used as given (it may lie
/// outside the plane, e.g. for training crops).
pub(crate) fn radial_gradient_plane(v: &[f64], h: usize, w: usize, center: LightCenter) -> Vec<f64> {
    let (cx, cy) = radial_directions(h, w, center);
    let (gx, gy) = plane_gradient(v, h, w);
    (0..h * w).map(|i| gx[i] * cx[i] + gy[i] * cy[i]).collect()
}

/// Adjoint of [`radial_gradient_plane`] applied to `u`, accumulated into `out`.
pub(crate) fn radial_gradient_adjoint_plane(
    u: &[f64],
    h: usize,
    w: usize,
    center: LightCenter,
    out: &mut [f64],
) {
    let (cx, cy) = radial_directions(h, w, center);
    let ux: Vec<f64> = u.iter().zip(&cx).map(|(a, b)| a * b).collect();
    let uy: Vec<f64> = u.iter().zip(&cy).map(|(a, b)| a * b).collect();
    plane_gradient_adjoint(&ux, &uy, h, w, out);
}

/// Radial gradient of a one-channel field about `center` (clamped into the frame).
pub fn radial_gradient(field: &ImageF, center: LightCenter) -> Result<RadialField> {
    if field.channels() != 1 {
        return Err(Error::Shape(format!(
            "radial gradient expects one channel, got {}",
            field.channels()
        )));
    }
    let (h, w) = (field.height(), field.width());
    let center = center.clamped(h, w);
    Ok(RadialField {
        height: h,
        width: w,
        values: radial_gradient_plane(field.data(), h, w, center),
        center,
    })
}

/// Synthesizes a normalized, floored halo layer centered at `center`.
pub fn synth_halo(
    height: usize,
    width: usize,
    params: &HaloParams,
    center: LightCenter,
) -> Result<HaloLayer> {
    params.validate()?;
    if !center.is_finite() {
        return Err(Error::Param("non-finite light center".into()));
    }
    let center = center.clamped(height, width);
    let mut field = ImageF::from_fn(height, width, 1, |_, y, x| {
        params.profile((x as f64 - center.x).hypot(y as f64 - center.y))
    })?
    .into_data();
    let max = field.iter().cloned().fold(f64::MIN, f64::max);
    for v in &mut field {
        *v = (*v / max).max(V_FLOOR);
    }
    HaloLayer::new(
        ImageF::new(height, width, 1, field)?,
        center,
        Some(params.model),
    )
}

/// Degrades `img` by the halo: element-wise product, clamped to `[0, 1]`.
pub fn apply_halo(img: &ImageF, halo: &HaloLayer) -> Result<ImageF> {
    Ok(elementwise_mul(img, halo.field())?.clamp01())
}

/// Writes the key-value sidecar that accompanies a halo PNG.
pub fn write_sidecar(path: impl AsRef<Path>, params: &HaloParams, center: LightCenter) -> Result<()> {
    let path = path.as_ref();
    let text = format!(
        "model = {}\nsigma = {}\nambient = {}\nbeta = {}\nx0 = {}\ny0 = {}\n",
        params.model, params.sigma, params.ambient, params.beta, center.x, center.y
    );
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<(HaloParams, LightCenter)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut model = None;
    let mut nums = [None; 5];
    const KEYS: [&str; 5] = ["sigma", "ambient", "beta", "x0", "y0"];
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Param(format!("malformed sidecar line '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        if key == "model" {
            model = Some(value.parse::<HaloModel>()?);
        } else if let Some(slot) = KEYS.iter().position(|k| *k == key) {
            nums[slot] = Some(
                value
                    .parse::<f64>()
                    .map_err(|_| Error::Param(format!("bad number for {key}: '{value}'")))?,
            );
        } else {
            return Err(Error::Param(format!("unknown sidecar key '{key}'")));
        }
    }
    let get = |i: usize| nums[i].ok_or_else(|| Error::Param(format!("sidecar lacks '{}'", KEYS[i])));
    let params = HaloParams {
        model: model.ok_or_else(|| Error::Param("sidecar lacks 'model'".into()))?,
        sigma: get(0)?,
        ambient: get(1)?,
        beta: get(2)?,
    };
    Ok((params, LightCenter::new(get(3)?, get(4)?)))
}
