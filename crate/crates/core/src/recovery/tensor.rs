use crate::error::{Error, Result};
use crate::imgcore::ImageF;

/// Dense `n x c x h x w` feature map, channel-major within each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "{} values for a {n}x{c}x{h}x{w} tensor",
                data.len()
            )));
        }
        Ok(Self { n, c, h, w, data })
    }

    /// One-sample tensor holding the planes of `img`.
    pub fn from_image(img: &ImageF) -> Self {
        Self {
            n: 1,
            c: img.channels(),
            h: img.height(),
            w: img.width(),
            data: img.data().to_vec(),
        }
    }

    /// Converts sample `i` back into an image (no clamping).
    pub fn to_image(&self, i: usize) -> Result<ImageF> {
        ImageF::new(self.h, self.w, self.c, self.sample(i).to_vec())
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.c * self.plane_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn plane(&self, i: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        let start = (i * self.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, i: usize, c: usize) -> &mut [f64] {
        let p = self.plane_len();
        let start = (i * self.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n, self.c, self.h, self.w)
    }

    pub fn add_assign(&mut self, other: &Tensor4) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors with `what` in the message if any value is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }
}

/// Channel concatenation of tensors with equal `n`, `h`, `w`.
pub fn concat_channels(parts: &[&Tensor4]) -> Result<Tensor4> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
    let (n, h, w) = (first.n, first.h, first.w);
    if parts.iter().any(|t| t.n != n || t.h != h || t.w != w) {
        return Err(Error::Shape("concat inputs differ in batch or spatial size".into()));
    }
    let c: usize = parts.iter().map(|t| t.c).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        for t in parts {
            data.extend_from_slice(t.sample(i));
        }
    }
    Ok(Tensor4 { n, c, h, w, data })
}

/// Splits a concatenated gradient back into pieces with the given channel counts.
pub fn split_channels(t: &Tensor4, sizes: &[usize]) -> Vec<Tensor4> {
    debug_assert_eq!(sizes.iter().sum::<usize>(), t.c);
    let p = t.plane_len();
    let mut out: Vec<Tensor4> = sizes.iter().map(|&c| Tensor4::zeros(t.n, c, t.h, t.w)).collect();
    for i in 0..t.n {
        let mut offset = 0;
        let src = t.sample(i);
        for (part, &c) in out.iter_mut().zip(sizes) {
            let len = c * p;
            part.data[i * len..(i + 1) * len].copy_from_slice(&src[offset..offset + len]);
            offset += len;
        }
    }
    out
}
