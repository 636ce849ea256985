//! Planar floating-point images and the pixel plumbing shared by every stage.
//!
//! Samples are stored channel-major (`data[c * h * w + y * w + x]`) with a
//! nominal range of `[0, 1]`. Conversion to and from interleaved 8/16-bit
//! buffers happens only in [`load_image`] and [`save_image`].

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};

/// Rec.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Planar floating-point image with 1 or 3 channels, at least 8x8.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

/// A pixel position, `x` is the column and `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelCoord {
    pub x: usize,
    pub y: usize,
}

impl PixelCoord {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn is_inside(&self, img: &ImageF) -> bool {
        self.x < img.width && self.y < img.height
    }
}

impl ImageF {
    pub const MIN_SIDE: usize = 8;

    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "expected 1 or 3 channels, got {channels}"
            )));
        }
        if height < Self::MIN_SIDE || width < Self::MIN_SIDE {
            return Err(Error::Dimension(format!(
                "{height}x{width} is below the {m}x{m} minimum",
                m = Self::MIN_SIDE
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "buffer holds {} samples, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(channel, row, column)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_size(&self, other: &ImageF) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn same_shape(&self, other: &ImageF) -> bool {
        self.same_size(other) && self.channels == other.channels
    }

    /// Applies `f` to every sample.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<ImageF> {
        ImageF::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn clamp01(&self) -> ImageF {
        ImageF {
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }

    /// Single-channel copy of one plane.
    pub fn channel(&self, c: usize) -> ImageF {
        ImageF {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImageF> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Dimension(format!(
                "crop {height}x{width}+{top}+{left} exceeds {}x{}",
                self.height, self.width
            )));
        }
        ImageF::from_fn(height, width, self.channels, |c, y, x| {
            self.get(c, top + y, left + x)
        })
    }

    /// Single-channel Rec.601 luminance; a grayscale image is copied as is.
    pub fn luminance(&self) -> ImageF {
        if self.channels == 1 {
            return self.clone();
        }
        let n = self.pixels();
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = (0..n)
            .map(|i| LUMA_WEIGHTS[0] * r[i] + LUMA_WEIGHTS[1] * g[i] + LUMA_WEIGHTS[2] * b[i])
            .collect();
        ImageF {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Bilinear resize with edge clamping and the align-corners convention.
    pub fn resize_bilinear(&self, new_height: usize, new_width: usize) -> Result<ImageF> {
        if new_height < 2 || new_width < 2 {
            return Err(Error::Dimension(format!(
                "cannot resize to {new_height}x{new_width}"
            )));
        }
        let data = resize_bilinear_planar(
            &self.data,
            self.channels,
            self.height,
            self.width,
            new_height,
            new_width,
        );
        ImageF::new(new_height, new_width, self.channels, data)
    }
}

/// Convenience wrapper for [`ImageF::luminance`].
pub fn to_luminance(img: &ImageF) -> ImageF {
    img.luminance()
}

/// Interpolation taps `(lo, hi, frac)` for one axis: `dst[i] = (1-frac)*src[lo] + frac*src[hi]`.
pub(crate) fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            if dst == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = (i * (src - 1)) as f64 / (dst - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Align-corners bilinear resize of a channel-major buffer of `channels` planes.
///
/// Works on any plane size (including the sub-8px levels of a pyramid), which
/// is why it is exposed separately from [`ImageF::resize_bilinear`].
pub fn resize_bilinear_planar(
    src: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    new_height: usize,
    new_width: usize,
) -> Vec<f64> {
    assert_eq!(src.len(), channels * height * width);
    let ty = axis_taps(height, new_height);
    let tx = axis_taps(width, new_width);
    let mut out = Vec::with_capacity(channels * new_height * new_width);
    for c in 0..channels {
        let plane = &src[c * height * width..(c + 1) * height * width];
        for &(y0, y1, fy) in &ty {
            let r0 = &plane[y0 * width..(y0 + 1) * width];
            let r1 = &plane[y1 * width..(y1 + 1) * width];
            for &(x0, x1, fx) in &tx {
                let top = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                let bottom = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Element-wise product. `b` may have one channel, in which case it is
/// broadcast across the channels of `a`. No clamping is applied.
pub fn elementwise_mul(a: &ImageF, b: &ImageF) -> Result<ImageF> {
    if !a.same_size(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    if b.channels != 1 && b.channels != a.channels {
        return Err(Error::Shape(format!(
            "cannot broadcast {} channels onto {}",
            b.channels, a.channels
        )));
    }
    let n = a.pixels();
    let data = a
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let j = if b.channels == 1 { i % n } else { i };
            v * b.data[j]
        })
        .collect();
    ImageF::new(a.height, a.width, a.channels, data)
}

/// Reads a PNG or binary PNM file, scaling samples into `[0, 1]`.
///
/// Gray (and gray+alpha) files load as one channel, everything else as RGB;
/// alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageF> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::Format(format!(
                "{}: expected PNG or PPM, found {other:?}",
                path.display()
            )))
        }
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);

    let (channels, samples, max): (usize, Vec<f64>, f64) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.iter().map(|&v| v as f64).collect(), 255.0),
        DynamicImage::ImageLumaA8(buf) => (
            1,
            buf.pixels().map(|p| p.0[0] as f64).collect(),
            255.0,
        ),
        DynamicImage::ImageRgb8(buf) => (3, buf.iter().map(|&v| v as f64).collect(), 255.0),
        DynamicImage::ImageRgba8(buf) => (
            3,
            buf.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2]]).map(f64::from).collect(),
            255.0,
        ),
        DynamicImage::ImageLuma16(buf) => (1, buf.iter().map(|&v| v as f64).collect(), 65535.0),
        DynamicImage::ImageLumaA16(buf) => (
            1,
            buf.pixels().map(|p| p.0[0] as f64).collect(),
            65535.0,
        ),
        DynamicImage::ImageRgb16(buf) => (3, buf.iter().map(|&v| v as f64).collect(), 65535.0),
        DynamicImage::ImageRgba16(buf) => (
            3,
            buf.pixels().flat_map(|p| [p.0[0], p.0[1], p.0[2]]).map(f64::from).collect(),
            65535.0,
        ),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported sample type {:?}",
                path.display(),
                other.color()
            )))
        }
    };

    // interleaved -> planar
    let n = w * h;
    let mut data = vec![0.0; n * channels];
    for (i, v) in samples.into_iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        data[c * n + p] = v / max;
    }
    ImageF::new(h, w, channels, data)
}

/// Quantizes a sample to 8 bits: `round(clamp(v, 0, 1) * 255)`.
pub fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn interleave<T: Copy>(img: &ImageF, q: impl Fn(f64) -> T) -> Vec<T> {
    let n = img.pixels();
    let mut out = Vec::with_capacity(n * img.channels);
    for p in 0..n {
        for c in 0..img.channels {
            out.push(q(img.data[c * n + p]));
        }
    }
    out
}

/// Writes an 8-bit PNG (gray or RGB).
pub fn save_image(img: &ImageF, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width as u32, img.height as u32);
    let buf = interleave(img, quantize8);
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    write_png(path, &buf, w, h, color)
}

/// Writes a single-channel image as a 16-bit gray PNG.
pub fn save_gray16(img: &ImageF, path: impl AsRef<Path>) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::Shape("16-bit export expects one channel".into()));
    }
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .data
        .iter()
        .flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    write_png(
        path,
        &bytes,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::L16,
    )
}

fn write_png(
    path: &Path,
    buf: &[u8],
    w: u32,
    h: u32,
    color: image::ExtendedColorType,
) -> Result<()> {
    use image::ImageEncoder;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let encoder = image::codecs::png::PngEncoder::new(std::io::BufWriter::new(file));
    encoder
        .write_image(buf, w, h, color)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(other.to_string()),
        })
}
