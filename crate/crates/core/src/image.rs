use crate::error::{Error, Result};

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidSize(format!("image {height}x{width}")));
        }
        let expected = height * width * 3;
        if pixels.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} image needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    /// Constant-color image. Panics on a zero dimension.
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let pixels = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self { height, width, pixels }
    }

    /// Build an image from a per-pixel function of `(y, x)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(y, x));
            }
        }
        Self { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Apply `f` to every channel value.
    pub fn map_channels(&self, f: impl Fn(u8) -> u8) -> Image {
        Image { height: self.height, width: self.width, pixels: self.pixels.iter().map(|&v| f(v)).collect() }
    }

    /// Copy out the sub-rectangle starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::InvalidSize(format!("crop {h}x{w}+{y0}+{x0} outside {}x{}", self.height, self.width)));
        }
        let mut pixels = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Ok(Image { height: h, width: w, pixels })
    }
}

/// Clamp to `[0, 255]` and round half away from zero.
#[inline]
pub fn to_channel(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}
