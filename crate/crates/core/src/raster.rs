//! Interleaved float rasters used for property maps.

use image::RgbImage;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, top row first, channels interleaved.
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Raster {
            width,
            height,
            channels,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// One channel as a dense plane.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bilinear sample with edge clamping; `x`, `y` in pixel-centre units.
    pub fn sample_clamped(&self, x: f64, y: f64, c: usize) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let g = |xx, yy| self.get(xx, yy, c) as f64;
        let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
        let bottom = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize mapping pixel centres onto pixel centres.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Raster {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        Raster::from_fn(width, height, self.channels, |x, y, c| {
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            self.sample_clamped(src_x, src_y, c) as f32
        })
    }

    /// Area-average downsample (box filter with fractional pixel coverage).
    pub fn resize_area(&self, width: usize, height: usize) -> Raster {
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Raster::new(width, height, self.channels);
        for oy in 0..height {
            let y0 = oy as f64 * sy;
            let y1 = y0 + sy;
            for ox in 0..width {
                let x0 = ox as f64 * sx;
                let x1 = x0 + sx;
                let mut acc = vec![0.0f64; self.channels];
                let mut wsum = 0.0;
                let mut iy = y0.floor() as usize;
                while (iy as f64) < y1 && iy < self.height {
                    let wy = (y1.min(iy as f64 + 1.0) - y0.max(iy as f64)).max(0.0);
                    let mut ix = x0.floor() as usize;
                    while (ix as f64) < x1 && ix < self.width {
                        let wx = (x1.min(ix as f64 + 1.0) - x0.max(ix as f64)).max(0.0);
                        let w = wx * wy;
                        for (c, a) in acc.iter_mut().enumerate() {
                            *a += w * self.get(ix, iy, c) as f64;
                        }
                        wsum += w;
                        ix += 1;
                    }
                    iy += 1;
                }
                for (c, a) in acc.iter().enumerate() {
                    out.set(ox, oy, c, (a / wsum) as f32);
                }
            }
        }
        out
    }

    /// Rotates by 180 degrees.
    pub fn rotate180(&self) -> Raster {
        Raster::from_fn(self.width, self.height, self.channels, |x, y, c| {
            self.get(self.width - 1 - x, self.height - 1 - y, c)
        })
    }
}

/// Normalised [0,1] RGB raster of an 8-bit image.
pub fn rgb_to_raster(img: &RgbImage) -> Raster {
    Raster {
        width: img.width() as usize,
        height: img.height() as usize,
        channels: 3,
        data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_resize_of_constant_is_constant() {
        let r = Raster::filled(224, 224, 1, 0.25);
        let s = r.resize_area(16, 16);
        assert!(s.data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn area_resize_averages_blocks() {
        let r = Raster::from_fn(4, 4, 1, |x, y, _| (x / 2 + 2 * (y / 2)) as f32);
        let s = r.resize_area(2, 2);
        assert_eq!(s.data, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn bilinear_resize_identity() {
        let r = Raster::from_fn(7, 5, 2, |x, y, c| (x * 3 + y * 11 + c) as f32);
        assert_eq!(r.resize_bilinear(7, 5), r);
    }
}
