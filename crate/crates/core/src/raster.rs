//! Dense row-major image containers.
//!
//! A `Raster<T>` stores `height` rows of `width` pixels, row-major, with
//! pixel (0,0) the top-left corner. Depth rasters use `f64::NAN` for invalid
//! pixels; color/normal rasters use `Vec3` per pixel.

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Raster {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::CountMismatch {
                what: "raster pixels",
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.idx(x, y);
        self.data[i] = value;
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Iterate `(x, y, value)` in row-major order.
    pub fn iter_pixels(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &v)| (i % w, i / w, v))
    }

    pub fn same_size<U: Copy>(&self, other: &Raster<U>) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::RasterSizeMismatch {
                a_w: self.width,
                a_h: self.height,
                b_w: other.width,
                b_h: other.height,
            });
        }
        Ok(())
    }
}

pub type DepthMap = Raster<f64>;
pub type GrayImage = Raster<f64>;
pub type RgbImage = Raster<Vec3>;

impl Raster<f64> {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Valid depth: finite and strictly positive.
    #[inline]
    pub fn depth_valid(&self, x: usize, y: usize) -> bool {
        let d = self.get(x, y);
        d.is_finite() && d > 0.0
    }

    /// Bilinear sample at continuous pixel coordinates (u,v), where integer
    /// pixel (ix,iy) has its center at (ix+0.5, iy+0.5). Returns `None` when
    /// the 2x2 support is not fully inside the image.
    pub fn bilinear(&self, u: f64, v: f64) -> Option<f64> {
        let (w, x0, y0, fx, fy) = self.bilinear_support(u, v)?;
        let _ = w;
        let v00 = self.get(x0, y0);
        let v10 = self.get(x0 + 1, y0);
        let v01 = self.get(x0, y0 + 1);
        let v11 = self.get(x0 + 1, y0 + 1);
        Some(
            v00 * (1.0 - fx) * (1.0 - fy)
                + v10 * fx * (1.0 - fy)
                + v01 * (1.0 - fx) * fy
                + v11 * fx * fy,
        )
    }

    /// Spatial derivative of [`Self::bilinear`] with respect to (u,v).
    pub fn bilinear_grad(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let (_, x0, y0, fx, fy) = self.bilinear_support(u, v)?;
        let v00 = self.get(x0, y0);
        let v10 = self.get(x0 + 1, y0);
        let v01 = self.get(x0, y0 + 1);
        let v11 = self.get(x0 + 1, y0 + 1);
        let du = (v10 - v00) * (1.0 - fy) + (v11 - v01) * fy;
        let dv = (v01 - v00) * (1.0 - fx) + (v11 - v10) * fx;
        Some((du, dv))
    }

    /// Support cell and fractions for bilinear sampling; `None` off-image.
    fn bilinear_support(&self, u: f64, v: f64) -> Option<((), usize, usize, f64, f64)> {
        // Shift to sample-space where pixel centers sit at integers.
        let su = u - 0.5;
        let sv = v - 0.5;
        if !(su >= 0.0 && sv >= 0.0) {
            return None;
        }
        let x0 = su.floor() as usize;
        let y0 = sv.floor() as usize;
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            return None;
        }
        Some(((), x0, y0, su - x0 as f64, sv - y0 as f64))
    }
}

impl Raster<Vec3> {
    pub fn black(width: usize, height: usize) -> Self {
        Self::filled(width, height, Vec3::zeros())
    }

    /// Channel-mean grayscale copy.
    pub fn to_gray(&self) -> GrayImage {
        let data = self.data.iter().map(|c| (c.x + c.y + c.z) / 3.0).collect();
        Raster {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn index_roundtrip_row_major() {
        let mut r = Raster::zeros(4, 3);
        r.set(2, 1, 7.0);
        assert_eq!(r.data()[1 * 4 + 2], 7.0);
        assert_eq!(r.get(2, 1), 7.0);
    }

    #[test]
    fn bilinear_at_pixel_centers_is_exact() {
        let mut r = Raster::zeros(3, 3);
        for y in 0..3 {
            for x in 0..3 {
                r.set(x, y, (x + 10 * y) as f64);
            }
        }
        for y in 0..3usize {
            for x in 0..3usize {
                // Interior of the support only: corner centers lack a full cell.
                if x + 1 < 3 && y + 1 < 3 {
                    let got = r.bilinear(x as f64 + 0.5, y as f64 + 0.5).unwrap();
                    assert_relative_eq!(got, (x + 10 * y) as f64, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn bilinear_grad_matches_finite_difference() {
        let mut r = Raster::zeros(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                r.set(x, y, (x as f64 * 0.7 + y as f64 * 1.3 + (x * y) as f64 * 0.11).sin());
            }
        }
        let (u, v) = (1.7, 2.2);
        let (du, dv) = r.bilinear_grad(u, v).unwrap();
        let h = 1e-6;
        let fdu = (r.bilinear(u + h, v).unwrap() - r.bilinear(u - h, v).unwrap()) / (2.0 * h);
        let fdv = (r.bilinear(u, v + h).unwrap() - r.bilinear(u, v - h).unwrap()) / (2.0 * h);
        assert_relative_eq!(du, fdu, epsilon = 1e-6);
        assert_relative_eq!(dv, fdv, epsilon = 1e-6);
    }

    #[test]
    fn off_image_sample_is_none() {
        let r = Raster::zeros(4, 4);
        assert!(r.bilinear(0.2, 2.0).is_none());
        assert!(r.bilinear(3.8, 2.0).is_none());
        assert!(r.bilinear(2.0, -0.1).is_none());
    }
}
