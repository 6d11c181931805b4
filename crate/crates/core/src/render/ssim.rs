//! Windowed SSIM with analytic gradients.
//!
//! Statistics use an 11×11 Gaussian window (σ = 1.5), truncated and
//! renormalized at image borders, so images smaller than the window are
//! still well defined. The window is separable and the border normalization
//! factorizes per axis, which both the fast path and the adjoint exploit.

use crate::error::Result;
use crate::geometry::Vec3;
use crate::raster::{GrayImage, Raster, RgbImage};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Stabilizers for unit dynamic range: (0.01)² and (0.03)².
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

const RADIUS: i64 = (SSIM_WINDOW as i64 - 1) / 2;

fn kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Renormalized windowed mean along one axis (`horizontal` = along x).
fn pass(img: &GrayImage, horizontal: bool) -> GrayImage {
    let k = kernel();
    let (w, h) = (img.width(), img.height());
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut z = 0.0;
            for (i, &g) in k.iter().enumerate() {
                let o = i as i64 - RADIUS;
                let (sx, sy) = if horizontal {
                    (x as i64 + o, y as i64)
                } else {
                    (x as i64, y as i64 + o)
                };
                if img.in_bounds(sx, sy) {
                    acc += g * img.get(sx as usize, sy as usize);
                    z += g;
                }
            }
            out.set(x, y, acc / z);
        }
    }
    out
}

/// Adjoint of [`pass`]: divide by the per-position normalizer first, then
/// correlate with the (symmetric) kernel without normalization.
fn pass_adjoint(upstream: &GrayImage, horizontal: bool) -> GrayImage {
    let k = kernel();
    let (w, h) = (upstream.width(), upstream.height());
    // Per-position normalizer along the pass axis.
    let mut scaled = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut z = 0.0;
            for (i, &g) in k.iter().enumerate() {
                let o = i as i64 - RADIUS;
                let (sx, sy) = if horizontal {
                    (x as i64 + o, y as i64)
                } else {
                    (x as i64, y as i64 + o)
                };
                if upstream.in_bounds(sx, sy) {
                    z += g;
                }
            }
            scaled.set(x, y, upstream.get(x, y) / z);
        }
    }
    let mut out = GrayImage::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &g) in k.iter().enumerate() {
                let o = i as i64 - RADIUS;
                let (sx, sy) = if horizontal {
                    (x as i64 + o, y as i64)
                } else {
                    (x as i64, y as i64 + o)
                };
                if scaled.in_bounds(sx, sy) {
                    acc += g * scaled.get(sx as usize, sy as usize);
                }
            }
            out.set(x, y, acc);
        }
    }
    out
}

fn window_mean(img: &GrayImage) -> GrayImage {
    pass(&pass(img, true), false)
}

fn window_mean_adjoint(upstream: &GrayImage) -> GrayImage {
    pass_adjoint(&pass_adjoint(upstream, false), true)
}

fn channel(img: &RgbImage, c: usize) -> GrayImage {
    let mut out = GrayImage::zeros(img.width(), img.height());
    for (x, y, v) in img.iter_pixels() {
        out.set(x, y, v[c]);
    }
    out
}

struct ChannelStats {
    mu_x: GrayImage,
    mu_y: GrayImage,
    /// W(x²)
    m2: GrayImage,
    /// W(x·y)
    m3: GrayImage,
    /// W(y²)
    wy2: GrayImage,
}

/// Forward SSIM state: mean index over pixels and channels, plus the windowed
/// statistics the backward pass needs.
pub struct SsimForward {
    pub mean: f64,
    stats: Vec<ChannelStats>,
}

/// Mean SSIM between prediction and target (per channel, averaged).
pub fn ssim_forward(pred: &RgbImage, target: &RgbImage) -> Result<SsimForward> {
    pred.same_size(target)?;
    let (w, h) = (pred.width(), pred.height());
    let mut stats = Vec::with_capacity(3);
    let mut total = 0.0;
    for c in 0..3 {
        let x = channel(pred, c);
        let y = channel(target, c);
        let x2: GrayImage = {
            let mut t = x.clone();
            for v in t.data_mut() {
                *v *= *v;
            }
            t
        };
        let y2: GrayImage = {
            let mut t = y.clone();
            for v in t.data_mut() {
                *v *= *v;
            }
            t
        };
        let xy: GrayImage = {
            let mut t = x.clone();
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v *= y.data()[i];
            }
            t
        };
        let st = ChannelStats {
            mu_x: window_mean(&x),
            mu_y: window_mean(&y),
            m2: window_mean(&x2),
            m3: window_mean(&xy),
            wy2: window_mean(&y2),
        };
        for p in 0..w * h {
            total += ssim_at(&st, p).0;
        }
        stats.push(st);
    }
    Ok(SsimForward {
        mean: total / (3 * w * h) as f64,
        stats,
    })
}

/// Per-pixel SSIM and its partials w.r.t. (μx, W(x²), W(x·y)).
#[inline]
fn ssim_at(st: &ChannelStats, p: usize) -> (f64, f64, f64, f64) {
    let mu_x = st.mu_x.data()[p];
    let mu_y = st.mu_y.data()[p];
    let m2 = st.m2.data()[p];
    let m3 = st.m3.data()[p];
    let wy2 = st.wy2.data()[p];
    let a1 = 2.0 * mu_x * mu_y + SSIM_C1;
    let a2 = 2.0 * (m3 - mu_x * mu_y) + SSIM_C2;
    let b1 = mu_x * mu_x + mu_y * mu_y + SSIM_C1;
    let b2 = (m2 - mu_x * mu_x) + (wy2 - mu_y * mu_y) + SSIM_C2;
    let s = a1 * a2 / (b1 * b2);
    // ∂S/∂μx with σx², σxy expressed through the independent inputs m2, m3.
    let d_mu = (2.0 * mu_y * a2 - 2.0 * mu_y * a1) / (b1 * b2)
        - s * (2.0 * mu_x / b1 - 2.0 * mu_x / b2);
    let d_m2 = -s / b2;
    let d_m3 = 2.0 * a1 / (b1 * b2);
    (s, d_mu, d_m2, d_m3)
}

/// Gradient of `d_mean · mean_ssim` w.r.t. the prediction image.
pub fn ssim_backward(
    fwd: &SsimForward,
    pred: &RgbImage,
    target: &RgbImage,
    d_mean: f64,
) -> Raster<Vec3> {
    let (w, h) = (pred.width(), pred.height());
    let scale = d_mean / (3 * w * h) as f64;
    let mut out = Raster::filled(w, h, Vec3::zeros());
    for (c, st) in fwd.stats.iter().enumerate() {
        let mut u_mu = GrayImage::zeros(w, h);
        let mut u_m2 = GrayImage::zeros(w, h);
        let mut u_m3 = GrayImage::zeros(w, h);
        for p in 0..w * h {
            let (_, d_mu, d_m2, d_m3) = ssim_at(st, p);
            u_mu.data_mut()[p] = scale * d_mu;
            u_m2.data_mut()[p] = scale * d_m2;
            u_m3.data_mut()[p] = scale * d_m3;
        }
        let a_mu = window_mean_adjoint(&u_mu);
        let a_m2 = window_mean_adjoint(&u_m2);
        let a_m3 = window_mean_adjoint(&u_m3);
        for y in 0..h {
            for x in 0..w {
                let g = a_mu.get(x, y)
                    + a_m2.get(x, y) * 2.0 * pred.get(x, y)[c]
                    + a_m3.get(x, y) * target.get(x, y)[c];
                let mut v = out.get(x, y);
                v[c] += g;
                out.set(x, y, v);
            }
        }
    }
    out
}
