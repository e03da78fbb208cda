//! Resampling and colour mapping for scalogram images.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::viridis::VIRIDIS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResizeMethod {
    Bilinear,
    Nearest,
}

#[inline]
fn lerp<T: Float>(a: T, b: T, w: T) -> T {
    // Exact when a == b.
    a + (b - a) * w
}

/// Source coordinate for output index `i` with half-pixel centres.
#[inline]
fn source_coord(i: usize, in_len: usize, out_len: usize) -> f64 {
    let c = (i as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5;
    c.clamp(0.0, (in_len - 1) as f64)
}

/// Resizes an interleaved `h x w x channels` image.
pub fn resize<T: Float>(
    src: &[T],
    h: usize,
    w: usize,
    channels: usize,
    out_h: usize,
    out_w: usize,
    method: ResizeMethod,
) -> Vec<T> {
    assert_eq!(src.len(), h * w * channels, "resize: bad source length");
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(out_h * out_w * channels);
    match method {
        ResizeMethod::Nearest => {
            for y in 0..out_h {
                let sy = ((y as f64 + 0.5) * h as f64 / out_h as f64).floor() as usize;
                let sy = sy.min(h - 1);
                for x in 0..out_w {
                    let sx = ((x as f64 + 0.5) * w as f64 / out_w as f64).floor() as usize;
                    let sx = sx.min(w - 1);
                    let base = (sy * w + sx) * channels;
                    out.extend_from_slice(&src[base..base + channels]);
                }
            }
        }
        ResizeMethod::Bilinear => {
            let xs: Vec<(usize, usize, T)> = (0..out_w)
                .map(|x| {
                    let c = source_coord(x, w, out_w);
                    let x0 = c.floor() as usize;
                    (x0, (x0 + 1).min(w - 1), T::from(c - x0 as f64).unwrap())
                })
                .collect();
            for y in 0..out_h {
                let c = source_coord(y, h, out_h);
                let y0 = c.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let wy = T::from(c - y0 as f64).unwrap();
                for &(x0, x1, wx) in &xs {
                    for ch in 0..channels {
                        let p = |yy: usize, xx: usize| src[(yy * w + xx) * channels + ch];
                        let top = lerp(p(y0, x0), p(y0, x1), wx);
                        let bottom = lerp(p(y1, x0), p(y1, x1), wx);
                        out.push(lerp(top, bottom, wy));
                    }
                }
            }
        }
    }
    out
}

/// Maps `v` in `[0, 1]` through the shipped 256-entry viridis table with
/// linear interpolation between entries.
pub fn colormap(v: f64) -> [f32; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let pos = v * 255.0;
    let i = (pos.floor() as usize).min(254);
    let frac = (pos - i as f64) as f32;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    [
        lerp(a[0], b[0], frac).clamp(0.0, 1.0),
        lerp(a[1], b[1], frac).clamp(0.0, 1.0),
        lerp(a[2], b[2], frac).clamp(0.0, 1.0),
    ]
}
