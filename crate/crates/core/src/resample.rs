//! Sparse linear resampling maps with an exact transpose.
//!
//! A [`Resampler`] stores, for every output pixel, the bilinear taps into the
//! source plane. Forward application is a sparse matrix-vector product and
//! the backward pass scatters through the same taps, so gradients of any
//! geometric warp built on it are exact.

use crate::tensor::Tensor3;

#[derive(Debug, Clone)]
pub struct Resampler {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    /// `(output index, input index, weight)`, grouped by output index.
    taps: Vec<(u32, u32, f64)>,
}

impl Resampler {
    /// Builds a bilinear map where `source(y, x)` returns the continuous
    /// source coordinate (in pixel-index units) sampled by output pixel `(y, x)`.
    /// Taps falling outside the source contribute zero.
    pub fn bilinear(
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
        source: impl Fn(usize, usize) -> (f64, f64),
    ) -> Self {
        let mut taps = Vec::with_capacity(out_h * out_w * 4);
        for y in 0..out_h {
            for x in 0..out_w {
                let (sy, sx) = source(y, x);
                if !(sy.is_finite() && sx.is_finite()) {
                    continue;
                }
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let out = (y * out_w + x) as u32;
                for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    if wy == 0.0 {
                        continue;
                    }
                    let yy = y0 + dy;
                    if yy < 0.0 || yy >= in_h as f64 {
                        continue;
                    }
                    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        if wx == 0.0 {
                            continue;
                        }
                        let xx = x0 + dx;
                        if xx < 0.0 || xx >= in_w as f64 {
                            continue;
                        }
                        let inp = (yy as usize * in_w + xx as usize) as u32;
                        taps.push((out, inp, wy * wx));
                    }
                }
            }
        }
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            taps,
        }
    }

    /// Axis-aligned resize using the pixel-centre convention.
    pub fn resize(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        let sy = in_h as f64 / out_h as f64;
        let sx = in_w as f64 / out_w as f64;
        Self::bilinear(in_h, in_w, out_h, out_w, |y, x| {
            (
                ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (in_h - 1) as f64),
                ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (in_w - 1) as f64),
            )
        })
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.in_h, self.in_w)
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    pub fn apply_plane(&self, input: &[f64], output: &mut [f64]) {
        debug_assert_eq!(input.len(), self.in_h * self.in_w);
        output.iter_mut().for_each(|v| *v = 0.0);
        for &(o, i, w) in &self.taps {
            output[o as usize] += w * input[i as usize];
        }
    }

    pub fn transpose_plane(&self, upstream: &[f64], grad_input: &mut [f64]) {
        debug_assert_eq!(upstream.len(), self.out_h * self.out_w);
        grad_input.iter_mut().for_each(|v| *v = 0.0);
        for &(o, i, w) in &self.taps {
            grad_input[i as usize] += w * upstream[o as usize];
        }
    }

    pub fn apply(&self, input: &Tensor3) -> Tensor3 {
        assert_eq!((input.height(), input.width()), (self.in_h, self.in_w));
        let mut out = Tensor3::zeros(input.channels(), self.out_h, self.out_w);
        for c in 0..input.channels() {
            let src = input.plane(c).to_vec();
            self.apply_plane(&src, out.plane_mut(c));
        }
        out
    }

    pub fn transpose(&self, upstream: &Tensor3) -> Tensor3 {
        assert_eq!((upstream.height(), upstream.width()), (self.out_h, self.out_w));
        let mut out = Tensor3::zeros(upstream.channels(), self.in_h, self.in_w);
        for c in 0..upstream.channels() {
            let up = upstream.plane(c).to_vec();
            self.transpose_plane(&up, out.plane_mut(c));
        }
        out
    }
}
