//! Differentiable rectangular patch regions.
//!
//! A region is four real border coordinates: `l, r` bound columns and `t, b`
//! bound rows, with `0 <= l <= r <= w` and `0 <= t <= b <= h`. The hard mask
//! uses the half-open convention `t <= i < b`, `l <= j < r` that falls out of
//! `sign(0) = 1`. The soft mask replaces `sign` by `tanh(k * .)` so every mask
//! value is a smooth function of the borders.

use serde::{Deserialize, Serialize};

use crate::asset_io::BinaryMask;
use crate::tensor::Grid;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MaskError {
    #[error("region spans {rows}x{cols} pixels; at least 1x1 is needed to place a shape")]
    RegionTooSmall { rows: usize, cols: usize },
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("object mask is empty")]
    EmptyObjectMask,
    #[error("no masks supplied")]
    NoMasks,
}

/// Border parameters of one rectangular region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub l: f64,
    pub r: f64,
    pub t: f64,
    pub b: f64,
}

/// Index of each border inside gradient arrays; also the tie-break order.
pub const EDGE_ORDER: [&str; 4] = ["l", "r", "t", "b"];

impl RegionParams {
    pub fn new(l: f64, r: f64, t: f64, b: f64) -> Self {
        Self { l, r, t, b }
    }

    /// The whole `w x h` frame.
    pub fn full(w: usize, h: usize) -> Self {
        Self::new(0.0, w as f64, 0.0, h as f64)
    }

    /// Splits the frame into a `rows x cols` grid of equal regions.
    pub fn grid(rows: usize, cols: usize, w: usize, h: usize) -> Vec<Self> {
        let (cw, rh) = (w as f64 / cols as f64, h as f64 / rows as f64);
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                out.push(Self::new(
                    j as f64 * cw,
                    (j + 1) as f64 * cw,
                    i as f64 * rh,
                    (i + 1) as f64 * rh,
                ));
            }
        }
        out
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.l, self.r, self.t, self.b]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn width(&self) -> f64 {
        self.r - self.l
    }

    pub fn height(&self) -> f64 {
        self.b - self.t
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self, w: usize, h: usize) -> bool {
        0.0 <= self.l
            && self.l <= self.r
            && self.r <= w as f64
            && 0.0 <= self.t
            && self.t <= self.b
            && self.b <= h as f64
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Binary region mask from the `sign` formula; reference for [`soft_mask`].
pub fn hard_mask(theta: &RegionParams, w: usize, h: usize) -> Grid {
    Grid::from_fn(h, w, |i, j| {
        let (i, j) = (i as f64, j as f64);
        let row = -sign(i - theta.t) * sign(i - theta.b) + 1.0;
        let col = -sign(j - theta.l) * sign(j - theta.r) + 1.0;
        0.25 * row * col
    })
}

/// Soft region mask with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub values: Grid,
    pub params: RegionParams,
    pub steepness: f64,
}

struct Factors {
    /// `A(i) = 1 - tanh(k(i-t)) tanh(k(i-b))` per row.
    rows: Vec<f64>,
    /// `B(j) = 1 - tanh(k(j-l)) tanh(k(j-r))` per column.
    cols: Vec<f64>,
}

fn factors(theta: &RegionParams, w: usize, h: usize, k: f64) -> Factors {
    let rows = (0..h)
        .map(|i| {
            let i = i as f64;
            1.0 - (k * (i - theta.t)).tanh() * (k * (i - theta.b)).tanh()
        })
        .collect();
    let cols = (0..w)
        .map(|j| {
            let j = j as f64;
            1.0 - (k * (j - theta.l)).tanh() * (k * (j - theta.r)).tanh()
        })
        .collect();
    Factors { rows, cols }
}

pub fn soft_mask(theta: &RegionParams, w: usize, h: usize, k: f64) -> SoftMask {
    assert!(k > 0.0, "steepness must be positive");
    let f = factors(theta, w, h, k);
    SoftMask {
        values: Grid::from_fn(h, w, |i, j| 0.25 * f.rows[i] * f.cols[j]),
        params: *theta,
        steepness: k,
    }
}

/// Vector-Jacobian product of [`soft_mask`]: returns `[dL/dl, dL/dr, dL/dt, dL/db]`
/// given `dL/dmask`.
pub fn soft_mask_vjp(theta: &RegionParams, k: f64, upstream: &Grid) -> [f64; 4] {
    let (h, w) = upstream.dims();
    let f = factors(theta, w, h, k);
    let sech2 = |x: f64| {
        let c = x.cosh();
        1.0 / (c * c)
    };
    // Contract the separable product once per axis.
    let mut row_weight = vec![0.0; h];
    let mut col_weight = vec![0.0; w];
    for i in 0..h {
        for j in 0..w {
            let u = upstream.get(i, j);
            row_weight[i] += u * f.cols[j];
            col_weight[j] += u * f.rows[i];
        }
    }
    let mut g = [0.0; 4];
    for (j, cw) in col_weight.iter().enumerate() {
        let j = j as f64;
        let (tl, tr) = ((k * (j - theta.l)).tanh(), (k * (j - theta.r)).tanh());
        g[0] += 0.25 * cw * k * sech2(k * (j - theta.l)) * tr;
        g[1] += 0.25 * cw * k * tl * sech2(k * (j - theta.r));
    }
    for (i, rw) in row_weight.iter().enumerate() {
        let i = i as f64;
        let (tt, tb) = ((k * (i - theta.t)).tanh(), (k * (i - theta.b)).tanh());
        g[2] += 0.25 * rw * k * sech2(k * (i - theta.t)) * tb;
        g[3] += 0.25 * rw * k * tt * sech2(k * (i - theta.b));
    }
    g
}

/// Linear border penalty summed over regions: `sum (r-l+b-t) / (w+h)`.
pub fn mask_loss(thetas: &[RegionParams], w: usize, h: usize) -> f64 {
    let denom = (w + h) as f64;
    thetas
        .iter()
        .map(|t| (t.r - t.l + t.b - t.t) / denom)
        .sum()
}

/// Gradient of [`mask_loss`] for one region; identical magnitude on every edge.
pub fn mask_loss_grad(w: usize, h: usize) -> [f64; 4] {
    let g = 1.0 / (w + h) as f64;
    [-g, g, -g, g]
}

/// Pixel extent `[row0, row1) x [col0, col1)` covered by the hard region.
pub fn region_pixels(theta: &RegionParams, w: usize, h: usize) -> (usize, usize, usize, usize) {
    let clampi = |v: f64, hi: usize| (v.ceil().max(0.0) as usize).min(hi);
    (
        clampi(theta.t, h),
        clampi(theta.b, h),
        clampi(theta.l, w),
        clampi(theta.r, w),
    )
}

/// Factor applied to the region mask by the predefined shape. Inside the
/// region the shape is stretched over the rasterized rectangle with
/// nearest-neighbour sampling; outside the region the factor is 1.
pub fn shape_multiplier(
    theta: &RegionParams,
    shape: &BinaryMask,
    w: usize,
    h: usize,
) -> Result<Grid, MaskError> {
    let (r0, r1, c0, c1) = region_pixels(theta, w, h);
    let (rows, cols) = (r1.saturating_sub(r0), c1.saturating_sub(c0));
    if rows < 1 || cols < 1 {
        return Err(MaskError::RegionTooSmall { rows, cols });
    }
    let (sh, sw) = (shape.height(), shape.width());
    let mut out = Grid::filled(h, w, 1.0);
    for i in r0..r1 {
        let sy = ((i - r0) * sh / rows).min(sh - 1);
        for j in c0..c1 {
            let sx = ((j - c0) * sw / cols).min(sw - 1);
            out.set(i, j, if shape.get(sy, sx) { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

/// Multiplies the region mask by the scaled shape inside the region.
pub fn compose_shape(soft: &SoftMask, shape: &BinaryMask) -> Result<SoftMask, MaskError> {
    let (h, w) = soft.values.dims();
    let mult = shape_multiplier(&soft.params, shape, w, h)?;
    let values = Grid::from_vec(
        h,
        w,
        soft.values
            .as_slice()
            .iter()
            .zip(mult.as_slice())
            .map(|(a, b)| a * b)
            .collect(),
    );
    Ok(SoftMask {
        values,
        params: soft.params,
        steepness: soft.steepness,
    })
}

/// `clamp(sum_i m_i, 0, 1)`.
pub fn union_masks(masks: &[Grid]) -> Result<Grid, MaskError> {
    let first = masks.first().ok_or(MaskError::NoMasks)?;
    let dims = first.dims();
    let mut acc = Grid::zeros(dims.0, dims.1);
    for m in masks {
        if m.dims() != dims {
            return Err(MaskError::DimensionMismatch(dims, m.dims()));
        }
        for (a, v) in acc.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *a += v;
        }
    }
    Ok(acc.map(|v| v.clamp(0.0, 1.0)))
}

/// Gradient mask of the union's clamp: 1 where the sum is inside `[0, 1]`.
pub fn union_pass_through(masks: &[Grid]) -> Grid {
    let (h, w) = masks[0].dims();
    let mut sum = Grid::zeros(h, w);
    for m in masks {
        for (a, v) in sum.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *a += v;
        }
    }
    sum.map(|s| if (0.0..=1.0).contains(&s) { 1.0 } else { 0.0 })
}

/// Rectangle area over object pixel count, summed across regions.
pub fn region_ratio(thetas: &[RegionParams], object_mask: &BinaryMask) -> Result<f64, MaskError> {
    let n = object_mask.count();
    if n == 0 {
        return Err(MaskError::EmptyObjectMask);
    }
    Ok(thetas.iter().map(RegionParams::area).sum::<f64>() / n as f64)
}

/// Clamps into the frame and restores ordering by collapsing crossed borders
/// onto their midpoint.
pub fn project_params(raw: &RegionParams, w: usize, h: usize) -> RegionParams {
    let (wf, hf) = (w as f64, h as f64);
    let mut p = RegionParams::new(
        raw.l.clamp(0.0, wf),
        raw.r.clamp(0.0, wf),
        raw.t.clamp(0.0, hf),
        raw.b.clamp(0.0, hf),
    );
    if p.l > p.r {
        let m = 0.5 * (p.l + p.r);
        p.l = m;
        p.r = m;
    }
    if p.t > p.b {
        let m = 0.5 * (p.t + p.b);
        p.t = m;
        p.b = m;
    }
    p
}

/// Forward pass of the full patch mask for a set of regions and an optional
/// shape, keeping what the backward pass needs.
///
/// A region with zero width or zero height is treated as absent: it adds
/// nothing to the union and receives no gradient, even though its raw soft
/// mask still has a small skirt around the collapsed point.
#[derive(Debug, Clone)]
pub struct PatchMask {
    pub values: Grid,
    regions: Vec<RegionParams>,
    steepness: f64,
    multipliers: Vec<Option<Grid>>,
    active: Vec<bool>,
    pass_through: Grid,
}

impl PatchMask {
    pub fn build(
        regions: &[RegionParams],
        w: usize,
        h: usize,
        steepness: f64,
        shape: Option<&BinaryMask>,
    ) -> Result<Self, MaskError> {
        if regions.is_empty() {
            return Err(MaskError::NoMasks);
        }
        let mut subs = Vec::with_capacity(regions.len());
        let mut multipliers = Vec::with_capacity(regions.len());
        let mut active = Vec::with_capacity(regions.len());
        for theta in regions {
            let live = theta.width() > 0.0 && theta.height() > 0.0;
            active.push(live);
            if !live {
                subs.push(Grid::zeros(h, w));
                multipliers.push(None);
                continue;
            }
            let soft = soft_mask(theta, w, h, steepness);
            match shape {
                Some(s) => match shape_multiplier(theta, s, w, h) {
                    Ok(m) => {
                        let composed = Grid::from_vec(
                            h,
                            w,
                            soft.values
                                .as_slice()
                                .iter()
                                .zip(m.as_slice())
                                .map(|(a, b)| a * b)
                                .collect(),
                        );
                        subs.push(composed);
                        multipliers.push(Some(m));
                    }
                    // A sub-pixel region cannot host the shape; it then only
                    // contributes its soft skirt.
                    Err(MaskError::RegionTooSmall { .. }) => {
                        subs.push(soft.values);
                        multipliers.push(None);
                    }
                    Err(e) => return Err(e),
                },
                None => {
                    subs.push(soft.values);
                    multipliers.push(None);
                }
            }
        }
        let pass_through = union_pass_through(&subs);
        let values = union_masks(&subs)?;
        Ok(Self {
            values,
            regions: regions.to_vec(),
            steepness,
            multipliers,
            active,
            pass_through,
        })
    }

    /// Per-region `[l, r, t, b]` gradients given `dL/dmask`.
    pub fn backward(&self, upstream: &Grid) -> Vec<[f64; 4]> {
        let base: Vec<f64> = upstream
            .as_slice()
            .iter()
            .zip(self.pass_through.as_slice())
            .map(|(u, p)| u * p)
            .collect();
        let (h, w) = upstream.dims();
        self.regions
            .iter()
            .zip(&self.multipliers)
            .zip(&self.active)
            .map(|((theta, mult), live)| {
                if !live {
                    return [0.0; 4];
                }
                let g = match mult {
                    Some(m) => Grid::from_vec(
                        h,
                        w,
                        base.iter().zip(m.as_slice()).map(|(a, b)| a * b).collect(),
                    ),
                    None => Grid::from_vec(h, w, base.clone()),
                };
                soft_mask_vjp(theta, self.steepness, &g)
            })
            .collect()
    }
}
