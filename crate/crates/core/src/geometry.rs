//! Physically consistent placement of a transformed object into a scene.
//!
//! The camera looks straight ahead without tilt. An object whose image is `s`
//! pixels tall touches the ground `d = f / tan(alpha) - (h_cam / H) * s` rows
//! above the bottom image row, so shrinking the object moves it up towards the
//! vanishing point. Vertical placement is always derived from the object's
//! size; only the horizontal position is sampled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::asset_io::{BinaryMask, ImageRGB};
use crate::resample::Resampler;
use crate::tensor::Tensor3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GeometryError {
    #[error("object of {obj_h}x{obj_w} px does not fit a {scene_h}x{scene_w} scene")]
    TooLarge {
        obj_h: usize,
        obj_w: usize,
        scene_h: usize,
        scene_w: usize,
    },
    #[error("placement rows {top}..={bottom} fall outside a scene of height {scene_h}")]
    OutOfFrame {
        top: i64,
        bottom: i64,
        scene_h: usize,
    },
    #[error("column {col} with width {obj_w} leaves a scene of width {scene_w}")]
    ColumnOutOfFrame {
        col: usize,
        obj_w: usize,
        scene_w: usize,
    },
    #[error("no horizontal position keeps a {obj_w} px object inside {scene_w} px")]
    NoFeasibleColumn { obj_w: usize, scene_w: usize },
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("object mask is empty")]
    EmptyMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub f: f64,
    pub tan_alpha: f64,
    /// Camera height relative to the target, meters.
    pub h_cam: f64,
}

impl CameraModel {
    pub fn new(f: f64, tan_alpha: f64, h_cam: f64) -> Result<Self, GeometryError> {
        let cam = Self { f, tan_alpha, h_cam };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.f > 0.0 && self.tan_alpha > 0.0 && self.h_cam > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "f, tan_alpha and h_cam must be > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Height above the bottom row of the vanishing point.
    pub fn horizon(&self) -> f64 {
        self.f / self.tan_alpha
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalObject {
    pub image: ImageRGB,
    pub mask: BinaryMask,
    /// Physical height in meters.
    pub height_m: f64,
}

impl PhysicalObject {
    pub fn new(image: ImageRGB, mask: BinaryMask, height_m: f64) -> Result<Self, GeometryError> {
        if (image.height(), image.width()) != (mask.height(), mask.width()) {
            return Err(GeometryError::InvalidTransform(format!(
                "image {}x{} and mask {}x{} differ",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        if mask.is_empty() {
            return Err(GeometryError::EmptyMask);
        }
        if !(height_m > 0.0) {
            return Err(GeometryError::InvalidTransform(format!(
                "object height must be > 0, got {height_m}"
            )));
        }
        Ok(Self {
            image,
            mask,
            height_m,
        })
    }

    /// Pixel height of the visible object (mask bounding box).
    pub fn pixel_height(&self) -> usize {
        self.mask
            .bounding_box()
            .map(|(t, b, _, _)| b - t + 1)
            .unwrap_or(0)
    }
}

/// One EoT draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub scale: f64,
    pub rotation_deg: f64,
    pub brightness_delta: f64,
    pub saturation_factor: f64,
    /// Left column of the transformed object canvas in the scene.
    pub horizontal_col: usize,
}

impl TransformSpec {
    pub fn identity(col: usize) -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            brightness_delta: 0.0,
            saturation_factor: 1.0,
            horizontal_col: col,
        }
    }

    /// Canvas size after scaling an `h x w` object.
    pub fn scaled_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            ((h as f64 * self.scale).round() as usize).max(1),
            ((w as f64 * self.scale).round() as usize).max(1),
        )
    }
}

/// Uniform sampling ranges for each transform field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EotRanges {
    pub scale: [f64; 2],
    pub rotation_deg: [f64; 2],
    pub brightness: [f64; 2],
    pub saturation: [f64; 2],
}

impl EotRanges {
    /// Scale band that places an object of `pixel_height` px and physical
    /// height `height_m` between `distance_m[0]` and `distance_m[1]` meters.
    pub fn scale_for_distances(
        cam: &CameraModel,
        height_m: f64,
        pixel_height: usize,
        distance_m: [f64; 2],
    ) -> [f64; 2] {
        let s = |z: f64| cam.f * height_m / (z * pixel_height as f64);
        [s(distance_m[1]), s(distance_m[0])]
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, r) in [
            ("scale", self.scale),
            ("rotation", self.rotation_deg),
            ("brightness", self.brightness),
            ("saturation", self.saturation),
        ] {
            if !(r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()) {
                return Err(GeometryError::InvalidTransform(format!(
                    "{name} range {r:?} is not an ordered finite interval"
                )));
            }
        }
        if self.scale[0] <= 0.0 {
            return Err(GeometryError::InvalidTransform("scale must be > 0".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Draws one transform. Fields are independent uniforms; the column is
/// uniform over positions that keep the scaled object inside the scene.
pub fn sample_transform<R: Rng + ?Sized>(
    rng: &mut R,
    ranges: &EotRanges,
    object_dims: (usize, usize),
    scene_dims: (usize, usize),
) -> Result<TransformSpec, GeometryError> {
    ranges.validate()?;
    let scale = uniform(rng, ranges.scale);
    let rotation_deg = uniform(rng, ranges.rotation_deg);
    let brightness_delta = uniform(rng, ranges.brightness);
    let saturation_factor = uniform(rng, ranges.saturation);
    let mut spec = TransformSpec {
        scale,
        rotation_deg,
        brightness_delta,
        saturation_factor,
        horizontal_col: 0,
    };
    let (oh, ow) = spec.scaled_dims(object_dims.0, object_dims.1);
    let (sh, sw) = scene_dims;
    if ow > sw {
        return Err(GeometryError::NoFeasibleColumn {
            obj_w: ow,
            scene_w: sw,
        });
    }
    if oh > sh {
        return Err(GeometryError::TooLarge {
            obj_h: oh,
            obj_w: ow,
            scene_h: sh,
            scene_w: sw,
        });
    }
    spec.horizontal_col = rng.random_range(0..=sw - ow);
    Ok(spec)
}

/// Rounded ground-contact height `d` (rows above the bottom image row) of an
/// object that is `s` pixels tall.
pub fn vertical_position(s: f64, cam: &CameraModel, height_m: f64) -> i64 {
    (-(cam.h_cam / height_m) * s + cam.horizon()).round() as i64
}

/// Top and bottom scene rows occupied by an `s`-pixel object grounded at `d`.
pub fn placement_rows(d: i64, s: usize, scene_h: usize) -> Result<(usize, usize), GeometryError> {
    let bottom = scene_h as i64 - 1 - d;
    let top = bottom - s as i64 + 1;
    if d < 0 || top < 0 || bottom >= scene_h as i64 {
        return Err(GeometryError::OutOfFrame {
            top,
            bottom,
            scene_h,
        });
    }
    Ok((top as usize, bottom as usize))
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Everything needed to backpropagate through [`apply_transform`].
#[derive(Debug, Clone)]
pub struct TransformTape {
    resampler: Resampler,
    mask: BinaryMask,
    saturation: f64,
    /// 1 where the photometric output was not clamped.
    active: Tensor3,
}

impl TransformTape {
    /// Gradient w.r.t. the input image given the gradient w.r.t. the output.
    pub fn backward(&self, upstream: &Tensor3) -> Tensor3 {
        let (_, h, w) = upstream.shape();
        let mut g = upstream.clone();
        for (gv, a) in g.as_mut_slice().iter_mut().zip(self.active.as_slice()) {
            *gv *= a;
        }
        if self.saturation != 1.0 {
            let s = self.saturation;
            for y in 0..h {
                for x in 0..w {
                    if !self.mask.get(y, x) {
                        continue;
                    }
                    let gs = [g.get(0, y, x), g.get(1, y, x), g.get(2, y, x)];
                    let total: f64 = gs.iter().sum();
                    for c in 0..3 {
                        g.set(c, y, x, s * gs[c] + (1.0 - s) * LUMA[c] * total);
                    }
                }
            }
        }
        self.resampler.transpose(&g)
    }
}

/// Scales and rotates image and mask together (bilinear / nearest), then
/// applies brightness and saturation inside the transformed mask.
pub fn apply_transform(
    obj: &PhysicalObject,
    spec: &TransformSpec,
    bounds: (usize, usize),
) -> Result<(PhysicalObject, TransformTape), GeometryError> {
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(GeometryError::InvalidTransform(format!(
            "scale must be > 0, got {}",
            spec.scale
        )));
    }
    let (h, w) = (obj.image.height(), obj.image.width());
    let (oh, ow) = spec.scaled_dims(h, w);
    if oh > bounds.0 || ow > bounds.1 {
        return Err(GeometryError::TooLarge {
            obj_h: oh,
            obj_w: ow,
            scene_h: bounds.0,
            scene_w: bounds.1,
        });
    }
    let (sy, sx) = (oh as f64 / h as f64, ow as f64 / w as f64);
    let theta = spec.rotation_deg.to_radians();
    let (sin, cos) = if spec.rotation_deg == 0.0 {
        (0.0, 1.0)
    } else {
        theta.sin_cos()
    };
    let (ocy, ocx) = (oh as f64 / 2.0, ow as f64 / 2.0);
    let (icy, icx) = (h as f64 / 2.0, w as f64 / 2.0);
    let source = |y: usize, x: usize| {
        let (dy, dx) = (y as f64 + 0.5 - ocy, x as f64 + 0.5 - ocx);
        // inverse rotation about the canvas centre
        let ry = cos * dy + sin * dx;
        let rx = -sin * dy + cos * dx;
        (icy + ry / sy - 0.5, icx + rx / sx - 0.5)
    };
    let resampler = Resampler::bilinear(h, w, oh, ow, source);
    let mask = BinaryMask::from_fn(oh, ow, |y, x| {
        let (py, px) = source(y, x);
        let (ry, rx) = (py.round(), px.round());
        ry >= 0.0
            && rx >= 0.0
            && (ry as usize) < h
            && (rx as usize) < w
            && obj.mask.get(ry as usize, rx as usize)
    });

    let mut out = resampler.apply(obj.image.tensor());
    let mut active = Tensor3::filled(3, oh, ow, 1.0);
    let (b, s) = (spec.brightness_delta, spec.saturation_factor);
    for y in 0..oh {
        for x in 0..ow {
            if !mask.get(y, x) {
                continue;
            }
            let v = [out.get(0, y, x), out.get(1, y, x), out.get(2, y, x)];
            let gray: f64 = (0..3).map(|c| LUMA[c] * v[c]).sum();
            for c in 0..3 {
                let raw = if s == 1.0 {
                    v[c] + b
                } else {
                    gray + s * (v[c] - gray) + b
                };
                let clamped = raw.clamp(0.0, 1.0);
                if clamped != raw {
                    active.set(c, y, x, 0.0);
                }
                out.set(c, y, x, clamped);
            }
        }
    }
    let image = ImageRGB::clamped(out);
    let transformed = PhysicalObject {
        image,
        mask: mask.clone(),
        height_m: obj.height_m,
    };
    Ok((
        transformed,
        TransformTape {
            resampler,
            mask,
            saturation: s,
            active,
        },
    ))
}

/// Result of pasting an object into a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub scene_adv: ImageRGB,
    pub scene_mask: BinaryMask,
    /// Ground-contact height `d` (rows above the bottom row) and left column.
    pub placement: (i64, usize),
    /// Scene row of the object canvas's first row.
    pub origin_row: i64,
}

impl Composite {
    /// Gradient w.r.t. the pasted object's canvas given the gradient w.r.t.
    /// the composite. Zero outside the object mask.
    pub fn backward(&self, obj: &PhysicalObject, upstream: &Tensor3) -> Tensor3 {
        let (oh, ow) = (obj.mask.height(), obj.mask.width());
        let col = self.placement.1;
        let mut g = Tensor3::zeros(3, oh, ow);
        for y in 0..oh {
            let sy = self.origin_row + y as i64;
            if sy < 0 || sy >= upstream.height() as i64 {
                continue;
            }
            for x in 0..ow {
                if !obj.mask.get(y, x) {
                    continue;
                }
                for c in 0..3 {
                    g.set(c, y, x, upstream.get(c, sy as usize, col + x));
                }
            }
        }
        g
    }
}

/// Hard alpha compositing at the row given by [`vertical_position`]: object
/// pixels replace scene pixels wherever the object mask is set.
pub fn paste(
    scene: &ImageRGB,
    obj: &PhysicalObject,
    cam: &CameraModel,
    col: usize,
) -> Result<Composite, GeometryError> {
    let (sh, sw) = (scene.height(), scene.width());
    let (oh, ow) = (obj.mask.height(), obj.mask.width());
    if col + ow > sw {
        return Err(GeometryError::ColumnOutOfFrame {
            col,
            obj_w: ow,
            scene_w: sw,
        });
    }
    let Some((mt, mb, _, _)) = obj.mask.bounding_box() else {
        return Ok(Composite {
            scene_adv: scene.clone(),
            scene_mask: BinaryMask::empty(sh, sw),
            placement: (0, col),
            origin_row: 0,
        });
    };
    let s = mb - mt + 1;
    let d = vertical_position(s as f64, cam, obj.height_m);
    let (top, _) = placement_rows(d, s, sh)?;
    // Canvas rows outside the frame lie outside the mask bounding box.
    let origin_row = top as i64 - mt as i64;

    let mut out = scene.tensor().clone();
    let mut scene_mask = BinaryMask::empty(sh, sw);
    for y in 0..oh {
        let sy = origin_row + y as i64;
        if sy < 0 || sy >= sh as i64 {
            continue;
        }
        let sy = sy as usize;
        for x in 0..ow {
            if obj.mask.get(y, x) {
                for c in 0..3 {
                    out.set(c, sy, col + x, obj.image.get(c, y, x));
                }
                scene_mask.set(sy, col + x, true);
            }
        }
    }
    Ok(Composite {
        scene_adv: ImageRGB::clamped(out),
        scene_mask,
        placement: (d, col),
        origin_row,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam(horizon: f64, h_cam: f64) -> CameraModel {
        CameraModel::new(horizon, 1.0, h_cam).unwrap()
    }

    #[test]
    fn vertical_position_examples() {
        let c = cam(100.0, 1.5);
        assert_eq!(vertical_position(0.0, &c, 1.5), 100);
        assert_eq!(vertical_position(50.0, &c, 1.5), 50);
        assert_eq!(
            vertical_position(20.0, &c, 1.5) - vertical_position(40.0, &c, 1.5),
            20
        );
    }

    #[test]
    fn placement_rows_bounds() {
        assert_eq!(placement_rows(0, 4, 10).unwrap(), (6, 9));
        assert_eq!(placement_rows(6, 4, 10).unwrap(), (0, 3));
        assert!(placement_rows(7, 4, 10).is_err());
        assert!(placement_rows(-1, 4, 10).is_err());
    }

    fn ranges(scale: [f64; 2]) -> EotRanges {
        EotRanges {
            scale,
            rotation_deg: [-5.0, 5.0],
            brightness: [-0.1, 0.1],
            saturation: [0.9, 1.1],
        }
    }

    #[test]
    fn collapsed_ranges_are_deterministic() {
        let r = EotRanges {
            scale: [0.8, 0.8],
            rotation_deg: [2.0, 2.0],
            brightness: [0.05, 0.05],
            saturation: [1.1, 1.1],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_transform(&mut rng, &r, (10, 10), (40, 8)).unwrap();
        assert_eq!(
            (s.scale, s.rotation_deg, s.brightness_delta, s.saturation_factor, s.horizontal_col),
            (0.8, 2.0, 0.05, 1.1, 0)
        );
    }

    #[test]
    fn same_seed_same_spec() {
        let r = ranges([0.5, 1.0]);
        let a = sample_transform(&mut ChaCha8Rng::seed_from_u64(9), &r, (10, 10), (40, 40)).unwrap();
        let b = sample_transform(&mut ChaCha8Rng::seed_from_u64(9), &r, (10, 10), (40, 40)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_column() {
        let r = ranges([2.0, 2.0]);
        let err = sample_transform(&mut ChaCha8Rng::seed_from_u64(0), &r, (4, 10), (40, 15)).unwrap_err();
        assert!(matches!(err, GeometryError::NoFeasibleColumn { .. }));
    }

    fn object(h: usize, w: usize, v: f64) -> PhysicalObject {
        PhysicalObject::new(ImageRGB::filled(h, w, [v; 3]), BinaryMask::full(h, w), 1.5).unwrap()
    }

    #[test]
    fn identity_transform_is_exact() {
        let img = ImageRGB::from_fn(6, 5, |y, x| [y as f64 / 6.0, x as f64 / 5.0, 0.3]);
        let mask = BinaryMask::from_fn(6, 5, |y, x| y > 0 && x < 4);
        let obj = PhysicalObject::new(img, mask, 1.5).unwrap();
        let (t, _) = apply_transform(&obj, &TransformSpec::identity(0), (20, 20)).unwrap();
        assert_eq!(t.image, obj.image);
        assert_eq!(t.mask, obj.mask);
    }

    #[test]
    fn brightness_shifts_masked_region() {
        let obj = object(4, 4, 0.5);
        let spec = TransformSpec {
            brightness_delta: 0.1,
            ..TransformSpec::identity(0)
        };
        let (t, _) = apply_transform(&obj, &spec, (10, 10)).unwrap();
        for v in t.image.tensor().as_slice() {
            assert!((v - 0.6).abs() < 1e-12);
        }
    }

    #[test]
    fn half_scale_halves_mask_height() {
        let obj = PhysicalObject::new(
            ImageRGB::filled(100, 40, [0.4; 3]),
            BinaryMask::full(100, 40),
            1.5,
        )
        .unwrap();
        let spec = TransformSpec {
            scale: 0.5,
            ..TransformSpec::identity(0)
        };
        let (t, _) = apply_transform(&obj, &spec, (200, 200)).unwrap();
        let (top, bottom, _, _) = t.mask.bounding_box().unwrap();
        let height = bottom - top + 1;
        assert!((49..=51).contains(&height), "{height}");
    }

    #[test]
    fn transform_rejects_oversized() {
        let obj = object(10, 10, 0.5);
        let spec = TransformSpec {
            scale: 3.0,
            ..TransformSpec::identity(0)
        };
        assert!(matches!(
            apply_transform(&obj, &spec, (20, 40)),
            Err(GeometryError::TooLarge { .. })
        ));
    }

    #[test]
    fn paste_empty_mask_is_noop() {
        let scene = ImageRGB::from_fn(8, 8, |y, x| [y as f64 / 8.0, x as f64 / 8.0, 0.5]);
        let obj = PhysicalObject {
            image: ImageRGB::filled(2, 2, [1.0; 3]),
            mask: BinaryMask::empty(2, 2),
            height_m: 1.5,
        };
        let c = paste(&scene, &obj, &cam(4.0, 1.5), 3).unwrap();
        assert_eq!(c.scene_adv, scene);
        assert!(c.scene_mask.is_empty());
    }

    #[test]
    fn paste_full_frame_object() {
        let scene = ImageRGB::filled(6, 6, [0.2; 3]);
        let img = ImageRGB::from_fn(6, 6, |y, x| [0.1 * (y % 3) as f64, 0.05 * x as f64, 0.9]);
        let obj = PhysicalObject::new(img.clone(), BinaryMask::full(6, 6), 1.0).unwrap();
        // d = horizon - s * h/H = 6 - 6 = 0, object grounded on the last row.
        let c = paste(&scene, &obj, &cam(6.0, 1.0), 0).unwrap();
        assert_eq!(c.scene_adv, img);
        assert_eq!(c.scene_mask.count(), 36);
    }

    #[test]
    fn paste_two_by_two_brute_force() {
        let scene = ImageRGB::from_fn(8, 8, |y, x| [y as f64 / 10.0, x as f64 / 10.0, 0.25]);
        let obj = object(2, 2, 0.95);
        // horizon 5, h/H = 1: d = 5 - 2 = 3 -> bottom row 8-1-3 = 4, top 3.
        let c = paste(&scene, &obj, &cam(5.0, 1.5 * 1.0), 2).unwrap();
        assert_eq!(c.placement, (3, 2));
        let mut replaced = 0;
        for y in 0..8 {
            for x in 0..8 {
                let inside = (3..=4).contains(&y) && (2..=3).contains(&x);
                let px = c.scene_adv.pixel(y, x);
                if inside {
                    assert_eq!(px, [0.95; 3]);
                    replaced += 1;
                } else {
                    assert_eq!(px, scene.pixel(y, x));
                }
                assert_eq!(c.scene_mask.get(y, x), inside);
            }
        }
        assert_eq!(replaced, 4);
    }

    #[test]
    fn paste_out_of_frame() {
        let scene = ImageRGB::filled(8, 8, [0.0; 3]);
        let obj = object(2, 2, 0.5);
        assert!(matches!(
            paste(&scene, &obj, &cam(20.0, 1.5), 0),
            Err(GeometryError::OutOfFrame { .. })
        ));
        assert!(matches!(
            paste(&scene, &obj, &cam(4.0, 1.5), 7),
            Err(GeometryError::ColumnOutOfFrame { .. })
        ));
    }
}
