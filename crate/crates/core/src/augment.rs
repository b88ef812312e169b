//! Randomized affine + flip augmentation with per-frame reproducible draws.
//!
//! A draw is resolved into one composite warp about the image center
//! (`rotation ∘ shear ∘ zoom ∘ shift`, shift applied first), sampled in a
//! single pass, followed by an optional horizontal flip.

use image::{Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::preprocess::{FrameSample, Provenance, Split};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FillMode {
    /// Repeat the closest edge pixel.
    Nearest,
    /// Mirror about the edge (`dcba|abcd|dcba`).
    Reflect,
    Constant { value: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Maximum rotation magnitude in degrees.
    pub rotation_deg: f64,
    pub width_shift_frac: f64,
    pub height_shift_frac: f64,
    pub shear_deg: f64,
    pub zoom_frac: f64,
    pub horizontal_flip: bool,
    pub fill_mode: FillMode,
    pub interpolation: Interpolation,
    /// Output frames per input frame, the original included.
    pub factor: u32,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            rotation_deg: 20.0,
            width_shift_frac: 0.1,
            height_shift_frac: 0.1,
            shear_deg: 10.0,
            zoom_frac: 0.1,
            horizontal_flip: true,
            fill_mode: FillMode::Nearest,
            interpolation: Interpolation::Bilinear,
            factor: 4,
            seed: 0,
        }
    }
}

impl AugmentParams {
    /// Parameters whose every draw is the identity.
    pub fn identity(factor: u32) -> Self {
        AugmentParams {
            rotation_deg: 0.0,
            width_shift_frac: 0.0,
            height_shift_frac: 0.0,
            shear_deg: 0.0,
            zoom_frac: 0.0,
            horizontal_flip: false,
            factor,
            ..AugmentParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |what: &str| Err(AugmentError::InvalidParams(what.to_string()));
        if self.factor < 1 {
            return bad("factor must be >= 1");
        }
        if !(self.rotation_deg >= 0.0) || !(self.shear_deg >= 0.0) {
            return bad("rotation_deg and shear_deg must be >= 0");
        }
        for (name, v) in
            [("width_shift_frac", self.width_shift_frac), ("height_shift_frac", self.height_shift_frac), ("zoom_frac", self.zoom_frac)]
        {
            if !(0.0..1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Draws one transform for a `width x height` image.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, width: u32, height: u32) -> AugmentDraw {
        let mut sym = |max: f64| if max > 0.0 { rng.random_range(-max..=max) } else { 0.0 };
        let rotation_deg = sym(self.rotation_deg);
        let shift_x = sym(self.width_shift_frac) * f64::from(width);
        let shift_y = sym(self.height_shift_frac) * f64::from(height);
        let shear_deg = sym(self.shear_deg);
        let zoom = 1.0 + sym(self.zoom_frac);
        let flip = self.horizontal_flip && rng.random_bool(0.5);
        AugmentDraw { rotation_deg, shift_x, shift_y, shear_deg, zoom, flip }
    }
}

/// The concrete values of one augmentation. Shifts are in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub rotation_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub shear_deg: f64,
    pub zoom: f64,
    pub flip: bool,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        AugmentDraw { rotation_deg: 0.0, shift_x: 0.0, shift_y: 0.0, shear_deg: 0.0, zoom: 1.0, flip: false }
    }

    /// Forward linear part `R * Sh * Z`.
    fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let t = self.shear_deg.to_radians().tan();
        let z = self.zoom;
        // R * [[1, t], [0, 1]] * z
        [[c * z, (c * t - s) * z], [s * z, (s * t + c) * z]]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("invalid augmentation parameters: {0}")]
    InvalidParams(String),
    #[error("frame {sample_id} has split {split:?}; only training frames may be augmented")]
    NotTrainSplit { sample_id: String, split: Split },
    #[error("degenerate transform (zero determinant)")]
    Degenerate,
}

fn fill_index(i: i64, n: i64, mode: FillMode) -> Option<i64> {
    if (0..n).contains(&i) {
        return Some(i);
    }
    match mode {
        FillMode::Nearest => Some(i.clamp(0, n - 1)),
        FillMode::Reflect => {
            let period = 2 * n;
            let m = i.rem_euclid(period);
            Some(if m < n { m } else { period - 1 - m })
        }
        FillMode::Constant { .. } => None,
    }
}

fn fetch(img: &RgbImage, x: i64, y: i64, mode: FillMode) -> [f64; 3] {
    let (w, h) = (i64::from(img.width()), i64::from(img.height()));
    match (fill_index(x, w, mode), fill_index(y, h, mode)) {
        (Some(x), Some(y)) => img.get_pixel(x as u32, y as u32).0.map(f64::from),
        _ => match mode {
            FillMode::Constant { value } => [f64::from(value); 3],
            _ => unreachable!("only constant fill leaves the image"),
        },
    }
}

fn sample(img: &RgbImage, sx: f64, sy: f64, params: &AugmentParams) -> Rgb<u8> {
    let px = match params.interpolation {
        Interpolation::Nearest => fetch(img, (sx + 0.5).floor() as i64, (sy + 0.5).floor() as i64, params.fill_mode),
        Interpolation::Bilinear => {
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let mut acc = [0.0; 3];
            for (dx, dy, w) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
                if w == 0.0 {
                    continue;
                }
                let p = fetch(img, x0 + dx, y0 + dy, params.fill_mode);
                for c in 0..3 {
                    acc[c] += w * p[c];
                }
            }
            acc
        }
    };
    Rgb(px.map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8))
}

/// Applies one draw. Output has the input's dimensions.
pub fn augment_frame(img: &RgbImage, params: &AugmentParams, draw: &AugmentDraw) -> Result<RgbImage, AugmentError> {
    let [[a, b], [c, d]] = draw.linear();
    let det = a * d - b * c;
    if det.abs() < 1e-12 {
        return Err(AugmentError::Degenerate);
    }
    let inv = [[d / det, -b / det], [-c / det, a / det]];
    let cx = (f64::from(img.width()) - 1.0) / 2.0;
    let cy = (f64::from(img.height()) - 1.0) / 2.0;
    let mut out = RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let (ox, oy) = (f64::from(x) - cx, f64::from(y) - cy);
        let sx = inv[0][0] * ox + inv[0][1] * oy - draw.shift_x + cx;
        let sy = inv[1][0] * ox + inv[1][1] * oy - draw.shift_y + cy;
        sample(img, sx, sy, params)
    });
    if draw.flip {
        image::imageops::flip_horizontal_in_place(&mut out);
    }
    Ok(out)
}

/// Per-variant seed, independent of processing order.
pub fn variant_seed(seed: u64, gif_id: &str, frame_index: u32, variant: u32) -> u64 {
    derive_seed("augment", &[&seed, &gif_id.to_string(), &frame_index, &variant])
}

/// Returns every input frame followed by its `factor - 1` augmented variants.
///
/// Inputs must all be training frames unless `allow_any_split` is set (the
/// leaky augment-then-split ordering).
pub fn augment_dataset(
    frames: &[FrameSample],
    params: &AugmentParams,
    allow_any_split: bool,
) -> Result<Vec<FrameSample>, AugmentError> {
    params.validate()?;
    if !allow_any_split {
        if let Some(bad) = frames.iter().find(|f| f.split != Split::Train) {
            return Err(AugmentError::NotTrainSplit { sample_id: bad.sample_id(), split: bad.split });
        }
    }
    let groups: Vec<Vec<FrameSample>> = frames
        .par_iter()
        .map(|frame| {
            let mut group = Vec::with_capacity(params.factor as usize);
            group.push(frame.clone());
            for variant in 1..params.factor {
                let mut rng = rng_from(variant_seed(params.seed, &frame.gif_id, frame.frame_index, variant));
                let draw = params.draw(&mut rng, frame.image.width(), frame.image.height());
                let image = augment_frame(&frame.image, params, &draw)?;
                group.push(FrameSample {
                    image,
                    provenance: Provenance::Augmented { parent: frame.sample_id(), variant, draw },
                    ..frame.clone()
                });
            }
            Ok(group)
        })
        .collect::<Result<_, AugmentError>>()?;
    Ok(groups.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Label;
    use proptest::prelude::*;

    fn pattern(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 17 % 256) as u8, (y * 29 % 256) as u8, ((x + y) * 7 % 256) as u8]))
    }

    fn train_frame(i: u32, img: RgbImage) -> FrameSample {
        let mut f = FrameSample::original("gif", i, img, Label::NonCyberbullying);
        f.split = Split::Train;
        f
    }

    #[test]
    fn identity_draw_is_pixel_exact() {
        let img = pattern(13, 9);
        for interpolation in [Interpolation::Bilinear, Interpolation::Nearest] {
            let params = AugmentParams { interpolation, ..AugmentParams::default() };
            assert_eq!(augment_frame(&img, &params, &AugmentDraw::identity()).unwrap(), img);
        }
    }

    #[test]
    fn double_flip_restores_original() {
        let img = pattern(10, 7);
        let flip = AugmentDraw { flip: true, ..AugmentDraw::identity() };
        let params = AugmentParams::default();
        let once = augment_frame(&img, &params, &flip).unwrap();
        assert_ne!(once, img);
        assert_eq!(once.get_pixel(0, 3), img.get_pixel(9, 3));
        assert_eq!(augment_frame(&once, &params, &flip).unwrap(), img);
    }

    fn centered_square() -> RgbImage {
        RgbImage::from_fn(8, 8, |x, y| if (3..=4).contains(&x) && (3..=4).contains(&y) { Rgb([255; 3]) } else { Rgb([0; 3]) })
    }

    #[test]
    fn zoom_two_doubles_centered_square() {
        // Center is 3.5; output pixel p samples (p - 3.5) / 2 + 3.5, so
        // p = 2..=5 map to 2.75..=4.25, which round into the white 3..=4 band.
        let draw = AugmentDraw { zoom: 2.0, ..AugmentDraw::identity() };
        let params = AugmentParams { interpolation: Interpolation::Nearest, ..AugmentParams::default() };
        let out = augment_frame(&centered_square(), &params, &draw).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let white = (2..=5).contains(&x) && (2..=5).contains(&y);
                assert_eq!(out.get_pixel(x, y).0, if white { [255; 3] } else { [0; 3] }, "({x},{y})");
            }
        }
    }

    #[test]
    fn bilinear_zoom_keeps_the_same_square_above_half_intensity() {
        let draw = AugmentDraw { zoom: 2.0, ..AugmentDraw::identity() };
        let out = augment_frame(&centered_square(), &AugmentParams::default(), &draw).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let white = (2..=5).contains(&x) && (2..=5).contains(&y);
                assert_eq!(out.get_pixel(x, y).0[0] > 127, white, "({x},{y})");
            }
        }
        assert_eq!(out.get_pixel(3, 3).0, [255; 3]);
        // Corner sample (2.75, 2.75): weight 0.75 * 0.75 on white.
        assert_eq!(out.get_pixel(2, 2).0[0], (0.5625f64 * 255.0 + 0.5).floor() as u8);
    }

    #[test]
    fn shift_moves_content_and_fills() {
        let img = pattern(6, 4);
        let draw = AugmentDraw { shift_x: 2.0, ..AugmentDraw::identity() };
        let fill = FillMode::Constant { value: 9 };
        let out = augment_frame(&img, &AugmentParams { fill_mode: fill, ..AugmentParams::default() }, &draw).unwrap();
        assert_eq!(out.get_pixel(2, 1), img.get_pixel(0, 1));
        assert_eq!(out.get_pixel(0, 1).0, [9; 3]);
        let nearest = augment_frame(&img, &AugmentParams::default(), &draw).unwrap();
        assert_eq!(nearest.get_pixel(0, 1), img.get_pixel(0, 1));
        let reflect =
            augment_frame(&img, &AugmentParams { fill_mode: FillMode::Reflect, ..AugmentParams::default() }, &draw).unwrap();
        // source x = -2 reflects to 1, x = -1 to 0
        assert_eq!(reflect.get_pixel(0, 1), img.get_pixel(1, 1));
        assert_eq!(reflect.get_pixel(1, 1), img.get_pixel(0, 1));
    }

    #[test]
    fn quarter_turn_rotates_square_image() {
        let img = pattern(5, 5);
        let draw = AugmentDraw { rotation_deg: 90.0, ..AugmentDraw::identity() };
        let params = AugmentParams { interpolation: Interpolation::Nearest, ..AugmentParams::default() };
        let out = augment_frame(&img, &params, &draw).unwrap();
        // forward map (x, y) -> (-y, x) about the center (2, 2)
        for y in 0..5i32 {
            for x in 0..5i32 {
                let (dx, dy) = (x - 2, y - 2);
                let (tx, ty) = (2 - dy, 2 + dx);
                assert_eq!(out.get_pixel(tx as u32, ty as u32), img.get_pixel(x as u32, y as u32));
            }
        }
    }

    #[test]
    fn factor_one_returns_originals() {
        let frames: Vec<_> = (0..10).map(|i| train_frame(i, pattern(4, 4))).collect();
        let out = augment_dataset(&frames, &AugmentParams { factor: 1, ..AugmentParams::default() }, false).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|f| f.provenance == Provenance::Original));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let frames: Vec<_> = (0..3).map(|i| train_frame(i, pattern(12, 12))).collect();
        let params = AugmentParams { factor: 3, seed: 42, ..AugmentParams::default() };
        let a = augment_dataset(&frames, &params, false).unwrap();
        let b = augment_dataset(&frames, &params, false).unwrap();
        assert_eq!(a.len(), 9);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.as_raw(), y.image.as_raw());
            assert_eq!(x.provenance, y.provenance);
        }
    }

    #[test]
    fn leakage_guard_rejects_non_training_frames() {
        let mut frame = train_frame(0, pattern(4, 4));
        frame.split = Split::Test;
        let err = augment_dataset(std::slice::from_ref(&frame), &AugmentParams::default(), false).unwrap_err();
        assert!(matches!(err, AugmentError::NotTrainSplit { .. }));
        assert_eq!(augment_dataset(&[frame], &AugmentParams::default(), true).unwrap().len(), 4);
    }

    #[test]
    fn rejects_out_of_range_params() {
        assert!(AugmentParams { factor: 0, ..AugmentParams::default() }.validate().is_err());
        assert!(AugmentParams { zoom_frac: 1.0, ..AugmentParams::default() }.validate().is_err());
        assert!(AugmentParams { rotation_deg: -1.0, ..AugmentParams::default() }.validate().is_err());
    }

    #[test]
    fn draws_respect_ranges() {
        let params = AugmentParams::default();
        let mut rng = rng_from(3);
        for _ in 0..500 {
            let d = params.draw(&mut rng, 100, 50);
            assert!(d.rotation_deg.abs() <= 20.0);
            assert!(d.shift_x.abs() <= 10.0 && d.shift_y.abs() <= 5.0);
            assert!(d.shear_deg.abs() <= 10.0);
            assert!((0.9..=1.1).contains(&d.zoom));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn output_size_labels_and_dimensions(n in 1usize..6, factor in 1u32..5, seed in any::<u64>(), w in 3u32..12, h in 3u32..12) {
            let frames: Vec<_> = (0..n as u32).map(|i| train_frame(i, pattern(w, h))).collect();
            let params = AugmentParams { factor, seed, ..AugmentParams::default() };
            let out = augment_dataset(&frames, &params, false).unwrap();
            prop_assert_eq!(out.len(), factor as usize * n);
            for f in &out {
                prop_assert_eq!(f.label, Label::NonCyberbullying);
                prop_assert_eq!(f.image.dimensions(), (w, h));
            }
        }

        #[test]
        fn zero_ranges_copy_pixels(factor in 1u32..5, seed in any::<u64>()) {
            let frames: Vec<_> = (0..3).map(|i| train_frame(i, pattern(7, 5))).collect();
            let params = AugmentParams { seed, ..AugmentParams::identity(factor) };
            let out = augment_dataset(&frames, &params, false).unwrap();
            for (i, f) in out.iter().enumerate() {
                prop_assert_eq!(&f.image, &frames[i / factor as usize].image);
            }
        }
    }
}
