use image::{Rgb, RgbImage};

use super::hash::grayscale;

/// 4-neighbour Laplacian (center 4, edge neighbours -1, corners 0) of the
/// grayscale image, replicating border pixels.
pub fn laplacian(img: &RgbImage) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = grayscale(img);
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        gray[y * w + x]
    };
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            out.push(4.0 * at(x, y) - at(x - 1, y) - at(x + 1, y) - at(x, y - 1) - at(x, y + 1));
        }
    }
    out
}

/// Sharpness score: population variance of the Laplacian response over all
/// pixels. Low values indicate blur.
pub fn blur_score(img: &RgbImage) -> f64 {
    assert!(img.width() > 0 && img.height() > 0, "empty raster");
    let response = laplacian(img);
    let n = response.len() as f64;
    let mean = response.iter().sum::<f64>() / n;
    let var = response.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.max(0.0)
}

/// Box blur with a `(2r+1)^2` window and replicated borders, per channel.
pub fn box_blur(img: &RgbImage, radius: u32) -> RgbImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = i64::from(radius);
    let count = ((2 * r + 1) * (2 * r + 1)) as u32;
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = [0u32; 3];
        for dy in -r..=r {
            for dx in -r..=r {
                let sx = (i64::from(x) + dx).clamp(0, w - 1) as u32;
                let sy = (i64::from(y) + dy).clamp(0, h - 1) as u32;
                let p = img.get_pixel(sx, sy).0;
                for c in 0..3 {
                    acc[c] += u32::from(p[c]);
                }
            }
        }
        Rgb(acc.map(|a| ((a + count / 2) / count) as u8))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_scores_zero() {
        let img = RgbImage::from_pixel(12, 9, Rgb([90, 40, 200]));
        assert_eq!(blur_score(&img), 0.0);
    }

    #[test]
    fn checkerboard_is_sharper_than_its_blur() {
        let board = RgbImage::from_fn(32, 32, |x, y| {
            if ((x / 4) + (y / 4)) % 2 == 0 { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) }
        });
        let blurred = box_blur(&board, 2);
        assert!(blur_score(&board) > blur_score(&blurred));
    }

    #[test]
    fn single_white_pixel_matches_hand_computed_variance() {
        // Responses: 4*255 at the center, -255 at its four neighbours, 0 at the
        // remaining 20 pixels (border pixels included via replication).
        // mean = (1020 - 4*255) / 25 = 0; variance = (1020^2 + 4*255^2) / 25.
        let mut img = RgbImage::from_pixel(5, 5, Rgb([0, 0, 0]));
        img.put_pixel(2, 2, Rgb([255, 255, 255]));
        let response = laplacian(&img);
        let expected_map = [
            0.0, 0.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, -255.0, 0.0, 0.0, //
            0.0, -255.0, 1020.0, -255.0, 0.0, //
            0.0, 0.0, -255.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, 0.0,
        ];
        for (got, want) in response.iter().zip(expected_map) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
        let expected = (1020.0f64.powi(2) + 4.0 * 255.0f64.powi(2)) / 25.0;
        assert!((blur_score(&img) - expected).abs() < 1e-6);
        assert!((expected - 52_020.0).abs() < 1e-9);
    }

    #[test]
    fn edge_pixels_use_replicated_border() {
        // White left column on black: the corner response only sees one real
        // dark neighbour because the out-of-range ones replicate the pixel.
        let img = RgbImage::from_fn(3, 3, |x, _| if x == 0 { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) });
        let response = laplacian(&img);
        assert!((response[0] - 255.0).abs() < 1e-9);
        assert!((response[1] + 255.0).abs() < 1e-9);
        assert!(response[2].abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn box_blur_never_sharpens(px in proptest::collection::vec(any::<u8>(), 64)) {
            let img = RgbImage::from_fn(8, 8, |x, y| {
                let v = px[(y * 8 + x) as usize];
                Rgb([v, v, v])
            });
            prop_assume!(px.iter().any(|&v| v != px[0]));
            // Small slack for 8-bit rounding in the blurred copy.
            prop_assert!(blur_score(&box_blur(&img, 2)) <= blur_score(&img) + 1.0);
        }
    }
}
