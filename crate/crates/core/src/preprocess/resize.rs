use image::RgbImage;

/// Interleaved HWC float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl FloatImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        FloatImage { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }
}

/// Source coordinate and blend weights for one output axis, using pixel
/// centers (`src = (dst + 0.5) * scale - 0.5`) clamped to the image.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resize to `target_side x target_side` (aspect ratio not
/// preserved), then scale channels by 1/255.
pub fn resize_normalize(img: &RgbImage, target_side: usize) -> FloatImage {
    assert!(img.width() > 0 && img.height() > 0, "empty raster");
    let (w, h) = (img.width() as usize, img.height() as usize);
    let xs = axis_taps(w, target_side);
    let ys = axis_taps(h, target_side);
    let raw = img.as_raw();
    let px = |x: usize, y: usize, c: usize| f64::from(raw[(y * w + x) * 3 + c]);
    let mut out = FloatImage::zeros(target_side, target_side);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let top = px(x0, y0, c) * (1.0 - fx) + px(x1, y0, c) * fx;
                let bottom = px(x0, y1, c) * (1.0 - fx) + px(x1, y1, c) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.data[(oy * target_side + ox) * 3 + c] = v as f32 / 255.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn same_size_is_pure_scaling() {
        let img = RgbImage::from_fn(224, 224, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, ((x * y) % 256) as u8]));
        let out = resize_normalize(&img, 224);
        for (got, raw) in out.data.iter().zip(img.as_raw()) {
            assert_eq!(*got, f32::from(*raw) / 255.0);
        }
    }

    #[test]
    fn saturated_input_maps_to_one() {
        let img = RgbImage::from_pixel(37, 91, Rgb([255, 255, 255]));
        let out = resize_normalize(&img, 16);
        assert!(out.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn integer_downscale_of_block_image_is_exact() {
        // 448x448 made of 2x2 constant blocks: each output pixel samples the
        // midpoint between two pixels of one block, so it reproduces the block.
        let block = |bx: u32, by: u32| Rgb([((bx * 3 + by) % 256) as u8, ((bx + by * 5) % 256) as u8, (bx % 256) as u8]);
        let img = RgbImage::from_fn(448, 448, |x, y| block(x / 2, y / 2));
        let out = resize_normalize(&img, 224);
        for oy in 0..224 {
            for ox in 0..224 {
                let want = block(ox as u32, oy as u32).0;
                for c in 0..3 {
                    assert_eq!(out.get(ox, oy, c), f32::from(want[c]) / 255.0);
                }
            }
        }
    }

    #[test]
    fn non_square_input_becomes_square() {
        let img = RgbImage::from_pixel(10, 3, Rgb([10, 20, 30]));
        let out = resize_normalize(&img, 7);
        assert_eq!((out.width, out.height, out.data.len()), (7, 7, 147));
    }
}
