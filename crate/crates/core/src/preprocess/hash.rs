//! Difference hash (dHash) for near-duplicate frame detection.

use std::fmt;

use image::RgbImage;

use super::FrameSample;

/// A perceptual hash of `len` bits, row-major, packed little-endian in words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DHash {
    words: Vec<u64>,
    len: u32,
}

impl DHash {
    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, k: u32) -> bool {
        assert!(k < self.len, "bit {k} out of range");
        (self.words[(k / 64) as usize] >> (k % 64)) & 1 == 1
    }

    /// The first 64 bits as an integer (the whole hash for the default size).
    pub fn as_u64(&self) -> u64 {
        self.words[0]
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|k| if self.bit(k) { '1' } else { '0' }).collect()
    }
}

impl fmt::Display for DHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.words {
            write!(f, "{w:016x}")?;
        }
        Ok(())
    }
}

pub fn hamming(a: &DHash, b: &DHash) -> u32 {
    assert_eq!(a.len, b.len, "hash sizes differ");
    a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Debug, thiserror::Error)]
#[error("hash_bits {0} must be a perfect square of at least 4")]
pub struct BadHashBits(pub u32);

pub(crate) fn grid_side(hash_bits: u32) -> Result<u32, BadHashBits> {
    let side = (f64::from(hash_bits)).sqrt().round() as u32;
    if side >= 2 && side * side == hash_bits {
        Ok(side)
    } else {
        Err(BadHashBits(hash_bits))
    }
}

pub(crate) fn luma(p: &image::Rgb<u8>) -> f64 {
    let [r, g, b] = p.0;
    0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)
}

pub(crate) fn grayscale(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(luma).collect()
}

/// Integer luma scaled by 1000 (ITU-R BT.601 weights), exact for 8-bit input.
pub(crate) fn luma_milli(p: &image::Rgb<u8>) -> u64 {
    let [r, g, b] = p.0;
    299 * u64::from(r) + 587 * u64::from(g) + 114 * u64::from(b)
}

/// Overlaps between source pixels and output cells, in units where a source
/// pixel has length `dst` and an output cell has length `src`. All overlaps
/// are integers, so area sums are exact.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, u64)>> {
    (0..dst)
        .map(|o| {
            let lo = o * src;
            let hi = (o + 1) * src;
            (lo / dst..hi.div_ceil(dst).min(src))
                .filter_map(|i| {
                    let overlap = hi.min((i + 1) * dst).saturating_sub(lo.max(i * dst));
                    (overlap > 0).then_some((i, overlap as u64))
                })
                .collect()
        })
        .collect()
}

/// Box-filter downscale where each output value is the area-weighted sum of
/// the source region it covers. Every cell has the same total weight
/// (`width * height`), so sums compare exactly like means.
pub(crate) fn area_sums(values: &[u64], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<u64> {
    let wx = area_weights(width, out_w);
    let wy = area_weights(height, out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for row in &wy {
        for col in &wx {
            let mut acc = 0u64;
            for &(y, hy) in row {
                for &(x, hx) in col {
                    acc += values[y * width + x] * hy * hx;
                }
            }
            out.push(acc);
        }
    }
    out
}

/// Area-averaged grayscale (0..=255 scale) at `out_w x out_h`.
#[cfg(test)]
pub(crate) fn area_resize_luma(img: &RgbImage, out_w: usize, out_h: usize) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let milli: Vec<u64> = img.pixels().map(luma_milli).collect();
    let norm = (w * h) as f64 * 1000.0;
    area_sums(&milli, w, h, out_w, out_h).into_iter().map(|s| s as f64 / norm).collect()
}

/// dHash: grayscale, area-downscale to `(s+1) x s`, then bit `r*s + c` is 1
/// iff `pixel[r][c] < pixel[r][c+1]`. `hash_bits` must equal `s*s`.
pub fn perceptual_hash(img: &RgbImage, hash_bits: u32) -> Result<DHash, BadHashBits> {
    let side = grid_side(hash_bits)? as usize;
    assert!(img.width() > 0 && img.height() > 0, "empty raster");
    let (w, h) = (img.width() as usize, img.height() as usize);
    let milli: Vec<u64> = img.pixels().map(luma_milli).collect();
    let small = area_sums(&milli, w, h, side + 1, side);
    let mut words = vec![0u64; (hash_bits as usize).div_ceil(64)];
    for r in 0..side {
        for c in 0..side {
            if small[r * (side + 1) + c] < small[r * (side + 1) + c + 1] {
                let k = r * side + c;
                words[k / 64] |= 1 << (k % 64);
            }
        }
    }
    Ok(DHash { words, len: hash_bits })
}

/// Greedy forward pass: keep the first hash, then keep each hash whose
/// distance to the most recently kept one exceeds `threshold`.
pub fn dedup_indices(hashes: &[DHash], threshold: u32) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, h) in hashes.iter().enumerate() {
        match kept.last() {
            Some(&last) if hamming(&hashes[last], h) <= threshold => {}
            _ => kept.push(i),
        }
    }
    kept
}

pub fn dedup_frames(frames: Vec<FrameSample>, threshold: u32, hash_bits: u32) -> Result<Vec<FrameSample>, BadHashBits> {
    let hashes = frames.iter().map(|f| perceptual_hash(&f.image, hash_bits)).collect::<Result<Vec<_>, _>>()?;
    let keep = dedup_indices(&hashes, threshold);
    let mut keep = keep.into_iter().peekable();
    Ok(frames
        .into_iter()
        .enumerate()
        .filter_map(|(i, f)| {
            if keep.peek() == Some(&i) {
                keep.next();
                Some(f)
            } else {
                None
            }
        })
        .collect())
}
