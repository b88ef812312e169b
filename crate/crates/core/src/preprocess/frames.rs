use std::io::Cursor;

use image::codecs::gif::GifDecoder;
use image::{AnimationDecoder, RgbImage, RgbaImage};

use super::PreprocessError;

/// A fully composited frame and its index in the source GIF.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedFrame {
    pub index: u32,
    pub image: RgbImage,
}

/// Frame indices kept under `cap`: all of them when `n <= cap`, otherwise
/// `cap` indices evenly spaced over `[0, n-1]`, rounded half up, so the first
/// and last frames are always present.
pub fn sample_indices(n: u32, cap: u32) -> Vec<u32> {
    if n == 0 || cap == 0 {
        return Vec::new();
    }
    if n <= cap {
        return (0..n).collect();
    }
    if cap == 1 {
        return vec![0];
    }
    let span = u64::from(n - 1);
    let steps = u64::from(cap - 1);
    (0..u64::from(cap)).map(|i| ((2 * i * span + steps) / (2 * steps)) as u32).collect()
}

/// Counts the frames of a GIF without compositing them.
pub fn count_frames(bytes: &[u8]) -> Result<u32, gif::DecodingError> {
    let mut options = gif::DecodeOptions::new();
    options.set_color_output(gif::ColorOutput::Indexed);
    options.skip_frame_decoding(true);
    let mut decoder = options.read_info(Cursor::new(bytes))?;
    let mut count = 0u32;
    while decoder.read_next_frame()?.is_some() {
        count += 1;
    }
    Ok(count)
}

/// Decodes a GIF and returns `min(N, cap)` composited RGB frames.
///
/// Disposal and transparency are resolved by the decoder; any pixel left
/// transparent after compositing is flattened onto black.
pub fn extract_frames(gif_id: &str, bytes: &[u8], cap: u32) -> Result<Vec<DecodedFrame>, PreprocessError> {
    let undecodable = |message: String| PreprocessError::Undecodable { gif_id: gif_id.to_string(), message };
    let total = count_frames(bytes).map_err(|e| undecodable(e.to_string()))?;
    if total == 0 {
        return Err(PreprocessError::NoFrames { gif_id: gif_id.to_string() });
    }
    let wanted = sample_indices(total, cap);
    let decoder = GifDecoder::new(Cursor::new(bytes)).map_err(|e| undecodable(e.to_string()))?;
    let mut out = Vec::with_capacity(wanted.len());
    let mut next = wanted.iter().copied().peekable();
    for (index, frame) in decoder.into_frames().enumerate() {
        let Some(&target) = next.peek() else { break };
        let frame = frame.map_err(|e| undecodable(format!("frame {index}: {e}")))?;
        if index as u32 == target {
            out.push(DecodedFrame { index: target, image: flatten_on_black(frame.buffer()) });
            next.next();
        }
    }
    if out.is_empty() {
        return Err(PreprocessError::NoFrames { gif_id: gif_id.to_string() });
    }
    if out.len() != wanted.len() {
        return Err(undecodable(format!("expected {} frames, decoded {}", wanted.len(), out.len())));
    }
    Ok(out)
}

fn flatten_on_black(rgba: &RgbaImage) -> RgbImage {
    RgbImage::from_fn(rgba.width(), rgba.height(), |x, y| {
        let [r, g, b, a] = rgba.get_pixel(x, y).0;
        let scale = |c: u8| ((u16::from(c) * u16::from(a) + 127) / 255) as u8;
        image::Rgb([scale(r), scale(g), scale(b)])
    })
}

/// Encodes RGB frames as a looping GIF with a per-frame palette.
pub fn encode_gif(frames: &[RgbImage], delay_cs: u16) -> Result<Vec<u8>, gif::EncodingError> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = (first.width() as u16, first.height() as u16);
    let mut bytes = Vec::new();
    {
        let mut encoder = gif::Encoder::new(&mut bytes, w, h, &[])?;
        encoder.set_repeat(gif::Repeat::Infinite)?;
        for image in frames {
            let mut frame = gif::Frame::from_rgb_speed(w, h, image.as_raw(), 10);
            frame.delay = delay_cs;
            encoder.write_frame(&frame)?;
        }
    }
    Ok(bytes)
}
