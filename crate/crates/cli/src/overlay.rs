//! Side-by-side overlay: the input on the left, the input with contours on
//! the right.
//!
//! Palette: prediction boundary red `(230, 40, 40)`, ground-truth boundary
//! green `(40, 200, 60)`, pixels on both boundaries yellow `(240, 220, 40)`.

use image::{GrayImage, Rgb, RgbImage};

pub const PREDICTION: Rgb<u8> = Rgb([230, 40, 40]);
pub const TRUTH: Rgb<u8> = Rgb([40, 200, 60]);
pub const BOTH: Rgb<u8> = Rgb([240, 220, 40]);

/// Foreground pixels with at least one 4-neighbour outside the foreground
/// (the image border counts as background).
pub fn boundary(mask: &GrayImage) -> Vec<bool> {
    let (w, h) = mask.dimensions();
    let fg = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && mask.get_pixel(x as u32, y as u32)[0] > 127;
    let mut out = vec![false; (w * h) as usize];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if fg(x, y) && !(fg(x - 1, y) && fg(x + 1, y) && fg(x, y - 1) && fg(x, y + 1)) {
                out[(y as u32 * w + x as u32) as usize] = true;
            }
        }
    }
    out
}

pub fn render(image: &GrayImage, prediction: &GrayImage, truth: Option<&GrayImage>) -> RgbImage {
    let (w, h) = image.dimensions();
    let pred = boundary(prediction);
    let gt = truth.map(boundary);
    let mut out = RgbImage::new(2 * w, h);
    for y in 0..h {
        for x in 0..w {
            let v = image.get_pixel(x, y)[0];
            out.put_pixel(x, y, Rgb([v, v, v]));
            let i = (y * w + x) as usize;
            let on_gt = gt.as_ref().is_some_and(|g| g[i]);
            let px = match (pred[i], on_gt) {
                (true, true) => BOTH,
                (true, false) => PREDICTION,
                (false, true) => TRUTH,
                (false, false) => Rgb([v, v, v]),
            };
            out.put_pixel(w + x, y, px);
        }
    }
    out
}
