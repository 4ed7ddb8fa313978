//! Per-region circular hue shifts in HSV space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{Image, LabeledPair, IGNORE};

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsvPixel {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Hexcone RGB to HSV. Achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> HsvPixel {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if delta == 0.0 {
        return HsvPixel { h: 0.0, s: 0.0, v };
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    HsvPixel {
        h: wrap_degrees(60.0 * sector),
        s,
        v,
    }
}

pub fn hsv_to_rgb(hsv: HsvPixel) -> [f64; 3] {
    let HsvPixel { h, s, v } = hsv;
    let c = v * s;
    let hp = wrap_degrees(h) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [
        (r + m).clamp(0.0, 1.0),
        (g + m).clamp(0.0, 1.0),
        (b + m).clamp(0.0, 1.0),
    ]
}

fn wrap_degrees(h: f64) -> f64 {
    let w = h.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// The hue shift for `label` under `seed`, uniform in `[0, 360)`.
///
/// Each label owns a ChaCha stream, so shifts do not depend on which other
/// labels are present.
pub fn class_shift(seed: u64, label: u8) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(label));
    rng.random_range(0.0..360.0)
}

/// Rotates the hue of every labeled region by `shift(label)` degrees.
/// Ignored pixels are copied unchanged.
pub fn shift_hue_regions(pair: &LabeledPair, mut shift: impl FnMut(u8) -> f64) -> Result<Image> {
    let mask = pair
        .mask()
        .ok_or_else(|| Error::InvalidArgument("hue randomization needs a segmentation mask".into()))?;
    let mut shifts = [0.0f64; 256];
    for label in mask.labels() {
        shifts[label as usize] = shift(label);
    }
    let image = pair.image();
    let mut out = image.as_slice().to_vec();
    for (i, &label) in mask.as_slice().iter().enumerate() {
        if label == IGNORE {
            continue;
        }
        let mut hsv = rgb_to_hsv(image.pixel_at(i));
        hsv.h = wrap_degrees(hsv.h + shifts[label as usize]);
        out[3 * i..3 * i + 3].copy_from_slice(&hsv_to_rgb(hsv));
    }
    Image::from_clamped(image.height(), image.width(), out)
}

/// Domain-randomization baseline: one seeded hue shift per class.
pub fn hue_randomize(pair: &LabeledPair, seed: u64) -> Result<Image> {
    shift_hue_regions(pair, |label| class_shift(seed, label))
}
