//! Mask-guided photorealistic stylization.
//!
//! Each semantic region of the content image is mapped by a whitening-coloring
//! transform onto the RGB statistics of the same-labeled region of the style
//! image. Regions the style image lacks are left untouched. An optional guided
//! filter, steered by the content image, removes transfer artifacts.

mod smooth;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use smooth::{box_mean, smooth};

use crate::error::{Error, Result};
use crate::io::{check_shapes, Image, LabelMask, LabeledPair, IGNORE};
use crate::linalg::{psd_power, region_stats, Matrix, PsdPower};

/// Ridge added to region covariances before whitening or coloring.
pub const COV_REGULARIZATION: f64 = 1e-5;
/// Lower bound on the content spread in the scalar fallback.
pub const SCALAR_SIGMA_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct StylizeConfig {
    /// Style images drawn per content image.
    pub num_styles: usize,
    pub smoothing_enabled: bool,
    pub smoothing_radius: usize,
    pub smoothing_eps: f64,
    /// Regions smaller than this (on either side) use the scalar fallback.
    pub min_region_px: usize,
    pub seed: u64,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        Self {
            num_styles: 10,
            smoothing_enabled: true,
            smoothing_radius: 4,
            smoothing_eps: 1e-2,
            min_region_px: 16,
            seed: 0,
        }
    }
}

impl StylizeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_styles == 0 {
            return Err(Error::InvalidArgument("number of styles must be at least 1".into()));
        }
        if self.min_region_px == 0 {
            return Err(Error::InvalidArgument("min_region_px must be at least 1".into()));
        }
        Ok(())
    }
}

/// One stylized copy of a content image.
#[derive(Clone, Debug, PartialEq)]
pub struct StylizedRecord {
    pub content_index: usize,
    pub style_index: usize,
    pub image: Image,
    /// The content image's mask, untouched.
    pub mask: LabelMask,
}

/// A mask assigning every pixel to class 1.
pub fn all_ones_mask(image: &Image) -> LabelMask {
    LabelMask::filled(image.height(), image.width(), 1).expect("image dimensions are non-zero")
}

fn mask_or_ones(pair: &LabeledPair) -> LabelMask {
    pair.mask().cloned().unwrap_or_else(|| all_ones_mask(pair.image()))
}

/// Affine color map for one matched region.
#[derive(Clone, Debug)]
enum RegionMap {
    Full {
        transform: Matrix,
        content_mean: Vec<f64>,
        style_mean: Vec<f64>,
    },
    Scalar {
        gain: f64,
        content_mean: Vec<f64>,
        style_mean: Vec<f64>,
    },
}

impl RegionMap {
    fn fit(content: &[[f64; 3]], style: &[[f64; 3]], min_region_px: usize) -> Result<Self> {
        let c = region_stats(3, content)?;
        let s = region_stats(3, style)?;
        if content.len() < min_region_px || style.len() < min_region_px {
            let spread = |cov: &Matrix| (cov.trace() / 3.0).max(0.0).sqrt();
            let gain = spread(&s.cov) / spread(&c.cov).max(SCALAR_SIGMA_FLOOR);
            return Ok(RegionMap::Scalar {
                gain,
                content_mean: c.mean,
                style_mean: s.mean,
            });
        }
        let whiten = psd_power(&c.cov.add_diagonal(COV_REGULARIZATION), PsdPower::InvSqrt)?;
        let color = psd_power(&s.cov.add_diagonal(COV_REGULARIZATION), PsdPower::Sqrt)?;
        Ok(RegionMap::Full {
            transform: color.matmul(&whiten),
            content_mean: c.mean,
            style_mean: s.mean,
        })
    }

    fn apply(&self, px: [f64; 3]) -> [f64; 3] {
        match self {
            RegionMap::Full {
                transform,
                content_mean,
                style_mean,
            } => {
                let d: Vec<f64> = px.iter().zip(content_mean).map(|(x, m)| x - m).collect();
                let y = transform.mul_vec(&d);
                [y[0] + style_mean[0], y[1] + style_mean[1], y[2] + style_mean[2]]
            }
            RegionMap::Scalar {
                gain,
                content_mean,
                style_mean,
            } => std::array::from_fn(|k| gain * (px[k] - content_mean[k]) + style_mean[k]),
        }
    }
}

/// Transfers per-region color statistics of `style` onto `content`, without smoothing.
///
/// Pairs without a mask are treated as a single region (class 1).
pub fn transfer_regions(content: &LabeledPair, style: &LabeledPair, min_region_px: usize) -> Result<Image> {
    let content_mask = mask_or_ones(content);
    let style_mask = mask_or_ones(style);
    check_shapes("content", content.image(), &content_mask)?;
    check_shapes("style", style.image(), &style_mask)?;

    let content_regions = content_mask.regions();
    let style_regions = style_mask.regions();
    let src = content.image();
    let mut out = src.as_slice().to_vec();

    for label in 0..IGNORE as usize {
        let (c_idx, s_idx) = (&content_regions[label], &style_regions[label]);
        if c_idx.is_empty() || s_idx.is_empty() {
            continue;
        }
        let c_px: Vec<[f64; 3]> = c_idx.iter().map(|&i| src.pixel_at(i)).collect();
        let s_px: Vec<[f64; 3]> = s_idx.iter().map(|&i| style.image().pixel_at(i)).collect();
        let map = RegionMap::fit(&c_px, &s_px, min_region_px)?;
        for (&i, &px) in c_idx.iter().zip(&c_px) {
            out[3 * i..3 * i + 3].copy_from_slice(&map.apply(px));
        }
    }
    Image::from_clamped(src.height(), src.width(), out)
}

/// Stylizes one content pair with one style pair, smoothing afterwards when enabled.
pub fn stylize_pair(content: &LabeledPair, style: &LabeledPair, cfg: &StylizeConfig) -> Result<Image> {
    cfg.validate()?;
    let transferred = transfer_regions(content, style, cfg.min_region_px)?;
    if cfg.smoothing_enabled {
        smooth(&transferred, content.image(), cfg.smoothing_radius, cfg.smoothing_eps)
    } else {
        Ok(transferred)
    }
}

/// Draws `n` style indices per content image from a seeded stream: without
/// replacement when `num_style >= n`, with replacement otherwise.
pub fn draw_style_indices(num_content: usize, num_style: usize, n: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_content)
        .map(|_| {
            if num_style >= n {
                rand::seq::index::sample(&mut rng, num_style, n).into_vec()
            } else {
                (0..n).map(|_| rng.random_range(0..num_style)).collect()
            }
        })
        .collect()
}

/// Produces `num_styles` stylized copies of every content pair, each paired
/// with a randomly drawn style pair.
///
/// Records are ordered content-major. Style draws happen up front on one
/// thread, so the output does not depend on the worker count.
pub fn ds_dataset(content: &[LabeledPair], style: &[LabeledPair], cfg: &StylizeConfig) -> Result<Vec<StylizedRecord>> {
    cfg.validate()?;
    if content.is_empty() || style.is_empty() {
        return Err(Error::InvalidArgument(
            "stylization needs non-empty content and style datasets".into(),
        ));
    }
    let draws = draw_style_indices(content.len(), style.len(), cfg.num_styles, cfg.seed);
    let jobs: Vec<(usize, usize)> = draws
        .iter()
        .enumerate()
        .flat_map(|(ci, styles)| styles.iter().map(move |&si| (ci, si)))
        .collect();
    jobs.par_iter()
        .map(|&(ci, si)| {
            let image = stylize_pair(&content[ci], &style[si], cfg)?;
            Ok(StylizedRecord {
                content_index: ci,
                style_index: si,
                image,
                mask: mask_or_ones(&content[ci]),
            })
        })
        .collect()
}
