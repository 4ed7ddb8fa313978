//! Guided filtering with a clipped-window box mean.

use crate::error::{Error, Result};
use crate::io::Image;

/// Mean over the `(2r+1)²` window around each pixel, clipped at the borders.
pub fn box_mean(plane: &[f64], height: usize, width: usize, radius: usize) -> Vec<f64> {
    assert_eq!(plane.len(), height * width);
    let stride = width + 1;
    let mut integral = vec![0.0; (height + 1) * stride];
    for y in 0..height {
        let mut row = 0.0;
        for x in 0..width {
            row += plane[y * width + x];
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let mut out = vec![0.0; height * width];
    for y in 0..height {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(height);
        for x in 0..width {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(width);
            let sum = integral[y1 * stride + x1] - integral[y0 * stride + x1] - integral[y1 * stride + x0]
                + integral[y0 * stride + x0];
            out[y * width + x] = sum / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Edge-preserving smoothing of `stylized`, guided channel-by-channel by `guide`.
///
/// Per window: `a = cov(guide, src) / (var(guide) + eps)`, `b = mean(src) - a·mean(guide)`;
/// the output is `mean(a)·guide + mean(b)`, clamped into `[0, 1]`.
pub fn smooth(stylized: &Image, guide: &Image, radius: usize, eps: f64) -> Result<Image> {
    if stylized.shape() != guide.shape() {
        return Err(Error::ShapeMismatch {
            context: "smooth",
            left_name: "stylized",
            left: stylized.shape(),
            right_name: "guide",
            right: guide.shape(),
        });
    }
    let (h, w) = stylized.shape();
    if radius >= h.min(w) {
        return Err(Error::InvalidArgument(format!(
            "smoothing radius {radius} must be smaller than min(H, W) = {}",
            h.min(w)
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smoothing eps must be positive, got {eps}"
        )));
    }

    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let src = stylized.channel(c);
            let g = guide.channel(c);
            let mean_g = box_mean(&g, h, w, radius);
            let mean_p = box_mean(&src, h, w, radius);
            let gg: Vec<f64> = g.iter().map(|v| v * v).collect();
            let gp: Vec<f64> = g.iter().zip(&src).map(|(a, b)| a * b).collect();
            let corr_gg = box_mean(&gg, h, w, radius);
            let corr_gp = box_mean(&gp, h, w, radius);

            let mut a = vec![0.0; h * w];
            let mut b = vec![0.0; h * w];
            for i in 0..h * w {
                let var = (corr_gg[i] - mean_g[i] * mean_g[i]).max(0.0);
                let cov = corr_gp[i] - mean_g[i] * mean_p[i];
                a[i] = cov / (var + eps);
                b[i] = mean_p[i] - a[i] * mean_g[i];
            }
            let mean_a = box_mean(&a, h, w, radius);
            let mean_b = box_mean(&b, h, w, radius);
            (0..h * w).map(|i| mean_a[i] * g[i] + mean_b[i]).collect()
        })
        .collect();
    Image::from_channels(h, w, [&planes[0], &planes[1], &planes[2]])
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct double-loop guided filter, two-pass moments per window.
    fn naive_guided(src: &Image, guide: &Image, r: usize, eps: f64) -> Image {
        let (h, w) = src.shape();
        let window = |y: usize, x: usize| {
            let ys = y.saturating_sub(r)..(y + r + 1).min(h);
            let xs = x.saturating_sub(r)..(x + r + 1).min(w);
            ys.flat_map(move |yy| xs.clone().map(move |xx| (yy, xx)))
        };
        let mut out = vec![0.0; h * w * 3];
        for c in 0..3 {
            let mut a = vec![0.0; h * w];
            let mut b = vec![0.0; h * w];
            for y in 0..h {
                for x in 0..w {
                    let cells: Vec<(f64, f64)> = window(y, x)
                        .map(|(yy, xx)| (guide.pixel(yy, xx)[c], src.pixel(yy, xx)[c]))
                        .collect();
                    let n = cells.len() as f64;
                    let mg = cells.iter().map(|p| p.0).sum::<f64>() / n;
                    let mp = cells.iter().map(|p| p.1).sum::<f64>() / n;
                    let var = cells.iter().map(|p| (p.0 - mg).powi(2)).sum::<f64>() / n;
                    let cov = cells.iter().map(|p| (p.0 - mg) * (p.1 - mp)).sum::<f64>() / n;
                    a[y * w + x] = cov / (var + eps);
                    b[y * w + x] = mp - a[y * w + x] * mg;
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let cells: Vec<usize> = window(y, x).map(|(yy, xx)| yy * w + xx).collect();
                    let n = cells.len() as f64;
                    let ma = cells.iter().map(|&i| a[i]).sum::<f64>() / n;
                    let mb = cells.iter().map(|&i| b[i]).sum::<f64>() / n;
                    out[(y * w + x) * 3 + c] = ma * guide.pixel(y, x)[c] + mb;
                }
            }
        }
        Image::from_clamped(h, w, out).unwrap()
    }

    fn noisy(h: usize, w: usize, seed: u64) -> Image {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
    }

    #[test]
    fn constant_input_is_fixed() {
        let src = Image::filled(9, 7, [0.3, 0.6, 0.9]).unwrap();
        let guide = noisy(9, 7, 1);
        let out = smooth(&src, &guide, 2, 1e-2).unwrap();
        for (a, b) in out.as_slice().iter().zip(src.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn large_eps_tends_to_box_average() {
        let src = noisy(10, 10, 2);
        let guide = noisy(10, 10, 3);
        let out = smooth(&src, &guide, 2, 1e12).unwrap();
        for c in 0..3 {
            let once = box_mean(&src.channel(c), 10, 10, 2);
            let twice = box_mean(&once, 10, 10, 2);
            for (a, b) in out.channel(c).iter().zip(&twice) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matches_naive_on_ramp_guide() {
        let guide = Image::from_fn(8, 8, |y, x| {
            let v = (y * 8 + x) as f64 / 63.0;
            [v, 1.0 - v, 0.5 * v]
        })
        .unwrap();
        let src = noisy(8, 8, 4);
        for r in [1, 2, 4] {
            let fast = smooth(&src, &guide, r, 1e-2).unwrap();
            let slow = naive_guided(&src, &guide, r, 1e-2);
            for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
                assert!((a - b).abs() < 1e-6, "radius {r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_oversized_radius_and_mismatch() {
        let a = noisy(4, 6, 5);
        assert!(smooth(&a, &a, 4, 1e-2).is_err());
        assert!(smooth(&a, &a, 3, 1e-2).is_ok());
        let b = noisy(6, 4, 6);
        assert!(matches!(smooth(&a, &b, 1, 1e-2), Err(Error::ShapeMismatch { .. })));
    }
}
