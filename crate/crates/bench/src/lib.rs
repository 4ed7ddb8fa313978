//! Deterministic fixtures shared by the criterion benches.

use dstyle_core::{Image, LabelMask, LabeledPair, Matrix};

/// SplitMix64; enough for reproducible bench inputs without an RNG dependency.
pub struct Noise(u64);

impl Noise {
    pub fn new(seed: u64) -> Self {
        Noise(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Symmetric positive definite `n × n` matrix.
pub fn spd(n: usize, seed: u64) -> Matrix {
    let mut rng = Noise::new(seed);
    let g = Matrix::from_row_major(n, (0..n * n).map(|_| rng.unit() - 0.5).collect()).unwrap();
    g.matmul(&g.transpose()).add_diagonal(1e-3).symmetrized()
}

/// A three-class scene: sky band, road, and a block, each with its own
/// base color plus uniform noise.
pub fn scene(size: usize, seed: u64) -> LabeledPair {
    let mut rng = Noise::new(seed);
    let mask = LabelMask::from_fn(size, size, |y, x| {
        if y < size / 3 {
            1
        } else if x > size / 4 && x < size / 2 && y > size / 2 {
            2
        } else {
            0
        }
    })
    .unwrap();
    let base = [[0.35, 0.33, 0.32], [0.55, 0.7, 0.85], [0.3, 0.55, 0.25]];
    let shift = rng.unit() * 0.1;
    let image = Image::from_fn(size, size, |y, x| {
        let b = base[mask.get(y, x) as usize];
        std::array::from_fn(|k| b[k] + shift + 0.1 * (rng.unit() - 0.5))
    })
    .unwrap();
    LabeledPair::new(image, Some(mask)).unwrap()
}
