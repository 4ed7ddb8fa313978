//! Shared fixtures: toy street-scene corpora, dataset writers and tree hashing.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dstyle_core::{save_image, save_mask, DatasetManifest, Image, LabelMask, LabeledPair, ManifestRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub const NUM_CLASSES: usize = 3;

/// Real-domain class color distributions: mean and a lower-triangular factor.
pub const CLASS_MEANS: [[f64; 3]; NUM_CLASSES] = [[0.35, 0.33, 0.32], [0.55, 0.70, 0.85], [0.30, 0.55, 0.25]];
pub const CLASS_FACTORS: [[[f64; 3]; 3]; NUM_CLASSES] = [
    [[0.04, 0.0, 0.0], [0.03, 0.02, 0.0], [0.025, 0.01, 0.02]],
    [[0.03, 0.0, 0.0], [0.02, 0.025, 0.0], [0.01, 0.015, 0.03]],
    [[0.05, 0.0, 0.0], [0.02, 0.04, 0.0], [0.0, 0.02, 0.03]],
];

/// Global color distortion separating the synthetic domain from the real one.
pub const DISTORT_MATRIX: [[f64; 3]; 3] = [[0.7, 0.3, 0.0], [-0.1, 0.8, 0.1], [0.1, -0.1, 0.6]];
pub const DISTORT_OFFSET: [f64; 3] = [0.1, 0.08, 0.15];

pub fn scene_mask(rng: &mut ChaCha8Rng, size: usize) -> LabelMask {
    let horizon = rng.random_range(size / 4..size / 2);
    let objects: Vec<(usize, usize, usize, usize)> = (0..rng.random_range(1..4))
        .map(|_| {
            let w = rng.random_range(size / 6..size / 3);
            let h = rng.random_range(size / 6..size / 3);
            (rng.random_range(0..size - w), rng.random_range(horizon..size - h), w, h)
        })
        .collect();
    LabelMask::from_fn(size, size, |y, x| {
        if objects
            .iter()
            .any(|&(ox, oy, w, h)| x >= ox && x < ox + w && y >= oy && y < oy + h)
        {
            2
        } else if y < horizon {
            1
        } else {
            0
        }
    })
    .unwrap()
}

pub fn real_scene(rng: &mut ChaCha8Rng, size: usize) -> LabeledPair {
    let mask = scene_mask(rng, size);
    let image = Image::from_fn(size, size, |y, x| {
        let l = mask.get(y, x) as usize;
        let z: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let f = CLASS_FACTORS[l];
        std::array::from_fn(|i| CLASS_MEANS[l][i] + (0..3).map(|j| f[i][j] * z[j]).sum::<f64>())
    })
    .unwrap();
    LabeledPair::new(image, Some(mask)).unwrap()
}

pub fn distort(image: &Image) -> Image {
    Image::from_fn(image.height(), image.width(), |y, x| {
        let p = image.pixel(y, x);
        std::array::from_fn(|i| DISTORT_OFFSET[i] + (0..3).map(|j| DISTORT_MATRIX[i][j] * p[j]).sum::<f64>())
    })
    .unwrap()
}

pub struct Corpus {
    pub real: Vec<LabeledPair>,
    pub synthetic: Vec<LabeledPair>,
    pub heldout: Vec<LabeledPair>,
}

/// `n` real scenes, the same scenes under the global distortion, and
/// `heldout` further labeled real scenes.
pub fn corpus(n: usize, heldout: usize, size: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real: Vec<LabeledPair> = (0..n).map(|_| real_scene(&mut rng, size)).collect();
    let synthetic = real
        .iter()
        .map(|p| LabeledPair::new(distort(p.image()), p.mask().cloned()).unwrap())
        .collect();
    let heldout = (0..heldout).map(|_| real_scene(&mut rng, size)).collect();
    Corpus {
        real,
        synthetic,
        heldout,
    }
}

/// Writes `pairs` as PNGs plus a manifest; returns the manifest path.
pub fn write_dataset(dir: &Path, pairs: &[LabeledPair], with_masks: bool) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut records = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let image = PathBuf::from(format!("img_{i:03}.png"));
        save_image(p.image(), dir.join(&image)).unwrap();
        let mask = match (with_masks, p.mask()) {
            (true, Some(m)) => {
                let path = PathBuf::from(format!("mask_{i:03}.png"));
                save_mask(m, dir.join(&path)).unwrap();
                Some(path)
            }
            _ => None,
        };
        records.push(ManifestRecord { image, mask });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        records,
    };
    let path = dir.join("manifest.jsonl");
    manifest.write(&path).unwrap();
    path
}

pub fn dstyle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dstyle"))
        .args(args)
        .output()
        .expect("dstyle binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// SHA-256 over every file's relative path and contents, in sorted path order.
pub fn tree_hash(root: &Path) -> String {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        hasher.update(f.strip_prefix(root).unwrap().to_str().unwrap().as_bytes());
        hasher.update([0]);
        hasher.update(std::fs::read(&f).unwrap());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
