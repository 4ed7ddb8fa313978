//! Domain stylization for synthetic-to-real image datasets.
//!
//! The crate translates a labeled synthetic dataset toward the color
//! statistics of a real one by mask-guided whitening-coloring transfer, runs
//! the iterated stylize/segment loop, provides a hue-randomization baseline,
//! and audits datasets with per-class Fréchet distances and segmentation
//! metrics.
//!
//! All randomness is seeded and drawn before any parallel fan-out, so results
//! are bit-identical for any worker count.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fid;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod randomize;
pub mod segmeval;
pub mod stylize;

pub use error::{Error, Result};
pub use fid::{
    class_frequencies, color_feature_extractor, extract_dataset, frechet_distance, per_class_fid, weighted_fid,
    ColorFeatureExtractor, FeatureExtractor, FidReport, PerClassFid,
};
pub use io::{
    load_image, load_manifest, load_mask, read_features, save_image, save_mask, write_features, DatasetManifest,
    FeatureSet, Image, LabelMask, LabeledPair, ManifestRecord, IGNORE,
};
pub use linalg::{psd_power, region_stats, sym_eig, trace_sqrt_product, GaussianStats, Matrix, PsdPower, SymEig};
pub use pipeline::{coarsen_mask, run_algorithm1, CoarseMap, PipelineConfig, PipelineRun};
pub use randomize::{hsv_to_rgb, hue_randomize, rgb_to_hsv, shift_hue_regions, HsvPixel};
pub use segmeval::{
    confusion, metrics, predict_mask, train_segmenter, CentroidSegmenter, ConfusionMatrix, SegMetrics, Segmenter,
};
pub use stylize::{all_ones_mask, ds_dataset, smooth, stylize_pair, StylizeConfig, StylizedRecord};
