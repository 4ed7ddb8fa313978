//! Iterated stylize → segment loop.
//!
//! Round 0 stylizes every synthetic image against randomly drawn real images
//! with no semantic guidance. Each later round trains a segmenter on the
//! previous stylized set, predicts masks for the real images, and stylizes
//! again region by region. Every dataset and segmenter is written to disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{save_image, save_mask, DatasetManifest, Image, LabelMask, LabeledPair, ManifestRecord, IGNORE};
use crate::segmeval::{evaluate, predict_mask, train_segmenter, CentroidSegmenter, SegMetrics, Segmenter};
use crate::stylize::{ds_dataset, StylizeConfig, StylizedRecord};

/// Label relabeling table used to coarsen masks before stylization.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoarseMap(pub BTreeMap<u8, u8>);

impl CoarseMap {
    /// Parses `{"<label>": <superlabel>, ...}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BTreeMap<String, u8> = serde_json::from_str(text)?;
        let mut table = BTreeMap::new();
        for (k, v) in raw {
            let from: u8 = k
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("coarse map key {k:?} is not a class id")))?;
            if from == IGNORE || v == IGNORE {
                return Err(Error::InvalidArgument("coarse map may not use label 255".into()));
            }
            table.insert(from, v);
        }
        Ok(CoarseMap(table))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Relabels every pixel through `table`; ignored pixels stay ignored.
pub fn coarsen_mask(mask: &LabelMask, table: &CoarseMap) -> Result<LabelMask> {
    if let Some(missing) = mask.labels().into_iter().find(|l| !table.0.contains_key(l)) {
        return Err(Error::InvalidArgument(format!(
            "label {missing} occurs in a mask but not in the coarse map"
        )));
    }
    Ok(mask.map(|l| if l == IGNORE { IGNORE } else { table.0[&l] }))
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    /// Number of mask-guided rounds after the unguided one.
    pub iterations: usize,
    /// `stylize.seed` is ignored; each round derives its seed from `seed`.
    pub stylize: StylizeConfig,
    pub coarse_map: Option<CoarseMap>,
    pub output_root: PathBuf,
    pub seed: u64,
    /// When false, a round's images and masks are deleted once the next round exists.
    pub keep_intermediate: bool,
    /// When false, `seconds` is written as 0 so the whole output tree is reproducible.
    pub record_timings: bool,
}

impl PipelineConfig {
    pub fn new(output_root: impl Into<PathBuf>) -> Self {
        Self {
            iterations: 2,
            stylize: StylizeConfig::default(),
            coarse_map: None,
            output_root: output_root.into(),
            seed: 0,
            keep_intermediate: true,
            record_timings: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationLog {
    pub t: usize,
    pub dataset_size: usize,
    pub mean_iou: Option<f64>,
    pub pixel_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Serialize)]
struct RunLogFile<'a> {
    iterations: &'a [IterationLog],
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    /// Manifest path of each stylized dataset, in round order.
    pub datasets: Vec<PathBuf>,
    pub segmenters: Vec<CentroidSegmenter>,
    pub log: Vec<IterationLog>,
    /// Evaluation metrics of each segmenter, when an evaluation set was given.
    pub metrics: Vec<Option<SegMetrics>>,
}

/// Seed for the style draws of round `t`.
pub fn round_seed(seed: u64, t: usize) -> u64 {
    seed.wrapping_add((t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn iteration_dir(root: &Path, t: usize) -> PathBuf {
    root.join(format!("iter_{t}"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes `records` as `images/`, `masks/` and `manifest.jsonl` under `dir`.
pub fn write_dataset(dir: &Path, records: &[StylizedRecord]) -> Result<PathBuf> {
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("masks"))?;
    let entries: Vec<ManifestRecord> = (0..records.len())
        .map(|i| ManifestRecord {
            image: PathBuf::from(format!("images/{i:06}.png")),
            mask: Some(PathBuf::from(format!("masks/{i:06}.png"))),
        })
        .collect();
    records.par_iter().zip(&entries).try_for_each(|(r, e)| -> Result<()> {
        save_image(&r.image, dir.join(&e.image))?;
        save_mask(&r.mask, dir.join(e.mask.as_ref().expect("mask path set")))
    })?;
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        records: entries,
    };
    let path = dir.join("manifest.jsonl");
    manifest.write(&path)?;
    Ok(path)
}

fn remove_dataset(dir: &Path) -> Result<()> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("manifest.jsonl");
    std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))
}

fn within(t: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Iteration {
        iteration: t,
        source: Box::new(e),
    }
}

fn eval_classes(seg: &CentroidSegmenter, eval: &[LabeledPair]) -> usize {
    let max_eval = eval
        .iter()
        .filter_map(|p| p.mask())
        .flat_map(|m| m.labels())
        .max()
        .map_or(0, |l| l as usize + 1);
    seg.num_classes().max(max_eval).max(1)
}

/// Runs the full stylize/segment loop.
///
/// `synthetic` must carry ground-truth masks. `real` is used for its images
/// only. With `iterations == 0` only the unguided round and its segmenter are
/// produced; otherwise rounds `0..=iterations` each train a segmenter and
/// emit the next stylized dataset, so there are `iterations + 2` datasets.
pub fn run_algorithm1(
    synthetic: &[LabeledPair],
    real: &[Image],
    cfg: &PipelineConfig,
    eval: Option<&[LabeledPair]>,
) -> Result<PipelineRun> {
    if synthetic.is_empty() || real.is_empty() {
        return Err(Error::InvalidArgument(
            "synthetic and real datasets must be non-empty".into(),
        ));
    }
    let truth: Vec<&LabelMask> = synthetic
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.mask()
                .ok_or_else(|| Error::InvalidArgument(format!("synthetic record {i} has no mask")))
        })
        .collect::<Result<_>>()?;
    if let Some(eval) = eval {
        if eval.iter().any(|p| p.mask().is_none()) {
            return Err(Error::InvalidArgument("evaluation records need masks".into()));
        }
    }
    let coarsen = |m: &LabelMask| match &cfg.coarse_map {
        Some(table) => coarsen_mask(m, table),
        None => Ok(m.clone()),
    };
    let content_guided: Vec<LabeledPair> = synthetic
        .iter()
        .zip(&truth)
        .map(|(p, m)| LabeledPair::new(p.image().clone(), Some(coarsen(m)?)))
        .collect::<Result<_>>()?;

    let root = &cfg.output_root;
    create_dir(root)?;
    let stylize_cfg = |t: usize| StylizeConfig {
        seed: round_seed(cfg.seed, t),
        ..cfg.stylize.clone()
    };
    let with_truth = |mut records: Vec<StylizedRecord>| {
        for r in &mut records {
            r.mask = truth[r.content_index].clone();
        }
        records
    };

    let mut run = PipelineRun {
        datasets: Vec::new(),
        segmenters: Vec::new(),
        log: Vec::new(),
        metrics: Vec::new(),
    };

    let mut started = Instant::now();
    let unguided_content: Vec<LabeledPair> = synthetic
        .iter()
        .map(|p| LabeledPair::unlabeled(p.image().clone()))
        .collect();
    let unguided_style: Vec<LabeledPair> = real.iter().cloned().map(LabeledPair::unlabeled).collect();
    let mut current = ds_dataset(&unguided_content, &unguided_style, &stylize_cfg(0))
        .map(with_truth)
        .map_err(within(0))?;
    run.datasets
        .push(write_dataset(&iteration_dir(root, 0), &current).map_err(within(0))?);

    for t in 0..=cfg.iterations {
        let dir = iteration_dir(root, t);
        let pairs: Vec<(&Image, &LabelMask)> = current.iter().map(|r| (&r.image, &r.mask)).collect();
        let seg = train_segmenter(&pairs).map_err(within(t))?;
        seg.save(dir.join("segmenter.json")).map_err(within(t))?;

        let metrics = match eval {
            Some(eval) => {
                let items: Vec<(&Image, &LabelMask)> = eval
                    .iter()
                    .map(|p| (p.image(), p.mask().expect("checked above")))
                    .collect();
                Some(evaluate(&seg as &dyn Segmenter, &items, eval_classes(&seg, eval)).map_err(within(t))?)
            }
            None => None,
        };
        let dataset_size = current.len();

        if cfg.iterations > 0 {
            let style: Vec<LabeledPair> = real
                .par_iter()
                .map(|img| {
                    let predicted = coarsen(&predict_mask(&seg, img)?)?;
                    LabeledPair::new(img.clone(), Some(predicted))
                })
                .collect::<Result<_>>()
                .map_err(within(t))?;
            let next = ds_dataset(&content_guided, &style, &stylize_cfg(t + 1))
                .map(with_truth)
                .map_err(within(t))?;
            run.datasets
                .push(write_dataset(&iteration_dir(root, t + 1), &next).map_err(within(t + 1))?);
            if !cfg.keep_intermediate {
                remove_dataset(&dir).map_err(within(t))?;
            }
            current = next;
        }

        run.log.push(IterationLog {
            t,
            dataset_size,
            mean_iou: metrics.as_ref().map(|m| m.mean_iou),
            pixel_acc: metrics.as_ref().map(|m| m.pixel_acc),
            seconds: if cfg.record_timings {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
        run.metrics.push(metrics);
        run.segmenters.push(seg);
        started = Instant::now();
    }

    let log_path = root.join("run_log.json");
    let text = serde_json::to_string_pretty(&RunLogFile { iterations: &run.log })? + "\n";
    std::fs::write(&log_path, text).map_err(|e| Error::io(&log_path, e))?;
    Ok(run)
}
