use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use dstyle_core::fid::{extract_dataset, per_class_fid, FeatureExtractor, FidReport};
use dstyle_core::pipeline::{round_seed, run_algorithm1, CoarseMap, PipelineConfig};
use dstyle_core::randomize::{class_shift, shift_hue_regions};
use dstyle_core::segmeval::evaluate;
use dstyle_core::{
    class_frequencies, color_feature_extractor, load_image, load_manifest, load_mask, read_features, save_image,
    save_mask, stylize_pair, write_features, CentroidSegmenter, DatasetManifest, Error, FeatureSet, Image, LabelMask,
    LabeledPair, ManifestRecord, StylizeConfig,
};

use crate::{DsArgs, EvalArgs, ExtractArgs, FidArgs, RandomizeArgs, Side, SmoothArgs, StylizeArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_io() => 3,
            CliError::Core(e) if matches!(e.root(), Error::EmptyManifest(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn stylize_config(smooth: &SmoothArgs, num_styles: usize, seed: u64) -> StylizeConfig {
    StylizeConfig {
        num_styles,
        smoothing_enabled: !smooth.no_smooth,
        smoothing_radius: smooth.smooth_radius,
        smoothing_eps: smooth.smooth_eps,
        min_region_px: smooth.min_region_px,
        seed,
    }
}

fn labeled(manifest: &DatasetManifest, what: &str) -> Result<Vec<LabeledPair>> {
    if let Some(i) = manifest.records.iter().position(|r| r.mask.is_none()) {
        return Err(CliError::Core(Error::InvalidArgument(format!(
            "{what} record {} ({}) has no mask",
            i + 1,
            manifest.records[i].image.display()
        ))));
    }
    Ok(manifest.load_pairs(true)?)
}

pub fn stylize(args: StylizeArgs) -> Result<()> {
    let pair = |image: &Path, mask: &Option<PathBuf>| -> Result<LabeledPair> {
        let image = load_image(image)?;
        let mask = mask.as_deref().map(load_mask).transpose()?;
        Ok(LabeledPair::new(image, mask)?)
    };
    let content = pair(&args.content, &args.content_mask)?;
    let style = pair(&args.style, &args.style_mask)?;
    let cfg = stylize_config(&args.smooth, 1, args.seed);
    let out = stylize_pair(&content, &style, &cfg)?;
    save_image(&out, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

pub fn ds(args: DsArgs) -> Result<()> {
    let synthetic = labeled(&load_manifest(&args.synthetic_manifest)?, "synthetic")?;
    // Real-domain masks are never opened.
    let real = load_manifest(&args.real_manifest)?.load_images()?;
    let eval = match &args.eval_manifest {
        Some(p) => Some(labeled(&load_manifest(p)?, "evaluation")?),
        None => None,
    };
    let mut cfg = PipelineConfig::new(&args.out);
    cfg.iterations = args.t;
    cfg.stylize = stylize_config(&args.smooth, args.n, args.seed);
    cfg.coarse_map = args.coarse_map.as_deref().map(CoarseMap::load).transpose()?;
    cfg.seed = args.seed;
    cfg.keep_intermediate = args.keep_intermediate;
    cfg.record_timings = !args.no_timings;

    let run = run_algorithm1(&synthetic, &real, &cfg, eval.as_deref())?;
    for entry in &run.log {
        let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        eprintln!(
            "iter {}: {} records, mean_iou {}, pixel_acc {}, {:.2}s",
            entry.t,
            entry.dataset_size,
            fmt_opt(entry.mean_iou),
            fmt_opt(entry.pixel_acc),
            entry.seconds
        );
    }
    eprintln!("wrote {} datasets under {}", run.datasets.len(), args.out.display());
    Ok(())
}

pub fn randomize(args: RandomizeArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let pairs = labeled(&manifest, "input")?;
    create_dir(&args.out.join("images"))?;
    create_dir(&args.out.join("masks"))?;
    let mut records = Vec::with_capacity(pairs.len());
    let outputs: Vec<(Image, &LabelMask)> = {
        use rayon::prelude::*;
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let seed = round_seed(args.seed, i);
                let img = match args.fixed_shift {
                    Some(d) => shift_hue_regions(p, |_| d)?,
                    None => shift_hue_regions(p, |label| class_shift(seed, label))?,
                };
                Ok((img, p.mask().expect("checked")))
            })
            .collect::<std::result::Result<_, Error>>()?
    };
    for (i, (img, mask)) in outputs.iter().enumerate() {
        let rec = ManifestRecord {
            image: PathBuf::from(format!("images/{i:06}.png")),
            mask: Some(PathBuf::from(format!("masks/{i:06}.png"))),
        };
        save_image(img, args.out.join(&rec.image))?;
        save_mask(mask, args.out.join(rec.mask.as_ref().unwrap()))?;
        records.push(rec);
    }
    let out_manifest = DatasetManifest {
        root: args.out.clone(),
        records,
    };
    out_manifest.write(args.out.join("manifest.jsonl"))?;
    eprintln!("wrote {} images under {}", out_manifest.len(), args.out.display());
    Ok(())
}

enum ExtractorSpec {
    Color(usize),
    File(PathBuf),
}

fn parse_extractor(spec: &str) -> Result<ExtractorSpec> {
    match spec.split_once(':') {
        Some(("color", r)) => r
            .parse()
            .map(ExtractorSpec::Color)
            .map_err(|_| CliError::Usage(format!("bad color radius in --extractor {spec:?}"))),
        Some(("file", dir)) if !dir.is_empty() => Ok(ExtractorSpec::File(PathBuf::from(dir))),
        _ => Err(CliError::Usage(format!(
            "--extractor must be color:<radius> or file:<dir>, got {spec:?}"
        ))),
    }
}

fn dataset_features(pairs: &[LabeledPair], extractor: &dyn FeatureExtractor) -> Result<FeatureSet> {
    let items = pairs.iter().map(|p| (p.image(), p.mask().expect("labeled")));
    Ok(extract_dataset(extractor, items)?)
}

pub fn fid(args: FidArgs) -> Result<()> {
    let spec = parse_extractor(&args.extractor)?;
    let a = labeled(&load_manifest(&args.a)?, "dataset A")?;
    let b = labeled(&load_manifest(&args.b)?, "dataset B")?;
    let (fa, fb) = match spec {
        ExtractorSpec::Color(r) => {
            let ex = color_feature_extractor(r);
            (dataset_features(&a, &ex)?, dataset_features(&b, &ex)?)
        }
        ExtractorSpec::File(dir) => (read_features(dir.join("a.dsft"))?, read_features(dir.join("b.dsft"))?),
    };
    let weight_side = match args.weights_from {
        Side::A => &a,
        Side::B => &b,
    };
    let freqs: BTreeMap<u8, f64> = class_frequencies(weight_side.iter().map(|p| p.mask().expect("labeled")))?;
    let report = FidReport::new(per_class_fid(&fa, &fb, args.min_samples)?, &freqs)?;

    write_text(&args.out_csv, &report.to_csv())?;
    let json_path = args.out_csv.with_extension("json");
    write_text(&json_path, &(report.to_json() + "\n"))?;
    println!("weighted FID {}", report.weighted_average);
    if !report.skipped.is_empty() {
        eprintln!("skipped classes: {:?}", report.skipped);
    }
    Ok(())
}

pub fn extract(args: ExtractArgs) -> Result<()> {
    let pairs = labeled(&load_manifest(&args.manifest)?, "input")?;
    let features = dataset_features(&pairs, &color_feature_extractor(args.radius))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_features(&features, &args.out)?;
    eprintln!("wrote {} feature rows to {}", features.len(), args.out.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let seg = CentroidSegmenter::load(&args.segmenter)?;
    let pairs = labeled(&load_manifest(&args.manifest)?, "evaluation")?;
    let items: Vec<(&Image, &LabelMask)> = pairs.iter().map(|p| (p.image(), p.mask().expect("labeled"))).collect();
    let metrics = evaluate(&seg, &items, args.classes)?;
    let text = serde_json::to_string_pretty(&metrics).map_err(Error::from)? + "\n";
    write_text(&args.out_json, &text)?;
    println!("mean_iou {} pixel_acc {}", metrics.mean_iou, metrics.pixel_acc);
    Ok(())
}
