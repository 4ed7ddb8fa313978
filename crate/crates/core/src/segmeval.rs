//! Nearest-centroid segmenter and confusion-matrix metrics.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{check_shapes, Image, LabelMask, IGNORE};
use crate::stylize::box_mean;

/// Something that turns an image into a label mask and can be learned from labeled images.
pub trait Segmenter: Send + Sync {
    fn predict(&self, image: &Image) -> Result<LabelMask>;
}

/// 3x3 clipped box blur applied before both training and prediction.
pub fn blur3(image: &Image) -> Vec<[f64; 3]> {
    let (h, w) = image.shape();
    let planes: Vec<Vec<f64>> = (0..3).map(|c| box_mean(&image.channel(c), h, w, 1)).collect();
    (0..h * w).map(|i| [planes[0][i], planes[1][i], planes[2][i]]).collect()
}

/// Classifies each blurred pixel by its nearest class-mean color.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CentroidSegmenter {
    centroids: BTreeMap<u8, [f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct SegmenterFile {
    classes: BTreeMap<String, [f64; 3]>,
}

impl CentroidSegmenter {
    pub fn from_centroids(centroids: BTreeMap<u8, [f64; 3]>) -> Result<Self> {
        if centroids.contains_key(&IGNORE) {
            return Err(Error::InvalidArgument("centroid for reserved label 255".into()));
        }
        Ok(Self { centroids })
    }

    pub fn is_trained(&self) -> bool {
        !self.centroids.is_empty()
    }

    pub fn centroids(&self) -> &BTreeMap<u8, [f64; 3]> {
        &self.centroids
    }

    /// One past the largest label with a centroid.
    pub fn num_classes(&self) -> usize {
        self.centroids.keys().next_back().map_or(0, |&l| l as usize + 1)
    }

    pub fn to_json(&self) -> String {
        // Sort numerically, not lexically, so the file reads in label order.
        let mut out = String::from("{\"classes\":{");
        for (i, (l, c)) in self.centroids.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!(
                "\"{l}\":{}",
                serde_json::to_string(c).expect("finite centroid")
            ));
        }
        out.push_str("}}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SegmenterFile = serde_json::from_str(text)?;
        let mut centroids = BTreeMap::new();
        for (k, v) in file.classes {
            let label: u8 = k
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("segmenter class id {k:?} is not in 0..=254")))?;
            centroids.insert(label, v);
        }
        Self::from_centroids(centroids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn nearest(&self, px: [f64; 3]) -> u8 {
        let mut best = (f64::INFINITY, IGNORE);
        for (&label, c) in &self.centroids {
            let d: f64 = (0..3).map(|k| (px[k] - c[k]).powi(2)).sum();
            if d < best.0 {
                best = (d, label);
            }
        }
        best.1
    }
}

impl Segmenter for CentroidSegmenter {
    fn predict(&self, image: &Image) -> Result<LabelMask> {
        predict_mask(self, image)
    }
}

/// Per-label color sums over one image.
fn partial_sums(image: &Image, mask: &LabelMask) -> Result<Vec<([f64; 3], u64)>> {
    check_shapes("segmenter training", image, mask)?;
    let mut sums = vec![([0.0; 3], 0u64); 255];
    for (px, &l) in blur3(image).iter().zip(mask.as_slice()) {
        if l == IGNORE {
            continue;
        }
        let s = &mut sums[l as usize];
        for (acc, v) in s.0.iter_mut().zip(px) {
            *acc += v;
        }
        s.1 += 1;
    }
    Ok(sums)
}

/// Fits one centroid per label: the mean blurred color over all its pixels.
///
/// Per-image sums are computed in parallel and merged in dataset order, so
/// the result does not depend on the worker count.
pub fn train_segmenter(dataset: &[(&Image, &LabelMask)]) -> Result<CentroidSegmenter> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let parts: Vec<_> = dataset
        .par_iter()
        .map(|(img, mask)| partial_sums(img, mask))
        .collect::<Result<_>>()?;
    let mut total = vec![([0.0; 3], 0u64); 255];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            for k in 0..3 {
                t.0[k] += p.0[k];
            }
            t.1 += p.1;
        }
    }
    let centroids: BTreeMap<u8, [f64; 3]> = total
        .iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(l, (s, n))| (l as u8, s.map(|v| v / *n as f64)))
        .collect();
    if centroids.is_empty() {
        return Err(Error::InvalidArgument(
            "training masks contain only ignored pixels".into(),
        ));
    }
    Ok(CentroidSegmenter { centroids })
}

/// Labels each blurred pixel with its nearest centroid; ties go to the smaller label.
pub fn predict_mask(seg: &CentroidSegmenter, image: &Image) -> Result<LabelMask> {
    if !seg.is_trained() {
        return Err(Error::Untrained);
    }
    let labels = blur3(image).into_iter().map(|px| seg.nearest(px)).collect();
    LabelMask::new(image.height(), image.width(), labels)
}

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes == 0 || num_classes > IGNORE as usize {
            return Err(Error::InvalidArgument(format!(
                "number of classes must be in 1..=255, got {num_classes}"
            )));
        }
        Ok(Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        })
    }

    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        let mut cm = Self::new(num_classes)?;
        if counts.len() != num_classes * num_classes {
            return Err(Error::DimensionMismatch(format!(
                "{} counts for {num_classes} classes",
                counts.len()
            )));
        }
        cm.counts = counts;
        Ok(cm)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one prediction/ground-truth pair; ignored ground-truth pixels are skipped.
    pub fn accumulate(&mut self, pred: &LabelMask, truth: &LabelMask) -> Result<()> {
        if pred.shape() != truth.shape() {
            return Err(Error::ShapeMismatch {
                context: "confusion",
                left_name: "prediction",
                left: pred.shape(),
                right_name: "ground truth",
                right: truth.shape(),
            });
        }
        let k = self.num_classes;
        let check = |label: u8| {
            if (label as usize) < k {
                Ok(label as usize)
            } else {
                Err(Error::LabelOutOfRange { label, num_classes: k })
            }
        };
        let mut local = vec![0u64; k * k];
        for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
            if t == IGNORE {
                continue;
            }
            local[check(t)? * k + check(p)?] += 1;
        }
        for (c, l) in self.counts.iter_mut().zip(local) {
            *c += l;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::DimensionMismatch("confusion matrices of different sizes".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}

pub fn confusion(pred: &LabelMask, truth: &LabelMask, num_classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(num_classes)?;
    cm.accumulate(pred, truth)?;
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegMetrics {
    pub per_class_iou: BTreeMap<u8, f64>,
    pub mean_iou: f64,
    pub pixel_acc: f64,
}

/// Per-class IoU, mean IoU over classes with a non-zero union, and pixel accuracy.
pub fn metrics(cm: &ConfusionMatrix) -> Result<SegMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let k = cm.num_classes();
    let mut per_class_iou = BTreeMap::new();
    let mut diag = 0u64;
    for l in 0..k {
        let tp = cm.get(l, l);
        diag += tp;
        let row: u64 = (0..k).map(|j| cm.get(l, j)).sum();
        let col: u64 = (0..k).map(|i| cm.get(i, l)).sum();
        let union = row + col - tp;
        if union > 0 {
            per_class_iou.insert(l as u8, tp as f64 / union as f64);
        }
    }
    let mean_iou = per_class_iou.values().sum::<f64>() / per_class_iou.len() as f64;
    Ok(SegMetrics {
        per_class_iou,
        mean_iou,
        pixel_acc: diag as f64 / total as f64,
    })
}

/// Predicts every image and scores the predictions against ground truth.
pub fn evaluate(seg: &dyn Segmenter, dataset: &[(&Image, &LabelMask)], num_classes: usize) -> Result<SegMetrics> {
    let parts: Vec<ConfusionMatrix> = dataset
        .par_iter()
        .map(|(img, truth)| confusion(&seg.predict(img)?, truth, num_classes))
        .collect::<Result<_>>()?;
    let mut cm = ConfusionMatrix::new(num_classes)?;
    for p in &parts {
        cm.merge(p)?;
    }
    metrics(&cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_class_centroid() {
        let img = Image::filled(4, 4, [0.2, 0.4, 0.6]).unwrap();
        let mask = LabelMask::filled(4, 4, 0).unwrap();
        let seg = train_segmenter(&[(&img, &mask)]).unwrap();
        assert_eq!(seg.centroids().len(), 1);
        for (a, b) in seg.centroids()[&0].iter().zip([0.2, 0.4, 0.6]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn two_color_image() -> (Image, LabelMask) {
        let img = Image::from_fn(6, 6, |_, x| if x < 3 { [0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9] }).unwrap();
        let mask = LabelMask::from_fn(6, 6, |_, x| if x < 3 { 2 } else { 5 }).unwrap();
        (img, mask)
    }

    #[test]
    fn separable_classes_are_recovered() {
        let (img, mask) = two_color_image();
        let seg = train_segmenter(&[(&img, &mask)]).unwrap();
        assert_eq!(seg.num_classes(), 6);
        assert_eq!(predict_mask(&seg, &img).unwrap(), mask);
    }

    #[test]
    fn pixel_count_weighted_centroid() {
        // 2x2 image: the 3x3 blur window covers every pixel for each position,
        // so every blurred pixel equals the global mean.
        let img = Image::new(2, 2, vec![0.0, 0.0, 0.0, 0.4, 0.4, 0.4, 0.8, 0.8, 0.8, 0.4, 0.0, 0.8]).unwrap();
        let mask = LabelMask::new(2, 2, vec![0, 0, 0, 1]).unwrap();
        let seg = train_segmenter(&[(&img, &mask)]).unwrap();
        let mean = [0.4, 0.3, 0.5];
        for l in [0, 1] {
            for (a, b) in seg.centroids()[&l].iter().zip(mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // Two images: centroid is pixel-count weighted across the dataset.
        let a = Image::filled(3, 3, [0.0; 3]).unwrap();
        let b = Image::filled(1, 1, [1.0; 3]).unwrap();
        let ma = LabelMask::filled(3, 3, 0).unwrap();
        let mb = LabelMask::filled(1, 1, 0).unwrap();
        let seg = train_segmenter(&[(&a, &ma), (&b, &mb)]).unwrap();
        assert!((seg.centroids()[&0][0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_smaller_label() {
        let seg =
            CentroidSegmenter::from_centroids(BTreeMap::from([(5, [0.0, 0.0, 0.0]), (2, [1.0, 0.0, 0.0])])).unwrap();
        let img = Image::filled(1, 1, [0.5, 0.0, 0.0]).unwrap();
        assert_eq!(predict_mask(&seg, &img).unwrap().get(0, 0), 2);
    }

    #[test]
    fn boundary_pixel_uses_blurred_value() {
        // 1x3 strip: black, black, white. Blurred middle = 1/3, blurred right = 1/2.
        let img = Image::new(1, 3, vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let seg = CentroidSegmenter::from_centroids(BTreeMap::from([(0, [0.0; 3]), (1, [0.6; 3])])).unwrap();
        let pred = predict_mask(&seg, &img).unwrap();
        // 1/3 is closer to 0.6 (0.267) than to 0 (0.333); 0 stays 0; 1/2 goes to 1.
        assert_eq!(pred.as_slice(), &[0, 1, 1]);
    }

    #[test]
    fn training_and_prediction_errors() {
        assert!(train_segmenter(&[]).is_err());
        let img = Image::filled(2, 2, [0.5; 3]).unwrap();
        let ign = LabelMask::filled(2, 2, IGNORE).unwrap();
        assert!(train_segmenter(&[(&img, &ign)]).is_err());
        assert!(matches!(
            predict_mask(&CentroidSegmenter::default(), &img),
            Err(Error::Untrained)
        ));
    }

    #[test]
    fn json_round_trip() {
        let (img, mask) = two_color_image();
        let seg = train_segmenter(&[(&img, &mask)]).unwrap();
        let text = seg.to_json();
        assert!(text.starts_with("{\"classes\":{\"2\":["));
        assert_eq!(CentroidSegmenter::from_json(&text).unwrap(), seg);
        assert!(CentroidSegmenter::from_json("{\"classes\":{\"300\":[0,0,0]}}").is_err());
    }

    #[test]
    fn confusion_examples() {
        let truth = LabelMask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let cm = confusion(&truth, &truth, 2).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (2, 0, 0, 2));

        let ign = LabelMask::filled(2, 2, IGNORE).unwrap();
        assert_eq!(confusion(&truth, &ign, 2).unwrap().total(), 0);

        let pred = LabelMask::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let truth = LabelMask::new(2, 2, vec![0, 1, 1, IGNORE]).unwrap();
        let cm = confusion(&pred, &truth, 2).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 0, 1, 1));

        let bad = LabelMask::new(2, 2, vec![0, 3, 1, 1]).unwrap();
        assert!(matches!(
            confusion(&bad, &truth, 2),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn metric_examples() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.per_class_iou, BTreeMap::from([(0, 0.6), (1, 0.6)]));
        assert_eq!(m.mean_iou, 0.6);
        assert_eq!(m.pixel_acc, 0.75);

        let perfect = ConfusionMatrix::from_counts(3, vec![4, 0, 0, 0, 2, 0, 0, 0, 0]).unwrap();
        let m = metrics(&perfect).unwrap();
        assert_eq!(m.per_class_iou.len(), 2);
        assert_eq!((m.mean_iou, m.pixel_acc), (1.0, 1.0));

        let disjoint = ConfusionMatrix::from_counts(2, vec![0, 4, 0, 2]).unwrap();
        assert_eq!(metrics(&disjoint).unwrap().per_class_iou[&0], 0.0);

        assert!(metrics(&ConfusionMatrix::new(2).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_permutation_invariant(counts in proptest::collection::vec(0u64..50, 9), perm_seed in 0usize..6) {
            let cm = ConfusionMatrix::from_counts(3, counts.clone()).unwrap();
            prop_assume!(cm.total() > 0);
            let m = metrics(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.pixel_acc));
            prop_assert!(m.per_class_iou.values().all(|v| (0.0..=1.0).contains(v)));

            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let p = perms[perm_seed];
            let mut permuted = vec![0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    permuted[p[i] * 3 + p[j]] = counts[i * 3 + j];
                }
            }
            let mp = metrics(&ConfusionMatrix::from_counts(3, permuted).unwrap()).unwrap();
            prop_assert_eq!(m.pixel_acc, mp.pixel_acc);
            prop_assert!((m.mean_iou - mp.mean_iou).abs() < 1e-12);
            for (l, v) in &m.per_class_iou {
                prop_assert_eq!(Some(v), mp.per_class_iou.get(&(p[*l as usize] as u8)));
            }
        }
    }
}
