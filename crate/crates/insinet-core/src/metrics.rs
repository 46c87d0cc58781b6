//! Binary change-detection metrics: confusion counting (optionally masked),
//! the derived scores, and grouped evaluation over benchmark suites.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dataset::{BenchmarkSuite, BiTemporalSample, SuiteKind};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Raw pixel tallies. Additive across samples and tiles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn push(&mut self, predicted: u8, actual: u8) {
        match (predicted, actual) {
            (1, 1) => self.tp += 1,
            (1, 0) => self.fp += 1,
            (0, 0) => self.tn += 1,
            _ => self.fn_ += 1,
        }
    }

    /// Tallies a prediction raster against a label, restricted to `mask`
    /// when given.
    pub fn accumulate(
        &mut self,
        predicted: &Raster<u8>,
        label: &Raster<u8>,
        mask: Option<&Raster<bool>>,
    ) -> Result<()> {
        if !predicted.same_dims(label) {
            return Err(Error::Shape(format!(
                "prediction {}x{} vs label {}x{}",
                predicted.height, predicted.width, label.height, label.width
            )));
        }
        if let Some(m) = mask {
            if m.height != label.height || m.width != label.width {
                return Err(Error::Shape("mask dims differ from label".to_string()));
            }
        }
        for i in 0..label.data.len() {
            if let Some(m) = mask {
                if !m.data[i] {
                    continue;
                }
            }
            let (p, a) = (predicted.data[i], label.data[i]);
            if p > 1 || a > 1 {
                return Err(Error::InvalidInput(
                    "prediction and label must be 0/1".to_string(),
                ));
            }
            self.push(p, a);
        }
        Ok(())
    }
}

/// Derived scores. Any 0/0 ratio is reported as 0 with the corresponding
/// degeneracy flag set, so callers can distinguish "bad" from "undefined".
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub counts: ConfusionCounts,
    pub recall: f64,
    pub precision: f64,
    pub overall_accuracy: f64,
    pub iou: f64,
    pub f1: f64,
    pub recall_degenerate: bool,
    pub precision_degenerate: bool,
    pub iou_degenerate: bool,
    pub f1_degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl MetricReport {
    pub fn from_counts(counts: ConfusionCounts) -> MetricReport {
        let (recall, recall_degenerate) = ratio(counts.tp, counts.tp + counts.fn_);
        let (precision, precision_degenerate) = ratio(counts.tp, counts.tp + counts.fp);
        let (overall_accuracy, _) = ratio(counts.tp + counts.tn, counts.total());
        let (iou, iou_degenerate) = ratio(counts.tp, counts.tp + counts.fp + counts.fn_);
        let f1_den = 2 * counts.tp + counts.fp + counts.fn_;
        let (f1, f1_degenerate) = ratio(2 * counts.tp, f1_den);
        MetricReport {
            counts,
            recall,
            precision,
            overall_accuracy,
            iou,
            f1,
            recall_degenerate,
            precision_degenerate,
            iou_degenerate,
            f1_degenerate,
        }
    }
}

/// A prediction source: binary map for a sample. Implemented by trained
/// models and by test stubs.
pub type PredictFn<'a> = dyn FnMut(&BiTemporalSample) -> Result<Raster<u8>> + 'a;

/// Evaluates a prediction source over a sample set, optionally masked.
pub fn evaluate_samples(
    samples: &[BiTemporalSample],
    mask: Option<&Raster<bool>>,
    predict: &mut PredictFn,
) -> Result<MetricReport> {
    let mut counts = ConfusionCounts::default();
    for sample in samples {
        let pred = predict(sample)?;
        counts.accumulate(&pred, &sample.label, mask)?;
    }
    Ok(MetricReport::from_counts(counts))
}

/// One band of the neighborhood-ring result: masked F1 per corner placement
/// plus their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RingBandScore {
    pub band: String,
    pub corner_f1: Vec<f64>,
    pub mean_f1: f64,
}

/// Evaluates a neighborhood-ring suite. Before scoring, re-verifies the
/// suite's construction contract: the detection region carries bit-identical
/// pixel content in every test set.
pub fn ring_evaluate(
    suite: &BenchmarkSuite,
    predict: &mut PredictFn,
) -> Result<Vec<RingBandScore>> {
    if suite.kind != SuiteKind::NeighborhoodRing {
        return Err(Error::Contract("expected a neighborhood-ring suite".to_string()));
    }
    verify_region_invariance(suite)?;
    let mut out = Vec::with_capacity(suite.groups.len());
    for group in &suite.groups {
        let mut corner_f1 = Vec::with_capacity(group.sets.len());
        for set in &group.sets {
            let mask = set
                .region_mask
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("set {} lacks a region mask", set.name)))?;
            let report = evaluate_samples(&set.samples, Some(mask), predict)?;
            corner_f1.push(report.f1);
        }
        let mean_f1 = corner_f1.iter().sum::<f64>() / corner_f1.len().max(1) as f64;
        out.push(RingBandScore {
            band: group.name.clone(),
            corner_f1,
            mean_f1,
        });
    }
    Ok(out)
}

/// Checks that every set of a ring suite carries the same region content
/// (per region index) in center imagery and labels.
pub fn verify_region_invariance(suite: &BenchmarkSuite) -> Result<()> {
    let mut reference: Vec<Option<(Vec<u8>, Vec<u8>, Vec<u8>)>> = Vec::new();
    for group in &suite.groups {
        for set in &group.sets {
            let (pr, pc) = set
                .region_origin
                .ok_or_else(|| Error::Contract("ring set lacks a region origin".to_string()))?;
            let mask = set.region_mask.as_ref().unwrap();
            let side = mask.data.iter().filter(|&&v| v).count();
            let side = isqrt(side);
            for (i, sample) in set.samples.iter().enumerate() {
                let t1 = sample.center_t1.window(pr, pc, side, side)?.data;
                let t2 = sample.center_t2.window(pr, pc, side, side)?.data;
                let lab = sample.label.window(pr, pc, side, side)?.data;
                if reference.len() <= i {
                    reference.push(None);
                }
                match &reference[i] {
                    None => reference[i] = Some((t1, t2, lab)),
                    Some((r1, r2, rl)) => {
                        if &t1 != r1 || &t2 != r2 || &lab != rl {
                            return Err(Error::Contract(format!(
                                "detection region content differs in set {}",
                                set.name
                            )));
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn isqrt(n: usize) -> usize {
    let mut r = 0;
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Evaluates a scale suite, returning (factor, report) in the suite's set
/// order (original first, then increasing degradation).
pub fn scale_evaluate(
    suite: &BenchmarkSuite,
    predict: &mut PredictFn,
) -> Result<Vec<(usize, MetricReport)>> {
    if suite.kind != SuiteKind::Scale {
        return Err(Error::Contract("expected a scale suite".to_string()));
    }
    let mut out = Vec::new();
    for group in &suite.groups {
        for set in &group.sets {
            let factor = set
                .factor
                .ok_or_else(|| Error::Contract("scale set lacks a factor".to_string()))?;
            out.push((factor, evaluate_samples(&set.samples, None, predict)?));
        }
    }
    Ok(out)
}
