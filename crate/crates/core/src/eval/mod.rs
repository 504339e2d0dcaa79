//! Segmentation metrics, edge fidelity and the experiment harness.

mod experiment;
mod report;

pub use experiment::{
    evaluate_segmentor, prepare_eval_set, run_adapted, run_adapted_prepared, run_baseline,
    run_baseline_prepared, DataSource, ExperimentSpec, PreparedData,
};
pub use report::{compare_report, ComparisonRow, ComparisonTable, PUBLISHED_DIRECTIONS, PUBLISHED_TABLE};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::edgeops::{canny_edges, edge_f_measure, CannyParams};
use crate::error::{Error, Result};
use crate::gantrain::translate;
use crate::imagecore::{Image, SegMask};
use crate::networks::ModelBundle;

/// Chebyshev matching radius used by [`edge_fidelity_report`].
pub const EDGE_MATCH_TOLERANCE_PX: usize = 1;

/// Pixel counts of a binary prediction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn predicted(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn actual(&self) -> u64 {
        self.tp + self.fn_
    }

    /// `2|P∩G| / (|P| + |G|)`, defined as 1 when both sets are empty.
    pub fn dice(&self) -> f64 {
        let denom = self.predicted() + self.actual();
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// Precision is 1 when both sets are empty and 0 when only `P` is.
    pub fn precision(&self) -> f64 {
        match (self.predicted(), self.actual()) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (p, _) => self.tp as f64 / p as f64,
        }
    }

    /// Mirror of [`precision`](Self::precision).
    pub fn recall(&self) -> f64 {
        match (self.actual(), self.predicted()) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (g, _) => self.tp as f64 / g as f64,
        }
    }

    pub fn accuracy(&self) -> f64 {
        let n = self.tp + self.fp + self.fn_ + self.tn;
        if n == 0 {
            1.0
        } else {
            (self.tp + self.tn) as f64 / n as f64
        }
    }

    pub fn add(&self, o: &Confusion) -> Confusion {
        Confusion { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

/// Counts over the pixels where `fov` is set (all pixels when `fov` is `None`).
pub fn confusion(pred: &SegMask, gt: &SegMask, fov: Option<&SegMask>) -> Result<Confusion> {
    if pred.dims() != gt.dims() || fov.is_some_and(|f| f.dims() != gt.dims()) {
        return Err(Error::DimMismatch(format!(
            "prediction {:?}, ground truth {:?}, fov {:?}",
            pred.dims(),
            gt.dims(),
            fov.map(|f| f.dims())
        )));
    }
    let mut c = Confusion::default();
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if fov.is_some_and(|f| f.data()[i] == 0) {
            continue;
        }
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn dice_score(pred: &SegMask, gt: &SegMask, fov: Option<&SegMask>) -> Result<f64> {
    Ok(confusion(pred, gt, fov)?.dice())
}

pub fn precision_recall(pred: &SegMask, gt: &SegMask, fov: Option<&SegMask>) -> Result<(f64, f64)> {
    let c = confusion(pred, gt, fov)?;
    Ok((c.precision(), c.recall()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegMetrics {
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

impl From<Confusion> for SegMetrics {
    fn from(c: Confusion) -> Self {
        Self { dice: c.dice(), precision: c.precision(), recall: c.recall(), accuracy: c.accuracy() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub metrics: SegMetrics,
    /// Whole-frame metrics, present when a FOV mask restricted `metrics`.
    pub full_frame: Option<SegMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFidelity {
    pub tolerance_px: usize,
    /// Per image: `mean|C_e(F(G(x))) - C_e(x)|`.
    pub l_edge: Vec<f64>,
    pub f_measure: Vec<f64>,
    pub median_l_edge: f64,
    pub median_f_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Method name, e.g. `baseline`, `cyclegan`, `edgecyclegan`.
    pub method: String,
    /// `source->target`.
    pub direction: String,
    pub seed: u64,
    pub per_image: Vec<ImageMetrics>,
    /// Pixel counts pooled over the whole test set.
    pub aggregate: Option<SegMetrics>,
    pub aggregate_full_frame: Option<SegMetrics>,
    pub edge: Option<EdgeFidelity>,
    pub config: serde_json::Value,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    /// SHA-256 fingerprints of the networks behind the numbers.
    pub checkpoints: BTreeMap<String, String>,
}

impl MetricsReport {
    /// Pooled DICE in percent, the headline number.
    pub fn dice_percent(&self) -> Option<f64> {
        self.aggregate.map(|m| 100.0 * m.dice)
    }

    pub fn mean_image_dice(&self) -> Option<f64> {
        if self.per_image.is_empty() {
            return None;
        }
        Some(self.per_image.iter().map(|m| m.metrics.dice).sum::<f64>() / self.per_image.len() as f64)
    }
}

/// Scores predictions against labels, with FOV masks when given.
pub fn segmentation_report(
    ids: &[String],
    preds: &[SegMask],
    labels: &[SegMask],
    fovs: Option<&[SegMask]>,
) -> Result<MetricsReport> {
    if preds.len() != labels.len() || ids.len() != labels.len() || fovs.is_some_and(|f| f.len() != labels.len()) {
        return Err(Error::DimMismatch("prediction, label and fov counts differ".into()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut pooled = Confusion::default();
    let mut pooled_full = Confusion::default();
    let mut per_image = Vec::with_capacity(preds.len());
    for (i, (p, g)) in preds.iter().zip(labels).enumerate() {
        let fov = fovs.map(|f| &f[i]);
        let c = confusion(p, g, fov)?;
        pooled = pooled.add(&c);
        let full_frame = match fov {
            Some(_) => {
                let full = confusion(p, g, None)?;
                pooled_full = pooled_full.add(&full);
                Some(full.into())
            }
            None => None,
        };
        per_image.push(ImageMetrics { id: ids[i].clone(), metrics: c.into(), full_frame });
    }
    Ok(MetricsReport {
        per_image,
        aggregate: Some(pooled.into()),
        aggregate_full_frame: fovs.map(|_| pooled_full.into()),
        ..Default::default()
    })
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Canny agreement between each `x` and its reconstruction `F(G(x))`.
pub fn edge_fidelity_report(
    g: &ModelBundle,
    f: &ModelBundle,
    images: &[Image],
    p: &CannyParams,
) -> Result<MetricsReport> {
    p.validate()?;
    if images.is_empty() {
        return Err(Error::Empty("edge fidelity image set".into()));
    }
    let rec = translate(f, &translate(g, images)?)?;
    let mut l_edge = Vec::with_capacity(images.len());
    let mut f_measure = Vec::with_capacity(images.len());
    for (x, xr) in images.iter().zip(&rec) {
        let (ex, er) = (canny_edges(x, p), canny_edges(xr, p));
        l_edge.push(er.mean_abs_diff(&ex)?);
        f_measure.push(edge_f_measure(&er, &ex, EDGE_MATCH_TOLERANCE_PX)?);
    }
    let edge = EdgeFidelity {
        tolerance_px: EDGE_MATCH_TOLERANCE_PX,
        median_l_edge: median(&l_edge),
        median_f_measure: median(&f_measure),
        l_edge,
        f_measure,
    };
    let mut checkpoints = BTreeMap::new();
    checkpoints.insert("G".into(), g.fingerprint()?);
    checkpoints.insert("F".into(), f.fingerprint()?);
    Ok(MetricsReport { edge: Some(edge), checkpoints, ..Default::default() })
}
