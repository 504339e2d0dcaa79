//! Baseline and adapted arms of a source -> target experiment.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{edge_fidelity_report, segmentation_report, MetricsReport};
use crate::data::{ingest_dataset, make_patches, synth_fundus, AugmentSpec, FundusDataset, Layout, SynthSpec};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::gantrain::{train_edgecyclegan, GanConfig, GanRunOptions};
use crate::networks::ModelBundle;
use crate::segtrain::{predict_probs, train_segmentor, train_unet, SegConfig};

/// Images scored by the edge fidelity part of an adapted run.
const EDGE_FIDELITY_IMAGES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthSpec),
    Disk { root: PathBuf, layout: Layout },
}

impl DataSource {
    pub fn load(&self) -> Result<FundusDataset> {
        match self {
            DataSource::Synthetic(s) => synth_fundus(s),
            DataSource::Disk { root, layout } => ingest_dataset(root, *layout),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Direction label, e.g. `DRIVE->STARE`.
    pub direction: String,
    /// Labelled source training data.
    pub source: DataSource,
    /// Target training data; its labels, if any, are never read.
    pub target: DataSource,
    /// Labelled target data for evaluation.
    pub target_test: DataSource,
    #[serde(default)]
    pub gan: GanConfig,
    #[serde(default)]
    pub seg: SegConfig,
    #[serde(default)]
    pub augment: AugmentSpec,
    pub output_root: PathBuf,
    /// Overrides the seeds inside the stage configs.
    #[serde(default)]
    pub seed: u64,
}

/// Patches and evaluation set shared by all arms of one experiment.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub source: FundusDataset,
    pub target: FundusDataset,
    pub test: FundusDataset,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.source == self.target {
            return Err(Error::Config("source and target domains must differ".into()));
        }
        self.gan.validate()?;
        self.seg.validate()?;
        self.augment.validate()
    }

    pub fn gan_config(&self, edge_enabled: bool) -> GanConfig {
        GanConfig {
            seed: derive_seed(self.seed, 41),
            gamma_edge: if edge_enabled { self.gan.gamma_edge } else { 0.0 },
            ..self.gan.clone()
        }
    }

    pub fn seg_config(&self) -> SegConfig {
        SegConfig { seed: derive_seed(self.seed, 42), ..self.seg.clone() }
    }

    pub fn prepare(&self) -> Result<PreparedData> {
        self.validate()?;
        let src = self.source.load()?;
        src.labels()?;
        let tgt = self.target.load()?;
        let test = self.target_test.load()?;
        test.labels()?;
        let aug = |stream| AugmentSpec { seed: derive_seed(self.seed, stream), ..self.augment.clone() };
        let source = make_patches(&src, &aug(43))?.dataset;
        let mut target = make_patches(&tgt, &aug(44))?.dataset;
        target.labels = None;
        // whole-frame patches are rescaled images, so the test set is rescaled
        // the same way; windowed patches keep native scale
        let size = self.augment.window.is_none().then_some(self.augment.patch_size);
        Ok(PreparedData { source, target, test: prepare_eval_set(&test, size)? })
    }

    fn arm_dir(&self, method: &str) -> PathBuf {
        self.output_root.join(method)
    }
}

/// Resizes every image to `size x size` (labels and FOV masks nearest-neighbour).
/// `None` returns the dataset unchanged.
pub fn prepare_eval_set(ds: &FundusDataset, size: Option<usize>) -> Result<FundusDataset> {
    let Some(size) = size else { return Ok(ds.clone()) };
    let images = ds.images.iter().map(|im| im.resize(size, size)).collect::<Result<_>>()?;
    let resize_all = |m: &Option<Vec<crate::imagecore::SegMask>>| -> Result<_> {
        m.as_ref().map(|v| v.iter().map(|m| m.resize_nearest(size, size)).collect::<Result<Vec<_>>>()).transpose()
    };
    FundusDataset::new(
        ds.name.clone(),
        ds.ids.clone(),
        images,
        resize_all(&ds.labels)?,
        resize_all(&ds.fov_masks)?,
        ds.split,
    )
}

/// Thresholded U-Net predictions scored against the dataset labels.
pub fn evaluate_segmentor(unet: &ModelBundle, ds: &FundusDataset, threshold: f64) -> Result<MetricsReport> {
    let probs = predict_probs(unet, &ds.images)?;
    let preds: Vec<_> = probs.iter().map(|p| p.to_mask(threshold)).collect();
    let mut r = segmentation_report(&ds.ids, &preds, ds.labels()?, ds.fov_masks.as_deref())?;
    r.checkpoints.insert("U".into(), unet.fingerprint()?);
    Ok(r)
}

fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Segmentor trained on raw source patches, scored on the target test set.
pub fn run_baseline(spec: &ExperimentSpec) -> Result<MetricsReport> {
    run_baseline_prepared(spec, &spec.prepare()?)
}

pub fn run_baseline_prepared(spec: &ExperimentSpec, data: &PreparedData) -> Result<MetricsReport> {
    let dir = spec.arm_dir("baseline");
    let seg = spec.seg_config();
    let t0 = Instant::now();
    let out = train_unet(&data.source.images, data.source.labels()?, &seg, Some(&dir.join("seg")))?;
    let train_s = t0.elapsed().as_secs_f64();
    let mut report = evaluate_segmentor(&out.unet, &data.test, seg.threshold)?;
    report.method = "baseline".into();
    report.direction = spec.direction.clone();
    report.seed = spec.seed;
    report.config = serde_json::json!({ "seg": seg, "augment": spec.augment });
    report.timings.insert("seg_train".into(), train_s);
    write_report(&dir, &report)?;
    Ok(report)
}

/// Translation stage then segmentation on translated source patches.
///
/// With `edge_enabled == false` the edge weight is zero and the run is the
/// plain CycleGAN arm.
pub fn run_adapted(spec: &ExperimentSpec, edge_enabled: bool) -> Result<MetricsReport> {
    run_adapted_prepared(spec, &spec.prepare()?, edge_enabled)
}

pub fn run_adapted_prepared(spec: &ExperimentSpec, data: &PreparedData, edge_enabled: bool) -> Result<MetricsReport> {
    let method = if edge_enabled { "edgecyclegan" } else { "cyclegan" };
    let dir = spec.arm_dir(method);
    let gan = spec.gan_config(edge_enabled);
    let seg = spec.seg_config();
    let t0 = Instant::now();
    let opts = GanRunOptions { output_dir: Some(dir.join("gan")), checkpoint_every: None, sample_every: None };
    let trained = train_edgecyclegan(&data.source.images, &data.target.images, &gan, &opts)?;
    let gan_s = t0.elapsed().as_secs_f64();
    let before = trained.g.fingerprint()?;
    let t1 = Instant::now();
    let out = train_segmentor(&trained.g, &data.source.images, data.source.labels()?, &seg, Some(&dir.join("seg")))?;
    let seg_s = t1.elapsed().as_secs_f64();
    if trained.g.fingerprint()? != before {
        return Err(Error::Config("generator changed during segmentor training".into()));
    }
    let mut report = evaluate_segmentor(&out.unet, &data.test, seg.threshold)?;
    let n_edge = data.source.len().min(EDGE_FIDELITY_IMAGES);
    let fidelity = edge_fidelity_report(&trained.g, &trained.f, &data.source.images[..n_edge], &gan.canny)?;
    report.edge = fidelity.edge;
    report.checkpoints.extend(fidelity.checkpoints);
    report.method = method.into();
    report.direction = spec.direction.clone();
    report.seed = spec.seed;
    report.config = serde_json::json!({ "gan": gan, "seg": seg, "augment": spec.augment });
    report.timings.insert("gan_train".into(), gan_s);
    report.timings.insert("seg_train".into(), seg_s);
    write_report(&dir, &report)?;
    Ok(report)
}
