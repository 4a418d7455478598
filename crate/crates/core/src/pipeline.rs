//! End-to-end jobs behind the command-line subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baseline::{self, log_tsv, EpochLog, TrainingData};
use crate::canonical::canonicalize;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_cv, metrics_tsv, render_cv_table, render_table, score, CvSummary, EvalReport,
    PredictionSet, RunMeta, TableRow, TableStyle,
};
use crate::focus::{extract_window, select_focal, FocusProfile};
use crate::pack::{parse_index, read_packed, PackPaths, PackWriter, PackedDataset};
use crate::split::{make_split, SplitPlan};
use crate::stack::{ingest_directory, load_stack, ClassLabel, DatasetManifest, LabelingRule, RejectedRecord};

pub const BASELINE_MODEL: &str = "baseline-logreg";
const PREP_CHUNK: usize = 64;

/// Runs `f` on a pool with the configured worker count.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone)]
pub struct PrepSummary {
    pub manifest: DatasetManifest,
    pub rejected: Vec<RejectedRecord>,
    pub plan: SplitPlan,
    pub packed: PackedDataset,
    /// Count of stacks per selected focal index.
    pub focal_histogram: BTreeMap<usize, usize>,
}

fn ingest_checked(root: &Path, layout: &LabelingRule, cfg: &PipelineConfig) -> Result<(DatasetManifest, Vec<RejectedRecord>)> {
    cfg.validate()?;
    let ingested = ingest_directory(root, layout)?;
    for r in &ingested.rejected {
        log::warn!("rejected {}: {}", r.path.display(), r.reason);
    }
    let min_depth = ingested
        .manifest
        .records()
        .iter()
        .map(|r| r.depth)
        .min()
        .expect("manifest is nonempty");
    if cfg.layers > min_depth {
        return Err(Error::WindowExceedsDepth {
            n: cfg.layers,
            depth: min_depth,
        });
    }
    Ok((ingested.manifest, ingested.rejected))
}

/// ingest -> focal selection -> window -> padding -> split -> pack.
pub fn prep(root: &Path, layout: &LabelingRule, cfg: &PipelineConfig, out: &Path) -> Result<PrepSummary> {
    with_workers(cfg.workers, || prep_inner(root, layout, cfg, out))?
}

fn prep_inner(root: &Path, layout: &LabelingRule, cfg: &PipelineConfig, out: &Path) -> Result<PrepSummary> {
    let (manifest, rejected) = ingest_checked(root, layout, cfg)?;
    let plan = make_split(&manifest, cfg.seed, cfg.test_fraction, cfg.folds)?;
    let mut writer = PackWriter::create(out, &plan)?;
    let mut focal_histogram = BTreeMap::new();
    for chunk in manifest.records().chunks(PREP_CHUNK) {
        let samples: Vec<_> = chunk
            .par_iter()
            .map(|rec| {
                let stack = load_stack(rec)?;
                let profile = select_focal(&stack, &cfg.canny);
                let window = extract_window(&stack, profile.focal_index, cfg.layers)?;
                canonicalize(&stack, profile.focal_index, window, cfg.pad_mode)
            })
            .collect::<Result<_>>()?;
        for s in &samples {
            *focal_histogram.entry(s.focal_index).or_insert(0) += 1;
            writer.push(s)?;
        }
    }
    let packed = writer.finish()?;
    let manifest_path = sibling(out, ".manifest.tsv");
    manifest.save(&manifest_path)?;
    Ok(PrepSummary {
        manifest,
        rejected,
        plan,
        packed,
        focal_histogram,
    })
}

fn sibling(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Ingests and writes only the split plan.
pub fn split_only(root: &Path, layout: &LabelingRule, cfg: &PipelineConfig, out: &Path) -> Result<SplitPlan> {
    cfg.validate()?;
    let ingested = ingest_directory(root, layout)?;
    let plan = make_split(&ingested.manifest, cfg.seed, cfg.test_fraction, cfg.folds)?;
    plan.save(out)?;
    Ok(plan)
}

/// Focus profiles for every stack, optionally with edge-mask PNGs of each
/// focal layer.
pub fn inspect(
    root: &Path,
    layout: &LabelingRule,
    cfg: &PipelineConfig,
    mask_dir: Option<&Path>,
) -> Result<Vec<(String, FocusProfile)>> {
    cfg.validate()?;
    let ingested = ingest_directory(root, layout)?;
    if let Some(dir) = mask_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    with_workers(cfg.workers, || {
        ingested
            .manifest
            .records()
            .par_iter()
            .map(|rec| {
                let stack = load_stack(rec)?;
                let mut profile = select_focal(&stack, &cfg.canny);
                profile.window = extract_window(&stack, profile.focal_index, cfg.layers.min(stack.depth())).ok();
                if let Some(dir) = mask_dir {
                    let edges = crate::focus::canny_edges(&stack.layers()[profile.focal_index], &cfg.canny);
                    let name = rec.id.replace('/', "__");
                    crate::stack::write_png(&dir.join(format!("{name}.edges.png")), &edges.mask_layer())?;
                }
                Ok((rec.id.clone(), profile))
            })
            .collect()
    })?
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub val: PredictionSet,
    pub test: Option<PredictionSet>,
    pub log: Vec<EpochLog>,
    pub seconds_per_epoch: Option<f64>,
}

pub struct BaselinePaths {
    pub val: PathBuf,
    pub test: PathBuf,
    pub log: PathBuf,
}

impl BaselinePaths {
    pub fn from_prefix(prefix: &Path) -> Self {
        BaselinePaths {
            val: sibling(prefix, ".val.pred.tsv"),
            test: sibling(prefix, ".test.pred.tsv"),
            log: sibling(prefix, ".log.tsv"),
        }
    }
}

/// Trains the baseline on one fold and writes validation/test prediction
/// files plus the per-epoch log.
pub fn baseline(dataset: &Path, cfg: &PipelineConfig, out: &Path) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let packed = read_packed(dataset)?;
    let roles = packed.plan().fold_roles(cfg.fold)?;
    let data = with_workers(cfg.workers, || {
        TrainingData::load(&packed, &roles, cfg.feature_spec(), Some(cfg.augment()))
    })??;
    let trained = baseline::train(&data, &cfg.train_config())?;
    let meta = |split: &str| RunMeta {
        model: BASELINE_MODEL.into(),
        fold: Some(cfg.fold),
        epochs: Some(cfg.epochs),
        pretrained: false,
        // Timing stays in the log so prediction files are reproducible.
        seconds_per_epoch: None,
        layers: Some(packed.n_layers()),
        split: Some(split.into()),
        extra: BTreeMap::new(),
    };
    let val = baseline::predict(&trained, &packed, &roles.val, meta("val"))?;
    let test = if roles.test.is_empty() {
        None
    } else {
        Some(baseline::predict(&trained, &packed, &roles.test, meta("test"))?)
    };

    let paths = BaselinePaths::from_prefix(out);
    if let Some(parent) = paths.val.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    val.save(&paths.val)?;
    if let Some(t) = &test {
        t.save(&paths.test)?;
    }
    fs::write(&paths.log, log_tsv(&trained.log)).map_err(|e| Error::io(&paths.log, e))?;
    Ok(BaselineOutcome {
        val,
        test,
        seconds_per_epoch: trained.mean_seconds_per_epoch(),
        log: trained.log,
    })
}

/// Ground-truth labels from a packed dataset's index file. Accepts either
/// the `.index.tsv` path or the dataset prefix.
pub fn load_truth(path: &Path) -> Result<BTreeMap<String, ClassLabel>> {
    let index = if path.to_string_lossy().ends_with(".index.tsv") {
        path.to_path_buf()
    } else {
        PackPaths::from_prefix(path).index
    };
    let text = fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
    Ok(parse_index(&text, &index.display().to_string())?
        .into_iter()
        .map(|e| (e.id, e.label))
        .collect())
}

fn row_label(meta: &RunMeta, style: TableStyle, fallback: &str) -> String {
    match style {
        TableStyle::Layers => meta.layers.map(|n| format!("{n} layers")),
        TableStyle::Epochs => meta.epochs.map(|n| format!("{n} epochs")),
        TableStyle::Models => (!meta.model.is_empty()).then(|| meta.model.clone()),
    }
    .unwrap_or_else(|| fallback.to_string())
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub reports: Vec<(PathBuf, RunMeta, EvalReport)>,
    pub table: String,
    /// Fold aggregates for runs that appear with more than one fold.
    pub cv: Vec<(String, CvSummary)>,
    pub tsv: String,
}

impl EvalOutput {
    pub fn render(&self) -> String {
        let mut s = self.table.clone();
        if !self.cv.is_empty() {
            s.push_str("\ncross-validation (mean ± sd over folds)\n");
            s.push_str(&render_cv_table(&self.cv));
        }
        s
    }
}

/// Scores each prediction file against `truth` and renders the reports.
pub fn evaluate(pred_files: &[PathBuf], truth: &BTreeMap<String, ClassLabel>, style: TableStyle) -> Result<EvalOutput> {
    if pred_files.is_empty() {
        return Err(Error::Config("no prediction files given".into()));
    }
    let reports: Vec<(PathBuf, RunMeta, EvalReport)> = pred_files
        .par_iter()
        .map(|p| {
            let pred = PredictionSet::load(p)?;
            let report = score(&pred, truth)?;
            Ok((p.clone(), pred.meta, report))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut tsv_rows = Vec::new();
    let mut groups: BTreeMap<String, Vec<EvalReport>> = BTreeMap::new();
    for (path, meta, report) in &reports {
        let fallback = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut label = row_label(meta, style, &fallback);
        if let Some(split) = &meta.split {
            if style != TableStyle::Models || pred_files.len() > 1 {
                label = format!("{label} [{split}]");
            }
        }
        rows.push(TableRow::from_report(label.clone(), report, meta.pretrained));
        tsv_rows.push((label, meta, report));
        let key = format!(
            "{}{} layers={} epochs={} split={}",
            meta.model,
            if meta.pretrained { "*" } else { "" },
            meta.layers.map(|v| v.to_string()).unwrap_or_default(),
            meta.epochs.map(|v| v.to_string()).unwrap_or_default(),
            meta.split.as_deref().unwrap_or("")
        );
        groups.entry(key).or_default().push(report.clone());
    }
    let cv = groups
        .into_iter()
        .filter(|(_, r)| r.len() > 1)
        .map(|(k, r)| Ok((k, aggregate_cv(&r)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalOutput {
        table: render_table(&rows, style),
        tsv: metrics_tsv(&tsv_rows),
        cv,
        reports,
    })
}

#[derive(Debug, Clone)]
pub struct LayerStudyRow {
    pub layers: usize,
    pub report: EvalReport,
    pub seconds_per_epoch: f64,
}

#[derive(Debug, Clone)]
pub struct LayerStudy {
    pub rows: Vec<LayerStudyRow>,
    pub table: String,
}

/// For each window size: prep, train the baseline on the configured fold,
/// and score its test predictions.
pub fn layer_study(
    root: &Path,
    layout: &LabelingRule,
    cfg: &PipelineConfig,
    layer_counts: &[usize],
    work_dir: &Path,
) -> Result<LayerStudy> {
    if layer_counts.is_empty() {
        return Err(Error::Config("layer list is empty".into()));
    }
    let mut rows = Vec::new();
    for &n in layer_counts {
        let mut c = cfg.clone();
        c.layers = n;
        let prefix = work_dir.join(format!("layers-{n:02}"));
        let prep = prep(root, layout, &c, &prefix)?;
        let outcome = baseline(&prefix, &c, &sibling(&prefix, ".baseline"))?;
        let test = outcome
            .test
            .as_ref()
            .ok_or(Error::EmptySplit("test"))?;
        let mut report = score(test, &prep.packed.labels())?;
        let seconds = outcome.seconds_per_epoch.unwrap_or(0.0);
        report.seconds_per_epoch = Some(seconds);
        rows.push(LayerStudyRow {
            layers: n,
            report,
            seconds_per_epoch: seconds,
        });
    }
    let table_rows: Vec<TableRow> = rows
        .iter()
        .map(|r| TableRow::from_report(format!("{} layers", r.layers), &r.report, false))
        .collect();
    Ok(LayerStudy {
        table: render_table(&table_rows, TableStyle::Layers),
        rows,
    })
}
