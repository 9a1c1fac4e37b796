use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use blinkseg::data::{
    load_dataset, make_split, select_channels, write_manifest, write_recording_csv, ChannelConfig,
    ManifestEntry, Recording, Split, Subject,
};
use blinkseg::harness::{
    enumerate_grid, leaderboard, run_search, score_split, write_report, GridSpec, ResultStore,
    SearchConfig, SplitScores,
};
use blinkseg::metrics::{evaluate, write_aggregate_csv, AggregateRow, EvalReport};
use blinkseg::nn::{CellKind, HyperParams, Model, ModelKind};
use blinkseg::segment::{read_labels_csv, segment_tensor, write_predictions_csv, WindowPlan};
use blinkseg::synth::{generate, SynthConfig};
use blinkseg::train::{
    recording_example, train as fit, write_history_csv, Checkpoint, NormalizationInfo, TrainConfig,
};
use blinkseg::{Error, Result};
use serde_json::{json, Value};

use crate::{
    EvalArgs, FitArgs, ReportArgs, SearchArgs, SegmentArgs, SynthArgs, TrainArgs, WindowArgs,
};

/// Metadata written next to prediction files.
const PREDICTIONS_META: &str = "predictions.json";

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| io(path, e))
}

impl WindowArgs {
    pub fn plan(&self) -> Result<WindowPlan> {
        let len = self.window_len;
        let offsets = if self.offsets.is_empty() {
            let mut v: Vec<usize> = (0..4).map(|q| q * len / 4).collect();
            v.dedup();
            v
        } else {
            self.offsets.clone()
        };
        WindowPlan::new(len, self.stride.unwrap_or(len), offsets)
    }
}

impl FitArgs {
    fn config(&self, window_len: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            class_weights: None,
            dropout_rate: self.dropout,
            seed: self.seed,
            patience: self.patience,
            search_window_len: window_len,
            grad_clip: self.grad_clip,
        }
    }

    fn windows(&self, window_len: usize) -> (usize, usize) {
        let len = self.train_window_len.unwrap_or(window_len);
        (len, self.train_stride.unwrap_or((len / 2).max(1)))
    }

    fn split(&self, recordings: &[Recording]) -> Result<Split> {
        let subjects: Vec<Subject> = recordings
            .iter()
            .map(|r| Subject::new(r.subject_id.clone(), r.cohort))
            .collect();
        make_split(&subjects, self.split_seed.unwrap_or(self.seed))
    }
}

pub fn synth(a: &SynthArgs) -> Result<Value> {
    create_dir(&a.out_dir)?;
    let mut entries = Vec::new();
    let ids = (0..a.hc)
        .map(|i| (format!("hc{i:02}"), false))
        .chain((0..a.pd).map(|i| (format!("pd{i:02}"), true)));
    for (n, (id, pd)) in ids.enumerate() {
        let mut cfg = SynthConfig {
            subject_id: id.clone(),
            duration_s: a.duration_s,
            sample_rate_hz: a.sample_rate,
            blink_rate_per_min: a.blink_rate,
            noise_sd_uv: a.noise_uv,
            seed: a.seed.wrapping_mul(1_000_003).wrapping_add(n as u64),
            ..SynthConfig::default()
        };
        if pd {
            cfg = cfg.with_tremor();
        }
        let r = generate(&cfg)?;
        let file = format!("{id}.csv");
        write_recording_csv(&a.out_dir.join(&file), &r)?;
        entries.push(ManifestEntry {
            subject_id: id,
            cohort: r.cohort,
            path: file,
            sample_rate_hz: a.sample_rate,
        });
    }
    let manifest = a.out_dir.join("manifest.json");
    write_manifest(&manifest, &entries)?;
    Ok(json!({ "manifest": manifest, "recordings": entries.len() }))
}

fn hyperparams(a: &TrainArgs) -> Result<HyperParams> {
    let kind: ModelKind = a.model.parse()?;
    let conv = kind.conv_family().is_some();
    let rnn = kind.has_recurrent_stage();
    // Unset applicable fields take the reference winner's values; fields the
    // kind does not use stay as given so validation can reject them.
    let pick =
        |given: Option<usize>, applies: bool, default: usize| given.or(applies.then_some(default));
    let cell = match &a.rnn_cell {
        Some(c) => Some(c.parse::<CellKind>()?),
        None => kind.is_hybrid().then_some(CellKind::BiLstm),
    };
    let hp = HyperParams {
        model_kind: kind,
        filter_size: pick(a.filter_size, conv, 15),
        num_blocks: pick(a.num_blocks, conv, 2),
        num_channels: a.channels,
        num_filters: pick(a.num_filters, conv, 32),
        num_rnn_blocks: pick(a.num_rnn_blocks, rnn, 2),
        num_units: pick(a.num_units, rnn, 32),
        rnn_cell: cell,
    };
    hp.validate()?;
    Ok(hp)
}

fn pick<'a>(recordings: &'a [Recording], ids: &[String]) -> Result<Vec<&'a Recording>> {
    let by_id: HashMap<&str, &Recording> = recordings
        .iter()
        .map(|r| (r.subject_id.as_str(), r))
        .collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Config(format!("subject {id} missing from the dataset")))
        })
        .collect()
}

pub fn train(a: &TrainArgs) -> Result<Value> {
    let hp = hyperparams(a)?;
    let plan = a.window.plan()?;
    let cfg = a.fit.config(plan.window_len);
    cfg.validate()?;
    let recordings = load_dataset(&a.data)?;
    let split = a.fit.split(&recordings)?;
    let channels = ChannelConfig::standard(hp.num_channels)?;
    let (train_len, train_stride) = a.fit.windows(plan.window_len);

    let train_recs = pick(&recordings, &split.train)?;
    let search_recs = pick(&recordings, &split.search)?;
    let validation_recs = pick(&recordings, &split.validation)?;
    let mut windows = Vec::new();
    for r in &train_recs {
        windows.extend(recording_example(r, &channels)?.windows(train_len, train_stride));
    }
    let search = search_recs
        .iter()
        .map(|r| recording_example(r, &channels))
        .collect::<Result<Vec<_>>>()?;

    let out = fit(&hp, &windows, &search, &cfg)?;
    let mut ckpt = out.checkpoint;
    ckpt.normalization = NormalizationInfo::from_recordings(&train_recs, &channels);
    let model = ckpt.model()?;
    let score = |recs: &[&Recording]| -> Result<Option<SplitScores>> {
        if recs.is_empty() {
            return Ok(None);
        }
        score_split(&model, recs, &channels, &plan, a.fit.iou).map(Some)
    };
    let search_scores = score(&search_recs)?;
    let validation_scores = score(&validation_recs)?;

    create_dir(&a.out_dir)?;
    ckpt.save(&a.out_dir.join("model.ckpt"))?;
    write_history_csv(&a.out_dir.join("history.csv"), &out.history)?;
    write_json(&a.out_dir.join("split.json"), &split)?;
    let summary = json!({
        "hyperparams": hp,
        "parameter_count": model.parameter_count(),
        "train_windows": windows.len(),
        "epochs_run": out.history.len(),
        "best_epoch": out.best_epoch,
        "class_weights": out.class_weights,
        "search": search_scores,
        "validation": validation_scores,
    });
    write_json(&a.out_dir.join("summary.json"), &summary)?;
    Ok(json!({
        "checkpoint": a.out_dir.join("model.ckpt"),
        "best_epoch": out.best_epoch,
        "search_f1_micro": search_scores.map(|s| s.f1_micro),
        "validation_f1_micro": validation_scores.map(|s| s.f1_micro),
    }))
}

fn grid_spec(a: &SearchArgs) -> Result<GridSpec> {
    let mut spec = match &a.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
            serde_json::from_str(&text)?
        }
        None => match a.preset.as_str() {
            "table1" => GridSpec::table_one(),
            "coarse" => GridSpec::coarse(1),
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}, expected table1 or coarse"
                )))
            }
        },
    };
    if !a.models.is_empty() {
        let kinds = a
            .models
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<ModelKind>>>()?;
        spec = spec.restrict(&kinds);
    }
    if !a.channels.is_empty() {
        spec = spec.with_channels(&a.channels);
    }
    Ok(spec)
}

pub fn search(a: &SearchArgs) -> Result<Value> {
    let grid = enumerate_grid(&grid_spec(a)?)?;
    let plan = a.window.plan()?;
    let (train_window_len, train_stride) = a.fit.windows(plan.window_len);
    let cfg = SearchConfig {
        train: a.fit.config(plan.window_len),
        workers: a.workers,
        finalists_per_model: a.top_k,
        plan,
        train_window_len,
        train_stride,
        iou_threshold: a.fit.iou,
        max_new: a.max_new,
    };
    cfg.train.validate()?;
    let recordings = load_dataset(&a.data)?;
    let split = a.fit.split(&recordings)?;
    create_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("split.json"), &split)?;
    let store = ResultStore::open(&a.out_dir.join("results"), &cfg.train.digest())?;
    let out = run_search(&grid, &recordings, &split, &cfg, &store)?;
    if !out.leaderboard.is_empty() {
        write_report(&a.out_dir, &out.leaderboard, &out.results)?;
    }
    let failed = out
        .results
        .iter()
        .filter(|r| r.search_f1_micro().is_none())
        .count();
    Ok(json!({
        "configs": grid.len(),
        "stored": out.results.len(),
        "trained": out.trained,
        "failed": failed,
        "complete": out.complete,
        "best": out.leaderboard.first().map(|r| json!({
            "hyperparams": r.hyperparams,
            "mean_f1_micro": r.mean_f1_micro,
        })),
    }))
}

/// Channel montage a checkpoint was trained on.
fn checkpoint_channels(ckpt: &Checkpoint) -> Result<ChannelConfig> {
    if ckpt.normalization.channels.is_empty() {
        ChannelConfig::standard(ckpt.hyperparams.num_channels)
    } else {
        Ok(ChannelConfig {
            names: ckpt.normalization.channels.clone(),
        })
    }
}

fn predict(
    model: &Model,
    r: &Recording,
    channels: &ChannelConfig,
    plan: &WindowPlan,
) -> Result<Vec<u8>> {
    let x = select_channels(r, channels)?;
    if r.len() < plan.window_len {
        model.predict(&x)
    } else {
        segment_tensor(model, &x, plan)
    }
}

pub fn segment(a: &SegmentArgs) -> Result<Value> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let model = ckpt.model()?;
    let channels = checkpoint_channels(&ckpt)?;
    let plan = a.window.plan()?;
    let recordings = load_dataset(&a.data)?;
    create_dir(&a.out_dir)?;
    for r in &recordings {
        let pred = predict(&model, r, &channels, &plan)?;
        write_predictions_csv(&a.out_dir.join(format!("{}.pred.csv", r.subject_id)), &pred)?;
    }
    let meta = json!({
        "model": ckpt.hyperparams.model_kind.table_label(),
        "hyperparams": ckpt.hyperparams,
        "channels": channels.names,
        "plan": plan,
    });
    write_json(&a.out_dir.join(PREDICTIONS_META), &meta)?;
    Ok(json!({ "predictions": recordings.len(), "out_dir": a.out_dir }))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn cohort_row(model: &str, channels: usize, cohort: &str, reports: &[&EvalReport]) -> AggregateRow {
    AggregateRow {
        model: model.into(),
        channels,
        cohort: cohort.into(),
        f1_micro: mean(reports.iter().map(|r| r.f1_micro)),
        f1_macro: mean(reports.iter().map(|r| r.f1_macro)),
        event_p: mean(reports.iter().map(|r| r.event_precision)),
        event_r: mean(reports.iter().map(|r| r.event_recall)),
    }
}

pub fn eval(a: &EvalArgs) -> Result<Value> {
    let recordings = load_dataset(&a.data)?;
    if recordings.is_empty() {
        return Err(Error::Config("manifest lists no recordings".into()));
    }
    let meta: Option<Value> = match fs::read_to_string(a.predictions.join(PREDICTIONS_META)) {
        Ok(text) => Some(serde_json::from_str(&text)?),
        Err(_) => None,
    };
    let model = a
        .model
        .clone()
        .or_else(|| {
            meta.as_ref()
                .and_then(|m| m["model"].as_str().map(String::from))
        })
        .unwrap_or_else(|| "model".into());
    let channels = a
        .channels
        .or_else(|| {
            meta.as_ref()
                .and_then(|m| m["channels"].as_array().map(|c| c.len()))
        })
        .unwrap_or(1);

    let mut subjects = BTreeMap::new();
    let mut by_cohort: BTreeMap<&str, Vec<&Recording>> = BTreeMap::new();
    for r in &recordings {
        let pred = read_labels_csv(
            &a.predictions.join(format!("{}.pred.csv", r.subject_id)),
            "label_pred",
        )?;
        subjects.insert(r.subject_id.clone(), evaluate(&pred, &r.labels, a.iou)?);
        by_cohort.entry(r.cohort.label()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (cohort, recs) in &by_cohort {
        let reports: Vec<&EvalReport> = recs.iter().map(|r| &subjects[&r.subject_id]).collect();
        rows.push(cohort_row(&model, channels, cohort, &reports));
    }
    let all: Vec<&EvalReport> = subjects.values().collect();
    rows.push(cohort_row(&model, channels, "all", &all));

    create_dir(&a.out_dir)?;
    write_aggregate_csv(&a.out_dir.join("aggregate.csv"), &rows)?;
    write_json(
        &a.out_dir.join("eval.json"),
        &json!({ "model": model, "channels": channels, "iou_threshold": a.iou, "subjects": subjects, "aggregate": rows }),
    )?;
    let overall = rows.last().expect("aggregate has an overall row");
    Ok(
        json!({ "subjects": subjects.len(), "f1_micro": overall.f1_micro, "f1_macro": overall.f1_macro }),
    )
}

pub fn report(a: &ReportArgs) -> Result<Value> {
    let results = ResultStore::open_existing(&a.results)?.completed()?;
    let rows = leaderboard(&results, a.top_k);
    write_report(&a.out_dir, &rows, &results)?;
    Ok(json!({
        "results": results.len(),
        "leaderboard": rows.len(),
        "best_mean_f1_micro": rows.first().map(|r| r.mean_f1_micro),
    }))
}
