//! Grid search over model configurations, with a resumable result store and
//! leaderboard reports.

mod grid;
mod report;
mod store;

pub use grid::{entry_size, enumerate_grid, GridEntry, GridSpec, ModelAxes};
pub use report::{
    quantile, score_distribution, write_distribution_csv, write_leaderboard_csv, write_report,
    write_table_csv, Distribution,
};
pub use store::{ConfigResult, Outcome, ResultStore, SplitScores, SubjectScore};

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{select_channels, ChannelConfig, Recording, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, DEFAULT_IOU};
use crate::nn::{HyperParams, Model, ModelKind};
use crate::segment::{segment_tensor, WindowPlan};
use crate::train::{recording_example, train, Example, NormalizationInfo, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub train: TrainConfig,
    /// Configurations trained concurrently.
    pub workers: usize,
    /// Best configurations per model kind scored on the validation split.
    pub finalists_per_model: usize,
    /// Windowing and voting used to score whole recordings.
    pub plan: WindowPlan,
    pub train_window_len: usize,
    pub train_stride: usize,
    pub iou_threshold: f64,
    /// Stop after training this many new configurations.
    pub max_new: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            train: TrainConfig::default(),
            workers: 1,
            finalists_per_model: 1,
            plan: WindowPlan::default(),
            train_window_len: 1024,
            train_stride: 512,
            iou_threshold: DEFAULT_IOU,
            max_new: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model_kind: ModelKind,
    pub hyperparams: HyperParams,
    pub seed: u64,
    /// Subject-mean F1-micro on the validation split, or on the search
    /// split when there are no validation subjects.
    pub mean_f1_micro: f64,
    pub per_cohort_f1: BTreeMap<String, f64>,
    pub search_f1_micro: f64,
    pub search_f1_macro: f64,
    pub validation: Option<SplitScores>,
    pub parameter_count: usize,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    /// Stored results for the grid, in grid order.
    pub results: Vec<ConfigResult>,
    pub leaderboard: Vec<LeaderboardRow>,
    /// Configurations trained by this call.
    pub trained: usize,
    /// False when `max_new` stopped the run before the grid was covered.
    pub complete: bool,
}

/// Scores one recording: windowed voting when it is long enough for the
/// plan, one whole-sequence pass otherwise.
pub fn score_recording(
    model: &Model,
    r: &Recording,
    channels: &ChannelConfig,
    plan: &WindowPlan,
    iou_threshold: f64,
) -> Result<SubjectScore> {
    let x = select_channels(r, channels)?;
    let pred = if r.len() < plan.window_len {
        model.predict(&x)?
    } else {
        segment_tensor(model, &x, plan)?
    };
    let report = evaluate(&pred, &r.labels, iou_threshold)?;
    Ok(SubjectScore {
        subject_id: r.subject_id.clone(),
        cohort: r.cohort.label().to_string(),
        f1_micro: report.f1_micro,
        f1_macro: report.f1_macro,
    })
}

pub fn score_split(
    model: &Model,
    recordings: &[&Recording],
    channels: &ChannelConfig,
    plan: &WindowPlan,
    iou_threshold: f64,
) -> Result<SplitScores> {
    let subjects = recordings
        .iter()
        .map(|r| score_recording(model, r, channels, plan, iou_threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitScores::from_subjects(subjects))
}

struct Prepared<'a> {
    channels: ChannelConfig,
    train: Vec<Example>,
    search_examples: Vec<Example>,
    search: Vec<&'a Recording>,
    validation: Vec<&'a Recording>,
    normalization: NormalizationInfo,
}

fn pick<'a>(recordings: &'a [Recording], ids: &[String]) -> Result<Vec<&'a Recording>> {
    ids.iter()
        .map(|id| {
            recordings
                .iter()
                .find(|r| &r.subject_id == id)
                .ok_or_else(|| Error::Config(format!("split names unknown subject {id}")))
        })
        .collect()
}

fn prepare<'a>(
    recordings: &'a [Recording],
    split: &Split,
    count: usize,
    cfg: &SearchConfig,
) -> Result<Prepared<'a>> {
    let channels = ChannelConfig::standard(count)?;
    let train_recs = pick(recordings, &split.train)?;
    let search = pick(recordings, &split.search)?;
    let validation = pick(recordings, &split.validation)?;
    let mut train = Vec::new();
    for r in &train_recs {
        train.extend(
            recording_example(r, &channels)?.windows(cfg.train_window_len, cfg.train_stride),
        );
    }
    let search_examples = search
        .iter()
        .map(|r| recording_example(r, &channels))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        normalization: NormalizationInfo::from_recordings(&train_recs, &channels),
        channels,
        train,
        search_examples,
        search,
        validation,
    })
}

fn run_config(
    hp: &HyperParams,
    p: &Result<Prepared>,
    cfg: &SearchConfig,
    store: &ResultStore,
) -> Result<ConfigResult> {
    let start = Instant::now();
    let attempt = |p: &Prepared| -> Result<Outcome> {
        let out = train(hp, &p.train, &p.search_examples, &cfg.train)?;
        let mut ckpt = out.checkpoint;
        ckpt.normalization = p.normalization.clone();
        let model = ckpt.model()?;
        let search = score_split(&model, &p.search, &p.channels, &cfg.plan, cfg.iou_threshold)?;
        store.save_checkpoint(hp, cfg.train.seed, &ckpt)?;
        Ok(Outcome::Completed {
            parameter_count: model.parameter_count(),
            best_epoch: out.best_epoch,
            epochs_run: out.history.len(),
            search,
            validation: None,
            runtime_s: 0.0,
        })
    };
    let failed = |e: &Error| Outcome::Failed {
        kind: e.kind().to_string(),
        message: e.to_string(),
    };
    let mut outcome = match p {
        Ok(p) => attempt(p).unwrap_or_else(|e| failed(&e)),
        Err(e) => failed(e),
    };
    if let Outcome::Completed { runtime_s, .. } = &mut outcome {
        *runtime_s = start.elapsed().as_secs_f64();
    }
    let result = ConfigResult {
        hyperparams: hp.clone(),
        seed: cfg.train.seed,
        outcome,
    };
    store.save(&result)?;
    Ok(result)
}

/// Indices of the top `k` completed results of each model kind by search
/// F1-micro, ties broken by position.
fn finalists(results: &[ConfigResult], k: usize) -> Vec<usize> {
    let mut by_kind: BTreeMap<ModelKind, Vec<usize>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        if r.search_f1_micro().is_some() {
            by_kind.entry(r.hyperparams.model_kind).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for (_, mut idx) in by_kind {
        idx.sort_by(|&a, &b| {
            let (sa, sb) = (
                results[a].search_f1_micro().unwrap(),
                results[b].search_f1_micro().unwrap(),
            );
            sb.total_cmp(&sa).then(a.cmp(&b))
        });
        out.extend(idx.into_iter().take(k));
    }
    out.sort_unstable();
    out
}

/// Ranks the finalists of `results`, best first.
pub fn leaderboard(results: &[ConfigResult], finalists_per_model: usize) -> Vec<LeaderboardRow> {
    let mut rows: Vec<LeaderboardRow> = finalists(results, finalists_per_model)
        .into_iter()
        .filter_map(|i| {
            let r = &results[i];
            let Outcome::Completed {
                parameter_count,
                search,
                validation,
                runtime_s,
                ..
            } = &r.outcome
            else {
                return None;
            };
            let scored = validation.as_ref().unwrap_or(search);
            Some(LeaderboardRow {
                model_kind: r.hyperparams.model_kind,
                hyperparams: r.hyperparams.clone(),
                seed: r.seed,
                mean_f1_micro: scored.f1_micro,
                per_cohort_f1: scored.per_cohort.clone(),
                search_f1_micro: search.f1_micro,
                search_f1_macro: search.f1_macro,
                validation: validation.clone(),
                parameter_count: *parameter_count,
                runtime_s: *runtime_s,
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean_f1_micro
            .total_cmp(&a.mean_f1_micro)
            .then(b.search_f1_micro.total_cmp(&a.search_f1_micro))
            .then_with(|| a.hyperparams.digest().cmp(&b.hyperparams.digest()))
    });
    rows
}

/// Trains every configuration of `grid` that the store does not already
/// hold, scores it on the search split, then scores the best
/// `finalists_per_model` of each kind once on the validation split.
/// A failing configuration is recorded and the search continues.
pub fn run_search(
    grid: &[HyperParams],
    recordings: &[Recording],
    split: &Split,
    cfg: &SearchConfig,
    store: &ResultStore,
) -> Result<SearchOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("search grid is empty".into()));
    }
    if recordings.is_empty() {
        return Err(Error::Config("search needs at least one recording".into()));
    }
    if split.train.is_empty() || split.search.is_empty() {
        return Err(Error::Config(
            "search needs non-empty train and search splits".into(),
        ));
    }
    if cfg.workers == 0 || cfg.finalists_per_model == 0 {
        return Err(Error::Config(
            "workers and finalists_per_model must be positive".into(),
        ));
    }
    cfg.plan.validate()?;
    cfg.train.validate()?;
    for hp in grid {
        hp.validate()?;
    }

    let mut counts: Vec<usize> = grid.iter().map(|h| h.num_channels).collect();
    counts.sort_unstable();
    counts.dedup();
    // A montage the recordings cannot supply fails only its configurations.
    let prepared: HashMap<usize, Result<Prepared>> = counts
        .into_iter()
        .map(|c| (c, prepare(recordings, split, c, cfg)))
        .collect();

    let seed = cfg.train.seed;
    let mut seen = std::collections::HashSet::new();
    let unique: Vec<&HyperParams> = grid.iter().filter(|hp| seen.insert(*hp)).collect();
    let mut pending: Vec<&HyperParams> = unique
        .iter()
        .copied()
        .filter(|hp| !store.is_complete(hp, seed))
        .collect();
    let all_pending = pending.len();
    if let Some(limit) = cfg.max_new {
        pending.truncate(limit);
    }
    let complete = pending.len() == all_pending;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    pool.install(|| {
        pending
            .par_iter()
            .map(|hp| run_config(hp, &prepared[&hp.num_channels], cfg, store))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut results = unique
        .iter()
        .filter_map(|hp| store.load(hp, seed).transpose())
        .collect::<Result<Vec<_>>>()?;
    if complete && !split.validation.is_empty() {
        let todo: Vec<usize> = finalists(&results, cfg.finalists_per_model)
            .into_iter()
            .filter(|&i| results[i].validation().is_none())
            .collect();
        let validated = pool.install(|| {
            todo.par_iter()
                .map(|&i| {
                    let r = &results[i];
                    let hp = &r.hyperparams;
                    let p = prepared[&hp.num_channels]
                        .as_ref()
                        .map_err(|e| Error::Contract(format!("finalist without data: {e}")))?;
                    let model = store.load_checkpoint(hp, seed)?.model()?;
                    let scores = score_split(
                        &model,
                        &p.validation,
                        &p.channels,
                        &cfg.plan,
                        cfg.iou_threshold,
                    )?;
                    let mut updated = r.clone();
                    if let Outcome::Completed { validation, .. } = &mut updated.outcome {
                        *validation = Some(scores);
                    }
                    store.save(&updated)?;
                    Ok((i, updated))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        for (i, r) in validated {
            results[i] = r;
        }
    }
    Ok(SearchOutcome {
        leaderboard: leaderboard(&results, cfg.finalists_per_model),
        results,
        trained: pending.len(),
        complete,
    })
}
