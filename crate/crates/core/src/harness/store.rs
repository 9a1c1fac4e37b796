use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::HyperParams;
use crate::train::Checkpoint;

/// Scores of one subject's recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectScore {
    pub subject_id: String,
    pub cohort: String,
    pub f1_micro: f64,
    pub f1_macro: f64,
}

/// Subject-mean scores over one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub f1_micro: f64,
    pub f1_macro: f64,
    /// Mean F1-micro per cohort label.
    pub per_cohort: BTreeMap<String, f64>,
    pub subjects: Vec<SubjectScore>,
}

impl SplitScores {
    pub fn from_subjects(subjects: Vec<SubjectScore>) -> Self {
        let mean = |v: &[f64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let micro: Vec<f64> = subjects.iter().map(|s| s.f1_micro).collect();
        let macro_: Vec<f64> = subjects.iter().map(|s| s.f1_macro).collect();
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for s in &subjects {
            groups.entry(s.cohort.clone()).or_default().push(s.f1_micro);
        }
        SplitScores {
            f1_micro: mean(&micro),
            f1_macro: mean(&macro_),
            per_cohort: groups.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
            subjects,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Completed {
        parameter_count: usize,
        best_epoch: Option<usize>,
        epochs_run: usize,
        search: SplitScores,
        /// Filled in once the configuration is chosen as a finalist.
        validation: Option<SplitScores>,
        runtime_s: f64,
    },
    Failed {
        kind: String,
        message: String,
    },
}

/// Stored record of one (model, hyperparameters, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub hyperparams: HyperParams,
    pub seed: u64,
    pub outcome: Outcome,
}

impl ConfigResult {
    pub fn search_f1_micro(&self) -> Option<f64> {
        match &self.outcome {
            Outcome::Completed { search, .. } => Some(search.f1_micro),
            Outcome::Failed { .. } => None,
        }
    }

    pub fn validation(&self) -> Option<&SplitScores> {
        match &self.outcome {
            Outcome::Completed { validation, .. } => validation.as_ref(),
            Outcome::Failed { .. } => None,
        }
    }

    /// Same record with timing removed, for comparing runs.
    pub fn without_runtime(&self) -> Self {
        let mut out = self.clone();
        if let Outcome::Completed { runtime_s, .. } = &mut out.outcome {
            *runtime_s = 0.0;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreMeta {
    train_config_digest: String,
}

const META_FILE: &str = "store.json";

/// Directory holding one JSON file per completed run. A file's presence
/// marks the run complete; writes go through a temporary file and a rename.
#[derive(Debug, Clone)]
pub struct ResultStore {
    dir: PathBuf,
}

impl ResultStore {
    /// Opens or creates a store bound to one training configuration.
    /// Reusing a directory with a different configuration is an error.
    pub fn open(dir: &Path, train_config_digest: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join(META_FILE);
        let meta = StoreMeta {
            train_config_digest: train_config_digest.to_string(),
        };
        if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            let found: StoreMeta = serde_json::from_str(&text)?;
            if found != meta {
                return Err(Error::Config(format!(
                    "{} holds results of another training configuration",
                    dir.display()
                )));
            }
        } else {
            write_atomic(&meta_path, serde_json::to_string_pretty(&meta)?.as_bytes())?;
        }
        Ok(ResultStore {
            dir: dir.to_path_buf(),
        })
    }

    /// Opens an existing store without checking its configuration.
    pub fn open_existing(dir: &Path) -> Result<Self> {
        if !dir.join(META_FILE).exists() {
            return Err(Error::Config(format!(
                "{} is not a result store",
                dir.display()
            )));
        }
        Ok(ResultStore {
            dir: dir.to_path_buf(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn stem(hp: &HyperParams, seed: u64) -> String {
        format!("{}-{}-s{seed}", hp.model_kind.label(), hp.digest())
    }

    pub fn result_path(&self, hp: &HyperParams, seed: u64) -> PathBuf {
        self.dir.join(format!("{}.json", Self::stem(hp, seed)))
    }

    pub fn checkpoint_path(&self, hp: &HyperParams, seed: u64) -> PathBuf {
        self.dir.join(format!("{}.ckpt", Self::stem(hp, seed)))
    }

    pub fn is_complete(&self, hp: &HyperParams, seed: u64) -> bool {
        self.result_path(hp, seed).exists()
    }

    pub fn load(&self, hp: &HyperParams, seed: u64) -> Result<Option<ConfigResult>> {
        let path = self.result_path(hp, seed);
        if !path.exists() {
            return Ok(None);
        }
        read_result(&path).map(Some)
    }

    pub fn save(&self, result: &ConfigResult) -> Result<()> {
        let path = self.result_path(&result.hyperparams, result.seed);
        write_atomic(&path, serde_json::to_string_pretty(result)?.as_bytes())
    }

    pub fn save_checkpoint(&self, hp: &HyperParams, seed: u64, ckpt: &Checkpoint) -> Result<()> {
        write_atomic(&self.checkpoint_path(hp, seed), &ckpt.to_bytes()?)
    }

    pub fn load_checkpoint(&self, hp: &HyperParams, seed: u64) -> Result<Checkpoint> {
        Checkpoint::load(&self.checkpoint_path(hp, seed))
    }

    /// Every completed result, sorted by file name.
    pub fn completed(&self) -> Result<Vec<ConfigResult>> {
        let mut paths = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let path = entry.map_err(|e| Error::io(&self.dir, e))?.path();
            let is_result = path.extension().is_some_and(|x| x == "json")
                && path.file_name().is_some_and(|n| n != META_FILE);
            if is_result {
                paths.push(path);
            }
        }
        paths.sort();
        paths.iter().map(|p| read_result(p)).collect()
    }
}

fn read_result(path: &Path) -> Result<ConfigResult> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelKind;

    fn result(hp: &HyperParams, seed: u64) -> ConfigResult {
        ConfigResult {
            hyperparams: hp.clone(),
            seed,
            outcome: Outcome::Failed {
                kind: "config".into(),
                message: "x".into(),
            },
        }
    }

    #[test]
    fn presence_marks_completion() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path(), "abc").unwrap();
        let hp = HyperParams::recurrent(ModelKind::Gru, 1, 1, 8);
        assert!(!store.is_complete(&hp, 0));
        store.save(&result(&hp, 0)).unwrap();
        assert!(store.is_complete(&hp, 0));
        assert!(!store.is_complete(&hp, 1));
        assert_eq!(store.load(&hp, 0).unwrap(), Some(result(&hp, 0)));
        assert_eq!(store.completed().unwrap().len(), 1);
    }

    #[test]
    fn temporary_files_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultStore::open(dir.path(), "abc").unwrap();
        fs::write(dir.path().join("half.json.tmp"), "{").unwrap();
        assert!(store.completed().unwrap().is_empty());
    }

    #[test]
    fn other_configuration_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        ResultStore::open(dir.path(), "abc").unwrap();
        assert!(ResultStore::open(dir.path(), "abc").is_ok());
        assert!(matches!(
            ResultStore::open(dir.path(), "xyz"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_scores_average_subjects() {
        let s = |id: &str, c: &str, v: f64| SubjectScore {
            subject_id: id.into(),
            cohort: c.into(),
            f1_micro: v,
            f1_macro: v / 2.0,
        };
        let scores = SplitScores::from_subjects(vec![
            s("a", "HC", 0.8),
            s("b", "HC", 0.6),
            s("c", "PD", 0.4),
        ]);
        assert!((scores.f1_micro - 0.6).abs() < 1e-12);
        assert!((scores.f1_macro - 0.3).abs() < 1e-12);
        assert!((scores.per_cohort["HC"] - 0.7).abs() < 1e-12);
        assert!((scores.per_cohort["PD"] - 0.4).abs() < 1e-12);
    }
}
