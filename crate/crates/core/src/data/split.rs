use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub cohort: Cohort,
}

impl Subject {
    pub fn new(id: impl Into<String>, cohort: Cohort) -> Self {
        Subject {
            id: id.into(),
            cohort,
        }
    }
}

/// Subject-disjoint partition. Ids within each set are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub search: Vec<String>,
    pub validation: Vec<String>,
    /// Set when the cohort sizes forced a fallback from 3 HC + 3 PD.
    pub note: Option<String>,
}

impl Split {
    pub fn is_disjoint(&self) -> bool {
        let mut all: Vec<&String> = self
            .train
            .iter()
            .chain(&self.search)
            .chain(&self.validation)
            .collect();
        let n = all.len();
        all.sort();
        all.dedup();
        all.len() == n
    }
}

/// Validation subjects per cohort under the reference protocol.
const VALIDATION_PER_COHORT: usize = 3;

/// Deterministic split for a fixed seed.
///
/// Validation takes 3 HC + 3 PD when each cohort has at least 4 subjects.
/// Smaller cohorts fall back to one subject per cohort (both cohorts
/// present, each with at least 2), or about 20% of a single-cohort list;
/// the fallback is described in [`Split::note`]. The search set takes about
/// 20% of what remains per cohort, at least one subject when two or more
/// remain, always leaving each cohort at least one training subject.
pub fn make_split(subjects: &[Subject], seed: u64) -> Result<Split> {
    if subjects.is_empty() {
        return Err(Error::Config("cannot split an empty subject list".into()));
    }
    let mut ids: Vec<&str> = subjects.iter().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("duplicate subject id".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<String>> = [Cohort::Hc, Cohort::Pd]
        .iter()
        .map(|&c| {
            let mut v: Vec<String> = subjects
                .iter()
                .filter(|s| s.cohort == c)
                .map(|s| s.id.clone())
                .collect();
            v.sort();
            v.shuffle(&mut rng);
            v
        })
        .filter(|v| !v.is_empty())
        .collect();

    let mut note = None;
    let mut validation = Vec::new();
    if pools.len() == 2 {
        let smallest = pools.iter().map(Vec::len).min().unwrap_or(0);
        let k = if smallest > VALIDATION_PER_COHORT {
            VALIDATION_PER_COHORT
        } else {
            let k = usize::from(smallest >= 2);
            note = Some(format!(
                "smallest cohort has {smallest} subjects; validation uses {k} per cohort instead of {VALIDATION_PER_COHORT}"
            ));
            k
        };
        for pool in &mut pools {
            validation.extend(pool.drain(..k));
        }
    } else {
        let pool = &mut pools[0];
        let k = ((pool.len() as f64 * 0.2).round() as usize).min(pool.len() - 1);
        note = Some(format!(
            "single cohort; validation takes {k} of {} subjects",
            pool.len()
        ));
        validation.extend(pool.drain(..k));
    }
    if validation.is_empty() {
        note = Some(match note {
            Some(n) => format!("{n}; validation set is empty"),
            None => "validation set is empty".into(),
        });
    }

    let mut search = Vec::new();
    for pool in &mut pools {
        let n = pool.len();
        let k = if n >= 2 {
            ((n as f64 * 0.2).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        search.extend(pool.drain(..k));
    }
    let mut train: Vec<String> = pools.into_iter().flatten().collect();
    for v in [&mut train, &mut search, &mut validation] {
        v.sort();
    }
    Ok(Split {
        train,
        search,
        validation,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(prefix: &str, c: Cohort, n: usize) -> Vec<Subject> {
        (0..n)
            .map(|i| Subject::new(format!("{prefix}{i:02}"), c))
            .collect()
    }

    fn count(ids: &[String], prefix: &str) -> usize {
        ids.iter().filter(|s| s.starts_with(prefix)).count()
    }

    #[test]
    fn reference_cohorts_give_three_and_three() {
        let mut subjects = cohort("hc", Cohort::Hc, 15);
        subjects.extend(cohort("pd", Cohort::Pd, 16));
        let s = make_split(&subjects, 0).unwrap();
        assert_eq!(count(&s.validation, "hc"), 3);
        assert_eq!(count(&s.validation, "pd"), 3);
        assert!(s.note.is_none());
        assert!(s.is_disjoint());
        assert_eq!(s.train.len() + s.search.len() + s.validation.len(), 31);
        assert!(!s.search.is_empty());
    }

    #[test]
    fn single_subject_trains_alone() {
        let s = make_split(&cohort("hc", Cohort::Hc, 1), 3).unwrap();
        assert_eq!(s.train, vec!["hc00".to_string()]);
        assert!(s.validation.is_empty() && s.search.is_empty());
        assert!(s.note.unwrap().contains("empty"));
    }

    #[test]
    fn same_seed_same_split() {
        let mut subjects = cohort("hc", Cohort::Hc, 7);
        subjects.extend(cohort("pd", Cohort::Pd, 9));
        assert_eq!(
            make_split(&subjects, 11).unwrap(),
            make_split(&subjects, 11).unwrap()
        );
        let mut reversed = subjects.clone();
        reversed.reverse();
        assert_eq!(
            make_split(&subjects, 11).unwrap(),
            make_split(&reversed, 11).unwrap()
        );
    }

    #[test]
    fn empty_list_is_config_error() {
        assert!(matches!(make_split(&[], 0), Err(Error::Config(_))));
    }

    #[test]
    fn small_cohorts_fall_back_evenly() {
        let mut subjects = cohort("hc", Cohort::Hc, 2);
        subjects.extend(cohort("pd", Cohort::Pd, 5));
        let s = make_split(&subjects, 1).unwrap();
        assert_eq!(count(&s.validation, "hc"), 1);
        assert_eq!(count(&s.validation, "pd"), 1);
        assert!(s.note.is_some());
        assert!(count(&s.train, "hc") >= 1);
    }
}
