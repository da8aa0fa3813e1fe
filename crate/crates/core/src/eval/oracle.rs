//! Ranked prediction lists and the per-index query accounting of true values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::kb::{NamedTriple, QuantLabel};

/// Predictions ordered by non-increasing score; equal scores by triple order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPredictions {
    entries: Vec<(NamedTriple, f64)>,
}

impl RankedPredictions {
    pub fn new(mut entries: Vec<(NamedTriple, f64)>) -> Self {
        entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry at 0-based rank `i`.
    pub fn get(&self, i: usize) -> Option<&(NamedTriple, f64)> {
        self.entries.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &(NamedTriple, f64)> {
        self.entries.iter()
    }

    /// Truth values against a label set: All/Some are true; absent or None is false.
    pub fn truth_vector(&self, truth: &BTreeMap<NamedTriple, QuantLabel>) -> Vec<bool> {
        self.entries
            .iter()
            .map(|(t, _)| truth.get(t).is_some_and(|l| l.is_positive()))
            .collect()
    }
}

/// Supplies true values `v(t_i)` for 0-based ranks. Requests arrive in rank order,
/// one batch per estimator step.
pub trait LabelSource {
    fn labels(&mut self, ranks: &[usize]) -> Result<Vec<bool>, EvalError>;
}

/// Ground-truth values held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VecLabels(pub Vec<bool>);

impl LabelSource for VecLabels {
    fn labels(&mut self, ranks: &[usize]) -> Result<Vec<bool>, EvalError> {
        ranks
            .iter()
            .map(|&i| {
                self.0
                    .get(i)
                    .copied()
                    .ok_or_else(|| EvalError::Label(format!("no label for rank {}", i + 1)))
            })
            .collect()
    }
}

/// Caching front for a [`LabelSource`]. Each rank is charged at most once; `queries`
/// is the number of distinct ranks resolved.
pub struct AnnotationOracle<'a> {
    source: Box<dyn LabelSource + 'a>,
    cache: Vec<Option<bool>>,
    queries: usize,
}

impl<'a> AnnotationOracle<'a> {
    /// An oracle over `m` ranked predictions.
    pub fn new(source: impl LabelSource + 'a, m: usize) -> Self {
        Self {
            source: Box::new(source),
            cache: vec![None; m],
            queries: 0,
        }
    }

    /// An oracle over an in-memory truth vector.
    pub fn from_truth(truth: Vec<bool>) -> AnnotationOracle<'static> {
        let m = truth.len();
        AnnotationOracle::new(VecLabels(truth), m)
    }

    /// Number of ranked predictions `m`.
    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    /// Number of true values among 1-based positions `lo..=hi`.
    pub fn count_true(&mut self, lo: usize, hi: usize) -> Result<usize, EvalError> {
        if lo == 0 || hi > self.len() || lo > hi {
            return Err(EvalError::YieldOutOfRange { y: hi, m: self.len() });
        }
        let missing: Vec<usize> = (lo - 1..hi).filter(|&i| self.cache[i].is_none()).collect();
        if !missing.is_empty() {
            let got = self.source.labels(&missing)?;
            if got.len() != missing.len() {
                return Err(EvalError::Label(format!(
                    "asked for {} labels, got {}",
                    missing.len(),
                    got.len()
                )));
            }
            for (i, v) in missing.iter().zip(got) {
                self.cache[*i] = Some(v);
            }
            self.queries += missing.len();
        }
        Ok(self.cache[lo - 1..hi].iter().filter(|v| **v == Some(true)).count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_breaks_ties_lexicographically() {
        let r = RankedPredictions::new(vec![
            (NamedTriple::new("b", "r", "x"), 1.0),
            (NamedTriple::new("a", "r", "x"), 1.0),
            (NamedTriple::new("c", "r", "x"), 2.0),
        ]);
        let order: Vec<&str> = r.iter().map(|(t, _)| t.source.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }

    #[test]
    fn cache_charges_each_rank_once() {
        let mut o = AnnotationOracle::from_truth(vec![true, false, true, true]);
        assert_eq!(o.count_true(1, 3).unwrap(), 2);
        assert_eq!(o.queries(), 3);
        assert_eq!(o.count_true(2, 4).unwrap(), 2);
        assert_eq!(o.queries(), 4);
        assert_eq!(o.count_true(1, 4).unwrap(), 3);
        assert_eq!(o.queries(), 4);
        assert!(o.count_true(0, 2).is_err());
        assert!(o.count_true(1, 5).is_err());
    }

    struct Recorder(Vec<Vec<usize>>);

    impl LabelSource for &mut Recorder {
        fn labels(&mut self, ranks: &[usize]) -> Result<Vec<bool>, EvalError> {
            self.0.push(ranks.to_vec());
            Ok(vec![true; ranks.len()])
        }
    }

    #[test]
    fn batches_arrive_in_rank_order() {
        let mut rec = Recorder(Vec::new());
        {
            let mut o = AnnotationOracle::new(&mut rec, 10);
            o.count_true(3, 5).unwrap();
            o.count_true(1, 8).unwrap();
        }
        assert_eq!(rec.0, vec![vec![2, 3, 4], vec![0, 1, 5, 6, 7]]);
    }
}
