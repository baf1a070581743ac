//! Word-sense bias metrics over disambiguation outcomes.
//!
//! Senses of a (lemma, POS) key are ranked by frequency, 1 being the most
//! frequent. SFII and SPDI are error rates macro-averaged over buckets of gold
//! sense index and of polysemy degree; MFS and MFS+ look only at errors with a
//! mappable prediction and count how often the model fell back to a more
//! frequent sense, or to the most frequent one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenseRecord {
    pub lemma_pos: String,
    /// 1-based frequency rank of the gold sense.
    pub gold_index: usize,
    /// 1-based frequency rank of the predicted sense, when it maps to one.
    #[serde(default)]
    pub predicted_index: Option<usize>,
    pub correct: bool,
    pub polysemy: usize,
}

impl SenseRecord {
    pub fn validate(&self) -> Result<()> {
        let in_range = |i: usize| (1..=self.polysemy).contains(&i);
        if self.polysemy == 0 || !in_range(self.gold_index) {
            return Err(Error::InvalidArgument(format!(
                "'{}': gold index {} outside 1..={}",
                self.lemma_pos, self.gold_index, self.polysemy
            )));
        }
        if let Some(p) = self.predicted_index {
            if !in_range(p) {
                return Err(Error::InvalidArgument(format!(
                    "'{}': predicted index {p} outside 1..={}",
                    self.lemma_pos, self.polysemy
                )));
            }
            if self.correct && p != self.gold_index {
                return Err(Error::InvalidArgument(format!(
                    "'{}': marked correct but predicted {p} != gold {}",
                    self.lemma_pos, self.gold_index
                )));
            }
        }
        Ok(())
    }
}

fn validate_all(records: &[SenseRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty("sense records".into()));
    }
    records.iter().try_for_each(SenseRecord::validate)
}

/// 100 x unweighted mean over buckets of the per-bucket error rate.
fn bucketed_error(records: &[SenseRecord], key: impl Fn(&SenseRecord) -> usize) -> Result<f64> {
    validate_all(records)?;
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let b = buckets.entry(key(r)).or_default();
        b.1 += 1;
        if !r.correct {
            b.0 += 1;
        }
    }
    let sum: f64 = buckets.values().map(|&(wrong, total)| wrong as f64 / total as f64).sum();
    Ok(100.0 * sum / buckets.len() as f64)
}

/// Sense-frequency index influence: error rate bucketed by gold sense index.
pub fn sfii(records: &[SenseRecord]) -> Result<f64> {
    bucketed_error(records, |r| r.gold_index)
}

/// Sense-polysemy degree influence: error rate bucketed by polysemy.
pub fn spdi(records: &[SenseRecord]) -> Result<f64> {
    bucketed_error(records, |r| r.polysemy)
}

fn error_share(records: &[SenseRecord], hit: impl Fn(usize, usize) -> bool) -> Result<f64> {
    validate_all(records)?;
    let errors: Vec<(usize, usize)> =
        records.iter().filter(|r| !r.correct).filter_map(|r| r.predicted_index.map(|p| (p, r.gold_index))).collect();
    if errors.is_empty() {
        return Err(Error::Degenerate("no erroneous record with a mappable prediction".into()));
    }
    let n = errors.iter().filter(|&&(p, g)| hit(p, g)).count();
    Ok(100.0 * n as f64 / errors.len() as f64)
}

/// Share of errors that picked a more frequent sense than the gold one.
pub fn mfs(records: &[SenseRecord]) -> Result<f64> {
    error_share(records, |p, g| p < g)
}

/// Share of errors that picked the most frequent sense.
pub fn mfs_plus(records: &[SenseRecord]) -> Result<f64> {
    error_share(records, |p, g| p == 1 && p < g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SenseBiasRow {
    #[serde(rename = "SFII")]
    pub sfii: f64,
    #[serde(rename = "SPDI")]
    pub spdi: f64,
    #[serde(rename = "MFS")]
    pub mfs: f64,
    #[serde(rename = "MFS+")]
    pub mfs_plus: f64,
    #[serde(rename = "AVG")]
    pub avg: f64,
}

pub fn mean_of_four(sfii: f64, spdi: f64, mfs: f64, mfs_plus: f64) -> f64 {
    (sfii + spdi + mfs + mfs_plus) / 4.0
}

pub fn bias_row(records: &[SenseRecord]) -> Result<SenseBiasRow> {
    let (a, b, c, d) = (sfii(records)?, spdi(records)?, mfs(records)?, mfs_plus(records)?);
    Ok(SenseBiasRow { sfii: a, spdi: b, mfs: c, mfs_plus: d, avg: mean_of_four(a, b, c, d) })
}

/// Arithmetic mean of SFII, SPDI, MFS and MFS+.
pub fn bias_average(records: &[SenseRecord]) -> Result<f64> {
    Ok(bias_row(records)?.avg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(gold: usize, pred: Option<usize>, poly: usize) -> SenseRecord {
        SenseRecord {
            lemma_pos: "shot/n".into(),
            gold_index: gold,
            predicted_index: pred,
            correct: pred == Some(gold),
            polysemy: poly,
        }
    }

    #[test]
    fn sfii_examples() {
        let right = vec![rec(1, Some(1), 3), rec(2, Some(2), 3)];
        assert_eq!(sfii(&right).unwrap(), 0.0);
        let wrong = vec![rec(1, Some(2), 3), rec(2, None, 3)];
        assert_eq!(sfii(&wrong).unwrap(), 100.0);
        let mixed = vec![
            rec(1, Some(2), 4),
            rec(1, Some(3), 4),
            rec(1, Some(1), 4),
            rec(1, Some(1), 4),
            rec(2, Some(1), 4),
            rec(2, Some(2), 4),
        ];
        assert_eq!(sfii(&mixed).unwrap(), 50.0);
        assert!(sfii(&[]).is_err());
    }

    #[test]
    fn spdi_examples() {
        let one_bucket = vec![rec(1, Some(2), 3), rec(1, Some(1), 3), rec(2, Some(2), 3), rec(3, Some(3), 3)];
        assert_eq!(spdi(&one_bucket).unwrap(), 25.0);
        let mut two = vec![rec(1, Some(2), 2), rec(1, Some(1), 2), rec(2, Some(2), 2), rec(1, Some(1), 2)];
        two.extend([rec(1, Some(2), 5), rec(2, Some(1), 5), rec(3, Some(1), 5), rec(4, Some(4), 5)]);
        assert_eq!(spdi(&two).unwrap(), 50.0);
    }

    #[test]
    fn mfs_examples() {
        assert_eq!(mfs(&[rec(3, Some(1), 4), rec(3, Some(1), 4)]).unwrap(), 100.0);
        assert_eq!(mfs(&[rec(1, Some(2), 4), rec(2, Some(3), 4)]).unwrap(), 0.0);
        let v = mfs(&[rec(2, Some(1), 4), rec(2, Some(3), 4), rec(4, Some(1), 4)]).unwrap();
        assert!((v - 200.0 / 3.0).abs() < 1e-9);
        assert!(mfs(&[rec(1, Some(1), 2), rec(1, None, 2)]).is_err());
    }

    #[test]
    fn mfs_plus_examples() {
        assert_eq!(mfs_plus(&[rec(2, Some(1), 3), rec(3, Some(1), 3)]).unwrap(), 100.0);
        assert_eq!(mfs_plus(&[rec(3, Some(2), 3), rec(1, Some(3), 3)]).unwrap(), 0.0);
        let v = mfs_plus(&[rec(2, Some(1), 3), rec(3, Some(1), 3), rec(3, Some(2), 3)]).unwrap();
        assert!((v - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn average_of_four() {
        assert_eq!(mean_of_four(80.0, 70.0, 50.0, 88.0), 72.0);
        assert_eq!(mean_of_four(0.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(mean_of_four(100.0, 100.0, 100.0, 100.0), 100.0);
    }

    #[test]
    fn invalid_records() {
        assert!(rec(4, Some(1), 3).validate().is_err());
        assert!(rec(1, Some(5), 3).validate().is_err());
        let mut r = rec(1, Some(2), 3);
        r.correct = true;
        assert!(r.validate().is_err());
    }
}
