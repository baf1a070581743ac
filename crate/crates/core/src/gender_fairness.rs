//! Gender F1 scores and the fairness statistics built from them.
//!
//! `psi = (f_m - f_f) / (f_m + f_f)` lies in [-1, 1]: 0 is balanced, +1 and -1
//! are fully skewed toward male and female. `psi_star = |psi_anti - psi_pro|`
//! contrasts the pro- and anti-stereotypical subsets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictedGender {
    Male,
    Female,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stereotype {
    Pro,
    Anti,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderRecord {
    pub gold_gender: Gender,
    pub predicted_gender: PredictedGender,
    pub stereotype: Stereotype,
    pub lang: String,
}

/// Per-class confusion counts; merging is plain addition.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let p = if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 };
        let r = if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Confusion counts for (male, female). An `unknown` prediction is a miss for
/// the gold class and a false positive for neither.
pub fn confusions<'a>(records: impl IntoIterator<Item = &'a GenderRecord>) -> (Confusion, Confusion) {
    let (mut m, mut f) = (Confusion::default(), Confusion::default());
    for r in records {
        let (gold, other) = match r.gold_gender {
            Gender::Male => (&mut m, &mut f),
            Gender::Female => (&mut f, &mut m),
        };
        let hit = matches!(
            (r.gold_gender, r.predicted_gender),
            (Gender::Male, PredictedGender::Male) | (Gender::Female, PredictedGender::Female)
        );
        if hit {
            gold.tp += 1;
        } else {
            gold.fn_ += 1;
            if r.predicted_gender != PredictedGender::Unknown {
                other.fp += 1;
            }
        }
    }
    (m, f)
}

/// Male and female F1.
pub fn gender_f1(records: &[GenderRecord]) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::Empty("gender records".into()));
    }
    let (m, f) = confusions(records);
    Ok((m.f1(), f.f1()))
}

/// The fairness ratio for given F1 scores.
pub fn psi_from_f1(f_m: f64, f_f: f64) -> Result<f64> {
    if f_m + f_f <= 0.0 {
        return Err(Error::Degenerate("both gender F1 scores are zero".into()));
    }
    Ok((f_m - f_f) / (f_m + f_f))
}

pub fn psi(records: &[GenderRecord]) -> Result<f64> {
    let (f_m, f_f) = gender_f1(records)?;
    psi_from_f1(f_m, f_f)
}

pub fn psi_star_from(psi_pro: f64, psi_anti: f64) -> f64 {
    (psi_anti - psi_pro).abs()
}

/// Absolute gap between the anti- and pro-stereotypical fairness ratios.
/// Neutral records are ignored.
pub fn psi_star(records: &[GenderRecord]) -> Result<f64> {
    let subset =
        |s: Stereotype| -> Vec<GenderRecord> { records.iter().filter(|r| r.stereotype == s).cloned().collect() };
    let pro = subset(Stereotype::Pro);
    let anti = subset(Stereotype::Anti);
    if pro.is_empty() || anti.is_empty() {
        return Err(Error::Empty("pro- or anti-stereotypical subset".into()));
    }
    Ok(psi_star_from(psi(&pro)?, psi(&anti)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageFairness {
    pub n: usize,
    pub f_m: f64,
    pub f_f: f64,
    pub psi: Option<f64>,
    pub psi_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub per_language: BTreeMap<String, LanguageFairness>,
    /// Mean over the languages where the statistic is defined.
    pub average_psi: Option<f64>,
    pub average_psi_star: Option<f64>,
}

pub fn fairness_report(records: &[GenderRecord]) -> Result<FairnessReport> {
    if records.is_empty() {
        return Err(Error::Empty("gender records".into()));
    }
    let mut by_lang: BTreeMap<&str, Vec<GenderRecord>> = BTreeMap::new();
    for r in records {
        by_lang.entry(r.lang.as_str()).or_default().push(r.clone());
    }
    let mut per_language = BTreeMap::new();
    for (lang, recs) in by_lang {
        let (f_m, f_f) = gender_f1(&recs)?;
        per_language.insert(
            lang.to_owned(),
            LanguageFairness {
                n: recs.len(),
                f_m,
                f_f,
                psi: psi_from_f1(f_m, f_f).ok(),
                psi_star: psi_star(&recs).ok(),
            },
        );
    }
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let average_psi = mean(per_language.values().filter_map(|l| l.psi).collect());
    let average_psi_star = mean(per_language.values().filter_map(|l| l.psi_star).collect());
    Ok(FairnessReport { per_language, average_psi, average_psi_star })
}
