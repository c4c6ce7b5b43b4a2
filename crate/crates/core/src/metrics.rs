//! Questionnaire-level and item-level evaluation metrics.
//!
//! With `N` users, 21 items, predicted scores `p` and true scores `t`:
//!
//! * DCHR  = fraction of users whose predicted severity category matches the true one
//! * ADODL = mean over users of `(63 - |sum(p) - sum(t)|) / 63`
//! * AHR   = mean over all (user, item) cells of `[p == t]`
//! * ACR   = mean over all (user, item) cells of `(3 - |p - t|) / 3`

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::AnswerSheet;

pub const MAX_TOTAL: u32 = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityCategory {
    Minimal,
    Mild,
    Moderate,
    Severe,
}

impl fmt::Display for SeverityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SeverityCategory::Minimal => "minimal",
            SeverityCategory::Mild => "mild",
            SeverityCategory::Moderate => "moderate",
            SeverityCategory::Severe => "severe",
        };
        f.write_str(s)
    }
}

/// minimal 0-9, mild 10-18, moderate 19-29, severe 30-63.
pub fn category_of(total: u32) -> Result<SeverityCategory> {
    match total {
        0..=9 => Ok(SeverityCategory::Minimal),
        10..=18 => Ok(SeverityCategory::Mild),
        19..=29 => Ok(SeverityCategory::Moderate),
        30..=MAX_TOTAL => Ok(SeverityCategory::Severe),
        _ => Err(Error::TotalOutOfRange(total)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dchr: f64,
    pub adodl: f64,
    pub ahr: f64,
    pub acr: f64,
    pub n_users: usize,
}

impl MetricReport {
    pub const HEADER: &'static str = "DCHR = category hit rate; ADODL = mean (63-|dTotal|)/63; \
AHR = exact item hit rate; ACR = mean (3-|dScore|)/3";

    /// CSV with a header row, columns in DCHR, ADODL, AHR, ACR order.
    pub fn to_csv(&self) -> String {
        format!(
            "dchr,adodl,ahr,acr,n_users\n{:.6},{:.6},{:.6},{:.6},{}\n",
            self.dchr, self.adodl, self.ahr, self.acr, self.n_users
        )
    }

    /// Human-readable table with percentages at two decimals.
    pub fn to_table(&self, label: &str) -> String {
        metrics_table(&[(label, self)])
    }
}

/// One header line, then one row per labeled report.
pub fn metrics_table(rows: &[(&str, &MetricReport)]) -> String {
    let mut s = format!(
        "# {}\n{:<24} {:>8} {:>8} {:>8} {:>8}\n",
        MetricReport::HEADER,
        "model",
        "DCHR",
        "ADODL",
        "AHR",
        "ACR"
    );
    for (label, m) in rows {
        s.push_str(&format!(
            "{:<24} {:>8} {:>8} {:>8} {:>8}\n",
            label,
            percent(m.dchr),
            percent(m.adodl),
            percent(m.ahr),
            percent(m.acr)
        ));
    }
    s
}

/// `0.4875` -> `"48.75%"`.
pub fn percent(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

/// Compares predicted and true sheets, aligned by position and user id.
pub fn compute_metrics(pred: &[AnswerSheet], truth: &[AnswerSheet]) -> Result<MetricReport> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Data("no answer sheets to score".into()));
    }
    let offenders: Vec<String> = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| p.user_id != t.user_id || p.scores.len() != t.scores.len())
        .map(|(p, t)| format!("{} != {}", p.user_id, t.user_id))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::UserMismatch(offenders));
    }

    let n = pred.len() as f64;
    let mut hits = 0usize;
    let mut adodl = 0.0;
    let mut exact = 0usize;
    let mut closeness = 0.0;
    let mut cells = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if category_of(p.total)? == category_of(t.total)? {
            hits += 1;
        }
        let diff = p.total.abs_diff(t.total) as f64;
        adodl += (MAX_TOTAL as f64 - diff) / MAX_TOTAL as f64;
        for (a, b) in p.scores.iter().zip(&t.scores) {
            if a == b {
                exact += 1;
            }
            closeness += (3.0 - a.abs_diff(*b) as f64) / 3.0;
            cells += 1;
        }
    }
    Ok(MetricReport {
        dchr: hits as f64 / n,
        adodl: adodl / n,
        ahr: exact as f64 / cells as f64,
        acr: closeness / cells as f64,
        n_users: pred.len(),
    })
}

/// Binary confusion counts with "relevant" (1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.fp + self.tn
    }

    /// Accuracy on truly relevant items.
    pub fn relevant_accuracy(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_).max(1) as f64
    }

    /// Accuracy on truly non-relevant items.
    pub fn non_relevant_accuracy(&self) -> f64 {
        self.tn as f64 / (self.tn + self.fp).max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        format!(
            "truth,pred_relevant,pred_non_relevant\nrelevant,{},{}\nnon_relevant,{},{}\n",
            self.tp, self.fn_, self.fp, self.tn
        )
    }
}

pub fn confusion(preds: &[u8], truths: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    let mut m = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truths) {
        match (t != 0, p != 0) {
            (true, true) => m.tp += 1,
            (true, false) => m.fn_ += 1,
            (false, true) => m.fp += 1,
            (false, false) => m.tn += 1,
        }
    }
    Ok(m)
}

/// Signed percentage change `100 * (after - before) / before`.
pub fn relative_change(before: u64, after: u64) -> Result<f64> {
    if before == 0 {
        return Err(Error::ZeroBaseline);
    }
    Ok(100.0 * (after as f64 - before as f64) / before as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sheet(user: &str, scores: Vec<u8>) -> AnswerSheet {
        AnswerSheet::new(user, scores).unwrap()
    }

    #[test]
    fn category_edges() {
        assert_eq!(category_of(0).unwrap(), SeverityCategory::Minimal);
        assert_eq!(category_of(9).unwrap(), SeverityCategory::Minimal);
        assert_eq!(category_of(10).unwrap(), SeverityCategory::Mild);
        assert_eq!(category_of(29).unwrap(), SeverityCategory::Moderate);
        assert_eq!(category_of(30).unwrap(), SeverityCategory::Severe);
        assert!(matches!(category_of(64), Err(Error::TotalOutOfRange(64))));
    }

    #[test]
    fn perfect_prediction() {
        let a = vec![sheet("a", vec![1; 21]), sheet("b", vec![2; 21])];
        let r = compute_metrics(&a, &a).unwrap();
        assert_eq!((r.dchr, r.adodl, r.ahr, r.acr), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn total_off_by_ten() {
        let mut p = vec![0u8; 21];
        let mut t = vec![0u8; 21];
        for s in p.iter_mut().take(10) {
            *s = 2;
        }
        for s in t.iter_mut().take(10) {
            *s = 1;
        }
        let r = compute_metrics(&[sheet("u", p)], &[sheet("u", t)]).unwrap();
        assert_eq!(r.dchr, 0.0);
        assert!((r.adodl - (63.0 - 10.0) / 63.0).abs() < 1e-5);
        assert!((r.adodl - 0.84127).abs() < 1e-5);
    }

    #[test]
    fn single_item_miss() {
        let mut p = vec![1u8; 21];
        let t = vec![1u8; 21];
        p[4] = 3;
        let r = compute_metrics(&[sheet("u", p)], &[sheet("u", t)]).unwrap();
        assert!((r.ahr - 20.0 / 21.0).abs() < 1e-12);
        assert!((r.acr - (20.0 + 1.0 / 3.0) / 21.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_users_are_listed() {
        let err = compute_metrics(&[sheet("a", vec![0; 21])], &[sheet("b", vec![0; 21])]).unwrap_err();
        match err {
            Error::UserMismatch(v) => assert_eq!(v, vec!["a != b".to_string()]),
            e => panic!("unexpected {e}"),
        }
        assert!(compute_metrics(&[], &[]).is_err());
    }

    #[test]
    fn confusion_counts() {
        let truths: Vec<u8> = [vec![1; 10], vec![0; 10]].concat();
        let m = confusion(&truths, &truths).unwrap();
        assert_eq!((m.tp, m.tn, m.fp, m.fn_), (10, 10, 0, 0));
        let truths: Vec<u8> = [vec![1; 5], vec![0; 15]].concat();
        let m = confusion(&[1; 20], &truths).unwrap();
        assert_eq!((m.tp, m.fp), (5, 15));
        assert!(confusion(&[1], &[]).is_err());
    }

    #[test]
    fn relative_changes() {
        assert!((relative_change(4345, 5136).unwrap() - 18.2048).abs() < 1e-3);
        assert!((relative_change(849, 830).unwrap() + 2.2379).abs() < 1e-3);
        assert!((relative_change(849, 322).unwrap() + 62.0730).abs() < 1e-3);
        assert!(matches!(relative_change(0, 3), Err(Error::ZeroBaseline)));
    }

    #[test]
    fn percent_format() {
        assert_eq!(percent(0.4875), "48.75%");
        assert_eq!(percent(0.8363), "83.63%");
    }
}
