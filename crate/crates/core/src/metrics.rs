//! Ranking metrics, macro one-vs-rest averaging, and trend/variation
//! correlation analysis.

use std::cmp::Ordering;

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::wavelet::{ftm_decompose, symlet_filters};

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "scores and labels",
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("in scores at position {i}"),
        });
    }
    let pos = labels.iter().filter(|l| **l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Data(format!(
            "AUROC needs both classes: {pos} positive, {neg} negative"
        )));
    }
    // walk from the highest score down, counting negatives already passed
    let mut wins = 0.0;
    let mut negatives_below = neg as f64;
    for group in tie_groups(scores) {
        let p = group.iter().filter(|&&i| labels[i]).count() as f64;
        let n = group.len() as f64 - p;
        negatives_below -= n;
        wins += p * (negatives_below + 0.5 * n);
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Step-curve area `Σ (R_i - R_{i-1}) · P_i` over descending distinct score
/// thresholds.
pub fn auprc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(scores, labels)?;
    if pos == 0 {
        return Err(Error::Data("AUPRC needs at least one positive".into()));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for group in tie_groups(scores) {
        tp += group.iter().filter(|&&i| labels[i]).count();
        seen += group.len();
        let recall = tp as f64 / pos as f64;
        area += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(area)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Auroc,
    Auprc,
}

impl Metric {
    pub fn binary(self, scores: &[f64], labels: &[bool]) -> Result<f64> {
        match self {
            Metric::Auroc => auroc_binary(scores, labels),
            Metric::Auprc => auprc_binary(scores, labels),
        }
    }
}

/// Predicted class probabilities and true labels for a set of patients.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCohort {
    pub ids: Vec<String>,
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl ScoredCohort {
    pub fn validate(&self) -> Result<()> {
        if self.probs.len() != self.labels.len() || self.ids.len() != self.labels.len() {
            return Err(Error::LengthMismatch {
                context: "scored cohort rows",
                expected: self.labels.len(),
                found: self.probs.len(),
            });
        }
        for (i, (p, y)) in self.probs.iter().zip(&self.labels).enumerate() {
            let sum: f64 = p.iter().sum();
            if p.len() != self.classes || *y >= self.classes {
                return Err(Error::Data(format!("row {i} does not match {} classes", self.classes)));
            }
            if !p.iter().all(|v| v.is_finite() && *v >= 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Numerical(format!("row {i} is not a probability vector")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroReport {
    pub value: f64,
    /// Per-class value, `None` when the class was skipped.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Unweighted mean of one-vs-rest binary metrics over classes that have both
/// positives and negatives.
pub fn macro_ovr(scored: &ScoredCohort, metric: Metric) -> Result<MacroReport> {
    if scored.classes < 2 {
        return Err(Error::Config("macro averaging needs at least 2 classes".into()));
    }
    scored.validate()?;
    let mut per_class = Vec::with_capacity(scored.classes);
    let mut skipped = Vec::new();
    for j in 0..scored.classes {
        let labels: Vec<bool> = scored.labels.iter().map(|y| *y == j).collect();
        let pos = labels.iter().filter(|l| **l).count();
        if pos == 0 || pos == labels.len() {
            per_class.push(None);
            skipped.push(j);
            continue;
        }
        let scores: Vec<f64> = scored.probs.iter().map(|p| p[j]).collect();
        per_class.push(Some(metric.binary(&scores, &labels)?));
    }
    let used: Vec<f64> = per_class.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::Data("every class is degenerate in this split".into()));
    }
    Ok(MacroReport {
        value: used.iter().sum::<f64>() / used.len() as f64,
        per_class,
        skipped,
    })
}

/// Product-moment correlation; constant input is an error.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            context: "pearson",
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Data("correlation needs at least 2 points".into()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    // relative threshold: rounding leaves tiny residue on constant input
    let scale = |m: f64| (m.abs().max(1.0) * 1e-12).powi(2) * n;
    if saa <= scale(ma) || sbb <= scale(mb) {
        return Err(Error::Data("undefined correlation: constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationEntry {
    pub class: usize,
    pub feature: String,
    /// Mean Pearson(E*, R*) over the class's patients with a defined value.
    pub mean_r: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
    /// 1-based rank among defined entries.
    pub rank: Option<usize>,
    pub top5: bool,
}

/// Per (class, feature) trend/variation correlation, ranked by descending
/// mean `r`; undefined entries come last.
pub fn trend_variation_report(cohort: &Cohort, order: usize) -> Result<Vec<CorrelationEntry>> {
    let filters = symlet_filters(order)?;
    let c = cohort.dynamic_names.len();
    let mut sums = vec![vec![(0.0, 0usize, 0usize); c]; cohort.classes];
    for p in &cohort.patients {
        let pairs = ftm_decompose(&p.visits, &filters)?;
        for (j, pair) in pairs.iter().enumerate() {
            let slot = &mut sums[p.label][j];
            match pearson(&pair.trend, &pair.variation) {
                Ok(r) => {
                    slot.0 += r;
                    slot.1 += 1;
                }
                Err(Error::Data(_)) => slot.2 += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let mut entries: Vec<CorrelationEntry> = sums
        .iter()
        .enumerate()
        .flat_map(|(k, row)| {
            row.iter().enumerate().map(move |(j, (sum, defined, undefined))| CorrelationEntry {
                class: k,
                feature: cohort.dynamic_names[j].clone(),
                mean_r: (*defined > 0).then(|| sum / *defined as f64),
                defined: *defined,
                undefined: *undefined,
                rank: None,
                top5: false,
            })
        })
        .filter(|e| e.defined + e.undefined > 0)
        .collect();
    entries.sort_by(|a, b| match (a.mean_r, b.mean_r) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    });
    for (i, e) in entries.iter_mut().enumerate() {
        if e.mean_r.is_some() {
            e.rank = Some(i + 1);
            e.top5 = i < 5;
        }
    }
    Ok(entries)
}
