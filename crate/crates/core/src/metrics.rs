//! Utility of synthetic data against the real table.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ColumnKind, Domain};
use crate::error::{Error, Result};
use crate::table::{Column, MixedTable};

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_FOLDS: usize = 5;

/// Cell codes of one column for both tables on a shared grid.
struct Binned {
    cards: Vec<usize>,
    /// Column-major codes: `real[col][row]`.
    real: Vec<Vec<usize>>,
    synth: Vec<Vec<usize>>,
}

fn bin_column(
    name: &str,
    kind: &ColumnKind,
    a: &Column,
    b: &Column,
    bins: usize,
) -> Result<(usize, Vec<usize>, Vec<usize>)> {
    match (kind, a, b) {
        (ColumnKind::Categorical { categories }, Column::Categorical(x), Column::Categorical(y)) => {
            let code = |v: &String| {
                categories
                    .iter()
                    .position(|c| c == v)
                    .ok_or_else(|| Error::Encoding { column: name.to_string(), value: v.clone() })
            };
            let x = x.iter().map(code).collect::<Result<Vec<_>>>()?;
            let y = y.iter().map(code).collect::<Result<Vec<_>>>()?;
            Ok((categories.len(), x, y))
        }
        (ColumnKind::Numerical { bounds }, Column::Numerical(x), Column::Numerical(y)) => {
            // Without declared bounds the evaluation grid spans both tables.
            let (lo, hi) = bounds.unwrap_or_else(|| {
                x.iter().chain(y).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)))
            });
            let width = hi - lo;
            let code = |v: f64| {
                if !(width > 0.0) {
                    return 0;
                }
                (((v - lo) / width * bins as f64).floor().max(0.0) as usize).min(bins - 1)
            };
            Ok((bins, x.iter().map(|&v| code(v)).collect(), y.iter().map(|&v| code(v)).collect()))
        }
        _ => Err(Error::validation(format!("column `{name}` has the wrong kind"))),
    }
}

fn bin_tables(real: &MixedTable, synth: &MixedTable, domain: &Domain, bins: usize) -> Result<Binned> {
    if bins == 0 {
        return Err(Error::invalid("bins must be at least 1"));
    }
    real.check_schema(domain)?;
    synth.check_schema(domain)?;
    let mut out = Binned { cards: Vec::new(), real: Vec::new(), synth: Vec::new() };
    for (j, spec) in domain.columns.iter().enumerate() {
        let (card, x, y) = bin_column(&spec.name, &spec.kind, &real.columns()[j], &synth.columns()[j], bins)?;
        out.cards.push(card);
        out.real.push(x);
        out.synth.push(y);
    }
    Ok(out)
}

fn one_minus_tvd(cells: usize, a: impl Iterator<Item = usize>, b: impl Iterator<Item = usize>) -> Result<f64> {
    let mut pa = vec![0.0; cells];
    let mut pb = vec![0.0; cells];
    let (mut na, mut nb) = (0usize, 0usize);
    for k in a {
        pa[k] += 1.0;
        na += 1;
    }
    for k in b {
        pb[k] += 1.0;
        nb += 1;
    }
    if na == 0 || nb == 0 {
        return Err(Error::invalid("similarity of an empty table"));
    }
    let tvd: f64 = 0.5 * pa.iter().zip(&pb).map(|(x, y)| (x / na as f64 - y / nb as f64).abs()).sum::<f64>();
    Ok((1.0 - tvd).clamp(0.0, 1.0))
}

/// Mean over columns of `1 - TVD` between the two histograms.
pub fn similarity_1way(real: &MixedTable, synth: &MixedTable, domain: &Domain, bins: usize) -> Result<f64> {
    let b = bin_tables(real, synth, domain, bins)?;
    let d = b.cards.len();
    let mut total = 0.0;
    for j in 0..d {
        total += one_minus_tvd(b.cards[j], b.real[j].iter().copied(), b.synth[j].iter().copied())?;
    }
    Ok(total / d as f64)
}

/// Mean over column pairs of `1 - TVD` between the joint histograms.
pub fn similarity_2way(real: &MixedTable, synth: &MixedTable, domain: &Domain, bins: usize) -> Result<f64> {
    if domain.len() < 2 {
        return Err(Error::invalid("2-way similarity needs at least two columns"));
    }
    let b = bin_tables(real, synth, domain, bins)?;
    let d = b.cards.len();
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..d {
        for j in i + 1..d {
            let cj = b.cards[j];
            let joint = |side: &Vec<Vec<usize>>| {
                let (x, y) = (&side[i], &side[j]);
                x.iter().zip(y).map(move |(a, b)| a * cj + b).collect::<Vec<_>>()
            };
            total += one_minus_tvd(b.cards[i] * cj, joint(&b.real).into_iter(), joint(&b.synth).into_iter())?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Area under the ROC curve via the rank-sum statistic, ties averaged.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    Ok((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos as f64 * neg as f64))
}

const L2: f64 = 1e-3;
const GD_ITERS: usize = 400;

/// L2-regularized logistic regression on one-hot rows (`rows[i]` lists the
/// active features), by accelerated gradient descent.
fn train_logistic(rows: &[Vec<usize>], labels: &[bool], n_features: usize) -> Vec<f64> {
    let p = n_features + 1; // last weight is the intercept
    let active = rows.first().map_or(0, Vec::len) + 1;
    let step = 1.0 / (0.25 * active as f64 + L2);
    let n = rows.len() as f64;
    let mut w = vec![0.0; p];
    let mut prev = w.clone();
    let mut grad = vec![0.0; p];
    for t in 0..GD_ITERS {
        let momentum = t as f64 / (t as f64 + 3.0);
        let look: Vec<f64> = w.iter().zip(&prev).map(|(a, b)| a + momentum * (a - b)).collect();
        grad.iter_mut().zip(&look).for_each(|(g, v)| *g = L2 * v);
        for (row, &y) in rows.iter().zip(labels) {
            let z: f64 = row.iter().map(|&k| look[k]).sum::<f64>() + look[p - 1];
            let r = (1.0 / (1.0 + (-z).exp()) - if y { 1.0 } else { 0.0 }) / n;
            for &k in row {
                grad[k] += r;
            }
            grad[p - 1] += r;
        }
        prev = std::mem::replace(&mut w, look.iter().zip(&grad).map(|(v, g)| v - step * g).collect());
    }
    w
}

/// `2 (1 - max(AUC, 0.5))` of a linear classifier telling real (label 1)
/// from synthetic rows, with out-of-fold predictions: 1 when
/// indistinguishable, 0 when separable.
pub fn distinguishability<R: Rng + ?Sized>(
    real: &MixedTable,
    synth: &MixedTable,
    domain: &Domain,
    folds: usize,
    rng: &mut R,
) -> Result<f64> {
    distinguishability_with_bins(real, synth, domain, folds, DEFAULT_BINS, rng)
}

pub fn distinguishability_with_bins<R: Rng + ?Sized>(
    real: &MixedTable,
    synth: &MixedTable,
    domain: &Domain,
    folds: usize,
    bins: usize,
    rng: &mut R,
) -> Result<f64> {
    if real.n_rows() == 0 || synth.n_rows() == 0 {
        return Err(Error::invalid("distinguishability needs non-empty tables"));
    }
    let total = real.n_rows() + synth.n_rows();
    if folds < 2 || total < folds {
        return Err(Error::invalid(format!("need at least 2 folds and as many rows as folds, got {folds} folds")));
    }
    let b = bin_tables(real, synth, domain, bins)?;
    let offsets: Vec<usize> = b.cards.iter().scan(0, |acc, c| Some(std::mem::replace(acc, *acc + c))).collect();
    let n_features: usize = b.cards.iter().sum();
    let encode = |side: &Vec<Vec<usize>>, r: usize| -> Vec<usize> { (0..b.cards.len()).map(|j| offsets[j] + side[j][r]).collect() };
    let mut rows = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for r in 0..real.n_rows() {
        rows.push(encode(&b.real, r));
        labels.push(true);
    }
    for r in 0..synth.n_rows() {
        rows.push(encode(&b.synth, r));
        labels.push(false);
    }
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(rng);
    let mut fold_of = vec![0; total];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let mut scores = vec![0.0; total];
    for f in 0..folds {
        let train: Vec<usize> = (0..total).filter(|&i| fold_of[i] != f).collect();
        let tr_rows: Vec<Vec<usize>> = train.iter().map(|&i| rows[i].clone()).collect();
        let tr_labels: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let w = train_logistic(&tr_rows, &tr_labels, n_features);
        for i in (0..total).filter(|&i| fold_of[i] == f) {
            scores[i] = rows[i].iter().map(|&k| w[k]).sum::<f64>() + w[n_features];
        }
    }
    let a = auc(&scores, &labels)?;
    Ok((2.0 * (1.0 - a.max(0.5))).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub similarity_1way: f64,
    pub similarity_2way: f64,
    pub distinguishability: f64,
    pub mean: f64,
}

impl UtilityReport {
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain numbers serialize")
    }
}

/// The three scores with default bins and folds, and their mean.
pub fn utility_report<R: Rng + ?Sized>(real: &MixedTable, synth: &MixedTable, domain: &Domain, rng: &mut R) -> Result<UtilityReport> {
    utility_report_with_bins(real, synth, domain, DEFAULT_BINS, rng)
}

pub fn utility_report_with_bins<R: Rng + ?Sized>(
    real: &MixedTable,
    synth: &MixedTable,
    domain: &Domain,
    bins: usize,
    rng: &mut R,
) -> Result<UtilityReport> {
    let one = similarity_1way(real, synth, domain, bins)?;
    let two = if domain.len() >= 2 { similarity_2way(real, synth, domain, bins)? } else { one };
    let dist = distinguishability_with_bins(real, synth, domain, DEFAULT_FOLDS, bins, rng)?;
    Ok(UtilityReport { similarity_1way: one, similarity_2way: two, distinguishability: dist, mean: (one + two + dist) / 3.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_ranks_with_ties() {
        assert_eq!(auc(&[0.1, 0.2, 0.9, 0.8], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
        assert!(auc(&[0.1], &[true]).is_err());
    }
}
