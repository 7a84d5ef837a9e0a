//! Empirical privacy audits: a membership distinguishing game against whole
//! pipelines, and a floating-point support audit for noise samplers.

pub mod fixtures;

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::domain::{clique_strides, ColumnKind, ColumnSpec, Domain};
use crate::error::{Error, Result};
use crate::privacy::{gaussian_mechanism, gaussian_sigma_for_rho, rho_of_eps, NoiseScale};
use crate::rng::{fork_root, stream, SynthRng};
use crate::select::ModelKind;
use crate::synth::{fit, SynthesizerConfig};
use crate::table::{Column, MixedTable};

pub const MIN_RUNS: usize = 100;
pub const MIN_PROBES: usize = 10_000;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;
/// Baseline rows in the crafted neighbouring datasets.
pub const BASELINE_ROWS: usize = 4;
/// Rows generated per trained model in the game.
pub const GAME_SYNTH_ROWS: usize = 100;
/// Numeric values within the top `1 / TARGET_GRID` of a column's range count
/// as the target's cell.
const TARGET_GRID: f64 = 8.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decisions {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Decisions {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub eps_claimed: f64,
    pub delta: f64,
    pub runs: usize,
    pub eps_emp: f64,
    pub confidence: f64,
    pub violation: bool,
    /// Decisions at the threshold that attains `eps_emp`.
    pub counts: Decisions,
}

impl AuditOutcome {
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain fields serialize")
    }
}

/// One game run: the secret bit and the attack score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredRun {
    pub member: bool,
    pub score: f64,
}

/// One-sided Clopper–Pearson upper bound on a binomial rate after `k`
/// successes in `n` trials.
pub fn clopper_pearson_upper(k: usize, n: usize, confidence: f64) -> Result<f64> {
    if n == 0 || k > n {
        return Err(Error::invalid(format!("need 0 <= k <= n and n > 0, got k={k}, n={n}")));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    if k == n {
        return Ok(1.0);
    }
    let (a, b) = ((k + 1) as f64, (n - k) as f64);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < confidence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Empirical epsilon from scored runs: for every threshold (predict member
/// when `score >= t`), bound both error rates from above and take the
/// largest epsilon they certify.
pub fn eps_emp_from_decisions(runs: &[ScoredRun], delta: f64, confidence: f64) -> Result<(f64, Decisions)> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let pos = runs.iter().filter(|r| r.member).count();
    let neg = runs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("both arms need at least one run"));
    }
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ub = |k: usize, n: usize| -> Result<f64> {
        if let Some(v) = cache.get(&(k, n)) {
            return Ok(*v);
        }
        let v = clopper_pearson_upper(k, n, confidence)?;
        cache.insert((k, n), v);
        Ok(v)
    };
    let mut sorted: Vec<ScoredRun> = runs.to_vec();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    // Sweep thresholds upward: start with everything predicted member.
    let (mut fp, mut fn_) = (neg, 0usize);
    let mut best = (0.0_f64, Decisions { tp: pos, fp: neg, tn: 0, fn_: 0 });
    let mut i = 0;
    loop {
        let fpr_ub = ub(fp, neg)?;
        let fnr_ub = ub(fn_, pos)?;
        let mut eps = 0.0_f64;
        for (num, den) in [(1.0 - delta - fpr_ub, fnr_ub), (1.0 - delta - fnr_ub, fpr_ub)] {
            if num > 0.0 && den > 0.0 {
                eps = eps.max((num / den).ln());
            }
        }
        if eps > best.0 {
            best = (eps, Decisions { tp: pos - fn_, fp, tn: neg - fp, fn_ });
        }
        if i == sorted.len() {
            break;
        }
        let t = sorted[i].score;
        while i < sorted.len() && sorted[i].score == t {
            if sorted[i].member {
                fn_ += 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
    }
    Ok(best)
}

fn outcome(runs: &[ScoredRun], eps_claimed: f64, delta: f64, confidence: f64) -> Result<AuditOutcome> {
    let (eps_emp, counts) = eps_emp_from_decisions(runs, delta, confidence)?;
    Ok(AuditOutcome {
        eps_claimed,
        delta,
        runs: runs.len(),
        eps_emp,
        confidence,
        violation: eps_emp > eps_claimed,
        counts,
    })
}

/// Worst-case neighbours for a template domain: `D0` is
/// [`BASELINE_ROWS`] copies of the lowest cell, the target sits in the
/// highest cell of every column, and `D1 = D0 + target`.
pub fn craft_worst_case(template: &Domain) -> Result<(MixedTable, MixedTable, MixedTable)> {
    if template.len() < 2 {
        return Err(Error::invalid("worst-case template needs at least two columns"));
    }
    let mut base_cols = Vec::new();
    let mut target_cols = Vec::new();
    for spec in &template.columns {
        match &spec.kind {
            ColumnKind::Categorical { categories } if categories.len() >= 2 => {
                base_cols.push(Column::Categorical(vec![categories[0].clone(); BASELINE_ROWS]));
                target_cols.push(Column::Categorical(vec![categories[categories.len() - 1].clone()]));
            }
            ColumnKind::Numerical { bounds: Some((lo, hi)) } if lo < hi => {
                base_cols.push(Column::Numerical(vec![*lo; BASELINE_ROWS]));
                target_cols.push(Column::Numerical(vec![*hi]));
            }
            _ => {
                return Err(Error::invalid(format!(
                    "column `{}` needs two categories or declared bounds",
                    spec.name
                )))
            }
        }
    }
    let names = template.names();
    let d0 = MixedTable::new(names.clone(), base_cols)?;
    let target = MixedTable::new(names, target_cols)?;
    let d1 = concat(&d0, &target)?;
    Ok((d0, d1, target))
}

fn concat(a: &MixedTable, b: &MixedTable) -> Result<MixedTable> {
    let cols = a
        .columns()
        .iter()
        .zip(b.columns())
        .map(|(x, y)| match (x, y) {
            (Column::Categorical(x), Column::Categorical(y)) => Ok(Column::Categorical([x.clone(), y.clone()].concat())),
            (Column::Numerical(x), Column::Numerical(y)) => Ok(Column::Numerical([x.clone(), y.clone()].concat())),
            _ => Err(Error::validation("column kinds differ")),
        })
        .collect::<Result<Vec<_>>>()?;
    MixedTable::new(a.names().to_vec(), cols)
}

/// The audit's default template: three categorical columns of three values.
pub fn default_template() -> Domain {
    let cats = ["0", "1", "2"];
    Domain::new(vec![
        ColumnSpec::categorical("a", &cats),
        ColumnSpec::categorical("b", &cats),
        ColumnSpec::categorical("c", &cats),
    ])
    .expect("valid template")
}

/// Rows of `table` falling in the target's cell. `domain` gives numeric
/// ranges; without one (or without bounds) numeric values must match exactly.
pub fn target_cell_count(table: &MixedTable, target: &MixedTable, domain: Option<&Domain>) -> Result<usize> {
    if table.names() != target.names() || target.n_rows() != 1 {
        return Err(Error::validation("target must be one row with the table's columns"));
    }
    let mut hits = vec![true; table.n_rows()];
    for (j, (col, t)) in table.columns().iter().zip(target.columns()).enumerate() {
        match (col, t) {
            (Column::Categorical(v), Column::Categorical(t)) => {
                for (h, x) in hits.iter_mut().zip(v) {
                    *h &= *x == t[0];
                }
            }
            (Column::Numerical(v), Column::Numerical(t)) => {
                let bounds = domain.and_then(|d| match &d.columns[j].kind {
                    ColumnKind::Numerical { bounds } => *bounds,
                    ColumnKind::Categorical { .. } => None,
                });
                let (lo, hi) = match bounds {
                    Some((lo, hi)) => {
                        let w = (hi - lo) / TARGET_GRID;
                        ((t[0] - w).max(lo), (t[0] + w).min(hi))
                    }
                    None => (t[0], t[0]),
                };
                for (h, x) in hits.iter_mut().zip(v) {
                    *h &= *x >= lo && *x <= hi;
                }
            }
            _ => return Err(Error::validation("column kinds differ")),
        }
    }
    Ok(hits.into_iter().filter(|&h| h).count())
}

/// What a trained model exposes to the attacker.
pub struct Release {
    pub synthetic: MixedTable,
    /// White-box signal: noisy measurement mass at the target's cells.
    pub target_mass: f64,
}

/// A training procedure under audit.
pub trait Trainer: Sync {
    fn train(&self, data: &MixedTable, target: &MixedTable, rng: &mut SynthRng) -> Result<Release>;
}

impl<F> Trainer for F
where
    F: Fn(&MixedTable, &MixedTable, &mut SynthRng) -> Result<Release> + Sync,
{
    fn train(&self, data: &MixedTable, target: &MixedTable, rng: &mut SynthRng) -> Result<Release> {
        self(data, target, rng)
    }
}

/// Sum over the model's noisy measurements of the count at the target's
/// cell. Zero when the target cannot be encoded (e.g. a category the
/// model's domain lacks).
pub fn target_mass(model: &crate::synth::FittedSynthesizer, target: &MixedTable) -> f64 {
    let Ok(codes) = model.preprocessor().encode(target) else { return 0.0 };
    let row = codes.row(0);
    let domain = model.model().domain();
    model
        .measurements()
        .iter()
        .map(|m| {
            let c = m.clique();
            let idx: usize =
                c.attrs().iter().zip(clique_strides(domain, c)).map(|(&a, s)| row[a] as usize * s).sum();
            m.marginal.counts[idx]
        })
        .sum()
}

/// The shipped pipeline with the domain supplied as input.
pub struct PipelineTrainer {
    pub config: SynthesizerConfig,
    pub domain: Domain,
}

impl Trainer for PipelineTrainer {
    fn train(&self, data: &MixedTable, target: &MixedTable, rng: &mut SynthRng) -> Result<Release> {
        let model = fit(&self.config, data, &self.domain, rng)?;
        let synthetic = model.generate(GAME_SYNTH_ROWS, &[], rng)?;
        Ok(Release { synthetic, target_mass: target_mass(&model, target) })
    }
}

/// Plays `runs` rounds of the membership game: a balanced, shuffled
/// sequence of secret bits picks `D0` or `D1`, the trainer runs on it, and
/// the score is the target-cell count in the output plus the white-box mass.
pub fn run_distinguishing_game<T: Trainer + ?Sized, R: Rng + ?Sized>(
    trainer: &T,
    d0: &MixedTable,
    d1: &MixedTable,
    target: &MixedTable,
    domain: Option<&Domain>,
    runs: usize,
    rng: &mut R,
) -> Result<Vec<ScoredRun>> {
    if runs < MIN_RUNS {
        return Err(Error::invalid(format!("the game needs at least {MIN_RUNS} runs, got {runs}")));
    }
    let mut bits: Vec<bool> = (0..runs).map(|i| i < runs / 2).collect();
    bits.shuffle(rng);
    let root = fork_root(rng);
    bits.par_iter()
        .enumerate()
        .map(|(i, &member)| {
            let mut r = stream(root, i as u64);
            let data = if member { d1 } else { d0 };
            let wrap = |e: Error| Error::AuditRun { run: i, source: Box::new(e) };
            let release = trainer.train(data, target, &mut r).map_err(wrap)?;
            let count = target_cell_count(&release.synthetic, target, domain).map_err(wrap)?;
            Ok(ScoredRun { member, score: count as f64 + release.target_mass })
        })
        .collect()
}

/// Game audit of any trainer on the worst-case neighbours of `template`.
pub fn audit_trainer<T: Trainer + ?Sized, R: Rng + ?Sized>(
    trainer: &T,
    template: &Domain,
    runs: usize,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<AuditOutcome> {
    let (d0, d1, target) = craft_worst_case(template)?;
    let scored = run_distinguishing_game(trainer, &d0, &d1, &target, Some(template), runs, rng)?;
    outcome(&scored, epsilon, delta, DEFAULT_CONFIDENCE)
}

/// Configuration the pipeline audits train with: small fits on the template.
pub fn audit_config(model: ModelKind, epsilon: f64, delta: f64) -> SynthesizerConfig {
    SynthesizerConfig { model, epsilon, delta, fit_iters: 200, ..Default::default() }
}

/// Game audit of the shipped pipeline for `model`.
pub fn audit_pipeline<R: Rng + ?Sized>(model: ModelKind, runs: usize, epsilon: f64, delta: f64, rng: &mut R) -> Result<AuditOutcome> {
    let template = default_template();
    let trainer = PipelineTrainer { config: audit_config(model, epsilon, delta), domain: template.clone() };
    audit_trainer(&trainer, &template, runs, epsilon, delta, rng)
}

/// Power-of-two lattice matched to the larger input's magnitude: half an
/// ulp there. Outputs on this lattice look alike whichever input made them.
fn lattice_for(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        return f64::MIN_POSITIVE;
    }
    let exp = m.log2().floor() as i32;
    2f64.powi((exp - 53).max(-1022))
}

/// Exact signature of `y` relative to the lattice: its offset from the
/// nearest lattice point below, as raw bits.
fn signature(y: f64, lattice: f64) -> u64 {
    let scaled = y / lattice; // exact: lattice is a power of two
    (scaled - scaled.floor()).to_bits()
}

/// Floating-point support audit of a noise sampler on inputs `a` and `b`.
///
/// Each arm's support is sampled into a set of lattice signatures; a probe
/// is called "from that arm" when its signature is in the set. Both
/// orientations are scored and the larger epsilon reported. Gaussian noise
/// depends on sigma alone, so one audit covers every `(epsilon, delta)` on
/// that sigma's curve; `eps_claimed` is the one being checked.
#[allow(clippy::too_many_arguments)]
pub fn support_collision_audit<M, R>(
    mechanism: M,
    a: f64,
    b: f64,
    probes: usize,
    support_samples: usize,
    eps_claimed: f64,
    delta: f64,
    rng: &mut R,
) -> Result<AuditOutcome>
where
    M: Fn(f64, &mut SynthRng) -> Result<f64> + Sync,
    R: Rng + ?Sized,
{
    if probes < MIN_PROBES || support_samples < MIN_PROBES {
        return Err(Error::invalid(format!("probes and support samples must be at least {MIN_PROBES}")));
    }
    let lattice = lattice_for(a, b);
    let root = fork_root(rng);
    let draw = |x: f64, offset: u64, n: usize| -> Result<Vec<u64>> {
        (0..n)
            .into_par_iter()
            .map(|i| Ok(signature(mechanism(x, &mut stream(root, offset + i as u64))?, lattice)))
            .collect()
    };
    let n = (support_samples + probes) as u64;
    let support_a: HashSet<u64> = draw(a, 0, support_samples)?.into_iter().collect();
    let support_b: HashSet<u64> = draw(b, n, support_samples)?.into_iter().collect();
    let probes_a = draw(a, 2 * n, probes)?;
    let probes_b = draw(b, 3 * n, probes)?;
    let mut best: Option<AuditOutcome> = None;
    for (support, members, others) in [(&support_a, &probes_a, &probes_b), (&support_b, &probes_b, &probes_a)] {
        let scored: Vec<ScoredRun> = members
            .iter()
            .map(|s| ScoredRun { member: true, score: f64::from(u8::from(support.contains(s))) })
            .chain(others.iter().map(|s| ScoredRun { member: false, score: f64::from(u8::from(support.contains(s))) }))
            .collect();
        let o = outcome(&scored, eps_claimed, delta, DEFAULT_CONFIDENCE)?;
        if best.as_ref().is_none_or(|b| o.eps_emp > b.eps_emp) {
            best = Some(o);
        }
    }
    Ok(best.expect("two orientations"))
}

/// Sigma of a Gaussian release with the given sensitivity at
/// `(epsilon, delta)`, through the zCDP conversion the pipeline uses.
pub fn gaussian_sigma_for(epsilon: f64, delta: f64, sensitivity: f64) -> Result<f64> {
    gaussian_sigma_for_rho(rho_of_eps(epsilon, delta)?, sensitivity)
}

/// Support audit of this library's exact Gaussian sampler at `a = 0`,
/// `b = 2^40`, calibrated to that distance.
pub fn audit_exact_gaussian<R: Rng + ?Sized>(probes: usize, epsilon: f64, delta: f64, rng: &mut R) -> Result<AuditOutcome> {
    let (a, b) = (0.0, 2f64.powi(40));
    let sigma = gaussian_sigma_for(epsilon, delta, b - a)?;
    let scale = NoiseScale::new(sigma)?;
    let mech = |x: f64, r: &mut SynthRng| Ok(gaussian_mechanism(&[x], b - a, &scale, r)?[0]);
    support_collision_audit(mech, a, b, probes, probes, epsilon, delta, rng)
}
