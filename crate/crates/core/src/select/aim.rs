//! AIM: 1-way initialization, then rounds that pick the workload clique the
//! current model gets most wrong, measure it and refit.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mst::spend_leftover;
use super::{check_base_cap, fits_cap, merge_repeated, one_way_cliques, PlannedMeasurement, Provenance, Releaser, SelectionPlan, Workload};
use crate::domain::{clique_cells, Clique, DataAccess, DiscreteDomain, Marginal, Measurement};
use crate::error::{Error, Result};
use crate::pgm::{fit_model, FitOptions, FitState, PGModel};
use crate::privacy::{gaussian_sigma_for_rho, zcdp_of_exponential, zcdp_of_gaussian, PrivacyLedger};

#[derive(Debug, Clone, PartialEq)]
pub struct AimConfig {
    /// Share of the budget for the initial 1-way measurements.
    pub init_fraction: f64,
    /// Rounds are sized for `rounds_per_column * d` rounds.
    pub rounds_per_column: usize,
    /// Share of each round spent on selection; the rest measures.
    pub select_fraction: f64,
    /// Mirror-descent iterations for each refit.
    pub fit_iters: usize,
}

impl Default for AimConfig {
    fn default() -> Self {
        Self { init_fraction: 0.1, rounds_per_column: 16, select_fraction: 0.1, fit_iters: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AimRound {
    pub clique: Clique,
    pub sigma: f64,
    pub epsilon: f64,
    /// Whether this round triggered annealing for the following rounds.
    pub annealed: bool,
}

/// Downward closure of the workload (cliques of two or more attributes),
/// each weighted by the total weight of the workload cliques containing it.
fn candidates(workload: &Workload) -> Vec<(Clique, f64)> {
    let mut out: Vec<(Clique, f64)> = Vec::new();
    for (r, _) in &workload.cliques {
        let attrs = r.attrs();
        for mask in 1u64..(1u64 << attrs.len()) {
            if mask.count_ones() < 2 {
                continue;
            }
            let sub = Clique::new(attrs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &a)| a).collect());
            if !out.iter().any(|(c, _)| *c == sub) {
                out.push((sub, 0.0));
            }
        }
    }
    for (c, w) in &mut out {
        *w = workload.cliques.iter().filter(|(r, _)| c.is_subset(r)).map(|(_, rw)| rw).sum();
    }
    out
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn refit(
    measurements: &[Measurement],
    domain: &DiscreteDomain,
    iters: usize,
    warm: Option<&FitState>,
) -> Result<(PGModel, FitState)> {
    let opts = FitOptions { iters, ..Default::default() };
    let (model, state, _) = fit_model(measurements, domain, &opts, None, warm)?;
    Ok((model, state))
}

pub(crate) fn run<R: Rng + ?Sized>(
    data: &dyn DataAccess,
    domain: &DiscreteDomain,
    rel: &mut Releaser<'_>,
    workload: &Workload,
    size_cap: u64,
    cfg: &AimConfig,
    rng: &mut R,
) -> Result<SelectionPlan> {
    if workload.cliques.is_empty() {
        return Err(Error::invalid("AIM needs a non-empty workload"));
    }
    for (c, _) in &workload.cliques {
        c.validate(domain)?;
    }
    if !(cfg.init_fraction > 0.0 && cfg.init_fraction < 1.0 && cfg.select_fraction > 0.0 && cfg.select_fraction < 1.0)
        || cfg.rounds_per_column == 0
        || cfg.fit_iters == 0
    {
        return Err(Error::InvalidConfiguration("AIM fractions must lie in (0, 1) and counts be positive".into()));
    }
    check_base_cap(domain, size_cap)?;
    let d = domain.len();
    let rho = rel.ledger.remaining_rho();
    if !(rho > 0.0) {
        return Err(Error::BudgetExhausted { requested: f64::MIN_POSITIVE, remaining: rho });
    }

    let ones = one_way_cliques(domain);
    let rho_init = cfg.init_fraction * rho;
    let sigma0 = gaussian_sigma_for_rho(rho_init / d as f64, 1.0)?;
    let mut measurements = rel.measure_many(data, &ones, sigma0, "aim/measure-1way/", rng)?;
    let mut spec: Vec<PlannedMeasurement> =
        ones.iter().map(|c| PlannedMeasurement { clique: c.clone(), sigma: sigma0, rho: rho_init / d as f64 }).collect();

    // A round whose per-cell noise exceeds the number of records measures
    // nothing useful, so rounds never get smaller than that. The record count
    // comes from the noisy 1-way totals: the true one differs between
    // neighbouring datasets.
    let n = (measurements.iter().map(|m| m.marginal.total()).sum::<f64>() / d as f64).max(1.0);
    let measure_share = 1.0 - cfg.select_fraction;
    let floor = 1.0 / (2.0 * n * n * measure_share);
    let rho_round = ((1.0 - cfg.init_fraction) * rho / (cfg.rounds_per_column * d) as f64).max(floor);
    let mut sigma = gaussian_sigma_for_rho(measure_share * rho_round, 1.0)?;
    let mut eps = crate::privacy::exponential_epsilon_for_rho(cfg.select_fraction * rho_round);

    let cands = candidates(workload);
    let mut truth: Vec<Option<Marginal>> = vec![None; cands.len()];
    let mut rounds: Vec<AimRound> = Vec::new();
    let mut state: Option<FitState> = None;
    let mut model: Option<PGModel> = None;
    let tol = 1e-12 * rel.ledger.total_rho();

    loop {
        let cost = zcdp_of_exponential(eps) + zcdp_of_gaussian(sigma, 1.0)?;
        if rel.ledger.remaining_rho() + tol < cost {
            break;
        }
        let current: Vec<Clique> = spec.iter().map(|m| m.clique.clone()).collect();
        let mut open = Vec::new();
        for (i, (c, _)) in cands.iter().enumerate() {
            if fits_cap(domain, &current, c, size_cap)? {
                open.push(i);
            }
        }
        if open.is_empty() {
            break;
        }
        if model.is_none() {
            let (m, s) = refit(&measurements, domain, cfg.fit_iters, state.as_ref())?;
            model = Some(m);
            state = Some(s);
        }
        let fitted = model.as_ref().expect("fitted above");

        let t = rounds.len();
        let charge = rel.ledger.charge_exponential(format!("aim/select/{t}"), eps)?;
        let missing: Vec<usize> = open.iter().copied().filter(|&i| truth[i].is_none()).collect();
        let fresh = missing
            .par_iter()
            .map(|&i| data.marginal(&cands[i].0, &charge))
            .collect::<Result<Vec<Marginal>>>()?;
        for (i, m) in missing.into_iter().zip(fresh) {
            truth[i] = Some(m);
        }
        let noise_per_cell = (2.0 / PI).sqrt() * sigma;
        let scores = open
            .par_iter()
            .map(|&i| {
                let (c, w) = &cands[i];
                let est = fitted.project(c)?;
                let exact = truth[i].as_ref().expect("filled above");
                Ok(w * (l1(&exact.counts, &est.counts) - noise_per_cell * clique_cells(domain, c) as f64))
            })
            .collect::<Result<Vec<f64>>>()?;
        let sensitivity = open.iter().map(|&i| cands[i].1).fold(0.0, f64::max);
        let pick = open[rel.choose(&scores, eps, sensitivity, rng)?];
        let clique = cands[pick].0.clone();

        let before = fitted.project(&clique)?;
        let m = rel.measure(data, &clique, sigma, format!("aim/measure/{t}"), rng)?;
        let change = l1(&m.marginal.counts, &before.counts);
        measurements.push(m);
        spec.push(PlannedMeasurement { clique: clique.clone(), sigma, rho: zcdp_of_gaussian(sigma, 1.0)? });
        let (m, s) = refit(&measurements, domain, cfg.fit_iters, state.as_ref())?;
        model = Some(m);
        state = Some(s);

        let annealed = change <= noise_per_cell * clique_cells(domain, &clique) as f64;
        rounds.push(AimRound { clique, sigma, epsilon: eps, annealed });
        if annealed {
            sigma /= 2.0;
            eps *= 2.0;
        }
    }

    match rounds.last() {
        Some(last) => {
            let left = rel.ledger.remaining_rho();
            if left > 1e-9 * rel.ledger.total_rho() {
                let s = gaussian_sigma_for_rho(left, 1.0)?;
                let clique = last.clique.clone();
                measurements.push(rel.measure(data, &clique, s, "aim/measure-final".into(), rng)?);
                spec.push(PlannedMeasurement { clique, sigma: s, rho: left });
            }
        }
        None => spend_leftover(data, rel, &ones, "aim/measure-leftover/", &mut spec, &mut measurements, rng)?,
    }
    let (spec, measurements) = merge_repeated(spec, measurements)?;
    Ok(SelectionPlan { model: super::ModelKind::Aim, measurements_spec: spec, provenance: Provenance::Aim { rounds }, measurements })
}

/// AIM on private data with the ledger's remaining budget.
pub fn aim_run<R: Rng + ?Sized>(
    data: &dyn DataAccess,
    ledger: &mut PrivacyLedger,
    workload: &Workload,
    size_cap: u64,
    rng: &mut R,
) -> Result<SelectionPlan> {
    let domain = data.domain().clone();
    run(data, &domain, &mut Releaser { ledger, noisy: true }, workload, size_cap, &AimConfig::default(), rng)
}
