//! PrivBayes network construction with Gaussian measurement of the
//! resulting conditionals.

use rand::Rng;
use rayon::prelude::*;

use super::{check_base_cap, fits_cap, mutual_information_between, PlannedMeasurement, Provenance, Releaser, SelectionPlan};
use crate::domain::{clique_cells, Clique, DataAccess, DiscreteDomain};
use crate::error::{Error, Result};
use crate::privacy::{exponential_epsilon_for_rho, gaussian_sigma_for_rho, PrivacyLedger};

/// Share of the selection budget spent on the noisy record count.
const COUNT_SHARE: f64 = 0.01;
/// Standard deviations subtracted from the noisy count before it sets the
/// sensitivity.
const COUNT_TAIL_Z: f64 = 6.0;

/// Sensitivity of empirical mutual information (in bits) on `n` records.
pub fn privbayes_sensitivity(n: usize) -> f64 {
    if n < 2 {
        return 1.0;
    }
    let n = n as f64;
    (1.0 / n) * n.log2() + ((n - 1.0) / n) * (n / (n - 1.0)).log2()
}

fn subsets_up_to(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for size in 1..=k.min(items.len()) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| items[i]).collect());
            let mut pos = size;
            while pos > 0 && idx[pos - 1] == items.len() - size + pos - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            idx[pos - 1] += 1;
            for q in pos..size {
                idx[q] = idx[q - 1] + 1;
            }
        }
    }
    out
}

pub(crate) fn run<R: Rng + ?Sized>(
    data: &dyn DataAccess,
    domain: &DiscreteDomain,
    rel: &mut Releaser<'_>,
    k: usize,
    size_cap: u64,
    rng: &mut R,
) -> Result<SelectionPlan> {
    if k == 0 {
        return Err(Error::InvalidConfiguration("PrivBayes degree must be at least 1".into()));
    }
    let d = domain.len();
    check_base_cap(domain, size_cap)?;
    let rho = rel.ledger.remaining_rho();
    if !(rho > 0.0) {
        return Err(Error::BudgetExhausted { requested: f64::MIN_POSITIVE, remaining: rho });
    }
    let (rho_select, rho_measure) = if d > 1 { (rho / 2.0, rho / 2.0) } else { (0.0, rho) };
    let sigma = gaussian_sigma_for_rho(rho_measure / d as f64, 1.0)?;
    // The record count differs between neighbouring datasets, so both the MI
    // sensitivity and the usefulness rule run off a noisy count; the
    // sensitivity uses a lower bound that fails with probability ~1e-9.
    let (rho_count, n_hat, n_low) = if d > 1 {
        let rho_count = COUNT_SHARE * rho_select;
        let sigma_n = gaussian_sigma_for_rho(rho_count, 1.0)?;
        let total = rel.measure(data, &Clique::empty(), sigma_n, "privbayes/count".into(), rng)?.marginal.total();
        let slack = if rel.noisy { COUNT_TAIL_Z * sigma_n } else { 0.0 };
        (rho_count, total.max(0.0), (total - slack).max(0.0))
    } else {
        (0.0, 0.0, 0.0)
    };
    let sensitivity = privbayes_sensitivity(n_low.floor() as usize);
    // A conditional is only worth measuring when its expected noise mass
    // stays within the number of records.
    let noise_per_cell = (2.0 / std::f64::consts::PI).sqrt() * sigma;
    let useful = |c: &Clique| clique_cells(domain, c) as f64 * noise_per_cell <= n_hat;

    let first = rng.gen_range(0..d);
    let mut chosen = vec![first];
    let mut network: Vec<(usize, Vec<usize>)> = vec![(first, Vec::new())];
    let mut cliques = vec![Clique::new(vec![first])];
    // Columns not yet in the network are still in the model as 1-ways for
    // the size cap check.
    let pending = |chosen: &[usize]| -> Vec<Clique> {
        (0..d).filter(|c| !chosen.contains(c)).map(|c| Clique::new(vec![c])).collect()
    };
    if d > 1 {
        let eps = exponential_epsilon_for_rho((rho_select - rho_count) / (d - 1) as f64);
        for step in 0..d - 1 {
            let mut current = cliques.clone();
            current.extend(pending(&chosen));
            let mut cands: Vec<(usize, Vec<usize>)> = Vec::new();
            for x in (0..d).filter(|c| !chosen.contains(c)) {
                let mut sorted = chosen.clone();
                sorted.sort_unstable();
                for parents in subsets_up_to(&sorted, k) {
                    let mut attrs = parents.clone();
                    attrs.push(x);
                    let clique = Clique::new(attrs);
                    if parents.is_empty() || (useful(&clique) && fits_cap(domain, &current, &clique, size_cap)?) {
                        cands.push((x, parents));
                    }
                }
            }
            let charge = rel.ledger.charge_exponential(format!("privbayes/select/{step}"), eps)?;
            let scores = cands
                .par_iter()
                .map(|(x, parents)| {
                    if parents.is_empty() {
                        return Ok(0.0);
                    }
                    let mut attrs = parents.clone();
                    attrs.push(*x);
                    let m = data.marginal(&Clique::new(attrs), &charge)?;
                    mutual_information_between(domain, &m, &Clique::new(vec![*x]), &Clique::new(parents.clone()))
                        .or(Ok(0.0))
                })
                .collect::<Result<Vec<f64>>>()?;
            let (x, parents) = cands[rel.choose(&scores, eps, sensitivity, rng)?].clone();
            let mut attrs = parents.clone();
            attrs.push(x);
            cliques.push(Clique::new(attrs));
            chosen.push(x);
            network.push((x, parents));
        }
    }

    let measurements = rel.measure_many(data, &cliques, sigma, "privbayes/measure/", rng)?;
    let spec = cliques
        .iter()
        .map(|c| PlannedMeasurement { clique: c.clone(), sigma, rho: rho_measure / d as f64 })
        .collect();
    Ok(SelectionPlan {
        model: super::ModelKind::PrivBayes,
        measurements_spec: spec,
        provenance: Provenance::PrivBayes { degree: k, network },
        measurements,
    })
}

/// PrivBayes on private data with the ledger's remaining budget: half on
/// choosing the network, half on measuring each node with its parents.
pub fn privbayes_select<R: Rng + ?Sized>(
    data: &dyn DataAccess,
    ledger: &mut PrivacyLedger,
    k: usize,
    size_cap: u64,
    rng: &mut R,
) -> Result<SelectionPlan> {
    let domain = data.domain().clone();
    run(data, &domain, &mut Releaser { ledger, noisy: true }, k, size_cap, rng)
}
