//! MST: all 1-ways, then a spanning tree of 2-ways chosen privately.

use rand::Rng;

use super::{check_base_cap, fits_cap, merge_repeated, one_way_cliques, PlannedMeasurement, Provenance, Releaser, SelectionPlan};
use crate::domain::{Clique, DataAccess, DiscreteDomain, Measurement};
use crate::error::{Error, Result};
use crate::pgm::estimate_total;
use crate::privacy::{exponential_epsilon_for_rho, gaussian_sigma_for_rho, PrivacyLedger};

/// Sensitivity used for the pair scores.
const SCORE_SENSITIVITY: f64 = 2.0;

fn find(p: &mut [usize], mut x: usize) -> usize {
    while p[x] != x {
        p[x] = p[p[x]];
        x = p[x];
    }
    x
}

/// Picks up to `d - 1` edges one at a time. Each step offers every pair that
/// keeps the selection acyclic and passes `allowed`; `choose` returns the
/// index of the chosen candidate.
pub fn select_spanning_edges<R, A, C>(d: usize, mut allowed: A, mut choose: C, rng: &mut R) -> Result<Vec<(usize, usize)>>
where
    R: Rng + ?Sized,
    A: FnMut(&[(usize, usize)], (usize, usize)) -> bool,
    C: FnMut(&[(usize, usize)], &mut R) -> Result<usize>,
{
    let mut comp: Vec<usize> = (0..d).collect();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    while edges.len() + 1 < d {
        let mut cands = Vec::new();
        for i in 0..d {
            for j in i + 1..d {
                if find(&mut comp, i) != find(&mut comp, j) && allowed(&edges, (i, j)) {
                    cands.push((i, j));
                }
            }
        }
        if cands.is_empty() {
            break;
        }
        let k = choose(&cands, rng)?;
        let (i, j) = *cands.get(k).ok_or_else(|| Error::invalid("chooser returned an out-of-range index"))?;
        let (ri, rj) = (find(&mut comp, i), find(&mut comp, j));
        comp[ri] = rj;
        edges.push((i, j));
    }
    Ok(edges)
}

// L1 distance between the true pair marginal and the product of the noisy
// 1-ways, for every pair.
fn pair_scores(
    data: &dyn DataAccess,
    domain: &DiscreteDomain,
    one_ways: &[Measurement],
    charge: &crate::privacy::Charge,
) -> Result<Vec<Vec<f64>>> {
    let d = domain.len();
    let total = estimate_total(one_ways, domain);
    let probs: Vec<Vec<f64>> = one_ways
        .iter()
        .map(|m| {
            let clipped: Vec<f64> = m.marginal.counts.iter().map(|c| c.max(0.0)).collect();
            let s: f64 = clipped.iter().sum();
            if s > 0.0 {
                clipped.iter().map(|c| c / s).collect()
            } else {
                vec![1.0 / clipped.len() as f64; clipped.len()]
            }
        })
        .collect();
    let mut scores = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i + 1..d {
            let truth = data.marginal(&Clique::new(vec![i, j]), charge)?;
            let cj = domain.cardinality(j);
            let l1: f64 = truth
                .counts
                .iter()
                .enumerate()
                .map(|(k, c)| (c - total * probs[i][k / cj] * probs[j][k % cj]).abs())
                .sum();
            scores[i][j] = l1;
            scores[j][i] = l1;
        }
    }
    Ok(scores)
}

pub(crate) fn run<R: Rng + ?Sized>(
    data: &dyn DataAccess,
    domain: &DiscreteDomain,
    rel: &mut Releaser<'_>,
    size_cap: u64,
    rng: &mut R,
) -> Result<SelectionPlan> {
    let d = domain.len();
    if d == 0 {
        return Err(Error::invalid("MST needs at least one column"));
    }
    check_base_cap(domain, size_cap)?;
    let rho = rel.ledger.remaining_rho();
    if !(rho > 0.0) {
        return Err(Error::BudgetExhausted { requested: f64::MIN_POSITIVE, remaining: rho });
    }
    if d == 1 {
        // No pairs to choose from: the whole budget measures the one column.
        let ones = one_way_cliques(domain);
        let sigma = gaussian_sigma_for_rho(rho, 1.0)?;
        let measurements = rel.measure_many(data, &ones, sigma, "mst/measure-1way/", rng)?;
        let spec = vec![PlannedMeasurement { clique: ones[0].clone(), sigma, rho }];
        return Ok(SelectionPlan {
            model: super::ModelKind::Mst,
            measurements_spec: spec,
            provenance: Provenance::Mst { edges: Vec::new() },
            measurements,
        });
    }
    let third = rho / 3.0;
    let mut spec = Vec::new();

    let ones = one_way_cliques(domain);
    let sigma1 = gaussian_sigma_for_rho(third / d as f64, 1.0)?;
    let mut measurements = rel.measure_many(data, &ones, sigma1, "mst/measure-1way/", rng)?;
    for c in &ones {
        spec.push(PlannedMeasurement { clique: c.clone(), sigma: sigma1, rho: third / d as f64 });
    }

    let eps = exponential_epsilon_for_rho(third / (d - 1) as f64);
    let mut scores: Option<Vec<Vec<f64>>> = None;
    let mut step = 0usize;
    let edges = select_spanning_edges(
        d,
        |chosen, (i, j)| {
            let mut current = ones.clone();
            current.extend(chosen.iter().map(|&(a, b)| Clique::new(vec![a, b])));
            fits_cap(domain, &current, &Clique::new(vec![i, j]), size_cap).unwrap_or(false)
        },
        |cands, rng| {
            let charge = rel.ledger.charge_exponential(format!("mst/select/{step}"), eps)?;
            step += 1;
            if scores.is_none() {
                scores = Some(pair_scores(data, domain, &measurements, &charge)?);
            }
            let sc = scores.as_ref().expect("computed above");
            let s: Vec<f64> = cands.iter().map(|&(i, j)| sc[i][j]).collect();
            rel.choose(&s, eps, SCORE_SENSITIVITY, rng)
        },
        rng,
    )?;

    let pairs: Vec<Clique> = edges.iter().map(|&(i, j)| Clique::new(vec![i, j])).collect();
    if !pairs.is_empty() {
        let per = third / pairs.len() as f64;
        let sigma2 = gaussian_sigma_for_rho(per, 1.0)?;
        measurements.extend(rel.measure_many(data, &pairs, sigma2, "mst/measure-2way/", rng)?);
        for c in &pairs {
            spec.push(PlannedMeasurement { clique: c.clone(), sigma: sigma2, rho: per });
        }
    }
    spend_leftover(data, rel, &ones, "mst/measure-leftover/", &mut spec, &mut measurements, rng)?;
    let (spec, measurements) = merge_repeated(spec, measurements)?;
    Ok(SelectionPlan { model: super::ModelKind::Mst, measurements_spec: spec, provenance: Provenance::Mst { edges }, measurements })
}

/// Spends whatever the selector could not use (e.g. edges forbidden by the
/// size cap) on another measurement of the 1-way marginals.
pub(crate) fn spend_leftover<R: Rng + ?Sized>(
    data: &dyn DataAccess,
    rel: &mut Releaser<'_>,
    cliques: &[Clique],
    label: &str,
    spec: &mut Vec<PlannedMeasurement>,
    measurements: &mut Vec<Measurement>,
    rng: &mut R,
) -> Result<()> {
    let left = rel.ledger.remaining_rho();
    if left <= 1e-9 * rel.ledger.total_rho().max(f64::MIN_POSITIVE) || cliques.is_empty() {
        return Ok(());
    }
    let per = left / cliques.len() as f64;
    let sigma = gaussian_sigma_for_rho(per, 1.0)?;
    measurements.extend(rel.measure_many(data, cliques, sigma, label, rng)?);
    for c in cliques {
        spec.push(PlannedMeasurement { clique: c.clone(), sigma, rho: per });
    }
    Ok(())
}

/// MST selection and measurement on private data, spending the ledger's
/// remaining budget: a third on 1-ways, a third on choosing `d - 1` pairs, a
/// third on measuring them.
pub fn mst_select<R: Rng + ?Sized>(
    data: &dyn DataAccess,
    ledger: &mut PrivacyLedger,
    size_cap: u64,
    rng: &mut R,
) -> Result<SelectionPlan> {
    let domain = data.domain().clone();
    run(data, &domain, &mut Releaser { ledger, noisy: true }, size_cap, rng)
}
