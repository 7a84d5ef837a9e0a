//! Fitting clique potentials to noisy marginals.
//!
//! The model is log-linear with one parameter table per distinct measured
//! clique; a tree node's potential is the sum of the tables assigned to it.
//! The loss is `sum_m (w_m / sigma_m^2) ||mu_m - y_m||^2` where `mu_m` is the
//! model marginal in counts. Each step moves the parameters against the
//! gradient with respect to the marginals (entropic mirror descent) with a
//! backtracking line search that only accepts sufficient decrease.

use super::factor::index_map;
use super::junction::{build_junction_tree, JunctionTree};
use super::model::{masked_potentials, PGModel};
use crate::domain::{clique_cells, Clique, DiscreteDomain, Marginal, Measurement};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub iters: usize,
    pub step: f64,
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { iters: 1000, step: 1.0, tol: 1e-9 }
    }
}

/// Parameter tables keyed by clique, reusable as a warm start.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitState {
    pub cliques: Vec<Clique>,
    pub params: Vec<Vec<f64>>,
}

impl FitState {
    fn get(&self, clique: &Clique) -> Option<&Vec<f64>> {
        self.cliques.iter().position(|c| c == clique).map(|i| &self.params[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub losses: Vec<f64>,
}

/// Weighted mean of the measurement totals (inverse-variance weights),
/// floored at 1.
pub fn estimate_total(measurements: &[Measurement], domain: &DiscreteDomain) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for m in measurements {
        let cells = clique_cells(domain, m.clique()) as f64;
        let w = 1.0 / (m.sigma * m.sigma * cells);
        num += w * m.marginal.total();
        den += w;
    }
    if den > 0.0 {
        (num / den).max(1.0)
    } else {
        1.0
    }
}

/// Loss, per-clique gradients and per-clique marginals.
pub type Evaluation = (f64, Vec<Vec<f64>>, Vec<Vec<f64>>);

/// The fitting objective over a fixed tree.
pub struct MarginalLoss<'a> {
    model: PGModel,
    measurements: &'a [Measurement],
    cliques: Vec<Clique>,
    /// node of each parameter clique and the node→clique cell map
    placement: Vec<(usize, Vec<usize>)>,
    /// (parameter index, node, node→clique map) per measurement
    meas_place: Vec<(usize, usize, Vec<usize>)>,
    zeros: Option<Vec<Vec<usize>>>,
}

impl<'a> MarginalLoss<'a> {
    pub fn new(
        domain: &DiscreteDomain,
        tree: JunctionTree,
        measurements: &'a [Measurement],
        total: f64,
        zeros: Option<&[Vec<usize>]>,
    ) -> Result<Self> {
        let model = PGModel::uniform(domain.clone(), tree, total)?;
        let mut cliques: Vec<Clique> = Vec::new();
        for m in measurements {
            m.clique().validate(domain)?;
            if m.marginal.counts.len() != clique_cells(domain, m.clique()) {
                return Err(Error::Consistency(format!("measurement on {} has the wrong length", m.clique())));
            }
            if !cliques.contains(m.clique()) {
                cliques.push(m.clique().clone());
            }
        }
        let tree = model.tree();
        let mut placement = Vec::with_capacity(cliques.len());
        for c in &cliques {
            let node = tree
                .node_containing(c)
                .ok_or_else(|| Error::Consistency(format!("measurement clique {c} is not in the tree")))?;
            placement.push((node, index_map(domain, &tree.nodes()[node], c)));
        }
        let meas_place = measurements
            .iter()
            .map(|m| {
                let p = cliques.iter().position(|c| c == m.clique()).expect("registered");
                (p, placement[p].0, placement[p].1.clone())
            })
            .collect();
        if let Some(z) = zeros {
            masked_potentials(domain, tree, model.potentials(), z)?;
        }
        Ok(Self { model, measurements, cliques, placement, meas_place, zeros: zeros.map(|z| z.to_vec()) })
    }

    pub fn cliques(&self) -> &[Clique] {
        &self.cliques
    }

    pub fn zero_params(&self) -> Vec<Vec<f64>> {
        self.cliques.iter().map(|c| vec![0.0; clique_cells(self.model.domain(), c)]).collect()
    }

    fn assemble(&self, params: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut pot: Vec<Vec<f64>> = self.model.potentials().iter().map(|p| vec![0.0; p.len()]).collect();
        for ((node, map), theta) in self.placement.iter().zip(params) {
            for (v, &k) in pot[*node].iter_mut().zip(map) {
                *v += theta[k];
            }
        }
        match &self.zeros {
            Some(z) => masked_potentials(self.model.domain(), self.model.tree(), &pot, z),
            None => Ok(pot),
        }
    }

    fn assemble_direction(&self, dir: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut pot: Vec<Vec<f64>> = self.model.potentials().iter().map(|p| vec![0.0; p.len()]).collect();
        for ((node, map), theta) in self.placement.iter().zip(dir) {
            for (v, &k) in pot[*node].iter_mut().zip(map) {
                *v += theta[k];
            }
        }
        pot
    }

    fn clique_marginal(&self, probs: &[Vec<f64>], node: usize, map: &[usize], cells: usize) -> Vec<f64> {
        let mut out = vec![0.0; cells];
        for (p, &k) in probs[node].iter().zip(map) {
            out[k] += p;
        }
        let n = self.model.total_records();
        out.iter_mut().for_each(|v| *v *= n);
        out
    }

    /// Loss, gradient with respect to each parameter clique's marginal, and
    /// those marginals.
    pub fn evaluate(&self, params: &[Vec<f64>]) -> Result<Evaluation> {
        let pot = self.assemble(params)?;
        let probs = self.model.calibrate(&pot, None).probabilities();
        let mus: Vec<Vec<f64>> = self
            .cliques
            .iter()
            .zip(&self.placement)
            .map(|(c, (node, map))| self.clique_marginal(&probs, *node, map, clique_cells(self.model.domain(), c)))
            .collect();
        let mut grads: Vec<Vec<f64>> = mus.iter().map(|m| vec![0.0; m.len()]).collect();
        let mut loss = 0.0;
        for (m, (p, _, _)) in self.measurements.iter().zip(&self.meas_place) {
            let scale = m.weight / (m.sigma * m.sigma);
            for ((g, mu), y) in grads[*p].iter_mut().zip(&mus[*p]).zip(&m.marginal.counts) {
                let r = mu - y;
                loss += scale * r * r;
                *g += 2.0 * scale * r;
            }
        }
        Ok((loss, grads, mus))
    }

    pub fn loss(&self, params: &[Vec<f64>]) -> Result<f64> {
        Ok(self.evaluate(params)?.0)
    }

    /// Exact derivative of the loss along `dir`, by forward-mode message
    /// passing.
    pub fn directional_derivative(&self, params: &[Vec<f64>], dir: &[Vec<f64>]) -> Result<f64> {
        let pot = self.assemble(params)?;
        let dpot = self.assemble_direction(dir);
        let beliefs = self.model.calibrate(&pot, Some(&dpot));
        let probs = beliefs.probabilities();
        let dprobs = beliefs.probability_tangents(&probs).expect("tangents requested");
        let n = self.model.total_records();
        let mut total = 0.0;
        for (m, (_, node, map)) in self.measurements.iter().zip(&self.meas_place) {
            let cells = m.marginal.counts.len();
            let mut mu = vec![0.0; cells];
            let mut dmu = vec![0.0; cells];
            for ((p, dp), &k) in probs[*node].iter().zip(&dprobs[*node]).zip(map) {
                mu[k] += p * n;
                dmu[k] += dp * n;
            }
            let scale = m.weight / (m.sigma * m.sigma);
            for ((mu, dmu), y) in mu.iter().zip(&dmu).zip(&m.marginal.counts) {
                total += 2.0 * scale * (mu - y) * dmu;
            }
        }
        Ok(total)
    }

    /// Full gradient with respect to the parameters, one forward-mode pass
    /// per coordinate. Meant for small models.
    pub fn gradient(&self, params: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut dir: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        let mut grad = dir.clone();
        for i in 0..params.len() {
            for k in 0..params[i].len() {
                dir[i][k] = 1.0;
                grad[i][k] = self.directional_derivative(params, &dir)?;
                dir[i][k] = 0.0;
            }
        }
        Ok(grad)
    }

    /// Runs mirror descent from `init` and returns the fitted model.
    pub fn minimize(&self, init: Vec<Vec<f64>>, opts: &FitOptions) -> Result<(PGModel, Vec<Vec<f64>>, FitReport)> {
        if opts.iters == 0 || !(opts.step > 0.0) {
            return Err(Error::invalid("fit needs iters >= 1 and step > 0"));
        }
        let n = self.model.total_records();
        let precision: f64 = self.measurements.iter().map(|m| m.weight / (m.sigma * m.sigma)).sum();
        let base = 1.0 / (2.0 * n * precision.max(f64::MIN_POSITIVE));
        let mut eta = opts.step * base;
        let mut params = init;
        let (mut loss, mut grads, mut mus) = self.evaluate(&params)?;
        let mut losses = vec![loss];
        let mut iterations = 0;
        'outer: for _ in 0..opts.iters {
            if loss == 0.0 {
                break;
            }
            loop {
                let cand: Vec<Vec<f64>> = params
                    .iter()
                    .zip(&grads)
                    .map(|(t, g)| t.iter().zip(g).map(|(t, g)| t - eta * g).collect())
                    .collect();
                let (new_loss, new_grads, new_mus) = self.evaluate(&cand)?;
                let expected: f64 = grads
                    .iter()
                    .zip(mus.iter().zip(&new_mus))
                    .map(|(g, (a, b))| g.iter().zip(a.iter().zip(b)).map(|(g, (a, b))| g * (a - b)).sum::<f64>())
                    .sum();
                if new_loss.is_finite() && new_loss <= loss && loss - new_loss >= 0.5 * expected {
                    let improvement = (loss - new_loss) / loss.max(f64::MIN_POSITIVE);
                    params = cand;
                    loss = new_loss;
                    grads = new_grads;
                    mus = new_mus;
                    losses.push(loss);
                    iterations += 1;
                    eta *= 2.0;
                    if improvement < opts.tol {
                        break 'outer;
                    }
                    break;
                }
                eta *= 0.5;
                if eta < base * 1e-30 {
                    break 'outer;
                }
            }
        }
        let pot = self.assemble(&params)?;
        let mut model = self.model.clone();
        model.set_potentials(pot);
        Ok((model, params, FitReport { iterations, losses }))
    }
}

/// Fits a model to `measurements` on the junction tree of their cliques.
pub fn fit_potentials(
    measurements: &[Measurement],
    domain: &DiscreteDomain,
    iters: usize,
    step: f64,
) -> Result<PGModel> {
    let opts = FitOptions { iters, step, ..Default::default() };
    Ok(fit_model(measurements, domain, &opts, None, None)?.0)
}

/// Full-control fit: optional structural zeros and warm start.
pub fn fit_model(
    measurements: &[Measurement],
    domain: &DiscreteDomain,
    opts: &FitOptions,
    zeros: Option<&[Vec<usize>]>,
    warm: Option<&FitState>,
) -> Result<(PGModel, FitState, FitReport)> {
    let cliques: Vec<Clique> = measurements.iter().map(|m| m.clique().clone()).collect();
    let tree = build_junction_tree(domain, &cliques)?;
    fit_on_tree(measurements, domain, tree, opts, zeros, warm)
}

/// Fits on a given tree; measurement cliques must each lie in a node.
pub fn fit_on_tree(
    measurements: &[Measurement],
    domain: &DiscreteDomain,
    tree: JunctionTree,
    opts: &FitOptions,
    zeros: Option<&[Vec<usize>]>,
    warm: Option<&FitState>,
) -> Result<(PGModel, FitState, FitReport)> {
    let total = estimate_total(measurements, domain);
    let objective = MarginalLoss::new(domain, tree, measurements, total, zeros)?;
    let init: Vec<Vec<f64>> = objective
        .cliques()
        .iter()
        .map(|c| match warm.and_then(|w| w.get(c)) {
            Some(p) if p.len() == clique_cells(domain, c) => p.clone(),
            _ => vec![0.0; clique_cells(domain, c)],
        })
        .collect();
    let (model, params, report) = objective.minimize(init, opts)?;
    let state = FitState { cliques: objective.cliques().to_vec(), params };
    Ok((model, state, report))
}

/// Total-variation distance between two marginals after normalization.
pub fn tvd(a: &Marginal, b: &Marginal) -> f64 {
    let (ta, tb) = (a.total(), b.total());
    0.5 * a.counts.iter().zip(&b.counts).map(|(x, y)| (x / ta - y / tb).abs()).sum::<f64>()
}
