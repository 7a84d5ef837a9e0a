//! Marginal selection: which cliques to measure, and at what noise.

mod aim;
mod mst;
mod privbayes;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{clique_cells, Clique, DataAccess, DiscreteDomain, Marginal, Measurement};
use crate::error::{Error, Result};
use crate::pgm::estimate_model_size;
use crate::pgm::factor::index_map;
use crate::privacy::{exponential_mechanism, gaussian_mechanism, NoiseScale, PrivacyLedger};
use crate::rng::{fork_root, stream};

pub use aim::{aim_run, AimConfig, AimRound};
pub use mst::{mst_select, select_spanning_edges};
pub use privbayes::{privbayes_select, privbayes_sensitivity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    PrivBayes,
    Mst,
    Aim,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "privbayes" => Ok(ModelKind::PrivBayes),
            "mst" => Ok(ModelKind::Mst),
            "aim" => Ok(ModelKind::Aim),
            other => Err(Error::InvalidConfiguration(format!("unknown model `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::PrivBayes => "privbayes",
            ModelKind::Mst => "mst",
            ModelKind::Aim => "aim",
        })
    }
}

/// Target queries with importance weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub cliques: Vec<(Clique, f64)>,
}

impl Workload {
    pub fn new(cliques: Vec<(Clique, f64)>) -> Result<Self> {
        if let Some((c, w)) = cliques.iter().find(|(_, w)| !(*w > 0.0)) {
            return Err(Error::invalid(format!("workload weight of {c} must be positive, got {w}")));
        }
        Ok(Self { cliques })
    }
}

/// All pairs with weight 1, plus all triples when there are at most 8 columns.
/// A single column is its own workload.
pub fn default_workload(domain: &DiscreteDomain) -> Workload {
    let d = domain.len();
    if d == 1 {
        return Workload { cliques: vec![(Clique::new(vec![0]), 1.0)] };
    }
    let mut cliques = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            cliques.push((Clique::new(vec![i, j]), 1.0));
        }
    }
    if d <= 8 {
        for i in 0..d {
            for j in i + 1..d {
                for k in j + 1..d {
                    cliques.push((Clique::new(vec![i, j, k]), 1.0));
                }
            }
        }
    }
    Workload { cliques }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedMeasurement {
    pub clique: Clique,
    pub sigma: f64,
    pub rho: f64,
}

/// Strategy-specific record of how the plan was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Provenance {
    /// `(child, parents)` in selection order.
    PrivBayes { degree: usize, network: Vec<(usize, Vec<usize>)> },
    Mst { edges: Vec<(usize, usize)> },
    Aim { rounds: Vec<AimRound> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPlan {
    pub model: ModelKind,
    pub measurements_spec: Vec<PlannedMeasurement>,
    pub provenance: Provenance,
    /// The noisy (or, for public data, exact) measurements taken.
    pub measurements: Vec<Measurement>,
}

impl SelectionPlan {
    pub fn cliques(&self) -> Vec<Clique> {
        self.measurements_spec.iter().map(|m| m.clique.clone()).collect()
    }
}

/// Mutual information in bits of a two-dimensional count table laid out
/// row-major (`rows × cols`).
pub fn mutual_information_table(counts: &[f64], rows: usize, cols: usize) -> Result<f64> {
    if counts.len() != rows * cols {
        return Err(Error::invalid("count table does not match its shape"));
    }
    if counts.iter().any(|c| *c < 0.0 || !c.is_finite()) {
        return Err(Error::invalid("counts must be finite and non-negative"));
    }
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(Error::invalid("mutual information of an empty table"));
    }
    let mut px = vec![0.0; rows];
    let mut py = vec![0.0; cols];
    for r in 0..rows {
        for c in 0..cols {
            px[r] += counts[r * cols + c];
            py[c] += counts[r * cols + c];
        }
    }
    let mut mi = 0.0;
    for r in 0..rows {
        for c in 0..cols {
            let v = counts[r * cols + c];
            if v > 0.0 {
                mi += v / total * (v * total / (px[r] * py[c])).log2();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Mutual information in bits between two disjoint groups of attributes of a
/// marginal (each group flattened into one variable).
pub fn mutual_information_between(
    domain: &DiscreteDomain,
    marginal: &Marginal,
    left: &Clique,
    right: &Clique,
) -> Result<f64> {
    if !left.is_subset(&marginal.clique) || !right.is_subset(&marginal.clique) || !left.intersection(right).is_empty() {
        return Err(Error::invalid("attribute groups must be disjoint subsets of the marginal"));
    }
    let rows = clique_cells(domain, left);
    let cols = clique_cells(domain, right);
    let lm = index_map(domain, &marginal.clique, left);
    let rm = index_map(domain, &marginal.clique, right);
    let mut table = vec![0.0; rows * cols];
    for (i, v) in marginal.counts.iter().enumerate() {
        table[lm[i] * cols + rm[i]] += v;
    }
    mutual_information_table(&table, rows, cols)
}

/// Mutual information of a two-way marginal.
pub fn mutual_information(domain: &DiscreteDomain, marginal: &Marginal) -> Result<f64> {
    let attrs = marginal.clique.attrs();
    if attrs.len() != 2 {
        return Err(Error::invalid(format!("mutual information needs a 2-way marginal, got {}", marginal.clique)));
    }
    let rows = domain.cardinality(attrs[0]);
    let cols = domain.cardinality(attrs[1]);
    mutual_information_table(&marginal.counts, rows, cols)
}

/// Whether adding `candidate` keeps the model within `cap` bytes.
pub fn fits_cap(domain: &DiscreteDomain, current: &[Clique], candidate: &Clique, cap: u64) -> Result<bool> {
    let mut all = current.to_vec();
    all.push(candidate.clone());
    Ok(estimate_model_size(domain, &all)? <= cap)
}

/// Releases on private data: every read is paid for first. With `noisy`
/// off (public data or test hooks) the same charges are booked on the given
/// ledger but values are exact and choices are argmaxes.
pub(crate) struct Releaser<'a> {
    pub ledger: &'a mut PrivacyLedger,
    pub noisy: bool,
}

impl<'a> Releaser<'a> {
    pub fn measure<R: Rng + ?Sized>(
        &mut self,
        data: &dyn DataAccess,
        clique: &Clique,
        sigma: f64,
        label: String,
        rng: &mut R,
    ) -> Result<Measurement> {
        let charge = self.ledger.charge_gaussian(label, sigma, 1.0)?;
        let exact = data.marginal(clique, &charge)?;
        let counts = if self.noisy {
            gaussian_mechanism(&exact.counts, 1.0, &NoiseScale::new(sigma)?, rng)?
        } else {
            exact.counts
        };
        Measurement::new(Marginal { clique: clique.clone(), counts }, sigma)
    }

    /// Measures several cliques at one sigma. Charges are booked in order;
    /// the counting and noise run in parallel on per-task rng streams.
    pub fn measure_many<R: Rng + ?Sized>(
        &mut self,
        data: &dyn DataAccess,
        cliques: &[Clique],
        sigma: f64,
        label: &str,
        rng: &mut R,
    ) -> Result<Vec<Measurement>> {
        let charges = cliques
            .iter()
            .map(|c| self.ledger.charge_gaussian(format!("{label}{c}"), sigma, 1.0))
            .collect::<Result<Vec<_>>>()?;
        let root = fork_root(rng);
        let noisy = self.noisy;
        let scale = NoiseScale::new(sigma)?;
        cliques
            .par_iter()
            .zip(charges.par_iter())
            .enumerate()
            .map(|(i, (clique, charge))| {
                let exact = data.marginal(clique, charge)?;
                let counts = if noisy {
                    gaussian_mechanism(&exact.counts, 1.0, &scale, &mut stream(root, i as u64))?
                } else {
                    exact.counts
                };
                Measurement::new(Marginal { clique: clique.clone(), counts }, sigma)
            })
            .collect()
    }

    pub fn choose<R: Rng + ?Sized>(&self, scores: &[f64], epsilon: f64, sensitivity: f64, rng: &mut R) -> Result<usize> {
        if self.noisy {
            exponential_mechanism(scores, epsilon, sensitivity, rng)
        } else {
            if scores.is_empty() {
                return Err(Error::invalid("no candidates to choose from"));
            }
            let mut best = 0;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = i;
                }
            }
            Ok(best)
        }
    }
}

pub(crate) fn one_way_cliques(domain: &DiscreteDomain) -> Vec<Clique> {
    (0..domain.len()).map(|i| Clique::new(vec![i])).collect()
}

/// Folds repeated measurements of a clique into one at its first position:
/// the inverse-variance weighted mean, whose variance is the harmonic
/// combination of the parts.
pub(crate) fn merge_repeated(
    spec: Vec<PlannedMeasurement>,
    measurements: Vec<Measurement>,
) -> Result<(Vec<PlannedMeasurement>, Vec<Measurement>)> {
    if spec.len() != measurements.len() {
        return Err(Error::Consistency("plan and measurements are misaligned".into()));
    }
    let mut out_spec: Vec<PlannedMeasurement> = Vec::new();
    let mut sums: Vec<(Vec<f64>, f64)> = Vec::new();
    for (p, m) in spec.into_iter().zip(measurements) {
        let prec = 1.0 / (m.sigma * m.sigma);
        match out_spec.iter().position(|q| q.clique == p.clique) {
            Some(k) => {
                out_spec[k].rho += p.rho;
                let (acc, total) = &mut sums[k];
                for (a, y) in acc.iter_mut().zip(&m.marginal.counts) {
                    *a += prec * y;
                }
                *total += prec;
            }
            None => {
                sums.push((m.marginal.counts.iter().map(|y| prec * y).collect(), prec));
                out_spec.push(p);
            }
        }
    }
    let mut out = Vec::with_capacity(out_spec.len());
    for (p, (acc, prec)) in out_spec.iter_mut().zip(sums) {
        p.sigma = prec.sqrt().recip();
        let counts = acc.into_iter().map(|a| a / prec).collect();
        out.push(Measurement::new(Marginal { clique: p.clique.clone(), counts }, p.sigma)?);
    }
    Ok((out_spec, out))
}

/// Errors when even the independent model exceeds the cap.
pub(crate) fn check_base_cap(domain: &DiscreteDomain, cap: u64) -> Result<()> {
    let base = estimate_model_size(domain, &one_way_cliques(domain))?;
    if base > cap {
        return Err(Error::InvalidConfiguration(format!(
            "size cap of {cap} bytes is below the {base} bytes of the independent model"
        )));
    }
    Ok(())
}

/// Runs a selector in noiseless mode on a scratch ledger holding `rho`.
pub(crate) fn run_selector<R: Rng + ?Sized>(
    kind: ModelKind,
    data: &dyn DataAccess,
    ledger: &mut PrivacyLedger,
    noisy: bool,
    degree: usize,
    size_cap: u64,
    rng: &mut R,
) -> Result<SelectionPlan> {
    let domain = data.domain().clone();
    match kind {
        ModelKind::PrivBayes => privbayes::run(data, &domain, &mut Releaser { ledger, noisy }, degree, size_cap, rng),
        ModelKind::Mst => mst::run(data, &domain, &mut Releaser { ledger, noisy }, size_cap, rng),
        ModelKind::Aim => aim::run(
            data,
            &domain,
            &mut Releaser { ledger, noisy },
            &default_workload(&domain),
            size_cap,
            &AimConfig::default(),
            rng,
        ),
    }
}

/// Noise-free selection for deterministic oracle tests. Enabled only by the
/// `test-hooks` feature.
#[cfg(feature = "test-hooks")]
pub mod hooks {
    use super::*;

    pub fn privbayes_select_noiseless<R: Rng + ?Sized>(
        data: &dyn DataAccess,
        ledger: &mut PrivacyLedger,
        k: usize,
        size_cap: u64,
        rng: &mut R,
    ) -> Result<SelectionPlan> {
        let domain = data.domain().clone();
        privbayes::run(data, &domain, &mut Releaser { ledger, noisy: false }, k, size_cap, rng)
    }

    pub fn mst_select_noiseless<R: Rng + ?Sized>(
        data: &dyn DataAccess,
        ledger: &mut PrivacyLedger,
        size_cap: u64,
        rng: &mut R,
    ) -> Result<SelectionPlan> {
        let domain = data.domain().clone();
        mst::run(data, &domain, &mut Releaser { ledger, noisy: false }, size_cap, rng)
    }

    pub fn aim_run_noiseless<R: Rng + ?Sized>(
        data: &dyn DataAccess,
        ledger: &mut PrivacyLedger,
        workload: &Workload,
        size_cap: u64,
        rng: &mut R,
    ) -> Result<SelectionPlan> {
        let domain = data.domain().clone();
        aim::run(data, &domain, &mut Releaser { ledger, noisy: false }, workload, size_cap, &AimConfig::default(), rng)
    }

    /// Spanning-tree selection over a symmetric score matrix with argmax
    /// choices.
    pub fn spanning_edges_noiseless(scores: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
        let mut ledger = PrivacyLedger::new(0.0)?;
        let releaser = Releaser { ledger: &mut ledger, noisy: false };
        select_spanning_edges(
            scores.len(),
            |_, _| true,
            |cands, rng| {
                let s: Vec<f64> = cands.iter().map(|&(i, j)| scores[i][j]).collect();
                releaser.choose(&s, 1.0, 1.0, rng)
            },
            &mut crate::rng::seeded(0),
        )
    }
}
