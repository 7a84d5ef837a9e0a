//! End-to-end pipeline: preprocess, select and measure, fit, generate, plus
//! the on-disk model container.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Clique, ColumnKind, DataAccess, DiscreteDomain, Domain, Marginal, Measurement};
use crate::error::{Error, Result};
use crate::pgm::{build_junction_tree, estimate_model_size, fit_model, Evidence, FitOptions, PGModel};
use crate::preprocess::{fit_preprocessor, ColumnPlan, Discretization, PreprocessConfig, Preprocessor};
use crate::privacy::{eps_of_rho, gaussian_mechanism, gaussian_sigma_for_rho, NoiseScale, PrivacyBudget, PrivacyLedger};
use crate::rng::{fork_root, stream};
use crate::select::{run_selector, ModelKind, PlannedMeasurement, Provenance, SelectionPlan};
use crate::table::{MixedTable, TableSource};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DPMM";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizerConfig {
    pub model: ModelKind,
    pub epsilon: f64,
    pub delta: f64,
    /// Preprocessing budget; `0.1 * epsilon` when unset.
    pub epsilon_proc: Option<f64>,
    /// PrivBayes degree.
    pub degree: usize,
    pub size_cap_mb: f64,
    pub discretization: Discretization,
    /// Bin count for uniform discretization.
    pub bins: usize,
    pub seed: Option<u64>,
    /// Mirror-descent iterations for the final fit.
    pub fit_iters: usize,
}

impl Default for SynthesizerConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Aim,
            epsilon: 1.0,
            delta: 1e-5,
            epsilon_proc: None,
            degree: 2,
            size_cap_mb: 80.0,
            discretization: Discretization::PrivTree,
            bins: 20,
            seed: None,
            fit_iters: 1000,
        }
    }
}

impl SynthesizerConfig {
    pub fn new(model: ModelKind, epsilon: f64) -> Self {
        Self { model, epsilon, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if let Some(p) = self.epsilon_proc {
            if !(p >= 0.0) || p >= self.epsilon {
                return bad(format!("epsilon_proc must lie in [0, epsilon), got {p}"));
            }
        }
        if !(self.size_cap_mb > 0.0) || !self.size_cap_mb.is_finite() {
            return bad(format!("size_cap_mb must be positive, got {}", self.size_cap_mb));
        }
        if self.degree == 0 {
            return bad("degree must be at least 1".into());
        }
        if self.bins == 0 {
            return bad("bins must be at least 1".into());
        }
        if self.fit_iters == 0 {
            return bad("fit_iters must be at least 1".into());
        }
        Ok(())
    }

    pub fn epsilon_proc(&self) -> f64 {
        self.epsilon_proc.unwrap_or(0.1 * self.epsilon)
    }

    pub fn size_cap_bytes(&self) -> u64 {
        (self.size_cap_mb * (1u64 << 20) as f64) as u64
    }

    fn preprocess_config(&self) -> PreprocessConfig {
        PreprocessConfig {
            epsilon_proc: self.epsilon_proc(),
            strategy: self.discretization,
            bins: self.bins,
            ..Default::default()
        }
    }
}

/// A constraint on generated rows, in original units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    /// Categorical column equals a category.
    Category { column: String, value: String },
    /// Numerical column equals a value: rows come from its bin and decode to
    /// exactly `value`.
    Number { column: String, value: f64 },
    /// Numerical column within `[lo, hi]`: the bins fully inside the range.
    Interval { column: String, lo: f64, hi: f64 },
}

impl Condition {
    pub fn column(&self) -> &str {
        match self {
            Condition::Category { column, .. } | Condition::Number { column, .. } | Condition::Interval { column, .. } => {
                column
            }
        }
    }

    /// Parses `col=value` or `col=[a,b]`, typed by the column's kind.
    pub fn parse(text: &str, domain: &Domain) -> Result<Self> {
        let (col, value) =
            text.split_once('=').ok_or_else(|| Error::invalid(format!("condition `{text}` is not `column=value`")))?;
        let (col, value) = (col.trim(), value.trim());
        let spec = domain
            .index_of(col)
            .map(|i| &domain.columns[i])
            .ok_or_else(|| Error::invalid(format!("condition on unknown column `{col}`")))?;
        let number = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| Error::invalid(format!("`{s}` is not a number in condition `{text}`")))
        };
        let column = col.to_string();
        match &spec.kind {
            ColumnKind::Categorical { .. } => Ok(Condition::Category { column, value: value.to_string() }),
            ColumnKind::Numerical { .. } => match value.strip_prefix('[').and_then(|v| v.strip_suffix(']')) {
                Some(inner) => {
                    let (a, b) = inner
                        .split_once(',')
                        .ok_or_else(|| Error::invalid(format!("interval in `{text}` needs two ends")))?;
                    Ok(Condition::Interval { column, lo: number(a)?, hi: number(b)? })
                }
                None => Ok(Condition::Number { column, value: number(value)? }),
            },
        }
    }
}

/// Output of public pretraining: everything but the measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedState {
    config: SynthesizerConfig,
    domain: Domain,
    preprocessor: Preprocessor,
    plan: Vec<PlannedMeasurement>,
    provenance: Provenance,
    ledger: PrivacyLedger,
}

impl PretrainedState {
    pub fn config(&self) -> &SynthesizerConfig {
        &self.config
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    pub fn plan(&self) -> &[PlannedMeasurement] {
        &self.plan
    }

    pub fn cliques(&self) -> Vec<Clique> {
        self.plan.iter().map(|m| m.clique.clone()).collect()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Charges made during pretraining; always empty.
    pub fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }
}

#[derive(Debug, Clone)]
pub struct FittedSynthesizer {
    config: SynthesizerConfig,
    domain: Domain,
    preprocessor: Preprocessor,
    model: PGModel,
    plan: Vec<PlannedMeasurement>,
    provenance: Provenance,
    ledger: PrivacyLedger,
    /// Noisy measurements behind the fit; not stored in the container.
    measurements: Vec<Measurement>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: SynthesizerConfig,
    domain: Domain,
    preprocessor: Preprocessor,
    plan: Vec<PlannedMeasurement>,
    provenance: Provenance,
    ledger: PrivacyLedger,
    total_records: f64,
    tree_nodes: Vec<Clique>,
    tensor_bytes: u64,
}

fn final_fit(
    measurements: &[Measurement],
    discrete: &DiscreteDomain,
    prep: &Preprocessor,
    config: &SynthesizerConfig,
) -> Result<PGModel> {
    let opts = FitOptions { iters: config.fit_iters, ..Default::default() };
    let (model, _, _) = fit_model(measurements, discrete, &opts, Some(prep.zero_codes()), None)?;
    let cap = config.size_cap_bytes();
    if model.size_bytes() > cap {
        return Err(Error::Consistency(format!("fitted model has {} bytes, above the cap of {cap}", model.size_bytes())));
    }
    Ok(model)
}

/// Fits a synthesizer on private data.
pub fn fit<R: Rng + ?Sized>(config: &SynthesizerConfig, data: &MixedTable, domain: &Domain, rng: &mut R) -> Result<FittedSynthesizer> {
    fit_with_source(config, data, domain, rng)
}

/// [`fit`] over any table source. All reads of cell values go through
/// ledger-charged accessors.
pub fn fit_with_source<R: Rng + ?Sized>(
    config: &SynthesizerConfig,
    source: &dyn TableSource,
    domain: &Domain,
    rng: &mut R,
) -> Result<FittedSynthesizer> {
    config.validate()?;
    source.check_schema(domain)?;
    let budget = PrivacyBudget::new(config.epsilon, config.delta)?;
    let mut ledger = PrivacyLedger::new(budget.rho())?;
    let (prep, _) = fit_preprocessor(source, domain, &config.preprocess_config(), Some(&mut ledger), rng)?;
    let data = source.encode(&prep)?;
    let plan = run_selector(config.model, data.as_ref(), &mut ledger, true, config.degree, config.size_cap_bytes(), rng)?;
    let model = final_fit(&plan.measurements, data.domain(), &prep, config)?;
    Ok(FittedSynthesizer {
        config: config.clone(),
        domain: domain.clone(),
        preprocessor: prep,
        model,
        plan: plan.measurements_spec,
        provenance: plan.provenance,
        ledger,
        measurements: plan.measurements,
    })
}

/// Fits preprocessing and selects the plan on data the caller declares
/// public. Nothing is charged.
pub fn pretrain_public<R: Rng + ?Sized>(
    config: &SynthesizerConfig,
    public: &MixedTable,
    domain: &Domain,
    rng: &mut R,
) -> Result<PretrainedState> {
    config.validate()?;
    public.check_schema(domain)?;
    let rho = PrivacyBudget::new(config.epsilon, config.delta)?.rho();
    let (prep, _) = fit_preprocessor(public, domain, &config.preprocess_config(), None, rng)?;
    let data = prep.encode(public)?;
    // The selectors book their charges on a scratch ledger that is thrown
    // away: the data is public.
    let mut scratch = PrivacyLedger::new(rho)?;
    let SelectionPlan { measurements_spec, provenance, .. } =
        run_selector(config.model, &data, &mut scratch, false, config.degree, config.size_cap_bytes(), rng)?;
    Ok(PretrainedState {
        config: config.clone(),
        domain: domain.clone(),
        preprocessor: prep,
        plan: measurements_spec,
        provenance,
        ledger: PrivacyLedger::new(0.0)?,
    })
}

/// Measures a pretrained plan on private data with the whole budget.
pub fn fit_private<R: Rng + ?Sized>(state: &PretrainedState, private: &MixedTable, rng: &mut R) -> Result<FittedSynthesizer> {
    fit_private_with_source(state, private, rng)
}

pub fn fit_private_with_source<R: Rng + ?Sized>(
    state: &PretrainedState,
    source: &dyn TableSource,
    rng: &mut R,
) -> Result<FittedSynthesizer> {
    let config = &state.config;
    source.check_schema(&state.domain)?;
    let rho = PrivacyBudget::new(config.epsilon, config.delta)?.rho();
    let mut ledger = PrivacyLedger::new(rho)?;
    let data = source.encode(&state.preprocessor)?;
    let planned: f64 = state.plan.iter().map(|m| m.rho).sum();
    if !(planned > 0.0) {
        return Err(Error::Consistency("pretrained plan has no measurement budget".into()));
    }
    // Shares are kept, scaled to the full budget.
    let mut plan = Vec::with_capacity(state.plan.len());
    let mut charges = Vec::with_capacity(state.plan.len());
    for m in &state.plan {
        let share = rho * m.rho / planned;
        let sigma = gaussian_sigma_for_rho(share, 1.0)?;
        charges.push(ledger.charge_gaussian(format!("measure/{}", m.clique), sigma, 1.0)?);
        plan.push(PlannedMeasurement { clique: m.clique.clone(), sigma, rho: share });
    }
    let root = fork_root(rng);
    let measurements = measure_plan(data.as_ref(), &plan, &charges, root)?;
    let model = final_fit(&measurements, data.domain(), &state.preprocessor, config)?;
    Ok(FittedSynthesizer {
        config: config.clone(),
        domain: state.domain.clone(),
        preprocessor: state.preprocessor.clone(),
        model,
        plan,
        provenance: state.provenance.clone(),
        ledger,
        measurements,
    })
}

fn measure_plan(
    data: &dyn DataAccess,
    plan: &[PlannedMeasurement],
    charges: &[crate::privacy::Charge],
    root: u64,
) -> Result<Vec<Measurement>> {
    use rayon::prelude::*;
    plan.par_iter()
        .zip(charges.par_iter())
        .enumerate()
        .map(|(i, (m, charge))| {
            let exact = data.marginal(&m.clique, charge)?;
            let counts = gaussian_mechanism(&exact.counts, 1.0, &NoiseScale::new(m.sigma)?, &mut stream(root, i as u64))?;
            Measurement::new(Marginal { clique: m.clique.clone(), counts }, m.sigma)
        })
        .collect()
}

impl FittedSynthesizer {
    pub fn config(&self) -> &SynthesizerConfig {
        &self.config
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn preprocessor(&self) -> &Preprocessor {
        &self.preprocessor
    }

    pub fn model(&self) -> &PGModel {
        &self.model
    }

    pub fn plan(&self) -> &[PlannedMeasurement] {
        &self.plan
    }

    pub fn cliques(&self) -> Vec<Clique> {
        self.plan.iter().map(|m| m.clique.clone()).collect()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn ledger(&self) -> &PrivacyLedger {
        &self.ledger
    }

    /// The noisy marginals the model was fitted to. Empty for a model loaded
    /// from disk.
    pub fn measurements(&self) -> &[Measurement] {
        &self.measurements
    }

    /// `(epsilon, delta)` guarantee of what was actually spent.
    pub fn epsilon_spent(&self) -> Result<f64> {
        eps_of_rho(self.ledger.spent_rho(), self.config.delta)
    }

    /// Bytes of the model tensors, the quantity the size cap bounds.
    pub fn model_size_bytes(&self) -> Result<u64> {
        estimate_model_size(self.model.domain(), &self.cliques())
    }

    fn evidence(&self, conditions: &[Condition]) -> Result<(Evidence, Vec<Option<f64>>)> {
        let d = self.preprocessor.names().len();
        let mut evidence: Evidence = vec![None; d];
        let mut fixed: Vec<Option<f64>> = vec![None; d];
        for cond in conditions {
            let j = self
                .preprocessor
                .column_index(cond.column())
                .ok_or_else(|| Error::invalid(format!("condition on unknown column `{}`", cond.column())))?;
            let plan = &self.preprocessor.plans()[j];
            let mut allowed = vec![false; plan.cardinality()];
            match (cond, plan) {
                (Condition::Category { value, .. }, ColumnPlan::Categorical { categories }) => {
                    let k = categories.iter().position(|c| c == value).ok_or_else(|| Error::Encoding {
                        column: cond.column().to_string(),
                        value: value.clone(),
                    })?;
                    allowed[k] = true;
                }
                (Condition::Number { value, .. }, ColumnPlan::Numerical { edges }) => {
                    if !(*value >= edges[0] && *value <= edges[edges.len() - 1]) {
                        return Err(Error::InfeasibleCondition(format!(
                            "{value} lies outside the range of `{}`",
                            cond.column()
                        )));
                    }
                    if fixed[j].is_some_and(|x| x != *value) {
                        return Err(Error::InfeasibleCondition(format!("conflicting values for `{}`", cond.column())));
                    }
                    allowed[plan.bin_of(*value).expect("numerical plan")] = true;
                    fixed[j] = Some(*value);
                }
                (Condition::Interval { lo, hi, .. }, ColumnPlan::Numerical { edges }) => {
                    if !(lo <= hi) {
                        return Err(Error::invalid(format!("empty interval [{lo}, {hi}]")));
                    }
                    for b in 0..allowed.len() {
                        allowed[b] = edges[b] >= *lo && edges[b + 1] <= *hi;
                    }
                    if let Some(x) = fixed[j] {
                        if x < *lo || x > *hi {
                            allowed.iter_mut().for_each(|a| *a = false);
                        }
                    }
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "condition kind does not match column `{}`",
                        cond.column()
                    )))
                }
            }
            let merged = match evidence[j].take() {
                Some(prev) => prev.iter().zip(&allowed).map(|(a, b)| *a && *b).collect(),
                None => allowed,
            };
            if !merged.iter().any(|&a| a) {
                return Err(Error::InfeasibleCondition(format!("no bin of `{}` satisfies the conditions", cond.column())));
            }
            evidence[j] = Some(merged);
        }
        Ok((evidence, fixed))
    }

    /// Samples `n` rows in original units, each satisfying every condition.
    pub fn generate<R: Rng + ?Sized>(&self, n: usize, conditions: &[Condition], rng: &mut R) -> Result<MixedTable> {
        let (evidence, fixed) = self.evidence(conditions)?;
        let codes = self.model.sample(n, &evidence, rng)?;
        self.preprocessor.decode_with(&codes, &fixed, rng)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensor_bytes = 8 * self.model.potentials().iter().map(|p| p.len() as u64).sum::<u64>();
        let manifest = Manifest {
            config: self.config.clone(),
            domain: self.domain.clone(),
            preprocessor: self.preprocessor.clone(),
            plan: self.plan.clone(),
            provenance: self.provenance.clone(),
            ledger: self.ledger.clone(),
            total_records: self.model.total_records(),
            tree_nodes: self.model.tree().nodes().to_vec(),
            tensor_bytes,
        };
        let json = serde_json::to_vec_pretty(&manifest)?;
        let mut out = Vec::with_capacity(24 + json.len() + tensor_bytes as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.model.potentials().len() as u64).to_le_bytes());
        for p in self.model.potentials() {
            out.extend_from_slice(&(p.len() as u64).to_le_bytes());
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0, version: None };
        if cur.take(4)? != MAGIC {
            return Err(cur.fail("missing DPMM header"));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        cur.version = Some(version);
        if version != FORMAT_VERSION {
            return Err(cur.fail(&format!("unsupported format version {version}, this build reads {FORMAT_VERSION}")));
        }
        let len = cur.u64()? as usize;
        let manifest: Manifest =
            serde_json::from_slice(cur.take(len)?).map_err(|e| cur.fail(&format!("bad manifest: {e}")))?;
        let count = cur.u64()? as usize;
        let mut potentials = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = cur.u64()? as usize;
            let raw = cur.take(n.checked_mul(8).ok_or_else(|| cur.fail("tensor length overflows"))?)?;
            potentials.push(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
        }
        if cur.pos != bytes.len() {
            return Err(cur.fail(&format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        let discrete = manifest.preprocessor.discrete_domain();
        let cliques: Vec<Clique> = manifest.plan.iter().map(|m| m.clique.clone()).collect();
        let tree = build_junction_tree(&discrete, &cliques).map_err(|e| cur.fail(&e.to_string()))?;
        if tree.nodes() != manifest.tree_nodes.as_slice() {
            return Err(cur.fail("junction tree does not match the stored plan"));
        }
        let model = PGModel::new(discrete, tree, potentials, manifest.total_records).map_err(|e| cur.fail(&e.to_string()))?;
        Ok(Self {
            config: manifest.config,
            domain: manifest.domain,
            preprocessor: manifest.preprocessor,
            model,
            plan: manifest.plan,
            provenance: manifest.provenance,
            ledger: manifest.ledger,
            measurements: Vec::new(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    version: Option<u32>,
}

impl<'a> Cursor<'a> {
    fn fail(&self, reason: &str) -> Error {
        Error::Load { version: self.version, reason: reason.to_string() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            self.fail(&format!("truncated: needed {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
