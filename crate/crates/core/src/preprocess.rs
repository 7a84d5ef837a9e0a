//! Turning raw mixed data into integer codes without leaking through the
//! preprocessing itself: private bounds, PrivTree or uniform binning, and an
//! invertible decode.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ColumnKind, DiscreteDataset, DiscreteDomain, Domain, StructuralZero};
use crate::error::{Error, Result};
use crate::privacy::{exponential_mechanism, laplace_mechanism, PrivacyLedger};
use crate::table::{Column, MixedTable, TableSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    PrivTree,
    Uniform,
}

impl std::str::FromStr for Discretization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "privtree" => Ok(Discretization::PrivTree),
            "uniform" => Ok(Discretization::Uniform),
            other => Err(Error::InvalidConfiguration(format!("unknown discretization `{other}`"))),
        }
    }
}

/// Candidate grid for private bounds: the integers -100..=100 plus 100
/// log-spaced magnitudes on each side up to 1e9 (401 points).
pub fn default_bound_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (-100..=100).map(f64::from).collect();
    for k in 1..=100 {
        let v = 10f64.powf(2.0 + 7.0 * k as f64 / 100.0).round();
        grid.push(v);
        grid.push(-v);
    }
    grid.sort_by(f64::total_cmp);
    grid
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::invalid("bound grid needs at least 2 points"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("bound grid must be finite and strictly increasing"));
    }
    Ok(())
}

// Utilities for the lower/upper bound candidates. The lower utility of g_i is
// -(#x < g_i) - [no x < g_{i+1}]: points cut off, plus one unit of penalty
// for a candidate that is looser than the next grid point. Adding or removing
// a record moves either term by at most one and never both in the same
// direction, so the sensitivity stays 1 while the maximizer is unique.
fn lower_utilities(sorted: &[f64], grid: &[f64]) -> Vec<f64> {
    let below = |b: f64| sorted.partition_point(|&x| x < b);
    (0..grid.len())
        .map(|i| {
            let loose = match grid.get(i + 1) {
                Some(&next) => below(next) == 0,
                None => sorted.is_empty(),
            };
            -(below(grid[i]) as f64) - f64::from(u8::from(loose))
        })
        .collect()
}

// Mirror image: -(#x >= g_i) - [no x >= g_{i-1}], so the maximizer is the
// smallest grid point strictly above the data.
fn upper_utilities(sorted: &[f64], grid: &[f64]) -> Vec<f64> {
    let at_or_above = |b: f64| sorted.len() - sorted.partition_point(|&x| x < b);
    (0..grid.len())
        .map(|i| {
            let loose = match i.checked_sub(1) {
                Some(p) => at_or_above(grid[p]) == 0,
                None => sorted.is_empty(),
            };
            -(at_or_above(grid[i]) as f64) - f64::from(u8::from(loose))
        })
        .collect()
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

fn sorted_copy(column: &[f64]) -> Result<Vec<f64>> {
    if column.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("column holds non-finite values"));
    }
    let mut v = column.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn bounds_impl<R: Rng + ?Sized>(column: &[f64], epsilon: Option<f64>, grid: &[f64], rng: &mut R) -> Result<(f64, f64)> {
    check_grid(grid)?;
    let sorted = sorted_copy(column)?;
    // The lower bound may not be the last grid point, and the upper bound is
    // picked among points above it, so lo < hi always holds.
    let lo_scores = lower_utilities(&sorted, &grid[..grid.len() - 1]);
    let lo_idx = match epsilon {
        Some(eps) => exponential_mechanism(&lo_scores, eps / 2.0, 1.0, rng)?,
        None => argmax(&lo_scores),
    };
    let upper = &grid[lo_idx + 1..];
    let hi_scores = upper_utilities(&sorted, upper);
    let hi_idx = match epsilon {
        Some(eps) => exponential_mechanism(&hi_scores, eps / 2.0, 1.0, rng)?,
        None => argmax(&hi_scores),
    };
    Ok((grid[lo_idx], upper[hi_idx]))
}

/// Private `(lo, hi)` bounds chosen from `grid`, each end by an exponential
/// mechanism at `epsilon / 2` with sensitivity 1. The caller charges
/// `epsilon`.
pub fn dp_bounds<R: Rng + ?Sized>(column: &[f64], epsilon: f64, grid: &[f64], rng: &mut R) -> Result<(f64, f64)> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    bounds_impl(column, Some(epsilon), grid, rng)
}

/// Noise-free bounds, for data declared public.
pub fn exact_bounds(column: &[f64], grid: &[f64]) -> Result<(f64, f64)> {
    bounds_impl(column, None, grid, &mut rand::rngs::mock::StepRng::new(0, 0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivTreeParams {
    pub theta: f64,
    pub lambda: f64,
    pub decay: f64,
    pub max_depth: u32,
}

pub const DEFAULT_MAX_DEPTH: u32 = 20;

impl PrivTreeParams {
    /// Parameters for a binary tree at budget `epsilon`: `lambda = 3 / epsilon`
    /// and `decay = lambda · ln 2`.
    pub fn for_epsilon(epsilon: f64, theta: f64, max_depth: u32) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        let lambda = 3.0 / epsilon;
        let p = Self { theta, lambda, decay: lambda * std::f64::consts::LN_2, max_depth };
        p.validate()?;
        Ok(p)
    }

    /// Default split threshold for an (estimated) row count.
    pub fn default_theta(n: f64) -> f64 {
        (n / 1000.0).max(5.0)
    }

    fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.theta) || !positive(self.lambda) || !positive(self.decay) {
            return Err(Error::invalid("PrivTree theta, lambda and decay must be positive"));
        }
        if self.max_depth == 0 || self.max_depth > 64 {
            return Err(Error::invalid(format!("max_depth must lie in 1..=64, got {}", self.max_depth)));
        }
        Ok(())
    }
}

fn privtree_impl<R: Rng + ?Sized>(
    column: &[f64],
    lo: f64,
    hi: f64,
    params: &PrivTreeParams,
    noisy: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
        return Err(Error::invalid(format!("PrivTree needs finite lo < hi, got [{lo}, {hi}]")));
    }
    params.validate()?;
    let sorted: Vec<f64> = sorted_copy(column)?.into_iter().map(|x| x.clamp(lo, hi)).collect();
    let count = |a: f64, b: f64| {
        let start = sorted.partition_point(|&x| x < a);
        let end = if b == hi { sorted.len() } else { sorted.partition_point(|&x| x < b) };
        end - start
    };
    let mut edges = vec![lo];
    // Depth-first, left child first, so leaves come out in order.
    let mut stack = vec![(lo, hi, 0u32)];
    while let Some((a, b, depth)) = stack.pop() {
        let mid = a + (b - a) / 2.0;
        let splittable = depth < params.max_depth && mid > a && mid < b;
        let biased = count(a, b) as f64 - depth as f64 * params.decay;
        let split = splittable && {
            if noisy {
                let clamped = biased.max(params.theta - params.decay);
                laplace_mechanism(clamped, 1.0, 1.0 / params.lambda, rng)? > params.theta
            } else {
                biased > params.theta
            }
        };
        if split {
            stack.push((mid, b, depth + 1));
            stack.push((a, mid, depth + 1));
        } else {
            edges.push(b);
        }
    }
    Ok(edges)
}

/// PrivTree bin edges over `[lo, hi]`.
///
/// A node at depth `d` splits when its count minus `d · decay`, floored at
/// `theta - decay` and perturbed by Laplace noise of scale `lambda`, exceeds
/// `theta`. With `lambda ≥ 3 / epsilon` the whole tree costs `epsilon`.
pub fn privtree_edges<R: Rng + ?Sized>(
    column: &[f64],
    epsilon: f64,
    lo: f64,
    hi: f64,
    params: &PrivTreeParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if params.lambda * epsilon < 3.0 * (1.0 - 1e-12) {
        return Err(Error::invalid(format!("lambda {} too small for epsilon {epsilon}", params.lambda)));
    }
    privtree_impl(column, lo, hi, params, true, rng)
}

/// The same recursion without noise, for public data and oracle tests.
pub fn privtree_edges_noiseless(column: &[f64], lo: f64, hi: f64, params: &PrivTreeParams) -> Result<Vec<f64>> {
    privtree_impl(column, lo, hi, params, false, &mut rand::rngs::mock::StepRng::new(0, 0))
}

/// `n_bins + 1` equally spaced edges.
pub fn uniform_edges(lo: f64, hi: f64, n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 {
        return Err(Error::invalid("n_bins must be at least 1"));
    }
    if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
        return Err(Error::invalid(format!("uniform edges need finite lo < hi, got [{lo}, {hi}]")));
    }
    let width = hi - lo;
    let mut edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64 / n_bins as f64).collect();
    edges[n_bins] = hi;
    edges.dedup();
    Ok(edges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnPlan {
    Categorical { categories: Vec<String> },
    Numerical { edges: Vec<f64> },
}

impl ColumnPlan {
    pub fn cardinality(&self) -> usize {
        match self {
            ColumnPlan::Categorical { categories } => categories.len(),
            ColumnPlan::Numerical { edges } => edges.len() - 1,
        }
    }

    /// Bin index of a numeric value; values outside the range are clipped.
    pub fn bin_of(&self, x: f64) -> Option<usize> {
        match self {
            ColumnPlan::Numerical { edges } => {
                let inner = &edges[1..edges.len() - 1];
                Some(inner.partition_point(|&e| e <= x))
            }
            ColumnPlan::Categorical { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub epsilon_proc: f64,
    pub strategy: Discretization,
    pub bins: usize,
    pub max_depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { epsilon_proc: 0.0, strategy: Discretization::PrivTree, bins: 20, max_depth: DEFAULT_MAX_DEPTH, grid: None }
    }
}

/// Fitted per-column encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    names: Vec<String>,
    plans: Vec<ColumnPlan>,
    /// Codes per column that are structural zeros.
    zero_codes: Vec<Vec<usize>>,
    epsilon_proc: f64,
    /// Pure-DP epsilon actually spent, by label.
    spent: Vec<(String, f64)>,
}

impl Preprocessor {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn plans(&self) -> &[ColumnPlan] {
        &self.plans
    }

    pub fn zero_codes(&self) -> &[Vec<usize>] {
        &self.zero_codes
    }

    pub fn epsilon_proc(&self) -> f64 {
        self.epsilon_proc
    }

    pub fn spent(&self) -> &[(String, f64)] {
        &self.spent
    }

    pub fn discrete_domain(&self) -> DiscreteDomain {
        DiscreteDomain::new(self.names.clone(), self.plans.iter().map(ColumnPlan::cardinality).collect())
            .expect("preprocessor plans are validated at construction")
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Builds a preprocessor from explicit plans (categorical labels and bin
    /// edges), e.g. for tests or public reuse.
    pub fn from_plans(names: Vec<String>, plans: Vec<ColumnPlan>, domain: &Domain) -> Result<Self> {
        if names.len() != plans.len() || names.len() != domain.len() {
            return Err(Error::validation("plans do not match the domain"));
        }
        for (name, plan) in names.iter().zip(&plans) {
            match plan {
                ColumnPlan::Numerical { edges } => {
                    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
                        return Err(Error::invalid(format!("edges of `{name}` must be strictly increasing")));
                    }
                }
                ColumnPlan::Categorical { categories } => {
                    if categories.is_empty() {
                        return Err(Error::invalid(format!("`{name}` has no categories")));
                    }
                }
            }
        }
        let zero_codes = structural_zero_codes(domain, &plans)?;
        Ok(Self { names, plans, zero_codes, epsilon_proc: 0.0, spent: Vec::new() })
    }

    /// Integer-encodes a table. Numeric values are clipped into the bin range.
    pub fn encode(&self, table: &MixedTable) -> Result<DiscreteDataset> {
        if table.names() != self.names.as_slice() {
            return Err(Error::validation("table columns do not match the preprocessor"));
        }
        let d = self.names.len();
        let n = table.n_rows();
        let mut cells = vec![0u32; n * d];
        for (j, (plan, col)) in self.plans.iter().zip(table.columns()).enumerate() {
            match (plan, col) {
                (ColumnPlan::Categorical { categories }, Column::Categorical(values)) => {
                    let lookup: HashMap<&str, u32> =
                        categories.iter().enumerate().map(|(i, c)| (c.as_str(), i as u32)).collect();
                    for (r, v) in values.iter().enumerate() {
                        cells[r * d + j] = *lookup.get(v.as_str()).ok_or_else(|| Error::Encoding {
                            column: self.names[j].clone(),
                            value: v.clone(),
                        })?;
                    }
                }
                (plan @ ColumnPlan::Numerical { .. }, Column::Numerical(values)) => {
                    for (r, &v) in values.iter().enumerate() {
                        if !v.is_finite() {
                            return Err(Error::Encoding { column: self.names[j].clone(), value: v.to_string() });
                        }
                        cells[r * d + j] = plan.bin_of(v).expect("numerical plan") as u32;
                    }
                }
                _ => return Err(Error::validation(format!("column `{}` has the wrong kind", self.names[j]))),
            }
        }
        Ok(DiscreteDataset::from_parts_unchecked(self.discrete_domain(), cells))
    }

    /// Maps codes back to values: labels for categories, a uniform draw inside
    /// the bin for numbers (the last bin includes its upper edge).
    pub fn decode<R: Rng + ?Sized>(&self, data: &DiscreteDataset, rng: &mut R) -> Result<MixedTable> {
        self.decode_with(data, &vec![None; self.names.len()], rng)
    }

    /// Like [`Self::decode`], but numeric columns with a fixed value decode to
    /// exactly that value.
    pub fn decode_with<R: Rng + ?Sized>(
        &self,
        data: &DiscreteDataset,
        fixed: &[Option<f64>],
        rng: &mut R,
    ) -> Result<MixedTable> {
        let d = self.names.len();
        if data.domain().len() != d || fixed.len() != d {
            return Err(Error::validation("dataset width does not match the preprocessor"));
        }
        let n = data.n_rows();
        let mut columns = Vec::with_capacity(d);
        for (j, plan) in self.plans.iter().enumerate() {
            let card = plan.cardinality();
            let code = |r: usize| -> Result<usize> {
                let c = data.row(r)[j] as usize;
                if c >= card {
                    return Err(Error::CorruptData(format!("code {c} out of range in column `{}`", self.names[j])));
                }
                Ok(c)
            };
            match plan {
                ColumnPlan::Categorical { categories } => {
                    let vals = (0..n).map(|r| Ok(categories[code(r)?].clone())).collect::<Result<Vec<_>>>()?;
                    columns.push(Column::Categorical(vals));
                }
                ColumnPlan::Numerical { edges } => {
                    let mut vals = Vec::with_capacity(n);
                    for r in 0..n {
                        let b = code(r)?;
                        let v = match fixed[j] {
                            Some(x) => x,
                            None if b + 1 == card => rng.gen_range(edges[b]..=edges[b + 1]),
                            None => rng.gen_range(edges[b]..edges[b + 1]),
                        };
                        vals.push(v);
                    }
                    columns.push(Column::Numerical(vals));
                }
            }
        }
        MixedTable::new(self.names.clone(), columns)
    }
}

fn structural_zero_codes(domain: &Domain, plans: &[ColumnPlan]) -> Result<Vec<Vec<usize>>> {
    domain
        .columns
        .iter()
        .zip(plans)
        .map(|(spec, plan)| {
            let mut codes = Vec::new();
            for z in &spec.structural_zeros {
                match (z, plan) {
                    (StructuralZero::Category(c), ColumnPlan::Categorical { categories }) => {
                        let i = categories.iter().position(|x| x == c).ok_or_else(|| Error::Parse {
                            column: spec.name.clone(),
                            reason: format!("structural zero `{c}` is not a category"),
                        })?;
                        codes.push(i);
                    }
                    (StructuralZero::Interval(a, b), ColumnPlan::Numerical { edges }) => {
                        for i in 0..edges.len() - 1 {
                            if edges[i] >= *a && edges[i + 1] <= *b {
                                codes.push(i);
                            }
                        }
                    }
                    _ => {
                        return Err(Error::Parse {
                            column: spec.name.clone(),
                            reason: "structural zero kind does not match column kind".into(),
                        })
                    }
                }
            }
            codes.sort_unstable();
            codes.dedup();
            Ok(codes)
        })
        .collect()
}

fn add_zero_edges(edges: &mut Vec<f64>, zeros: &[StructuralZero]) {
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    for z in zeros {
        if let StructuralZero::Interval(a, b) = z {
            for e in [*a, *b] {
                if e > lo && e < hi {
                    edges.push(e);
                }
            }
        }
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();
}

/// Fits the preprocessor.
///
/// With a ledger, every data-dependent step is a charged DP release: bounds
/// for columns without declared bounds share `0.5 · epsilon_proc`, and
/// PrivTree (when selected) shares the other half across numerical columns.
/// Without a ledger the data is treated as public: the same steps run
/// noise-free and nothing is charged.
pub fn fit_preprocessor<R: Rng + ?Sized>(
    source: &dyn TableSource,
    domain: &Domain,
    config: &PreprocessConfig,
    mut ledger: Option<&mut PrivacyLedger>,
    rng: &mut R,
) -> Result<(Preprocessor, DiscreteDomain)> {
    source.check_schema(domain)?;
    let numeric: Vec<usize> = (0..domain.len()).filter(|&i| domain.columns[i].is_numerical()).collect();
    let need_bounds: Vec<usize> = numeric
        .iter()
        .cloned()
        .filter(|&i| matches!(domain.columns[i].kind, ColumnKind::Numerical { bounds: None }))
        .collect();
    let need_tree = config.strategy == Discretization::PrivTree && !numeric.is_empty();
    let private = ledger.is_some();
    if private && (!need_bounds.is_empty() || need_tree) && !(config.epsilon_proc > 0.0) {
        let what = if need_bounds.is_empty() {
            "PrivTree discretization".to_string()
        } else {
            format!("bounds for column `{}`", domain.columns[need_bounds[0]].name)
        };
        return Err(Error::BudgetRequired(format!("{what} must be estimated privately but epsilon_proc is 0")));
    }
    if config.bins == 0 {
        return Err(Error::InvalidConfiguration("bins must be at least 1".into()));
    }
    let grid = config.grid.clone().unwrap_or_else(default_bound_grid);
    let eps_bounds = if need_bounds.is_empty() { 0.0 } else { 0.5 * config.epsilon_proc / need_bounds.len() as f64 };
    let eps_tree = if need_tree { 0.5 * config.epsilon_proc / numeric.len() as f64 } else { 0.0 };
    let mut spent = Vec::new();
    let mut plans = Vec::with_capacity(domain.len());
    for (j, spec) in domain.columns.iter().enumerate() {
        let plan = match &spec.kind {
            ColumnKind::Categorical { categories } => ColumnPlan::Categorical { categories: categories.clone() },
            ColumnKind::Numerical { bounds } => {
                let name = &spec.name;
                let (lo, hi) = match bounds {
                    Some(b) => *b,
                    None => match ledger.as_deref_mut() {
                        Some(ledger) => {
                            let label = format!("preprocess/bounds/{name}");
                            let charge = ledger.charge_pure(label.clone(), eps_bounds)?;
                            spent.push((label, eps_bounds));
                            let values = source.numeric_column(j, &charge)?;
                            dp_bounds(&values, eps_bounds, &grid, rng)?
                        }
                        None => exact_bounds(&source.numeric_column(j, &crate::privacy::Charge::public())?, &grid)?,
                    },
                };
                let mut edges = match config.strategy {
                    Discretization::Uniform => uniform_edges(lo, hi, config.bins)?,
                    Discretization::PrivTree => match ledger.as_deref_mut() {
                        Some(ledger) => {
                            // 10% of the column's tree budget buys the noisy row
                            // count that sets theta.
                            let eps_count = 0.1 * eps_tree;
                            let eps_split = eps_tree - eps_count;
                            let count_label = format!("preprocess/tree/{name}/count");
                            let charge = ledger.charge_pure(count_label.clone(), eps_count)?;
                            spent.push((count_label, eps_count));
                            let values = source.numeric_column(j, &charge)?;
                            let n_hat = laplace_mechanism(values.len() as f64, 1.0, eps_count, rng)?;
                            let tree_label = format!("preprocess/tree/{name}");
                            let _charge = ledger.charge_pure(tree_label.clone(), eps_split)?;
                            spent.push((tree_label, eps_split));
                            let params = PrivTreeParams::for_epsilon(
                                eps_split,
                                PrivTreeParams::default_theta(n_hat),
                                config.max_depth,
                            )?;
                            privtree_edges(&values, eps_split, lo, hi, &params, rng)?
                        }
                        None => {
                            let values = source.numeric_column(j, &crate::privacy::Charge::public())?;
                            // public data: no noise, so any positive epsilon gives
                            // the same decay-free-of-noise recursion
                            let params = PrivTreeParams::for_epsilon(
                                1.0,
                                PrivTreeParams::default_theta(values.len() as f64),
                                config.max_depth,
                            )?;
                            privtree_edges_noiseless(&values, lo, hi, &params)?
                        }
                    },
                };
                add_zero_edges(&mut edges, &spec.structural_zeros);
                ColumnPlan::Numerical { edges }
            }
        };
        plans.push(plan);
    }
    let zero_codes = structural_zero_codes(domain, &plans)?;
    let prep = Preprocessor { names: domain.names(), plans, zero_codes, epsilon_proc: config.epsilon_proc, spent };
    let discrete = prep.discrete_domain();
    Ok((prep, discrete))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ColumnSpec;
    use crate::rng::seeded;

    fn int_grid() -> Vec<f64> {
        (-100..=100).map(f64::from).collect()
    }

    #[test]
    fn default_grid_shape() {
        let g = default_bound_grid();
        assert_eq!(g.len(), 401);
        assert_eq!(g[0], -1e9);
        assert_eq!(g[400], 1e9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!((-100..=100).all(|i| g.contains(&(i as f64))));
    }

    #[test]
    fn bounds_examples() {
        let mut rng = seeded(1);
        let data: Vec<f64> = (0..200).map(|i| 3.2 + 5.7 * i as f64 / 199.0).collect();
        assert_eq!(dp_bounds(&data, 1e6, &int_grid(), &mut rng).unwrap(), (3.0, 9.0));
        assert_eq!(dp_bounds(&[5.0; 50], 1e6, &int_grid(), &mut rng).unwrap(), (5.0, 6.0));
        assert_eq!(dp_bounds(&[5.0; 50], 1e6, &default_bound_grid(), &mut rng).unwrap(), (5.0, 6.0));
        assert!(dp_bounds(&data, 1.0, &[1.0], &mut rng).is_err());
        let grid = int_grid();
        for seed in 0..50 {
            let (lo, hi) = dp_bounds(&data, 0.01, &grid, &mut seeded(seed)).unwrap();
            assert!(lo < hi && grid.contains(&lo) && grid.contains(&hi));
        }
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_edges(0.0, 1.0, 4).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(uniform_edges(-1.0, 1.0, 1).unwrap(), vec![-1.0, 1.0]);
        assert!(uniform_edges(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn privtree_no_split_when_theta_large() {
        let data = vec![0.3; 100];
        let p = PrivTreeParams::for_epsilon(1.0, 100.0, 10).unwrap();
        assert_eq!(privtree_edges_noiseless(&data, 0.0, 1.0, &p).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn privtree_deterministic_under_seed() {
        let data: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0).powi(3)).collect();
        let p = PrivTreeParams::for_epsilon(1.0, 5.0, 20).unwrap();
        let a = privtree_edges(&data, 1.0, 0.0, 1.0, &p, &mut seeded(3)).unwrap();
        let b = privtree_edges(&data, 1.0, 0.0, 1.0, &p, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], 0.0);
        assert_eq!(*a.last().unwrap(), 1.0);
        assert!(privtree_edges(&data, 0.5, 0.0, 1.0, &p, &mut seeded(3)).is_err());
    }

    fn mixed() -> (MixedTable, Domain) {
        let domain = Domain::new(vec![
            ColumnSpec::categorical("c", &["a", "b", "z"])
                .with_zeros(vec![StructuralZero::Category("z".into())]),
            ColumnSpec::numerical("x", Some((0.0, 10.0))).with_zeros(vec![StructuralZero::Interval(2.0, 3.0)]),
        ])
        .unwrap();
        let t = MixedTable::new(
            vec!["c".into(), "x".into()],
            vec![
                Column::Categorical(vec!["a".into(), "b".into(), "a".into()]),
                Column::Numerical(vec![-4.0, 5.5, 10.0]),
            ],
        )
        .unwrap();
        (t, domain)
    }

    #[test]
    fn encode_decode() {
        let (t, domain) = mixed();
        let config = PreprocessConfig { strategy: Discretization::Uniform, bins: 10, ..Default::default() };
        let mut ledger = PrivacyLedger::new(1.0).unwrap();
        let (prep, dd) = fit_preprocessor(&t, &domain, &config, Some(&mut ledger), &mut seeded(0)).unwrap();
        assert_eq!(ledger.spent_rho(), 0.0);
        assert_eq!(dd.cardinalities(), &[3, 10]);
        assert_eq!(prep.zero_codes(), &[vec![2], vec![2]]);
        let enc = prep.encode(&t).unwrap();
        assert_eq!(enc.row(0), &[0, 0]); // clipped below
        assert_eq!(enc.row(1), &[1, 5]);
        assert_eq!(enc.row(2), &[0, 9]); // hi lands in the last bin
        let dec = prep.decode(&enc, &mut seeded(1)).unwrap();
        assert_eq!(dec.column(0), t.column(0));
        if let Column::Numerical(v) = dec.column(1) {
            assert!((0.0..1.0).contains(&v[0]));
            assert!((5.0..6.0).contains(&v[1]));
            assert!((9.0..=10.0).contains(&v[2]));
        }
        let bad = MixedTable::new(
            vec!["c".into(), "x".into()],
            vec![Column::Categorical(vec!["q".into()]), Column::Numerical(vec![1.0])],
        )
        .unwrap();
        assert!(matches!(prep.encode(&bad), Err(Error::Encoding { ref column, ref value }) if column == "c" && value == "q"));
    }

    #[test]
    fn budget_split_two_columns() {
        let domain =
            Domain::new(vec![ColumnSpec::numerical("a", None), ColumnSpec::numerical("b", None)]).unwrap();
        let t = MixedTable::new(
            vec!["a".into(), "b".into()],
            vec![
                Column::Numerical((0..500).map(|i| i as f64 / 10.0).collect()),
                Column::Numerical((0..500).map(|i| -(i as f64)).collect()),
            ],
        )
        .unwrap();
        let config = PreprocessConfig { epsilon_proc: 0.1, ..Default::default() };
        let mut ledger = PrivacyLedger::new(1.0).unwrap();
        fit_preprocessor(&t, &domain, &config, Some(&mut ledger), &mut seeded(0)).unwrap();
        let eps_sum = |prefix: &str| -> f64 {
            ledger.log().iter().filter(|e| e.label.starts_with(prefix)).map(|e| e.epsilon.unwrap()).sum()
        };
        assert!((eps_sum("preprocess/bounds/") - 0.05).abs() < 1e-12);
        assert!((eps_sum("preprocess/bounds/a") - 0.025).abs() < 1e-12);
        assert!((eps_sum("preprocess/tree/") - 0.05).abs() < 1e-12);
        assert!(ledger.spent_rho() <= 0.1 * 0.1 / 2.0);

        let zero = PreprocessConfig { epsilon_proc: 0.0, ..Default::default() };
        let mut ledger = PrivacyLedger::new(1.0).unwrap();
        let err = fit_preprocessor(&t, &domain, &zero, Some(&mut ledger), &mut seeded(0)).unwrap_err();
        assert!(matches!(err, Error::BudgetRequired(_)));
    }
}
