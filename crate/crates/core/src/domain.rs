//! Schema, encoded datasets, cliques and exact marginal counting.
//!
//! Flat indexing over a clique is row-major with the last attribute varying
//! fastest; measurement, inference and serialization all share it.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::privacy::Charge;

/// A declared structural zero: a category or numeric interval that never
/// occurs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StructuralZero {
    Category(String),
    Interval(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnKind {
    Categorical { categories: Vec<String> },
    /// Bounds may be absent, in which case they are estimated privately.
    Numerical { bounds: Option<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub structural_zeros: Vec<StructuralZero>,
}

impl ColumnSpec {
    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical { categories: categories.iter().map(|s| s.to_string()).collect() },
            structural_zeros: Vec::new(),
        }
    }

    pub fn numerical(name: impl Into<String>, bounds: Option<(f64, f64)>) -> Self {
        Self { name: name.into(), kind: ColumnKind::Numerical { bounds }, structural_zeros: Vec::new() }
    }

    pub fn with_zeros(mut self, zeros: Vec<StructuralZero>) -> Self {
        self.structural_zeros = zeros;
        self
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self.kind, ColumnKind::Numerical { .. })
    }

    fn validate(&self) -> Result<()> {
        let err = |reason: String| Error::Parse { column: self.name.clone(), reason };
        match &self.kind {
            ColumnKind::Categorical { categories } => {
                if categories.is_empty() {
                    return Err(err("categorical column needs at least one category".into()));
                }
                let mut seen = HashSet::new();
                for c in categories {
                    if !seen.insert(c) {
                        return Err(err(format!("duplicate category `{c}`")));
                    }
                }
                for z in &self.structural_zeros {
                    match z {
                        StructuralZero::Category(c) if categories.contains(c) => {}
                        StructuralZero::Category(c) => {
                            return Err(err(format!("structural zero `{c}` is not a declared category")))
                        }
                        StructuralZero::Interval(..) => {
                            return Err(err("interval structural zero on a categorical column".into()))
                        }
                    }
                }
            }
            ColumnKind::Numerical { bounds } => {
                if let Some((lo, hi)) = bounds {
                    if !lo.is_finite() || !hi.is_finite() {
                        return Err(err("bounds must be finite".into()));
                    }
                    if lo >= hi {
                        return Err(err(format!("inverted bounds [{lo}, {hi}]")));
                    }
                }
                for z in &self.structural_zeros {
                    match z {
                        StructuralZero::Interval(a, b) => {
                            if !(a < b) || !a.is_finite() || !b.is_finite() {
                                return Err(err(format!("bad structural-zero interval [{a}, {b}]")));
                            }
                            match bounds {
                                Some((lo, hi)) if *a >= *lo && *b <= *hi => {}
                                Some(_) => {
                                    return Err(err(format!("structural-zero interval [{a}, {b}] outside bounds")))
                                }
                                None => {
                                    return Err(err("structural-zero intervals need declared bounds".into()))
                                }
                            }
                        }
                        StructuralZero::Category(_) => {
                            return Err(err("category structural zero on a numerical column".into()))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// User-supplied data domain: the universe synthetic data must live in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub columns: Vec<ColumnSpec>,
}

impl Domain {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let mut names = HashSet::new();
        for c in &columns {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Parse { column: c.name.clone(), reason: "duplicate column name".into() });
            }
            c.validate()?;
        }
        if columns.is_empty() {
            return Err(Error::Parse { column: String::new(), reason: "domain has no columns".into() });
        }
        Ok(Self { columns })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn to_json(&self) -> Value {
        let cols: Vec<Value> = self
            .columns
            .iter()
            .map(|c| {
                let mut obj = serde_json::Map::new();
                obj.insert("name".into(), Value::from(c.name.clone()));
                match &c.kind {
                    ColumnKind::Categorical { categories } => {
                        obj.insert("kind".into(), Value::from("categorical"));
                        obj.insert("categories".into(), Value::from(categories.clone()));
                    }
                    ColumnKind::Numerical { bounds } => {
                        obj.insert("kind".into(), Value::from("numerical"));
                        if let Some((lo, hi)) = bounds {
                            obj.insert("bounds".into(), serde_json::json!([lo, hi]));
                        }
                    }
                }
                if !c.structural_zeros.is_empty() {
                    let zs: Vec<Value> = c
                        .structural_zeros
                        .iter()
                        .map(|z| match z {
                            StructuralZero::Category(s) => Value::from(s.clone()),
                            StructuralZero::Interval(a, b) => serde_json::json!([a, b]),
                        })
                        .collect();
                    obj.insert("structural_zeros".into(), Value::from(zs));
                }
                Value::Object(obj)
            })
            .collect();
        serde_json::json!({ "columns": cols })
    }
}

fn parse_error(column: &str, reason: impl Into<String>) -> Error {
    Error::Parse { column: column.to_string(), reason: reason.into() }
}

fn as_real(v: &Value, column: &str, what: &str) -> Result<f64> {
    v.as_f64().ok_or_else(|| parse_error(column, format!("{what} must be a number, got {v}")))
}

/// Parses and validates a domain document:
/// `{"columns": [{"name", "kind", "categories"?, "bounds"?, "structural_zeros"?}]}`.
pub fn load_domain(document: &str) -> Result<Domain> {
    let root: Value = serde_json::from_str(document).map_err(|e| parse_error("", format!("invalid JSON: {e}")))?;
    let cols = root
        .get("columns")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_error("", "document needs a top-level `columns` array"))?;
    let mut specs = Vec::with_capacity(cols.len());
    for (i, col) in cols.iter().enumerate() {
        let obj = col.as_object().ok_or_else(|| parse_error(&format!("#{i}"), "column entry must be an object"))?;
        let name = obj
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| parse_error(&format!("#{i}"), "missing `name`"))?
            .to_string();
        for key in obj.keys() {
            if !matches!(key.as_str(), "name" | "kind" | "categories" | "bounds" | "structural_zeros") {
                return Err(parse_error(&name, format!("unknown field `{key}`")));
            }
        }
        let kind = obj.get("kind").and_then(Value::as_str).ok_or_else(|| parse_error(&name, "missing `kind`"))?;
        let zeros_raw = obj.get("structural_zeros").map(|z| {
            z.as_array().cloned().ok_or_else(|| parse_error(&name, "`structural_zeros` must be an array"))
        });
        let zeros_raw = match zeros_raw {
            Some(r) => r?,
            None => Vec::new(),
        };
        let spec = match kind {
            "categorical" => {
                if obj.contains_key("bounds") {
                    return Err(parse_error(&name, "categorical column cannot have `bounds`"));
                }
                let cats = obj
                    .get("categories")
                    .and_then(Value::as_array)
                    .ok_or_else(|| parse_error(&name, "categorical column needs `categories`"))?;
                let categories = cats
                    .iter()
                    .map(|c| match c {
                        Value::String(s) => Ok(s.clone()),
                        Value::Number(n) => Ok(n.to_string()),
                        Value::Bool(b) => Ok(b.to_string()),
                        other => Err(parse_error(&name, format!("unsupported category {other}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let zeros = zeros_raw
                    .iter()
                    .map(|z| match z {
                        Value::String(s) => Ok(StructuralZero::Category(s.clone())),
                        Value::Number(n) => Ok(StructuralZero::Category(n.to_string())),
                        other => Err(parse_error(&name, format!("bad structural zero {other}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                ColumnSpec { name, kind: ColumnKind::Categorical { categories }, structural_zeros: zeros }
            }
            "numerical" => {
                if obj.contains_key("categories") {
                    return Err(parse_error(&name, "numerical column cannot have `categories`"));
                }
                let bounds = match obj.get("bounds") {
                    None | Some(Value::Null) => None,
                    Some(Value::Array(b)) if b.len() == 2 => {
                        Some((as_real(&b[0], &name, "bound")?, as_real(&b[1], &name, "bound")?))
                    }
                    Some(other) => return Err(parse_error(&name, format!("`bounds` must be [lo, hi], got {other}"))),
                };
                let zeros = zeros_raw
                    .iter()
                    .map(|z| match z.as_array() {
                        Some(p) if p.len() == 2 => Ok(StructuralZero::Interval(
                            as_real(&p[0], &name, "interval end")?,
                            as_real(&p[1], &name, "interval end")?,
                        )),
                        _ => Err(parse_error(&name, format!("structural zero must be [a, b], got {z}"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                ColumnSpec { name, kind: ColumnKind::Numerical { bounds }, structural_zeros: zeros }
            }
            other => return Err(parse_error(&name, format!("unknown kind `{other}`"))),
        };
        specs.push(spec);
    }
    Domain::new(specs)
}

/// Post-discretization domain: column names and cardinalities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscreteDomain {
    names: Vec<String>,
    cardinalities: Vec<usize>,
}

impl DiscreteDomain {
    pub fn new(names: Vec<String>, cardinalities: Vec<usize>) -> Result<Self> {
        if names.len() != cardinalities.len() {
            return Err(Error::invalid("names and cardinalities differ in length"));
        }
        if let Some(i) = cardinalities.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("column `{}` has cardinality 0", names[i])));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::invalid(format!("duplicate column `{n}`")));
            }
        }
        Ok(Self { names, cardinalities })
    }

    /// Domain with generated column names `c0, c1, ...`.
    pub fn from_cardinalities(cards: &[usize]) -> Result<Self> {
        Self::new((0..cards.len()).map(|i| format!("c{i}")).collect(), cards.to_vec())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn cardinality(&self, col: usize) -> usize {
        self.cardinalities[col]
    }

    pub fn full_clique(&self) -> Clique {
        Clique((0..self.len()).collect())
    }
}

/// A sorted set of column indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Clique(Vec<usize>);

impl Clique {
    pub fn new(mut attrs: Vec<usize>) -> Self {
        attrs.sort_unstable();
        attrs.dedup();
        Clique(attrs)
    }

    pub fn empty() -> Self {
        Clique(Vec::new())
    }

    pub fn attrs(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, attr: usize) -> bool {
        self.0.binary_search(&attr).is_ok()
    }

    pub fn is_subset(&self, other: &Clique) -> bool {
        self.0.iter().all(|a| other.contains(*a))
    }

    pub fn union(&self, other: &Clique) -> Clique {
        Clique::new(self.0.iter().chain(&other.0).cloned().collect())
    }

    pub fn intersection(&self, other: &Clique) -> Clique {
        Clique(self.0.iter().filter(|a| other.contains(**a)).cloned().collect())
    }

    pub fn validate(&self, domain: &DiscreteDomain) -> Result<()> {
        match self.0.iter().find(|&&a| a >= domain.len()) {
            Some(a) => Err(Error::invalid(format!("clique attribute {a} outside a {}-column domain", domain.len()))),
            None => Ok(()),
        }
    }
}

impl std::fmt::Display for Clique {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

/// Number of cells of a clique: the product of member cardinalities.
pub fn clique_cells(domain: &DiscreteDomain, clique: &Clique) -> usize {
    clique.attrs().iter().map(|&a| domain.cardinality(a)).product()
}

/// Row-major strides of a clique (last attribute fastest).
pub fn clique_strides(domain: &DiscreteDomain, clique: &Clique) -> Vec<usize> {
    let mut strides = vec![1usize; clique.len()];
    for i in (0..clique.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * domain.cardinality(clique.attrs()[i + 1]);
    }
    strides
}

/// Flat cell index of `values` (one code per clique attribute).
pub fn flat_index(domain: &DiscreteDomain, clique: &Clique, values: &[usize]) -> usize {
    debug_assert_eq!(values.len(), clique.len());
    let mut idx = 0;
    for (&a, &v) in clique.attrs().iter().zip(values) {
        idx = idx * domain.cardinality(a) + v;
    }
    idx
}

/// Inverse of [`flat_index`].
pub fn unflatten(domain: &DiscreteDomain, clique: &Clique, mut index: usize) -> Vec<usize> {
    let mut out = vec![0; clique.len()];
    for (slot, &a) in out.iter_mut().zip(clique.attrs()).rev() {
        let card = domain.cardinality(a);
        *slot = index % card;
        index /= card;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub clique: Clique,
    pub counts: Vec<f64>,
}

impl Marginal {
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Sum-projection onto a sub-clique.
    pub fn project(&self, domain: &DiscreteDomain, sub: &Clique) -> Result<Marginal> {
        if !sub.is_subset(&self.clique) {
            return Err(Error::invalid(format!("{sub} is not a subset of {}", self.clique)));
        }
        let map = crate::pgm::factor::index_map(domain, &self.clique, sub);
        let mut counts = vec![0.0; clique_cells(domain, sub)];
        for (i, &c) in self.counts.iter().enumerate() {
            counts[map[i]] += c;
        }
        Ok(Marginal { clique: sub.clone(), counts })
    }
}

/// A noisy marginal with its noise scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub marginal: Marginal,
    pub sigma: f64,
    pub weight: f64,
}

impl Measurement {
    pub fn new(marginal: Marginal, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("measurement sigma must be positive, got {sigma}")));
        }
        Ok(Self { marginal, sigma, weight: 1.0 })
    }

    pub fn clique(&self) -> &Clique {
        &self.marginal.clique
    }
}

/// Integer-encoded table, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDataset {
    domain: DiscreteDomain,
    n_rows: usize,
    cells: Vec<u32>,
}

impl DiscreteDataset {
    pub fn new(domain: DiscreteDomain, cells: Vec<u32>) -> Result<Self> {
        let d = domain.len();
        if d == 0 || !cells.len().is_multiple_of(d) {
            return Err(Error::CorruptData(format!("{} cells do not fill rows of width {d}", cells.len())));
        }
        for (i, &v) in cells.iter().enumerate() {
            let col = i % d;
            if v as usize >= domain.cardinality(col) {
                return Err(Error::CorruptData(format!(
                    "row {} column `{}` holds code {v} outside [0, {})",
                    i / d,
                    domain.names()[col],
                    domain.cardinality(col)
                )));
            }
        }
        Ok(Self { n_rows: cells.len() / d, domain, cells })
    }

    pub fn from_rows(domain: DiscreteDomain, rows: &[Vec<u32>]) -> Result<Self> {
        let cells = rows.iter().flat_map(|r| r.iter().cloned()).collect();
        Self::new(domain, cells)
    }

    pub(crate) fn from_parts_unchecked(domain: DiscreteDomain, cells: Vec<u32>) -> Self {
        let n_rows = if domain.is_empty() { 0 } else { cells.len() / domain.len() };
        Self { domain, n_rows, cells }
    }

    pub fn empty(domain: DiscreteDomain) -> Self {
        Self { domain, n_rows: 0, cells: Vec::new() }
    }

    pub fn domain(&self) -> &DiscreteDomain {
        &self.domain
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let d = self.domain.len();
        &self.cells[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.cells.chunks(self.domain.len().max(1))
    }

    pub fn cells(&self) -> &[u32] {
        &self.cells
    }
}

/// Exact counts of `clique` over `data`.
pub fn marginal_counts(data: &DiscreteDataset, clique: &Clique, domain: &DiscreteDomain) -> Result<Marginal> {
    clique.validate(domain)?;
    if data.domain.len() != domain.len() {
        return Err(Error::CorruptData("dataset width differs from domain".into()));
    }
    let strides = clique_strides(domain, clique);
    let mut counts = vec![0.0; clique_cells(domain, clique)];
    for row in data.rows() {
        let mut idx = 0;
        for (k, &a) in clique.attrs().iter().enumerate() {
            let v = row[a] as usize;
            if v >= domain.cardinality(a) {
                return Err(Error::CorruptData(format!("code {v} out of range in column {a}")));
            }
            idx += v * strides[k];
        }
        counts[idx] += 1.0;
    }
    Ok(Marginal { clique: clique.clone(), counts })
}

/// Access to private discrete data. Every read of cell values must present
/// a [`Charge`] issued by the privacy ledger.
pub trait DataAccess: Sync {
    fn domain(&self) -> &DiscreteDomain;

    /// Number of records. This differs between neighbouring datasets, so
    /// releases must not depend on it; the selectors never call it.
    fn n_rows(&self) -> usize;

    fn marginal(&self, clique: &Clique, charge: &Charge) -> Result<Marginal>;
}

impl DataAccess for DiscreteDataset {
    fn domain(&self) -> &DiscreteDomain {
        &self.domain
    }

    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn marginal(&self, clique: &Clique, _charge: &Charge) -> Result<Marginal> {
        marginal_counts(self, clique, &self.domain)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn dom(cards: &[usize]) -> DiscreteDomain {
        DiscreteDomain::from_cardinalities(cards).unwrap()
    }

    #[test]
    fn counts_small_table() {
        let d = dom(&[2, 2]);
        let data = DiscreteDataset::from_rows(d.clone(), &[vec![0, 1], vec![1, 1], vec![0, 0]]).unwrap();
        let m = marginal_counts(&data, &Clique::new(vec![0, 1]), &d).unwrap();
        assert_eq!(m.counts, vec![1.0, 1.0, 0.0, 1.0]);
        let empty = DiscreteDataset::empty(d.clone());
        assert_eq!(marginal_counts(&empty, &Clique::new(vec![0, 1]), &d).unwrap().counts, vec![0.0; 4]);
    }

    #[test]
    fn out_of_range_codes_rejected() {
        let d = dom(&[2, 2]);
        assert!(matches!(
            DiscreteDataset::from_rows(d, &[vec![0, 2]]),
            Err(Error::CorruptData(_))
        ));
    }

    #[test]
    fn cells_of_cliques() {
        let d = dom(&[3, 4, 7]);
        assert_eq!(clique_cells(&d, &Clique::new(vec![0, 1])), 12);
        assert_eq!(clique_cells(&d, &Clique::new(vec![2])), 7);
        assert_eq!(clique_cells(&d, &Clique::empty()), 1);
    }

    #[test]
    fn flat_index_bijective() {
        let d = dom(&[3, 4, 2]);
        let c = Clique::new(vec![0, 1, 2]);
        let n = clique_cells(&d, &c);
        let mut distinct = std::collections::HashSet::new();
        for i in 0..n {
            let vals = unflatten(&d, &c, i);
            assert_eq!(flat_index(&d, &c, &vals), i);
            distinct.insert(vals);
        }
        assert_eq!(distinct.len(), n);
    }

    #[test]
    fn sub_clique_is_projection() {
        let d = dom(&[3, 2, 4]);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let rows: Vec<Vec<u32>> = (0..1000)
            .map(|_| vec![rng.gen_range(0..3), rng.gen_range(0..2), rng.gen_range(0..4)])
            .collect();
        let data = DiscreteDataset::from_rows(d.clone(), &rows).unwrap();
        let full = marginal_counts(&data, &d.full_clique(), &d).unwrap();
        assert_eq!(full.total(), 1000.0);
        for sub in [vec![0], vec![1], vec![2], vec![0, 2], vec![1, 2], vec![0, 1]] {
            let sub = Clique::new(sub);
            let direct = marginal_counts(&data, &sub, &d).unwrap();
            // brute-force recount straight from the rows
            let mut brute = vec![0.0; clique_cells(&d, &sub)];
            for r in &rows {
                let vals: Vec<usize> = sub.attrs().iter().map(|&a| r[a] as usize).collect();
                brute[flat_index(&d, &sub, &vals)] += 1.0;
            }
            assert_eq!(direct.counts, brute);
            assert_eq!(full.project(&d, &sub).unwrap().counts, brute);
        }
    }

    #[test]
    fn domain_documents() {
        let ok = load_domain(r#"{"columns":[{"name":"a","kind":"categorical","categories":["x","y"]}]}"#).unwrap();
        assert_eq!(ok.len(), 1);
        let inverted = load_domain(r#"{"columns":[{"name":"n","kind":"numerical","bounds":[3,1]}]}"#);
        assert!(matches!(inverted, Err(Error::Parse { ref column, .. }) if column == "n"));
        let outside = load_domain(
            r#"{"columns":[{"name":"n","kind":"numerical","bounds":[0,10],"structural_zeros":[[9,12]]}]}"#,
        );
        assert!(matches!(outside, Err(Error::Parse { .. })));
        let unknown = load_domain(r#"{"columns":[{"name":"n","kind":"text"}]}"#);
        assert!(matches!(unknown, Err(Error::Parse { .. })));
        let dup = load_domain(
            r#"{"columns":[{"name":"a","kind":"numerical"},{"name":"a","kind":"numerical"}]}"#,
        );
        assert!(matches!(dup, Err(Error::Parse { .. })));
        let roundtrip = load_domain(&ok.to_json().to_string()).unwrap();
        assert_eq!(roundtrip, ok);
    }
}
