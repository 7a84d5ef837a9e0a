//! Dense tables over cliques and the index maps that relate them.

use crate::domain::{clique_cells, clique_strides, Clique, DiscreteDomain};

/// For every cell of `big`, the flat index of its restriction to `sub`.
///
/// `sub` must be a subset of `big`.
pub fn index_map(domain: &DiscreteDomain, big: &Clique, sub: &Clique) -> Vec<usize> {
    debug_assert!(sub.is_subset(big), "{sub} not within {big}");
    let sub_strides = clique_strides(domain, sub);
    let contrib: Vec<usize> = big
        .attrs()
        .iter()
        .map(|a| sub.attrs().binary_search(a).map_or(0, |k| sub_strides[k]))
        .collect();
    let cards: Vec<usize> = big.attrs().iter().map(|&a| domain.cardinality(a)).collect();
    let n = clique_cells(domain, big);
    let mut out = Vec::with_capacity(n);
    let mut digits = vec![0usize; cards.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        out.push(cur);
        for k in (0..cards.len()).rev() {
            digits[k] += 1;
            cur += contrib[k];
            if digits[k] < cards[k] {
                break;
            }
            cur -= contrib[k] * cards[k];
            digits[k] = 0;
        }
    }
    out
}

/// log(sum(exp(x))) with max shift; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Grouped log-sum-exp: `out[map[i]] = logsumexp over i of x[i]`.
pub fn logsumexp_grouped(x: &[f64], map: &[usize], groups: usize) -> Vec<f64> {
    let mut max = vec![f64::NEG_INFINITY; groups];
    for (v, &g) in x.iter().zip(map) {
        if *v > max[g] {
            max[g] = *v;
        }
    }
    let mut sum = vec![0.0; groups];
    for (v, &g) in x.iter().zip(map) {
        if max[g] > f64::NEG_INFINITY {
            sum[g] += (v - max[g]).exp();
        }
    }
    max.iter().zip(&sum).map(|(m, s)| if *m == f64::NEG_INFINITY { *m } else { m + s.ln() }).collect()
}

/// Tangent of [`logsumexp_grouped`]: given `out`, returns
/// `sum over i in group of softmax weight · dx[i]`.
pub fn logsumexp_grouped_tangent(x: &[f64], dx: &[f64], out: &[f64], map: &[usize]) -> Vec<f64> {
    let mut d = vec![0.0; out.len()];
    for ((v, dv), &g) in x.iter().zip(dx).zip(map) {
        if out[g] > f64::NEG_INFINITY && *v > f64::NEG_INFINITY {
            d[g] += (v - out[g]).exp() * dv;
        }
    }
    d
}

/// A dense non-negative table over a clique (linear space).
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub clique: Clique,
    pub values: Vec<f64>,
}

impl Factor {
    pub fn ones(domain: &DiscreteDomain, clique: Clique) -> Self {
        let n = clique_cells(domain, &clique);
        Self { clique, values: vec![1.0; n] }
    }

    /// Pointwise product over the union of both cliques.
    pub fn mul(&self, other: &Factor, domain: &DiscreteDomain) -> Factor {
        let union = self.clique.union(&other.clique);
        let ma = index_map(domain, &union, &self.clique);
        let mb = index_map(domain, &union, &other.clique);
        let values = ma.iter().zip(&mb).map(|(&i, &j)| self.values[i] * other.values[j]).collect();
        Factor { clique: union, values }
    }

    /// Sums out everything not in `keep` (intersected with the factor's scope).
    pub fn sum_to(&self, domain: &DiscreteDomain, keep: &Clique) -> Factor {
        let target = self.clique.intersection(keep);
        let map = index_map(domain, &self.clique, &target);
        let mut values = vec![0.0; clique_cells(domain, &target)];
        for (v, &i) in self.values.iter().zip(&map) {
            values[i] += v;
        }
        Factor { clique: target, values }
    }

    /// Divides by a factor over a sub-clique, with 0/0 = 0.
    pub fn div_sub(&self, domain: &DiscreteDomain, sub: &Factor) -> Factor {
        let map = index_map(domain, &self.clique, &sub.clique);
        let values = self
            .values
            .iter()
            .zip(&map)
            .map(|(v, &i)| if sub.values[i] == 0.0 { 0.0 } else { v / sub.values[i] })
            .collect();
        Factor { clique: self.clique.clone(), values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_map_matches_unflatten() {
        let d = DiscreteDomain::from_cardinalities(&[2, 3, 4]).unwrap();
        let big = Clique::new(vec![0, 1, 2]);
        let sub = Clique::new(vec![0, 2]);
        let map = index_map(&d, &big, &sub);
        for (i, &m) in map.iter().enumerate() {
            let v = crate::domain::unflatten(&d, &big, i);
            assert_eq!(m, crate::domain::flat_index(&d, &sub, &[v[0], v[2]]));
        }
        assert!(index_map(&d, &big, &Clique::empty()).iter().all(|&m| m == 0));
    }

    #[test]
    fn logsumexp_handles_neg_inf() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((logsumexp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        let g = logsumexp_grouped(&[0.0, f64::NEG_INFINITY, 1000.0, 1000.0], &[0, 1, 0, 0], 2);
        assert!((g[0] - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(g[1], f64::NEG_INFINITY);
    }
}
