//! Log-linear model on a junction tree: exact inference and sampling.

use rand::Rng;

use super::factor::{index_map, logsumexp, logsumexp_grouped, logsumexp_grouped_tangent, Factor};
use super::junction::JunctionTree;
use crate::domain::{clique_cells, clique_strides, unflatten, Clique, DiscreteDataset, DiscreteDomain, Marginal};
use crate::error::{Error, Result};

// Rooted view of the tree: BFS order from node 0, each non-root node's
// separator with its parent, and the cell maps into that separator from
// both sides.
#[derive(Debug, Clone)]
struct TreePlan {
    order: Vec<usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    separator: Vec<Clique>,
    sep_cells: Vec<usize>,
    child_map: Vec<Vec<usize>>,
    parent_map: Vec<Vec<usize>>,
}

impl TreePlan {
    fn new(domain: &DiscreteDomain, tree: &JunctionTree) -> Self {
        let n = tree.nodes().len();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        if n > 0 {
            seen[0] = true;
            order.push(0);
        }
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nb = tree.neighbors(v);
            nb.sort_unstable();
            for w in nb {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some(v);
                    children[v].push(w);
                    order.push(w);
                }
            }
        }
        let mut separator = vec![Clique::empty(); n];
        let mut sep_cells = vec![1; n];
        let mut child_map = vec![Vec::new(); n];
        let mut parent_map = vec![Vec::new(); n];
        for i in 0..n {
            if let Some(p) = parent[i] {
                let s = tree.nodes()[i].intersection(&tree.nodes()[p]);
                sep_cells[i] = clique_cells(domain, &s);
                child_map[i] = index_map(domain, &tree.nodes()[i], &s);
                parent_map[i] = index_map(domain, &tree.nodes()[p], &s);
                separator[i] = s;
            }
        }
        Self { order, parent, children, separator, sep_cells, child_map, parent_map }
    }
}

/// Calibrated log-beliefs, optionally with their tangents.
pub(crate) struct Beliefs {
    pub log_beliefs: Vec<Vec<f64>>,
    pub log_z: f64,
    pub tangents: Option<Vec<Vec<f64>>>,
}

impl Beliefs {
    /// Normalized node distributions.
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.log_beliefs
            .iter()
            .map(|b| {
                let z = logsumexp(b);
                b.iter().map(|v| if z == f64::NEG_INFINITY { 0.0 } else { (v - z).exp() }).collect()
            })
            .collect()
    }

    /// Tangents of the normalized node distributions.
    pub fn probability_tangents(&self, probs: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
        let tangents = self.tangents.as_ref()?;
        Some(
            probs
                .iter()
                .zip(tangents)
                .map(|(p, db)| {
                    let dz: f64 = p.iter().zip(db).filter(|(pv, _)| **pv > 0.0).map(|(pv, d)| pv * d).sum();
                    p.iter().zip(db).map(|(pv, d)| if *pv > 0.0 { pv * (d - dz) } else { 0.0 }).collect()
                })
                .collect(),
        )
    }
}

/// Per-column sets of allowed codes; `None` leaves a column free.
pub type Evidence = Vec<Option<Vec<bool>>>;

#[derive(Debug, Clone)]
pub struct PGModel {
    domain: DiscreteDomain,
    tree: JunctionTree,
    potentials: Vec<Vec<f64>>,
    total_records: f64,
    plan: TreePlan,
}

impl PGModel {
    pub fn new(domain: DiscreteDomain, tree: JunctionTree, potentials: Vec<Vec<f64>>, total_records: f64) -> Result<Self> {
        if potentials.len() != tree.nodes().len() {
            return Err(Error::Consistency(format!(
                "{} potential tables for {} tree nodes",
                potentials.len(),
                tree.nodes().len()
            )));
        }
        for (node, pot) in tree.nodes().iter().zip(&potentials) {
            node.validate(&domain)?;
            if pot.len() != clique_cells(&domain, node) {
                return Err(Error::Consistency(format!("potential for {node} has {} cells", pot.len())));
            }
            if pot.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(Error::Consistency(format!("potential for {node} holds NaN or +inf")));
            }
        }
        if !(total_records > 0.0) || !total_records.is_finite() {
            return Err(Error::Consistency(format!("total_records must be positive, got {total_records}")));
        }
        let plan = TreePlan::new(&domain, &tree);
        Ok(Self { domain, tree, potentials, total_records, plan })
    }

    /// All-zero log-potentials (the uniform distribution).
    pub fn uniform(domain: DiscreteDomain, tree: JunctionTree, total_records: f64) -> Result<Self> {
        let potentials = tree.nodes().iter().map(|n| vec![0.0; clique_cells(&domain, n)]).collect();
        Self::new(domain, tree, potentials, total_records)
    }

    pub fn domain(&self) -> &DiscreteDomain {
        &self.domain
    }

    pub fn tree(&self) -> &JunctionTree {
        &self.tree
    }

    pub fn potentials(&self) -> &[Vec<f64>] {
        &self.potentials
    }

    pub fn total_records(&self) -> f64 {
        self.total_records
    }

    pub(crate) fn set_potentials(&mut self, potentials: Vec<Vec<f64>>) {
        debug_assert_eq!(potentials.len(), self.potentials.len());
        self.potentials = potentials;
    }

    pub fn size_bytes(&self) -> u64 {
        self.tree.size_bytes(&self.domain)
    }

    /// Two-pass log-space message passing over `pot` (same shapes as the
    /// model's potentials), carrying tangents `dpot` through when given.
    pub(crate) fn calibrate(&self, pot: &[Vec<f64>], dpot: Option<&[Vec<f64>]>) -> Beliefs {
        let plan = &self.plan;
        let n = pot.len();
        let mut up: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut dup: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut down: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut ddown: Vec<Vec<f64>> = vec![Vec::new(); n];
        let tangent = dpot.is_some();

        let gather = |node: usize, exclude: Option<usize>, up: &[Vec<f64>], dup: &[Vec<f64>], down: &[Vec<f64>], ddown: &[Vec<f64>], with_down: bool| {
            let mut x = pot[node].clone();
            let mut dx = dpot.map(|d| d[node].clone());
            if with_down && plan.parent[node].is_some() {
                for (k, v) in x.iter_mut().enumerate() {
                    *v += down[node][plan.child_map[node][k]];
                }
                if let Some(dx) = dx.as_mut() {
                    for (k, v) in dx.iter_mut().enumerate() {
                        *v += ddown[node][plan.child_map[node][k]];
                    }
                }
            }
            for &c in &plan.children[node] {
                if Some(c) == exclude {
                    continue;
                }
                let map = &plan.parent_map[c];
                for (k, v) in x.iter_mut().enumerate() {
                    *v += up[c][map[k]];
                }
                if let Some(dx) = dx.as_mut() {
                    for (k, v) in dx.iter_mut().enumerate() {
                        *v += dup[c][map[k]];
                    }
                }
            }
            (x, dx)
        };

        for &i in plan.order.iter().rev() {
            if plan.parent[i].is_none() {
                continue;
            }
            let (x, dx) = gather(i, None, &up, &dup, &down, &ddown, false);
            let m = logsumexp_grouped(&x, &plan.child_map[i], plan.sep_cells[i]);
            if let Some(dx) = dx {
                dup[i] = logsumexp_grouped_tangent(&x, &dx, &m, &plan.child_map[i]);
            }
            up[i] = m;
        }
        for &i in &plan.order {
            let Some(p) = plan.parent[i] else { continue };
            let (x, dx) = gather(p, Some(i), &up, &dup, &down, &ddown, true);
            let m = logsumexp_grouped(&x, &plan.parent_map[i], plan.sep_cells[i]);
            if let Some(dx) = dx {
                ddown[i] = logsumexp_grouped_tangent(&x, &dx, &m, &plan.parent_map[i]);
            }
            down[i] = m;
        }
        let mut log_beliefs = Vec::with_capacity(n);
        let mut tangents = if tangent { Some(Vec::with_capacity(n)) } else { None };
        for i in 0..n {
            let (x, dx) = gather(i, None, &up, &dup, &down, &ddown, true);
            log_beliefs.push(x);
            if let (Some(t), Some(dx)) = (tangents.as_mut(), dx) {
                t.push(dx);
            }
        }
        let log_z = if n == 0 { 0.0 } else { logsumexp(&log_beliefs[0]) };
        Beliefs { log_beliefs, log_z, tangents }
    }

    /// Normalized distribution of every tree node.
    pub fn node_distributions(&self) -> Vec<Vec<f64>> {
        self.calibrate(&self.potentials, None).probabilities()
    }

    /// Exact marginal of a clique contained in one tree node, scaled to
    /// `total_records`.
    pub fn marginal(&self, clique: &Clique) -> Result<Marginal> {
        clique.validate(&self.domain)?;
        let node = self
            .tree
            .node_containing(clique)
            .ok_or_else(|| Error::UnsupportedQuery(format!("{clique} is not contained in any tree node")))?;
        let probs = self.node_distributions();
        Ok(self.marginal_from(&probs, node, clique))
    }

    pub(crate) fn marginal_from(&self, probs: &[Vec<f64>], node: usize, clique: &Clique) -> Marginal {
        let map = index_map(&self.domain, &self.tree.nodes()[node], clique);
        let mut counts = vec![0.0; clique_cells(&self.domain, clique)];
        for (p, &k) in probs[node].iter().zip(&map) {
            counts[k] += p;
        }
        for c in counts.iter_mut() {
            *c *= self.total_records;
        }
        Marginal { clique: clique.clone(), counts }
    }

    /// Marginal of any clique, by variable elimination over the smallest
    /// subtree whose nodes cover it.
    pub fn project(&self, clique: &Clique) -> Result<Marginal> {
        let probs = self.node_distributions();
        self.project_from(&probs, clique)
    }

    pub(crate) fn project_from(&self, probs: &[Vec<f64>], clique: &Clique) -> Result<Marginal> {
        clique.validate(&self.domain)?;
        if let Some(node) = self.tree.node_containing(clique) {
            return Ok(self.marginal_from(probs, node, clique));
        }
        let nodes = self.tree.nodes();
        let n = nodes.len();
        let mut wanted = vec![false; n];
        for &a in clique.attrs() {
            let node = nodes.iter().position(|c| c.contains(a)).expect("every column lies in some node");
            wanted[node] = true;
        }
        // Steiner subtree: prune leaves of the rooted tree that are not wanted.
        let plan = &self.plan;
        let root = (0..n).find(|&i| wanted[i]).expect("clique is non-empty");
        let mut keep = vec![false; n];
        for &i in plan.order.iter().rev() {
            if wanted[i] || plan.children[i].iter().any(|&c| keep[c]) {
                keep[i] = true;
            }
        }
        // Re-root at `root`: walk from root, keeping kept nodes, eliminating
        // bottom-up. Adjacency restricted to kept nodes.
        let mut order = vec![root];
        let mut parent = vec![None; n];
        let mut visited = vec![false; n];
        visited[root] = true;
        let mut head = 0;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nb = self.tree.neighbors(v);
            nb.sort_unstable();
            for w in nb {
                if keep[w] && !visited[w] {
                    visited[w] = true;
                    parent[w] = Some(v);
                    order.push(w);
                }
            }
        }
        let factor_of = |i: usize| Factor { clique: nodes[i].clone(), values: probs[i].clone() };
        let mut messages: Vec<Option<Factor>> = vec![None; n];
        for &i in order.iter().rev() {
            let mut f = factor_of(i);
            if let Some(p) = parent[i] {
                let sep = nodes[i].intersection(&nodes[p]);
                let sep_dist = f.sum_to(&self.domain, &sep);
                f = f.div_sub(&self.domain, &sep_dist);
            }
            for &c in order.iter().filter(|&&c| parent[c] == Some(i)) {
                if let Some(m) = messages[c].take() {
                    f = f.mul(&m, &self.domain);
                }
            }
            let keep_vars = match parent[i] {
                Some(p) => clique.union(&nodes[i].intersection(&nodes[p])),
                None => clique.clone(),
            };
            messages[i] = Some(f.sum_to(&self.domain, &keep_vars));
        }
        let result = messages[root].take().expect("root message");
        debug_assert_eq!(&result.clique, clique);
        Ok(Marginal {
            clique: clique.clone(),
            counts: result.values.iter().map(|v| v * self.total_records).collect(),
        })
    }

    /// Sets the potentials of structural-zero cells to `-inf` in every node
    /// that holds the column. `zeros[col]` lists that column's zero codes.
    pub fn apply_structural_zeros(&mut self, zeros: &[Vec<usize>]) -> Result<()> {
        let masked = masked_potentials(&self.domain, &self.tree, &self.potentials, zeros)?;
        self.potentials = masked;
        Ok(())
    }

    /// Draws `n` rows by forward sampling through the tree, after clamping the
    /// potentials to the evidence.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, evidence: &Evidence, rng: &mut R) -> Result<DiscreteDataset> {
        let d = self.domain.len();
        if evidence.len() != d {
            return Err(Error::invalid(format!("evidence covers {} of {d} columns", evidence.len())));
        }
        let mut pot = self.potentials.clone();
        for (col, allowed) in evidence.iter().enumerate() {
            let Some(allowed) = allowed else { continue };
            if allowed.len() != self.domain.cardinality(col) {
                return Err(Error::invalid(format!("evidence for column {col} has the wrong length")));
            }
            if !allowed.iter().any(|&a| a) {
                return Err(Error::InfeasibleCondition(format!(
                    "no value of `{}` satisfies the condition",
                    self.domain.names()[col]
                )));
            }
            let node = self.tree.node_containing(&Clique::new(vec![col])).expect("column is in the tree");
            let c = &self.tree.nodes()[node];
            let k = c.attrs().iter().position(|&a| a == col).expect("member");
            let stride = clique_strides(&self.domain, c)[k];
            let card = self.domain.cardinality(col);
            for (cell, v) in pot[node].iter_mut().enumerate() {
                if !allowed[(cell / stride) % card] {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        let beliefs = self.calibrate(&pot, None);
        if beliefs.log_z == f64::NEG_INFINITY || beliefs.log_z.is_nan() {
            return Err(Error::InfeasibleCondition("the conditions have zero probability under the model".into()));
        }
        let plan = &self.plan;
        let nodes = self.tree.nodes();
        let mut cells = vec![0u32; n * d];
        for &i in &plan.order {
            let node = &nodes[i];
            let b = &beliefs.log_beliefs[i];
            let groups = plan.sep_cells[i];
            let map: Vec<usize> = if plan.parent[i].is_some() { plan.child_map[i].clone() } else { vec![0; b.len()] };
            // Per separator value: node cells and cumulative weights.
            let mut max = vec![f64::NEG_INFINITY; groups];
            for (v, &g) in b.iter().zip(&map) {
                max[g] = max[g].max(*v);
            }
            let mut table: Vec<(Vec<usize>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); groups];
            for (cell, (v, &g)) in b.iter().zip(&map).enumerate() {
                if *v == f64::NEG_INFINITY {
                    continue;
                }
                let w = (v - max[g]).exp();
                let (ids, cum) = &mut table[g];
                let prev = cum.last().copied().unwrap_or(0.0);
                ids.push(cell);
                cum.push(prev + w);
            }
            let sep = &plan.separator[i];
            let sep_strides = clique_strides(&self.domain, sep);
            let fresh: Vec<(usize, usize)> =
                node.attrs().iter().enumerate().filter(|(_, a)| !sep.contains(**a)).map(|(k, a)| (k, *a)).collect();
            for r in 0..n {
                let row = &mut cells[r * d..(r + 1) * d];
                let g: usize = sep.attrs().iter().zip(&sep_strides).map(|(&a, &s)| row[a] as usize * s).sum();
                let (ids, cum) = &table[g];
                let total = match cum.last() {
                    Some(t) if *t > 0.0 => *t,
                    _ => return Err(Error::Consistency(format!("no mass for separator value {g} at node {node}"))),
                };
                let u = rng.gen::<f64>() * total;
                let pick = cum.partition_point(|&c| c <= u).min(ids.len() - 1);
                let vals = unflatten(&self.domain, node, ids[pick]);
                for &(k, a) in &fresh {
                    row[a] = vals[k] as u32;
                }
            }
        }
        Ok(DiscreteDataset::from_parts_unchecked(self.domain.clone(), cells))
    }
}

/// Copies `pot` with structural-zero cells set to `-inf`.
pub(crate) fn masked_potentials(
    domain: &DiscreteDomain,
    tree: &JunctionTree,
    pot: &[Vec<f64>],
    zeros: &[Vec<usize>],
) -> Result<Vec<Vec<f64>>> {
    if zeros.len() != domain.len() {
        return Err(Error::invalid("structural zeros must list every column"));
    }
    for (col, z) in zeros.iter().enumerate() {
        let card = domain.cardinality(col);
        if let Some(bad) = z.iter().find(|&&c| c >= card) {
            return Err(Error::invalid(format!("structural zero code {bad} out of range for column {col}")));
        }
        let mut hit = vec![false; card];
        for &c in z {
            hit[c] = true;
        }
        if hit.iter().all(|&h| h) {
            return Err(Error::InvalidConfiguration(format!(
                "every value of column `{}` is a structural zero",
                domain.names()[col]
            )));
        }
    }
    let mut out = pot.to_vec();
    for (node, p) in tree.nodes().iter().zip(out.iter_mut()) {
        let strides = clique_strides(domain, node);
        for (k, &a) in node.attrs().iter().enumerate() {
            if zeros[a].is_empty() {
                continue;
            }
            let card = domain.cardinality(a);
            for (cell, v) in p.iter_mut().enumerate() {
                if zeros[a].contains(&((cell / strides[k]) % card)) {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
    }
    Ok(out)
}
