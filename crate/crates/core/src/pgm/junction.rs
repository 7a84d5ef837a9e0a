//! Junction trees by min-fill triangulation.

use serde::{Deserialize, Serialize};

use crate::domain::{clique_cells, Clique, DiscreteDomain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub a: usize,
    pub b: usize,
    pub separator: Clique,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JunctionTree {
    nodes: Vec<Clique>,
    edges: Vec<TreeEdge>,
    elimination_order: Vec<usize>,
}

impl JunctionTree {
    pub fn nodes(&self) -> &[Clique] {
        &self.nodes
    }

    pub fn edges(&self) -> &[TreeEdge] {
        &self.edges
    }

    pub fn elimination_order(&self) -> &[usize] {
        &self.elimination_order
    }

    /// First node (by index) that contains `clique`.
    pub fn node_containing(&self, clique: &Clique) -> Option<usize> {
        self.nodes.iter().position(|n| clique.is_subset(n))
    }

    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|e| {
                if e.a == node {
                    Some(e.b)
                } else if e.b == node {
                    Some(e.a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Checks that the nodes containing each attribute form a connected
    /// subtree and that the edges form a spanning tree.
    pub fn has_running_intersection(&self, n_attrs: usize) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        if self.edges.len() + 1 != self.nodes.len() {
            return false;
        }
        for attr in 0..n_attrs {
            let members: Vec<usize> = (0..self.nodes.len()).filter(|&i| self.nodes[i].contains(attr)).collect();
            if members.len() <= 1 {
                continue;
            }
            let mut seen = vec![false; self.nodes.len()];
            let mut stack = vec![members[0]];
            seen[members[0]] = true;
            while let Some(v) = stack.pop() {
                for w in self.neighbors(v) {
                    if !seen[w] && self.nodes[w].contains(attr) {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            if members.iter().any(|&m| !seen[m]) {
                return false;
            }
        }
        // connectivity of the whole tree
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for w in self.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Tensor bytes of the model on this tree.
    pub fn size_bytes(&self, domain: &DiscreteDomain) -> u64 {
        8 * self.nodes.iter().map(|n| clique_cells(domain, n) as u64).sum::<u64>()
    }
}

/// Triangulates the graph induced by `cliques` (plus every domain column) with
/// a min-fill ordering, ties to the lowest column index, and connects the
/// maximal cliques by a maximum-weight spanning tree on separator sizes.
/// Components are joined through empty separators.
pub fn build_junction_tree(domain: &DiscreteDomain, cliques: &[Clique]) -> Result<JunctionTree> {
    let d = domain.len();
    for c in cliques {
        c.validate(domain)?;
    }
    let mut adj = vec![vec![false; d]; d];
    for c in cliques {
        for &a in c.attrs() {
            for &b in c.attrs() {
                if a != b {
                    adj[a][b] = true;
                }
            }
        }
    }
    let mut alive = vec![true; d];
    let mut order = Vec::with_capacity(d);
    let mut elim_cliques: Vec<Clique> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut best: Option<(usize, usize)> = None;
        for v in 0..d {
            if !alive[v] {
                continue;
            }
            let nb: Vec<usize> = (0..d).filter(|&u| alive[u] && adj[v][u]).collect();
            let mut fill = 0;
            for (i, &x) in nb.iter().enumerate() {
                for &y in &nb[i + 1..] {
                    if !adj[x][y] {
                        fill += 1;
                    }
                }
            }
            if best.is_none_or(|(_, f)| fill < f) {
                best = Some((v, fill));
            }
        }
        let (v, _) = best.expect("a live vertex remains");
        let nb: Vec<usize> = (0..d).filter(|&u| alive[u] && adj[v][u]).collect();
        for &x in &nb {
            for &y in &nb {
                if x != y {
                    adj[x][y] = true;
                }
            }
        }
        let mut members = nb;
        members.push(v);
        elim_cliques.push(Clique::new(members));
        alive[v] = false;
        order.push(v);
    }
    let mut nodes: Vec<Clique> = Vec::new();
    for (i, c) in elim_cliques.iter().enumerate() {
        let dominated = elim_cliques
            .iter()
            .enumerate()
            .any(|(j, o)| j != i && c.is_subset(o) && (c.len() < o.len() || j < i));
        if !dominated {
            nodes.push(c.clone());
        }
    }
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            candidates.push((nodes[i].intersection(&nodes[j]).len(), i, j));
        }
    }
    candidates.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut parent: Vec<usize> = (0..nodes.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut edges = Vec::new();
    for (_, i, j) in candidates {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            edges.push(TreeEdge { a: i, b: j, separator: nodes[i].intersection(&nodes[j]) });
        }
    }
    let tree = JunctionTree { nodes, edges, elimination_order: order };
    if !tree.has_running_intersection(d) {
        return Err(Error::Consistency("junction tree violates running intersection".into()));
    }
    if let Some(c) = cliques.iter().find(|c| tree.node_containing(c).is_none()) {
        return Err(Error::Consistency(format!("clique {c} not covered by the junction tree")));
    }
    Ok(tree)
}

/// Bytes of potentials for the junction tree over `cliques`.
pub fn estimate_model_size(domain: &DiscreteDomain, cliques: &[Clique]) -> Result<u64> {
    Ok(build_junction_tree(domain, cliques)?.size_bytes(domain))
}
