//! Independent reference computations the library is checked against.

use std::collections::HashMap;

use dpsynth::domain::{clique_cells, marginal_counts, unflatten, Clique, DiscreteDataset, DiscreteDomain, Marginal};
use dpsynth::pgm::{build_junction_tree, PGModel};
use dpsynth::rng::seeded;
use rand::Rng;

/// Kruskal maximum spanning tree on a dense symmetric matrix.
pub fn kruskal(scores: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let d = scores.len();
    let mut pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| scores[b.0][b.1].total_cmp(&scores[a.0][a.1]));
    let mut parent: Vec<usize> = (0..d).collect();
    fn root(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            x = p[x];
        }
        x
    }
    let mut out = Vec::new();
    for (i, j) in pairs {
        let (a, b) = (root(&mut parent, i), root(&mut parent, j));
        if a != b {
            parent[a] = b;
            out.push((i, j));
        }
    }
    out
}

pub fn random_symmetric(d: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let upper: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if j > i { rng.gen() } else { 0.0 }).collect()).collect();
    (0..d).map(|i| (0..d).map(|j| if j > i { upper[i][j] } else { upper[j][i] }).collect()).collect()
}

/// Mutual information in bits straight from rows, by hash counting.
pub fn mi_from_rows(rows: &[Vec<u32>], x: usize, parents: &[usize]) -> f64 {
    if parents.is_empty() {
        return 0.0;
    }
    let n = rows.len() as f64;
    let mut joint: HashMap<(u32, Vec<u32>), f64> = HashMap::new();
    let mut px: HashMap<u32, f64> = HashMap::new();
    let mut pp: HashMap<Vec<u32>, f64> = HashMap::new();
    for r in rows {
        let key: Vec<u32> = parents.iter().map(|&p| r[p]).collect();
        *joint.entry((r[x], key.clone())).or_default() += 1.0;
        *px.entry(r[x]).or_default() += 1.0;
        *pp.entry(key).or_default() += 1.0;
    }
    joint.iter().map(|((a, k), c)| (c / n) * ((c * n) / (px[a] * pp[k])).log2()).sum()
}

/// Rows where each column copies an earlier one with growing probability.
pub fn correlated_rows(cards: &[usize], n: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let mut row: Vec<u32> = Vec::with_capacity(cards.len());
            for (j, &c) in cards.iter().enumerate() {
                let v = if j > 0 && rng.gen_bool(0.3 + 0.1 * j as f64) {
                    row[rng.gen_range(0..j)] % c as u32
                } else {
                    rng.gen_range(0..c as u32)
                };
                row.push(v);
            }
            row
        })
        .collect()
}

/// Every subset of `items` with at most `k` elements.
pub fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &it in items {
        let extra: Vec<Vec<usize>> =
            out.iter().filter(|s| s.len() < k).map(|s| s.iter().copied().chain([it]).collect()).collect();
        out.extend(extra);
    }
    out
}

/// Checks a PrivBayes network against the exhaustive MI argmax at each
/// step. Returns the first step that picked a worse pair.
pub fn privbayes_network_error(rows: &[Vec<u32>], network: &[(usize, Vec<usize>)], k: usize) -> Option<String> {
    let d = rows[0].len();
    let mut chosen = vec![network[0].0];
    for (step, (x, parents)) in network[1..].iter().enumerate() {
        let mut best = 0.0_f64;
        for cand in (0..d).filter(|c| !chosen.contains(c)) {
            for p in subsets(&chosen, k) {
                best = best.max(mi_from_rows(rows, cand, &p));
            }
        }
        let got = mi_from_rows(rows, *x, parents);
        if (got - best).abs() >= 1e-9 || parents.len() > k || !parents.iter().all(|p| chosen.contains(p)) {
            return Some(format!("step {step}: picked MI {got}, best {best}"));
        }
        chosen.push(*x);
    }
    None
}

pub fn random_model(cards: &[usize], cliques: &[Clique], seed: u64) -> PGModel {
    let domain = DiscreteDomain::from_cardinalities(cards).unwrap();
    let tree = build_junction_tree(&domain, cliques).unwrap();
    let mut rng = seeded(seed);
    let pots = tree.nodes().iter().map(|n| (0..clique_cells(&domain, n)).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    PGModel::new(domain, tree, pots, 1.0).unwrap()
}

/// Normalized joint over the full domain by enumerating every cell.
pub fn brute_joint(model: &PGModel) -> Vec<f64> {
    let domain = model.domain();
    let full = domain.full_clique();
    let cells = clique_cells(domain, &full);
    let mut logp = vec![0.0; cells];
    for (x, lp) in logp.iter_mut().enumerate() {
        let values = unflatten(domain, &full, x);
        for (node, pot) in model.tree().nodes().iter().zip(model.potentials()) {
            let mut idx = 0;
            for &a in node.attrs() {
                idx = idx * domain.cardinality(a) + values[a];
            }
            *lp += pot[idx];
        }
    }
    let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logp.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

pub fn brute_marginal(model: &PGModel, joint: &[f64], clique: &Clique) -> Vec<f64> {
    let domain = model.domain();
    let full = domain.full_clique();
    let mut out = vec![0.0; clique_cells(domain, clique)];
    for (x, p) in joint.iter().enumerate() {
        let values = unflatten(domain, &full, x);
        let mut idx = 0;
        for &a in clique.attrs() {
            idx = idx * domain.cardinality(a) + values[a];
        }
        out[idx] += p;
    }
    out
}

/// All cliques of one to three attributes.
pub fn all_small_cliques(d: usize) -> Vec<Clique> {
    let mut out = Vec::new();
    for i in 0..d {
        out.push(Clique::new(vec![i]));
        for j in i + 1..d {
            out.push(Clique::new(vec![i, j]));
            for k in j + 1..d {
                out.push(Clique::new(vec![i, j, k]));
            }
        }
    }
    out
}

/// Junction-tree models with random potentials, each small enough to
/// enumerate.
pub fn enumerable_cases() -> Vec<(Vec<usize>, Vec<Clique>)> {
    vec![
        (vec![2, 3, 4], vec![Clique::new(vec![0, 1]), Clique::new(vec![1, 2])]),
        (vec![3, 2, 4, 3], vec![Clique::new(vec![0, 1]), Clique::new(vec![1, 2]), Clique::new(vec![2, 3]), Clique::new(vec![0, 3])]),
        (vec![2, 3, 2, 4, 3, 2], vec![Clique::new(vec![0, 1, 2]), Clique::new(vec![2, 3]), Clique::new(vec![4]), Clique::new(vec![3, 5])]),
        (vec![4, 4, 4, 4, 4, 4], vec![Clique::new(vec![0, 1]), Clique::new(vec![2, 3]), Clique::new(vec![4, 5]), Clique::new(vec![1, 2]), Clique::new(vec![3, 4])]),
    ]
}

/// Largest gap between `project` and brute-force enumeration over every
/// case and every clique of up to three attributes.
pub fn worst_projection_gap() -> f64 {
    let mut worst = 0.0_f64;
    for (case, (cards, cliques)) in enumerable_cases().into_iter().enumerate() {
        let model = random_model(&cards, &cliques, case as u64);
        let joint = brute_joint(&model);
        for c in all_small_cliques(cards.len()) {
            let got = model.project(&c).unwrap();
            for (g, w) in got.counts.iter().zip(brute_marginal(&model, &joint, &c)) {
                worst = worst.max((g - w).abs());
            }
        }
    }
    worst
}

pub fn exact(data: &DiscreteDataset, c: &Clique) -> Marginal {
    marginal_counts(data, c, data.domain()).unwrap()
}

pub fn random_data(cards: &[usize], n: usize, seed: u64) -> DiscreteDataset {
    let mut rng = seeded(seed);
    let rows: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            let a = rng.gen_range(0..cards[0] as u32);
            cards
                .iter()
                .enumerate()
                .map(|(j, &c)| if j > 0 && rng.gen_bool(0.6) { a % c as u32 } else { rng.gen_range(0..c as u32) })
                .collect()
        })
        .collect();
    DiscreteDataset::from_rows(DiscreteDomain::from_cardinalities(cards).unwrap(), &rows).unwrap()
}

/// Product of the 1-way marginals of `data` over all its columns, as a
/// distribution in row-major order.
pub fn product_of_one_ways(data: &DiscreteDataset) -> Marginal {
    let domain = data.domain();
    let d = domain.len();
    let n = data.n_rows() as f64;
    let ones: Vec<Marginal> = (0..d).map(|i| exact(data, &Clique::new(vec![i]))).collect();
    let full = domain.full_clique();
    let counts = (0..clique_cells(domain, &full))
        .map(|x| unflatten(domain, &full, x).iter().enumerate().map(|(i, &v)| ones[i].counts[v] / n).product::<f64>() * n)
        .collect();
    Marginal { clique: full, counts }
}
