mod common;

use common::oracles::{correlated_rows, kruskal, privbayes_network_error, random_symmetric};

use dpsynth::domain::{Clique, DiscreteDataset, DiscreteDomain};
use dpsynth::privacy::PrivacyLedger;
use dpsynth::rng::seeded;
use dpsynth::select::hooks::{aim_run_noiseless, mst_select_noiseless, privbayes_select_noiseless, spanning_edges_noiseless};
use dpsynth::select::{default_workload, mutual_information_table, Provenance};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn spanning_edges_match_kruskal_on_random_matrices() {
    let mut rng = seeded(2024);
    for trial in 0..50 {
        let d = rng.gen_range(2..10);
        let m = random_symmetric(d, &mut rng);
        let mut got = spanning_edges_noiseless(&m).unwrap();
        let mut want = kruskal(&m);
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want, "trial {trial}");
    }
}

#[test]
fn privbayes_parents_maximize_mutual_information() {
    for (case, cards) in [vec![2, 3, 2], vec![3, 2, 4, 2], vec![2, 2, 3, 3, 2]].into_iter().enumerate() {
        for k in [1, 2] {
            let rows = correlated_rows(&cards, 800, case as u64);
            let domain = DiscreteDomain::from_cardinalities(&cards).unwrap();
            let data = DiscreteDataset::from_rows(domain, &rows).unwrap();
            let mut ledger = PrivacyLedger::new(1e6).unwrap();
            let plan = privbayes_select_noiseless(&data, &mut ledger, k, u64::MAX, &mut seeded(7)).unwrap();
            let Provenance::PrivBayes { network, .. } = plan.provenance else { panic!("wrong provenance") };
            assert_eq!(network.len(), cards.len());
            assert_eq!(privbayes_network_error(&rows, &network, k), None, "case {case} k {k}");
        }
    }
}

#[test]
fn aim_with_minimal_budget_measures_only_one_ways() {
    let cards = [3, 4, 2, 5];
    let rows = correlated_rows(&cards, 1000, 1);
    let domain = DiscreteDomain::from_cardinalities(&cards).unwrap();
    let data = DiscreteDataset::from_rows(domain.clone(), &rows).unwrap();
    let mut ledger = PrivacyLedger::new(1e-8).unwrap();
    let plan = aim_run_noiseless(&data, &mut ledger, &default_workload(&domain), u64::MAX, &mut seeded(1)).unwrap();
    let ones: Vec<Clique> = (0..cards.len()).map(|i| Clique::new(vec![i])).collect();
    assert_eq!(plan.cliques(), ones);
    let Provenance::Aim { rounds } = plan.provenance else { panic!("wrong provenance") };
    assert!(rounds.is_empty());
    assert!((ledger.spent_rho() - 1e-8).abs() < 1e-20);
}

#[test]
fn aim_with_ample_budget_goes_beyond_one_ways() {
    let cards = [3, 4, 2, 5];
    let rows = correlated_rows(&cards, 1000, 1);
    let domain = DiscreteDomain::from_cardinalities(&cards).unwrap();
    let data = DiscreteDataset::from_rows(domain.clone(), &rows).unwrap();
    let mut ledger = PrivacyLedger::new(1.0).unwrap();
    let plan = aim_run_noiseless(&data, &mut ledger, &default_workload(&domain), u64::MAX, &mut seeded(1)).unwrap();
    assert!(plan.cliques().iter().any(|c| c.len() >= 2));
}

#[test]
fn mst_noiseless_tree_is_kruskal_on_true_pair_errors() {
    let cards = [2, 3, 3, 2, 4];
    let rows = correlated_rows(&cards, 2000, 3);
    let domain = DiscreteDomain::from_cardinalities(&cards).unwrap();
    let data = DiscreteDataset::from_rows(domain, &rows).unwrap();
    let mut ledger = PrivacyLedger::new(10.0).unwrap();
    let plan = mst_select_noiseless(&data, &mut ledger, u64::MAX, &mut seeded(1)).unwrap();
    let Provenance::Mst { edges } = plan.provenance.clone() else { panic!("wrong provenance") };
    // Noiseless 1-ways are exact, so the pair score is the L1 gap between
    // the joint and the product of its margins.
    let d = cards.len();
    let n = rows.len() as f64;
    let mut m = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i + 1..d {
            let mut joint = vec![0.0; cards[i] * cards[j]];
            let (mut a, mut b) = (vec![0.0; cards[i]], vec![0.0; cards[j]]);
            for r in &rows {
                joint[r[i] as usize * cards[j] + r[j] as usize] += 1.0;
                a[r[i] as usize] += 1.0;
                b[r[j] as usize] += 1.0;
            }
            let s: f64 = (0..cards[i])
                .flat_map(|x| (0..cards[j]).map(move |y| (x, y)))
                .map(|(x, y)| (joint[x * cards[j] + y] - a[x] * b[y] / n).abs())
                .sum();
            m[i][j] = s;
            m[j][i] = s;
        }
    }
    let mut got = edges;
    let mut want = kruskal(&m);
    got.sort_unstable();
    want.sort_unstable();
    assert_eq!(got, want);
    assert_eq!(plan.cliques().len(), d + d - 1);
}

proptest! {
    #[test]
    fn mutual_information_is_bounded(counts in proptest::collection::vec(0.0f64..50.0, 6)) {
        prop_assume!(counts.iter().sum::<f64>() > 0.0);
        let mi = mutual_information_table(&counts, 2, 3).unwrap();
        prop_assert!(mi >= -1e-12);
        prop_assert!(mi <= 1.0 + 1e-12); // log2 of the smaller side
    }

    #[test]
    fn spanning_edges_form_a_tree(seed in 0u64..1000, d in 2usize..9) {
        let mut rng = seeded(seed);
        let m = random_symmetric(d, &mut rng);
        let edges = spanning_edges_noiseless(&m).unwrap();
        prop_assert_eq!(edges.len(), d - 1);
    }
}
