use dpsynth::privacy::{
    eps_of_rho, gaussian_mechanism, laplace_mechanism, rho_of_eps, zcdp_of_gaussian, NoiseScale, PrivacyLedger,
};
use dpsynth::rng::{seeded, stream};
use proptest::prelude::*;
use rayon::prelude::*;

const DRAWS: usize = 200_000;

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn gaussian_spread_and_grid() {
    for sigma in [1.0, 10.0, 100.0] {
        let scale = NoiseScale::new(sigma).unwrap();
        let g = scale.granularity();
        let xs: Vec<f64> = (0..DRAWS as u64)
            .into_par_iter()
            .map(|i| gaussian_mechanism(&[3.0], 1.0, &scale, &mut stream(1, i)).unwrap()[0])
            .collect();
        let s = std_dev(&xs);
        assert!((s / sigma - 1.0).abs() < 0.02, "sigma {sigma}: {s}");
        assert!(xs.iter().all(|x| (x / g).fract() == 0.0));
    }
}

#[test]
fn laplace_spread_and_grid() {
    for b in [1.0, 10.0, 100.0] {
        let g = NoiseScale::new(b).unwrap().granularity();
        let xs: Vec<f64> = (0..DRAWS as u64)
            .into_par_iter()
            .map(|i| laplace_mechanism(0.5, 1.0, 1.0 / b, &mut stream(2, i)).unwrap())
            .collect();
        let s = std_dev(&xs);
        assert!((s / (b * 2f64.sqrt()) - 1.0).abs() < 0.03, "scale {b}: {s}");
        assert!(xs.iter().all(|x| (x / g).fract() == 0.0));
    }
}

#[test]
fn conversion_examples() {
    // closed form of the inverse: (sqrt(L + eps) - sqrt(L))^2 with L = ln(1/delta)
    let l = (1e5f64).ln();
    let want = ((l + 1.0).sqrt() - l.sqrt()).powi(2);
    assert!((rho_of_eps(1.0, 1e-5).unwrap() - want).abs() < 1e-12);
    assert!((eps_of_rho(0.5, 1e-5).unwrap() - (0.5 + 2.0 * (0.5 * l).sqrt())).abs() < 1e-12);
    assert!((zcdp_of_gaussian(2.0, 1.0).unwrap() - 0.125).abs() < 1e-15);
}

#[test]
fn same_stream_same_noise() {
    let scale = NoiseScale::new(7.5).unwrap();
    let a = gaussian_mechanism(&[1.0, 2.0], 1.0, &scale, &mut seeded(3)).unwrap();
    let b = gaussian_mechanism(&[1.0, 2.0], 1.0, &scale, &mut seeded(3)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn rho_and_eps_are_inverse(eps in 0.01f64..20.0, delta_exp in 3i32..12) {
        let delta = 10f64.powi(-delta_exp);
        let rho = rho_of_eps(eps, delta).unwrap();
        prop_assert!((eps_of_rho(rho, delta).unwrap() - eps).abs() < 1e-9 * eps.max(1.0));
    }

    #[test]
    fn ledger_log_sums_to_spent(charges in proptest::collection::vec(1e-6f64..0.2, 1..30)) {
        let mut ledger = PrivacyLedger::new(1.0).unwrap();
        for (i, c) in charges.iter().enumerate() {
            let _ = ledger.charge(format!("c{i}"), *c);
        }
        let sum: f64 = ledger.log().iter().map(|e| e.rho).sum();
        prop_assert!((sum - ledger.spent_rho()).abs() < 1e-15);
        prop_assert!(ledger.spent_rho() <= ledger.total_rho() + 1e-11);
    }

    #[test]
    fn gaussian_outputs_on_grid(value in -1e6f64..1e6, sigma in 0.01f64..1e4, seed in 0u64..100) {
        let scale = NoiseScale::new(sigma).unwrap();
        let y = gaussian_mechanism(&[value], 1.0, &scale, &mut seeded(seed)).unwrap()[0];
        prop_assert_eq!((y / scale.granularity()).fract(), 0.0);
    }
}
