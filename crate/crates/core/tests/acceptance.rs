//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::oracles::{
    correlated_rows, exact, kruskal, privbayes_network_error, product_of_one_ways, random_data, random_symmetric,
    worst_projection_gap,
};
use common::{census, small, Reads, SpyTable};
use dpsynth::audit::fixtures::{audit_fixture, Fixture};
use dpsynth::audit::{audit_exact_gaussian, audit_pipeline};
use dpsynth::domain::{Clique, DiscreteDataset, DiscreteDomain, Measurement, StructuralZero};
use dpsynth::metrics::utility_report;
use dpsynth::pgm::{build_junction_tree, estimate_total, fit_potentials, tvd, MarginalLoss};
use dpsynth::privacy::{gaussian_mechanism, laplace_mechanism, NoiseScale, PrivacyLedger};
use dpsynth::rng::{seeded, stream};
use dpsynth::select::hooks::{aim_run_noiseless, privbayes_select_noiseless, spanning_edges_noiseless};
use dpsynth::select::{default_workload, ModelKind, Provenance};
use dpsynth::synth::{fit, fit_private, fit_with_source, pretrain_public, Condition, FittedSynthesizer, SynthesizerConfig};
use dpsynth::table::Column;
use rand::Rng;
use rayon::prelude::*;

const MODELS: [ModelKind; 3] = [ModelKind::Aim, ModelKind::Mst, ModelKind::PrivBayes];
const EPSILONS: [f64; 3] = [0.1, 1.0, 10.0];
const SEEDS: u64 = 10;
/// AIM may trail MST by this much and still count as a tie.
const ORDER_TIE: f64 = 0.01;

const DRAWS: u64 = 1_000_000;
const GAUSS_REL_TOL: f64 = 0.02;
const LAPLACE_REL_TOL: f64 = 0.03;

const TVD_TOL: f64 = 1e-3;
const ENUM_TOL: f64 = 1e-6;
const GRAD_REL_TOL: f64 = 1e-4;

const AUDIT_RUNS: usize = 1000;
const AUDIT_EPS: f64 = 1.0;
const AUDIT_DELTA: f64 = 1e-3;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)*));
        }
    };
}

fn criterion(name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} {name}: {detail} [{:.1?}]", start.elapsed());
    outcome.is_ok()
}

/// Mean utility over seeds for every (model, epsilon) pair, indexed as
/// `means[model][eps]`.
fn utility_sweep() -> Vec<Vec<f64>> {
    let (table, domain) = census();
    let jobs: Vec<(usize, usize, u64)> =
        (0..MODELS.len()).flat_map(|m| (0..EPSILONS.len()).flat_map(move |e| (0..SEEDS).map(move |s| (m, e, s)))).collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(m, e, s)| {
            let mut rng = seeded(s);
            let fitted = fit(&SynthesizerConfig::new(MODELS[m], EPSILONS[e]), &table, &domain, &mut rng).unwrap();
            let synth = fitted.generate(table.n_rows(), &[], &mut rng).unwrap();
            utility_report(&table, &synth, &domain, &mut rng).unwrap().mean
        })
        .collect();
    let mut means = vec![vec![0.0; EPSILONS.len()]; MODELS.len()];
    for (&(m, e, _), s) in jobs.iter().zip(scores) {
        means[m][e] += s / SEEDS as f64;
    }
    means
}

fn monotonicity(means: &[Vec<f64>]) -> Check {
    let rows: Vec<String> = MODELS
        .iter()
        .zip(means)
        .map(|(m, u)| format!("{m} {}", u.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("<")))
        .collect();
    for (m, u) in MODELS.iter().zip(means) {
        ensure!(u.windows(2).all(|w| w[1] > w[0]), "{m} not increasing: {}", rows.join("; "));
    }
    Ok(rows.join("; "))
}

fn ordering(means: &[Vec<f64>]) -> Check {
    let at = |m: usize| means[m][1];
    let (aim, mst, pb) = (at(0), at(1), at(2));
    let detail = format!("eps=1 aim {aim:.4} mst {mst:.4} privbayes {pb:.4}");
    ensure!(aim >= mst - ORDER_TIE, "AIM below MST: {detail}");
    ensure!(mst >= pb, "MST below PrivBayes: {detail}");
    Ok(detail)
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn calibration() -> Check {
    let mut detail = Vec::new();
    for sigma in [1.0, 10.0, 100.0] {
        let scale = NoiseScale::new(sigma).map_err(|e| e.to_string())?;
        let g = scale.granularity();
        let xs: Vec<f64> = (0..DRAWS)
            .into_par_iter()
            .map(|i| gaussian_mechanism(&[3.0], 1.0, &scale, &mut stream(11, i)).unwrap()[0])
            .collect();
        let rel = std_dev(&xs) / sigma - 1.0;
        ensure!(rel.abs() < GAUSS_REL_TOL, "gaussian sigma {sigma}: relative error {rel:.4}");
        ensure!(xs.iter().all(|x| (x / g).fract() == 0.0), "gaussian sigma {sigma}: off grid {g}");

        let g = NoiseScale::new(sigma).map_err(|e| e.to_string())?.granularity();
        let ys: Vec<f64> = (0..DRAWS)
            .into_par_iter()
            .map(|i| laplace_mechanism(0.5, 1.0, 1.0 / sigma, &mut stream(12, i)).unwrap())
            .collect();
        let lrel = std_dev(&ys) / (sigma * 2f64.sqrt()) - 1.0;
        ensure!(lrel.abs() < LAPLACE_REL_TOL, "laplace scale {sigma}: relative error {lrel:.4}");
        ensure!(ys.iter().all(|y| (y / g).fract() == 0.0), "laplace scale {sigma}: off grid {g}");
        detail.push(format!("{sigma}: gauss {rel:+.4} laplace {lrel:+.4}"));
    }
    Ok(detail.join(", "))
}

fn inference() -> Check {
    let data = random_data(&[3, 4, 2], 2000, 1);
    let c = Clique::new(vec![0, 1]);
    let m = Measurement::new(exact(&data, &c), 1.0).unwrap();
    let model = fit_potentials(std::slice::from_ref(&m), data.domain(), 3000, 1.0).unwrap();
    let single = tvd(&model.project(&c).unwrap(), &m.marginal);
    ensure!(single < TVD_TOL, "single clique tvd {single}");

    let data = random_data(&[3, 4, 2], 2000, 2);
    let ms: Vec<Measurement> = (0..3).map(|i| Measurement::new(exact(&data, &Clique::new(vec![i])), 1.0).unwrap()).collect();
    let model = fit_potentials(&ms, data.domain(), 3000, 1.0).unwrap();
    let product = tvd(&model.project(&Clique::new(vec![0, 1, 2])).unwrap(), &product_of_one_ways(&data));
    ensure!(product < TVD_TOL, "product tvd {product}");

    let enum_gap = worst_projection_gap();
    ensure!(enum_gap < ENUM_TOL, "enumeration gap {enum_gap}");

    let grad_err = gradient_error();
    ensure!(grad_err < GRAD_REL_TOL, "gradient relative error {grad_err}");
    Ok(format!("single {single:.1e}, product {product:.1e}, enumeration {enum_gap:.1e}, gradient {grad_err:.1e}"))
}

/// Worst relative gap between analytic and central-difference gradients.
fn gradient_error() -> f64 {
    let data = random_data(&[3, 2, 3, 2], 500, 3);
    let cliques = [Clique::new(vec![0, 1]), Clique::new(vec![1, 2]), Clique::new(vec![2, 3]), Clique::new(vec![0])];
    let mut rng = seeded(4);
    let ms: Vec<Measurement> = cliques
        .iter()
        .map(|c| {
            let mut m = exact(&data, c);
            m.counts.iter_mut().for_each(|v| *v += rng.gen_range(-5.0..5.0));
            Measurement::new(m, 2.0).unwrap()
        })
        .collect();
    let tree = build_junction_tree(data.domain(), &cliques).unwrap();
    let loss = MarginalLoss::new(data.domain(), tree, &ms, estimate_total(&ms, data.domain()), None).unwrap();
    let params: Vec<Vec<f64>> =
        loss.zero_params().iter().map(|p| p.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let grad = loss.gradient(&params).unwrap();
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for i in 0..params.len() {
        for k in 0..params[i].len() {
            let (mut up, mut down) = (params.clone(), params.clone());
            up[i][k] += h;
            down[i][k] -= h;
            let fd = (loss.loss(&up).unwrap() - loss.loss(&down).unwrap()) / (2.0 * h);
            worst = worst.max((fd - grad[i][k]).abs() / fd.abs().max(grad[i][k].abs()).max(1e-3));
        }
    }
    worst
}

fn selection() -> Check {
    let mut rng = seeded(2024);
    for trial in 0..50 {
        let m = random_symmetric(rng.gen_range(2..10), &mut rng);
        let mut got = spanning_edges_noiseless(&m).map_err(|e| e.to_string())?;
        let mut want = kruskal(&m);
        got.sort_unstable();
        want.sort_unstable();
        ensure!(got == want, "spanning tree differs on matrix {trial}");
    }

    let mut fixtures = 0;
    for (case, cards) in [vec![2, 3, 2], vec![3, 2, 4, 2], vec![2, 2, 3, 3, 2]].into_iter().enumerate() {
        for k in [1, 2] {
            let rows = correlated_rows(&cards, 800, case as u64);
            let data = DiscreteDataset::from_rows(DiscreteDomain::from_cardinalities(&cards).unwrap(), &rows).unwrap();
            let mut ledger = PrivacyLedger::new(1e6).unwrap();
            let plan = privbayes_select_noiseless(&data, &mut ledger, k, u64::MAX, &mut seeded(7)).unwrap();
            let Provenance::PrivBayes { network, .. } = plan.provenance else { return Err("wrong provenance".into()) };
            if let Some(err) = privbayes_network_error(&rows, &network, k) {
                return Err(format!("privbayes {cards:?} k={k}: {err}"));
            }
            fixtures += 1;
        }
    }

    let cards = [3, 4, 2, 5];
    let rows = correlated_rows(&cards, 1000, 1);
    let domain = DiscreteDomain::from_cardinalities(&cards).unwrap();
    let data = DiscreteDataset::from_rows(domain.clone(), &rows).unwrap();
    let mut ledger = PrivacyLedger::new(1e-8).unwrap();
    let plan = aim_run_noiseless(&data, &mut ledger, &default_workload(&domain), u64::MAX, &mut seeded(1)).unwrap();
    let ones: Vec<Clique> = (0..cards.len()).map(|i| Clique::new(vec![i])).collect();
    ensure!(plan.cliques() == ones, "AIM at minimal budget chose {:?}", plan.cliques());
    Ok(format!("50 spanning trees, {fixtures} PrivBayes fixtures, AIM 1-way plan"))
}

fn audit_suite() -> Check {
    let mut lines = Vec::new();
    let float = audit_exact_gaussian(AUDIT_RUNS.max(10_000), AUDIT_EPS, AUDIT_DELTA, &mut seeded(1)).map_err(|e| e.to_string())?;
    ensure!(!float.violation, "exact gaussian flagged: eps_emp {}", float.eps_emp);
    lines.push(format!("exact-float {:.3}", float.eps_emp));
    for (i, model) in MODELS.into_iter().enumerate() {
        let o = audit_pipeline(model, AUDIT_RUNS, AUDIT_EPS, AUDIT_DELTA, &mut seeded(100 + i as u64)).map_err(|e| e.to_string())?;
        ensure!(!o.violation && o.eps_emp <= AUDIT_EPS, "{model} flagged: eps_emp {}", o.eps_emp);
        lines.push(format!("{model} {:.3}", o.eps_emp));
    }
    for (i, f) in Fixture::ALL.into_iter().enumerate() {
        let o = audit_fixture(f, ModelKind::Mst, AUDIT_RUNS, AUDIT_EPS, AUDIT_DELTA, &mut seeded(200 + i as u64))
            .map_err(|e| e.to_string())?;
        ensure!(o.violation, "fixture {} not caught: eps_emp {}", f.name(), o.eps_emp);
        lines.push(format!("{} {:.3} (caught)", f.name(), o.eps_emp));
    }
    Ok(format!("eps_emp {}", lines.join(", ")))
}

fn strings(c: &Column) -> &[String] {
    match c {
        Column::Categorical(v) => v,
        Column::Numerical(_) => panic!("expected categories"),
    }
}

fn numbers(c: &Column) -> &[f64] {
    match c {
        Column::Numerical(v) => v,
        Column::Categorical(_) => panic!("expected numbers"),
    }
}

fn contracts() -> Check {
    let (table, mut domain) = census();
    let hours = domain.index_of("hours").unwrap();
    domain.columns[hours].structural_zeros.push(StructuralZero::Interval(70.0, 80.0));
    let keep: Vec<usize> = (0..table.n_rows()).filter(|&i| numbers(table.column(hours))[i] < 70.0).collect();
    let table = table.take(&keep);
    let dir = tempfile::tempdir().unwrap();
    for model in MODELS {
        let cfg = SynthesizerConfig { fit_iters: 200, ..SynthesizerConfig::new(model, 1.0) };
        let fitted = fit(&cfg, &table, &domain, &mut seeded(6)).map_err(|e| e.to_string())?;

        let conds = vec![
            Condition::parse("sex=female", &domain).unwrap(),
            Condition::parse("age=[30,60]", &domain).unwrap(),
            Condition::parse("region=west", &domain).unwrap(),
        ];
        let out = fitted.generate(2000, &conds, &mut seeded(3)).unwrap();
        let ok = strings(out.column_by_name("sex").unwrap()).iter().all(|s| s == "female")
            && strings(out.column_by_name("region").unwrap()).iter().all(|s| s == "west")
            && numbers(out.column_by_name("age").unwrap()).iter().all(|a| (30.0..=60.0).contains(a));
        ensure!(ok, "{model}: a generated row broke a condition");

        let out = fitted.generate(10_000, &[], &mut seeded(7)).unwrap();
        let divorced = strings(out.column_by_name("marital").unwrap()).iter().filter(|s| *s == "divorced").count();
        let in_gap = numbers(out.column(hours)).iter().filter(|&&h| h > 70.0 && h < 80.0).count();
        ensure!(divorced == 0 && in_gap == 0, "{model}: structural zeros generated ({divorced}, {in_gap})");

        let size = fitted.model_size_bytes().unwrap();
        ensure!(size <= cfg.size_cap_bytes(), "{model}: size {size} over cap");

        let path = dir.path().join(format!("{model}.dpmm"));
        fitted.save(&path).unwrap();
        let loaded = FittedSynthesizer::load(&path).unwrap();
        ensure!(loaded.to_bytes().unwrap() == std::fs::read(&path).unwrap(), "{model}: save/load not bit-exact");
        ensure!(
            loaded.generate(500, &[], &mut seeded(1)).unwrap() == fitted.generate(500, &[], &mut seeded(1)).unwrap(),
            "{model}: loaded model generates differently"
        );

        let state = pretrain_public(&cfg, &table.slice(0, 2000), &domain, &mut seeded(1)).unwrap();
        ensure!(state.ledger().spent_rho() == 0.0, "{model}: pretraining spent rho");
        let private = fit_private(&state, &table.slice(2000, table.n_rows()), &mut seeded(2)).unwrap();
        ensure!(
            private.ledger().log().iter().all(|e| e.label.starts_with("measure/")),
            "{model}: private fit after pretraining charged selection or preprocessing"
        );
    }
    Ok("conditions, structural zeros, size cap, save/load, public pretraining for all models".into())
}

fn taint() -> Check {
    let (table, domain) = small();
    let mut counts = Vec::new();
    for model in MODELS {
        let reads = Reads::default();
        let spy = SpyTable { inner: &table, reads: &reads };
        let cfg = SynthesizerConfig { fit_iters: 50, ..SynthesizerConfig::new(model, 1.0) };
        fit_with_source(&cfg, &spy, &domain, &mut seeded(3)).map_err(|e| e.to_string())?;
        ensure!(reads.uncharged() == 0, "{model}: {} uncharged reads", reads.uncharged());
        ensure!(reads.charged() > 0, "{model}: spy saw no reads");
        counts.push(format!("{model} {} charged", reads.charged()));
    }
    Ok(format!("0 uncharged reads; {}", counts.join(", ")))
}

fn main() {
    let start = Instant::now();
    let means = utility_sweep();
    println!("utility sweep over {} fits took {:.1?}", MODELS.len() * EPSILONS.len() * SEEDS as usize, start.elapsed());
    let results = [
        criterion("epsilon monotonicity", || monotonicity(&means)),
        criterion("model ordering at eps=1", || ordering(&means)),
        criterion("mechanism calibration", calibration),
        criterion("inference oracles", inference),
        criterion("selection oracles", selection),
        criterion("audit suite", audit_suite),
        criterion("functionality contracts", contracts),
        criterion("privacy taint", taint),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
