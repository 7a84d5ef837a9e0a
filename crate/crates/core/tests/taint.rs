mod common;

use common::{small, Reads, SpyTable};
use dpsynth::domain::{ColumnKind, Domain};
use dpsynth::rng::seeded;
use dpsynth::select::ModelKind;
use dpsynth::synth::{fit_private_with_source, fit_with_source, pretrain_public, SynthesizerConfig};

const MODELS: [ModelKind; 3] = [ModelKind::PrivBayes, ModelKind::Mst, ModelKind::Aim];

fn without_bounds(domain: &Domain) -> Domain {
    let mut d = domain.clone();
    for c in &mut d.columns {
        if let ColumnKind::Numerical { bounds } = &mut c.kind {
            *bounds = None;
        }
    }
    d
}

#[test]
fn every_private_read_is_charged() {
    let (table, declared) = small();
    for domain in [declared.clone(), without_bounds(&declared)] {
        for model in MODELS {
            let reads = Reads::default();
            let spy = SpyTable { inner: &table, reads: &reads };
            let cfg = SynthesizerConfig { fit_iters: 50, ..SynthesizerConfig::new(model, 1.0) };
            let fitted = fit_with_source(&cfg, &spy, &domain, &mut seeded(3)).unwrap();
            assert_eq!(reads.uncharged(), 0, "{model}: uncharged reads");
            assert!(reads.charged() > 0, "{model}: spy saw nothing");
            let n_entries = fitted.ledger().log().len();
            assert!(reads.entries.lock().unwrap().iter().all(|&e| e < n_entries));
        }
    }
}

#[test]
fn pretrained_fit_reads_private_data_only_under_charges() {
    let (table, domain) = small();
    let public = table.slice(0, 500);
    let private = table.slice(500, table.n_rows());
    for model in MODELS {
        let cfg = SynthesizerConfig { fit_iters: 50, ..SynthesizerConfig::new(model, 1.0) };
        let state = pretrain_public(&cfg, &public, &domain, &mut seeded(1)).unwrap();
        let reads = Reads::default();
        let spy = SpyTable { inner: &private, reads: &reads };
        let fitted = fit_private_with_source(&state, &spy, &mut seeded(2)).unwrap();
        assert_eq!(reads.uncharged(), 0);
        assert_eq!(reads.charged(), fitted.plan().len());
    }
}
