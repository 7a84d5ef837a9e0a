#![allow(dead_code)]

pub mod oracles;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use dpsynth::domain::{load_domain, Clique, DataAccess, DiscreteDataset, DiscreteDomain, Domain, Marginal};
use dpsynth::preprocess::Preprocessor;
use dpsynth::privacy::Charge;
use dpsynth::table::{MixedTable, TableSource};
use dpsynth::Result;

pub fn data_path(name: &str) -> String {
    format!("{}/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn load(stem: &str) -> (MixedTable, Domain) {
    let domain = load_domain(&std::fs::read_to_string(data_path(&format!("{stem}_domain.json"))).unwrap()).unwrap();
    let table = MixedTable::read_csv_path(data_path(&format!("{stem}.csv")), &domain).unwrap();
    (table, domain)
}

pub fn census() -> (MixedTable, Domain) {
    load("census")
}

pub fn small() -> (MixedTable, Domain) {
    load("small")
}

/// Counts every read of private values and flags those made without a
/// ledger entry behind them.
#[derive(Default)]
pub struct Reads {
    pub charged: AtomicUsize,
    pub uncharged: AtomicUsize,
    pub entries: Mutex<Vec<usize>>,
}

impl Reads {
    fn record(&self, charge: Option<&Charge>) {
        match charge.and_then(Charge::entry) {
            Some(e) => {
                self.charged.fetch_add(1, Ordering::SeqCst);
                self.entries.lock().unwrap().push(e);
            }
            None => {
                self.uncharged.fetch_add(1, Ordering::SeqCst);
            }
        }
    }

    pub fn charged(&self) -> usize {
        self.charged.load(Ordering::SeqCst)
    }

    pub fn uncharged(&self) -> usize {
        self.uncharged.load(Ordering::SeqCst)
    }
}

pub struct SpyTable<'a> {
    pub inner: &'a MixedTable,
    pub reads: &'a Reads,
}

struct SpyAccess<'a> {
    inner: DiscreteDataset,
    reads: &'a Reads,
}

impl DataAccess for SpyAccess<'_> {
    fn domain(&self) -> &DiscreteDomain {
        self.inner.domain()
    }

    fn n_rows(&self) -> usize {
        // The record count is private too.
        self.reads.record(None);
        self.inner.n_rows()
    }

    fn marginal(&self, clique: &Clique, charge: &Charge) -> Result<Marginal> {
        self.reads.record(Some(charge));
        self.inner.marginal(clique, charge)
    }
}

impl TableSource for SpyTable<'_> {
    fn names(&self) -> &[String] {
        self.inner.names()
    }

    fn check_schema(&self, domain: &Domain) -> Result<()> {
        self.inner.check_schema(domain)
    }

    fn numeric_column(&self, col: usize, charge: &Charge) -> Result<Vec<f64>> {
        self.reads.record(Some(charge));
        TableSource::numeric_column(self.inner, col, charge)
    }

    fn encode(&self, prep: &Preprocessor) -> Result<Box<dyn DataAccess + '_>> {
        Ok(Box::new(SpyAccess { inner: prep.encode(self.inner)?, reads: self.reads }))
    }
}
