//! Deliberately broken reference implementations. Each one must trip its
//! audit; they exist so the audits themselves can be tested.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::Rng;

use super::{gaussian_sigma_for, support_collision_audit, AuditOutcome, PipelineTrainer, Release, Trainer};
use crate::domain::{ColumnSpec, Domain};
use crate::error::{Error, Result};
use crate::rng::{seeded, SynthRng};
use crate::table::{Column, MixedTable};

/// Textbook floating-point Gaussian noise: `value + sigma * N(0, 1)` with a
/// Box–Muller normal. Its outputs reveal the input through their low bits.
pub fn naive_float_gaussian<R: Rng + ?Sized>(value: f64, sigma: f64, rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    value + sigma * z
}

/// Support audit of [`naive_float_gaussian`] on the same inputs and scale
/// as [`super::audit_exact_gaussian`].
pub fn audit_naive_gaussian<R: Rng + ?Sized>(probes: usize, epsilon: f64, delta: f64, rng: &mut R) -> Result<AuditOutcome> {
    let (a, b) = (0.0, 2f64.powi(40));
    let sigma = gaussian_sigma_for(epsilon, delta, b - a)?;
    let mech = |x: f64, r: &mut SynthRng| Ok(naive_float_gaussian(x, sigma, r));
    support_collision_audit(mech, a, b, probes, probes, epsilon, delta, rng)
}

/// Infers the domain from the training data: observed categories and
/// observed min/max bounds.
fn domain_of(data: &MixedTable) -> Result<Domain> {
    let specs = data
        .names()
        .iter()
        .zip(data.columns())
        .map(|(name, col)| match col {
            Column::Categorical(v) => {
                let seen: BTreeSet<&str> = v.iter().map(String::as_str).collect();
                ColumnSpec::categorical(name.clone(), &seen.into_iter().collect::<Vec<_>>())
            }
            Column::Numerical(v) => {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                ColumnSpec::numerical(name.clone(), Some((lo, if hi > lo { hi } else { lo + 1.0 })))
            }
        })
        .collect();
    Domain::new(specs)
}

/// The pipeline with its domain read off the private data.
pub struct DomainFromData(pub PipelineTrainer);

impl Trainer for DomainFromData {
    fn train(&self, data: &MixedTable, target: &MixedTable, rng: &mut SynthRng) -> Result<Release> {
        let inner = PipelineTrainer { config: self.0.config.clone(), domain: domain_of(data)? };
        inner.train(data, target, rng)
    }
}

/// The pipeline with a hard-coded seed in place of the caller's rng.
pub struct FixedRng(pub PipelineTrainer);

impl Trainer for FixedRng {
    fn train(&self, data: &MixedTable, target: &MixedTable, _rng: &mut SynthRng) -> Result<Release> {
        self.0.train(data, target, &mut seeded(0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    NaiveFloat,
    DomainFromData,
    FixedRng,
}

impl Fixture {
    pub const ALL: [Fixture; 3] = [Fixture::NaiveFloat, Fixture::DomainFromData, Fixture::FixedRng];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::NaiveFloat => "naive-float",
            Fixture::DomainFromData => "domain-from-data",
            Fixture::FixedRng => "fixed-rng",
        }
    }

    /// Whether the fixture is audited by the floating-point support suite
    /// rather than the distinguishing game.
    pub fn is_float(self) -> bool {
        matches!(self, Fixture::NaiveFloat)
    }
}

impl FromStr for Fixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Fixture::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fixture `{s}`; expected naive-float, domain-from-data or fixed-rng")))
    }
}

/// Runs the audit a fixture belongs to.
pub fn audit_fixture<R: Rng + ?Sized>(
    fixture: Fixture,
    model: crate::select::ModelKind,
    runs: usize,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<AuditOutcome> {
    let template = super::default_template();
    let inner = PipelineTrainer { config: super::audit_config(model, epsilon, delta), domain: template.clone() };
    match fixture {
        Fixture::NaiveFloat => audit_naive_gaussian(runs.max(super::MIN_PROBES), epsilon, delta, rng),
        Fixture::DomainFromData => super::audit_trainer(&DomainFromData(inner), &template, runs, epsilon, delta, rng),
        Fixture::FixedRng => super::audit_trainer(&FixedRng(inner), &template, runs, epsilon, delta, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for f in Fixture::ALL {
            assert_eq!(f.name().parse::<Fixture>().unwrap(), f);
        }
        assert!("nope".parse::<Fixture>().is_err());
    }
}
