//! zCDP accounting.
//!
//! Every release in the pipeline is charged in rho (zero-concentrated DP).
//! Pure-DP mechanisms are converted on the way in (epsilon-DP implies
//! epsilon^2/2-zCDP, the exponential mechanism is epsilon^2/8-zCDP) and the
//! user-facing `(epsilon, delta)` pair is converted once at pipeline start.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute and relative slack allowed when comparing cumulative charges
/// against the total, for rounding in budget splits.
pub const LEDGER_SLACK: f64 = 1e-12;
pub const LEDGER_REL_SLACK: f64 = 1e-12;

/// zCDP cost of the Gaussian mechanism with noise scale `sigma` on a query
/// of L2 sensitivity `sensitivity`.
pub fn zcdp_of_gaussian(sigma: f64, sensitivity: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(sensitivity > 0.0) {
        return Err(Error::invalid(format!(
            "gaussian accounting needs sigma > 0 and sensitivity > 0 (got {sigma}, {sensitivity})"
        )));
    }
    Ok(sensitivity * sensitivity / (2.0 * sigma * sigma))
}

/// Noise scale that makes a Gaussian release of the given sensitivity cost
/// exactly `rho`.
pub fn gaussian_sigma_for_rho(rho: f64, sensitivity: f64) -> Result<f64> {
    if !(rho > 0.0) || !(sensitivity > 0.0) {
        return Err(Error::invalid(format!(
            "cannot calibrate sigma for rho={rho}, sensitivity={sensitivity}"
        )));
    }
    Ok(sensitivity / (2.0 * rho).sqrt())
}

/// zCDP cost of a pure `epsilon`-DP mechanism.
pub fn zcdp_of_pure(epsilon: f64) -> f64 {
    epsilon * epsilon / 2.0
}

/// zCDP cost of the exponential mechanism run at `epsilon`.
pub fn zcdp_of_exponential(epsilon: f64) -> f64 {
    epsilon * epsilon / 8.0
}

/// Inverse of [`zcdp_of_exponential`].
pub fn exponential_epsilon_for_rho(rho: f64) -> f64 {
    (8.0 * rho).sqrt()
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// Standard conversion from rho-zCDP to `(epsilon, delta)`-DP.
pub fn eps_of_rho(rho: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("rho must be a finite non-negative number, got {rho}")));
    }
    Ok(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt())
}

/// Largest rho whose `(epsilon, delta)` conversion does not exceed `epsilon`.
///
/// Plain bisection on `[0, epsilon]`; `eps_of_rho(rho) >= rho` makes `epsilon`
/// a valid upper bracket.
pub fn rho_of_eps(epsilon: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid(format!("epsilon must be positive and finite, got {epsilon}")));
    }
    let (mut lo, mut hi) = (0.0_f64, epsilon);
    while hi - lo > 1e-12 * hi.min(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eps_of_rho(mid, delta)? <= epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// User-facing budget together with its zCDP equivalent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
    rho: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let rho = rho_of_eps(epsilon, delta)?;
        Ok(Self { epsilon, delta, rho })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// One line of the ledger log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub rho: f64,
    /// Pure-DP epsilon of the release, when it was charged as a pure mechanism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

/// Proof that a release was paid for.
///
/// Only the ledger hands these out; data accessors demand one for every read
/// of private cell values.
#[derive(Debug)]
pub struct Charge {
    entry: Option<usize>,
}

impl Charge {
    /// Ledger entry that paid for the read, `None` for public data.
    pub fn entry(&self) -> Option<usize> {
        self.entry
    }

    /// Token for reads of data the caller has declared public.
    pub(crate) fn public() -> Self {
        Charge { entry: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    total_rho: f64,
    spent_rho: f64,
    log: Vec<LedgerEntry>,
}

impl PrivacyLedger {
    pub fn new(total_rho: f64) -> Result<Self> {
        if !(total_rho >= 0.0) || !total_rho.is_finite() {
            return Err(Error::invalid(format!("ledger total must be finite and >= 0, got {total_rho}")));
        }
        Ok(Self { total_rho, spent_rho: 0.0, log: Vec::new() })
    }

    pub fn total_rho(&self) -> f64 {
        self.total_rho
    }

    pub fn spent_rho(&self) -> f64 {
        self.spent_rho
    }

    pub fn remaining_rho(&self) -> f64 {
        (self.total_rho - self.spent_rho).max(0.0)
    }

    pub fn log(&self) -> &[LedgerEntry] {
        &self.log
    }

    /// Records a zCDP charge, failing if it would overdraw the budget.
    pub fn charge(&mut self, label: impl Into<String>, rho: f64) -> Result<Charge> {
        self.charge_entry(label.into(), rho, None)
    }

    /// Charges a pure `epsilon`-DP release (e.g. the Laplace mechanism).
    pub fn charge_pure(&mut self, label: impl Into<String>, epsilon: f64) -> Result<Charge> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        self.charge_entry(label.into(), zcdp_of_pure(epsilon), Some(epsilon))
    }

    /// Charges one run of the exponential mechanism at `epsilon`.
    pub fn charge_exponential(&mut self, label: impl Into<String>, epsilon: f64) -> Result<Charge> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        self.charge_entry(label.into(), zcdp_of_exponential(epsilon), Some(epsilon))
    }

    /// Charges a Gaussian release and returns the paid-for token.
    pub fn charge_gaussian(&mut self, label: impl Into<String>, sigma: f64, sensitivity: f64) -> Result<Charge> {
        let rho = zcdp_of_gaussian(sigma, sensitivity)?;
        self.charge_entry(label.into(), rho, None)
    }

    fn charge_entry(&mut self, label: String, rho: f64, epsilon: Option<f64>) -> Result<Charge> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("charge must be finite and >= 0, got {rho}")));
        }
        if self.spent_rho + rho > self.total_rho * (1.0 + LEDGER_REL_SLACK) + LEDGER_SLACK {
            return Err(Error::BudgetExhausted { requested: rho, remaining: self.remaining_rho() });
        }
        self.spent_rho += rho;
        self.log.push(LedgerEntry { label, rho, epsilon });
        Ok(Charge { entry: Some(self.log.len() - 1) })
    }

    /// Sum of the log entries whose label starts with `prefix`.
    pub fn spent_with_prefix(&self, prefix: &str) -> f64 {
        self.log.iter().filter(|e| e.label.starts_with(prefix)).map(|e| e.rho).sum()
    }
}
