//! Central finite-difference verification of tape gradients.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Entries sampled per tensor; smaller tensors are checked in full.
    pub max_entries: usize,
    /// Denominator floor, scaled by `max(1, |f|)`, so entries whose true
    /// derivative is zero are compared on an absolute scale.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tol: 1e-4, max_entries: 100, floor: 1e-5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub failing: Vec<EntryError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failing.is_empty()
    }
}

fn evaluate<F>(f: &mut F, store: &ParamStore) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    Ok(tape.value(loss).item())
}

/// Compares the tape gradient of `f` with central differences for every
/// parameter in `store` (or the subset `only`, when given).
pub fn grad_check<F>(store: &mut ParamStore, mut f: F, cfg: &GradCheckConfig, only: Option<&[ParamId]>) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    let base = tape.value(loss).item();
    tape.backward(loss, store)?;
    if evaluate(&mut f, store)?.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic { param: "loss".to_string(), index: 0 });
    }

    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => store.ids().collect(),
    };
    let floor = cfg.floor * base.abs().max(1.0);
    let mut rng = Rng::new(cfg.seed);
    let mut report = GradCheckReport { loss: base, max_rel_err: 0.0, checked: 0, failing: Vec::new() };
    for id in ids {
        let n = store.value(id).len();
        let entries: Vec<usize> = if n <= cfg.max_entries {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut all);
            all.truncate(cfg.max_entries);
            all.sort_unstable();
            all
        };
        for index in entries {
            let analytic = store.grad(id).data()[index];
            let orig = store.value(id).data()[index];
            store.value_mut(id).data_mut()[index] = orig + cfg.step;
            let plus = evaluate(&mut f, store)?;
            store.value_mut(id).data_mut()[index] = orig - cfg.step;
            let minus = evaluate(&mut f, store)?;
            store.value_mut(id).data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel_err > report.max_rel_err || rel_err.is_nan() {
                report.max_rel_err = rel_err;
            }
            if !(rel_err <= cfg.tol) {
                report.failing.push(EntryError { param: store.name(id).to_string(), index, analytic, numeric, rel_err });
            }
        }
    }
    store.zero_grads();
    Ok(report)
}
