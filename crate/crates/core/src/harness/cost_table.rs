use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::{pair_bytes, Experiment};
use crate::error::{Error, Result};
use crate::field::make_grid;
use crate::schemes::SchemeKind;

/// Cheapest configuration of one scheme reaching the tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTableRow {
    pub scheme: SchemeKind,
    pub n_steps: usize,
    /// Grid cells over the field span, `(ε_max - ε_min)/Δε`.
    pub m: Option<usize>,
    /// Size of the `α` grid of the quantified scheme.
    pub k: Option<usize>,
    pub matrix_vector_applies: u64,
    pub online_exponentials: u64,
    /// Per-step weight times `N`.
    pub matrix_products: u64,
    pub error: f64,
    /// False when no configuration within the caps reached the tolerance;
    /// the row then holds the best configuration found.
    pub reachable: bool,
}

fn doubling(min: usize, max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut v = min.max(1);
    while v <= max {
        out.push(v);
        v *= 2;
    }
    out
}

/// Searches `N` and `m` over powers of two, `N` outermost, and keeps the first
/// (hence cheapest) combination with error at most `tol`. The `m` loop stops
/// early once refining the grid stops improving the error.
pub fn cost_to_tolerance(exp: &Experiment, tol: f64) -> Result<Vec<CostTableRow>> {
    if !(tol > 0.0 && tol <= 2.0) {
        return Err(Error::Config(format!("tolerance must lie in (0, 2], got {tol}")));
    }
    exp.reference()?;
    let settings = &exp.config.cost;
    let mut rows: Vec<CostTableRow> = settings
        .schemes
        .par_iter()
        .map(|&scheme| search(exp, scheme, tol))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| {
        b.reachable
            .cmp(&a.reachable)
            .then(a.matrix_products.cmp(&b.matrix_products))
            .then(a.scheme.cmp(&b.scheme))
    });
    Ok(rows)
}

fn search(exp: &Experiment, scheme: SchemeKind, tol: f64) -> Result<CostTableRow> {
    let settings = &exp.config.cost;
    let per_step = settings.product_weights.per_step(scheme);
    let (lo, hi) = exp.config.grid_bounds(&exp.field);
    let k = (scheme == SchemeKind::QuantifiedHigh).then_some(exp.config.quantified_k);
    let mut best: Option<CostTableRow> = None;
    let mut consider = |row: CostTableRow| {
        if best.as_ref().is_none_or(|b| row.error < b.error) {
            best = Some(row);
        }
    };
    for n in doubling(settings.n_min, settings.n_max) {
        let grids: Vec<Option<usize>> = if scheme.is_toolkit_family() {
            doubling(settings.m_min, settings.m_max).into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        let mut best_at_n = f64::INFINITY;
        let mut stalled = 0;
        for m in grids {
            if let (Some(m), Some(k)) = (m, k) {
                if pair_bytes(m, k, exp.model.dim()) > settings.max_pair_bytes {
                    break;
                }
            }
            let levels = m.map(|m| make_grid(lo, hi, m)).transpose()?.map(Into::into);
            let result = exp.run(scheme, n, levels)?;
            let error = exp.error_of(&result)?;
            log::debug!("{scheme}: N = {n}, m = {m:?}: error {error:.3e}");
            let row = CostTableRow {
                scheme,
                n_steps: n,
                m,
                k,
                matrix_vector_applies: result.cost.matrix_vector_applies,
                online_exponentials: result.cost.online_exponentials,
                matrix_products: per_step * n as u64,
                error,
                reachable: error <= tol,
            };
            if row.reachable {
                return Ok(row);
            }
            consider(row);
            if error < 0.9 * best_at_n {
                best_at_n = error;
                stalled = 0;
            } else {
                stalled += 1;
                if stalled >= 2 {
                    break;
                }
            }
        }
    }
    best.ok_or_else(|| Error::Config(format!("{scheme}: empty search range")))
}
