//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{NodeId, Tape};

const FD_STEP: f64 = 1e-5;

/// Worst disagreement for one parameter entry.
#[derive(Debug, Clone)]
pub struct EntryReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<EntryReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err <= self.tolerance)
    }

    pub fn failures(&self) -> Vec<&EntryReport> {
        self.entries
            .iter()
            .filter(|e| e.max_rel_err > self.tolerance)
            .collect()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Relative error with a unit floor, so near-zero gradients compare absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Compare analytic tape gradients of `build_loss` against central finite
/// differences, element by element.
///
/// The builder must be deterministic: any sampling inside it has to replay
/// identically on every call (seeded streams recreated per call). The report
/// carries per-entry worst errors; nothing is raised on disagreement.
pub fn grad_check<F>(
    params: &mut ParamStore,
    tolerance: f64,
    mut build_loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    grad_check_with_corruption(params, tolerance, &mut build_loss, None)
}

/// Same as [`grad_check`], with an optional fault injected into the analytic
/// gradient (+1 to one flat element of one entry) for harness self-tests.
#[allow(clippy::needless_range_loop)] // entries are mutated while analytic is indexed
pub fn grad_check_with_corruption<F>(
    params: &mut ParamStore,
    tolerance: f64,
    build_loss: &mut F,
    corrupt: Option<(&str, usize)>,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<NodeId>,
{
    params.zero_grads();
    let mut tape = Tape::new();
    let loss = build_loss(&mut tape, params)?;
    tape.backward(loss, params)?;
    let mut analytic: Vec<Vec<f64>> = params.iter().map(|e| e.grads.data.clone()).collect();
    if let Some((name, flat)) = corrupt {
        let idx = params.idx(name)?;
        analytic[idx][flat] += 1.0;
    }

    let mut entries = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let n_el = params.entry(i).values.len();
        let mut worst = EntryReport {
            name: params.entry(i).name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..n_el {
            let orig = params.entry(i).values.data[j];

            params.entry_mut(i).values.data[j] = orig + FD_STEP;
            let mut tp = Tape::new();
            let lp = build_loss(&mut tp, params)?;
            let fp = tp.scalar(lp);

            params.entry_mut(i).values.data[j] = orig - FD_STEP;
            let mut tm = Tape::new();
            let lm = build_loss(&mut tm, params)?;
            let fm = tm.scalar(lm);

            params.entry_mut(i).values.data[j] = orig;

            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let err = rel_err(analytic[i][j], numeric);
            if err > worst.max_rel_err {
                worst.max_rel_err = err;
                worst.worst_index = j;
                worst.analytic = analytic[i][j];
                worst.numeric = numeric;
            }
        }
        entries.push(worst);
    }
    Ok(GradCheckReport { tolerance, entries })
}
