//! Central finite-difference verification of tape gradients.

use super::params::ParamSet;
use super::tape::{Tape, Var};

/// Error summary for one parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tolerance)
    }
}

/// `|a − b| / max(|a|, |b|, 1e−8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compares the tape gradient of `f` against `(f(θ+h) − f(θ−h)) / 2h` for
/// every scalar of every tensor in `params`.
///
/// `f` receives the tape and one leaf per tensor of `params`, in order, and
/// returns the scalar loss.
pub fn grad_check<F>(params: &mut ParamSet<f64>, h: f64, tolerance: f64, f: F) -> GradCheckReport
where
    F: for<'a> Fn(&mut Tape<'a, f64>, &[Var]) -> Var,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.tensors().iter().map(|t| tape.param(t)).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss).expect("grad_check: loss must be scalar");
        vars.iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()).into_data())
            .collect()
    };

    let eval = |params: &ParamSet<f64>| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.tensors().iter().map(|t| tape.param(t)).collect();
        let loss = f(&mut tape, &vars);
        tape.value(loss).item()
    };

    let mut entries = Vec::with_capacity(params.len());
    for (i, analytic_i) in analytic.iter().enumerate() {
        let mut entry = GradCheckEntry {
            name: params.name(i).to_string(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
        };
        for (j, &a) in analytic_i.iter().enumerate() {
            let orig = params.get(i).data()[j];
            params.get_mut(i).data_mut()[j] = orig + h;
            let plus = eval(params);
            params.get_mut(i).data_mut()[j] = orig - h;
            let minus = eval(params);
            params.get_mut(i).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = relative_error(a, numeric);
            if rel > entry.max_rel_error {
                entry.max_rel_error = rel;
                entry.worst_index = j;
            }
            entry.max_abs_error = entry.max_abs_error.max((a - numeric).abs());
        }
        entries.push(entry);
    }
    GradCheckReport { entries, tolerance }
}
