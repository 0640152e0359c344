//! Central-difference gradient oracle.

use super::{OpKind, ParamStore, Tape, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    /// Folds per-parameter entries into groups keyed by `group(name)`,
    /// preserving first-seen order.
    pub fn grouped(&self, group: impl Fn(&str) -> String) -> Vec<GradcheckEntry> {
        let mut out: Vec<GradcheckEntry> = Vec::new();
        for e in &self.entries {
            let key = group(&e.name);
            match out.iter_mut().find(|g| g.name == key) {
                Some(g) => {
                    g.coords += e.coords;
                    g.max_rel_error = g.max_rel_error.max(e.max_rel_error);
                }
                None => out.push(GradcheckEntry {
                    name: key,
                    ..e.clone()
                }),
            }
        }
        out
    }
}

/// Compares `backward()` against central differences for every coordinate of
/// every parameter in `store`. The error per coordinate is
/// `|analytic - numeric| / max(1, |numeric|)`.
///
/// `f` must build the scalar loss on the tape it is given and be
/// deterministic in the parameter values.
pub fn finite_diff_check<F>(store: &mut ParamStore, f: F, h: f64) -> Result<GradcheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    finite_diff_check_with(store, f, h, None)
}

/// As [`finite_diff_check`], optionally corrupting one backward rule.
pub fn finite_diff_check_with<F>(
    store: &mut ParamStore,
    f: F,
    h: f64,
    fault: Option<OpKind>,
) -> Result<GradcheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = match fault {
        Some(kind) => Tape::with_fault(kind),
        None => Tape::new(),
    };
    let loss = f(store, &mut tape)?;
    tape.backward(loss, store)?;
    drop(tape);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let v = f(store, &mut tape)?;
        Ok(tape.value(v).item())
    };

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut entries = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.get(id).value.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = store.get(id).grad.data()[i];
            let err = (analytic - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
        entries.push(GradcheckEntry {
            name: store.get(id).name.clone(),
            coords: n,
            max_rel_error: worst,
        });
    }
    Ok(GradcheckReport { entries })
}
