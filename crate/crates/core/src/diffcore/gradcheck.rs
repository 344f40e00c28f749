use super::params::{Bindings, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and central-difference gradients at the worst entry.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub entries_checked: usize,
}

fn evaluate<F>(loss_fn: &mut F, params: &ParamStore) -> Result<(Tape, Bindings, Var)>
where
    F: FnMut(&mut Tape, &Bindings) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bindings)?;
    if tape.shape(loss) != [1, 1] {
        return Err(Error::shape("grad_check", "loss must be scalar"));
    }
    Ok((tape, bindings, loss))
}

/// Compares analytic gradients against central differences for every entry
/// of the parameters accepted by `select`. The loss closure must be
/// deterministic, including any sampler noise.
///
/// The per-entry error is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check<F>(
    mut loss_fn: F,
    params: &ParamStore,
    eps: f64,
    select: impl Fn(&str) -> bool,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape, &Bindings) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let (mut tape, bindings, loss) = evaluate(&mut loss_fn, params)?;
    let base = tape.value(loss).data()[0];
    if !base.is_finite() {
        return Err(Error::Numerical(format!(
            "loss is {base} at the unperturbed point"
        )));
    }
    tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        entries_checked: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params
        .names()
        .filter(|n| select(n))
        .map(str::to_string)
        .collect();
    for name in names {
        let analytic = tape.grad(bindings.get(&name)?);
        for i in 0..analytic.len() {
            let orig = probe.value(&name)?.data()[i];
            let mut side = |delta: f64| -> Result<f64> {
                probe.value_mut(&name)?.data_mut()[i] = orig + delta;
                let (t, _, l) = evaluate(&mut loss_fn, &probe)?;
                let v = t.value(l).data()[0];
                if !v.is_finite() {
                    return Err(Error::Numerical(format!(
                        "loss is {v} with {name}[{i}] perturbed by {delta:e}"
                    )));
                }
                Ok(v)
            };
            let plus = side(eps)?;
            let minus = side(-eps)?;
            probe.value_mut(&name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), i));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
