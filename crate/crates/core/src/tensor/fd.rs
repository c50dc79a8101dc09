use super::{ParamSet, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// max over elements of |analytic - central| / (|analytic| + |central| + 1e-12)
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: Option<(String, usize)>,
    /// Analytic and central-difference values at `worst`.
    pub worst_values: (f64, f64),
    pub n_checked: usize,
    pub n_non_finite: usize,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.n_non_finite == 0 && self.max_rel_error < tol
    }
}

/// Compares reverse-mode gradients of `loss` against central differences,
/// element by element over every parameter in `params`.
pub fn finite_difference_check<F>(params: &ParamSet, epsilon: f64, loss: F) -> Result<FdReport>
where
    F: Fn(&mut Tape, &ParamSet) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::contract(
            "finite_difference_check",
            format!("epsilon {epsilon} outside [1e-7, 1e-3]"),
        ));
    }
    let mut tape = Tape::new();
    let out = loss(&mut tape, params)?;
    let grads = tape.backward(out)?;

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let v = loss(&mut tape, p)?;
        Ok(tape.scalar(v))
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        n_checked: 0,
        n_non_finite: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let n = params.get(&name).map_or(0, |t| t.numel());
        let analytic = grads
            .param(&name)
            .map(<[f64]>::to_vec)
            .unwrap_or(vec![0.0; n]);
        for i in 0..n {
            let orig = params.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + epsilon;
            let up = eval(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - epsilon;
            let down = eval(&probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;

            let central = (up - down) / (2.0 * epsilon);
            report.n_checked += 1;
            if !central.is_finite() || !analytic[i].is_finite() {
                report.n_non_finite += 1;
                report.max_rel_error = f64::INFINITY;
                report.worst = Some((name.clone(), i));
                continue;
            }
            let rel = (analytic[i] - central).abs() / (analytic[i].abs() + central.abs() + 1e-12);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
                report.worst_values = (analytic[i], central);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut ps = ParamSet::new();
        ps.insert("x", Tensor::scalar(2.0));
        let r = finite_difference_check(&ps, 1e-5, |tape, p| {
            let x = tape.param(p, "x")?;
            let y = tape.square(x);
            Ok(tape.sum(y))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn linear_is_at_rounding_level() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap());
        let r = finite_difference_check(&ps, 1e-6, |tape, p| {
            let w = tape.param(p, "w")?;
            let s = tape.scale(w, 3.0);
            Ok(tape.sum(s))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn rejects_out_of_range_epsilon() {
        let ps = ParamSet::new();
        let r = finite_difference_check(&ps, 0.1, |tape, _| Ok(tape.constant(Tensor::scalar(0.0))));
        assert!(r.is_err());
    }
}
