//! Central finite-difference gradient checking in `f64`.

use serde::Serialize;

use super::param::{Module, Slot};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-4;

/// Relative error `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst: Option<String>,
    pub tol: f64,
    pub passed: bool,
    pub fault: Option<String>,
}

impl GradReport {
    fn new(name: &str, tol: f64) -> Self {
        GradReport {
            name: name.to_string(),
            checked: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst: None,
            tol,
            passed: true,
            fault: None,
        }
    }

    /// A report for a check that could not run.
    pub fn faulted(name: &str, tol: f64, message: String) -> Self {
        let mut r = GradReport::new(name, tol);
        r.fail(message);
        r
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let rel = relative_error(analytic, numeric);
        self.max_abs_err = self.max_abs_err.max((analytic - numeric).abs());
        if rel > self.max_rel_err || !rel.is_finite() {
            self.max_rel_err = rel;
            self.worst = Some(format!("{} analytic={analytic:.6e} numeric={numeric:.6e}", label()));
        }
    }

    fn fail(&mut self, message: String) {
        self.fault = Some(message);
        self.passed = false;
    }

    fn finish(mut self) -> Self {
        self.passed = self.fault.is_none() && self.max_rel_err.is_finite() && self.max_rel_err <= self.tol;
        self
    }

    /// Merges `other` into `self`, keeping the worst error.
    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        if other.max_rel_err > self.max_rel_err || !other.max_rel_err.is_finite() {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        if other.fault.is_some() {
            self.fault = other.fault;
        }
        self.passed = self.fault.is_none() && self.max_rel_err <= self.tol;
    }
}

/// Indices to probe in a tensor of length `n`: all of them when `n <= max`,
/// otherwise an even stride that always includes both ends.
pub fn probe_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    if max < 2 {
        return (0..max.min(n)).collect();
    }
    (0..max).map(|j| j * (n - 1) / (max - 1)).collect()
}

fn central(f: &mut dyn FnMut(f64) -> Result<f64>, x: f64) -> Result<f64> {
    central_at(f, x, STEP)
}

/// Central difference of `f` at `x` with step `h`.
pub fn central_at(f: &mut dyn FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    let plus = f(x + h)?;
    let minus = f(x - h)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite("gradcheck objective".into()));
    }
    Ok((plus - minus) / (2.0 * h))
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check_vector(
    name: &str,
    f: &mut dyn FnMut(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: &[f64],
    tol: f64,
    max_coords: usize,
) -> GradReport {
    let mut report = GradReport::new(name, tol);
    if analytic.len() != x.len() {
        report.fail(format!("gradient has {} entries for {} inputs", analytic.len(), x.len()));
        return report.finish();
    }
    let mut probe = x.to_vec();
    for i in probe_indices(x.len(), max_coords) {
        let numeric = central(
            &mut |v| {
                probe[i] = v;
                let out = f(&probe);
                probe[i] = x[i];
                out
            },
            x[i],
        );
        match numeric {
            Ok(n) => report.record(|| format!("{name}[{i}]"), analytic[i], n),
            Err(e) => {
                report.fail(e.to_string());
                break;
            }
        }
    }
    report.finish()
}

/// Input-gradient check for a tensor function. `f` returns the scalar
/// objective and, when asked, its gradient with respect to the input.
pub fn check_input(
    name: &str,
    x: &Tensor<f64>,
    f: &mut dyn FnMut(&Tensor<f64>, bool) -> Result<(f64, Option<Tensor<f64>>)>,
    tol: f64,
    max_coords: usize,
) -> GradReport {
    let analytic = match f(x, true) {
        Ok((_, Some(g))) => g,
        Ok((_, None)) => {
            let mut r = GradReport::new(name, tol);
            r.fail("objective returned no gradient".into());
            return r.finish();
        }
        Err(e) => {
            let mut r = GradReport::new(name, tol);
            r.fail(e.to_string());
            return r.finish();
        }
    };
    let shape = x.shape().to_vec();
    check_vector(
        name,
        &mut |v| {
            let t = Tensor::from_vec(&shape, v.to_vec())?;
            Ok(f(&t, false)?.0)
        },
        x.data(),
        analytic.data(),
        tol,
        max_coords,
    )
}

/// Parameter-gradient check over every param of `module`.
///
/// `objective(module, backward)` must run a forward pass, return the scalar
/// loss and, when `backward` is true, accumulate parameter gradients.
pub fn check_params<M: Module<f64>>(
    name: &str,
    module: &mut M,
    objective: &mut dyn FnMut(&mut M, bool) -> Result<f64>,
    tol: f64,
    max_coords_per_tensor: usize,
) -> GradReport {
    let mut report = GradReport::new(name, tol);
    module.zero_grad();
    if let Err(e) = objective(module, true) {
        report.fail(e.to_string());
        return report.finish();
    }
    let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
    module.visit("", &mut |n, s| {
        if let Slot::Param(p) = s {
            grads.push((n.to_string(), p.grad.data().to_vec()));
        }
    });
    for (pname, grad) in grads {
        for i in probe_indices(grad.len(), max_coords_per_tensor) {
            let original = get_param(module, &pname, i);
            let numeric = central(
                &mut |v| {
                    set_param(module, &pname, i, v);
                    objective(module, false)
                },
                original,
            );
            set_param(module, &pname, i, original);
            match numeric {
                Ok(n) => report.record(|| format!("{pname}[{i}]"), grad[i], n),
                Err(e) => {
                    report.fail(e.to_string());
                    return report.finish();
                }
            }
        }
    }
    report.finish()
}

pub(crate) fn get_param<M: Module<f64>>(module: &mut M, name: &str, i: usize) -> f64 {
    let mut out = f64::NAN;
    module.visit("", &mut |n, s| {
        if let Slot::Param(p) = s {
            if n == name {
                out = p.value.data()[i];
            }
        }
    });
    out
}

pub(crate) fn set_param<M: Module<f64>>(module: &mut M, name: &str, i: usize, v: f64) {
    module.visit("", &mut |n, s| {
        if let Slot::Param(p) = s {
            if n == name {
                p.value.data_mut()[i] = v;
            }
        }
    });
}
