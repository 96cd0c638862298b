//! Registry of finite-difference gradient checks over every differentiable
//! operation, run in `f64`.
//!
//! Batch renormalization treats `r` and `d` as constants in the backward
//! pass, so its checks place the moving statistics far from the batch
//! statistics where both corrections sit on their clip bounds and the
//! stop-gradient is exact.

use crate::anchors::AnchorSet;
use crate::dataset::ObjectLabel;
use crate::geometry::BBox;
use crate::head::{build_targets, total_loss, GridPrediction, LossConfig};
use crate::nn::activation::LeakyRelu;
use crate::nn::gradcheck::{check_input, check_params, check_vector, GradReport};
use crate::nn::loss::{focal_sigmoid, focal_sigmoid_logit, focal_softmax_logits, sum_squared};
use crate::nn::ops::{concat_channels, split_channels, upsample2x, upsample2x_backward};
use crate::nn::{Conv2d, NormMode, NormState, Phase, ResidualUnit, Tensor, LEAKY_SLOPE};

pub const DEFAULT_TOL: f64 = 1e-5;

pub struct GradCase {
    pub name: &'static str,
    run: fn(f64) -> GradReport,
}

impl GradCase {
    pub fn run(&self, tol: f64) -> GradReport {
        let mut r = (self.run)(tol);
        r.name = self.name.to_string();
        r
    }
}

/// Deterministic smooth pseudo-random fill.
fn wave(shape: &[usize], seed: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + seed) * 0.917).sin()).collect()).expect("sized")
}

/// `sum(w * y)` with fixed weights, and its gradient `w`.
fn project(y: &Tensor<f64>) -> (f64, Tensor<f64>) {
    let w = wave(y.shape(), 0.5);
    (y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum(), w)
}

fn failed(name: &str, tol: f64, e: crate::Error) -> GradReport {
    GradReport::faulted(name, tol, e.to_string())
}

fn leaky(tol: f64) -> GradReport {
    let mut act = LeakyRelu::new(LEAKY_SLOPE);
    // keep inputs away from the kink
    let x = wave(&[2, 3, 4, 4], 0.0).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    check_input(
        "leaky",
        &x,
        &mut |x, back| {
            let (l, w) = project(&act.forward(x));
            Ok((l, back.then(|| act.backward(&w))))
        },
        tol,
        usize::MAX,
    )
}

fn conv(k: usize, s: usize, tol: f64) -> GradReport {
    let mut conv = Conv2d::<f64>::new(3, 4, k, s, true);
    conv.weight.value = wave(&[4, 3, k, k], 1.0).map(|v| v * 0.5);
    conv.bias.as_mut().expect("bias").value = wave(&[4], 2.0);
    let x = wave(&[2, 3, 5, 5], 7.0);
    let mut r = check_input(
        "conv",
        &x,
        &mut |x, back| {
            let (l, w) = project(&conv.forward(x)?);
            Ok((l, if back { Some(conv.backward(&w)?) } else { None }))
        },
        tol,
        usize::MAX,
    );
    r.merge(check_params(
        "conv",
        &mut conv,
        &mut |m, back| {
            let (l, w) = project(&m.forward(&x)?);
            if back {
                m.backward(&w)?;
            }
            Ok(l)
        },
        tol,
        usize::MAX,
    ));
    r
}

fn norm(mut norm: NormState<f64>, tol: f64) -> GradReport {
    norm.update_stats = false;
    norm.gamma.value = wave(&[3], 4.0).map(|v| v + 1.5);
    norm.beta.value = wave(&[3], 5.0);
    let x = wave(&[2, 3, 3, 3], 9.0).map(|v| v * 2.0 + 0.3);
    let mut r = check_input(
        "norm",
        &x,
        &mut |x, back| {
            let (l, w) = project(&norm.forward(x, Phase::Train)?);
            Ok((l, if back { Some(norm.backward(&w)?) } else { None }))
        },
        tol,
        usize::MAX,
    );
    r.merge(check_params(
        "norm",
        &mut norm,
        &mut |m, back| {
            let (l, w) = project(&m.forward(&x, Phase::Train)?);
            if back {
                m.backward(&w)?;
            }
            Ok(l)
        },
        tol,
        usize::MAX,
    ));
    r
}

fn renorm_clipped() -> NormState<f64> {
    let mut n = NormState::new(3, NormMode::renorm());
    n.moving_var.fill(100.0);
    n.moving_mean.fill(-30.0);
    n
}

fn residual(mode: NormMode, tol: f64) -> GradReport {
    let mut unit = ResidualUnit::<f64>::new(2, mode);
    unit.reduce.conv.weight.value = wave(&[1, 2, 1, 1], 1.0);
    unit.expand.conv.weight.value = wave(&[2, 1, 3, 3], 2.0);
    for n in [&mut unit.reduce.norm, &mut unit.expand.norm] {
        n.update_stats = false;
        if mode.is_renorm() {
            n.moving_var.fill(1e4);
            n.moving_mean.fill(300.0);
        }
    }
    let x = wave(&[1, 2, 4, 4], 3.0);
    let mut r = check_input(
        "residual",
        &x,
        &mut |x, back| {
            let (l, w) = project(&unit.forward(x, Phase::Train)?);
            Ok((l, if back { Some(unit.backward(&w)?) } else { None }))
        },
        tol,
        usize::MAX,
    );
    r.merge(check_params(
        "residual",
        &mut unit,
        &mut |m, back| {
            let (l, w) = project(&m.forward(&x, Phase::Train)?);
            if back {
                m.backward(&w)?;
            }
            Ok(l)
        },
        tol,
        usize::MAX,
    ));
    r
}

fn upsample_concat(tol: f64) -> GradReport {
    let skip = wave(&[2, 2, 4, 4], 8.0);
    let x = wave(&[2, 3, 2, 2], 1.0);
    check_input(
        "upsample+concat",
        &x,
        &mut |x, back| {
            let y = concat_channels(&upsample2x(x), &skip)?;
            let (l, w) = project(&y);
            let g = back.then(|| upsample2x_backward(&split_channels(&w, 3).0));
            Ok((l, g))
        },
        tol,
        usize::MAX,
    )
}

fn focal_sigmoid_case(tol: f64) -> GradReport {
    let mut r: Option<GradReport> = None;
    for target in [true, false] {
        let xs = [-3.0, -0.4, 0.2, 2.5];
        let g: Vec<f64> = xs.iter().map(|&t| focal_sigmoid_logit(t, target, 2.0).1).collect();
        let a = check_vector(
            "focal sigmoid",
            &mut |v| Ok(v.iter().map(|&t| focal_sigmoid_logit(t, target, 2.0).0).sum()),
            &xs,
            &g,
            tol,
            usize::MAX,
        );
        let ys = [0.05, 0.4, 0.7, 0.95];
        let g: Vec<f64> = ys.iter().map(|&y| focal_sigmoid(y, target, 2.0).1).collect();
        let b = check_vector(
            "focal sigmoid",
            &mut |v| Ok(v.iter().map(|&y| focal_sigmoid(y, target, 2.0).0).sum()),
            &ys,
            &g,
            tol,
            usize::MAX,
        );
        for x in [a, b] {
            match &mut r {
                Some(acc) => acc.merge(x),
                None => r = Some(x),
            }
        }
    }
    r.expect("at least one check")
}

fn focal_softmax_case(tol: f64) -> GradReport {
    let z = [0.3, -1.1, 2.0, 0.7];
    let mut r = check_vector("focal softmax", &mut |v| Ok(focal_softmax_logits(v, 1, 0.0).0), &z, &focal_softmax_logits(&z, 1, 0.0).1, tol, usize::MAX);
    for gamma in [1.0, 2.0] {
        let (_, g) = focal_softmax_logits(&z, 2, gamma);
        r.merge(check_vector(
            "focal softmax",
            &mut |v| Ok(focal_softmax_logits(v, 2, gamma).0),
            &z,
            &g,
            tol,
            usize::MAX,
        ));
    }
    r
}

fn sse(tol: f64) -> GradReport {
    let target = wave(&[7], 3.0);
    check_input(
        "sum squared",
        &wave(&[7], 1.0),
        &mut |x, _| {
            let (l, g) = sum_squared(x, &target)?;
            Ok((l, Some(g)))
        },
        tol,
        usize::MAX,
    )
}

/// Two toy images' labels in a `size` frame.
fn toy_labels(size: f64) -> Vec<Vec<ObjectLabel>> {
    let s = size / 64.0;
    let b = |x0: f64, y0: f64, x1: f64, y1: f64| BBox::new(x0 * s, y0 * s, x1 * s, y1 * s);
    vec![
        vec![
            ObjectLabel { category: 0, bbox: b(5.0, 9.0, 14.0, 50.0) },
            ObjectLabel { category: 2, bbox: b(30.0, 30.0, 60.0, 58.0) },
        ],
        vec![ObjectLabel { category: 3, bbox: b(1.0, 40.0, 63.0, 52.0) }],
    ]
}

fn head_loss(tol: f64) -> GradReport {
    let anchors = AnchorSet::bridge_default().scaled(0.25);
    let t = match build_targets(&toy_labels(64.0), &anchors, 64, 4, 0.3) {
        Ok(t) => t,
        Err(e) => return failed("head loss", tol, e),
    };
    let mut g = GridPrediction::<f64>::zeros(t.batch, t.input_size, t.num_classes);
    for (li, l) in g.levels.iter_mut().enumerate() {
        for (i, v) in l.data.data_mut().iter_mut().enumerate() {
            *v = ((i * 7 + li * 3) as f64 * 0.61).sin() * 1.5;
        }
    }
    let mut report: Option<GradReport> = None;
    for gamma in [0.0, 2.0] {
        let cfg = LossConfig { gamma, ..LossConfig::default() };
        let grad = match total_loss(&g, &t, &cfg) {
            Ok((_, grad)) => grad,
            Err(e) => return failed("head loss", tol, e),
        };
        for li in 0..3 {
            let x = g.levels[li].data.data().to_vec();
            let r = check_vector(
                "head loss",
                &mut |v| {
                    let mut probe = g.clone();
                    probe.levels[li].data.data_mut().copy_from_slice(v);
                    Ok(total_loss(&probe, &t, &cfg)?.0.total)
                },
                &x,
                grad.levels[li].data.data(),
                tol,
                300,
            );
            match &mut report {
                Some(acc) => acc.merge(r),
                None => report = Some(r),
            }
        }
    }
    report.expect("three levels")
}

pub fn gradient_registry() -> Vec<GradCase> {
    vec![
        GradCase { name: "leaky_relu", run: leaky },
        GradCase { name: "conv_k3_s1", run: |t| conv(3, 1, t) },
        GradCase { name: "conv_k3_s2", run: |t| conv(3, 2, t) },
        GradCase { name: "conv_k1_s1", run: |t| conv(1, 1, t) },
        GradCase { name: "batchnorm_train", run: |t| norm(NormState::new(3, NormMode::BatchNorm), t) },
        GradCase { name: "batchrenorm_train", run: |t| norm(renorm_clipped(), t) },
        GradCase { name: "residual_bn", run: |t| residual(NormMode::BatchNorm, t) },
        GradCase { name: "residual_br", run: |t| residual(NormMode::renorm(), t) },
        GradCase { name: "upsample_concat", run: upsample_concat },
        GradCase { name: "focal_sigmoid", run: focal_sigmoid_case },
        GradCase { name: "focal_softmax", run: focal_softmax_case },
        GradCase { name: "sum_squared", run: sse },
        GradCase { name: "head_loss", run: head_loss },
    ]
}

pub fn run_gradient_suite(tol: f64) -> Vec<GradReport> {
    gradient_registry().iter().map(|c| c.run(tol)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_registered_check_passes() {
        for r in run_gradient_suite(DEFAULT_TOL) {
            assert!(r.passed, "{r:?}");
            assert!(r.checked > 0);
        }
    }

    /// The whole network at 32 px on two images. Leaky kinks sit within a
    /// 1e-5 step of some pre-activations here, so each probe shrinks the
    /// step until two successive estimates agree.
    #[test]
    fn whole_detector_gradient() {
        use crate::nn::gradcheck::{central_at, get_param, probe_indices, relative_error, set_param, STEP};
        use crate::error::Result;
        use crate::nn::{Module, Slot};
        use crate::train::{DetectorModel, ModelConfig};

        let size = 32usize;
        let anchors = AnchorSet::bridge_default().scaled(size as f64 / 416.0);
        let targets = build_targets(&toy_labels(size as f64), &anchors, size, 4, 0.3).unwrap();
        let mut model = DetectorModel::<f64>::new(ModelConfig::new(4, 1, NormMode::BatchNorm)).unwrap();
        model.init_xavier(3);
        model.set_update_stats(false);
        let cfg = LossConfig::default();
        let x = wave(&[2, 3, size, size], 0.3).map(|v| 0.5 + 0.4 * v);
        let objective = |m: &mut DetectorModel<f64>, back: bool| -> Result<f64> {
            let grid = m.forward(&x, Phase::Train)?;
            let (l, g) = total_loss(&grid, &targets, &cfg)?;
            if back {
                m.backward(&g)?;
            }
            m.clear_cache();
            Ok(l.total)
        };
        model.zero_grad();
        objective(&mut model, true).unwrap();
        let mut grads = Vec::new();
        model.visit("", &mut |n, s| {
            if let Slot::Param(p) = s {
                grads.push((n.to_string(), p.grad.data().to_vec()));
            }
        });
        let mut checked = 0;
        for (name, g) in grads {
            for i in probe_indices(g.len(), 4) {
                let orig = get_param(&mut model, &name, i);
                let mut f = |v: f64| {
                    set_param(&mut model, &name, i, v);
                    objective(&mut model, false)
                };
                // with no stable pair, roundoff dominates and the 1e-5 step stands
                let first = central_at(&mut f, orig, STEP).unwrap();
                let mut numeric = first;
                let mut prev = first;
                for h in [STEP / 10.0, STEP / 100.0] {
                    let next = central_at(&mut f, orig, h).unwrap();
                    if relative_error(prev, next) <= DEFAULT_TOL {
                        numeric = prev;
                        break;
                    }
                    prev = next;
                }
                set_param(&mut model, &name, i, orig);
                let err = relative_error(g[i], numeric);
                assert!(err <= 1e-4, "{name}[{i}] analytic {} numeric {numeric} rel {err}", g[i]);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = gradient_registry().iter().map(|c| c.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), gradient_registry().len());
    }
}

