//! Central finite-difference validation of analytic gradients.
//!
//! Relative error is `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`. Probes whose
//! `+h` / `-h` evaluations change any ReLU on/off pattern straddle a kink,
//! where the loss is not differentiable; those probes are skipped and counted.

use std::ops::Range;

use rand::seq::index::sample as sample_indices;
use serde::Serialize;

use crate::augment::KeyBundle;
use crate::error::Result;
use crate::loss::NceConfig;
use crate::model::{loss_and_grad, loss_with_pattern, LossWeights, Model, ModelGrad};
use crate::nn::{Mlp, ParamGrad};
use crate::rng::{derive_seed, stream};
use crate::scene::Sample;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Named slice of a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Segment {
    pub name: String,
    pub range: Range<usize>,
}

/// Loss value plus a fingerprint of the piecewise-linear region it was evaluated in.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub value: f64,
    pub pattern: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentError {
    pub name: String,
    pub max_relative_error: f64,
    pub probes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub label: String,
    pub segments: Vec<SegmentError>,
    pub max_relative_error: f64,
    pub probes: usize,
    pub skipped_at_kinks: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn summary(&self) -> String {
        format!(
            "{:<28} {} max rel err {:.3e} over {} probes ({} skipped at kinks), tol {:.0e}",
            self.label,
            if self.passed { "PASS" } else { "FAIL" },
            self.max_relative_error,
            self.probes,
            self.skipped_at_kinks,
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compare `analytic` against central differences of `eval` at `probes`.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_check<F>(
    label: &str,
    x0: &[f64],
    analytic: &[f64],
    segments: &[Segment],
    probes: &[usize],
    step: f64,
    tolerance: f64,
    mut eval: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    assert_eq!(x0.len(), analytic.len(), "gradient length must match parameters");
    let base = eval(x0)?;
    let mut x = x0.to_vec();
    let mut per_segment: Vec<SegmentError> = segments
        .iter()
        .map(|s| SegmentError {
            name: s.name.clone(),
            max_relative_error: 0.0,
            probes: 0,
        })
        .collect();
    let mut skipped = 0;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for &i in probes {
        x[i] = x0[i] + step;
        let plus = eval(&x)?;
        x[i] = x0[i] - step;
        let minus = eval(&x)?;
        x[i] = x0[i];
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            skipped += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        checked += 1;
        worst = worst.max(err);
        if let Some(seg) = segments.iter().position(|s| s.range.contains(&i)) {
            let s = &mut per_segment[seg];
            s.max_relative_error = s.max_relative_error.max(err);
            s.probes += 1;
        }
    }
    Ok(GradCheckReport {
        label: label.to_string(),
        segments: per_segment,
        max_relative_error: worst,
        probes: checked,
        skipped_at_kinks: skipped,
        tolerance,
        passed: worst < tolerance && checked > 0,
    })
}

/// Segments `"<prefix>layer<k>.weight"` / `"...bias"` for one network, starting at `offset`.
pub fn mlp_segments(net: &Mlp, prefix: &str, offset: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut k = offset;
    for (i, l) in net.layers().iter().enumerate() {
        let nw = l.weights().len();
        out.push(Segment {
            name: format!("{prefix}layer{i}.weight"),
            range: k..k + nw,
        });
        k += nw;
        out.push(Segment {
            name: format!("{prefix}layer{i}.bias"),
            range: k..k + l.bias().len(),
        });
        k += l.bias().len();
    }
    out
}

/// `n` distinct probe indices in `0..len`, or all of them when `n >= len`.
pub fn choose_probes(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut v = sample_indices(&mut stream(seed, &[0x9c]), len, n).into_vec();
    v.sort_unstable();
    v
}

/// Check every parameter of `net` for the scalar `loss(output)` at `input`.
///
/// `loss` returns the value and its gradient with respect to the output.
pub fn grad_check<L>(net: &Mlp, input: &[f64], loss: L, tolerance: f64) -> Result<GradCheckReport>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (out, trace) = net.forward(input)?;
    let (_, upstream) = loss(&out);
    let (grad, _) = net.backward(&trace, &upstream)?;
    let x0 = net.flat_params();
    let analytic = grad.flatten();
    let probes: Vec<usize> = (0..x0.len()).collect();
    let mut probe_net = net.clone();
    finite_difference_check(
        net.name(),
        &x0,
        &analytic,
        &mlp_segments(net, "", 0),
        &probes,
        DEFAULT_STEP,
        tolerance,
        |x| {
            probe_net.set_flat_params(x)?;
            let (out, trace) = probe_net.forward(input)?;
            Ok(Evaluation {
                value: loss(&out).0,
                pattern: trace.activation_pattern(&probe_net),
            })
        },
    )
}

/// Analytic input gradient against central differences, for one network.
pub fn input_grad_check<L>(net: &Mlp, input: &[f64], loss: L, tolerance: f64) -> Result<GradCheckReport>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (out, trace) = net.forward(input)?;
    let (_, upstream) = loss(&out);
    let mut scratch = ParamGrad::zeros_like(net);
    let d_input = net.backward_into(&trace, &upstream, &mut scratch)?;
    let probes: Vec<usize> = (0..input.len()).collect();
    let segments = [Segment {
        name: "input".into(),
        range: 0..input.len(),
    }];
    finite_difference_check(
        &format!("{} input", net.name()),
        input,
        &d_input,
        &segments,
        &probes,
        DEFAULT_STEP,
        tolerance,
        |x| {
            let (out, trace) = net.forward(x)?;
            Ok(Evaluation {
                value: loss(&out).0,
                pattern: trace.activation_pattern(net),
            })
        },
    )
}

/// Probe settings for [`model_grad_check`].
#[derive(Debug, Clone, Copy)]
pub struct ProbeOptions {
    pub probes_per_net: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            probes_per_net: 100,
            step: DEFAULT_STEP,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Check `analytic` (a full model gradient) against central differences of
/// the combined loss, one report per network.
pub fn check_model_gradient(
    model: &Model,
    sample: &Sample,
    bundles: &[KeyBundle],
    nce: &NceConfig,
    weights: LossWeights,
    analytic: &ModelGrad,
    opts: &ProbeOptions,
) -> Result<Vec<GradCheckReport>> {
    let x0 = model.flat_params();
    let flat = analytic.flatten();
    let mut probe_model = model.clone();
    let mut reports = Vec::new();
    let mut offset = 0;
    for (k, net) in model.nets().iter().enumerate() {
        let n = net.n_params();
        let probes: Vec<usize> = choose_probes(n, opts.probes_per_net, derive_seed(opts.seed, &[k as u64]))
            .into_iter()
            .map(|i| i + offset)
            .collect();
        let segments = mlp_segments(net, &format!("{}.", net.name()), offset);
        reports.push(finite_difference_check(
            net.name(),
            &x0,
            &flat,
            &segments,
            &probes,
            opts.step,
            opts.tolerance,
            |x| {
                probe_model.set_flat_params(x)?;
                let (value, pattern) = loss_with_pattern(&probe_model, sample, bundles, nce, weights)?;
                Ok(Evaluation { value, pattern })
            },
        )?);
        offset += n;
    }
    Ok(reports)
}

/// Analytic gradients of the combined loss against central differences, per network.
pub fn model_grad_check(
    model: &Model,
    sample: &Sample,
    bundles: &[KeyBundle],
    nce: &NceConfig,
    weights: LossWeights,
    opts: &ProbeOptions,
) -> Result<Vec<GradCheckReport>> {
    let analytic = loss_and_grad(model, sample, bundles, nce, weights)?.grad;
    check_model_gradient(model, sample, bundles, nce, weights, &analytic, opts)
}
