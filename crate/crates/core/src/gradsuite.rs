//! Finite-difference checks of every backward pass, evaluated in `f64`.
//!
//! Each target draws random inputs and parameters, projects the output on
//! a random tensor to get a scalar loss, and compares the analytic gradient
//! of every input and parameter coordinate with central differences.
//! Points too close to a relu kink or a max-pool tie are redrawn.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::aads::{aads_down, aads_down_backward, aads_down_taped, make_blur_kernel};
use crate::backbone::{micro_spec, param_slots, Network};
use crate::dcac::{dcac_backward, dcac_forward, dcac_forward_taped, DcacParams, DcacSpec};
use crate::error::{Error, Result};
use crate::nn::gradcheck::{pack, projection_loss, unpack};
use crate::nn::{
    act, act_backward, act_taped, batchnorm, batchnorm_backward, batchnorm_taped, conv2d, conv2d_backward,
    conv2d_taped, finite_diff_check, linear, linear_backward, linear_taped, maxpool2d, maxpool2d_backward,
    maxpool2d_taped, softmax_xent, softmax_xent_backward, upsample_nearest, upsample_nearest_backward,
    Activation, BnParams, ConvParams, GradCheckReport, LinearParams, Mode,
};
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    Conv,
    BatchNorm,
    Relu,
    Sigmoid,
    Linear,
    Xent,
    MaxPool,
    Upsample,
    Aads,
    Dcac,
    Backbone,
}

impl GradTarget {
    pub const ALL: [GradTarget; 11] = [
        GradTarget::Conv,
        GradTarget::BatchNorm,
        GradTarget::Relu,
        GradTarget::Sigmoid,
        GradTarget::Linear,
        GradTarget::Xent,
        GradTarget::MaxPool,
        GradTarget::Upsample,
        GradTarget::Aads,
        GradTarget::Dcac,
        GradTarget::Backbone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradTarget::Conv => "conv",
            GradTarget::BatchNorm => "batchnorm",
            GradTarget::Relu => "relu",
            GradTarget::Sigmoid => "sigmoid",
            GradTarget::Linear => "linear",
            GradTarget::Xent => "xent",
            GradTarget::MaxPool => "maxpool",
            GradTarget::Upsample => "upsample",
            GradTarget::Aads => "aads",
            GradTarget::Dcac => "dcac",
            GradTarget::Backbone => "backbone",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| t.name() == name)
    }

    /// Largest acceptable relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            GradTarget::Conv | GradTarget::Aads => 1e-5,
            GradTarget::BatchNorm | GradTarget::Dcac => 1e-4,
            GradTarget::Relu | GradTarget::Sigmoid | GradTarget::Xent => 1e-6,
            GradTarget::Linear | GradTarget::MaxPool | GradTarget::Upsample => 1e-7,
            GradTarget::Backbone => 1e-3,
        }
    }

    pub fn run(self, seed: u64) -> Result<GradCheckReport> {
        let mut rng = Rng::new(seed);
        match self {
            GradTarget::Conv => check_conv(&mut rng),
            GradTarget::BatchNorm => check_batchnorm(&mut rng),
            GradTarget::Relu => check_act(&mut rng, Activation::Relu),
            GradTarget::Sigmoid => check_act(&mut rng, Activation::Sigmoid),
            GradTarget::Linear => check_linear(&mut rng),
            GradTarget::Xent => check_xent(&mut rng),
            GradTarget::MaxPool => check_maxpool(&mut rng),
            GradTarget::Upsample => check_upsample(&mut rng),
            GradTarget::Aads => check_aads(&mut rng),
            GradTarget::Dcac => check_dcac(&mut rng),
            GradTarget::Backbone => check_backbone(&mut rng),
        }
    }
}

const EPS: f64 = 1e-3;
const TRIES: usize = 64;

fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w).expect("positive dims")
}

fn rand(s: Shape, rng: &mut Rng) -> Tensor<f64> {
    Tensor::uniform(s, -1.0, 1.0, rng)
}

type Loss = Box<dyn FnMut(&[Tensor<f64>]) -> Result<f64>>;

/// Checks `loss` over the coordinates of `parts` against `analytic`
/// (laid out like `parts`).
fn compare(parts: &[Tensor<f64>], analytic: &[Tensor<f64>], eps: f64, mut loss: Loss) -> Result<GradCheckReport> {
    let shapes: Vec<Shape> = parts.iter().map(|t| t.shape()).collect();
    let point = pack(&parts.iter().collect::<Vec<_>>());
    let grad = pack(&analytic.iter().collect::<Vec<_>>());
    let mut failure = None;
    let report = finite_diff_check(
        |flat| match unpack(flat, &shapes).and_then(|t| loss(&t)) {
            Ok(v) => v,
            Err(e) => {
                failure = Some(e);
                f64::NAN
            }
        },
        &point,
        &grad,
        eps,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

fn no_clean_point(what: &str) -> Error {
    Error::arg(format!("gradient check: no {what} input away from kinks after {TRIES} draws"))
}

fn check_conv(rng: &mut Rng) -> Result<GradCheckReport> {
    let mut report: Option<GradCheckReport> = None;
    // (n, c_in, c_out, h, w, k, stride, groups, bias)
    let configs = [
        (2, 4, 6, 7, 6, 3, 1, 2, true),
        (1, 3, 4, 8, 8, 3, 2, 1, false),
        (2, 4, 4, 5, 5, 5, 1, 4, true),
        (1, 2, 3, 6, 6, 1, 1, 1, true),
    ];
    for (n, ci, co, h, w, k, stride, g, bias) in configs {
        let x = rand(sh(n, ci, h, w), rng);
        let wt = rand(sh(co, ci / g, k, k), rng);
        let b = rand(Shape::vector(co)?, rng);
        let p = ConvParams::same(wt.clone(), bias.then(|| b.clone()), stride, g)?;
        let (y, tape) = conv2d_taped(&x, &p)?;
        let r = rand(y.shape(), rng);
        let gr = conv2d_backward(&tape, &r)?;
        let mut parts = vec![x, wt];
        let mut analytic = vec![gr.x, gr.weight];
        if let Some(gb) = gr.bias {
            parts.push(b);
            analytic.push(gb);
        }
        let one = compare(
            &parts,
            &analytic,
            EPS,
            Box::new(move |t| {
                let p = ConvParams::same(t[1].clone(), t.get(2).cloned(), stride, g)?;
                Ok(projection_loss(&conv2d(&t[0], &p)?, &r))
            }),
        )?;
        report = Some(report.map_or(one, |a| a.merge(one)));
    }
    Ok(report.expect("configs"))
}

fn check_batchnorm(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = rand(sh(3, 4, 3, 3), rng);
    let mut p = BnParams::<f64>::identity(4)?;
    p.gamma = Tensor::uniform(Shape::vector(4)?, 0.5, 1.5, rng);
    p.beta = rand(Shape::vector(4)?, rng);
    let (y, tape) = batchnorm_taped(&x, &mut p.clone(), Mode::Train)?;
    let r = rand(y.shape(), rng);
    let g = batchnorm_backward(&tape, &r)?;
    let base = p.clone();
    compare(
        &[x, p.gamma.clone(), p.beta.clone()],
        &[g.x, g.gamma, g.beta],
        EPS,
        Box::new(move |t| {
            let mut q = base.clone();
            q.gamma = t[1].clone();
            q.beta = t[2].clone();
            Ok(projection_loss(&batchnorm(&t[0], &mut q, Mode::Train)?, &r))
        }),
    )
}

fn check_act(rng: &mut Rng, kind: Activation) -> Result<GradCheckReport> {
    for _ in 0..TRIES {
        let x = Tensor::<f64>::uniform(sh(2, 3, 4, 4), -4.0, 4.0, rng);
        let (y, tape) = act_taped(&x, kind);
        if tape.kink_margin() < 3.0 * EPS {
            continue;
        }
        let r = rand(y.shape(), rng);
        let g = act_backward(&tape, &r)?;
        return compare(
            &[x],
            &[g],
            EPS,
            Box::new(move |t| Ok(projection_loss(&act(&t[0], kind), &r))),
        );
    }
    Err(no_clean_point("activation"))
}

fn check_linear(rng: &mut Rng) -> Result<GradCheckReport> {
    let x = rand(sh(3, 5, 2, 1), rng);
    let p = LinearParams::new(rand(sh(4, 10, 1, 1), rng), rand(Shape::vector(4)?, rng))?;
    let (y, tape) = linear_taped(&x, &p)?;
    let r = rand(y.shape(), rng);
    let g = linear_backward(&tape, &r)?;
    compare(
        &[x, p.weight, p.bias],
        &[g.x, g.weight, g.bias],
        EPS,
        Box::new(move |t| {
            let p = LinearParams::new(t[1].clone(), t[2].clone())?;
            Ok(projection_loss(&linear(&t[0], &p)?, &r))
        }),
    )
}

fn check_xent(rng: &mut Rng) -> Result<GradCheckReport> {
    let logits = Tensor::<f64>::uniform(sh(4, 5, 1, 1), -3.0, 3.0, rng);
    let labels: Vec<usize> = (0..4).map(|_| rng.below(5)).collect();
    let (_, tape) = softmax_xent(&logits, &labels)?;
    let g = softmax_xent_backward(&tape);
    compare(
        &[logits],
        &[g],
        EPS,
        Box::new(move |t| Ok(softmax_xent(&t[0], &labels)?.0)),
    )
}

fn check_maxpool(rng: &mut Rng) -> Result<GradCheckReport> {
    let mut report: Option<GradCheckReport> = None;
    for (k, s) in [(2, 2), (3, 3), (1, 1)] {
        let mut done = false;
        for _ in 0..TRIES {
            let x = rand(sh(2, 3, 6, 6), rng);
            let (y, tape) = maxpool2d_taped(&x, k, s)?;
            if k > 1 && tape.kink_margin() < 10.0 * EPS {
                continue;
            }
            let r = rand(y.shape(), rng);
            let g = maxpool2d_backward(&tape, &r)?;
            let one = compare(
                &[x],
                &[g],
                EPS,
                Box::new(move |t| Ok(projection_loss(&maxpool2d(&t[0], k, s)?, &r))),
            )?;
            report = Some(report.map_or(one, |a| a.merge(one)));
            done = true;
            break;
        }
        if !done {
            return Err(no_clean_point("max-pool"));
        }
    }
    Ok(report.expect("configs"))
}

fn check_upsample(rng: &mut Rng) -> Result<GradCheckReport> {
    let mut report: Option<GradCheckReport> = None;
    for f in [1, 2, 3] {
        let x = rand(sh(2, 2, 3, 3), rng);
        let y = upsample_nearest(&x, f)?;
        let r = rand(y.shape(), rng);
        let g = upsample_nearest_backward(x.shape(), f, &r)?;
        let one = compare(
            &[x],
            &[g],
            EPS,
            Box::new(move |t| Ok(projection_loss(&upsample_nearest(&t[0], f)?, &r))),
        )?;
        report = Some(report.map_or(one, |a| a.merge(one)));
    }
    Ok(report.expect("factors"))
}

fn check_aads(rng: &mut Rng) -> Result<GradCheckReport> {
    let mut report: Option<GradCheckReport> = None;
    for k in [1, 3, 5, 7] {
        let kernel = make_blur_kernel(k)?;
        let x = rand(sh(2, 2, 8, 6), rng);
        let (y, tape) = aads_down_taped(&x, &kernel)?;
        let r = rand(y.shape(), rng);
        let g = aads_down_backward(&tape, &r)?;
        let one = compare(
            &[x],
            &[g],
            EPS,
            Box::new(move |t| Ok(projection_loss(&aads_down(&t[0], &kernel)?, &r))),
        )?;
        report = Some(report.map_or(one, |a| a.merge(one)));
    }
    Ok(report.expect("kernels"))
}

fn check_dcac(rng: &mut Rng) -> Result<GradCheckReport> {
    let specs = [
        (DcacSpec::new(4, 4, 2, 2), sh(1, 4, 8, 8)),
        (
            DcacSpec {
                n_emb: 2,
                groups_emb: 2,
                bias: true,
                bn: false,
                expand_output: true,
                ..DcacSpec::new(4, 6, 2, 2)
            },
            sh(2, 4, 6, 6),
        ),
        (
            DcacSpec {
                n_emb: 2,
                groups_emb: 2,
                ..DcacSpec::new(6, 4, 4, 1)
            },
            sh(2, 6, 5, 5),
        ),
    ];
    let mut report: Option<GradCheckReport> = None;
    for (spec, xs) in specs {
        let mut done = false;
        for _ in 0..TRIES {
            let mut p = DcacParams::<f64>::init(&spec, rng)?;
            // random affine terms so batch norm is not an identity map
            for bn in p.embed_bn.iter_mut() {
                bn.gamma = Tensor::uniform(bn.gamma.shape(), 0.5, 1.5, rng);
                bn.beta = Tensor::uniform(bn.beta.shape(), -0.5, 0.5, rng);
            }
            let x = rand(xs, rng);
            let (y, tape) = dcac_forward_taped(&x, &spec, &mut p.clone(), Mode::Train)?;
            if tape.kink_margin() < 3.0 * EPS {
                continue;
            }
            let r = rand(y.shape(), rng);
            let g = dcac_backward(&tape, &r)?;
            let mut parts = vec![x];
            parts.extend(p.to_tensors());
            let mut analytic = vec![g.x];
            analytic.extend(g.params);
            let spec2 = spec.clone();
            let one = compare(
                &parts,
                &analytic,
                EPS,
                Box::new(move |t| {
                    let mut q = DcacParams::from_tensors(&spec2, &t[1..])?;
                    Ok(projection_loss(&dcac_forward(&t[0], &spec2, &mut q, Mode::Train)?, &r))
                }),
            )?;
            report = Some(report.map_or(one, |a| a.merge(one)));
            done = true;
            break;
        }
        if !done {
            return Err(no_clean_point("dcac"));
        }
    }
    Ok(report.expect("specs"))
}

fn check_backbone(rng: &mut Rng) -> Result<GradCheckReport> {
    const EPS_NET: f64 = 1e-5;
    let spec = micro_spec();
    let slots = param_slots(&spec)?;
    for _ in 0..TRIES {
        let mut params = ModelParams::<f64>::init(slots.clone(), rng)?;
        for (s, t) in slots.iter().zip(params.tensors_mut()) {
            if matches!(s.kind, crate::params::SlotKind::BnGamma) {
                *t = Tensor::uniform(s.shape, 0.5, 1.5, rng);
            } else if matches!(s.kind, crate::params::SlotKind::BnBeta | crate::params::SlotKind::Bias) {
                *t = Tensor::uniform(s.shape, -0.5, 0.5, rng);
            }
        }
        let r0 = spec.input_res;
        let x = rand(sh(3, r0.c, r0.h, r0.w), rng);
        let mut net = Network::new(spec.clone(), params.clone())?;
        let (y, tape) = net.forward_taped(&x, Mode::Train)?;
        if tape.kink_margin() < 10.0 * EPS_NET {
            continue;
        }
        let r = rand(y.shape(), rng);
        let g = net.backward(&tape, &r)?;
        let mut parts = vec![x];
        parts.extend(params.tensors().iter().cloned());
        let mut analytic = vec![g.x];
        analytic.extend(g.params);
        let spec2 = spec.clone();
        let slots2 = slots.clone();
        return compare(
            &parts,
            &analytic,
            EPS_NET,
            Box::new(move |t| {
                let p = ModelParams::from_parts(slots2.clone(), t[1..].to_vec())?;
                let mut net = Network::new(spec2.clone(), p)?;
                Ok(projection_loss(&net.forward_taped(&t[0], Mode::Train)?.0, &r))
            }),
        );
    }
    Err(no_clean_point("backbone"))
}
