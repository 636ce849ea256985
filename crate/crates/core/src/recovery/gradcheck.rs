//! Central-difference verification of every hand-written backward pass.
//!
//! Each primitive is wrapped into a scalar `L = sum(r * op(x))` with a fixed
//! random `r` (the two loss paths are scalar already) and every input and
//! parameter is perturbed by `+-h`. The relative error is
//! `|analytic - numeric| / (|analytic| + 1e-8)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{radial_rms_with_grad, ssim_with_grad, LossWeights};
use super::network::{radn_backward, sample_loss, RadnHyper, RadnParams, Sample};
use super::ops::{
    channel_attention, channel_attention_backward, conv2d_backward, conv2d_forward, resize_backward,
    resize_forward, silu_backward, silu_forward, Attention, Conv2d,
};
use super::tensor::Tensor4;
use crate::imgcore::ImageF;
use crate::radial::LightCenter;

/// Seed of the default fixture set.
pub const DEFAULT_SEED: u64 = 0;
pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

/// Checked operations, in report order.
pub const OPS: [&str; 8] = [
    "conv2d_3x3",
    "conv2d_1x1",
    "silu",
    "channel_attention",
    "resize_bilinear",
    "ssim_loss",
    "radial_loss",
    "radn_end_to_end",
];

/// End-to-end instance size.
pub const E2E_HYPER: RadnHyper = RadnHyper {
    blocks: 1,
    growth_layers: 1,
    channels: 4,
};
pub const E2E_SIDE: usize = 16;
pub const E2E_WEIGHT_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpCheck {
    pub op: String,
    /// Number of scalar inputs and parameters compared.
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entry with the largest relative error and its two estimates.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub ops: Vec<OpCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.ops.iter().all(|o| o.passed)
    }
}

fn compare(op: &str, theta: &[f64], mut analytic: Vec<f64>, corrupt: Option<&str>, f: impl Fn(&[f64]) -> f64) -> OpCheck {
    if corrupt == Some(op) {
        analytic[0] = analytic[0] * 1.5 + 1e-3;
    }
    let mut probe = theta.to_vec();
    let (mut worst, mut at, mut numeric_at) = (0.0f64, 0, 0.0);
    for k in 0..theta.len() {
        probe[k] = theta[k] + STEP;
        let up = f(&probe);
        probe[k] = theta[k] - STEP;
        let down = f(&probe);
        probe[k] = theta[k];
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (analytic[k] - numeric).abs() / (analytic[k].abs() + 1e-8);
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        if rel > worst {
            (worst, at, numeric_at) = (rel, k, numeric);
        }
    }
    OpCheck {
        op: op.to_string(),
        checked: theta.len(),
        max_rel_error: worst,
        worst_index: at,
        worst_analytic: analytic[at],
        worst_numeric: numeric_at,
        passed: worst <= TOLERANCE,
    }
}

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_conv(op: &str, k: usize, rng: &mut impl Rng, corrupt: Option<&str>) -> OpCheck {
    let (n, ci, co, h, w) = (2, 3, 4, 7, 6);
    let x = Tensor4::from_vec(n, ci, h, w, uniform(n * ci * h * w, -1.0, 1.0, rng)).unwrap();
    let mut conv = Conv2d::zeros(co, ci, k);
    conv.weight = uniform(conv.weight.len(), -1.0, 1.0, rng);
    conv.bias = uniform(co, -1.0, 1.0, rng);
    let r = uniform(n * co * h * w, -1.0, 1.0, rng);

    let gout = Tensor4::from_vec(n, co, h, w, r.clone()).unwrap();
    let mut grad = conv.zeros_like();
    let gx = conv2d_backward(&x, &conv, &gout, &mut grad);
    let theta = [x.data.clone(), conv.weight.clone(), conv.bias.clone()].concat();
    let analytic = [gx.data, grad.weight, grad.bias].concat();
    let (nx, nw) = (x.data.len(), conv.weight.len());
    compare(op, &theta, analytic, corrupt, |t| {
        let xt = Tensor4::from_vec(n, ci, h, w, t[..nx].to_vec()).unwrap();
        let c = Conv2d {
            weight: t[nx..nx + nw].to_vec(),
            bias: t[nx + nw..].to_vec(),
            ..conv.clone()
        };
        dot(&conv2d_forward(&xt, &c).unwrap().data, &r)
    })
}

fn check_silu(rng: &mut impl Rng, corrupt: Option<&str>) -> OpCheck {
    let x = Tensor4::from_vec(1, 2, 5, 5, uniform(50, -3.0, 3.0, rng)).unwrap();
    let r = uniform(50, -1.0, 1.0, rng);
    let gx = silu_backward(&x, &Tensor4::from_vec(1, 2, 5, 5, r.clone()).unwrap());
    compare("silu", &x.data, gx.data, corrupt, |t| {
        dot(&silu_forward(&Tensor4::from_vec(1, 2, 5, 5, t.to_vec()).unwrap()).data, &r)
    })
}

fn check_attention(rng: &mut impl Rng, corrupt: Option<&str>) -> OpCheck {
    let (n, c, h, w) = (2, 4, 5, 6);
    let x = Tensor4::from_vec(n, c, h, w, uniform(n * c * h * w, -1.0, 1.5, rng)).unwrap();
    let mut att = Attention::zeros(c);
    for conv in [&mut att.squeeze, &mut att.excite] {
        conv.weight = uniform(conv.weight.len(), -1.0, 1.0, rng);
        conv.bias = uniform(conv.bias.len(), -0.5, 0.5, rng);
    }
    let r = uniform(x.data.len(), -1.0, 1.0, rng);
    let (_, cache) = channel_attention(&x, &att).unwrap();
    let mut grad = att.zeros_like();
    let gx = channel_attention_backward(&x, &att, &cache, &Tensor4::from_vec(n, c, h, w, r.clone()).unwrap(), &mut grad);

    let pieces = |a: &Attention| {
        [
            a.squeeze.weight.clone(),
            a.squeeze.bias.clone(),
            a.excite.weight.clone(),
            a.excite.bias.clone(),
        ]
    };
    let lens: Vec<usize> = pieces(&att).iter().map(Vec::len).collect();
    let theta = [vec![x.data.clone()], pieces(&att).to_vec()].concat().concat();
    let analytic = [vec![gx.data], pieces(&grad).to_vec()].concat().concat();
    let nx = x.data.len();
    compare("channel_attention", &theta, analytic, corrupt, |t| {
        let xt = Tensor4::from_vec(n, c, h, w, t[..nx].to_vec()).unwrap();
        let mut a = att.clone();
        let mut off = nx;
        for (dst, &len) in [&mut a.squeeze.weight, &mut a.squeeze.bias, &mut a.excite.weight, &mut a.excite.bias]
            .into_iter()
            .zip(&lens)
        {
            dst.copy_from_slice(&t[off..off + len]);
            off += len;
        }
        dot(&channel_attention(&xt, &a).unwrap().0.data, &r)
    })
}

fn check_resize(rng: &mut impl Rng, corrupt: Option<&str>) -> OpCheck {
    let x = Tensor4::from_vec(1, 2, 5, 6, uniform(60, -1.0, 1.0, rng)).unwrap();
    let (oh, ow) = (9, 11);
    let r = uniform(2 * oh * ow, -1.0, 1.0, rng);
    let gx = resize_backward(&Tensor4::from_vec(1, 2, oh, ow, r.clone()).unwrap(), 5, 6);
    compare("resize_bilinear", &x.data, gx.data, corrupt, |t| {
        let xt = Tensor4::from_vec(1, 2, 5, 6, t.to_vec()).unwrap();
        dot(&resize_forward(&xt, oh, ow).data, &r)
    })
}

fn check_ssim(rng: &mut impl Rng, corrupt: Option<&str>) -> OpCheck {
    // Border pixels only meet the window tails (~1e-3 per axis), so their
    // gradients are tiny. Low contrast raises every SSIM sensitivity well
    // above the roundoff floor of a central difference at h = 1e-4.
    let (c, h, w) = (3, 14, 13);
    let pred = uniform(c * h * w, 0.45, 0.55, rng);
    let reference = uniform(c * h * w, 0.45, 0.55, rng);
    let (_, g) = ssim_with_grad(&pred, &reference, c, h, w);
    compare("ssim_loss", &pred, g, corrupt, |t| ssim_with_grad(t, &reference, c, h, w).0)
}

fn check_radial(rng: &mut impl Rng, corrupt: Option<&str>) -> OpCheck {
    let (c, h, w) = (3, 12, 13);
    let pred = uniform(c * h * w, 0.0, 1.0, rng);
    let reference = uniform(c * h * w, 0.0, 1.0, rng);
    let center = LightCenter::new(5.3, 6.6);
    let (_, g) = radial_rms_with_grad(&pred, &reference, c, h, w, center);
    compare("radial_loss", &pred, g, corrupt, |t| {
        radial_rms_with_grad(t, &reference, c, h, w, center).0
    })
}

fn set_flat(params: &mut RadnParams, flat: &[f64]) {
    let mut off = 0;
    for t in params.tensors_mut() {
        let len = t.len();
        t.copy_from_slice(&flat[off..off + len]);
        off += len;
    }
}

fn check_end_to_end(rng: &mut ChaCha8Rng, corrupt: Option<&str>) -> OpCheck {
    // half-scale He weights keep the loss curvature low enough for central
    // differences to resolve small-gradient entries
    let mut params = RadnParams::random(E2E_HYPER, rng).unwrap();
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= E2E_WEIGHT_SCALE);
    }
    let s = E2E_SIDE;
    let sample = Sample {
        input: ImageF::new(s, s, 3, uniform(3 * s * s, 0.0, 1.0, rng)).unwrap(),
        reference: ImageF::new(s, s, 3, uniform(3 * s * s, 0.0, 1.0, rng)).unwrap(),
        center: LightCenter::new(6.4, 9.2),
    };
    let mu = LossWeights::default();
    let (_, grad) = radn_backward(&params, std::slice::from_ref(&sample), &mu).unwrap();
    let theta = params.flatten();
    compare("radn_end_to_end", &theta, grad.flatten(), corrupt, |t| {
        let mut p = params.clone();
        set_flat(&mut p, t);
        sample_loss(&p, &sample, &mu).unwrap().total
    })
}

/// Runs every check. `corrupt` names an op whose analytic gradient is
/// deliberately perturbed (negative control).
pub fn gradcheck(seed: u64, corrupt: Option<&str>) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = vec![
        check_conv("conv2d_3x3", 3, &mut rng, corrupt),
        check_conv("conv2d_1x1", 1, &mut rng, corrupt),
        check_silu(&mut rng, corrupt),
        check_attention(&mut rng, corrupt),
        check_resize(&mut rng, corrupt),
        check_ssim(&mut rng, corrupt),
        check_radial(&mut rng, corrupt),
        check_end_to_end(&mut rng, corrupt),
    ];
    GradcheckReport {
        seed,
        step: STEP,
        tolerance: TOLERANCE,
        ops,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_seed_passes_and_lists_each_op_once() {
        let report = gradcheck(0, None);
        let names: Vec<&str> = report.ops.iter().map(|o| o.op.as_str()).collect();
        assert_eq!(names, OPS);
        for op in &report.ops {
            assert!(op.passed, "{op:?}");
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let report = gradcheck(0, Some("silu"));
        assert!(!report.passed());
        let bad: Vec<&str> = report.ops.iter().filter(|o| !o.passed).map(|o| o.op.as_str()).collect();
        assert_eq!(bad, ["silu"]);
    }
}
