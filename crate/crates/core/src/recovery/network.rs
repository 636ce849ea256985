use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::loss::{loss_and_grad, LossTerms, LossWeights};
use super::ops::{
    channel_attention, channel_attention_backward, conv2d_backward, conv2d_forward, resize_backward,
    resize_forward, silu_backward, silu_forward, Attention, AttentionCache, Conv2d,
};
use super::tensor::{concat_channels, split_channels, Tensor4};
use crate::error::{Error, Result};
use crate::imgcore::ImageF;
use crate::radial::LightCenter;

/// Pyramid levels, coarse to fine, as fractions of the input size.
pub const SCALES: [f64; 3] = [0.25, 0.5, 1.0];

/// Smallest input side accepted by the network.
pub const MIN_INPUT_SIDE: usize = 16;

const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadnHyper {
    /// Residual dense blocks per branch.
    pub blocks: usize,
    /// Dense layers per block.
    pub growth_layers: usize,
    /// Feature channels (also the growth width).
    pub channels: usize,
}

impl Default for RadnHyper {
    fn default() -> Self {
        Self {
            blocks: 3,
            growth_layers: 3,
            channels: 8,
        }
    }
}

impl RadnHyper {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.growth_layers == 0 || self.channels < 2 {
            return Err(Error::Config(format!(
                "need D >= 1, G >= 1, C0 >= 2; got D={}, G={}, C0={}",
                self.blocks, self.growth_layers, self.channels
            )));
        }
        Ok(())
    }
}

/// Residual dense block: `G` dense 3x3 layers, 1x1 local fusion, channel attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdb {
    pub dense: Vec<Conv2d>,
    pub local_fusion: Conv2d,
    pub attention: Attention,
}

/// One pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub head: Conv2d,
    pub blocks: Vec<Rdb>,
    pub global_fusion: Conv2d,
    pub tail: Conv2d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadnParams {
    pub hyper: RadnHyper,
    pub branches: Vec<Branch>,
}

fn branch_inputs(level: usize) -> usize {
    if level == 0 {
        IMAGE_CHANNELS
    } else {
        2 * IMAGE_CHANNELS
    }
}

impl RadnParams {
    fn build(hyper: RadnHyper, mut make: impl FnMut(usize, usize, usize) -> Conv2d, mut att: impl FnMut(usize) -> Attention) -> Self {
        let c0 = hyper.channels;
        let branches = (0..SCALES.len())
            .map(|level| {
                let head = make(c0, branch_inputs(level), 3);
                let blocks = (0..hyper.blocks)
                    .map(|_| Rdb {
                        dense: (0..hyper.growth_layers).map(|j| make(c0, c0 * (j + 1), 3)).collect(),
                        local_fusion: make(c0, c0 * (hyper.growth_layers + 1), 1),
                        attention: att(c0),
                    })
                    .collect();
                let global_fusion = make(c0, c0 * hyper.blocks, 1);
                let tail = make(IMAGE_CHANNELS, c0, 3);
                Branch {
                    head,
                    blocks,
                    global_fusion,
                    tail,
                }
            })
            .collect();
        Self { hyper, branches }
    }

    /// All-zero parameters: the network is the identity map.
    pub fn zeros(hyper: RadnHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(Self::build(hyper, Conv2d::zeros, Attention::zeros))
    }

    /// He-initialized layers with zero tails, so the untrained network is
    /// still exactly the identity but every layer receives gradient.
    pub fn init(hyper: RadnHyper, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::random(hyper, rng)?;
        for b in &mut p.branches {
            b.tail = b.tail.zeros_like();
        }
        Ok(p)
    }

    /// [`RadnParams::init`] driven by a ChaCha8 stream seeded with `seed`.
    pub fn init_seeded(hyper: RadnHyper, seed: u64) -> Result<Self> {
        Self::init(hyper, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }

    /// He-initialized everywhere, tails included.
    pub fn random(hyper: RadnHyper, rng: &mut impl Rng) -> Result<Self> {
        hyper.validate()?;
        // a single &mut is shared by both closures through a RefCell
        let rng = std::cell::RefCell::new(rng);
        Ok(Self::build(
            hyper,
            |o, i, k| Conv2d::he(o, i, k, &mut *rng.borrow_mut()),
            |c| Attention::he(c, &mut *rng.borrow_mut()),
        ))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hyper).expect("hyper already validated")
    }

    /// Layers in declaration order.
    pub fn layers(&self) -> Vec<&Conv2d> {
        let mut out = Vec::new();
        for b in &self.branches {
            out.push(&b.head);
            for r in &b.blocks {
                out.extend(r.dense.iter());
                out.push(&r.local_fusion);
                out.push(&r.attention.squeeze);
                out.push(&r.attention.excite);
            }
            out.push(&b.global_fusion);
            out.push(&b.tail);
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            out.push(&mut b.head);
            for r in &mut b.blocks {
                out.extend(r.dense.iter_mut());
                out.push(&mut r.local_fusion);
                out.push(&mut r.attention.squeeze);
                out.push(&mut r.attention.excite);
            }
            out.push(&mut b.global_fusion);
            out.push(&mut b.tail);
        }
        out
    }

    /// Parameter tensors (each layer's weight, then bias) in declaration order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Concatenation of every parameter in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

struct RdbTape {
    input: Tensor4,
    dense_in: Vec<Tensor4>,
    dense_pre: Vec<Tensor4>,
    fused_in: Tensor4,
    fused: Tensor4,
    att: AttentionCache,
}

struct BranchTape {
    input: Tensor4,
    head_out: Tensor4,
    blocks: Vec<RdbTape>,
    global_in: Tensor4,
    features: Tensor4,
}

/// Intermediate values of one forward pass.
pub struct Tape {
    sizes: Vec<(usize, usize)>,
    branches: Vec<BranchTape>,
}

fn rdb_forward(x: &Tensor4, rdb: &Rdb) -> Result<(Tensor4, RdbTape)> {
    let mut feats = vec![x.clone()];
    let mut dense_in = Vec::with_capacity(rdb.dense.len());
    let mut dense_pre = Vec::with_capacity(rdb.dense.len());
    for layer in &rdb.dense {
        let inp = concat_channels(&feats.iter().collect::<Vec<_>>())?;
        let pre = conv2d_forward(&inp, layer)?;
        feats.push(silu_forward(&pre));
        dense_in.push(inp);
        dense_pre.push(pre);
    }
    let fused_in = concat_channels(&feats.iter().collect::<Vec<_>>())?;
    let fused = conv2d_forward(&fused_in, &rdb.local_fusion)?;
    let (mut out, att) = channel_attention(&fused, &rdb.attention)?;
    out.add_assign(x);
    Ok((
        out,
        RdbTape {
            input: x.clone(),
            dense_in,
            dense_pre,
            fused_in,
            fused,
            att,
        },
    ))
}

fn rdb_backward(rdb: &Rdb, tape: &RdbTape, gout: &Tensor4, grad: &mut Rdb) -> Tensor4 {
    let c0 = tape.input.c;
    let g_fused = channel_attention_backward(&tape.fused, &rdb.attention, &tape.att, gout, &mut grad.attention);
    let g_cat = conv2d_backward(&tape.fused_in, &rdb.local_fusion, &g_fused, &mut grad.local_fusion);
    let mut g_feats = split_channels(&g_cat, &vec![c0; rdb.dense.len() + 1]);
    for j in (0..rdb.dense.len()).rev() {
        let g_pre = silu_backward(&tape.dense_pre[j], &g_feats[j + 1]);
        let g_in = conv2d_backward(&tape.dense_in[j], &rdb.dense[j], &g_pre, &mut grad.dense[j]);
        for (k, part) in split_channels(&g_in, &vec![c0; j + 1]).into_iter().enumerate() {
            g_feats[k].add_assign(&part);
        }
    }
    let mut g_x = g_feats.swap_remove(0);
    g_x.add_assign(gout);
    g_x
}

fn branch_forward(input: &Tensor4, image: &Tensor4, branch: &Branch) -> Result<(Tensor4, BranchTape)> {
    let head_out = conv2d_forward(input, &branch.head)?;
    let mut x = head_out.clone();
    let mut outs = Vec::with_capacity(branch.blocks.len());
    let mut blocks = Vec::with_capacity(branch.blocks.len());
    for rdb in &branch.blocks {
        let (y, tape) = rdb_forward(&x, rdb)?;
        blocks.push(tape);
        outs.push(y.clone());
        x = y;
    }
    let global_in = concat_channels(&outs.iter().collect::<Vec<_>>())?;
    let mut features = conv2d_forward(&global_in, &branch.global_fusion)?;
    features.add_assign(&head_out);
    let mut out = conv2d_forward(&features, &branch.tail)?;
    out.add_assign(image);
    Ok((
        out,
        BranchTape {
            input: input.clone(),
            head_out,
            blocks,
            global_in,
            features,
        },
    ))
}

/// Returns the gradient with respect to the branch input.
fn branch_backward(branch: &Branch, tape: &BranchTape, gout: &Tensor4, grad: &mut Branch) -> Tensor4 {
    let g_features = conv2d_backward(&tape.features, &branch.tail, gout, &mut grad.tail);
    let g_global = conv2d_backward(&tape.global_in, &branch.global_fusion, &g_features, &mut grad.global_fusion);
    let c0 = tape.head_out.c;
    let mut g_outs = split_channels(&g_global, &vec![c0; branch.blocks.len()]);
    let mut carry = Tensor4::zeros(gout.n, c0, gout.h, gout.w);
    for d in (0..branch.blocks.len()).rev() {
        g_outs[d].add_assign(&carry);
        carry = rdb_backward(&branch.blocks[d], &tape.blocks[d], &g_outs[d], &mut grad.blocks[d]);
    }
    carry.add_assign(&g_features);
    conv2d_backward(&tape.input, &branch.head, &carry, &mut grad.head)
}

fn level_size(h: usize, w: usize, scale: f64) -> (usize, usize) {
    let s = |n: usize| ((n as f64 * scale).round() as usize).max(2);
    (s(h), s(w))
}

fn check_input(x: &Tensor4, params: &RadnParams) -> Result<()> {
    if x.c != IMAGE_CHANNELS {
        return Err(Error::Shape(format!("network expects RGB input, got {} channels", x.c)));
    }
    if x.h < MIN_INPUT_SIDE || x.w < MIN_INPUT_SIDE {
        return Err(Error::Dimension(format!(
            "network input must be at least {MIN_INPUT_SIDE}px, got {}x{}",
            x.h, x.w
        )));
    }
    if params.branches.len() != SCALES.len() {
        return Err(Error::Shape("parameter set has the wrong number of branches".into()));
    }
    Ok(())
}

/// Unclamped network output for a batch, plus the tape for [`radn_backward_tape`].
pub fn radn_forward_tensor(params: &RadnParams, x: &Tensor4) -> Result<(Tensor4, Tape)> {
    check_input(x, params)?;
    let sizes: Vec<(usize, usize)> = SCALES.iter().map(|&s| level_size(x.h, x.w, s)).collect();
    let mut branches = Vec::with_capacity(SCALES.len());
    let mut prev: Option<Tensor4> = None;
    for (level, &(h, w)) in sizes.iter().enumerate() {
        let image = resize_forward(x, h, w);
        let input = match &prev {
            None => image.clone(),
            Some(p) => concat_channels(&[&image, &resize_forward(p, h, w)])?,
        };
        let (out, tape) = branch_forward(&input, &image, &params.branches[level])?;
        out.check_finite(&format!("branch {level} output"))?;
        branches.push(tape);
        prev = Some(out);
    }
    Ok((prev.expect("three levels"), Tape { sizes, branches }))
}

/// Parameter gradient for an upstream gradient on the network output.
pub fn radn_backward_tape(params: &RadnParams, tape: &Tape, gout: &Tensor4) -> RadnParams {
    let mut grad = params.zeros_like();
    let mut g = gout.clone();
    for level in (0..SCALES.len()).rev() {
        let g_in = branch_backward(&params.branches[level], &tape.branches[level], &g, &mut grad.branches[level]);
        if level == 0 {
            break;
        }
        // the image half of the input needs no gradient
        let parts = split_channels(&g_in, &[IMAGE_CHANNELS, IMAGE_CHANNELS]);
        let (ph, pw) = tape.sizes[level - 1];
        g = resize_backward(&parts[1], ph, pw);
    }
    grad
}

/// Recovers one image; the output is clamped to `[0, 1]`.
pub fn radn_forward(params: &RadnParams, img: &ImageF) -> Result<ImageF> {
    let (out, _) = radn_forward_tensor(params, &Tensor4::from_image(img))?;
    Ok(out.to_image(0)?.clamp01())
}

/// One training sample: network input, target and light center in its frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: ImageF,
    pub reference: ImageF,
    pub center: LightCenter,
}

/// Summed loss over `batch` and its parameter gradient.
pub fn radn_backward(params: &RadnParams, batch: &[Sample], mu: &LossWeights) -> Result<(LossTerms, RadnParams)> {
    let mut grad = params.zeros_like();
    let mut terms = LossTerms::default();
    for s in batch {
        if !s.input.same_shape(&s.reference) {
            return Err(Error::Shape("input and reference differ in shape".into()));
        }
        let x = Tensor4::from_image(&s.input);
        let (out, tape) = radn_forward_tensor(params, &x)?;
        let (t, g) = loss_and_grad(&out.data, s.reference.data(), out.c, out.h, out.w, s.center, mu);
        let gout = Tensor4::from_vec(1, out.c, out.h, out.w, g)?;
        gout.check_finite("loss gradient")?;
        let gs = radn_backward_tape(params, &tape, &gout);
        for (a, b) in grad.tensors_mut().into_iter().zip(gs.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        terms += t;
    }
    if !grad.is_finite() {
        return Err(Error::NonFinite("parameter gradient".into()));
    }
    Ok((terms, grad))
}

/// Loss of the unclamped network output on one sample.
pub fn sample_loss(params: &RadnParams, s: &Sample, mu: &LossWeights) -> Result<LossTerms> {
    let (out, _) = radn_forward_tensor(params, &Tensor4::from_image(&s.input))?;
    Ok(loss_and_grad(&out.data, s.reference.data(), out.c, out.h, out.w, s.center, mu).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn image(h: usize, w: usize, seed: f64) -> ImageF {
        ImageF::from_fn(h, w, 3, |c, y, x| {
            0.5 + 0.3 * ((x as f64 * 0.4 + seed).sin() * (y as f64 * 0.3 + c as f64).cos())
        })
        .unwrap()
    }

    #[test]
    fn zero_network_is_identity() {
        let p = RadnParams::zeros(RadnHyper::default()).unwrap();
        for (h, w) in [(48, 48), (64, 96)] {
            let img = image(h, w, 0.3);
            assert_eq!(radn_forward(&p, &img).unwrap(), img);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = RadnParams::init(RadnHyper::default(), &mut rng).unwrap();
        let img = image(40, 56, 1.1);
        assert_eq!(radn_forward(&q, &img).unwrap(), img);
    }

    #[test]
    fn output_shape_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = RadnParams::random(RadnHyper::default(), &mut rng).unwrap();
        for (h, w) in [(48, 48), (64, 96)] {
            let out = radn_forward(&p, &image(h, w, 0.7)).unwrap();
            assert_eq!((out.height(), out.width(), out.channels()), (h, w, 3));
        }
    }

    /// Independent closed-form count.
    fn count(d: usize, g: usize, c0: usize) -> usize {
        let conv = |o: usize, i: usize, k: usize| o * i * k * k + o;
        let r = (c0 / 2).max(1);
        let mut total = 0;
        for inputs in [3, 6, 6] {
            total += conv(c0, inputs, 3);
            for _ in 0..d {
                for j in 1..=g {
                    total += conv(c0, j * c0, 3);
                }
                total += conv(c0, (g + 1) * c0, 1) + conv(r, c0, 1) + conv(c0, r, 1);
            }
            total += conv(c0, d * c0, 1) + conv(3, c0, 3);
        }
        total
    }

    #[test]
    fn param_count_matches_closed_form() {
        let p = RadnParams::zeros(RadnHyper::default()).unwrap();
        assert_eq!(p.param_count(), count(3, 3, 8));
        let q = RadnParams::zeros(RadnHyper {
            blocks: 1,
            growth_layers: 1,
            channels: 4,
        })
        .unwrap();
        assert_eq!(q.param_count(), count(1, 1, 4));
        assert_eq!(q.flatten().len(), q.param_count());
    }

    #[test]
    fn zero_loss_configuration_has_zero_gradient() {
        let p = RadnParams::zeros(RadnHyper::default()).unwrap();
        let img = image(24, 24, 0.2);
        let batch = [Sample {
            input: img.clone(),
            reference: img,
            center: LightCenter::new(10.0, 12.0),
        }];
        let mu = LossWeights {
            mu2: 0.0,
            ..LossWeights::default()
        };
        let (t, g) = radn_backward(&p, &batch, &mu).unwrap();
        assert_eq!(t.total, 0.0);
        assert!(g.flatten().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn duplicated_batch_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hyper = RadnHyper {
            blocks: 1,
            growth_layers: 2,
            channels: 4,
        };
        let p = RadnParams::random(hyper, &mut rng).unwrap();
        let s = Sample {
            input: image(20, 20, 0.1),
            reference: image(20, 20, 0.9),
            center: LightCenter::new(8.0, 9.0),
        };
        let mu = LossWeights::default();
        let (_, g1) = radn_backward(&p, std::slice::from_ref(&s), &mu).unwrap();
        let (_, g2) = radn_backward(&p, &[s.clone(), s], &mu).unwrap();
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn rejects_small_or_gray_input() {
        let p = RadnParams::zeros(RadnHyper::default()).unwrap();
        assert!(matches!(radn_forward(&p, &image(12, 40, 0.0)), Err(Error::Dimension(_))));
        assert!(matches!(radn_forward(&p, &image(20, 20, 0.0).channel(0)), Err(Error::Shape(_))));
    }
}
