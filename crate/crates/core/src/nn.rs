//! Reverse-mode automatic differentiation over a flat tape, plus the two
//! trainable components: the feature extractor (one convolution and three
//! pre-activation residual blocks) and the encoder-decoder refiner whose
//! next-to-last activation is the cross-scale hidden state.

use std::rc::Rc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fft::filter_plane;
use crate::resample::{resample_plane, resample_plane_adjoint, Scale};
use crate::tensor::{
    concat_channels, conv2d_backward, conv2d_forward, leaky_relu, leaky_relu_backward, Tensor,
};

/// Extractor input channels; grayscale inputs are replicated to three.
pub const EXTRACTOR_IN: usize = 3;
const RES_BLOCKS: usize = 3;
const ENC1: usize = 16;
const ENC2: usize = 32;
const HEAD_IN: usize = 16;

/// Shape-level description of a trained model. `bank_tag` records which
/// feature bank the weights were trained against and is interpreted by the
/// bank module.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub bank_tag: String,
    /// Feature count M.
    pub m: usize,
    pub img_channels: usize,
    /// Width of the cross-scale pass-through.
    pub hidden: usize,
    /// Negative slope of the leaky rectifier; 1.0 disables the nonlinearity.
    pub slope: f64,
    pub has_extractor: bool,
}

impl Topology {
    pub fn encode(&self) -> String {
        format!(
            "bank={} m={} img_channels={} hidden={} slope={} extractor={}",
            self.bank_tag,
            self.m,
            self.img_channels,
            self.hidden,
            self.slope,
            if self.has_extractor { 1 } else { 0 }
        )
    }

    pub fn decode(s: &str) -> Result<Topology> {
        let mut bank_tag = None;
        let mut m = None;
        let mut img_channels = None;
        let mut hidden = None;
        let mut slope = None;
        let mut extractor = None;
        for field in s.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::format(format!("bad topology field `{field}`")))?;
            match k {
                "bank" => bank_tag = Some(v.to_string()),
                "m" => m = v.parse().ok(),
                "img_channels" => img_channels = v.parse().ok(),
                "hidden" => hidden = v.parse().ok(),
                "slope" => slope = v.parse().ok(),
                "extractor" => extractor = Some(v == "1"),
                other => return Err(Error::format(format!("unknown topology key `{other}`"))),
            }
        }
        Ok(Topology {
            bank_tag: bank_tag.ok_or_else(|| Error::format("topology missing bank"))?,
            m: m.ok_or_else(|| Error::format("topology missing m"))?,
            img_channels: img_channels.ok_or_else(|| Error::format("topology missing img_channels"))?,
            hidden: hidden.ok_or_else(|| Error::format("topology missing hidden"))?,
            slope: slope.ok_or_else(|| Error::format("topology missing slope"))?,
            has_extractor: extractor.ok_or_else(|| Error::format("topology missing extractor"))?,
        })
    }
}

/// Trainable parameters with stable names, in declaration order.
#[derive(Debug, Clone)]
pub struct Model {
    pub topo: Topology,
    names: Vec<String>,
    pub params: Vec<Tensor>,
}

fn param_layout(topo: &Topology) -> Vec<(String, Vec<usize>)> {
    let mut layout = Vec::new();
    let m = topo.m;
    if topo.has_extractor {
        layout.push(("ext.conv_in.w".into(), vec![m, EXTRACTOR_IN, 3, 3]));
        layout.push(("ext.conv_in.b".into(), vec![m]));
        for b in 0..RES_BLOCKS {
            for c in 0..2 {
                layout.push((format!("ext.res{b}.conv{c}.w"), vec![m, m, 3, 3]));
                layout.push((format!("ext.res{b}.conv{c}.b"), vec![m]));
            }
        }
    }
    let refiner_in = m + topo.hidden;
    layout.push(("ref.enc1.w".into(), vec![ENC1, refiner_in, 3, 3]));
    layout.push(("ref.enc1.b".into(), vec![ENC1]));
    layout.push(("ref.enc2.w".into(), vec![ENC2, ENC1, 3, 3]));
    layout.push(("ref.enc2.b".into(), vec![ENC2]));
    layout.push(("ref.dec1.w".into(), vec![HEAD_IN, ENC2 + ENC1, 3, 3]));
    layout.push(("ref.dec1.b".into(), vec![HEAD_IN]));
    layout.push(("ref.dec2.w".into(), vec![topo.hidden, HEAD_IN + refiner_in, 3, 3]));
    layout.push(("ref.dec2.b".into(), vec![topo.hidden]));
    layout.push(("ref.head.w".into(), vec![topo.img_channels, topo.hidden, 1, 1]));
    layout.push(("ref.head.b".into(), vec![topo.img_channels]));
    layout
}

impl Model {
    /// Fan-in-scaled uniform initialization, deterministic in the seed.
    pub fn init(topo: Topology, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = param_layout(&topo);
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let t = if shape.len() == 4 {
                let fan_in: usize = shape[1] * shape[2] * shape[3];
                let a = (6.0 / fan_in as f64).sqrt();
                Tensor {
                    data: (0..shape.iter().product())
                        .map(|_| rng.gen_range(-a..a))
                        .collect(),
                    shape,
                }
            } else {
                Tensor::zeros(&shape)
            };
            names.push(name);
            params.push(t);
        }
        Model { topo, names, params }
    }

    /// All-zero parameters (used by linear-map tests).
    pub fn zeros(topo: Topology) -> Model {
        let layout = param_layout(&topo);
        let (names, params) = layout
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(&s)))
            .unzip();
        Model { topo, names, params }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Rebuild from named tensors, validating shapes against the topology.
    pub fn from_named_tensors(
        topo: Topology,
        mut tensors: std::collections::HashMap<String, Tensor>,
    ) -> Result<Model> {
        let layout = param_layout(&topo);
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (name, shape) in layout {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::format(format!("weights missing tensor `{name}`")))?;
            if t.shape != shape {
                return Err(Error::format(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape, shape
                )));
            }
            if !t.is_finite() {
                return Err(Error::format(format!("tensor `{name}` contains non-finite values")));
            }
            names.push(name);
            params.push(t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::format(format!("unexpected tensor `{extra}` in weights")));
        }
        Ok(Model { topo, names, params })
    }
}

pub type NodeId = usize;

enum Op {
    Leaf,
    Param(usize),
    Conv {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        input: NodeId,
        slope: f64,
    },
    Add(NodeId, NodeId),
    Concat(Vec<NodeId>),
    Resample {
        input: NodeId,
        scale: Scale,
    },
    /// Per-channel frequency-domain linear filter; the backward pass applies
    /// the conjugated response (the adjoint).
    FreqFilter {
        input: NodeId,
        responses: Rc<Vec<Vec<Complex<f64>>>>,
    },
    Crop {
        input: NodeId,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    },
    /// Periodic padding by `pad` on every side; paired with unpadded
    /// convolutions it makes a layer circularly shift-invariant.
    CircPad {
        input: NodeId,
        pad: usize,
    },
    /// Mean absolute deviation against a constant target, scaled by gamma.
    L1 {
        pred: NodeId,
        target: Rc<Tensor>,
        gamma: f64,
    },
    SumScalars(Vec<NodeId>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Flat forward tape. Nodes are appended in execution order, so a single
/// reverse sweep propagates gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, index: usize, value: &Tensor) -> NodeId {
        self.push(value.clone(), Op::Param(index))
    }

    pub fn conv(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let v = conv2d_forward(
            &self.nodes[input].value,
            &self.nodes[weight].value,
            &self.nodes[bias].value,
            stride,
            pad,
        );
        self.push(
            v,
            Op::Conv {
                input,
                weight,
                bias,
                stride,
                pad,
            },
        )
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> NodeId {
        let v = leaky_relu(&self.nodes[input].value, slope);
        self.push(v, Op::LeakyRelu { input, slope })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.shape, vb.shape, "add shape mismatch");
        let v = Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect(),
        };
        self.push(v, Op::Add(a, b))
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> NodeId {
        let parts: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i].value).collect();
        let v = concat_channels(&parts);
        self.push(v, Op::Concat(inputs.to_vec()))
    }

    pub fn resample(&mut self, input: NodeId, scale: Scale) -> NodeId {
        let t = &self.nodes[input].value;
        let (c, h, w) = t.chw();
        let mut data = Vec::new();
        let mut extent = (0, 0);
        for ci in 0..c {
            let (nh, nw, plane) =
                resample_plane(h, w, t.plane(ci), scale).expect("extent checked by caller");
            extent = (nh, nw);
            data.extend(plane);
        }
        let v = Tensor {
            shape: vec![c, extent.0, extent.1],
            data,
        };
        self.push(v, Op::Resample { input, scale })
    }

    pub fn freq_filter(&mut self, input: NodeId, responses: Rc<Vec<Vec<Complex<f64>>>>) -> NodeId {
        let t = &self.nodes[input].value;
        let (c, h, w) = t.chw();
        assert_eq!(c, responses.len(), "one response per channel");
        let mut data = Vec::with_capacity(t.numel());
        for ci in 0..c {
            let filtered = filter_plane(h, w, t.plane(ci), &responses[ci])
                .expect("conjugate-symmetric response yields real output");
            data.extend(filtered);
        }
        let v = Tensor {
            shape: vec![c, h, w],
            data,
        };
        self.push(v, Op::FreqFilter { input, responses })
    }

    pub fn crop(
        &mut self,
        input: NodeId,
        top: usize,
        left: usize,
        height: usize,
        width: usize,
    ) -> NodeId {
        let t = &self.nodes[input].value;
        let (c, h, w) = t.chw();
        assert!(top + height <= h && left + width <= w, "crop out of range");
        let mut data = Vec::with_capacity(c * height * width);
        for ci in 0..c {
            let plane = t.plane(ci);
            for y in 0..height {
                let row = (top + y) * w + left;
                data.extend_from_slice(&plane[row..row + width]);
            }
        }
        let v = Tensor {
            shape: vec![c, height, width],
            data,
        };
        self.push(
            v,
            Op::Crop {
                input,
                top,
                left,
                height,
                width,
            },
        )
    }

    pub fn circ_pad(&mut self, input: NodeId, pad: usize) -> NodeId {
        let t = &self.nodes[input].value;
        let (c, h, w) = t.chw();
        let (nh, nw) = (h + 2 * pad, w + 2 * pad);
        let mut data = vec![0.0; c * nh * nw];
        assert!(pad < h && pad < w, "circular pad exceeds extent");
        for ci in 0..c {
            let plane = t.plane(ci);
            for y in 0..nh {
                let sy = (y + h - pad) % h;
                for x in 0..nw {
                    let sx = (x + w - pad) % w;
                    data[(ci * nh + y) * nw + x] = plane[sy * w + sx];
                }
            }
        }
        let v = Tensor {
            shape: vec![c, nh, nw],
            data,
        };
        self.push(v, Op::CircPad { input, pad })
    }

    pub fn l1_loss(&mut self, pred: NodeId, target: Rc<Tensor>, gamma: f64) -> NodeId {
        let p = &self.nodes[pred].value;
        assert_eq!(p.shape, target.shape, "l1 target shape mismatch");
        let n = p.numel() as f64;
        let v = gamma / n
            * p.data
                .iter()
                .zip(&target.data)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
        self.push(Tensor::scalar(v), Op::L1 { pred, target, gamma })
    }

    pub fn sum_scalars(&mut self, inputs: &[NodeId]) -> NodeId {
        let v = inputs
            .iter()
            .map(|&i| {
                debug_assert_eq!(self.nodes[i].value.numel(), 1);
                self.nodes[i].value.data[0]
            })
            .sum();
        self.push(Tensor::scalar(v), Op::SumScalars(inputs.to_vec()))
    }

    /// Reverse sweep from a scalar loss node. Returns gradients indexed by
    /// parameter slot; `None` where a registered parameter never reached
    /// the loss.
    pub fn backward(&self, loss: NodeId) -> Vec<Option<Tensor>> {
        assert_eq!(self.nodes[loss].value.numel(), 1, "loss must be scalar");
        let n_params = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param(i) => Some(i + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::scalar(1.0));
        let mut param_grads: Vec<Option<Tensor>> = (0..n_params).map(|_| None).collect();

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Param(i) => match &mut param_grads[*i] {
                    Some(existing) => accumulate(existing, &g),
                    slot => *slot = Some(g),
                },
                Op::Conv {
                    input,
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let (gin, gw, gb) = conv2d_backward(
                        &self.nodes[*input].value,
                        &self.nodes[*weight].value,
                        &g,
                        *stride,
                        *pad,
                    );
                    add_grad(&mut grads, *input, gin);
                    add_grad(&mut grads, *weight, gw);
                    add_grad(&mut grads, *bias, gb);
                }
                Op::LeakyRelu { input, slope } => {
                    let gin = leaky_relu_backward(&self.nodes[*input].value, &g, *slope);
                    add_grad(&mut grads, *input, gin);
                }
                Op::Add(a, b) => {
                    add_grad(&mut grads, *a, g.clone());
                    add_grad(&mut grads, *b, g);
                }
                Op::Concat(inputs) => {
                    let (_, h, w) = g.chw();
                    let mut offset = 0;
                    for &inp in inputs {
                        let c = self.nodes[inp].value.chw().0;
                        let slice = Tensor {
                            shape: vec![c, h, w],
                            data: g.data[offset..offset + c * h * w].to_vec(),
                        };
                        add_grad(&mut grads, inp, slice);
                        offset += c * h * w;
                    }
                }
                Op::Resample { input, scale } => {
                    let t = &self.nodes[*input].value;
                    let (c, h, w) = t.chw();
                    let (_, gh, gw_) = g.chw();
                    let mut data = Vec::with_capacity(c * h * w);
                    for ci in 0..c {
                        let gplane = &g.data[ci * gh * gw_..(ci + 1) * gh * gw_];
                        data.extend(resample_plane_adjoint(h, w, gplane, *scale));
                    }
                    add_grad(
                        &mut grads,
                        *input,
                        Tensor {
                            shape: vec![c, h, w],
                            data,
                        },
                    );
                }
                Op::FreqFilter { input, responses } => {
                    let (c, h, w) = g.chw();
                    let mut data = Vec::with_capacity(g.numel());
                    for ci in 0..c {
                        let conj: Vec<Complex<f64>> =
                            responses[ci].iter().map(|r| r.conj()).collect();
                        let filtered = filter_plane(h, w, g.plane(ci), &conj)
                            .expect("adjoint response yields real output");
                        data.extend(filtered);
                    }
                    add_grad(
                        &mut grads,
                        *input,
                        Tensor {
                            shape: vec![c, h, w],
                            data,
                        },
                    );
                }
                Op::Crop {
                    input,
                    top,
                    left,
                    height,
                    width,
                } => {
                    let t = &self.nodes[*input].value;
                    let (c, h, w) = t.chw();
                    let mut gin = Tensor::zeros(&[c, h, w]);
                    for ci in 0..c {
                        for y in 0..*height {
                            let src = (ci * height + y) * width;
                            let dst = (ci * h + top + y) * w + left;
                            for x in 0..*width {
                                gin.data[dst + x] = g.data[src + x];
                            }
                        }
                    }
                    add_grad(&mut grads, *input, gin);
                }
                Op::CircPad { input, pad } => {
                    let t = &self.nodes[*input].value;
                    let (c, h, w) = t.chw();
                    let (nh, nw) = (h + 2 * pad, w + 2 * pad);
                    let mut gin = Tensor::zeros(&[c, h, w]);
                    for ci in 0..c {
                        for y in 0..nh {
                            let sy = (y + h - pad) % h;
                            for x in 0..nw {
                                let sx = (x + w - pad) % w;
                                gin.data[(ci * h + sy) * w + sx] +=
                                    g.data[(ci * nh + y) * nw + x];
                            }
                        }
                    }
                    add_grad(&mut grads, *input, gin);
                }
                Op::L1 { pred, target, gamma } => {
                    let p = &self.nodes[*pred].value;
                    let n = p.numel() as f64;
                    let scale = g.data[0] * gamma / n;
                    // Subgradient at zero is zero.
                    let gp = Tensor {
                        shape: p.shape.clone(),
                        data: p
                            .data
                            .iter()
                            .zip(&target.data)
                            .map(|(a, b)| {
                                let d = a - b;
                                if d > 0.0 {
                                    scale
                                } else if d < 0.0 {
                                    -scale
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    };
                    add_grad(&mut grads, *pred, gp);
                }
                Op::SumScalars(inputs) => {
                    for &inp in inputs {
                        add_grad(&mut grads, inp, g.clone());
                    }
                }
            }
        }
        param_grads
    }
}

fn accumulate(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape, src.shape);
    for (d, s) in dst.data.iter_mut().zip(&src.data) {
        *d += s;
    }
}

fn add_grad(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => accumulate(existing, &g),
        slot => *slot = Some(g),
    }
}

/// Node ids of one model's parameters inside a tape.
pub struct BoundModel {
    ids: Vec<NodeId>,
}

impl Model {
    /// Register every parameter on the tape once per forward pass.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            ids: self
                .params
                .iter()
                .enumerate()
                .map(|(i, p)| tape.param(i, p))
                .collect(),
        }
    }

    /// Gradients aligned with `self.params`, zeros where unused.
    pub fn grads_from(&self, raw: Vec<Option<Tensor>>) -> Vec<Tensor> {
        let mut raw = raw;
        raw.resize(self.params.len(), None);
        raw.into_iter()
            .zip(&self.params)
            .map(|(g, p)| g.unwrap_or_else(|| Tensor::zeros(&p.shape)))
            .collect()
    }

    fn p(&self, bound: &BoundModel, name: &str) -> NodeId {
        bound.ids[self.param_index(name).expect("known parameter")]
    }

    /// Feature extraction: one 3x3 convolution then three pre-activation
    /// residual blocks. Input is `[EXTRACTOR_IN, H, W]`. Convolutions are
    /// circularly padded so the linearized extractor commutes exactly with
    /// circular blur.
    pub fn extract(&self, tape: &mut Tape, bound: &BoundModel, input: NodeId) -> NodeId {
        assert!(self.topo.has_extractor, "model has no extractor");
        let s = self.topo.slope;
        let circ_conv = |tape: &mut Tape, x: NodeId, name: &str| {
            let padded = tape.circ_pad(x, 1);
            tape.conv(
                padded,
                self.p(bound, &format!("{name}.w")),
                self.p(bound, &format!("{name}.b")),
                1,
                0,
            )
        };
        let mut z = circ_conv(tape, input, "ext.conv_in");
        for b in 0..RES_BLOCKS {
            let a0 = tape.leaky_relu(z, s);
            let c0 = circ_conv(tape, a0, &format!("ext.res{b}.conv0"));
            let a1 = tape.leaky_relu(c0, s);
            let c1 = circ_conv(tape, a1, &format!("ext.res{b}.conv1"));
            z = tape.add(z, c1);
        }
        z
    }

    /// One refinement pass. `input` is the concatenation of the feature
    /// stack and the (possibly zero) upsampled hidden state, shape
    /// `[m + hidden, H, W]` with H and W divisible by four. Returns the
    /// image estimate and the hidden state for the next scale.
    pub fn refine_scale(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        input: NodeId,
    ) -> (NodeId, NodeId) {
        let s = self.topo.slope;
        let (c, h, w) = tape.value(input).chw();
        assert_eq!(c, self.topo.m + self.topo.hidden, "refiner input channels");
        assert!(h % 4 == 0 && w % 4 == 0, "refiner needs extents divisible by 4");
        let e1c = tape.conv(
            input,
            self.p(bound, "ref.enc1.w"),
            self.p(bound, "ref.enc1.b"),
            2,
            1,
        );
        let e1 = tape.leaky_relu(e1c, s);
        let e2c = tape.conv(
            e1,
            self.p(bound, "ref.enc2.w"),
            self.p(bound, "ref.enc2.b"),
            2,
            1,
        );
        let e2 = tape.leaky_relu(e2c, s);
        let up1 = tape.resample(e2, Scale::Up2);
        let cat1 = tape.concat(&[up1, e1]);
        let d1c = tape.conv(
            cat1,
            self.p(bound, "ref.dec1.w"),
            self.p(bound, "ref.dec1.b"),
            1,
            1,
        );
        let d1 = tape.leaky_relu(d1c, s);
        let up2 = tape.resample(d1, Scale::Up2);
        let cat2 = tape.concat(&[up2, input]);
        let d2c = tape.conv(
            cat2,
            self.p(bound, "ref.dec2.w"),
            self.p(bound, "ref.dec2.b"),
            1,
            1,
        );
        let hidden = tape.leaky_relu(d2c, s);
        let head = tape.conv(
            hidden,
            self.p(bound, "ref.head.w"),
            self.p(bound, "ref.head.b"),
            1,
            0,
        );
        (head, hidden)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_topo(has_extractor: bool) -> Topology {
        Topology {
            bank_tag: "learned".into(),
            m: 4,
            img_channels: 1,
            hidden: 3,
            slope: 0.1,
            has_extractor,
        }
    }

    #[test]
    fn topology_round_trips() {
        let t = tiny_topo(true);
        let back = Topology::decode(&t.encode()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let a = Model::init(tiny_topo(true), 5);
        let b = Model::init(tiny_topo(true), 5);
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_eq!(x.data, y.data);
        }
        let bias = &a.params[a.param_index("ref.enc1.b").unwrap()];
        assert!(bias.data.iter().all(|v| *v == 0.0));
        let c = Model::init(tiny_topo(true), 6);
        assert_ne!(a.params[0].data, c.params[0].data);
    }

    #[test]
    fn zero_model_refines_to_zero() {
        let model = Model::zeros(tiny_topo(false));
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let input = tape.leaf(Tensor::zeros(&[7, 8, 8]));
        let (out, hidden) = model.refine_scale(&mut tape, &bound, input);
        assert!(tape.value(out).data.iter().all(|v| *v == 0.0));
        assert!(tape.value(hidden).data.iter().all(|v| *v == 0.0));
        assert_eq!(tape.value(out).shape, vec![1, 8, 8]);
        assert_eq!(tape.value(hidden).shape, vec![3, 8, 8]);
    }

    #[test]
    fn forward_is_deterministic() {
        use rand::{Rng, SeedableRng};
        let model = Model::init(tiny_topo(true), 9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let input = Tensor::from_vec(
            &[EXTRACTOR_IN, 8, 8],
            (0..EXTRACTOR_IN * 64).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let run = || {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let x = tape.leaf(input.clone());
            let feats = model.extract(&mut tape, &bound, x);
            tape.value(feats).data.clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn extractor_preserves_extent() {
        let model = Model::init(tiny_topo(true), 1);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let x = tape.leaf(Tensor::zeros(&[EXTRACTOR_IN, 10, 14]));
        let feats = model.extract(&mut tape, &bound, x);
        assert_eq!(tape.value(feats).shape, vec![4, 10, 14]);
    }
}
