//! Multi-scale refinement: pyramid the deconvolved features with bicubic
//! halving, then run the refiner coarse-to-fine, feeding each scale the
//! upsampled hidden state of the previous one, and emit an image estimate
//! per scale.

use std::rc::Rc;
use std::sync::Arc;

use crate::bank::{FeatureStack, FilterBank};
use crate::convolve::{edge_taper, Boundary};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernel::Kernel;
use crate::nn::{Model, NodeId, Tape};
use crate::resample::{resample_plane, Scale};
use crate::tensor::Tensor;
use crate::wiener::{build_operator, StatsOrRatio};

/// Feature pyramid, `levels[0]` coarsest, factor 2 between levels.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<FeatureStack>,
}

impl Pyramid {
    pub fn levels(&self) -> usize {
        self.levels.len()
    }
    pub fn level(&self, l: usize) -> &FeatureStack {
        &self.levels[l]
    }
    pub fn coarsest(&self) -> &FeatureStack {
        &self.levels[0]
    }
    pub fn finest(&self) -> &FeatureStack {
        self.levels.last().expect("pyramid has at least one level")
    }
}

/// Downsample a stack `levels - 1` times by bicubic halving. The full
/// extent must divide by `2^(levels-1)`.
pub fn build_pyramid(stack: &FeatureStack, levels: usize) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::parameter("pyramid needs at least one level"));
    }
    let div = 1usize << (levels - 1);
    if stack.height() % div != 0 || stack.width() % div != 0 {
        return Err(Error::dimension(format!(
            "stack extent {}x{} not divisible by 2^{}",
            stack.height(),
            stack.width(),
            levels - 1
        )));
    }
    let mut down = Vec::with_capacity(levels);
    down.push(stack.clone());
    for _ in 1..levels {
        let prev = down.last().unwrap();
        let (h, w) = (prev.height(), prev.width());
        let mut data = Vec::with_capacity(prev.data().len() / 4);
        for p in prev.planes() {
            let (_, _, plane) = resample_plane(h, w, p, Scale::Down2)?;
            data.extend(plane);
        }
        down.push(FeatureStack::new(
            prev.m(),
            h / 2,
            w / 2,
            data,
            prev.provenance().clone(),
        )?);
    }
    down.reverse();
    Ok(Pyramid { levels: down })
}

/// The reconstruction stage: either a trained network or the identity,
/// which reads the leading feature planes back as the image (the
/// "stop after deconvolution" mode).
#[derive(Debug, Clone)]
pub enum Refiner {
    Identity,
    Network(Arc<Model>),
}

/// Pipeline knobs. `boundary` selects padding semantics, `levels` the
/// pyramid depth, `reg` how the Wiener denominator is regularized.
/// `skip_wiener` bypasses the deconvolution (the kernel is then unused),
/// `edge_taper` controls border preconditioning in replicate mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub boundary: Boundary,
    pub levels: usize,
    pub reg: StatsOrRatio,
    pub skip_wiener: bool,
    pub edge_taper: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            boundary: Boundary::ReplicatePadCrop,
            levels: 2,
            reg: StatsOrRatio::default(),
            skip_wiener: false,
            edge_taper: true,
        }
    }
}

fn slice_channels(t: &Tensor, start: usize, count: usize) -> Tensor {
    let (_, h, w) = t.chw();
    Tensor {
        shape: vec![count, h, w],
        data: t.data[start * h * w..(start + count) * h * w].to_vec(),
    }
}

/// Everything the training loop needs from one forward build.
pub struct PipelineGraph {
    /// Image estimate per scale, coarse to fine, at pyramid extents.
    pub scale_nodes: Vec<NodeId>,
    /// Finest estimate cropped back to the observation extent.
    pub final_node: NodeId,
}

/// Assemble the full differentiable chain on `tape`: pad/taper, feature
/// extraction, power estimation, Wiener deconvolution, crop, pyramid, and
/// coarse-to-fine refinement.
pub fn build_pipeline_graph(
    tape: &mut Tape,
    y: &Image,
    k: &Kernel,
    bank: &FilterBank,
    refiner: &Refiner,
    cfg: &PipelineConfig,
) -> Result<PipelineGraph> {
    if cfg.levels == 0 {
        return Err(Error::parameter("pipeline needs at least one level"));
    }
    if !k.fits(y.height(), y.width()) {
        return Err(Error::dimension("kernel larger than image"));
    }
    let m = bank.planes_for(y.channels());
    if let Refiner::Network(model) = refiner {
        if model.topo.m != m {
            return Err(Error::parameter(format!(
                "refiner expects {} feature planes, bank produces {m}",
                model.topo.m
            )));
        }
        if model.topo.img_channels != y.channels() {
            return Err(Error::parameter(format!(
                "refiner emits {} channels, image has {}",
                model.topo.img_channels,
                y.channels()
            )));
        }
    }
    if matches!(refiner, Refiner::Identity) && m < y.channels() {
        return Err(Error::parameter(
            "identity refinement needs at least one feature plane per channel",
        ));
    }

    // Extent bookkeeping: every pyramid level must halve cleanly and the
    // network needs two more factors of two for its encoder.
    let net_div = match refiner {
        Refiner::Network(_) => 4usize,
        Refiner::Identity => 1,
    };
    let div = net_div << (cfg.levels - 1);
    let (h, w) = (y.height(), y.width());
    let (work, crop_origin, aligned) = match cfg.boundary {
        Boundary::Circular => {
            if h % div != 0 || w % div != 0 {
                return Err(Error::dimension(format!(
                    "circular mode needs extents divisible by {div}, got {h}x{w}"
                )));
            }
            (y.clone(), (0usize, 0usize), (h, w))
        }
        Boundary::ReplicatePadCrop => {
            let (rh, rw) = k.radius();
            let ah = (div - h % div) % div;
            let aw = (div - w % div) % div;
            let padded = y.pad_replicate(rh, rh + ah, rw, rw + aw);
            let work = if cfg.edge_taper {
                edge_taper(&padded, k)?
            } else {
                padded
            };
            (work, (rh, rw), (h + ah, w + aw))
        }
    };

    let stack_node = bank.apply_graph(tape, &work, Boundary::Circular)?;
    let deconvolved = if cfg.skip_wiener {
        stack_node
    } else {
        let stack = FeatureStack::from_tensor(
            tape.value(stack_node),
            crate::bank::Provenance {
                bank: bank.kind().as_str().into(),
                image: "pipeline".into(),
            },
        )?;
        let stats = cfg.reg.resolve(&stack)?;
        let op = build_operator(k, &stats, (work.height(), work.width()))?;
        tape.freq_filter(stack_node, Rc::new(op.responses()))
    };

    let interior = if crop_origin == (0, 0)
        && aligned == (tape.value(deconvolved).chw().1, tape.value(deconvolved).chw().2)
    {
        deconvolved
    } else {
        tape.crop(deconvolved, crop_origin.0, crop_origin.1, aligned.0, aligned.1)
    };

    // Pyramid, coarse first.
    let mut levels = vec![interior];
    for _ in 1..cfg.levels {
        let coarser = tape.resample(*levels.last().unwrap(), Scale::Down2);
        levels.push(coarser);
    }
    levels.reverse();

    let scale_nodes = match refiner {
        Refiner::Network(model) => {
            let bound = model.bind(tape);
            let mut outputs = Vec::with_capacity(cfg.levels);
            let mut hidden_up: Option<NodeId> = None;
            for &stack_l in &levels {
                let (_, lh, lw) = tape.value(stack_l).chw();
                let hid_in = match hidden_up {
                    Some(nid) => nid,
                    None => tape.leaf(Tensor::zeros(&[model.topo.hidden, lh, lw])),
                };
                let input = tape.concat(&[stack_l, hid_in]);
                let (xhat, hidden) = model.refine_scale(tape, &bound, input);
                outputs.push(xhat);
                hidden_up = Some(tape.resample(hidden, Scale::Up2));
            }
            outputs
        }
        Refiner::Identity => levels
            .iter()
            .map(|&stack_l| {
                let sliced = slice_channels(tape.value(stack_l), 0, y.channels());
                tape.leaf(sliced)
            })
            .collect(),
    };

    let finest = *scale_nodes.last().expect("at least one scale");
    let final_node = if aligned == (h, w) {
        finest
    } else {
        tape.crop(finest, 0, 0, h, w)
    };
    Ok(PipelineGraph {
        scale_nodes,
        final_node,
    })
}

/// Run the whole deblurring chain and return the finest-scale estimate at
/// the observation extent.
pub fn deblur_pipeline(
    y: &Image,
    k: &Kernel,
    bank: &FilterBank,
    refiner: &Refiner,
    cfg: &PipelineConfig,
) -> Result<Image> {
    let mut tape = Tape::new();
    let graph = build_pipeline_graph(&mut tape, y, k, bank, refiner, cfg)?;
    let out = tape.value(graph.final_node);
    let img = Image::new(y.height(), y.width(), y.channels(), out.data.clone())?;
    img.assert_finite("pipeline output")?;
    Ok(img)
}

/// Per-scale estimates and hidden features of one refinement pass over an
/// existing pyramid.
pub struct RefineOutput {
    /// Coarse-to-fine image estimates at pyramid extents.
    pub images: Vec<Image>,
    /// Hidden state per scale (before upsampling).
    pub hidden: Vec<Tensor>,
}

/// Forward the refiner over a pyramid built elsewhere.
pub fn refine_forward(pyr: &Pyramid, net: &Model) -> Result<RefineOutput> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    if pyr.coarsest().m() != net.topo.m {
        return Err(Error::parameter(format!(
            "refiner expects {} feature planes, pyramid has {}",
            net.topo.m,
            pyr.coarsest().m()
        )));
    }
    let mut images = Vec::with_capacity(pyr.levels());
    let mut hiddens = Vec::with_capacity(pyr.levels());
    let mut hidden_up: Option<NodeId> = None;
    for l in 0..pyr.levels() {
        let stack = pyr.level(l);
        if stack.height() % 4 != 0 || stack.width() % 4 != 0 {
            return Err(Error::dimension(format!(
                "refiner needs extents divisible by 4, level {l} is {}x{}",
                stack.height(),
                stack.width()
            )));
        }
        let stack_node = tape.leaf(stack.to_tensor());
        let hid_in = match hidden_up {
            Some(nid) => nid,
            None => tape.leaf(Tensor::zeros(&[net.topo.hidden, stack.height(), stack.width()])),
        };
        let input = tape.concat(&[stack_node, hid_in]);
        let (xhat, hidden) = net.refine_scale(&mut tape, &bound, input);
        let t = tape.value(xhat);
        let (c, th, tw) = t.chw();
        images.push(Image::new(th, tw, c, t.data.clone())?);
        hiddens.push(tape.value(hidden).clone());
        hidden_up = Some(tape.resample(hidden, Scale::Up2));
    }
    Ok(RefineOutput {
        images,
        hidden: hiddens,
    })
}
