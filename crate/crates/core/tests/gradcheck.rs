//! Central-difference verification of every differentiable component and
//! of the composed pipeline, plus the adjoint identity of the Wiener step.

use std::rc::Rc;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deblur_core::convolve::Boundary;
use deblur_core::fft::filter_plane;
use deblur_core::image::Image;
use deblur_core::kernel::Kernel;
use deblur_core::nn::{Model, NodeId, Tape, Topology};
use deblur_core::refine::{build_pipeline_graph, PipelineConfig, Refiner};
use deblur_core::resample::Scale;
use deblur_core::tensor::Tensor;
use deblur_core::wiener::{build_operator, StatsOrRatio, WienerStats};

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-3;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(
        shape,
        (0..shape.iter().product())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

/// Check analytic gradients of a scalar graph against central differences
/// for every registered input tensor. `build` receives the tape and the
/// node ids of the inputs (registered as params 0..n) and returns the
/// scalar loss node.
fn gradcheck<F>(inputs: &[Tensor], entries_per_input: usize, seed: u64, build: F)
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    let run = |tensors: &[Tensor]| -> (f64, Vec<Option<Tensor>>) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t))
            .collect();
        let loss = build(&mut tape, &ids);
        let value = tape.value(loss).data[0];
        let grads = tape.backward(loss);
        (value, grads)
    };
    let (_, grads) = run(inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (pi, input) in inputs.iter().enumerate() {
        let g = grads
            .get(pi)
            .and_then(|g| g.as_ref())
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&input.shape));
        let n = input.numel();
        let picks: Vec<usize> = if n <= entries_per_input {
            (0..n).collect()
        } else {
            (0..entries_per_input).map(|_| rng.gen_range(0..n)).collect()
        };
        for idx in picks {
            let mut plus = inputs.to_vec();
            plus[pi].data[idx] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[pi].data[idx] -= FD_STEP;
            let fd = (run(&plus).0 - run(&minus).0) / (2.0 * FD_STEP);
            let an = g.data[idx];
            let denom = fd.abs().max(an.abs()).max(1e-4);
            assert!(
                (fd - an).abs() / denom < REL_TOL,
                "input {pi} entry {idx}: finite diff {fd} vs analytic {an}"
            );
        }
    }
}

/// A generic scalar head so component outputs reduce to one number:
/// L1 distance to a fixed random target.
fn scalar_head(tape: &mut Tape, node: NodeId, seed: u64) -> NodeId {
    let shape = tape.value(node).shape.clone();
    let target = Rc::new(rand_tensor(&shape, seed));
    tape.l1_loss(node, target, 1.0)
}

#[test]
fn conv_stride_one_gradients() {
    let inputs = vec![
        rand_tensor(&[3, 8, 8], 1),
        rand_tensor(&[4, 3, 3, 3], 2),
        rand_tensor(&[4], 3),
    ];
    gradcheck(&inputs, 12, 100, |tape, ids| {
        let c = tape.conv(ids[0], ids[1], ids[2], 1, 1);
        scalar_head(tape, c, 50)
    });
}

#[test]
fn conv_stride_two_gradients() {
    let inputs = vec![
        rand_tensor(&[3, 8, 8], 4),
        rand_tensor(&[4, 3, 3, 3], 5),
        rand_tensor(&[4], 6),
    ];
    gradcheck(&inputs, 12, 101, |tape, ids| {
        let c = tape.conv(ids[0], ids[1], ids[2], 2, 1);
        scalar_head(tape, c, 51)
    });
}

#[test]
fn pointwise_conv_gradients() {
    let inputs = vec![
        rand_tensor(&[5, 6, 6], 7),
        rand_tensor(&[2, 5, 1, 1], 8),
        rand_tensor(&[2], 9),
    ];
    gradcheck(&inputs, 12, 102, |tape, ids| {
        let c = tape.conv(ids[0], ids[1], ids[2], 1, 0);
        scalar_head(tape, c, 52)
    });
}

#[test]
fn leaky_relu_gradients() {
    let inputs = vec![rand_tensor(&[2, 8, 8], 10)];
    gradcheck(&inputs, 20, 103, |tape, ids| {
        let a = tape.leaky_relu(ids[0], 0.1);
        scalar_head(tape, a, 53)
    });
}

#[test]
fn add_and_concat_gradients() {
    let inputs = vec![rand_tensor(&[2, 6, 6], 11), rand_tensor(&[2, 6, 6], 12)];
    gradcheck(&inputs, 12, 104, |tape, ids| {
        let s = tape.add(ids[0], ids[1]);
        let c = tape.concat(&[s, ids[0]]);
        scalar_head(tape, c, 54)
    });
}

#[test]
fn resample_gradients_both_directions() {
    let inputs = vec![rand_tensor(&[2, 8, 8], 13)];
    gradcheck(&inputs, 16, 105, |tape, ids| {
        let d = tape.resample(ids[0], Scale::Down2);
        scalar_head(tape, d, 55)
    });
    gradcheck(&inputs, 16, 106, |tape, ids| {
        let u = tape.resample(ids[0], Scale::Up2);
        scalar_head(tape, u, 56)
    });
}

#[test]
fn circular_pad_gradients() {
    let inputs = vec![rand_tensor(&[2, 6, 6], 14)];
    gradcheck(&inputs, 16, 107, |tape, ids| {
        let p = tape.circ_pad(ids[0], 1);
        scalar_head(tape, p, 57)
    });
}

#[test]
fn crop_gradients() {
    let inputs = vec![rand_tensor(&[2, 8, 8], 15)];
    gradcheck(&inputs, 16, 108, |tape, ids| {
        let c = tape.crop(ids[0], 1, 2, 5, 4);
        scalar_head(tape, c, 58)
    });
}

#[test]
fn wiener_step_gradients() {
    let k = Kernel::gaussian(3, 0.8).unwrap();
    let op = build_operator(&k, &WienerStats::uniform(2, 1e-2).unwrap(), (8, 8)).unwrap();
    let responses = Rc::new(op.responses());
    let inputs = vec![rand_tensor(&[2, 8, 8], 16)];
    gradcheck(&inputs, 16, 109, move |tape, ids| {
        let f = tape.freq_filter(ids[0], responses.clone());
        scalar_head(tape, f, 59)
    });
}

#[test]
fn l1_loss_gradients_and_gamma_linearity() {
    let inputs = vec![rand_tensor(&[1, 8, 8], 17)];
    gradcheck(&inputs, 20, 110, |tape, ids| {
        let target = Rc::new(rand_tensor(&[1, 8, 8], 18));
        tape.l1_loss(ids[0], target, 0.7)
    });

    // Doubling gamma doubles every gradient exactly.
    let input = rand_tensor(&[1, 6, 6], 19);
    let target = Rc::new(rand_tensor(&[1, 6, 6], 20));
    let grad_for = |gamma: f64| -> Tensor {
        let mut tape = Tape::new();
        let id = tape.param(0, &input);
        let loss = tape.l1_loss(id, target.clone(), gamma);
        tape.backward(loss)[0].clone().unwrap()
    };
    let g1 = grad_for(1.0);
    let g2 = grad_for(2.0);
    for (a, b) in g1.data.iter().zip(&g2.data) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn zero_loss_yields_zero_gradients() {
    let input = rand_tensor(&[1, 6, 6], 21);
    let mut tape = Tape::new();
    let id = tape.param(0, &input);
    let target = Rc::new(input.clone());
    let loss = tape.l1_loss(id, target, 1.0);
    assert_eq!(tape.value(loss).data[0], 0.0);
    let g = tape.backward(loss)[0].clone().unwrap();
    assert!(g.data.iter().all(|v| *v == 0.0));
}

#[test]
fn wiener_adjoint_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let k = Kernel::gaussian(5, 1.1).unwrap();
    let op = build_operator(&k, &WienerStats::uniform(1, 1e-3).unwrap(), (16, 16)).unwrap();
    let resp = op.response(0);
    let conj: Vec<_> = resp.iter().map(|c| c.conj()).collect();
    for _ in 0..5 {
        let u: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gu = filter_plane(16, 16, &u, &resp).unwrap();
        let gtv = filter_plane(16, 16, &v, &conj).unwrap();
        let lhs: f64 = gu.iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&gtv).map(|(a, b)| a * b).sum();
        assert!(
            (lhs - rhs).abs() < 1e-6 * lhs.abs().max(1.0),
            "<Gu,v> = {lhs} vs <u, Gt v> = {rhs}"
        );
    }
}

/// End-to-end: the full pipeline (extractor, stats, Wiener, pyramid,
/// refiner, multi-scale loss) against finite differences on every
/// parameter tensor of a small model.
#[test]
fn full_pipeline_gradients() {
    let clean = deblur_core::toy::gen_scene(8, 8, 1, 30);
    let k = Kernel::gaussian(3, 0.7).unwrap();
    let blurry = deblur_core::blur::blur(
        &clean,
        &k,
        &deblur_core::blur::NoiseSpec {
            sigma: 0.01,
            seed: 31,
        },
        Boundary::Circular,
    )
    .unwrap();
    let model = Model::init(
        Topology {
            bank_tag: "learned".into(),
            m: 4,
            img_channels: 1,
            hidden: 3,
            slope: 0.1,
            has_extractor: true,
        },
        32,
    );
    let cfg = PipelineConfig {
        boundary: Boundary::Circular,
        levels: 2,
        reg: StatsOrRatio::Fixed(1e-2),
        skip_wiener: false,
        edge_taper: false,
    };
    let gamma = [1.0, 1.0];
    let targets: Vec<Image> = deblur_core::train::gt_pyramid(&clean, 2).unwrap();

    let loss_and_grads = |m: &Model| -> (f64, Vec<Tensor>) {
        let arc = Arc::new(m.clone());
        let bank = deblur_core::bank::bank_from_model(arc.clone()).unwrap();
        let mut tape = Tape::new();
        let graph =
            build_pipeline_graph(&mut tape, &blurry, &k, &bank, &Refiner::Network(arc), &cfg)
                .unwrap();
        let mut parts = Vec::new();
        for ((node, target), g) in graph.scale_nodes.iter().zip(&targets).zip(gamma) {
            let t = Rc::new(Tensor {
                shape: vec![1, target.height(), target.width()],
                data: target.data().to_vec(),
            });
            parts.push(tape.l1_loss(*node, t, g));
        }
        let total = tape.sum_scalars(&parts);
        let v = tape.value(total).data[0];
        // Parameters are registered twice (bank + refiner); gradients for
        // both registrations accumulate into the same slots.
        (v, m.grads_from(tape.backward(total)))
    };

    let (_, grads) = loss_and_grads(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut checked = 0;
    for (pi, p) in model.params.iter().enumerate() {
        let n = p.numel();
        let picks: Vec<usize> = if n <= 3 {
            (0..n).collect()
        } else {
            (0..3).map(|_| rng.gen_range(0..n)).collect()
        };
        for idx in picks {
            let mut plus = model.clone();
            plus.params[pi].data[idx] += FD_STEP;
            let mut minus = model.clone();
            minus.params[pi].data[idx] -= FD_STEP;
            let fd = (loss_and_grads(&plus).0 - loss_and_grads(&minus).0) / (2.0 * FD_STEP);
            let an = grads[pi].data[idx];
            let denom = fd.abs().max(an.abs()).max(1e-4);
            assert!(
                (fd - an).abs() / denom < REL_TOL,
                "param {pi} ({}) entry {idx}: fd {fd} vs analytic {an}",
                model.names()[pi]
            );
            checked += 1;
        }
    }
    assert!(checked > 40, "sampled {checked} entries");
}
