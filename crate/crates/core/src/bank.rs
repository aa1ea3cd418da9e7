//! Feature extractors: fixed banks (intensity, forward-difference
//! gradients, their combination) and the small learned convolutional
//! extractor. Fixed banks expand per channel, so intensity+gradient on a
//! three-channel image yields nine feature planes.

use std::str::FromStr;
use std::sync::Arc;

use crate::convolve::{Boundary, Stencil};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Model, Tape, EXTRACTOR_IN};
use crate::tensor::Tensor;
use crate::weights::{unpack_model, RefinerWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankKind {
    Intensity,
    Gradient,
    IntensityPlusGradient,
    Learned,
}

impl BankKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BankKind::Intensity => "intensity",
            BankKind::Gradient => "gradient",
            BankKind::IntensityPlusGradient => "intensity+gradient",
            BankKind::Learned => "learned",
        }
    }
}

impl FromStr for BankKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intensity" => Ok(BankKind::Intensity),
            "gradient" => Ok(BankKind::Gradient),
            "intensity+gradient" | "intensity_plus_gradient" => {
                Ok(BankKind::IntensityPlusGradient)
            }
            "learned" => Ok(BankKind::Learned),
            other => Err(Error::parameter(format!("unknown bank kind `{other}`"))),
        }
    }
}

/// A set of feature extractors F_i.
#[derive(Debug, Clone)]
pub struct FilterBank {
    kind: BankKind,
    stencils: Vec<Stencil>,
    model: Option<Arc<Model>>,
}

/// Fixed banks by kind. The learned kind needs weights; see
/// [`load_learned_bank`].
pub fn builtin_bank(kind: BankKind) -> Result<FilterBank> {
    let stencils = match kind {
        BankKind::Intensity => vec![Stencil::identity()],
        BankKind::Gradient => vec![Stencil::grad_x(), Stencil::grad_y()],
        BankKind::IntensityPlusGradient => {
            vec![Stencil::identity(), Stencil::grad_x(), Stencil::grad_y()]
        }
        BankKind::Learned => {
            return Err(Error::parameter(
                "learned bank requires weights; use load_learned_bank",
            ))
        }
    };
    Ok(FilterBank {
        kind,
        stencils,
        model: None,
    })
}

/// Wrap a trained extractor as a bank. Fails if the weights were saved
/// without an extractor (refiner-only models accompany fixed banks).
pub fn load_learned_bank(weights: &RefinerWeights) -> Result<FilterBank> {
    let model = unpack_model(weights)?;
    bank_from_model(Arc::new(model))
}

/// Same as [`load_learned_bank`] for an already-unpacked model.
pub fn bank_from_model(model: Arc<Model>) -> Result<FilterBank> {
    if !model.topo.has_extractor {
        return Err(Error::format(
            "weights contain no feature extractor; cannot build a learned bank",
        ));
    }
    Ok(FilterBank {
        kind: BankKind::Learned,
        stencils: Vec::new(),
        model: Some(model),
    })
}

impl FilterBank {
    pub fn kind(&self) -> BankKind {
        self.kind
    }

    pub fn model(&self) -> Option<&Arc<Model>> {
        self.model.as_ref()
    }

    pub fn stencils(&self) -> &[Stencil] {
        &self.stencils
    }

    /// Feature count M produced for an image with the given channel count.
    pub fn planes_for(&self, channels: usize) -> usize {
        match self.kind {
            BankKind::Learned => self.model.as_ref().expect("learned bank has model").topo.m,
            _ => self.stencils.len() * channels,
        }
    }

    /// Extractor input tensor: three-channel images pass through, single
    /// channels are replicated.
    pub fn extractor_input(img: &Image) -> Tensor {
        let n = img.height() * img.width();
        let mut data = Vec::with_capacity(EXTRACTOR_IN * n);
        match img.channels() {
            3 => data.extend_from_slice(img.data()),
            _ => {
                for _ in 0..EXTRACTOR_IN {
                    data.extend_from_slice(img.plane(0));
                }
            }
        }
        Tensor {
            shape: vec![EXTRACTOR_IN, img.height(), img.width()],
            data,
        }
    }

    /// Build the feature planes of `img` on a tape. Fixed banks enter as
    /// constant leaves; the learned extractor contributes differentiable
    /// nodes. The boundary mode applies to fixed stencils only (the learned
    /// extractor is always circular).
    pub fn apply_graph(
        &self,
        tape: &mut Tape,
        img: &Image,
        boundary: Boundary,
    ) -> Result<crate::nn::NodeId> {
        let (h, w) = (img.height(), img.width());
        match self.kind {
            BankKind::Learned => {
                let model = self.model.as_ref().expect("learned bank has model");
                let bound = model.bind(tape);
                let input = tape.leaf(Self::extractor_input(img));
                Ok(model.extract(tape, &bound, input))
            }
            _ => {
                let m = self.planes_for(img.channels());
                let mut data = Vec::with_capacity(m * h * w);
                for stencil in &self.stencils {
                    for p in img.planes() {
                        data.extend(stencil.apply(h, w, p, boundary));
                    }
                }
                Ok(tape.leaf(Tensor {
                    shape: vec![m, h, w],
                    data,
                }))
            }
        }
    }
}

/// M feature planes sharing one spatial extent, tagged with where they
/// came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    m: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub bank: String,
    pub image: String,
}

impl FeatureStack {
    pub fn new(
        m: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        provenance: Provenance,
    ) -> Result<FeatureStack> {
        if m == 0 || data.len() != m * height * width {
            return Err(Error::dimension(format!(
                "stack data length {} does not match {m} planes of {height}x{width}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric("feature stack contains non-finite values"));
        }
        Ok(FeatureStack {
            m,
            height,
            width,
            data,
            provenance,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn plane(&self, i: usize) -> &[f64] {
        &self.data[i * self.height * self.width..(i + 1) * self.height * self.width]
    }

    pub fn planes(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.height * self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.m, self.height, self.width],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(t: &Tensor, provenance: Provenance) -> Result<FeatureStack> {
        let (m, h, w) = t.chw();
        FeatureStack::new(m, h, w, t.data.clone(), provenance)
    }
}

/// Apply a bank outside any training graph.
pub fn apply_bank(bank: &FilterBank, img: &Image, boundary: Boundary) -> Result<FeatureStack> {
    let mut tape = Tape::new();
    let node = bank.apply_graph(&mut tape, img, boundary)?;
    let stack = FeatureStack::from_tensor(
        tape.value(node),
        Provenance {
            bank: bank.kind().as_str().to_string(),
            image: format!("{}x{}x{}", img.height(), img.width(), img.channels()),
        },
    )?;
    if stack.m() != bank.planes_for(img.channels()) {
        return Err(Error::internal("stack plane count does not match bank"));
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blur::{blur, gen_kernel, NoiseSpec, TrajectoryKernelSpec};
    use crate::nn::Topology;

    fn rand_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect();
        Image::new(h, w, c, data).unwrap()
    }

    #[test]
    fn bank_kinds_parse_and_reject() {
        assert_eq!(BankKind::from_str("intensity").unwrap(), BankKind::Intensity);
        assert_eq!(
            BankKind::from_str("intensity+gradient").unwrap(),
            BankKind::IntensityPlusGradient
        );
        assert!(matches!(
            BankKind::from_str("sobel"),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            builtin_bank(BankKind::Learned),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn plane_counts_match_channel_expansion() {
        let cases = [
            (BankKind::Intensity, 1, 1),
            (BankKind::Intensity, 3, 3),
            (BankKind::Gradient, 1, 2),
            (BankKind::Gradient, 3, 6),
            (BankKind::IntensityPlusGradient, 1, 3),
            (BankKind::IntensityPlusGradient, 3, 9),
        ];
        for (kind, channels, m) in cases {
            assert_eq!(builtin_bank(kind).unwrap().planes_for(channels), m);
        }
    }

    #[test]
    fn intensity_bank_returns_the_image() {
        let img = rand_image(8, 8, 3, 1);
        let bank = builtin_bank(BankKind::Intensity).unwrap();
        let stack = apply_bank(&bank, &img, Boundary::Circular).unwrap();
        assert_eq!(stack.m(), 3);
        assert_eq!(stack.data(), img.data());
        assert_eq!(stack.provenance().bank, "intensity");
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let img = Image::constant(8, 8, 1, 0.6);
        let bank = builtin_bank(BankKind::Gradient).unwrap();
        let stack = apply_bank(&bank, &img, Boundary::Circular).unwrap();
        assert!(stack.data().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn gradient_of_ramp_is_constant_except_wrap() {
        let w = 16usize;
        let data: Vec<f64> = (0..8 * w).map(|i| (i % w) as f64 / (w - 1) as f64).collect();
        let img = Image::new(8, w, 1, data).unwrap();
        let bank = builtin_bank(BankKind::Gradient).unwrap();
        let stack = apply_bank(&bank, &img, Boundary::Circular).unwrap();
        let gx = stack.plane(0);
        let slope = 1.0 / (w - 1) as f64;
        for y in 0..8 {
            for x in 0..w - 1 {
                assert!((gx[y * w + x] - slope).abs() < 1e-12);
            }
            // Wrap column jumps back to zero.
            assert!((gx[y * w + w - 1] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_banks_commute_with_circular_blur() {
        let img = rand_image(24, 24, 1, 3);
        let k = gen_kernel(&TrajectoryKernelSpec {
            size: 9,
            steps: 20,
            anxiety: 0.3,
            seed: 4,
        })
        .unwrap();
        for kind in [
            BankKind::Intensity,
            BankKind::Gradient,
            BankKind::IntensityPlusGradient,
        ] {
            let bank = builtin_bank(kind).unwrap();
            let blurred = blur(&img, &k, &NoiseSpec::none(), Boundary::Circular).unwrap();
            let bank_then_blur = apply_bank(&bank, &img, Boundary::Circular)
                .unwrap()
                .planes()
                .map(|p| {
                    crate::convolve::convolve_plane_circular(24, 24, p, &k).unwrap()
                })
                .collect::<Vec<_>>();
            let blur_then_bank = apply_bank(&bank, &blurred, Boundary::Circular).unwrap();
            for (a, b) in bank_then_blur.iter().zip(blur_then_bank.planes()) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-8, "commutation failed for {kind:?}");
                }
            }
        }
    }

    fn learned_model(slope: f64, seed: u64) -> Model {
        Model::init(
            Topology {
                bank_tag: "learned".into(),
                m: 6,
                img_channels: 1,
                hidden: 4,
                slope,
                has_extractor: true,
            },
            seed,
        )
    }

    #[test]
    fn zero_weight_learned_bank_yields_zero_stack() {
        let model = Model::zeros(learned_model(0.1, 0).topo);
        let bank = bank_from_model(Arc::new(model)).unwrap();
        let img = rand_image(8, 8, 1, 5);
        let stack = apply_bank(&bank, &img, Boundary::Circular).unwrap();
        assert_eq!(stack.m(), 6);
        assert!(stack.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn learned_bank_is_deterministic_and_extent_preserving() {
        let bank = bank_from_model(Arc::new(learned_model(0.1, 7))).unwrap();
        let img = rand_image(10, 14, 3, 6);
        let a = apply_bank(&bank, &img, Boundary::Circular).unwrap();
        let b = apply_bank(&bank, &img, Boundary::Circular).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!((a.height(), a.width()), (10, 14));
        assert_eq!(a.m(), 6);
    }

    #[test]
    fn linearized_extractor_commutes_with_blur() {
        // Slope 1 turns activations into the identity; zero biases make the
        // extractor a linear circular filter, so it must commute with blur.
        let mut model = learned_model(1.0, 8);
        for (name, idx) in model
            .names()
            .to_vec()
            .iter()
            .map(|n| (n.clone(), model.param_index(n).unwrap()))
            .collect::<Vec<_>>()
        {
            if name.ends_with(".b") {
                for v in &mut model.params[idx].data {
                    *v = 0.0;
                }
            }
        }
        let bank = bank_from_model(Arc::new(model)).unwrap();
        let img = rand_image(16, 16, 1, 9);
        let k = gen_kernel(&TrajectoryKernelSpec {
            size: 7,
            steps: 15,
            anxiety: 0.2,
            seed: 10,
        })
        .unwrap();
        let blurred = blur(&img, &k, &NoiseSpec::none(), Boundary::Circular).unwrap();
        let ext_then_blur: Vec<Vec<f64>> = apply_bank(&bank, &img, Boundary::Circular)
            .unwrap()
            .planes()
            .map(|p| crate::convolve::convolve_plane_circular(16, 16, p, &k).unwrap())
            .collect();
        let blur_then_ext = apply_bank(&bank, &blurred, Boundary::Circular).unwrap();
        for (a, b) in ext_then_blur.iter().zip(blur_then_ext.planes()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6, "linearized commutation failed");
            }
        }
    }

    #[test]
    fn learned_bank_requires_extractor_weights() {
        let refiner_only = Model::init(
            Topology {
                bank_tag: "intensity".into(),
                m: 1,
                img_channels: 1,
                hidden: 4,
                slope: 0.1,
                has_extractor: false,
            },
            3,
        );
        assert!(matches!(
            bank_from_model(Arc::new(refiner_only)),
            Err(Error::Format(_))
        ));
    }
}
