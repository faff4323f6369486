//! Small differentiable classifiers producing `C` logits per sample, with
//! hand-written backward passes.
//!
//! - [`Architecture::Linear`]: `logits = x W + b`, `W` is `D x C`.
//! - [`Architecture::Mlp`]: one hidden ReLU layer of [`MLP_HIDDEN`] units.
//! - [`Architecture::TinyCnn`]: 3x3 convolution with [`CNN_CHANNELS`]
//!   channels (stride 1, zero padding), ReLU, 2x2 average pooling, dense
//!   layer. Inputs are single-channel images flattened row-major.

mod checkpoint;
mod cnn;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use cnn::{cnn_activation_grad, cnn_head_logits};

use crate::error::{Error, Result};
use crate::numcore::{matmul, sigmoid, Matrix, RngStream};

pub const MLP_HIDDEN: usize = 32;
pub const CNN_CHANNELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Linear,
    Mlp,
    TinyCnn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Linear => "linear",
            Architecture::Mlp => "mlp",
            Architecture::TinyCnn => "tiny-cnn",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "linear" => Ok(Architecture::Linear),
            "mlp" => Ok(Architecture::Mlp),
            "tiny-cnn" | "tinycnn" | "cnn" => Ok(Architecture::TinyCnn),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }
}

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: &str, shape: &[usize]) -> Tensor {
        Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }
}

/// Parameters of one model. Tensors are stored in a fixed, declared order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: Architecture,
    input_dim: usize,
    num_classes: usize,
    /// `(height, width)` of the input image for [`Architecture::TinyCnn`].
    image_shape: Option<(usize, usize)>,
    tensors: Vec<Tensor>,
}

/// Gradients aligned with [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Gradients {
        Gradients(params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|&g| g == 0.0)
    }
}

/// Cached activations of one forward call.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    fingerprint: u64,
    pub(crate) input: Matrix,
    pub(crate) stage: TraceStage,
}

#[derive(Debug, Clone)]
pub(crate) enum TraceStage {
    Linear,
    Mlp {
        hidden_pre: Matrix,
        hidden: Matrix,
    },
    Cnn {
        /// `N x (K * H * W)` pre-activation of the convolution.
        conv_pre: Matrix,
        /// ReLU of `conv_pre`; the maps Grad-CAM weighs.
        activations: Matrix,
        /// `N x (K * H/2 * W/2)` pooled features.
        pooled: Matrix,
    },
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Convolution activations `N x (K * H * W)`, channel-major per row.
    pub fn conv_activations(&self) -> Option<&Matrix> {
        match &self.stage {
            TraceStage::Cnn { activations, .. } => Some(activations),
            _ => None,
        }
    }
}

fn shapes_for(arch: Architecture, input_dim: usize, num_classes: usize, image: Option<(usize, usize)>) -> Result<Vec<(&'static str, Vec<usize>)>> {
    Ok(match arch {
        Architecture::Linear => vec![("weight", vec![input_dim, num_classes]), ("bias", vec![num_classes])],
        Architecture::Mlp => vec![
            ("hidden.weight", vec![input_dim, MLP_HIDDEN]),
            ("hidden.bias", vec![MLP_HIDDEN]),
            ("out.weight", vec![MLP_HIDDEN, num_classes]),
            ("out.bias", vec![num_classes]),
        ],
        Architecture::TinyCnn => {
            let (h, w) = image.ok_or_else(|| Error::Config("tiny-cnn needs an image shape".into()))?;
            if h < 2 || w < 2 || h * w != input_dim {
                return Err(Error::Shape(format!(
                    "image shape {h}x{w} incompatible with input dimension {input_dim}"
                )));
            }
            vec![
                ("conv.weight", vec![CNN_CHANNELS, 3, 3]),
                ("conv.bias", vec![CNN_CHANNELS]),
                ("dense.weight", vec![CNN_CHANNELS * (h / 2) * (w / 2), num_classes]),
                ("dense.bias", vec![num_classes]),
            ]
        }
    })
}

/// Square image shape for a flattened input of `dim` features, if any.
pub fn square_shape(dim: usize) -> Option<(usize, usize)> {
    let side = (dim as f64).sqrt().round() as usize;
    (side * side == dim && side >= 2).then_some((side, side))
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(arch: Architecture, input_dim: usize, num_classes: usize, image_shape: Option<(usize, usize)>) -> Result<Self> {
        if input_dim == 0 || num_classes == 0 {
            return Err(Error::Shape("model needs positive input and output sizes".into()));
        }
        let image_shape = if arch == Architecture::TinyCnn { image_shape } else { None };
        let tensors = shapes_for(arch, input_dim, num_classes, image_shape)?
            .into_iter()
            .map(|(name, shape)| Tensor::zeros(name, &shape))
            .collect();
        Ok(ModelParams {
            arch,
            input_dim,
            num_classes,
            image_shape,
            tensors,
        })
    }

    /// Uniform `(-s, s)` initialization with `s = 1 / sqrt(fan_in)` for
    /// every weight and bias of a layer.
    pub fn init(
        arch: Architecture,
        input_dim: usize,
        num_classes: usize,
        image_shape: Option<(usize, usize)>,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut p = ModelParams::zeros(arch, input_dim, num_classes, image_shape)?;
        let fan_ins: Vec<usize> = match arch {
            Architecture::Linear => vec![input_dim, input_dim],
            Architecture::Mlp => vec![input_dim, input_dim, MLP_HIDDEN, MLP_HIDDEN],
            Architecture::TinyCnn => {
                let dense_in = p.tensors[2].shape[0];
                vec![9, 9, dense_in, dense_in]
            }
        };
        for (t, fan_in) in p.tensors.iter_mut().zip(fan_ins) {
            let s = 1.0 / (fan_in as f64).sqrt();
            for v in t.data.iter_mut() {
                *v = rng.uniform_range(-s, s);
            }
        }
        Ok(p)
    }

    /// Builds parameters from explicit tensors, validating names and shapes.
    pub fn from_tensors(
        arch: Architecture,
        input_dim: usize,
        num_classes: usize,
        image_shape: Option<(usize, usize)>,
        tensors: Vec<Tensor>,
    ) -> Result<Self> {
        let expected = ModelParams::zeros(arch, input_dim, num_classes, image_shape)?;
        if tensors.len() != expected.tensors.len() {
            return Err(Error::Shape(format!(
                "{} tensors given, {arch} expects {}",
                tensors.len(),
                expected.tensors.len()
            )));
        }
        for (got, want) in tensors.iter().zip(&expected.tensors) {
            if got.name != want.name || got.shape != want.shape || got.data.len() != want.data.len() {
                return Err(Error::Shape(format!(
                    "tensor '{}' {:?} does not match expected '{}' {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
            if got.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("tensor '{}' has non-finite values", got.name)));
            }
        }
        Ok(ModelParams { tensors, ..expected })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.image_shape
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// FNV-1a over shapes and value bits; ties a trace to the exact
    /// parameters that produced it.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.arch as u64);
        for t in &self.tensors {
            t.shape.iter().for_each(|&d| eat(d as u64));
            t.data.iter().for_each(|v| eat(v.to_bits()));
        }
        h
    }

    fn mat(&self, idx: usize) -> Matrix {
        let t = &self.tensors[idx];
        Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone()).expect("validated shape")
    }
}

fn add_bias(m: &mut Matrix, bias: &[f64]) {
    for r in 0..m.rows() {
        for (v, b) in m.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

/// Logits for a batch of inputs (`N x D`) and the trace needed by
/// [`backward`].
pub fn forward(params: &ModelParams, batch: &Matrix) -> Result<(Matrix, ForwardTrace)> {
    if batch.cols() != params.input_dim {
        return Err(Error::Shape(format!(
            "input has {} features, model expects {}",
            batch.cols(),
            params.input_dim
        )));
    }
    let (logits, stage) = match params.arch {
        Architecture::Linear => {
            let mut z = matmul(batch, &params.mat(0))?;
            add_bias(&mut z, &params.tensors[1].data);
            (z, TraceStage::Linear)
        }
        Architecture::Mlp => {
            let mut hidden_pre = matmul(batch, &params.mat(0))?;
            add_bias(&mut hidden_pre, &params.tensors[1].data);
            let hidden = hidden_pre.map(|v| v.max(0.0));
            let mut z = matmul(&hidden, &params.mat(2))?;
            add_bias(&mut z, &params.tensors[3].data);
            (z, TraceStage::Mlp { hidden_pre, hidden })
        }
        Architecture::TinyCnn => cnn::forward(params, batch)?,
    };
    Ok((
        logits,
        ForwardTrace {
            fingerprint: params.fingerprint(),
            input: batch.clone(),
            stage,
        },
    ))
}

/// Parameter gradients given `d loss / d logits`.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, grad_logits: &Matrix) -> Result<Gradients> {
    if trace.fingerprint != params.fingerprint() {
        return Err(Error::Contract("forward trace was produced by different parameters".into()));
    }
    if grad_logits.shape() != (trace.input.rows(), params.num_classes) {
        return Err(Error::Contract(format!(
            "upstream gradient is {}x{}, expected {}x{}",
            grad_logits.rows(),
            grad_logits.cols(),
            trace.input.rows(),
            params.num_classes
        )));
    }
    let grads = match (&trace.stage, params.arch) {
        (TraceStage::Linear, Architecture::Linear) => {
            let gw = matmul(&trace.input.transpose(), grad_logits)?;
            vec![gw.into_vec(), column_sums(grad_logits)]
        }
        (TraceStage::Mlp { hidden_pre, hidden }, Architecture::Mlp) => {
            let g_w2 = matmul(&hidden.transpose(), grad_logits)?;
            let g_b2 = column_sums(grad_logits);
            let mut g_hidden = matmul(grad_logits, &params.mat(2).transpose())?;
            for (g, &pre) in g_hidden.as_mut_slice().iter_mut().zip(hidden_pre.as_slice()) {
                if pre <= 0.0 {
                    *g = 0.0;
                }
            }
            let g_w1 = matmul(&trace.input.transpose(), &g_hidden)?;
            let g_b1 = column_sums(&g_hidden);
            vec![g_w1.into_vec(), g_b1, g_w2.into_vec(), g_b2]
        }
        (TraceStage::Cnn { .. }, Architecture::TinyCnn) => cnn::backward(params, trace, grad_logits)?,
        _ => return Err(Error::Contract("trace does not match architecture".into())),
    };
    Ok(Gradients(grads))
}

/// Independent per-class probabilities `sigmoid(logits)`.
pub fn predict_proba(params: &ModelParams, batch: &Matrix) -> Result<Matrix> {
    let (logits, _) = forward(params, batch)?;
    Ok(logits.map(sigmoid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn linear(w: &[[f64; 2]; 2], b: [f64; 2]) -> ModelParams {
        ModelParams::from_tensors(
            Architecture::Linear,
            2,
            2,
            None,
            vec![
                Tensor {
                    name: "weight".into(),
                    shape: vec![2, 2],
                    data: w.iter().flatten().copied().collect(),
                },
                Tensor {
                    name: "bias".into(),
                    shape: vec![2],
                    data: b.to_vec(),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn linear_forward_examples() {
        let x = Matrix::from_rows(&[[0.3, -1.2], [2.0, 5.0]]).unwrap();
        let (z, _) = forward(&linear(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]), &x).unwrap();
        assert_eq!(z, x);
        let (z, _) = forward(&ModelParams::zeros(Architecture::Mlp, 2, 3, None).unwrap(), &x).unwrap();
        assert_eq!(z, Matrix::zeros(2, 3));
        // x W + b with W = [[1,2],[3,4]], b = (1,-1), x = (1,1)
        let one = Matrix::from_rows(&[[1.0, 1.0]]).unwrap();
        let (z, _) = forward(&linear(&[[1.0, 2.0], [3.0, 4.0]], [1.0, -1.0]), &one).unwrap();
        assert_eq!(z.row(0), &[5.0, 5.0]);
        assert!(forward(&linear(&[[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]), &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn linear_backward_closed_form() {
        let params = linear(&[[0.5, -0.2], [0.1, 0.3]], [0.0, 0.1]);
        let x = Matrix::from_rows(&[[2.0, -1.0]]).unwrap();
        let (_, trace) = forward(&params, &x).unwrap();
        let g = Matrix::from_rows(&[[0.25, -0.5]]).unwrap();
        let grads = backward(&params, &trace, &g).unwrap();
        assert_eq!(grads.0[0], vec![0.5, -1.0, -0.25, 0.5]);
        assert_eq!(grads.0[1], vec![0.25, -0.5]);
        let zero = backward(&params, &trace, &Matrix::zeros(1, 2)).unwrap();
        assert!(zero.is_zero());
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut params = linear(&[[0.5, -0.2], [0.1, 0.3]], [0.0, 0.1]);
        let x = Matrix::from_rows(&[[2.0, -1.0]]).unwrap();
        let (_, trace) = forward(&params, &x).unwrap();
        params.tensors_mut()[1].data[0] = 9.0;
        assert!(matches!(
            backward(&params, &trace, &Matrix::zeros(1, 2)),
            Err(Error::Contract(_))
        ));
        let other = ModelParams::zeros(Architecture::Linear, 2, 2, None).unwrap();
        assert!(backward(&other, &trace, &Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn probabilities_are_independent_sigmoids() {
        let params = ModelParams::zeros(Architecture::Linear, 3, 4, None).unwrap();
        let p = predict_proba(&params, &Matrix::filled(2, 3, 1.0)).unwrap();
        assert!(p.as_slice().iter().all(|&v| v == 0.5));
        assert_eq!(p.row(0).iter().sum::<f64>(), 2.0);
        let params = linear(&[[2.0, 0.0], [0.0, 0.0]], [0.0, 0.0]);
        let p = predict_proba(&params, &Matrix::from_rows(&[[1.0, 0.0]]).unwrap()).unwrap();
        assert_abs_diff_eq!(p.get(0, 0), 0.880_797, epsilon = 1e-6);
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = RngStream::new(3, 0);
        let params = ModelParams::init(Architecture::TinyCnn, 16, 3, Some((4, 4)), &mut rng).unwrap();
        let x = Matrix::from_vec(2, 16, (0..32).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let (a, _) = forward(&params, &x).unwrap();
        let (b, _) = forward(&params, &x).unwrap();
        assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    fn weighted_logit_sum(params: &ModelParams, x: &Matrix, g: &Matrix) -> f64 {
        let (z, _) = forward(params, x).unwrap();
        z.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngStream::new(5, 2);
        for (arch, dim, shape) in [
            (Architecture::Linear, 6, None),
            (Architecture::Mlp, 6, None),
            (Architecture::TinyCnn, 36, Some((6, 6))),
        ] {
            let params = ModelParams::init(arch, dim, 3, shape, &mut rng).unwrap();
            let x = Matrix::from_vec(4, dim, (0..4 * dim).map(|_| rng.normal()).collect()).unwrap();
            let g = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
            let (_, trace) = forward(&params, &x).unwrap();
            let grads = backward(&params, &trace, &g).unwrap();
            let h = 1e-6;
            for (t, gt) in params.tensors().iter().enumerate() {
                for j in (0..gt.data.len()).step_by(gt.data.len() / 7 + 1) {
                    let mut plus = params.clone();
                    plus.tensors_mut()[t].data[j] += h;
                    let mut minus = params.clone();
                    minus.tensors_mut()[t].data[j] -= h;
                    let fd = (weighted_logit_sum(&plus, &x, &g) - weighted_logit_sum(&minus, &x, &g)) / (2.0 * h);
                    let an = grads.0[t][j];
                    assert!(
                        (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                        "{arch} {} [{j}]: analytic {an} vs numeric {fd}",
                        gt.name
                    );
                }
            }
        }
    }

    #[test]
    fn cnn_activation_grad_matches_finite_differences() {
        let mut rng = RngStream::new(8, 0);
        let params = ModelParams::init(Architecture::TinyCnn, 16, 2, Some((4, 4)), &mut rng).unwrap();
        let x = Matrix::from_vec(1, 16, (0..16).map(|_| rng.uniform()).collect()).unwrap();
        let (_, trace) = forward(&params, &x).unwrap();
        let acts = trace.conv_activations().unwrap().row(0).to_vec();
        let g = cnn_activation_grad(&params, &trace, 0, 1).unwrap();
        let h = 1e-6;
        for m in 0..acts.len() {
            let mut a = acts.clone();
            a[m] += h;
            let up = sigmoid(cnn_head_logits(&params, &a).unwrap()[1]);
            a[m] -= 2.0 * h;
            let down = sigmoid(cnn_head_logits(&params, &a).unwrap()[1]);
            assert!(((up - down) / (2.0 * h) - g[m]).abs() < 1e-8);
        }
        let lin = ModelParams::zeros(Architecture::Linear, 16, 2, None).unwrap();
        assert!(matches!(cnn_head_logits(&lin, &acts), Err(Error::UnsupportedArchitecture(_))));
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let mut rng = RngStream::new(1, 1);
        let p = ModelParams::init(Architecture::Mlp, 16, 3, None, &mut rng).unwrap();
        let s1 = 1.0 / 4.0;
        assert!(p.tensors()[0].data.iter().all(|v| v.abs() < s1));
        let s2 = 1.0 / (MLP_HIDDEN as f64).sqrt();
        assert!(p.tensors()[2].data.iter().all(|v| v.abs() < s2));
        assert!(ModelParams::zeros(Architecture::TinyCnn, 15, 2, Some((3, 5))).is_ok());
        assert!(ModelParams::zeros(Architecture::TinyCnn, 16, 2, None).is_err());
    }
}
