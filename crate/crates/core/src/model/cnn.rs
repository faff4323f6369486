use super::{Architecture, ForwardTrace, ModelParams, TraceStage, CNN_CHANNELS};
use crate::error::{Error, Result};
use crate::numcore::{sigmoid, Matrix};

struct Dims {
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
}

impl Dims {
    fn of(params: &ModelParams) -> Dims {
        let (h, w) = params.image_shape.expect("tiny-cnn always carries an image shape");
        Dims { h, w, ph: h / 2, pw: w / 2 }
    }

    fn maps(&self) -> usize {
        CNN_CHANNELS * self.h * self.w
    }

    fn pooled(&self) -> usize {
        CNN_CHANNELS * self.ph * self.pw
    }
}

fn pool_row(d: &Dims, act: &[f64], out: &mut [f64]) {
    for k in 0..CNN_CHANNELS {
        let a = &act[k * d.h * d.w..(k + 1) * d.h * d.w];
        for py in 0..d.ph {
            for px in 0..d.pw {
                let (y, x) = (2 * py, 2 * px);
                let s = a[y * d.w + x] + a[y * d.w + x + 1] + a[(y + 1) * d.w + x] + a[(y + 1) * d.w + x + 1];
                out[k * d.ph * d.pw + py * d.pw + px] = 0.25 * s;
            }
        }
    }
}

fn dense_row(params: &ModelParams, pooled: &[f64], out: &mut [f64]) {
    let wd = &params.tensors[2].data;
    let c = params.num_classes;
    out.copy_from_slice(&params.tensors[3].data);
    for (p, &v) in pooled.iter().enumerate() {
        if v != 0.0 {
            for (o, w) in out.iter_mut().zip(&wd[p * c..(p + 1) * c]) {
                *o += v * w;
            }
        }
    }
}

pub(super) fn forward(params: &ModelParams, batch: &Matrix) -> Result<(Matrix, TraceStage)> {
    let d = Dims::of(params);
    let n = batch.rows();
    let cw = &params.tensors[0].data;
    let cb = &params.tensors[1].data;
    let mut conv_pre = Matrix::zeros(n, d.maps());
    let mut activations = Matrix::zeros(n, d.maps());
    let mut pooled = Matrix::zeros(n, d.pooled());
    let mut logits = Matrix::zeros(n, params.num_classes);
    for i in 0..n {
        let img = batch.row(i);
        let pre = conv_pre.row_mut(i);
        for k in 0..CNN_CHANNELS {
            let kern = &cw[k * 9..(k + 1) * 9];
            for y in 0..d.h {
                for x in 0..d.w {
                    let mut s = cb[k];
                    for dy in 0..3 {
                        let yy = y as isize + dy as isize - 1;
                        if yy < 0 || yy >= d.h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let xx = x as isize + dx as isize - 1;
                            if xx < 0 || xx >= d.w as isize {
                                continue;
                            }
                            s += kern[dy * 3 + dx] * img[yy as usize * d.w + xx as usize];
                        }
                    }
                    pre[k * d.h * d.w + y * d.w + x] = s;
                }
            }
        }
        let act = activations.row_mut(i);
        for (a, &p) in act.iter_mut().zip(conv_pre.row(i)) {
            *a = p.max(0.0);
        }
        pool_row(&d, activations.row(i), pooled.row_mut(i));
        dense_row(params, pooled.row(i), logits.row_mut(i));
    }
    Ok((
        logits,
        TraceStage::Cnn {
            conv_pre,
            activations,
            pooled,
        },
    ))
}

pub(super) fn backward(params: &ModelParams, trace: &ForwardTrace, grad_logits: &Matrix) -> Result<Vec<Vec<f64>>> {
    let TraceStage::Cnn { conv_pre, pooled, .. } = &trace.stage else {
        return Err(Error::Contract("trace does not match architecture".into()));
    };
    let d = Dims::of(params);
    let c = params.num_classes;
    let wd = &params.tensors[2].data;
    let mut g_cw = vec![0.0; CNN_CHANNELS * 9];
    let mut g_cb = vec![0.0; CNN_CHANNELS];
    let mut g_wd = vec![0.0; d.pooled() * c];
    let mut g_bd = vec![0.0; c];
    let mut g_pooled = vec![0.0; d.pooled()];
    let mut g_pre = vec![0.0; d.maps()];
    for i in 0..trace.input.rows() {
        let gz = grad_logits.row(i);
        for (b, g) in g_bd.iter_mut().zip(gz) {
            *b += g;
        }
        let pr = pooled.row(i);
        for p in 0..d.pooled() {
            let row = &wd[p * c..(p + 1) * c];
            let mut acc = 0.0;
            for j in 0..c {
                g_wd[p * c + j] += pr[p] * gz[j];
                acc += row[j] * gz[j];
            }
            g_pooled[p] = acc;
        }
        let pre = conv_pre.row(i);
        g_pre.iter_mut().for_each(|g| *g = 0.0);
        for k in 0..CNN_CHANNELS {
            for y in 0..2 * d.ph {
                for x in 0..2 * d.pw {
                    let m = k * d.h * d.w + y * d.w + x;
                    if pre[m] > 0.0 {
                        g_pre[m] = 0.25 * g_pooled[k * d.ph * d.pw + (y / 2) * d.pw + x / 2];
                    }
                }
            }
        }
        let img = trace.input.row(i);
        for k in 0..CNN_CHANNELS {
            let gk = &g_pre[k * d.h * d.w..(k + 1) * d.h * d.w];
            g_cb[k] += gk.iter().sum::<f64>();
            for dy in 0..3 {
                for dx in 0..3 {
                    let mut s = 0.0;
                    for y in 0..d.h {
                        let yy = y as isize + dy as isize - 1;
                        if yy < 0 || yy >= d.h as isize {
                            continue;
                        }
                        for x in 0..d.w {
                            let xx = x as isize + dx as isize - 1;
                            if xx < 0 || xx >= d.w as isize {
                                continue;
                            }
                            s += gk[y * d.w + x] * img[yy as usize * d.w + xx as usize];
                        }
                    }
                    g_cw[k * 9 + dy * 3 + dx] += s;
                }
            }
        }
    }
    Ok(vec![g_cw, g_cb, g_wd, g_bd])
}

fn require_cnn(params: &ModelParams) -> Result<Dims> {
    if params.arch != Architecture::TinyCnn {
        return Err(Error::UnsupportedArchitecture(format!(
            "{} has no spatial feature maps",
            params.arch
        )));
    }
    Ok(Dims::of(params))
}

/// Logits computed from convolution activations (`K * H * W` values, after
/// ReLU) through pooling and the dense layer.
pub fn cnn_head_logits(params: &ModelParams, activations: &[f64]) -> Result<Vec<f64>> {
    let d = require_cnn(params)?;
    if activations.len() != d.maps() {
        return Err(Error::Shape(format!(
            "{} activation values, expected {}",
            activations.len(),
            d.maps()
        )));
    }
    let mut pooled = vec![0.0; d.pooled()];
    pool_row(&d, activations, &mut pooled);
    let mut out = vec![0.0; params.num_classes];
    dense_row(params, &pooled, &mut out);
    Ok(out)
}

/// Gradient of the class probability `sigmoid(z_class)` with respect to the
/// convolution activations of row `sample` of the trace.
pub fn cnn_activation_grad(params: &ModelParams, trace: &ForwardTrace, sample: usize, class: usize) -> Result<Vec<f64>> {
    let d = require_cnn(params)?;
    if trace.fingerprint != params.fingerprint() {
        return Err(Error::Contract("forward trace was produced by different parameters".into()));
    }
    let TraceStage::Cnn { activations, .. } = &trace.stage else {
        return Err(Error::Contract("trace does not match architecture".into()));
    };
    if sample >= trace.input.rows() || class >= params.num_classes {
        return Err(Error::Contract(format!("sample {sample} / class {class} out of range")));
    }
    let z = cnn_head_logits(params, activations.row(sample))?[class];
    let p = sigmoid(z);
    let dp = p * (1.0 - p);
    let c = params.num_classes;
    let wd = &params.tensors[2].data;
    let mut g = vec![0.0; d.maps()];
    for k in 0..CNN_CHANNELS {
        for y in 0..2 * d.ph {
            for x in 0..2 * d.pw {
                let p_idx = k * d.ph * d.pw + (y / 2) * d.pw + x / 2;
                g[k * d.h * d.w + y * d.w + x] = dp * 0.25 * wd[p_idx * c + class];
            }
        }
    }
    Ok(g)
}
