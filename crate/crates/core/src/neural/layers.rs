use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{gemm, Scalar, Tensor};
use super::NeuralError;

/// A differentiable op with cached forward state. `backward` consumes the
/// most recent forward's cache and returns the gradient w.r.t. that
/// forward's input while accumulating parameter gradients.
pub trait Layer<S: Scalar> {
    fn forward(&mut self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>, NeuralError>;
    fn backward(&mut self, grad_out: &Tensor<S>) -> Tensor<S>;
    /// (value, gradient) pairs in a stable order; empty for stateless ops.
    fn params_mut(&mut self) -> Vec<(&mut Vec<S>, &mut Vec<S>)> {
        Vec::new()
    }
}

fn uniform_init<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<S> {
    (0..n)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect()
}

/// 1D cross-correlation with padding and stride, computed per sample as
/// im2col followed by GEMM; the unfolded panel for one sample stays
/// cache-resident, which is where the throughput comes from.
pub struct Conv1d<S> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// out_ch x (in_ch * kernel), row-major.
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub gw: Vec<S>,
    pub gb: Vec<S>,
    input: Option<Tensor<S>>,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(stride >= 1 && kernel >= 1);
        let fan_in = in_ch * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Conv1d {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            w: uniform_init(rng, out_ch * fan_in, bound),
            b: uniform_init(rng, out_ch, bound),
            gw: vec![S::ZERO; out_ch * fan_in],
            gb: vec![S::ZERO; out_ch],
            input: None,
        }
    }

    pub fn out_len(&self, l_in: usize) -> Result<usize, NeuralError> {
        let padded = l_in + 2 * self.padding;
        if padded < self.kernel {
            return Err(NeuralError::Shape(format!(
                "input length {l_in} shorter than kernel {}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// col is (in_ch * kernel) x l_out; out-of-range taps are zero.
    fn im2col(&self, x: &[S], l_in: usize, l_out: usize, col: &mut [S]) {
        for c in 0..self.in_ch {
            let xc = &x[c * l_in..(c + 1) * l_in];
            for t in 0..self.kernel {
                let row = &mut col[(c * self.kernel + t) * l_out..(c * self.kernel + t + 1) * l_out];
                for (o, slot) in row.iter_mut().enumerate() {
                    let pos = o * self.stride + t;
                    *slot = if pos < self.padding || pos - self.padding >= l_in {
                        S::ZERO
                    } else {
                        xc[pos - self.padding]
                    };
                }
            }
        }
    }
}

impl<S: Scalar> Layer<S> for Conv1d<S> {
    fn forward(&mut self, x: &Tensor<S>, _training: bool) -> Result<Tensor<S>, NeuralError> {
        let [batch, ch, l_in] = x.shape[..] else {
            return Err(NeuralError::Shape(format!("conv expects (B,C,L), got {:?}", x.shape)));
        };
        if ch != self.in_ch {
            return Err(NeuralError::Shape(format!(
                "conv expects {} channels, got {ch}",
                self.in_ch
            )));
        }
        let l_out = self.out_len(l_in)?;
        let ick = self.in_ch * self.kernel;
        let mut out = Tensor::zeros(&[batch, self.out_ch, l_out]);
        let mut col = vec![S::ZERO; ick * l_out];
        for s in 0..batch {
            self.im2col(&x.data[s * ch * l_in..(s + 1) * ch * l_in], l_in, l_out, &mut col);
            let o = &mut out.data[s * self.out_ch * l_out..(s + 1) * self.out_ch * l_out];
            gemm(self.out_ch, ick, l_out, &self.w, &col, o);
            for oc in 0..self.out_ch {
                let bias = self.b[oc];
                for v in &mut o[oc * l_out..(oc + 1) * l_out] {
                    *v += bias;
                }
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Tensor<S> {
        let x = self.input.as_ref().expect("conv backward before forward");
        let [batch, _, l_in] = x.shape[..] else { unreachable!() };
        let l_out = grad_out.shape[2];
        let ick = self.in_ch * self.kernel;
        let mut gx = Tensor::zeros(&x.shape);
        let mut col = vec![S::ZERO; ick * l_out];
        let mut col_t = vec![S::ZERO; l_out * ick];
        let mut dcol = vec![S::ZERO; ick * l_out];
        // w transposed once: (in_ch*kernel) x out_ch
        let mut w_t = vec![S::ZERO; ick * self.out_ch];
        for oc in 0..self.out_ch {
            for q in 0..ick {
                w_t[q * self.out_ch + oc] = self.w[oc * ick + q];
            }
        }
        for s in 0..batch {
            let gy = &grad_out.data[s * self.out_ch * l_out..(s + 1) * self.out_ch * l_out];
            for oc in 0..self.out_ch {
                let mut acc = S::ZERO;
                for &g in &gy[oc * l_out..(oc + 1) * l_out] {
                    acc += g;
                }
                self.gb[oc] += acc;
            }
            self.im2col(&x.data[s * self.in_ch * l_in..(s + 1) * self.in_ch * l_in], l_in, l_out, &mut col);
            for q in 0..ick {
                for o in 0..l_out {
                    col_t[o * ick + q] = col[q * l_out + o];
                }
            }
            gemm(self.out_ch, l_out, ick, gy, &col_t, &mut self.gw);
            dcol.fill(S::ZERO);
            gemm(ick, self.out_ch, l_out, &w_t, gy, &mut dcol);
            // col2im: scatter-add unfolded gradients back onto the input
            let gxs = &mut gx.data[s * self.in_ch * l_in..(s + 1) * self.in_ch * l_in];
            for c in 0..self.in_ch {
                for t in 0..self.kernel {
                    let drow = &dcol[(c * self.kernel + t) * l_out..(c * self.kernel + t + 1) * l_out];
                    for (o, &g) in drow.iter().enumerate() {
                        let pos = o * self.stride + t;
                        if pos >= self.padding && pos - self.padding < l_in {
                            gxs[c * l_in + pos - self.padding] += g;
                        }
                    }
                }
            }
        }
        gx
    }

    fn params_mut(&mut self) -> Vec<(&mut Vec<S>, &mut Vec<S>)> {
        vec![(&mut self.w, &mut self.gw), (&mut self.b, &mut self.gb)]
    }
}

/// Per-channel batch normalization over (batch, length). Training mode
/// normalizes with the biased batch variance and folds unbiased variance
/// into the running stats; eval mode replays the running stats.
pub struct BatchNorm1d<S> {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
    pub g_gamma: Vec<S>,
    pub g_beta: Vec<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    cache: Option<BnCache<S>>,
}

struct BnCache<S> {
    xhat: Vec<S>,
    inv_std: Vec<S>,
    shape: Vec<usize>,
    training: bool,
}

impl<S: Scalar> BatchNorm1d<S> {
    pub fn new(channels: usize) -> Self {
        BatchNorm1d {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: vec![S::ONE; channels],
            beta: vec![S::ZERO; channels],
            g_gamma: vec![S::ZERO; channels],
            g_beta: vec![S::ZERO; channels],
            running_mean: vec![S::ZERO; channels],
            running_var: vec![S::ONE; channels],
            cache: None,
        }
    }
}

impl<S: Scalar> Layer<S> for BatchNorm1d<S> {
    fn forward(&mut self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>, NeuralError> {
        let [batch, ch, len] = x.shape[..] else {
            return Err(NeuralError::Shape(format!("batchnorm expects (B,C,L), got {:?}", x.shape)));
        };
        if ch != self.channels {
            return Err(NeuralError::Shape(format!(
                "batchnorm expects {} channels, got {ch}",
                self.channels
            )));
        }
        if training && batch < 2 {
            return Err(NeuralError::SmallBatch);
        }
        let n = (batch * len) as f64;
        let mut out = Tensor::zeros(&x.shape);
        let mut xhat = vec![S::ZERO; x.numel()];
        let mut inv_std = vec![S::ZERO; ch];
        for c in 0..ch {
            let (mean, var) = if training {
                let mut sum = 0.0;
                for s in 0..batch {
                    let row = &x.data[(s * ch + c) * len..(s * ch + c + 1) * len];
                    sum += row.iter().map(|v| v.to_f64()).sum::<f64>();
                }
                let mean = sum / n;
                let mut ss = 0.0;
                for s in 0..batch {
                    let row = &x.data[(s * ch + c) * len..(s * ch + c + 1) * len];
                    ss += row.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>();
                }
                let var = ss / n;
                let unbiased = if n > 1.0 { ss / (n - 1.0) } else { var };
                let m = self.momentum;
                self.running_mean[c] =
                    S::from_f64((1.0 - m) * self.running_mean[c].to_f64() + m * mean);
                self.running_var[c] =
                    S::from_f64((1.0 - m) * self.running_var[c].to_f64() + m * unbiased);
                (mean, var)
            } else {
                (self.running_mean[c].to_f64(), self.running_var[c].to_f64())
            };
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = S::from_f64(istd);
            let mean_s = S::from_f64(mean);
            let istd_s = S::from_f64(istd);
            let g = self.gamma[c];
            let b = self.beta[c];
            for s in 0..batch {
                let base = (s * ch + c) * len;
                for i in 0..len {
                    let xh = (x.data[base + i] - mean_s) * istd_s;
                    xhat[base + i] = xh;
                    out.data[base + i] = g * xh + b;
                }
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            shape: x.shape.clone(),
            training,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Tensor<S> {
        let cache = self.cache.as_ref().expect("batchnorm backward before forward");
        let [batch, ch, len] = cache.shape[..] else { unreachable!() };
        let n = S::from_f64((batch * len) as f64);
        let mut gx = Tensor::zeros(&cache.shape);
        for c in 0..ch {
            let mut sum_dy = S::ZERO;
            let mut sum_dy_xhat = S::ZERO;
            for s in 0..batch {
                let base = (s * ch + c) * len;
                for i in 0..len {
                    let dy = grad_out.data[base + i];
                    sum_dy += dy;
                    sum_dy_xhat += dy * cache.xhat[base + i];
                }
            }
            self.g_beta[c] += sum_dy;
            self.g_gamma[c] += sum_dy_xhat;
            let scale = self.gamma[c] * cache.inv_std[c];
            if cache.training {
                let mean_dy = sum_dy / n;
                let mean_dy_xhat = sum_dy_xhat / n;
                for s in 0..batch {
                    let base = (s * ch + c) * len;
                    for i in 0..len {
                        let dy = grad_out.data[base + i];
                        gx.data[base + i] =
                            scale * (dy - mean_dy - cache.xhat[base + i] * mean_dy_xhat);
                    }
                }
            } else {
                for s in 0..batch {
                    let base = (s * ch + c) * len;
                    for i in 0..len {
                        gx.data[base + i] = scale * grad_out.data[base + i];
                    }
                }
            }
        }
        gx
    }

    fn params_mut(&mut self) -> Vec<(&mut Vec<S>, &mut Vec<S>)> {
        vec![
            (&mut self.gamma, &mut self.g_gamma),
            (&mut self.beta, &mut self.g_beta),
        ]
    }
}

pub struct Relu<S> {
    mask: Vec<S>,
    shape: Vec<usize>,
}

impl<S: Scalar> Relu<S> {
    pub fn new() -> Self {
        Relu {
            mask: Vec::new(),
            shape: Vec::new(),
        }
    }
}

impl<S: Scalar> Default for Relu<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Layer<S> for Relu<S> {
    fn forward(&mut self, x: &Tensor<S>, _training: bool) -> Result<Tensor<S>, NeuralError> {
        self.shape = x.shape.clone();
        self.mask = x
            .data
            .iter()
            .map(|&v| if v > S::ZERO { S::ONE } else { S::ZERO })
            .collect();
        Ok(Tensor::from_vec(
            &x.shape,
            x.data.iter().map(|&v| v.max_s(S::ZERO)).collect(),
        ))
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Tensor<S> {
        assert_eq!(grad_out.shape, self.shape, "relu backward shape");
        Tensor::from_vec(
            &self.shape,
            grad_out
                .data
                .iter()
                .zip(&self.mask)
                .map(|(&g, &m)| g * m)
                .collect(),
        )
    }
}

/// Inverted dropout: kept units are scaled by 1/keep during training so
/// eval is the identity. `freeze_mask` replays the last mask, which
/// finite-difference tests need.
pub struct Dropout<S> {
    pub p: f64,
    rng: ChaCha8Rng,
    pub freeze_mask: bool,
    mask: Vec<S>,
    applied: bool,
}

impl<S: Scalar> Dropout<S> {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p));
        Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            freeze_mask: false,
            mask: Vec::new(),
            applied: false,
        }
    }
}

impl<S: Scalar> Layer<S> for Dropout<S> {
    fn forward(&mut self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>, NeuralError> {
        if !training || self.p == 0.0 {
            self.applied = false;
            return Ok(x.clone());
        }
        let keep = 1.0 - self.p;
        let inv = S::from_f64(1.0 / keep);
        if !(self.freeze_mask && self.mask.len() == x.numel()) {
            self.mask = (0..x.numel())
                .map(|_| {
                    if self.rng.random_range(0.0..1.0) < keep {
                        inv
                    } else {
                        S::ZERO
                    }
                })
                .collect();
        }
        self.applied = true;
        Ok(Tensor::from_vec(
            &x.shape,
            x.data.iter().zip(&self.mask).map(|(&v, &m)| v * m).collect(),
        ))
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Tensor<S> {
        if !self.applied {
            return grad_out.clone();
        }
        Tensor::from_vec(
            &grad_out.shape,
            grad_out
                .data
                .iter()
                .zip(&self.mask)
                .map(|(&g, &m)| g * m)
                .collect(),
        )
    }
}

/// (B, C, L) -> (B, C) mean over the temporal axis.
pub struct GlobalAvgPool {
    in_shape: Vec<usize>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { in_shape: Vec::new() }
    }
}

impl Default for GlobalAvgPool {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Layer<S> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<S>, _training: bool) -> Result<Tensor<S>, NeuralError> {
        let [batch, ch, len] = x.shape[..] else {
            return Err(NeuralError::Shape(format!("pool expects (B,C,L), got {:?}", x.shape)));
        };
        if len == 0 {
            return Err(NeuralError::Shape("pool over empty axis".into()));
        }
        self.in_shape = x.shape.clone();
        let inv = S::from_f64(1.0 / len as f64);
        let mut out = Tensor::zeros(&[batch, ch]);
        for s in 0..batch {
            for c in 0..ch {
                let row = &x.data[(s * ch + c) * len..(s * ch + c + 1) * len];
                let mut acc = S::ZERO;
                for &v in row {
                    acc += v;
                }
                out.data[s * ch + c] = acc * inv;
            }
        }
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Tensor<S> {
        let [batch, ch, len] = self.in_shape[..] else {
            panic!("pool backward before forward")
        };
        let inv = S::from_f64(1.0 / len as f64);
        let mut gx = Tensor::zeros(&self.in_shape);
        for s in 0..batch {
            for c in 0..ch {
                let g = grad_out.data[s * ch + c] * inv;
                for v in &mut gx.data[(s * ch + c) * len..(s * ch + c + 1) * len] {
                    *v = g;
                }
            }
        }
        gx
    }
}

/// Fully connected layer; weights stored input-major (in x out) so the
/// forward GEMM streams rows directly.
pub struct Linear<S> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub gw: Vec<S>,
    pub gb: Vec<S>,
    input: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            in_dim,
            out_dim,
            w: uniform_init(rng, in_dim * out_dim, bound),
            b: uniform_init(rng, out_dim, bound),
            gw: vec![S::ZERO; in_dim * out_dim],
            gb: vec![S::ZERO; out_dim],
            input: None,
        }
    }
}

impl<S: Scalar> Layer<S> for Linear<S> {
    fn forward(&mut self, x: &Tensor<S>, _training: bool) -> Result<Tensor<S>, NeuralError> {
        let [batch, f] = x.shape[..] else {
            return Err(NeuralError::Shape(format!("linear expects (B,F), got {:?}", x.shape)));
        };
        if f != self.in_dim {
            return Err(NeuralError::Shape(format!(
                "linear expects {} features, got {f}",
                self.in_dim
            )));
        }
        let mut out = Tensor::zeros(&[batch, self.out_dim]);
        gemm(batch, self.in_dim, self.out_dim, &x.data, &self.w, &mut out.data);
        for s in 0..batch {
            for (o, &bias) in self.b.iter().enumerate() {
                out.data[s * self.out_dim + o] += bias;
            }
        }
        self.input = Some(x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Tensor<S> {
        let x = self.input.as_ref().expect("linear backward before forward");
        let batch = x.shape[0];
        for s in 0..batch {
            let gy = &grad_out.data[s * self.out_dim..(s + 1) * self.out_dim];
            for (o, &g) in gy.iter().enumerate() {
                self.gb[o] += g;
            }
            let xr = &x.data[s * self.in_dim..(s + 1) * self.in_dim];
            for (i, &xi) in xr.iter().enumerate() {
                let grow = &mut self.gw[i * self.out_dim..(i + 1) * self.out_dim];
                for (gv, &g) in grow.iter_mut().zip(gy) {
                    *gv = xi.mul_add(g, *gv);
                }
            }
        }
        // gx = gy * w^T; the head is small, so materializing w^T is cheap
        let mut w_t = vec![S::ZERO; self.out_dim * self.in_dim];
        for i in 0..self.in_dim {
            for o in 0..self.out_dim {
                w_t[o * self.in_dim + i] = self.w[i * self.out_dim + o];
            }
        }
        let mut gx = Tensor::zeros(&x.shape);
        gemm(batch, self.out_dim, self.in_dim, &grad_out.data, &w_t, &mut gx.data);
        gx
    }

    fn params_mut(&mut self) -> Vec<(&mut Vec<S>, &mut Vec<S>)> {
        vec![(&mut self.w, &mut self.gw), (&mut self.b, &mut self.gb)]
    }
}
