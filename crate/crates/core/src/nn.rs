//! Small layer kit on top of `candle_core` tensors.
//!
//! Convolutions are built from shifted slices and a matmul, which keeps
//! every layer differentiable through the core tensor ops only.

use std::collections::{BTreeMap, BTreeSet};

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-a, a]`.
    Uniform(f64),
    Normal(f64),
}

/// A named parameter array in `f32`, the on-disk representation.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub var: Option<Var>,
}

/// Owns every parameter and fixed buffer of a model, in creation order.
#[derive(Debug)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    seed: u64,
    trainable: bool,
    params: Vec<Param>,
    buffers: Vec<(String, Tensor)>,
    names: BTreeSet<String>,
    preset: Option<BTreeMap<String, NamedArray>>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, trainable: bool) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            seed,
            trainable,
            params: Vec::new(),
            buffers: Vec::new(),
            names: BTreeSet::new(),
            preset: None,
        }
    }

    /// Store whose parameters and buffers are taken from `arrays` by name.
    pub fn from_arrays(arrays: Vec<NamedArray>, dtype: DType, trainable: bool) -> Self {
        let mut s = Self::new(0, dtype, trainable);
        s.preset = Some(arrays.into_iter().map(|a| (a.name.clone(), a)).collect());
        s
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn materialize(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if !self.names.insert(name.to_string()) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let count: usize = shape.iter().product();
        let values: Vec<f64> = match &self.preset {
            Some(preset) => {
                let a = preset
                    .get(name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
                if a.shape != shape {
                    return Err(Error::Checkpoint(format!(
                        "parameter {name} has shape {:?}, model expects {shape:?}",
                        a.shape
                    )));
                }
                a.values.iter().map(|v| f64::from(*v)).collect()
            }
            None => {
                let mut r = rng::stream(self.seed, rng::fnv1a(name.as_bytes()));
                match init {
                    Init::Zeros => vec![0.0; count],
                    Init::Ones => vec![1.0; count],
                    Init::Uniform(a) => (0..count).map(|_| r.gen_range(-a..=a)).collect(),
                    Init::Normal(s) => (0..count)
                        .map(|_| { let z: f64 = StandardNormal.sample(&mut r); s * z })
                        .collect(),
                }
            }
        };
        // Values pass through f32 so a freshly built model equals its saved copy.
        let values: Vec<f64> = values.into_iter().map(|v| f64::from(v as f32)).collect();
        Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let t = self.materialize(name, shape, init)?;
        let (tensor, var) = if self.trainable {
            let var = Var::from_tensor(&t)?;
            (var.as_tensor().clone(), Some(var))
        } else {
            (t, None)
        };
        self.params.push(Param {
            name: name.to_string(),
            tensor: tensor.clone(),
            var,
        });
        Ok(tensor)
    }

    /// Fixed, non-learnable array saved alongside the parameters.
    pub fn buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let t = self.materialize(name, shape, init)?;
        self.buffers.push((name.to_string(), t.clone()));
        Ok(t)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn vars(&self) -> Vec<&Var> {
        self.params.iter().filter_map(|p| p.var.as_ref()).collect()
    }

    /// Exact number of learnable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.elem_count()).sum()
    }

    pub fn to_arrays(&self) -> Result<Vec<NamedArray>> {
        let mut out = Vec::with_capacity(self.params.len() + self.buffers.len());
        let all = self
            .params
            .iter()
            .map(|p| (&p.name, &p.tensor))
            .chain(self.buffers.iter().map(|(n, t)| (n, t)));
        for (name, t) in all {
            out.push(NamedArray {
                name: name.clone(),
                shape: t.dims().to_vec(),
                values: t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?,
            });
        }
        Ok(out)
    }
}

pub fn count_params(store: &ParamStore) -> usize {
    store.count()
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = store.param(&format!("{name}.weight"), &[output, input], Init::Uniform(bound))?;
        let bias = if bias {
            Some(store.param(&format!("{name}.bias"), &[output], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    /// Applies to the last dimension of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// Left-padded 1-D convolution on `(B, C, L)`; output frame `i` sees input frames `<= i`.
///
/// With stride 2 the output keeps every second position, ending each pair,
/// so output `i` summarizes input frames `<= 2i + 1`.
#[derive(Clone, Debug)]
pub struct CausalConv1d {
    weight: Tensor,
    bias: Tensor,
    kernel: usize,
    stride: usize,
}

impl CausalConv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((input * kernel) as f64).sqrt();
        Ok(Self {
            weight: store.param(&format!("{name}.weight"), &[output, input * kernel], Init::Uniform(bound))?,
            bias: store.param(&format!("{name}.bias"), &[output], Init::Zeros)?,
            kernel,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = x.dims3()?;
        let padded = if self.kernel > 1 {
            x.pad_with_zeros(2, self.kernel - 1, 0)?
        } else {
            x.clone()
        };
        let taps = (0..self.kernel)
            .map(|k| padded.narrow(2, k, l))
            .collect::<candle_core::Result<Vec<_>>>()?;
        // (B, C, K, L) -> (B, C*K, L) with column index c*K + k.
        let cols = Tensor::stack(&taps, 2)?.reshape((b, c * self.kernel, l))?;
        let cols = if self.stride > 1 {
            let keep = l / self.stride;
            cols.narrow(2, 0, keep * self.stride)?
                .reshape((b, c * self.kernel, keep, self.stride))?
                .narrow(3, self.stride - 1, 1)?
                .squeeze(3)?
        } else {
            cols
        };
        let y = self.weight.broadcast_matmul(&cols.contiguous()?)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Upper-triangular ones `(L, L)`: `x @ U` is a running sum along time.
pub fn cumsum_matrix(len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let data: Vec<f64> = (0..len * len)
        .map(|k| if k / len <= k % len { 1.0 } else { 0.0 })
        .collect();
    Ok(Tensor::from_vec(data, (len, len), device)?.to_dtype(dtype)?)
}

/// Group normalization whose statistics at frame `τ` use frames `<= τ` only.
#[derive(Clone, Debug)]
pub struct CausalGroupNorm {
    gamma: Tensor,
    beta: Tensor,
    groups: usize,
    eps: f64,
}

impl CausalGroupNorm {
    /// Uses `gcd(groups, channels)` groups so any width is accepted.
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&format!("{name}.weight"), &[channels], Init::Ones)?,
            beta: store.param(&format!("{name}.bias"), &[channels], Init::Zeros)?,
            groups: gcd(groups.max(1), channels),
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = x.dims3()?;
        let per = c / self.groups;
        let grouped = x.reshape((b, self.groups, per, l))?;
        let tri = cumsum_matrix(l, x.dtype(), x.device())?;
        let count: Vec<f64> = (0..l).map(|t| ((t + 1) * per) as f64).collect();
        let count = Tensor::from_vec(count, (1, 1, l), x.device())?.to_dtype(x.dtype())?;
        let s1 = grouped.sum(2)?.broadcast_matmul(&tri)?.broadcast_div(&count)?;
        let s2 = grouped.sqr()?.sum(2)?.broadcast_matmul(&tri)?.broadcast_div(&count)?;
        let var = (s2 - s1.sqr()?)?.relu()?;
        let mean = s1.unsqueeze(2)?;
        let denom = (var + self.eps)?.sqrt()?.unsqueeze(2)?;
        let normed = grouped.broadcast_sub(&mean)?.broadcast_div(&denom)?.reshape((b, c, l))?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1))?)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&format!("{name}.weight"), &[dim], Init::Ones)?,
            beta: store.param(&format!("{name}.bias"), &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Softmax over the last dimension; the subtracted maximum is treated as a constant.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub const MASKED: f64 = -1e9;

/// Additive mask `(Lq, Lk)`: 0 where `allowed(q, k)`, a large negative value elsewhere.
pub fn additive_mask(
    lq: usize,
    lk: usize,
    allowed: impl Fn(usize, usize) -> bool,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let data: Vec<f64> = (0..lq * lk)
        .map(|i| if allowed(i / lk, i % lk) { 0.0 } else { MASKED })
        .collect();
    Ok(Tensor::from_vec(data, (lq, lk), device)?.to_dtype(dtype)?)
}

/// Sinusoidal position table `(len, dim)`.
pub fn sinusoidal_positions(len: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = vec![0.0f64; len * dim];
    for pos in 0..len {
        for i in 0..dim / 2 {
            let freq = (-(10000f64.ln()) * (2 * i) as f64 / dim as f64).exp();
            let a = pos as f64 * freq;
            data[pos * dim + 2 * i] = a.sin();
            data[pos * dim + 2 * i + 1] = a.cos();
        }
    }
    Ok(Tensor::from_vec(data, (len, dim), device)?.to_dtype(dtype)?)
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    /// `value_bias = false` removes the value and output biases, so an
    /// all-zero memory contributes exactly zero.
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, value_bias: bool) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::InvalidArgument(format!("{dim} not divisible into {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, value_bias)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, value_bias)?,
            heads,
        })
    }

    /// `query (B, Lq, D)`, `memory (B, Lk, D)`, additive `mask` broadcastable to `(B, Lq, Lk)`.
    pub fn forward(&self, query: &Tensor, memory: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        let (b, lq, d) = query.dims3()?;
        let lk = memory.dim(1)?;
        let hd = d / self.heads;
        let split = |x: Tensor, l: usize| -> Result<Tensor> {
            Ok(x.reshape((b, l, self.heads, hd))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(query)?, lq)?;
        let k = split(self.k.forward(memory)?, lk)?;
        let v = split(self.v.forward(memory)?, lk)?;
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? / (hd as f64).sqrt())?;
        if let Some(m) = mask {
            let m = match m.rank() {
                2 => m.unsqueeze(0)?.unsqueeze(0)?,
                3 => m.unsqueeze(1)?,
                _ => m.clone(),
            };
            scores = scores.broadcast_add(&m)?;
        }
        let attn = softmax_last(&scores)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, lq, d))?;
        self.o.forward(&out)
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.gelu()?)
    }
}

/// Decoupled weight-decay Adam over a fixed list of variables.
#[derive(Debug)]
pub struct AdamW {
    vars: Vec<Var>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    pub step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(vars: Vec<Var>, weight_decay: f64) -> Result<Self> {
        let first = vars
            .iter()
            .map(|v| v.as_tensor().zeros_like())
            .collect::<candle_core::Result<Vec<_>>>()?;
        let second = first.clone();
        Ok(Self {
            vars,
            first,
            second,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        })
    }

    pub fn apply(&mut self, grads: &candle_core::backprop::GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((var, m), v) in self.vars.iter().zip(&mut self.first).zip(&mut self.second) {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            *m = ((&*m * self.beta1)? + (g * (1.0 - self.beta1))?)?;
            *v = ((&*v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&*m / bc1)?;
            let v_hat = (&*v / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            let theta = var.as_tensor();
            let next = ((theta * (1.0 - lr * self.weight_decay))? - (update * lr)?)?;
            var.set(&next.detach())?;
        }
        Ok(())
    }

    /// First and second moments, in variable order.
    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first, &self.second)
    }

    pub fn restore(&mut self, step: usize, first: Vec<Tensor>, second: Vec<Tensor>) -> Result<()> {
        if first.len() != self.vars.len() || second.len() != self.vars.len() {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        self.step = step;
        self.first = first;
        self.second = second;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Tensor, b: &[f64], tol: f64) {
        let a = a.flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{x} vs {y}");
        }
    }

    #[test]
    fn linear_count_is_closed_form() {
        let mut s = ParamStore::new(0, DType::F64, false);
        assert_eq!(count_params(&s), 0);
        Linear::new(&mut s, "l", 7, 5, true).unwrap();
        assert_eq!(count_params(&s), 7 * 5 + 5);
    }

    #[test]
    fn causal_conv_matches_direct_sum() {
        let mut s = ParamStore::new(3, DType::F64, false);
        let conv = CausalConv1d::new(&mut s, "c", 2, 3, 3, 1).unwrap();
        let x = Tensor::from_vec((0..2 * 2 * 6).map(|v| (v as f64 * 0.37).sin()).collect::<Vec<_>>(), (2, 2, 6), &Device::Cpu).unwrap();
        let y = conv.forward(&x).unwrap();
        let w = conv.weight.to_vec2::<f64>().unwrap();
        let xs = x.to_vec3::<f64>().unwrap();
        let mut expect = Vec::new();
        for b in 0..2 {
            for o in 0..3 {
                for t in 0..6 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for k in 0..3 {
                            // tap k reads frame t + k - 2
                            let src = t as i64 + k as i64 - 2;
                            if src >= 0 {
                                acc += w[o][c * 3 + k] * xs[b][c][src as usize];
                            }
                        }
                    }
                    expect.push(acc);
                }
            }
        }
        close(&y, &expect, 1e-12);
        let strided = CausalConv1d { stride: 2, ..conv };
        let ys = strided.forward(&x).unwrap();
        assert_eq!(ys.dims(), &[2, 3, 3]);
        let odd: Vec<f64> = expect.chunks(6).flat_map(|r| vec![r[1], r[3], r[5]]).collect();
        close(&ys, &odd, 1e-12);
    }

    #[test]
    fn causal_group_norm_ignores_future_frames() {
        let mut s = ParamStore::new(0, DType::F64, false);
        let gn = CausalGroupNorm::new(&mut s, "g", 4, 2).unwrap();
        let base: Vec<f64> = (0..4 * 8).map(|v| (v as f64 * 0.9).cos()).collect();
        let mut changed = base.clone();
        for c in 0..4 {
            changed[c * 8 + 7] += 5.0;
        }
        let a = gn.forward(&Tensor::from_vec(base, (1, 4, 8), &Device::Cpu).unwrap()).unwrap();
        let b = gn.forward(&Tensor::from_vec(changed, (1, 4, 8), &Device::Cpu).unwrap()).unwrap();
        let a = a.narrow(2, 0, 7).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let b = b.narrow(2, 0, 7).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_mask_is_exact() {
        let x = Tensor::from_vec(vec![1.0f64, 2.0, 3.0, MASKED], (1, 4), &Device::Cpu).unwrap();
        let p = softmax_last(&x).unwrap().to_vec2::<f64>().unwrap();
        assert!((p[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(p[0][3], 0.0);
    }

    #[test]
    fn preset_store_reproduces_parameters() {
        let mut a = ParamStore::new(5, DType::F32, true);
        Linear::new(&mut a, "l", 3, 2, true).unwrap();
        a.buffer("freq", &[4], Init::Normal(1.0)).unwrap();
        let arrays = a.to_arrays().unwrap();
        let mut b = ParamStore::from_arrays(arrays.clone(), DType::F32, false);
        Linear::new(&mut b, "l", 3, 2, true).unwrap();
        b.buffer("freq", &[4], Init::Normal(1.0)).unwrap();
        assert_eq!(b.to_arrays().unwrap(), arrays);
        let mut c = ParamStore::from_arrays(arrays, DType::F32, false);
        assert!(Linear::new(&mut c, "l", 4, 2, true).is_err());
    }
}
