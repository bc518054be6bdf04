use candle_core::{DType, Device, Tensor};

use crate::nn::{CausalConv1d, CausalGroupNorm, FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamStore};
use crate::Result;

/// Two causal conv → group-norm → SiLU stacks with a residual path and an
/// additive per-channel time projection after the first norm.
#[derive(Clone, Debug)]
pub(crate) struct ResBlock {
    conv1: CausalConv1d,
    norm1: CausalGroupNorm,
    time: Linear,
    conv2: CausalConv1d,
    norm2: CausalGroupNorm,
    skip: Option<CausalConv1d>,
}

impl ResBlock {
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        kernel: usize,
        groups: usize,
        time_dim: usize,
    ) -> Result<Self> {
        Ok(Self {
            conv1: CausalConv1d::new(store, &format!("{name}.conv1"), input, output, kernel, 1)?,
            norm1: CausalGroupNorm::new(store, &format!("{name}.norm1"), output, groups)?,
            time: Linear::new(store, &format!("{name}.time"), time_dim, output, true)?,
            conv2: CausalConv1d::new(store, &format!("{name}.conv2"), output, output, kernel, 1)?,
            norm2: CausalGroupNorm::new(store, &format!("{name}.norm2"), output, groups)?,
            skip: if input != output {
                Some(CausalConv1d::new(store, &format!("{name}.skip"), input, output, 1, 1)?)
            } else {
                None
            },
        })
    }

    /// `x (B, C, L)`, `temb (B, H)`.
    pub(crate) fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?;
        let h = h.broadcast_add(&self.time.forward(temb)?.unsqueeze(2)?)?.silu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?.silu()?;
        let residual = match &self.skip {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        Ok((h + residual)?)
    }
}

/// Matrix `(L, 2L)` for causal linear upsampling: output `2i + 1` copies
/// token `i`, output `2i` averages tokens `i − 1` and `i` (token `−1` := token 0).
pub(crate) fn upsample_matrix(len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let cols = 2 * len;
    let mut m = vec![0.0f64; len * cols];
    for i in 0..len {
        m[i * cols + 2 * i + 1] = 1.0;
        m[i * cols + 2 * i] += 0.5;
        m[i.saturating_sub(1) * cols + 2 * i] += 0.5;
    }
    Ok(Tensor::from_vec(m, (len, cols), device)?.to_dtype(dtype)?)
}

/// Pre-norm transformer layer: self-attention, optional cross-attention, feed-forward.
#[derive(Clone, Debug)]
pub(crate) struct TransformerLayer {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross: Option<(LayerNorm, MultiHeadAttention)>,
    ff_norm: LayerNorm,
    ff: FeedForward,
}

impl TransformerLayer {
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        cross: bool,
    ) -> Result<Self> {
        Ok(Self {
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), dim)?,
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), dim, heads, true)?,
            cross: if cross {
                Some((
                    LayerNorm::new(store, &format!("{name}.cross_norm"), dim)?,
                    MultiHeadAttention::new(store, &format!("{name}.cross_attn"), dim, heads, false)?,
                ))
            } else {
                None
            },
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), dim)?,
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, hidden)?,
        })
    }

    /// `memory` carries its additive mask and a `(B, 1, 1)` indicator that
    /// zeroes the cross-attention of samples without any valid key.
    pub(crate) fn forward(
        &self,
        x: &Tensor,
        self_mask: Option<&Tensor>,
        memory: Option<(&Tensor, Option<&Tensor>, &Tensor)>,
    ) -> Result<Tensor> {
        let h = self.self_norm.forward(x)?;
        let mut x = (x + self.self_attn.forward(&h, &h, self_mask)?)?;
        if let (Some((norm, attn)), Some((mem, mask, any))) = (&self.cross, memory) {
            let h = norm.forward(&x)?;
            let c = attn.forward(&h, mem, mask)?.broadcast_mul(any)?;
            x = (x + c)?;
        }
        let h = self.ff_norm.forward(&x)?;
        Ok((&x + self.ff.forward(&h)?)?)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Transformer {
    layers: Vec<TransformerLayer>,
    norm: LayerNorm,
}

impl Transformer {
    pub(crate) fn new(
        store: &mut ParamStore,
        name: &str,
        layers: usize,
        dim: usize,
        heads: usize,
        hidden: usize,
        cross: bool,
    ) -> Result<Self> {
        Ok(Self {
            layers: (0..layers)
                .map(|l| TransformerLayer::new(store, &format!("{name}.layer{l}"), dim, heads, hidden, cross))
                .collect::<Result<_>>()?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), dim)?,
        })
    }

    pub(crate) fn forward(
        &self,
        x: &Tensor,
        self_mask: Option<&Tensor>,
        memory: Option<(&Tensor, Option<&Tensor>, &Tensor)>,
    ) -> Result<Tensor> {
        let mut x = x.clone();
        for layer in &self.layers {
            x = layer.forward(&x, self_mask, memory)?;
        }
        self.norm.forward(&x)
    }
}
