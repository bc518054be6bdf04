//! The conditional denoiser `f_θ(x_t, (x_input, O, s), t) → x̂0`.
//!
//! Causal temporal-convolution encoders for the primary and the other
//! persons, a scene transformer stage, an others transformer stage, and a
//! convolutional decoder with skip connections from the primary encoder.
//! Sequences are `(B, J·3, N)` with channel `3j + axis`.

mod blocks;

use candle_core::{DType, Device, Tensor};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::nn::{
    additive_mask, sinusoidal_positions, CausalConv1d, Init, Linear, ParamStore,
};
use crate::{Error, Result};
use blocks::{upsample_matrix, ResBlock, Transformer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub joints: usize,
    /// Sequence length `N` (input plus output frames).
    pub frames: usize,
    pub pose_kernel: usize,
    pub others_kernel: usize,
    pub groups: usize,
    /// Primary encoder/decoder width per level; the last equals `d_scene`.
    pub pose_widths: Vec<usize>,
    /// Others encoder width per level; the last equals `d_others`.
    pub others_widths: Vec<usize>,
    /// Residual blocks per level in the primary encoder and the decoder.
    pub blocks_per_level: usize,
    /// Length of one encoded object vector.
    pub object_dim: usize,
    pub d_scene: usize,
    pub ff_scene: usize,
    pub heads_scene: usize,
    pub layers_scene: usize,
    pub d_others: usize,
    pub ff_others: usize,
    pub heads_others: usize,
    pub layers_others: usize,
    /// Number of Fourier features (`sin` and `cos` halves).
    pub time_dim: usize,
    pub time_hidden: usize,
    /// Standard deviation of the fixed Fourier frequencies.
    pub time_scale: f64,
    pub diffusion_steps: usize,
    pub seed: u64,
}

impl DenoiserConfig {
    /// Full-size model for `N = 275` and 17 joints.
    pub fn paper() -> Self {
        Self {
            joints: 17,
            frames: 275,
            pose_kernel: 5,
            others_kernel: 3,
            groups: 32,
            pose_widths: vec![128, 256, 256],
            others_widths: vec![32, 64, 128],
            blocks_per_level: 2,
            object_dim: crate::bps::DEFAULT_BASIS_SIZE + crate::data::OBJECT_TYPE_COUNT,
            d_scene: 256,
            ff_scene: 1024,
            heads_scene: 8,
            layers_scene: 3,
            d_others: 128,
            ff_others: 512,
            heads_others: 4,
            layers_others: 2,
            time_dim: 64,
            time_hidden: 256,
            time_scale: 16.0,
            diffusion_steps: 1000,
            seed: 0,
        }
    }

    /// Laptop-scale model with the same topology.
    pub fn desk() -> Self {
        Self {
            pose_widths: vec![32, 64, 64],
            others_widths: vec![16, 32, 32],
            blocks_per_level: 1,
            d_scene: 64,
            ff_scene: 128,
            heads_scene: 4,
            layers_scene: 1,
            d_others: 32,
            ff_others: 64,
            heads_others: 2,
            layers_others: 1,
            time_dim: 32,
            time_hidden: 64,
            ..Self::paper()
        }
    }

    /// Minimal model for unit tests and gradient checks.
    pub fn tiny(joints: usize, frames: usize, object_dim: usize) -> Self {
        Self {
            joints,
            frames,
            pose_kernel: 3,
            others_kernel: 3,
            groups: 4,
            pose_widths: vec![4, 8, 8],
            others_widths: vec![4, 8, 4],
            blocks_per_level: 1,
            object_dim,
            d_scene: 8,
            ff_scene: 8,
            heads_scene: 2,
            layers_scene: 1,
            d_others: 4,
            ff_others: 8,
            heads_others: 2,
            layers_others: 1,
            time_dim: 4,
            time_hidden: 8,
            time_scale: 4.0,
            diffusion_steps: 10,
            seed: 0,
        }
    }

    pub fn levels(&self) -> usize {
        self.pose_widths.len()
    }

    pub fn channels(&self) -> usize {
        self.joints * 3
    }

    /// `N` rounded up to a multiple of `2^levels`.
    pub fn padded_frames(&self) -> usize {
        let block = 1 << self.levels();
        self.frames.div_ceil(block) * block
    }

    pub fn bottleneck_len(&self) -> usize {
        self.padded_frames() >> self.levels()
    }

    /// Frames per bottleneck token.
    pub fn block_len(&self) -> usize {
        1 << self.levels()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.joints == 0 || self.frames == 0 || self.diffusion_steps == 0 {
            return bad("joints, frames and diffusion_steps must be positive".into());
        }
        if self.pose_widths.is_empty() || self.others_widths.len() != self.pose_widths.len() {
            return bad("pose and others encoders need the same nonzero number of levels".into());
        }
        if *self.pose_widths.last().unwrap() != self.d_scene {
            return bad(format!("last pose width must equal d_scene = {}", self.d_scene));
        }
        if *self.others_widths.last().unwrap() != self.d_others {
            return bad(format!("last others width must equal d_others = {}", self.d_others));
        }
        if self.d_scene % self.heads_scene != 0 || self.d_others % self.heads_others != 0 {
            return bad("model widths must be divisible by their head counts".into());
        }
        if self.time_dim % 2 != 0 || self.d_scene % 2 != 0 || self.d_others % 2 != 0 {
            return bad("time_dim, d_scene and d_others must be even".into());
        }
        if self.pose_kernel == 0 || self.others_kernel == 0 || self.blocks_per_level == 0 {
            return bad("kernels and blocks_per_level must be positive".into());
        }
        Ok(())
    }
}

/// Branch outputs replaced by zeros, during both training and sampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    #[serde(default)]
    pub zero_scene: bool,
    #[serde(default)]
    pub zero_others: bool,
}

/// One batch of denoiser inputs in the model dtype.
#[derive(Clone, Debug)]
pub struct DenoiserInput {
    /// `(B, J·3, N)` noised sequence.
    pub x_t: Tensor,
    /// `(B, J·3, N)` clean input frames, zero-velocity padded.
    pub x_input: Tensor,
    /// `(B, M, J·3, N)` other persons, `None` when no sample has any.
    pub others: Option<Tensor>,
    /// `[B][M]`: which of the `M` slots are real persons.
    pub others_valid: Vec<Vec<bool>>,
    /// `(B, G, object_dim)` encoded objects, `None` when no sample has any.
    pub scene: Option<Tensor>,
    pub scene_valid: Vec<Vec<bool>>,
    /// Diffusion step per sample, `1..=T`.
    pub t: Vec<usize>,
}

/// Conditioning of one sample, already normalized and scaled, flattened
/// row-major as `(J·3, N)` per sequence.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning<'a> {
    pub x_input: &'a [f64],
    pub others: &'a [Vec<f64>],
    /// `(G, object_dim)` encoded objects.
    pub scene: ArrayView2<'a, f64>,
}

impl DenoiserInput {
    /// Stacks per-sample conditioning into one batch, zero-padding the
    /// person and object axes to the batch maximum.
    pub fn assemble(model: &Denoiser, conds: &[Conditioning<'_>], x_t: Tensor, t: Vec<usize>) -> Result<Self> {
        let cfg = model.config();
        let (b, len) = (conds.len(), cfg.channels() * cfg.frames);
        let dev = model.device();
        let dtype = model.dtype();
        let mut x_input = Vec::with_capacity(b * len);
        for c in conds {
            if c.x_input.len() != len || c.others.iter().any(|o| o.len() != len) {
                return Err(Error::Shape(format!("conditioning sequences must hold {len} values")));
            }
            if c.scene.nrows() > 0 && c.scene.ncols() != cfg.object_dim {
                return Err(Error::Shape(format!("objects must have {} features", cfg.object_dim)));
            }
            x_input.extend_from_slice(c.x_input);
        }
        let shape = (b, cfg.channels(), cfg.frames);
        let x_input = Tensor::from_vec(x_input, shape, dev)?.to_dtype(dtype)?;

        let m = conds.iter().map(|c| c.others.len()).max().unwrap_or(0);
        let others = if m > 0 {
            let mut data = vec![0.0; b * m * len];
            for (i, c) in conds.iter().enumerate() {
                for (k, o) in c.others.iter().enumerate() {
                    data[(i * m + k) * len..(i * m + k + 1) * len].copy_from_slice(o);
                }
            }
            Some(Tensor::from_vec(data, (b, m, cfg.channels(), cfg.frames), dev)?.to_dtype(dtype)?)
        } else {
            None
        };
        let others_valid = conds.iter().map(|c| (0..m).map(|k| k < c.others.len()).collect()).collect();

        let g = conds.iter().map(|c| c.scene.nrows()).max().unwrap_or(0);
        let d = cfg.object_dim;
        let scene = if g > 0 {
            let mut data = vec![0.0; b * g * d];
            for (i, c) in conds.iter().enumerate() {
                for (r, row) in c.scene.rows().into_iter().enumerate() {
                    for (k, v) in row.iter().enumerate() {
                        data[(i * g + r) * d + k] = *v;
                    }
                }
            }
            Some(Tensor::from_vec(data, (b, g, d), dev)?.to_dtype(dtype)?)
        } else {
            None
        };
        let scene_valid = conds.iter().map(|c| (0..g).map(|k| k < c.scene.nrows()).collect()).collect();
        Ok(Self {
            x_t: x_t.to_dtype(dtype)?,
            x_input,
            others,
            others_valid,
            scene,
            scene_valid,
            t,
        })
    }
}

/// Output of [`Denoiser::encode_primary`].
#[derive(Clone, Debug)]
pub struct PrimaryEncoding {
    /// Feature maps at `L, L/2, …` frames.
    pub skips: Vec<Tensor>,
    /// `(B, N_b, d_scene)` tokens.
    pub tokens: Tensor,
}

#[derive(Debug)]
struct ConvEncoder {
    levels: Vec<(Vec<ResBlock>, CausalConv1d)>,
}

impl ConvEncoder {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        widths: &[usize],
        blocks: usize,
        kernel: usize,
        groups: usize,
        time_hidden: usize,
    ) -> Result<Self> {
        let mut levels = Vec::new();
        let mut c = input;
        for (l, &w) in widths.iter().enumerate() {
            let res = (0..blocks)
                .map(|b| {
                    let cin = if b == 0 { c } else { w };
                    ResBlock::new(store, &format!("{name}.level{l}.res{b}"), cin, w, kernel, groups, time_hidden)
                })
                .collect::<Result<Vec<_>>>()?;
            let down = CausalConv1d::new(store, &format!("{name}.level{l}.down"), w, w, kernel, 2)?;
            levels.push((res, down));
            c = w;
        }
        Ok(Self { levels })
    }

    /// Returns the per-level pre-downsampling maps and the bottleneck.
    fn forward(&self, x: &Tensor, temb: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let mut skips = Vec::with_capacity(self.levels.len());
        let mut h = x.clone();
        for (res, down) in &self.levels {
            for r in res {
                h = r.forward(&h, temb)?;
            }
            skips.push(h.clone());
            h = down.forward(&h)?;
        }
        Ok((skips, h))
    }
}

#[derive(Debug)]
pub struct Denoiser {
    config: DenoiserConfig,
    store: ParamStore,
    ablation: Ablation,
    freqs: Tensor,
    time_in: Linear,
    time_out: Linear,
    enc_x: ConvEncoder,
    enc_o: ConvEncoder,
    scene_proj: Linear,
    scene_enc: Transformer,
    scene_dec: Transformer,
    to_others: Linear,
    others_enc: Transformer,
    others_dec: Transformer,
    from_others: Linear,
    decoder: Vec<Vec<ResBlock>>,
    out: CausalConv1d,
}

impl Denoiser {
    /// Freshly initialized model; `trainable` wraps parameters in variables.
    pub fn new(config: DenoiserConfig, dtype: DType, trainable: bool) -> Result<Self> {
        let store = ParamStore::new(config.seed, dtype, trainable);
        Self::build(config, store)
    }

    /// Model whose parameters come from saved arrays.
    pub fn from_arrays(
        config: DenoiserConfig,
        arrays: Vec<crate::nn::NamedArray>,
        dtype: DType,
        trainable: bool,
    ) -> Result<Self> {
        Self::build(config, ParamStore::from_arrays(arrays, dtype, trainable))
    }

    fn build(config: DenoiserConfig, mut store: ParamStore) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let s = &mut store;
        let freqs = s.buffer("time.freqs", &[c.time_dim / 2], Init::Normal(c.time_scale))?;
        let time_in = Linear::new(s, "time.in", c.time_dim, c.time_hidden, true)?;
        let time_out = Linear::new(s, "time.out", c.time_hidden, c.time_hidden, true)?;
        let enc_x = ConvEncoder::new(
            s,
            "enc_x",
            2 * c.channels(),
            &c.pose_widths,
            c.blocks_per_level,
            c.pose_kernel,
            c.groups,
            c.time_hidden,
        )?;
        let enc_o = ConvEncoder::new(
            s,
            "enc_o",
            c.channels(),
            &c.others_widths,
            1,
            c.others_kernel,
            c.groups,
            c.time_hidden,
        )?;
        let scene_proj = Linear::new(s, "scene.proj", c.object_dim, c.d_scene, true)?;
        let scene_enc = Transformer::new(s, "scene.enc", c.layers_scene, c.d_scene, c.heads_scene, c.ff_scene, false)?;
        let scene_dec = Transformer::new(s, "scene.dec", c.layers_scene, c.d_scene, c.heads_scene, c.ff_scene, true)?;
        let to_others = Linear::new(s, "bridge.to_others", c.d_scene, c.d_others, true)?;
        let others_enc =
            Transformer::new(s, "others.enc", c.layers_others, c.d_others, c.heads_others, c.ff_others, false)?;
        let others_dec =
            Transformer::new(s, "others.dec", c.layers_others, c.d_others, c.heads_others, c.ff_others, true)?;
        let from_others = Linear::new(s, "bridge.from_others", c.d_others, c.d_scene, true)?;
        let mut decoder = Vec::new();
        let mut width = c.d_scene;
        for l in (0..c.levels()).rev() {
            let w = c.pose_widths[l];
            let blocks = (0..c.blocks_per_level)
                .map(|b| {
                    let cin = if b == 0 { width + w } else { w };
                    ResBlock::new(s, &format!("dec.level{l}.res{b}"), cin, w, c.pose_kernel, c.groups, c.time_hidden)
                })
                .collect::<Result<Vec<_>>>()?;
            decoder.push(blocks);
            width = w;
        }
        let out = CausalConv1d::new(s, "dec.out", width, c.channels(), 1, 1)?;
        Ok(Self {
            config,
            store,
            ablation: Ablation::default(),
            freqs,
            time_in,
            time_out,
            enc_x,
            enc_o,
            scene_proj,
            scene_enc,
            scene_dec,
            to_others,
            others_enc,
            others_dec,
            from_others,
            decoder,
            out,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    /// Same parameters with the given branches zeroed.
    pub fn set_ablation(&mut self, ablation: Ablation) {
        self.ablation = ablation;
    }

    pub fn count_params(&self) -> usize {
        self.store.count()
    }

    /// `(B, time_dim)` features `[sin(2π f t/T), cos(2π f t/T)]`.
    pub fn fourier_time_embed(&self, t: &[usize]) -> Result<Tensor> {
        let steps = self.config.diffusion_steps as f64;
        let frac: Vec<f64> = t.iter().map(|&s| s as f64 / steps).collect();
        let frac = Tensor::from_vec(frac, (t.len(), 1), self.device())?.to_dtype(self.dtype())?;
        let angles = frac.broadcast_mul(&(self.freqs.unsqueeze(0)? * std::f64::consts::TAU)?)?;
        Ok(Tensor::cat(&[angles.sin()?, angles.cos()?], 1)?)
    }

    /// Shared `(B, time_hidden)` embedding fed to every convolutional block.
    pub fn time_embedding(&self, t: &[usize]) -> Result<Tensor> {
        let f = self.fourier_time_embed(t)?;
        self.time_out.forward(&self.time_in.forward(&f)?.silu()?)
    }

    fn pad_frames(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.dim(candle_core::D::Minus1)?;
        if n != self.config.frames {
            return Err(Error::Shape(format!("expected {} frames, got {n}", self.config.frames)));
        }
        let extra = self.config.padded_frames() - n;
        Ok(if extra > 0 {
            x.pad_with_same(candle_core::D::Minus1, 0, extra)?
        } else {
            x.clone()
        })
    }

    pub fn encode_primary(&self, x_input: &Tensor, x_t: &Tensor, temb: &Tensor) -> Result<PrimaryEncoding> {
        let c = self.config.channels();
        if x_input.dim(1)? != c || x_t.dim(1)? != c {
            return Err(Error::Shape(format!("primary sequences need {c} channels")));
        }
        let x = Tensor::cat(&[self.pad_frames(x_input)?, self.pad_frames(x_t)?], 1)?;
        let (skips, h) = self.enc_x.forward(&x, temb)?;
        Ok(PrimaryEncoding {
            skips,
            tokens: h.transpose(1, 2)?.contiguous()?,
        })
    }

    /// `others (B, M, J·3, N)` → `(B, M·N_b, d_others)` tokens, person-major.
    pub fn encode_others(&self, others: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let (b, m, c, _) = others.dims4()?;
        let nb = self.config.bottleneck_len();
        let flat = self.pad_frames(&others.reshape((b * m, c, self.config.frames))?)?;
        let hidden = temb.dim(1)?;
        let temb = temb.unsqueeze(1)?.broadcast_as((b, m, hidden))?.reshape((b * m, hidden))?;
        let (_, h) = self.enc_o.forward(&flat, &temb)?;
        Ok(h.reshape((b, m, self.config.d_others, nb))?
            .transpose(2, 3)?
            .contiguous()?
            .reshape((b, m * nb, self.config.d_others))?)
    }

    /// Scene memory `(B, G, d_scene)` from encoded objects.
    pub fn encode_scene(&self, scene: &Tensor, valid: &[Vec<bool>]) -> Result<Tensor> {
        let tokens = self.scene_proj.forward(scene)?;
        let mask = self.key_mask(valid, 1, |_, _| true, 1)?;
        self.scene_enc.forward(&tokens, Some(&mask), None)
    }

    /// Encoded others memory `(B, M·N_b, d_others)`.
    pub fn encode_others_memory(&self, tokens: &Tensor, valid: &[Vec<bool>]) -> Result<Tensor> {
        let nb = self.config.bottleneck_len();
        let m = valid.first().map_or(0, Vec::len);
        let pe = self.positions(nb, self.config.d_others)?.repeat((m, 1))?;
        let mask = self.key_mask(valid, m * nb, |q, k| k % nb <= q % nb, nb)?;
        self.others_enc.forward(&tokens.broadcast_add(&pe)?, Some(&mask), None)
    }

    fn positions(&self, len: usize, dim: usize) -> Result<Tensor> {
        sinusoidal_positions(len, dim, self.dtype(), self.device())
    }

    /// Additive `(B, Lq, Lk)` mask: `allowed(q, k)` and key slot `k / per_slot` valid.
    fn key_mask(
        &self,
        valid: &[Vec<bool>],
        lq: usize,
        allowed: impl Fn(usize, usize) -> bool,
        per_slot: usize,
    ) -> Result<Tensor> {
        let masks = valid
            .iter()
            .map(|v| additive_mask(lq, v.len() * per_slot, |q, k| v[k / per_slot] && allowed(q, k), self.dtype(), self.device()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&masks, 0)?)
    }

    /// `(B, 1, 1)` indicator of samples with at least one valid key.
    fn any_valid(&self, valid: &[Vec<bool>]) -> Result<Tensor> {
        let v: Vec<f64> = valid.iter().map(|r| f64::from(u8::from(r.iter().any(|x| *x)))).collect();
        Ok(Tensor::from_vec(v, (valid.len(), 1, 1), self.device())?.to_dtype(self.dtype())?)
    }

    /// Both transformer stages; memories are `None` when their branch is empty.
    pub fn aggregate(
        &self,
        h_x: &Tensor,
        scene: Option<(&Tensor, &[Vec<bool>])>,
        others: Option<(&Tensor, &[Vec<bool>])>,
    ) -> Result<Tensor> {
        let nb = self.config.bottleneck_len();
        let causal = additive_mask(nb, nb, |q, k| k <= q, self.dtype(), self.device())?;

        let scene_mem = match scene {
            Some((mem, valid)) => {
                let mask = self.key_mask(valid, 1, |_, _| true, 1)?;
                Some((mem.clone(), mask, self.any_valid(valid)?))
            }
            None => None,
        };
        let x = h_x.broadcast_add(&self.positions(nb, self.config.d_scene)?)?;
        let h = self.scene_dec.forward(
            &x,
            Some(&causal),
            scene_mem.as_ref().map(|(m, k, a)| (m, Some(k), a)),
        )?;

        let others_mem = match others {
            Some((mem, valid)) => {
                let mask = self.key_mask(valid, nb, |q, k| k % nb <= q, nb)?;
                Some((mem.clone(), mask, self.any_valid(valid)?))
            }
            None => None,
        };
        let y = self
            .to_others
            .forward(&h)?
            .broadcast_add(&self.positions(nb, self.config.d_others)?)?;
        let y = self.others_dec.forward(
            &y,
            Some(&causal),
            others_mem.as_ref().map(|(m, k, a)| (m, Some(k), a)),
        )?;
        Ok((h + self.from_others.forward(&y)?)?)
    }

    /// `tokens (B, N_b, d_scene)` and encoder skips → `(B, J·3, N)`.
    pub fn decode(&self, tokens: &Tensor, skips: &[Tensor], temb: &Tensor) -> Result<Tensor> {
        if skips.len() != self.config.levels() {
            return Err(Error::Shape("decoder needs one skip per level".into()));
        }
        let mut h = tokens.transpose(1, 2)?.contiguous()?;
        for (blocks, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let len = h.dim(2)?;
            let up = upsample_matrix(len, self.dtype(), self.device())?;
            h = h.broadcast_matmul(&up)?;
            h = Tensor::cat(&[&h, skip], 1)?;
            for b in blocks {
                h = b.forward(&h, temb)?;
            }
        }
        Ok(self.out.forward(&h)?.narrow(2, 0, self.config.frames)?)
    }

    /// Full forward pass; returns the predicted clean sequence `(B, J·3, N)`.
    pub fn denoise(&self, input: &DenoiserInput) -> Result<Tensor> {
        self.denoise_with(input, self.ablation)
    }

    /// Forward pass under explicit ablation flags.
    pub fn denoise_with(&self, input: &DenoiserInput, ablation: Ablation) -> Result<Tensor> {
        let b = input.x_t.dim(0)?;
        if input.t.len() != b || input.others_valid.len() != b || input.scene_valid.len() != b {
            return Err(Error::Shape("denoiser batch fields disagree on batch size".into()));
        }
        let temb = self.time_embedding(&input.t)?;
        let primary = self.encode_primary(&input.x_input, &input.x_t, &temb)?;

        let scene_mem = match &input.scene {
            Some(s) if s.dim(1)? > 0 => {
                if s.dim(2)? != self.config.object_dim {
                    return Err(Error::Shape(format!("objects must have {} features", self.config.object_dim)));
                }
                let mem = if ablation.zero_scene {
                    Tensor::zeros((b, s.dim(1)?, self.config.d_scene), self.dtype(), self.device())?
                } else {
                    self.encode_scene(s, &input.scene_valid)?
                };
                Some(mem)
            }
            _ => None,
        };
        let others_mem = match &input.others {
            Some(o) if o.dim(1)? > 0 => {
                let m = o.dim(1)?;
                let mem = if ablation.zero_others {
                    let nb = self.config.bottleneck_len();
                    Tensor::zeros((b, m * nb, self.config.d_others), self.dtype(), self.device())?
                } else {
                    let tokens = self.encode_others(o, &temb)?;
                    self.encode_others_memory(&tokens, &input.others_valid)?
                };
                Some(mem)
            }
            _ => None,
        };
        let h = self.aggregate(
            &primary.tokens,
            scene_mem.as_ref().map(|m| (m, input.scene_valid.as_slice())),
            others_mem.as_ref().map(|m| (m, input.others_valid.as_slice())),
        )?;
        self.decode(&h, &primary.skips, &temb)
    }
}
