//! Joint multi-person sampling.
//!
//! Every person runs its own reverse chain in its own normalized frame.
//! After each step all clean-sequence estimates are mapped back to global
//! coordinates, the known input frames are restored, and each person's
//! view of the others is rebuilt under that person's transform.

use candle_core::{DType, Tensor};
use ndarray::{s, Array3, Array4, ArrayView3, ArrayView4};

use crate::bps::{encode_scene, BasisPointSet};
use crate::checkpoint::Checkpoint;
use crate::data::{MultiPersonWindow, SceneObject, SkeletonSpec};
use crate::denoiser::{Ablation, Conditioning, Denoiser, DenoiserInput};
use crate::diffusion::train::{flatten, hold_input};
use crate::diffusion::{cosine_schedule, reverse_step, DiffusionSchedule};
use crate::normalize::{fit_norm, AffineTransform2D, MinMaxScaler};
use crate::{rng, Error, Result};

pub const DEFAULT_MAX_PERSONS: usize = 32;

#[derive(Clone, Debug)]
pub struct ForecastRequest {
    pub person_ids: Vec<String>,
    /// Observed frames `(P, J, 3, n)` in global coordinates.
    pub inputs: Array4<f64>,
    /// Scene state at the last observed frame.
    pub scene: Vec<SceneObject>,
    pub samples: usize,
    pub seed: u64,
    pub ablation: Ablation,
}

impl ForecastRequest {
    /// Request for the observed part of `window`.
    pub fn from_window(window: &MultiPersonWindow, samples: usize, seed: u64, ablation: Ablation) -> Self {
        Self {
            person_ids: window.person_ids.clone(),
            inputs: window.positions.slice(s![.., .., .., ..window.input_len]).to_owned(),
            scene: window.scene.clone(),
            samples,
            seed,
            ablation,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForecastResult {
    /// `K` arrays `(P, J, 3, N)` in global coordinates.
    pub samples: Vec<Array4<f64>>,
    pub transforms: Vec<AffineTransform2D>,
}

/// A frozen model with everything needed to sample from it.
#[derive(Debug)]
pub struct Forecaster {
    pub model: Denoiser,
    pub schedule: DiffusionSchedule,
    pub scaler: MinMaxScaler,
    pub basis: BasisPointSet,
    pub skeleton: SkeletonSpec,
    pub input_frames: usize,
    pub max_persons: usize,
}

/// Sequence `(J, 3, N)` from `n` observed frames, later frames holding the last one.
fn hold_to(seq: ArrayView3<'_, f64>, frames: usize) -> Array3<f64> {
    let (j, _, n) = seq.dim();
    let mut out = Array3::zeros((j, 3, frames));
    out.slice_mut(s![.., .., ..n]).assign(&seq);
    hold_input(out.view(), n)
}

/// Rebuilds every person's view of the others from the current estimates.
///
/// `estimates[i]` is person `i`'s scaled, normalized clean sequence. Returns
/// the global sequences (input frames restored from `inputs`) and, per
/// person, the scaled other-person sequences in window order minus self.
pub fn exchange_context(
    estimates: &[Array3<f64>],
    transforms: &[AffineTransform2D],
    scaler: &MinMaxScaler,
    inputs: ArrayView4<'_, f64>,
) -> (Vec<Array3<f64>>, Vec<Vec<Array3<f64>>>) {
    let n = inputs.shape()[3];
    let global: Vec<Array3<f64>> = estimates
        .iter()
        .zip(transforms)
        .enumerate()
        .map(|(i, (x, t))| {
            let mut g = t.invert(scaler.unscale(x.view()).view());
            g.slice_mut(s![.., .., ..n]).assign(&inputs.slice(s![i, .., .., ..]));
            g
        })
        .collect();
    let others = transforms
        .iter()
        .enumerate()
        .map(|(i, t)| {
            global
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, g)| scaler.scale(t.apply(g.view()).view()))
                .collect()
        })
        .collect();
    (global, others)
}

/// Model with the given branches zeroed.
pub fn ablate(flags: Ablation, mut model: Denoiser) -> Denoiser {
    model.set_ablation(flags);
    model
}

impl Forecaster {
    pub fn from_checkpoint(ckpt: &Checkpoint, dtype: DType) -> Result<Self> {
        Ok(Self {
            model: ckpt.model(dtype, false)?,
            schedule: cosine_schedule(ckpt.denoiser.diffusion_steps)?,
            scaler: ckpt.scaler.clone(),
            basis: ckpt.basis.build()?,
            skeleton: ckpt.skeleton.clone(),
            input_frames: ckpt.input_frames,
            max_persons: DEFAULT_MAX_PERSONS,
        })
    }

    pub fn frames(&self) -> usize {
        self.model.config().frames
    }

    fn check(&self, req: &ForecastRequest) -> Result<()> {
        let (p, j, d, n) = req.inputs.dim();
        if p == 0 || req.samples == 0 {
            return Err(Error::InvalidArgument("need at least one person and one sample".into()));
        }
        if p > self.max_persons {
            return Err(Error::InvalidArgument(format!(
                "{p} persons exceed the configured cap of {}",
                self.max_persons
            )));
        }
        if req.person_ids.len() != p {
            return Err(Error::Shape(format!("{} ids for {p} persons", req.person_ids.len())));
        }
        if j != self.skeleton.joint_count() || d != 3 || n != self.input_frames {
            return Err(Error::Shape(format!(
                "inputs {:?}, model expects (P, {}, 3, {})",
                req.inputs.shape(),
                self.skeleton.joint_count(),
                self.input_frames
            )));
        }
        if req.inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forecast inputs contain NaN or infinity".into()));
        }
        Ok(())
    }

    fn to_sequences(&self, t: &Tensor) -> Result<Vec<Array3<f64>>> {
        let j = self.skeleton.joint_count();
        let frames = self.frames();
        let flat = t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Ok(flat
            .chunks(j * 3 * frames)
            .map(|c| Array3::from_shape_vec((j, 3, frames), c.to_vec()).expect("chunk matches shape"))
            .collect())
    }

    pub fn forecast(&self, req: &ForecastRequest) -> Result<ForecastResult> {
        self.check(req)?;
        let p = req.inputs.shape()[0];
        let k = req.samples;
        let frames = self.frames();
        let j = self.skeleton.joint_count();
        let n = self.input_frames;
        let dev = self.model.device().clone();

        let held: Vec<Array3<f64>> = (0..p).map(|i| hold_to(req.inputs.slice(s![i, .., .., ..]), frames)).collect();
        let transforms = held
            .iter()
            .map(|x| fit_norm(x.view(), n - 1, &self.skeleton))
            .collect::<Result<Vec<_>>>()?;
        let x_input: Vec<Vec<f64>> = held
            .iter()
            .zip(&transforms)
            .map(|(x, t)| flatten(self.scaler.scale(t.apply(x.view()).view()).view()))
            .collect();
        let scenes = transforms
            .iter()
            .map(|t| Ok(encode_scene(&req.scene, &self.basis, Some(t))?.to_matrix(self.basis.len())))
            .collect::<Result<Vec<_>>>()?;

        // Bootstrap: every person sees the others' held inputs.
        let mut others: Vec<Vec<Vec<Vec<f64>>>> = (0..p)
            .map(|i| {
                let view: Vec<Vec<f64>> = (0..p)
                    .filter(|&o| o != i)
                    .map(|o| flatten(self.scaler.scale(transforms[i].apply(held[o].view()).view()).view()))
                    .collect();
                vec![view; k]
            })
            .collect();

        // Per person, per sample noise streams keyed by the person's id.
        let mut streams: Vec<Vec<_>> = req
            .person_ids
            .iter()
            .map(|id| {
                let key = rng::fnv1a(id.as_bytes());
                (0..k)
                    .map(|s| rng::stream(req.seed, rng::mix(key, s as u64)))
                    .collect()
            })
            .collect();
        let len = j * 3 * frames;
        let mut draw = |i: usize| -> Result<Tensor> {
            let data: Vec<f64> = streams[i].iter_mut().flat_map(|r| rng::normal_vec(r, len)).collect();
            Ok(Tensor::from_vec(data, (k, j * 3, frames), &dev)?)
        };
        let mut x_t: Vec<Tensor> = (0..p).map(&mut draw).collect::<Result<_>>()?;

        let mut estimates: Vec<Vec<Array3<f64>>> = vec![Vec::new(); p];
        for t in (1..=self.schedule.steps).rev() {
            for i in 0..p {
                let conds: Vec<Conditioning<'_>> = (0..k)
                    .map(|s| Conditioning {
                        x_input: &x_input[i],
                        others: &others[i][s],
                        scene: scenes[i].view(),
                    })
                    .collect();
                let input = DenoiserInput::assemble(&self.model, &conds, x_t[i].clone(), vec![t; k])?;
                let x0_hat = self.model.denoise_with(&input, req.ablation)?.to_dtype(DType::F64)?;
                let noise = if t > 1 { Some(draw(i)?) } else { None };
                x_t[i] = reverse_step(&x_t[i], &x0_hat, t, &self.schedule, noise.as_ref())?;
                estimates[i] = self.to_sequences(&x0_hat)?;
            }
            if t > 1 && p > 1 {
                for s in 0..k {
                    let current: Vec<Array3<f64>> = estimates.iter().map(|e| e[s].clone()).collect();
                    let (_, views) = exchange_context(&current, &transforms, &self.scaler, req.inputs.view());
                    for (i, v) in views.into_iter().enumerate() {
                        others[i][s] = v.iter().map(|o| flatten(o.view())).collect();
                    }
                }
            }
        }

        let finals: Vec<Vec<Array3<f64>>> = x_t.iter().map(|x| self.to_sequences(x)).collect::<Result<_>>()?;
        let samples = (0..k)
            .map(|s| {
                let mut out = Array4::zeros((p, j, 3, frames));
                for i in 0..p {
                    let mut g = transforms[i].invert(self.scaler.unscale(finals[i][s].view()).view());
                    g.slice_mut(s![.., .., ..n]).assign(&req.inputs.slice(s![i, .., .., ..]));
                    out.slice_mut(s![i, .., .., ..]).assign(&g);
                }
                out
            })
            .collect();
        Ok(ForecastResult { samples, transforms })
    }
}
