use candle_core::{DType, Device, Tensor};

use crate::{Error, Result};

/// `(B, N)` weights selecting present frames at index `>= input_len`, each
/// row normalized to sum to one.
pub fn loss_weights(presence: &[Vec<bool>], input_len: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    if presence.len() != input_len.len() || presence.is_empty() {
        return Err(Error::Shape("loss_weights: batch size mismatch".into()));
    }
    let frames = presence[0].len();
    let mut data = Vec::with_capacity(presence.len() * frames);
    for (row, &n) in presence.iter().zip(input_len) {
        if row.len() != frames {
            return Err(Error::Shape("loss_weights: ragged presence rows".into()));
        }
        let live = row.iter().enumerate().filter(|(i, p)| **p && *i >= n).count();
        if live == 0 {
            return Err(Error::InvalidArgument(
                "every output frame is masked; such windows must be filtered out".into(),
            ));
        }
        data.extend(
            row.iter()
                .enumerate()
                .map(|(i, p)| if *p && i >= n { 1.0 / live as f64 } else { 0.0 }),
        );
    }
    Ok(Tensor::from_vec(data, (presence.len(), frames), device)?.to_dtype(dtype)?)
}

/// Masked L1 between `(B, C, N)` tensors: per sample the mean absolute error
/// over the weighted frames and all channels, then the batch mean.
pub fn training_loss(prediction: &Tensor, target: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (b, c, n) = prediction.dims3()?;
    if target.dims() != prediction.dims() || weights.dims() != [b, n] {
        return Err(Error::Shape(format!(
            "training_loss: prediction {:?}, target {:?}, weights {:?}",
            prediction.dims(),
            target.dims(),
            weights.dims()
        )));
    }
    let abs = (prediction - target)?.abs()?;
    let per_frame = abs.broadcast_mul(&weights.unsqueeze(1)?)?;
    Ok((per_frame.sum_all()? / (b * c) as f64)?)
}
