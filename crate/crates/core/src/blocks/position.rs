use crate::error::{Error, Result};
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::Tensor;

/// Sinusoidal encodings for positions `1..=len`:
/// `pe[i, 2j] = sin(i / 10000^(2j/d))`, `pe[i, 2j+1] = cos(i / 10000^(2j/d))`.
///
/// Row `r` of the result holds position `r + 1`.
pub fn position_encoding<T: Scalar>(len: usize, d_model: usize) -> Result<Tensor<T>> {
    if len == 0 || d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "position encoding needs len >= 1 and even width, got {len} x {d_model}"
        )));
    }
    let mut data = Vec::with_capacity(len * d_model);
    for i in 1..=len {
        for j in 0..d_model / 2 {
            let angle = i as f64 / 10000f64.powf(2.0 * j as f64 / d_model as f64);
            data.push(T::of(angle.sin()));
            data.push(T::of(angle.cos()));
        }
    }
    Tensor::new(vec![len, d_model], data)
}
