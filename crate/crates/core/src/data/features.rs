//! Binary feature matrices: magic `LFEA`, u32 version (1), u32 rows,
//! u32 cols, then rows x cols little-endian f32, row-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"LFEA";
pub const FEATURE_VERSION: u32 = 1;

pub fn encode_features(features: &Tensor<f32>) -> Result<Vec<u8>> {
    let (rows, cols) = features.dims2()?;
    let mut out = Vec::with_capacity(16 + 4 * features.numel());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing LFEA header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let expected = 16 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(bad(format!(
            "{rows}x{cols} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(vec![rows, cols], data).map_err(|e| bad(e.to_string()))
}

/// Global mean and variance normalization with statistics fitted once on
/// training features and applied unchanged to every utterance afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct Cmvn {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Cmvn {
    /// Per-column mean and population standard deviation over every frame.
    /// Columns with a standard deviation below `1e-6` are only centred.
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a Tensor<f32>>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut frames = 0usize;
        for f in features {
            let (_, cols) = f.dims2()?;
            if sum.is_empty() {
                sum = vec![0.0; cols];
                sq = vec![0.0; cols];
            } else if cols != sum.len() {
                return Err(Error::ShapeMismatch {
                    op: "cmvn fit",
                    lhs: vec![sum.len()],
                    rhs: f.shape().to_vec(),
                });
            }
            for row in f.rows() {
                for ((s, q), &v) in sum.iter_mut().zip(&mut sq).zip(row) {
                    *s += v as f64;
                    *q += (v as f64) * (v as f64);
                }
            }
            frames += f.shape()[0];
        }
        if frames == 0 {
            return Err(Error::InvalidArgument("no frames to fit normalization on".into()));
        }
        let n = frames as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n - m * m).max(0.0).sqrt();
                if s < 1e-6 {
                    1.0
                } else {
                    s as f32
                }
            })
            .collect();
        Ok(Cmvn {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply<T: Scalar>(&self, features: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, cols) = features.dims2()?;
        if cols != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "cmvn",
                lhs: features.shape().to_vec(),
                rhs: vec![self.dim()],
            });
        }
        let shift: Vec<T> = self.mean.iter().map(|&m| T::of(m as f64)).collect();
        let scale: Vec<T> = self.std.iter().map(|&s| T::of(1.0 / s as f64)).collect();
        let mut out = features.clone();
        for row in out.data_mut().chunks_exact_mut(cols) {
            for ((v, &m), &k) in row.iter_mut().zip(&shift).zip(&scale) {
                *v = (*v - m) * k;
            }
        }
        Ok(out)
    }
}

pub fn write_features(path: &Path, features: &Tensor<f32>) -> Result<()> {
    std::fs::write(path, encode_features(features)?)
        .map_err(|e| Error::io(format!("writing features {}", path.display()), e))
}

pub fn read_features(path: &Path) -> Result<Tensor<f32>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::io(format!("reading features {}", path.display()), e))?;
    decode_features(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::new(vec![2, 3], vec![1.0f32, -2.5, 0.0, 3.25, 1e-7, -0.0]).unwrap();
        let bytes = encode_features(&t).unwrap();
        assert_eq!(&bytes[..4], b"LFEA");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24);
        let back = decode_features(&bytes, Path::new("mem")).unwrap();
        assert_eq!(
            back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn cmvn_whitens_the_fitting_set() {
        let a = Tensor::new(vec![2, 2], vec![1.0f32, 5.0, 2.0, 5.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![3.0f32, 5.0, 6.0, 5.0]).unwrap();
        let cmvn = Cmvn::fit([&a, &b]).unwrap();
        assert_eq!(cmvn.mean, vec![3.0, 5.0]);
        assert_eq!(cmvn.std[1], 1.0);
        let col0: Vec<f64> = [&a, &b]
            .iter()
            .flat_map(|t| {
                cmvn.apply(&t.cast::<f64>())
                    .unwrap()
                    .rows()
                    .map(|r| r[0])
                    .collect::<Vec<_>>()
            })
            .collect();
        let mean = col0.iter().sum::<f64>() / 4.0;
        let var = col0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        let wrong = Tensor::<f32>::zeros(&[1, 3]);
        assert!(cmvn.apply(&wrong).is_err());
        assert!(Cmvn::fit([&a, &wrong]).is_err());
        assert!(Cmvn::fit(std::iter::empty()).is_err());
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let t = Tensor::new(vec![1, 2], vec![1.0f32, 2.0]).unwrap();
        let bytes = encode_features(&t).unwrap();
        assert!(decode_features(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_features(&wrong, Path::new("x")).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(decode_features(&v2, Path::new("x")).is_err());
    }
}
