use std::path::{Path, PathBuf};

use crate::data::write_features;
use crate::error::{Error, Result};
use crate::model::LasoModel;
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::{argmax, Tensor};

/// Summarizer attention of one block: one `[L, T']` matrix per head and
/// their average.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionExport {
    pub block: usize,
    pub heads: Vec<Tensor<f32>>,
    pub mean: Tensor<f32>,
}

/// Attention scores of summarizer block `block` (0-based) for one
/// utterance.
pub fn export_attention<T: Scalar>(
    model: &LasoModel<T>,
    features: &Tensor<f32>,
    block: usize,
) -> Result<AttentionExport> {
    let depth = model.config().pds_blocks;
    if block >= depth {
        return Err(Error::InvalidArgument(format!(
            "block {block} out of range for summarizer depth {depth}"
        )));
    }
    let all = model.pds_attention(&features.cast())?;
    let heads: Vec<Tensor<f32>> = all[block].iter().map(Tensor::cast).collect();
    let mut mean = Tensor::zeros(heads[0].shape());
    for h in &heads {
        for (m, &v) in mean.data_mut().iter_mut().zip(h.data()) {
            *m += v;
        }
    }
    let inv = 1.0 / heads.len() as f32;
    mean.data_mut().iter_mut().for_each(|m| *m *= inv);
    Ok(AttentionExport { block, heads, mean })
}

impl AttentionExport {
    /// Column of the largest score in every row of the head average.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.mean.rows().map(argmax).collect()
    }

    /// Whether the row argmax never moves left over the first `rows` rows.
    pub fn is_monotone(&self, rows: usize) -> bool {
        let a = self.row_argmax();
        a[..rows.min(a.len())].windows(2).all(|w| w[0] <= w[1])
    }

    /// Writes `<stem>.head<i>.fea`, `<stem>.mean.fea` and `<stem>.mean.pgm`
    /// into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for (i, h) in self.heads.iter().enumerate() {
            let p = dir.join(format!("{stem}.head{i}.fea"));
            write_features(&p, h)?;
            paths.push(p);
        }
        let p = dir.join(format!("{stem}.mean.fea"));
        write_features(&p, &self.mean)?;
        paths.push(p);
        let p = dir.join(format!("{stem}.mean.pgm"));
        write_pgm(&p, &self.mean)?;
        paths.push(p);
        Ok(paths)
    }
}

/// Binary 8-bit grayscale image of a non-negative matrix, scaled so the
/// largest entry is white.
pub fn write_pgm(path: &Path, matrix: &Tensor<f32>) -> Result<()> {
    let (rows, cols) = matrix.dims2()?;
    let max = matrix.data().iter().copied().fold(0.0f32, f32::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(
        matrix
            .data()
            .iter()
            .map(|&v| (v.max(0.0) * scale).round().min(255.0) as u8),
    );
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let m = Tensor::new(vec![2, 2], vec![0.0f32, 0.5, 1.0, 0.25]).unwrap();
        write_pgm(&p, &m).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        let header = b"P5\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255, 64]);
    }

    #[test]
    fn monotonicity_is_checked_on_leading_rows() {
        let m = Tensor::new(vec![3, 3], vec![0.8f32, 0.1, 0.1, 0.1, 0.8, 0.1, 0.9, 0.05, 0.05]).unwrap();
        let e = AttentionExport {
            block: 0,
            heads: vec![m.clone()],
            mean: m,
        };
        assert_eq!(e.row_argmax(), vec![0, 1, 0]);
        assert!(e.is_monotone(2));
        assert!(!e.is_monotone(3));
    }
}
