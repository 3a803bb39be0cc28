use crate::error::{Error, Result};
use crate::tensor::{Scalar, TensorBuf};

/// Continuous time is multiplied by this before the sinusoids so that
/// differences of one diffusion step (1/1000) are resolved.
pub const TIME_SCALE: f64 = 1000.0;

const MAX_PERIOD: f64 = 10_000.0;

fn frequencies(half: usize) -> impl Iterator<Item = f64> {
    let denom = half.saturating_sub(1).max(1) as f64;
    (0..half).map(move |i| (-(MAX_PERIOD.ln()) * i as f64 / denom).exp())
}

/// `[sin(s·t·ω_i) …, cos(s·t·ω_i) …]` with `ω_i = 10000^(−i/(dim/2 − 1))`
/// and `s` = [`TIME_SCALE`].
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::config(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for (i, w) in frequencies(half).enumerate() {
        let arg = TIME_SCALE * t * w;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Ok(out)
}

/// Embeddings for a batch; `t` holds one time per item or a single shared time.
pub fn embed_batch<F: Scalar>(t: &[f64], batch: usize, dim: usize) -> Result<TensorBuf<F>> {
    let times: Vec<f64> = match t.len() {
        1 => vec![t[0]; batch],
        n if n == batch => t.to_vec(),
        n => return Err(Error::shape(&[batch], &[n])),
    };
    let mut data = Vec::with_capacity(batch * dim);
    for &ti in &times {
        if !ti.is_finite() {
            return Err(Error::domain("non-finite time"));
        }
        data.extend(sinusoidal_embedding(ti, dim)?.into_iter().map(F::of));
    }
    TensorBuf::new(vec![batch, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_is_sin_zero_cos_one() {
        let e = sinusoidal_embedding(0.0, 16).unwrap();
        assert!(e[..8].iter().all(|&v| v == 0.0));
        assert!(e[8..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bounded_and_time_sensitive() {
        for t in [0.0, 0.013, 0.5, 0.999, 1.0] {
            assert!(sinusoidal_embedding(t, 128).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
        let a = sinusoidal_embedding(0.1, 128).unwrap();
        let b = sinusoidal_embedding(0.9, 128).unwrap();
        let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(d > 0.0);
    }

    #[test]
    fn odd_dimension_rejected() {
        assert!(sinusoidal_embedding(0.5, 7).unwrap_err().is_config());
        assert!(sinusoidal_embedding(0.5, 0).unwrap_err().is_config());
    }

    #[test]
    fn batch_broadcasts_single_time() {
        let e: TensorBuf<f32> = embed_batch(&[0.3], 4, 8).unwrap();
        assert_eq!(e.shape(), &[4, 8]);
        assert_eq!(e.item(0), e.item(3));
        assert!(embed_batch::<f32>(&[0.1, 0.2], 3, 8).is_err());
    }
}
