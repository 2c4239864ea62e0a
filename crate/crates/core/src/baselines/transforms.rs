//! Orthonormal 2D transforms applied per channel: DCT-II and multi-level
//! Haar (Daubechies-1) in Mallat layout.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};
use crate::measurement::ImageShape;
use crate::tensor::Vector;

/// Orthonormal DCT-II matrix: `C[k][i] = α_k cos(π (2i + 1) k / 2N)`.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    let nf = n as f64;
    for k in 0..n {
        let alpha = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            c[k * n + i] = alpha * (PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos();
        }
    }
    c
}

fn check_len(x: &[f64], shape: ImageShape) -> Result<()> {
    if x.len() != shape.len() {
        return Err(Error::dims("image length", shape.len(), x.len()));
    }
    Ok(())
}

/// Separable 2D transform `Y = L X Rᵀ` (or `Lᵀ X R` when `inverse`) on each
/// channel, with `L` of size H×H and `R` of size W×W.
fn separable(x: &[f64], shape: ImageShape, left: &[f64], right: &[f64], inverse: bool) -> Vector {
    let (h, w) = (shape.height, shape.width);
    let mut out = vec![0.0; x.len()];
    let mut tmp = vec![0.0; h * w];
    let l = |a: usize, b: usize| if inverse { left[b * h + a] } else { left[a * h + b] };
    let r = |a: usize, b: usize| if inverse { right[b * w + a] } else { right[a * w + b] };
    for ch in 0..shape.channels {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        // rows: tmp[i][k] = Σ_j X[i][j] R[k][j]
        for i in 0..h {
            for k in 0..w {
                let mut acc = 0.0;
                for j in 0..w {
                    acc += src[i * w + j] * r(k, j);
                }
                tmp[i * w + k] = acc;
            }
        }
        // columns: out[k][j] = Σ_i L[k][i] tmp[i][j]
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for k in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for i in 0..h {
                    acc += l(k, i) * tmp[i * w + j];
                }
                dst[k * w + j] = acc;
            }
        }
    }
    Vector::new(out)
}

/// Orthonormal 2D DCT-II of each channel.
pub fn dct2(image: &[f64], shape: ImageShape) -> Result<Vector> {
    check_len(image, shape)?;
    let (ch, cw) = (dct_matrix(shape.height), dct_matrix(shape.width));
    Ok(separable(image, shape, &ch, &cw, false))
}

/// Inverse of [`dct2`].
pub fn idct2(coeffs: &[f64], shape: ImageShape) -> Result<Vector> {
    check_len(coeffs, shape)?;
    let (ch, cw) = (dct_matrix(shape.height), dct_matrix(shape.width));
    Ok(separable(coeffs, shape, &ch, &cw, true))
}

/// Deepest Haar decomposition for which every level halves both sides
/// exactly: the largest `L` with `2^L | H` and `2^L | W`.
pub fn max_haar_levels(shape: ImageShape) -> usize {
    let mut levels = 0;
    let (mut h, mut w) = (shape.height, shape.width);
    while h % 2 == 0 && w % 2 == 0 && h >= 2 && w >= 2 {
        h /= 2;
        w /= 2;
        levels += 1;
    }
    levels
}

fn check_haar(shape: ImageShape, levels: usize) -> Result<()> {
    let block = 1usize.checked_shl(levels as u32).unwrap_or(0);
    if block == 0 || !shape.height.is_multiple_of(block) || !shape.width.is_multiple_of(block) {
        return Err(Error::InvalidParameter(format!(
            "{}x{} image cannot take {levels} Haar levels",
            shape.height, shape.width
        )));
    }
    Ok(())
}

/// Multi-level orthonormal 2D Haar analysis. Level `l` transforms the
/// top-left `H/2^l × W/2^l` (LL) block: rows first, then columns, with
/// averages in the first half and differences in the second half.
pub fn haar2(image: &[f64], shape: ImageShape, levels: usize) -> Result<Vector> {
    check_len(image, shape)?;
    check_haar(shape, levels)?;
    let (h, w) = (shape.height, shape.width);
    let mut out = image.to_vec();
    let mut line = Vec::with_capacity(h.max(w));
    for ch in 0..shape.channels {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        let (mut bh, mut bw) = (h, w);
        for _ in 0..levels {
            for r in 0..bh {
                line.clear();
                line.extend((0..bw).map(|c| plane[r * w + c]));
                haar_step(&line, |i, v| plane[r * w + i] = v);
            }
            for c in 0..bw {
                line.clear();
                line.extend((0..bh).map(|r| plane[r * w + c]));
                haar_step(&line, |i, v| plane[i * w + c] = v);
            }
            bh /= 2;
            bw /= 2;
        }
    }
    Ok(Vector::new(out))
}

/// Inverse of [`haar2`].
pub fn ihaar2(coeffs: &[f64], shape: ImageShape, levels: usize) -> Result<Vector> {
    check_len(coeffs, shape)?;
    check_haar(shape, levels)?;
    let (h, w) = (shape.height, shape.width);
    let mut out = coeffs.to_vec();
    let mut line = Vec::with_capacity(h.max(w));
    for ch in 0..shape.channels {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for level in (0..levels).rev() {
            let (bh, bw) = (h >> level, w >> level);
            for c in 0..bw {
                line.clear();
                line.extend((0..bh).map(|r| plane[r * w + c]));
                haar_inverse_step(&line, |i, v| plane[i * w + c] = v);
            }
            for r in 0..bh {
                line.clear();
                line.extend((0..bw).map(|c| plane[r * w + c]));
                haar_inverse_step(&line, |i, v| plane[r * w + i] = v);
            }
        }
    }
    Ok(Vector::new(out))
}

fn haar_step(src: &[f64], mut put: impl FnMut(usize, f64)) {
    let half = src.len() / 2;
    for j in 0..half {
        let (a, b) = (src[2 * j], src[2 * j + 1]);
        put(j, (a + b) * FRAC_1_SQRT_2);
        put(half + j, (a - b) * FRAC_1_SQRT_2);
    }
}

fn haar_inverse_step(src: &[f64], mut put: impl FnMut(usize, f64)) {
    let half = src.len() / 2;
    for j in 0..half {
        let (s, d) = (src[j], src[half + j]);
        put(2 * j, (s + d) * FRAC_1_SQRT_2);
        put(2 * j + 1, (s - d) * FRAC_1_SQRT_2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{norm2, Rng};

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn dct_of_constant_is_dc_only() {
        let shape = ImageShape::new(4, 4, 1);
        let v = 0.7;
        let c = dct2(&[v; 16], shape).unwrap();
        assert!((c[0] - 4.0 * v).abs() < 1e-12);
        assert!(c[1..].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn dct_matches_direct_sum() {
        // Direct double sum, independent of the separable implementation.
        let shape = ImageShape::new(3, 5, 1);
        let x = Rng::new(1).normal_vector(15);
        let c = dct2(&x, shape).unwrap();
        let (h, w) = (3.0_f64, 5.0_f64);
        for u in 0..3 {
            for v in 0..5 {
                let au = if u == 0 { (1.0 / h).sqrt() } else { (2.0 / h).sqrt() };
                let av = if v == 0 { (1.0 / w).sqrt() } else { (2.0 / w).sqrt() };
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..5 {
                        s += x[i * 5 + j]
                            * (PI * (2 * i + 1) as f64 * u as f64 / (2.0 * h)).cos()
                            * (PI * (2 * j + 1) as f64 * v as f64 / (2.0 * w)).cos();
                    }
                }
                assert!((au * av * s - c[u * 5 + v]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dct_is_orthonormal() {
        let shape = ImageShape::new(8, 6, 3);
        let x = Rng::new(2).normal_vector(shape.len());
        let c = dct2(&x, shape).unwrap();
        assert!((norm2(&c) - norm2(&x)).abs() < 1e-10);
        assert!(max_diff(&idct2(&c, shape).unwrap(), &x) < 1e-10);
    }

    #[test]
    fn haar_two_by_two_oracle() {
        let (a, b, c, d) = (1.0, 2.0, 5.0, -3.0);
        let out = haar2(&[a, b, c, d], ImageShape::new(2, 2, 1), 1).unwrap();
        let expected = [
            (a + b + c + d) / 2.0,
            (a - b + c - d) / 2.0,
            (a + b - c - d) / 2.0,
            (a - b - c + d) / 2.0,
        ];
        assert!(max_diff(&out, &expected) < 1e-15);
    }

    #[test]
    fn haar_round_trip_and_parseval() {
        let shape = ImageShape::new(16, 8, 2);
        let levels = max_haar_levels(shape);
        assert_eq!(levels, 3);
        let x = Rng::new(3).normal_vector(shape.len());
        let c = haar2(&x, shape, levels).unwrap();
        assert!((norm2(&c) - norm2(&x)).abs() < 1e-10);
        assert!(max_diff(&ihaar2(&c, shape, levels).unwrap(), &x) < 1e-10);
    }

    #[test]
    fn haar_constant_has_no_details() {
        let shape = ImageShape::new(8, 8, 1);
        let c = haar2(&[2.5; 64], shape, 3).unwrap();
        assert!((c[0] - 2.5 * 8.0).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn haar_rejects_indivisible_sizes() {
        assert!(haar2(&[0.0; 36], ImageShape::new(6, 6, 1), 2).is_err());
        assert_eq!(max_haar_levels(ImageShape::new(28, 28, 1)), 2);
        assert_eq!(max_haar_levels(ImageShape::new(64, 64, 3)), 6);
    }
}
