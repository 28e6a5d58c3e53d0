//! Shared helpers for unit tests: brute-force oracles and a central
//! finite-difference gradient checker.

use rand::Rng;

/// Naive triple-loop matrix product, the oracle matmul is checked against.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

/// Direct 6-nested-loop 3x3 convolution (stride 1, zero padding 1).
#[allow(clippy::too_many_arguments)]
pub fn naive_conv3x3(
    x: &[f64],
    k: &[f64],
    b: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; c_out * h * w];
    for co in 0..c_out {
        for y in 0..h as i64 {
            for xx in 0..w as i64 {
                let mut acc = b[co];
                for ci in 0..c_in {
                    for dy in 0..3i64 {
                        for dx in 0..3i64 {
                            let iy = y + dy - 1;
                            let ix = xx + dx - 1;
                            if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                continue;
                            }
                            acc += k[((co * c_in + ci) * 9 + (dy * 3 + dx) as usize) as usize]
                                * x[ci * h * w + iy as usize * w + ix as usize];
                        }
                    }
                }
                out[co * h * w + y as usize * w + xx as usize] = acc;
            }
        }
    }
    out
}

/// Central finite-difference check of an analytic gradient at up to
/// `max_samples` randomly chosen coordinates. `f` evaluates the scalar loss
/// at a parameter vector.
pub fn fd_check<R: Rng>(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    max_samples: usize,
    rng: &mut R,
) {
    assert_eq!(x.len(), analytic.len());
    let h = 1e-3;
    let mut indices: Vec<usize> = (0..x.len()).collect();
    if indices.len() > max_samples {
        for i in 0..max_samples {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        indices.truncate(max_samples);
    }
    for &i in &indices {
        let mut xp = x.to_vec();
        xp[i] += h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        let numeric = (fp - fm) / (2.0 * h);
        let denom = numeric.abs().max(analytic[i].abs()).max(1e-4);
        let rel = (numeric - analytic[i]).abs() / denom;
        assert!(
            rel < 1e-4,
            "gradient mismatch at index {}: analytic {}, numeric {}, rel err {}",
            i,
            analytic[i],
            numeric,
            rel
        );
    }
}
