//! Closed-form matting Laplacian over 3x3 windows.

use nalgebra::{Matrix3, Vector3};
use sprs::{CsMat, TriMat};

use crate::tensor::Tensor3;

use super::StyleError;

/// Sparse symmetric `N x N` matrix, `N = H * W`, indexed row-major.
#[derive(Debug, Clone)]
pub struct MattingLaplacian {
    matrix: CsMat<f64>,
    height: usize,
    width: usize,
}

const WIN: usize = 9;

impl MattingLaplacian {
    /// Builds the Laplacian of an RGB image. Every fully contained 3x3
    /// window contributes `delta_ij - (1 + (I_i - mu)^T (S + eps/9 I)^-1 (I_j - mu)) / 9`.
    pub fn build(image: &Tensor3, eps: f64) -> Result<Self, StyleError> {
        let (c, h, w) = image.shape();
        if c != 3 {
            return Err(StyleError::Dimension(format!("matting needs 3 channels, got {c}")));
        }
        if h < 3 || w < 3 {
            return Err(StyleError::Dimension(format!("image {h}x{w} is smaller than the 3x3 window")));
        }
        if !(eps > 0.0) {
            return Err(StyleError::Dimension(format!("matting eps must be positive, got {eps}")));
        }
        let n = h * w;
        let mut tri = TriMat::with_capacity((n, n), (h - 2) * (w - 2) * WIN * WIN);
        let px = |y: usize, x: usize| Vector3::new(image.get(0, y, x), image.get(1, y, x), image.get(2, y, x));
        for cy in 1..h - 1 {
            for cx in 1..w - 1 {
                let mut idx = [0usize; WIN];
                let mut col = [Vector3::zeros(); WIN];
                let mut k = 0;
                for y in cy - 1..=cy + 1 {
                    for x in cx - 1..=cx + 1 {
                        idx[k] = y * w + x;
                        col[k] = px(y, x);
                        k += 1;
                    }
                }
                let mu = col.iter().sum::<Vector3<f64>>() / WIN as f64;
                let mut cov = Matrix3::zeros();
                for v in &col {
                    let d = v - mu;
                    cov += d * d.transpose();
                }
                cov /= WIN as f64;
                let reg = cov + Matrix3::identity() * (eps / WIN as f64);
                let inv = reg
                    .try_inverse()
                    .ok_or_else(|| StyleError::Dimension("singular window covariance".into()))?;
                for a in 0..WIN {
                    let da = (col[a] - mu).transpose() * inv;
                    for b in 0..WIN {
                        let g = (1.0 + (da * (col[b] - mu))[0]) / WIN as f64;
                        let delta = if a == b { 1.0 } else { 0.0 };
                        tri.add_triplet(idx[a], idx[b], delta - g);
                    }
                }
            }
        }
        Ok(Self {
            matrix: tri.to_csr(),
            height: h,
            width: w,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn matrix(&self) -> &CsMat<f64> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (o, row) in out.iter_mut().zip(self.matrix.outer_iterator()) {
            *o = row.iter().map(|(j, m)| m * v[j]).sum();
        }
        out
    }

    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// `sum_c V_c^T M V_c` and its gradient `2 M V_c`.
pub fn photorealism_loss(image: &Tensor3, m: &MattingLaplacian) -> Result<(f64, Tensor3), StyleError> {
    let (c, h, w) = image.shape();
    if (h, w) != m.dims() {
        return Err(StyleError::Dimension(format!(
            "image {h}x{w} does not match Laplacian {:?}",
            m.dims()
        )));
    }
    let mut grad = Tensor3::zeros(c, h, w);
    let mut loss = 0.0;
    for ch in 0..c {
        let v = image.plane(ch);
        let mv = m.mul_vec(v);
        loss += mv.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        for (g, x) in grad.plane_mut(ch).iter_mut().zip(&mv) {
            *g = 2.0 * x;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_fn(3, h, w, |_, _, _| rng.random::<f64>())
    }

    /// Levin's cost for a given alpha: per window, the best ridge-regularized
    /// affine fit of alpha from color, solved as a 4x4 least-squares problem.
    fn variational_cost(image: &Tensor3, alpha: &[f64], eps: f64) -> f64 {
        let (_, h, w) = image.shape();
        let mut total = 0.0;
        for cy in 1..h - 1 {
            for cx in 1..w - 1 {
                let mut a = DMatrix::<f64>::zeros(12, 4);
                let mut rhs = DVector::<f64>::zeros(12);
                let mut k = 0;
                for y in cy - 1..=cy + 1 {
                    for x in cx - 1..=cx + 1 {
                        for c in 0..3 {
                            a[(k, c)] = image.get(c, y, x);
                        }
                        a[(k, 3)] = 1.0;
                        rhs[k] = alpha[y * w + x];
                        k += 1;
                    }
                }
                for c in 0..3 {
                    a[(9 + c, c)] = eps.sqrt();
                }
                let normal = a.transpose() * &a;
                let coef = normal.lu().solve(&(a.transpose() * &rhs)).unwrap();
                total += (a * coef - rhs).norm_squared();
            }
        }
        total
    }

    #[test]
    fn matches_variational_oracle_entrywise() {
        let img = random_image(5, 5, 11);
        let eps = 1e-5;
        let m = MattingLaplacian::build(&img, eps).unwrap();
        let n = 25;
        let unit = |i: usize| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        };
        let diag: Vec<f64> = (0..n).map(|i| variational_cost(&img, &unit(i), eps)).collect();
        for i in 0..n {
            assert!((m.get(i, i) - diag[i]).abs() < 1e-8, "diag {i}");
            for j in i + 1..n {
                let mut v = unit(i);
                v[j] = 1.0;
                let oracle = (variational_cost(&img, &v, eps) - diag[i] - diag[j]) / 2.0;
                assert!((m.get(i, j) - oracle).abs() < 1e-8, "({i},{j}) {} vs {oracle}", m.get(i, j));
                assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_sum_to_zero_and_constants_are_null() {
        let img = random_image(6, 7, 2);
        let m = MattingLaplacian::build(&img, 1e-5).unwrap();
        let ones = vec![1.0; 42];
        for r in m.mul_vec(&ones) {
            assert!(r.abs() < 1e-8);
        }
        let flat = MattingLaplacian::build(&Tensor3::filled(3, 5, 5, 0.4), 1e-5).unwrap();
        assert!(flat.quadratic_form(&[0.7; 25]).abs() < 1e-10);
    }

    #[test]
    fn positive_semidefinite_on_random_draws() {
        let img = random_image(6, 6, 5);
        let m = MattingLaplacian::build(&img, 1e-5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let v: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(m.quadratic_form(&v) >= -1e-8);
        }
    }

    #[test]
    fn rejects_images_smaller_than_window() {
        assert!(MattingLaplacian::build(&Tensor3::zeros(3, 2, 5), 1e-5).is_err());
    }

    #[test]
    fn photorealism_gradient_matches_finite_differences() {
        let content = random_image(5, 5, 8);
        let m = MattingLaplacian::build(&content, 1e-5).unwrap();
        let x = random_image(5, 5, 9);
        let (_, g) = photorealism_loss(&x, &m).unwrap();
        let h = 1e-6;
        let mut err = 0.0f64;
        let mut norm = 0.0f64;
        for i in 0..x.as_slice().len() {
            let mut p = x.clone();
            p.as_mut_slice()[i] += h;
            let mut q = x.clone();
            q.as_mut_slice()[i] -= h;
            let fd = (photorealism_loss(&p, &m).unwrap().0 - photorealism_loss(&q, &m).unwrap().0) / (2.0 * h);
            err += (fd - g.as_slice()[i]).powi(2);
            norm += fd * fd;
        }
        assert!(err.sqrt() / norm.sqrt() <= 1e-4);
    }

    #[test]
    fn photorealism_is_zero_for_per_channel_constants() {
        let m = MattingLaplacian::build(&random_image(5, 5, 3), 1e-5).unwrap();
        let flat = Tensor3::from_fn(3, 5, 5, |c, _, _| 0.2 + 0.3 * c as f64);
        assert!(photorealism_loss(&flat, &m).unwrap().0.abs() < 1e-10);
        let own = photorealism_loss(&random_image(5, 5, 3), &m).unwrap().0;
        assert!(own >= -1e-10);
    }
}
