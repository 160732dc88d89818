//! Dense 4x4 real matrices, the only linear algebra the two-point calculus needs.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Index, IndexMut, Mul, Sub};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat4(pub [[f64; 4]; 4]);

pub type Vec4 = [f64; 4];

impl Mat4 {
    pub const ZERO: Mat4 = Mat4([[0.0; 4]; 4]);

    pub fn identity() -> Self {
        let mut m = Self::ZERO;
        for i in 0..4 {
            m.0[i][i] = 1.0;
        }
        m
    }

    pub fn diag(d: Vec4) -> Self {
        let mut m = Self::ZERO;
        for i in 0..4 {
            m.0[i][i] = d[i];
        }
        m
    }

    pub fn from_fn(f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::ZERO;
        for i in 0..4 {
            for j in 0..4 {
                m.0[i][j] = f(i, j);
            }
        }
        m
    }

    /// `a bᵀ`
    pub fn outer(a: &Vec4, b: &Vec4) -> Self {
        Self::from_fn(|i, j| a[i] * b[j])
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(|i, j| self.0[j][i])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_fn(|i, j| s * self.0[i][j])
    }

    pub fn symmetrized(&self) -> Self {
        Self::from_fn(|i, j| 0.5 * (self.0[i][j] + self.0[j][i]))
    }

    /// Largest entry of `|A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        (*self - self.transpose()).max_abs()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..4).map(|i| self.0[i][i]).sum()
    }

    pub fn mul_vec(&self, v: &Vec4) -> Vec4 {
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = (0..4).map(|j| self.0[i][j] * v[j]).sum();
        }
        out
    }

    /// `vᵀ A v`
    pub fn quad_form(&self, v: &Vec4) -> f64 {
        let av = self.mul_vec(v);
        (0..4).map(|i| v[i] * av[i]).sum()
    }

    /// `S A Sᵀ`
    pub fn congruence(&self, s: &Mat4) -> Mat4 {
        *s * *self * s.transpose()
    }

    /// LU factorisation with partial pivoting. Returns the packed factors,
    /// the row permutation and its sign, or `None` when a pivot is exactly zero.
    fn lu(&self) -> Option<([[f64; 4]; 4], [usize; 4], f64)> {
        let mut a = self.0;
        let mut perm = [0, 1, 2, 3];
        let mut sign = 1.0;
        for k in 0..4 {
            let p = (k..4)
                .max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs()))
                .unwrap();
            if a[p][k] == 0.0 {
                return None;
            }
            if p != k {
                a.swap(p, k);
                perm.swap(p, k);
                sign = -sign;
            }
            for r in k + 1..4 {
                let f = a[r][k] / a[k][k];
                a[r][k] = f;
                for c in k + 1..4 {
                    a[r][c] -= f * a[k][c];
                }
            }
        }
        Some((a, perm, sign))
    }

    /// Determinant by Gaussian elimination with partial pivoting.
    pub fn det(&self) -> f64 {
        match self.lu() {
            None => 0.0,
            Some((a, _, sign)) => sign * a[0][0] * a[1][1] * a[2][2] * a[3][3],
        }
    }

    /// Inverse by elimination; `None` for an exactly singular matrix.
    pub fn inverse(&self) -> Option<Mat4> {
        let (a, perm, _) = self.lu()?;
        let mut inv = Mat4::ZERO;
        for col in 0..4 {
            // solve L U x = P e_col
            let mut x = [0.0; 4];
            for i in 0..4 {
                x[i] = if perm[i] == col { 1.0 } else { 0.0 };
                for j in 0..i {
                    x[i] -= a[i][j] * x[j];
                }
            }
            for i in (0..4).rev() {
                for j in i + 1..4 {
                    x[i] -= a[i][j] * x[j];
                }
                x[i] /= a[i][i];
            }
            for i in 0..4 {
                inv.0[i][col] = x[i];
            }
        }
        Some(inv)
    }

    /// Column-major flattening.
    pub fn to_column_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for c in 0..4 {
            for r in 0..4 {
                out[4 * c + r] = self.0[r][c];
            }
        }
        out
    }

    pub fn from_column_major(v: &[f64; 16]) -> Self {
        Self::from_fn(|r, c| v[4 * c + r])
    }
}

impl Index<(usize, usize)> for Mat4 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat4 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.0[i][j]
    }
}

impl Add for Mat4 {
    type Output = Mat4;
    fn add(self, o: Mat4) -> Mat4 {
        Mat4::from_fn(|i, j| self.0[i][j] + o.0[i][j])
    }
}

impl Sub for Mat4 {
    type Output = Mat4;
    fn sub(self, o: Mat4) -> Mat4 {
        Mat4::from_fn(|i, j| self.0[i][j] - o.0[i][j])
    }
}

impl Mul for Mat4 {
    type Output = Mat4;
    fn mul(self, o: Mat4) -> Mat4 {
        Mat4::from_fn(|i, j| (0..4).map(|k| self.0[i][k] * o.0[k][j]).sum())
    }
}
