//! Reference computations that share no code with the main pipeline, used by
//! the acceptance suite and the tests: plain matrix powers of the one-site
//! and two-site chains at K = 0, and Gamma / Gamma_2 straight from the
//! generator L = P - I.

use crate::mat4::{Mat4, Vec4};

/// Phi through erf rather than erfc.
pub fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// One-site K = 0 transition matrix, entry [from][to], index 0 = +1.
pub fn site_step(gamma: f64) -> [[f64; 2]; 2] {
    let z = 1.0 - gamma;
    // from +1 the field is z, from -1 it is -z
    [[phi(z), 1.0 - phi(z)], [phi(-z), 1.0 - phi(-z)]]
}

pub fn site_power(gamma: f64, n: usize) -> [[f64; 2]; 2] {
    let s = site_step(gamma);
    let mut p = [[1.0, 0.0], [0.0, 1.0]];
    for _ in 0..n {
        let mut q = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                q[i][j] = p[i][0] * s[0][j] + p[i][1] * s[1][j];
            }
        }
        p = q;
    }
    p
}

/// Spins of state index k under S1 = (+,+), S2 = (-,+), S3 = (+,-), S4 = (-,-).
fn spins(k: usize) -> (usize, usize) {
    (k & 1, k >> 1)
}

/// Two-site K = 0 chain, entry [from][to], by enumerating both site moves.
pub fn pair_step(gamma: f64) -> [[f64; 4]; 4] {
    let s = site_step(gamma);
    let mut p = [[0.0; 4]; 4];
    for (from, row) in p.iter_mut().enumerate() {
        let (a, b) = spins(from);
        for (to, x) in row.iter_mut().enumerate() {
            let (c, d) = spins(to);
            *x = s[a][c] * s[b][d];
        }
    }
    p
}

fn mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn pair_power(gamma: f64, n: usize) -> [[f64; 4]; 4] {
    let s = pair_step(gamma);
    let mut p = [[0.0; 4]; 4];
    for (i, row) in p.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..n {
        p = mul(&p, &s);
    }
    p
}

/// Generator of a finite chain with matrix p[from][to].
pub struct Generator {
    p: [[f64; 4]; 4],
}

impl Generator {
    pub fn new(p: [[f64; 4]; 4]) -> Self {
        Generator { p }
    }

    pub fn apply(&self, g: &Vec4) -> Vec4 {
        [0, 1, 2, 3].map(|e| (0..4).map(|w| self.p[e][w] * g[w]).sum::<f64>() - g[e])
    }

    /// Gamma(g, h) = (L(gh) - g Lh - h Lg) / 2.
    pub fn gamma(&self, g: &Vec4, h: &Vec4) -> Vec4 {
        let gh = [0, 1, 2, 3].map(|i| g[i] * h[i]);
        let (l_gh, l_g, l_h) = (self.apply(&gh), self.apply(g), self.apply(h));
        [0, 1, 2, 3].map(|i| 0.5 * (l_gh[i] - g[i] * l_h[i] - h[i] * l_g[i]))
    }

    /// Gamma_2(g, g) = (L Gamma(g, g) - 2 Gamma(g, Lg)) / 2.
    pub fn gamma2(&self, g: &Vec4) -> Vec4 {
        let l_gam = self.apply(&self.gamma(g, g));
        let cross = self.gamma(g, &self.apply(g));
        [0, 1, 2, 3].map(|i| 0.5 * (l_gam[i] - 2.0 * cross[i]))
    }
}

/// F = P^n f as a function of the current two-site state.
pub fn propagate(f: &Vec4, gamma: f64, n: usize) -> Vec4 {
    let p = pair_power(gamma, n);
    [0, 1, 2, 3].map(|w| (0..4).map(|i| p[w][i] * f[i]).sum())
}

/// 2 Cov(omega_x1, omega_x2) at K = 0 after a Poisson(t) number of steps from
/// all spins up. Given the number of steps n the two sites are independent
/// with mean r^n, r = 2 Phi(1 - gamma) - 1, but the shared clock correlates them.
pub fn poissonized_cov2(gamma: f64, t: f64) -> f64 {
    let r = 2.0 * phi(1.0 - gamma) - 1.0;
    2.0 * ((-t * (1.0 - r * r)).exp() - (-2.0 * t * (1.0 - r)).exp())
}

/// The closed-form N*_1(S1) at K = 0: diag(0, p2, p3, p4) with p the
/// one-step law from S1.
pub fn n_star_display(gamma: f64) -> Mat4 {
    let (a, b) = (phi(1.0 - gamma), phi(gamma - 1.0));
    Mat4::diag([0.0, a * b, a * b, b * b])
}

/// The closed-form M*_1(S1) at K = 0 in A = Phi(1 - gamma), B = Phi(gamma - 1).
pub fn m_star_display(gamma: f64) -> Mat4 {
    let (a, b) = (phi(1.0 - gamma), phi(gamma - 1.0));
    let d = 4.0 * a * b * b + 2.0 * a * a * b * b;
    let off = 2.0 * a * a * b * b - 4.0 * a * b.powi(3);
    let c = -2.0 * a * a * b * b;
    Mat4([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, d, off, c],
        [0.0, off, d, c],
        [0.0, c, c, 2.0 * b * b + 2.0 * b.powi(4)],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chains_are_stochastic() {
        for n in 0..6 {
            let p = pair_power(2.0, n);
            for row in p {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn generator_gamma_is_half_mean_square_jump() {
        let g = Generator::new(pair_step(1.7));
        let f = [0.3, -1.0, 2.0, 0.5];
        let gam = g.gamma(&f, &f);
        let p = pair_step(1.7);
        for e in 0..4 {
            let direct: f64 = 0.5 * (0..4).map(|w| p[e][w] * (f[w] - f[e]).powi(2)).sum::<f64>();
            assert!((gam[e] - direct).abs() < 1e-14);
        }
    }
}
