//! Exact transition operator of the chain restricted to a finite segment
//! around the two observation sites. Spins outside the segment are treated
//! as absent (they contribute no field), so the segment evolves as a closed
//! Markov chain on 2^m states and every conditional expectation the Gamma
//! matrices need can be computed without sampling.

use crate::dynamics::SpinConfiguration;
use crate::error::{check_gamma, Error, Result};
use crate::kernels::{normal_cdf, TwoPointState};
use crate::mat4::{Mat4, Vec4};
use rayon::prelude::*;

/// Largest segment the enumeration accepts.
pub const MAX_SITES: usize = 18;

#[derive(Clone, Debug)]
pub struct WindowChain {
    k: f64,
    gamma: f64,
    radius: usize,
    separation: usize,
    len: usize,
    /// P(new spin = +1) indexed by [left + 1][centre bit][right + 1].
    up: [[[f64; 3]; 2]; 3],
}

/// Spin encoded by bit `b` of a state: 0 is +1, 1 is -1.
#[inline]
fn spin(bit: usize) -> i32 {
    1 - 2 * bit as i32
}

impl WindowChain {
    /// Segment `[x1 - radius, x2 + radius]` with `x2 = x1 + separation`.
    pub fn new(k: f64, gamma: f64, radius: usize, separation: usize) -> Result<Self> {
        check_gamma(gamma)?;
        if separation == 0 {
            return Err(Error::invalid("x2", "the two sites must be distinct"));
        }
        let len = 2 * radius + separation + 1;
        if len > MAX_SITES {
            return Err(Error::invalid(
                "window_radius",
                format!("segment of {len} sites exceeds the enumeration limit of {MAX_SITES}"),
            ));
        }
        let mut up = [[[0.0; 3]; 2]; 3];
        for (l, row) in up.iter_mut().enumerate() {
            for (c, col) in row.iter_mut().enumerate() {
                for (r, p) in col.iter_mut().enumerate() {
                    let h = k * f64::from(l as i32 - 1 + r as i32 - 1) + (1.0 - gamma) * f64::from(spin(c));
                    *p = normal_cdf(h);
                }
            }
        }
        Ok(WindowChain { k, gamma, radius, separation, len, up })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn separation(&self) -> usize {
        self.separation
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_states(&self) -> usize {
        1 << self.len
    }

    /// Offsets of x1 and x2 inside the segment.
    pub fn sites(&self) -> (usize, usize) {
        (self.radius, self.radius + self.separation)
    }

    pub fn class(&self, state: usize) -> TwoPointState {
        let (a, b) = self.sites();
        TwoPointState::from_index(((state >> a) & 1) | (((state >> b) & 1) << 1))
    }

    /// Segment state read off a ring configuration around `x1`; requires
    /// `x2 = x1 + separation` on the ring.
    pub fn state_of(&self, config: &SpinConfiguration, x1: usize, x2: usize) -> Result<usize> {
        let l = config.len();
        if l < self.len {
            return Err(Error::invalid("L", format!("ring of {l} sites is shorter than the {}-site window", self.len)));
        }
        if (x2 + l - x1 % l) % l != self.separation {
            return Err(Error::invalid("x2", format!("window expects x2 = x1 + {}", self.separation)));
        }
        let mut s = 0;
        for j in 0..self.len {
            let site = x1 as isize - self.radius as isize + j as isize;
            if config.get(site) < 0 {
                s |= 1 << j;
            }
        }
        Ok(s)
    }

    /// The segment state as a configuration of `len` spins.
    pub fn config_of(&self, state: usize) -> SpinConfiguration {
        SpinConfiguration::new((0..self.len).map(|j| spin((state >> j) & 1) as i8).collect())
            .expect("spins are +-1")
    }

    /// Window code: one character per site, '+' or '-'.
    pub fn code(&self, state: usize) -> String {
        (0..self.len).map(|j| if (state >> j) & 1 == 0 { '+' } else { '-' }).collect()
    }

    /// One-step transition probability from `from` to `to` (dense reference).
    pub fn transition(&self, from: usize, to: usize) -> f64 {
        let mut p = 1.0;
        for x in 0..self.len {
            let l = if x == 0 { 1 } else { (spin((from >> (x - 1)) & 1) + 1) as usize };
            let r = if x + 1 == self.len { 1 } else { (spin((from >> (x + 1)) & 1) + 1) as usize };
            let c = (from >> x) & 1;
            let pu = self.up[l][c][r];
            p *= if (to >> x) & 1 == 0 { pu } else { 1.0 - pu };
        }
        p
    }

    /// `(P h)(eta) = sum_omega p(eta, omega) h(omega)`, summing one site at a
    /// time. The work array carries eta bits 0..=x and omega bits x..m-1
    /// (the latter shifted up by one); eliminating omega_x frees its slot for
    /// eta_{x+1}.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let m = self.len;
        assert_eq!(h.len(), 1 << m);
        let mut v = vec![0.0; 2 << m];
        for (idx, x) in v.iter_mut().enumerate() {
            *x = h[idx >> 1];
        }
        for x in 0..m {
            let bit = 1usize << (x + 1);
            let last = x + 1 == m;
            for idx in 0..(2usize << m) {
                if idx & bit != 0 {
                    continue;
                }
                let l = if x == 0 { 1 } else { (spin((idx >> (x - 1)) & 1) + 1) as usize };
                let c = (idx >> x) & 1;
                let (v0, v1) = (v[idx], v[idx | bit]);
                if last {
                    let pu = self.up[l][c][1];
                    v[idx] = pu * v0 + (1.0 - pu) * v1;
                } else {
                    let pu = self.up[l][c][2];
                    let pd = self.up[l][c][0];
                    v[idx] = pu * v0 + (1.0 - pu) * v1;
                    v[idx | bit] = pd * v0 + (1.0 - pd) * v1;
                }
            }
        }
        v.truncate(1 << m);
        v
    }

    /// Restricted transition probabilities b_i(omega) = sum_k w_k P^k 1{S_i}
    /// for every segment state omega.
    pub fn b_table(&self, weights: &[f64]) -> [Vec<f64>; 4] {
        [0, 1, 2, 3].map(|i| {
            let mut g: Vec<f64> = (0..self.n_states())
                .map(|s| if self.class(s).index() == i { 1.0 } else { 0.0 })
                .collect();
            let mut acc = vec![0.0; g.len()];
            for (k, &w) in weights.iter().enumerate() {
                if k > 0 {
                    g = self.apply(&g);
                }
                for (a, x) in acc.iter_mut().zip(&g) {
                    *a += w * x;
                }
            }
            acc
        })
    }

    /// N and M for every starting segment state, for the kernel mixture
    /// given by `weights` (a unit weight at n for a plain n-step horizon).
    pub fn gamma_tables(&self, weights: &[f64]) -> Vec<(Mat4, Mat4)> {
        let b = self.b_table(weights);
        let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (i..4).map(move |j| (i, j))).collect();
        let pb: Vec<Vec<f64>> = b.par_iter().map(|x| self.apply(x)).collect();
        let ppb: Vec<Vec<f64>> = pb.par_iter().map(|x| self.apply(x)).collect();
        let ns = self.n_states();
        let bb: Vec<Vec<f64>> = pairs.iter().map(|&(i, j)| (0..ns).map(|s| b[i][s] * b[j][s]).collect()).collect();
        let s_sym: Vec<Vec<f64>> = pairs
            .iter()
            .map(|&(i, j)| (0..ns).map(|s| pb[i][s] * b[j][s] + b[i][s] * pb[j][s]).collect())
            .collect();
        let p_bb: Vec<Vec<f64>> = bb.par_iter().map(|x| self.apply(x)).collect();
        let pp_bb: Vec<Vec<f64>> = p_bb.par_iter().map(|x| self.apply(x)).collect();
        let p_s: Vec<Vec<f64>> = s_sym.par_iter().map(|x| self.apply(x)).collect();

        (0..ns)
            .map(|s| {
                let at = |t: &[Vec<f64>]| -> Mat4 {
                    let mut m = Mat4::ZERO;
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        m.0[i][j] = t[p][s];
                        m.0[j][i] = t[p][s];
                    }
                    m
                };
                let b_eta: Vec4 = [0, 1, 2, 3].map(|i| b[i][s]);
                let pb_eta: Vec4 = [0, 1, 2, 3].map(|i| pb[i][s]);
                let ppb_eta: Vec4 = [0, 1, 2, 3].map(|i| ppb[i][s]);
                let e_bb = at(&p_bb);
                let eta_eta = Mat4::outer(&b_eta, &b_eta);
                let n = e_bb - Mat4::outer(&b_eta, &pb_eta) - Mat4::outer(&pb_eta, &b_eta) + eta_eta;
                let d: Vec4 = [0, 1, 2, 3].map(|i| ppb_eta[i] - 2.0 * pb_eta[i]);
                let i1 = at(&pp_bb) - at(&p_s).scale(2.0) + e_bb.scale(4.0) + Mat4::outer(&d, &b_eta) + Mat4::outer(&b_eta, &d) + eta_eta;
                let m = i1 - e_bb.scale(2.0) + Mat4::outer(&pb_eta, &pb_eta).scale(2.0);
                (n, m)
            })
            .collect()
    }
}
