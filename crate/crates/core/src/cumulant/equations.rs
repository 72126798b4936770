//! Heisenberg equations for the moment families used by the closure.
//!
//! Every stored moment is either a pure density product
//! `N_P = prod_{p in P} n_p` or a mixed product `N_P s+_a s-_b` with
//! `a, b` outside `P`. Their time derivatives under the master equation are
//! written once here in terms of a [`MomentAccess`] provider; the closed
//! solver feeds factorised moments, the tests feed exact ones.
//!
//! With `K = Omega - (i/2) Gamma` (`Omega` the coherent hopping):
//!
//! ```text
//! d<N_P>/dt = -(sum_p g_pp) <N_P>
//!           + sum_{p in P} sum_{l not in P} 2 Re( i conj(K_pl) <N_{P\p} s+_l s-_p> )
//! ```
//!
//! and for `O = N_P s+_a s-_b`, `S = P + {a, b}`:
//!
//! ```text
//! dO/dt = -(g_aa/2 + g_bb/2 + sum_p g_pp) O + i sum_p (V_ap - V_bp) O
//!       + i Omega_ab <N_P (n_b - n_a)> + (g_ab/2) <N_P (4 n_a n_b - n_a - n_b)>
//!       + sum_p [ -i K_pa <N_{P\p} s+_p n_a s-_b> + i conj(K_bp) <N_{P\p} s+_a n_b s-_p> ]
//!       + sum_p sum_{l not in S} [ -i K_pl <N_{P\p} s+_p s+_a s-_b s-_l>
//!                                 + i conj(K_lp) <N_{P\p} s+_l s+_a s-_p s-_b> ]
//!       + sum_{l not in S} [ i K_bl <N_P s+_a (2 n_b - 1) s-_l>
//!                           + i conj(K_la) <N_P s+_l (1 - 2 n_a) s-_b>
//!                           + i (V_al - V_bl) <n_l N_P s+_a s-_b> ]
//! ```

use std::ops::Deref;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::couplings::CouplingMatrices;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Expectation values of site-distinct operator products.
pub trait MomentAccess {
    /// `<prod_{p in set} n_p>`, sites distinct; the empty product is 1.
    fn pn(&self, set: &[usize]) -> f64;
    /// `<N_q s+_i s-_j>`, `i != j`, neither in `q`.
    fn y(&self, q: &[usize], i: usize, j: usize) -> Complex64;
    /// `<N_q s+_a s+_b s-_c s-_d>`, all six-way distinct.
    fn four(&self, q: &[usize], a: usize, b: usize, c: usize, d: usize) -> Complex64;
}

/// Small stack-allocated site set.
#[derive(Clone, Copy, Debug)]
pub struct Sites {
    buf: [usize; 6],
    len: usize,
}

impl Sites {
    pub fn new(sites: &[usize]) -> Self {
        let mut buf = [0; 6];
        buf[..sites.len()].copy_from_slice(sites);
        Self { buf, len: sites.len() }
    }

    pub fn with(mut self, x: usize) -> Self {
        self.buf[self.len] = x;
        self.len += 1;
        self
    }

    pub fn without(&self, k: usize) -> Self {
        let mut out = Self { buf: [0; 6], len: 0 };
        for (idx, &s) in self.iter().enumerate() {
            if idx != k {
                out = out.with(s);
            }
        }
        out
    }
}

impl Deref for Sites {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.buf[..self.len]
    }
}

/// Coupling data in the form the equations consume.
#[derive(Debug, Clone)]
pub struct Rates {
    pub n_sites: usize,
    /// `Omega - (i/2) Gamma`, row-major.
    k: Vec<Complex64>,
    gamma: Vec<f64>,
    v: Vec<f64>,
    omega: Vec<f64>,
}

impl Rates {
    pub fn new(c: &CouplingMatrices) -> Self {
        let m = c.n_active();
        let hop = c.hopping();
        let row_major = |mat: &DMatrix<f64>| (0..m * m).map(|k| mat[(k / m, k % m)]).collect::<Vec<_>>();
        let omega = row_major(&hop);
        let gamma = row_major(&c.gamma);
        let k = omega.iter().zip(&gamma).map(|(&o, &g)| Complex64::new(o, -0.5 * g)).collect();
        Self {
            n_sites: m,
            k,
            gamma,
            v: row_major(&c.v),
            omega,
        }
    }

    #[inline]
    pub fn k(&self, i: usize, j: usize) -> Complex64 {
        self.k[i * self.n_sites + j]
    }
    #[inline]
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.n_sites + j]
    }
    #[inline]
    pub fn v(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.n_sites + j]
    }
    #[inline]
    pub fn omega(&self, i: usize, j: usize) -> f64 {
        self.omega[i * self.n_sites + j]
    }
}

/// Time derivative of `<N_P>`.
pub fn d_product<M: MomentAccess + ?Sized>(m: &M, r: &Rates, p: &[usize]) -> f64 {
    let set = Sites::new(p);
    let decay: f64 = p.iter().map(|&s| r.g(s, s)).sum();
    let mut acc = -decay * m.pn(p);
    for (k, &s) in p.iter().enumerate() {
        let rest = set.without(k);
        for l in (0..r.n_sites).filter(|l| !p.contains(l)) {
            acc += 2.0 * (I * r.k(s, l).conj() * m.y(&rest, l, s)).re;
        }
    }
    acc
}

/// Time derivative of `<N_P s+_a s-_b>`.
pub fn d_mixed<M: MomentAccess + ?Sized>(m: &M, r: &Rates, p: &[usize], a: usize, b: usize) -> Complex64 {
    let set = Sites::new(p);
    let pa = set.with(a);
    let pb = set.with(b);
    let o = m.y(p, a, b);

    let mut decay = 0.5 * (r.g(a, a) + r.g(b, b));
    let mut shift = 0.0;
    for &s in p {
        decay += r.g(s, s);
        shift += r.v(a, s) - r.v(b, s);
    }
    let mut acc = Complex64::new(-decay, shift) * o;
    acc += I * r.omega(a, b) * (m.pn(&pb) - m.pn(&pa));
    acc += 0.5 * r.g(a, b) * (4.0 * m.pn(&pa.with(b)) - m.pn(&pa) - m.pn(&pb));

    let outside = |l: &usize| *l != a && *l != b && !p.contains(l);
    for (k, &s) in p.iter().enumerate() {
        let rest = set.without(k);
        acc += -I * r.k(s, a) * m.y(&rest.with(a), s, b);
        acc += I * r.k(b, s).conj() * m.y(&rest.with(b), a, s);
        for l in (0..r.n_sites).filter(outside) {
            acc += -I * r.k(s, l) * m.four(&rest, s, a, b, l);
            acc += I * r.k(l, s).conj() * m.four(&rest, l, a, s, b);
        }
    }
    for l in (0..r.n_sites).filter(outside) {
        acc += I * r.k(b, l) * (2.0 * m.y(&pb, a, l) - m.y(p, a, l));
        acc += I * r.k(l, a).conj() * (m.y(p, l, b) - 2.0 * m.y(&pa, l, b));
        let dv = r.v(a, l) - r.v(b, l);
        if dv != 0.0 {
            acc += I * dv * m.y(&set.with(l), a, b);
        }
    }
    acc
}
