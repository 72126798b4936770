//! The moment equations, fed exact moments of an arbitrary state, must
//! reproduce `Tr(O L[rho])` computed from the dense Lindbladian.

use moire_radiance::couplings::{CouplingMatrices, ModelParameters};
use moire_radiance::cumulant::equations::{d_mixed, d_product, MomentAccess, Rates};
use moire_radiance::exact::build_hamiltonian;
use moire_radiance::lattice::build_triangular;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type CMat = DMatrix<Complex64>;

/// `Tr(rho O)` for site-distinct operator products on hard-core bosons.
struct ExactMoments<'a> {
    rho: &'a CMat,
    m: usize,
}

impl ExactMoments<'_> {
    /// `sum_s rho[t][s]` over states `s` with `need` set and `empty` clear,
    /// where `t = s - lower + raise` must contain `q`.
    fn transition(&self, q: &[usize], raise: &[usize], lower: &[usize]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for s in 0..(1usize << self.m) {
            if lower.iter().any(|&l| s >> l & 1 == 0) || raise.iter().any(|&r| s >> r & 1 == 1) {
                continue;
            }
            let t = lower.iter().chain(raise).fold(s, |acc, &x| acc ^ (1 << x));
            if q.iter().any(|&p| t >> p & 1 == 0) {
                continue;
            }
            acc += self.rho[(s, t)];
        }
        acc
    }
}

impl MomentAccess for ExactMoments<'_> {
    fn pn(&self, set: &[usize]) -> f64 {
        self.transition(set, &[], &[]).re
    }
    fn y(&self, q: &[usize], i: usize, j: usize) -> Complex64 {
        self.transition(q, &[i], &[j])
    }
    fn four(&self, q: &[usize], a: usize, b: usize, c: usize, d: usize) -> Complex64 {
        self.transition(q, &[a, b], &[c, d])
    }
}

fn lowering(m: usize, i: usize) -> CMat {
    let dim = 1 << m;
    CMat::from_fn(dim, dim, |r, c| {
        if c >> i & 1 == 1 && r == c ^ (1 << i) {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

fn lindblad(rho: &CMat, c: &CouplingMatrices) -> CMat {
    let m = c.n_active();
    let h = build_hamiltonian(c).unwrap().to_dense().map(|x| Complex64::new(x, 0.0));
    let i = Complex64::i();
    let mut out = (rho * &h - &h * rho) * i;
    let lowers: Vec<CMat> = (0..m).map(|k| lowering(m, k)).collect();
    for a in 0..m {
        for b in 0..m {
            let g = Complex64::new(c.gamma[(a, b)], 0.0);
            let raise_a = lowers[a].adjoint();
            let hop = &raise_a * &lowers[b];
            let half = Complex64::new(0.5, 0.0);
            out += (&lowers[b] * rho * &raise_a - (&hop * rho + rho * &hop) * half) * g;
        }
    }
    out
}

fn random_state(m: usize, rng: &mut ChaCha8Rng) -> CMat {
    let dim = 1 << m;
    let a = CMat::from_fn(dim, dim, |_, _| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

fn subsets(m: usize, size: usize) -> Vec<Vec<usize>> {
    (0..(1usize << m))
        .filter(|s| s.count_ones() as usize == size)
        .map(|s| (0..m).filter(|&i| s >> i & 1 == 1).collect())
        .collect()
}

fn check(n_rows: usize, n_cols: usize, blocked: &[usize], seed: u64) {
    let mut lat = build_triangular(n_rows, n_cols, 0.07).unwrap();
    for &b in blocked {
        lat.blocked[b] = true;
    }
    let params = ModelParameters {
        eps_dd: 1.7,
        tunneling_t: 0.6,
        ..Default::default()
    };
    let c = CouplingMatrices::build(&lat, &params).unwrap();
    let m = c.n_active();
    let rates = Rates::new(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = random_state(m, &mut rng);
    let lrho = lindblad(&rho, &c);
    let now = ExactMoments { rho: &rho, m };
    let deriv = ExactMoments { rho: &lrho, m };

    let scale = 1e-10 * (1.0 + c.v.amax() + c.j.amax());
    for size in 1..=m.min(4) {
        for p in subsets(m, size) {
            let got = d_product(&now, &rates, &p);
            let want = deriv.pn(&p);
            assert!((got - want).abs() < scale, "N_{p:?}: {got} vs {want}");
        }
    }
    for size in 0..=(m - 2).min(2) {
        for p in subsets(m, size) {
            for a in (0..m).filter(|x| !p.contains(x)) {
                for b in (0..m).filter(|x| *x != a && !p.contains(x)) {
                    let got = d_mixed(&now, &rates, &p, a, b);
                    let want = deriv.y(&p, a, b);
                    assert!((got - want).norm() < scale, "N_{p:?} s+_{a} s-_{b}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn equations_exact_on_three_sites() {
    check(1, 3, &[], 1);
}

#[test]
fn equations_exact_on_four_sites() {
    check(2, 2, &[], 2);
}

#[test]
fn equations_exact_on_five_sites_with_blocked_site() {
    check(2, 3, &[4], 3);
}
