//! Cumulant-expansion solver for the same master equation.
//!
//! Stored moments (all others follow from Hermiticity or vanish by exciton
//! number conservation):
//!
//! * `n_i = <n_i>`
//! * `C_ij = <s+_i s-_j>` for `i < j`
//! * `nn_ij = <n_i n_j>` for `i < j`
//! * order 3 only: `X_c;ab = <n_c s+_a s-_b>` for `a < b`, and
//!   `T_abc = <n_a n_b n_c>` for `a < b < c`
//!
//! Order 2 drops the third cumulant (`X ~ n_c C_ab` and the matching
//! factorisation of `T`); order 3 drops the fourth cumulant of every
//! four-site product that appears on the right-hand side.

pub mod equations;
mod fast;

use std::ops::ControlFlow;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::CouplingMatrices;
use crate::error::{Error, Result};
use crate::lattice::LatticeConfiguration;
use crate::ode::{integrate, IntegratorOptions, IntegratorStats};
use equations::{d_mixed, d_product, MomentAccess, Rates};

pub use equations::Sites;

/// Largest number of active sites the cumulant solver accepts.
pub const CUMULANT_SITE_LIMIT: usize = 64;

/// `|<n_i>|` beyond this aborts the run.
pub const DIVERGENCE_BOUND: f64 = 1.0 + 1e-2;

/// Slack on `0 <= <n_i> <= 1` before a value counts as a bound violation.
pub const BOUND_TOLERANCE: f64 = 1e-6;

#[inline]
fn pair(i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    j * (j - 1) / 2 + i
}

#[inline]
fn triple(a: usize, b: usize, c: usize) -> usize {
    debug_assert!(a < b && b < c);
    c * (c - 1) * (c - 2) / 6 + b * (b - 1) / 2 + a
}

fn sort3(a: usize, b: usize, c: usize) -> (usize, usize, usize) {
    let mut s = [a, b, c];
    s.sort_unstable();
    (s[0], s[1], s[2])
}

/// Offsets of each moment family inside the flat real state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub n_sites: usize,
    pub order: u8,
}

impl Layout {
    pub fn new(n_sites: usize, order: u8) -> Result<Self> {
        if !(order == 2 || order == 3) {
            return Err(Error::InvalidParameters(format!("cumulant order must be 2 or 3, got {order}")));
        }
        if n_sites > CUMULANT_SITE_LIMIT {
            return Err(Error::CumulantSizeGuard {
                active: n_sites,
                limit: CUMULANT_SITE_LIMIT,
            });
        }
        Ok(Self { n_sites, order })
    }

    fn pairs(&self) -> usize {
        self.n_sites * self.n_sites.saturating_sub(1) / 2
    }

    fn triples(&self) -> usize {
        let m = self.n_sites;
        if m < 3 { 0 } else { m * (m - 1) * (m - 2) / 6 }
    }

    fn off_c(&self) -> usize {
        self.n_sites
    }

    fn off_nn(&self) -> usize {
        self.off_c() + 2 * self.pairs()
    }

    fn off_x(&self) -> usize {
        self.off_nn() + self.pairs()
    }

    fn off_t(&self) -> usize {
        self.off_x() + 2 * self.n_sites * self.pairs()
    }

    pub fn len(&self) -> usize {
        if self.order == 3 {
            self.off_t() + self.triples()
        } else {
            self.off_x()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Moments read from a flat state, with the closure supplying everything
/// that is not stored.
#[derive(Clone, Copy)]
struct Closed<'a> {
    l: Layout,
    d: &'a [f64],
}

impl Closed<'_> {
    #[inline]
    fn n(&self, i: usize) -> f64 {
        self.d[i]
    }

    #[inline]
    fn c(&self, i: usize, j: usize) -> Complex64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => Complex64::new(self.d[i], 0.0),
            Less => {
                let k = self.l.off_c() + 2 * pair(i, j);
                Complex64::new(self.d[k], self.d[k + 1])
            }
            Greater => {
                let k = self.l.off_c() + 2 * pair(j, i);
                Complex64::new(self.d[k], -self.d[k + 1])
            }
        }
    }

    #[inline]
    fn nn(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.d[self.l.off_nn() + pair(a, b)]
    }

    #[inline]
    fn x(&self, c: usize, a: usize, b: usize) -> Complex64 {
        if self.l.order == 2 {
            return self.n(c) * self.c(a, b);
        }
        let np = self.l.pairs();
        if a < b {
            let k = self.l.off_x() + 2 * (c * np + pair(a, b));
            Complex64::new(self.d[k], self.d[k + 1])
        } else {
            let k = self.l.off_x() + 2 * (c * np + pair(b, a));
            Complex64::new(self.d[k], -self.d[k + 1])
        }
    }

    #[inline]
    fn t(&self, a: usize, b: usize, c: usize) -> f64 {
        if self.l.order == 2 {
            return self.nn(a, b) * self.n(c) + self.nn(a, c) * self.n(b) + self.nn(b, c) * self.n(a)
                - 2.0 * self.n(a) * self.n(b) * self.n(c);
        }
        let (a, b, c) = sort3(a, b, c);
        self.d[self.l.off_t() + triple(a, b, c)]
    }
}

impl MomentAccess for Closed<'_> {
    fn pn(&self, set: &[usize]) -> f64 {
        match *set {
            [] => 1.0,
            [a] => self.n(a),
            [a, b] => self.nn(a, b),
            [a, b, c] => self.t(a, b, c),
            _ => unreachable!("four-site density product requested"),
        }
    }

    fn y(&self, q: &[usize], i: usize, j: usize) -> Complex64 {
        match *q {
            [] => self.c(i, j),
            [c] => self.x(c, i, j),
            // <n_x n_y s+_i s-_j> with the fourth cumulant dropped
            [x, y] => {
                self.n(x) * self.x(y, i, j) + self.n(y) * self.x(x, i, j)
                    + (self.nn(x, y) - 2.0 * self.n(x) * self.n(y)) * self.c(i, j)
            }
            _ => unreachable!("five-operator moment requested"),
        }
    }

    fn four(&self, q: &[usize], a: usize, b: usize, c: usize, d: usize) -> Complex64 {
        debug_assert!(q.is_empty());
        self.c(a, c) * self.c(b, d) + self.c(a, d) * self.c(b, c)
    }
}

/// Closed moment hierarchy at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantState {
    pub layout: Layout,
    pub data: Vec<f64>,
    pub time: f64,
}

impl CumulantState {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            layout,
            data: vec![0.0; layout.len()],
            time: 0.0,
        }
    }

    fn view(&self) -> Closed<'_> {
        Closed {
            l: self.layout,
            d: &self.data,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.layout.n_sites
    }

    pub fn population(&self, i: usize) -> f64 {
        self.data[i]
    }

    pub fn populations(&self) -> &[f64] {
        &self.data[..self.layout.n_sites]
    }

    /// `<s+_i s-_j>`; the diagonal is `<n_i>`.
    pub fn coherence(&self, i: usize, j: usize) -> Complex64 {
        self.view().c(i, j)
    }

    pub fn density_pair(&self, i: usize, j: usize) -> f64 {
        self.view().nn(i, j)
    }

    /// `<n_c s+_a s-_b>` (factorised at order 2).
    pub fn density_coherence(&self, c: usize, a: usize, b: usize) -> Complex64 {
        self.view().x(c, a, b)
    }

    /// `<n_a n_b n_c>` (factorised at order 2).
    pub fn density_triple(&self, a: usize, b: usize, c: usize) -> f64 {
        self.view().t(a, b, c)
    }

    pub fn coherence_matrix(&self) -> DMatrix<Complex64> {
        let m = self.layout.n_sites;
        DMatrix::from_fn(m, m, |i, j| self.coherence(i, j))
    }

    pub fn total_excitons(&self) -> f64 {
        self.populations().iter().sum()
    }
}

/// Moments of an occupation-number product state over the active sites.
pub fn init_from_fock(config: &LatticeConfiguration, order: u8) -> Result<CumulantState> {
    config.validate()?;
    init_from_occupancy(&config.active_occupancy(), order)
}

pub fn init_from_occupancy(occupancy: &[bool], order: u8) -> Result<CumulantState> {
    let layout = Layout::new(occupancy.len(), order)?;
    let mut s = CumulantState::zeros(layout);
    let n: Vec<f64> = occupancy.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
    let m = n.len();
    s.data[..m].copy_from_slice(&n);
    for j in 0..m {
        for i in 0..j {
            s.data[layout.off_nn() + pair(i, j)] = n[i] * n[j];
            if order == 3 {
                for k in 0..i {
                    s.data[layout.off_t() + triple(k, i, j)] = n[k] * n[i] * n[j];
                }
            }
        }
    }
    Ok(s)
}

fn rhs_into(rates: &Rates, layout: Layout, y: &[f64], out: &mut [f64], reference: bool) {
    let m = layout.n_sites;
    let np = layout.pairs();
    let mom = Closed { l: layout, d: y };
    let (head, tail) = out.split_at_mut(layout.off_x());
    let (singles, rest) = head.split_at_mut(m);
    let (coh, dens) = rest.split_at_mut(2 * np);

    for (i, o) in singles.iter_mut().enumerate() {
        *o = d_product(&mom, rates, &[i]);
    }
    coh.par_chunks_mut(2).zip(dens.par_iter_mut()).enumerate().for_each(|(k, (c, nn))| {
        let (i, j) = unpair(k);
        let z = d_mixed(&mom, rates, &[], i, j);
        c[0] = z.re;
        c[1] = z.im;
        *nn = d_product(&mom, rates, &[i, j]);
    });
    if layout.order == 3 {
        let (xs, ts) = tail.split_at_mut(2 * m * np);
        if !reference {
            fast::third_order_blocks(rates, &mom, xs, ts);
            return;
        }
        xs.par_chunks_mut(2 * np).enumerate().for_each(|(c, block)| {
            for k in 0..np {
                let (a, b) = unpair(k);
                if c == a || c == b {
                    block[2 * k] = 0.0;
                    block[2 * k + 1] = 0.0;
                    continue;
                }
                let z = d_mixed(&mom, rates, &[c], a, b);
                block[2 * k] = z.re;
                block[2 * k + 1] = z.im;
            }
        });
        let triples: Vec<(usize, usize, usize)> = (2..m)
            .flat_map(|c| (1..c).flat_map(move |b| (0..b).map(move |a| (a, b, c))))
            .collect();
        ts.par_iter_mut().zip(triples.par_iter()).for_each(|(o, &(a, b, c))| {
            *o = d_product(&mom, rates, &[a, b, c]);
        });
    }
}

fn unpair(k: usize) -> (usize, usize) {
    // inverse of j (j - 1) / 2 + i
    let mut j = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0) as usize;
    while j * (j - 1) / 2 > k {
        j -= 1;
    }
    while (j + 1) * j / 2 <= k {
        j += 1;
    }
    (k - j * (j - 1) / 2, j)
}

/// Time derivative of every stored moment.
pub fn rhs(state: &CumulantState, couplings: &CouplingMatrices) -> Result<CumulantState> {
    if couplings.n_active() != state.layout.n_sites {
        return Err(Error::DimensionMismatch(format!(
            "state has {} sites, couplings {}",
            state.layout.n_sites,
            couplings.n_active()
        )));
    }
    let rates = Rates::new(couplings);
    let mut out = CumulantState::zeros(state.layout);
    out.time = state.time;
    rhs_into(&rates, state.layout, &state.data, &mut out.data, false);
    Ok(out)
}

/// Same as [`rhs`], evaluating every moment equation term by term. Slower;
/// kept as the reference for the contracted third-order path.
pub fn rhs_reference(state: &CumulantState, couplings: &CouplingMatrices) -> Result<CumulantState> {
    if couplings.n_active() != state.layout.n_sites {
        return Err(Error::DimensionMismatch("state and couplings differ in size".into()));
    }
    let rates = Rates::new(couplings);
    let mut out = CumulantState::zeros(state.layout);
    out.time = state.time;
    rhs_into(&rates, state.layout, &state.data, &mut out.data, true);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulantOptions {
    pub t_max: f64,
    pub dt_out: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Stop once `N_x(t) < stop_fraction * N_x(0)`.
    pub stop_fraction: Option<f64>,
}

impl Default for CumulantOptions {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            dt_out: 0.01,
            rtol: 1e-8,
            atol: 1e-10,
            stop_fraction: Some(1e-3),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CumulantRun {
    pub times: Vec<f64>,
    pub total_excitons: Vec<f64>,
    pub coherences: Vec<DMatrix<Complex64>>,
    pub final_state: CumulantState,
    /// Largest excursion of any `<n_i>` outside `[0, 1]` over the run.
    pub max_bound_violation: f64,
    /// Output times at which an excursion exceeded [`BOUND_TOLERANCE`].
    pub bound_violations: usize,
    pub stats: IntegratorStats,
}

/// Integrate the closed hierarchy from `state0`.
pub fn evolve_cumulant(state0: &CumulantState, couplings: &CouplingMatrices, opts: &CumulantOptions) -> Result<CumulantRun> {
    let layout = state0.layout;
    if couplings.n_active() != layout.n_sites {
        return Err(Error::DimensionMismatch(format!(
            "state has {} sites, couplings {}",
            layout.n_sites,
            couplings.n_active()
        )));
    }
    if !(opts.t_max > 0.0 && opts.dt_out > 0.0) {
        return Err(Error::InvalidParameters("t_max and dt_out must be positive".into()));
    }
    couplings.check_gamma_psd()?;
    let rates = Rates::new(couplings);
    let m = layout.n_sites;
    let mut y = state0.data.clone();
    let integ = IntegratorOptions {
        rtol: opts.rtol,
        atol: opts.atol,
        ..Default::default()
    };

    let mut times = Vec::new();
    let mut total = Vec::new();
    let mut coherences = Vec::new();
    let mut worst = 0.0f64;
    let mut violations = 0;
    let mut last_t = 0.0;

    let result = integrate(
        &mut y,
        opts.t_max,
        opts.dt_out,
        &integ,
        |_, y, dy| rhs_into(&rates, layout, y, dy, false),
        |t, y| {
            last_t = t;
            let mut excursion = 0.0f64;
            for (i, &n) in y[..m].iter().enumerate() {
                if !n.is_finite() || n.abs() > DIVERGENCE_BOUND {
                    return Err(Error::ClosureBreakdown { t, site: i, value: n });
                }
                excursion = excursion.max(-n).max(n - 1.0);
            }
            worst = worst.max(excursion);
            if excursion > BOUND_TOLERANCE {
                violations += 1;
            }
            let view = Closed { l: layout, d: y };
            let c = DMatrix::from_fn(m, m, |i, j| view.c(i, j));
            let nx: f64 = y[..m].iter().sum();
            times.push(t);
            total.push(nx);
            coherences.push(c);
            let stop = opts.stop_fraction.is_some_and(|f| nx < f * total[0]);
            Ok(if stop { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        },
    );
    let (t_end, stats) = match result {
        Ok(r) => r,
        // a stalled step controller means the closure has gone stiff or unstable
        Err(Error::StepSizeUnderflow { t } | Error::TooManySteps { t, .. }) => {
            let (site, value) = y[..m]
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap_or((0, f64::NAN));
            return Err(Error::ClosureBreakdown { t: t.max(last_t), site, value });
        }
        Err(e) => return Err(e),
    };
    Ok(CumulantRun {
        times,
        total_excitons: total,
        coherences,
        final_state: CumulantState {
            layout,
            data: y,
            time: t_end,
        },
        max_bound_violation: worst,
        bound_violations: violations,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::couplings::ModelParameters;
    use crate::lattice::build_triangular;

    #[test]
    fn pair_and_triple_indices_are_dense() {
        let m = 7;
        let mut seen = vec![false; m * (m - 1) / 2];
        for j in 0..m {
            for i in 0..j {
                let k = pair(i, j);
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(unpair(k), (i, j));
            }
        }
        let mut seen = [false; 35];
        for c in 0..m {
            for b in 0..c {
                for a in 0..b {
                    let k = triple(a, b, c);
                    assert!(!seen[k]);
                    seen[k] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn layout_guards() {
        assert!(Layout::new(4, 1).is_err());
        assert!(matches!(Layout::new(65, 3), Err(Error::CumulantSizeGuard { .. })));
        assert_eq!(Layout::new(4, 2).unwrap().len(), 4 + 12 + 6);
    }

    #[test]
    fn fock_initialisation() {
        let lat = build_triangular(2, 2, 0.05).unwrap();
        let s = init_from_fock(&lat, 3).unwrap();
        assert!(s.populations().iter().all(|&n| n == 0.0));
        let mut full = lat.clone();
        full.occupancy = vec![true; 4];
        let s = init_from_fock(&full, 3).unwrap();
        assert!(s.populations().iter().all(|&n| n == 1.0));
        assert_eq!(s.coherence(0, 1), Complex64::new(0.0, 0.0));
        assert_eq!(s.density_triple(3, 0, 2), 1.0);
    }

    #[test]
    fn vacuum_is_stationary() {
        let lat = build_triangular(2, 3, 0.05).unwrap();
        let c = CouplingMatrices::build(&lat, &ModelParameters::with_eps_dd(5.0)).unwrap();
        for order in [2, 3] {
            let s = init_from_fock(&lat, order).unwrap();
            assert!(rhs(&s, &c).unwrap().data.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn contracted_rhs_matches_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (rows, cols) in [(2, 3), (2, 4), (3, 3)] {
            let mut lat = build_triangular(rows, cols, 0.06).unwrap();
            lat.blocked[1] = true;
            let params = ModelParameters {
                eps_dd: 3.0,
                tunneling_t: 0.5,
                ..Default::default()
            };
            let c = CouplingMatrices::build(&lat, &params).unwrap();
            let mut s = init_from_fock(&lat, 3).unwrap();
            for x in s.data.iter_mut() {
                *x = rng.random::<f64>() - 0.5;
            }
            let fast = rhs(&s, &c).unwrap();
            let slow = rhs_reference(&s, &c).unwrap();
            let scale = slow.data.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            for (k, (f, r)) in fast.data.iter().zip(&slow.data).enumerate() {
                assert!((f - r).abs() < 1e-12 * scale, "{rows}x{cols} entry {k}: {f} vs {r}");
            }
        }
    }

    #[test]
    fn two_site_feeding_term() {
        let mut lat = build_triangular(1, 2, 0.05).unwrap();
        lat.occupancy = vec![true, true];
        let c = CouplingMatrices::build(&lat, &ModelParameters::with_eps_dd(2.0)).unwrap();
        let d = rhs(&init_from_fock(&lat, 3).unwrap(), &c).unwrap();
        assert!((d.population(0) + 1.0).abs() < 1e-14);
        let g12 = c.gamma[(0, 1)];
        assert!((d.coherence(0, 1) - Complex64::new(g12, 0.0)).norm() < 1e-14);
    }
}
