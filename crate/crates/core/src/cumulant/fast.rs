//! Third-order right-hand side with the `l` sums done as dense contractions.
//!
//! Each sum over `l not in {a, b, c}` is evaluated over all `l` from dense
//! arrays whose coincident-index entries are zero, after which the summands
//! for `l = a, b, c` are subtracted again using the same arrays. The result
//! equals [`super::equations`] term by term; the tests compare the two.

use num_complex::Complex64;
use rayon::prelude::*;

use super::equations::Rates;
use super::{pair, Closed};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

struct Dense {
    m: usize,
    n: Vec<f64>,
    /// `C_ij`, zero on the diagonal.
    cm: Vec<Complex64>,
    /// `nn_xy - 2 n_x n_y`, with `nn_xx` taken as zero.
    q: Vec<f64>,
    /// `X_c;ab` at `(c m + a) m + b`, zero unless all three differ.
    xd: Vec<Complex64>,
    /// `K` and `conj(K)` with zero diagonal.
    ko: Vec<Complex64>,
    kb: Vec<Complex64>,
    vz: Vec<f64>,
}

impl Dense {
    fn new(r: &Rates, mom: &Closed) -> Self {
        let m = r.n_sites;
        let n: Vec<f64> = (0..m).map(|i| mom.n(i)).collect();
        let mut cm = vec![ZERO; m * m];
        let mut q = vec![0.0; m * m];
        let mut ko = vec![ZERO; m * m];
        let mut vz = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let nn = if i == j { 0.0 } else { mom.nn(i, j) };
                q[i * m + j] = nn - 2.0 * n[i] * n[j];
                if i != j {
                    cm[i * m + j] = mom.c(i, j);
                    ko[i * m + j] = r.k(i, j);
                    vz[i * m + j] = r.v(i, j);
                }
            }
        }
        let kb = ko.iter().map(|z| z.conj()).collect();
        let mut xd = vec![ZERO; m * m * m];
        for c in 0..m {
            for a in 0..m {
                for b in 0..m {
                    if a != b && c != a && c != b {
                        xd[(c * m + a) * m + b] = mom.x(c, a, b);
                    }
                }
            }
        }
        Self { m, n, cm, q, xd, ko, kb, vz }
    }

    #[inline]
    fn x(&self, c: usize, a: usize, b: usize) -> Complex64 {
        self.xd[(c * self.m + a) * self.m + b]
    }
}

/// Row-major `M x M` product helper: `out[i][j] = sum_l f(i, l) g(l, j)`.
fn contract(m: usize, f: impl Fn(usize, usize) -> Complex64 + Sync, g: impl Fn(usize, usize) -> Complex64 + Sync) -> Vec<Complex64> {
    let mut out = vec![ZERO; m * m];
    out.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        for l in 0..m {
            let fil = f(i, l);
            if fil == ZERO {
                continue;
            }
            for (j, o) in row.iter_mut().enumerate() {
                *o += fil * g(l, j);
            }
        }
    });
    out
}

/// Derivatives of the `X` and `T` blocks of an order-3 state.
pub(super) fn third_order_blocks(r: &Rates, mom: &Closed, xs: &mut [f64], ts: &mut [f64]) {
    let m = r.n_sites;
    let np = m * m.saturating_sub(1) / 2;
    if np == 0 {
        return;
    }
    let d = Dense::new(r, mom);
    let (n, cm, q, ko, kb, vz) = (&d.n, &d.cm, &d.q, &d.ko, &d.kb, &d.vz);

    // KC[x][y] = sum_l conj(K_lx) C_ly ; KC2[x][y] = sum_l C_xl K_yl
    let kc = contract(m, |x, l| kb[l * m + x], |l, y| cm[l * m + y]);
    let kc2 = contract(m, |x, l| cm[x * m + l], |l, y| ko[y * m + l]);
    let a2: Vec<Complex64> = (0..m).map(|c| (0..m).map(|l| ko[c * m + l] * cm[c * m + l]).sum()).collect();
    let b1: Vec<Complex64> = (0..m).map(|c| (0..m).map(|l| kb[l * m + c] * cm[l * m + c]).sum()).collect();
    let vn: Vec<f64> = (0..m).map(|a| (0..m).map(|l| vz[a * m + l] * n[l]).sum()).collect();
    // G[a][c] = sum_l V_al q_lc
    let g: Vec<f64> = (0..m * m)
        .map(|k| {
            let (a, c) = (k / m, k % m);
            (0..m).map(|l| vz[a * m + l] * q[l * m + c]).sum()
        })
        .collect();
    // C1[b][a] = sum_l K_bl X_b;al ; D2[a][b] = sum_l conj(K_la) X_a;lb ;
    // E2[a][b] = sum_l (V_al - V_bl) X_l;ab
    let mut c1 = vec![ZERO; m * m];
    let mut d2 = vec![ZERO; m * m];
    let mut e2 = vec![ZERO; m * m];
    for a in 0..m {
        for b in 0..m {
            let mut s1 = ZERO;
            let mut s2 = ZERO;
            let mut s3 = ZERO;
            for l in 0..m {
                s1 += ko[b * m + l] * d.x(b, a, l);
                s2 += kb[l * m + a] * d.x(a, l, b);
                s3 += (vz[a * m + l] - vz[b * m + l]) * d.x(l, a, b);
            }
            c1[b * m + a] = s1;
            d2[a * m + b] = s2;
            e2[a * m + b] = s3;
        }
    }
    // H[y][p] = sum_l conj(K_pl) X_y;lp ; Hc[p] = sum_l conj(K_pl) C_lp
    let mut h = vec![ZERO; m * m];
    for y in 0..m {
        for p in 0..m {
            h[y * m + p] = (0..m).map(|l| kb[p * m + l] * d.x(y, l, p)).sum();
        }
    }
    let hc: Vec<Complex64> = (0..m).map(|p| (0..m).map(|l| kb[p * m + l] * cm[l * m + p]).sum()).collect();

    let summand = |c: usize, a: usize, b: usize, l: usize| -> Complex64 {
        let x0 = d.x(c, a, b);
        let cab = cm[a * m + b];
        let dv = vz[a * m + l] - vz[b * m + l];
        -I * ko[c * m + l] * (cm[c * m + b] * cm[a * m + l] + cm[c * m + l] * cab)
            + I * kb[l * m + c] * (cm[l * m + c] * cab + cm[l * m + b] * cm[a * m + c])
            + I * ko[b * m + l]
                * (2.0 * n[c] * d.x(b, a, l) + (2.0 * n[b] - 1.0) * d.x(c, a, l) + 2.0 * q[c * m + b] * cm[a * m + l])
            + I * kb[l * m + a]
                * ((1.0 - 2.0 * n[a]) * d.x(c, l, b) - 2.0 * n[c] * d.x(a, l, b) - 2.0 * q[c * m + a] * cm[l * m + b])
            + I * dv * (n[l] * x0 + n[c] * d.x(l, a, b) + q[l * m + c] * cab)
    };

    xs.par_chunks_mut(2 * np).enumerate().for_each(|(c, block)| {
        // C2[a][b] = sum_l X_c;al K_bl ; D1[a][b] = sum_l conj(K_la) X_c;lb
        let c2 = contract(m, |a, l| d.x(c, a, l), |l, b| ko[b * m + l]);
        let d1 = contract(m, |a, l| kb[l * m + a], |l, b| d.x(c, l, b));
        for b in 0..m {
            for a in 0..b {
                let k = pair(a, b);
                if c == a || c == b {
                    block[2 * k] = 0.0;
                    block[2 * k + 1] = 0.0;
                    continue;
                }
                let x0 = d.x(c, a, b);
                let cab = cm[a * m + b];
                let (gaa, gbb, gcc) = (r.g(a, a), r.g(b, b), r.g(c, c));
                let nn_ca = mom.nn(c, a);
                let nn_cb = mom.nn(c, b);
                let mut acc = Complex64::new(-(0.5 * gaa + 0.5 * gbb + gcc), r.v(a, c) - r.v(b, c)) * x0
                    + I * r.omega(a, b) * (nn_cb - nn_ca)
                    + 0.5 * r.g(a, b) * (4.0 * mom.t(a, b, c) - nn_ca - nn_cb)
                    - I * ko[c * m + a] * d.x(a, c, b)
                    + I * kb[b * m + c] * d.x(b, a, c);
                let ab = a * m + b;
                acc += -I * cm[c * m + b] * kc2[a * m + c] - I * cab * a2[c]
                    + I * cab * b1[c]
                    + I * cm[a * m + c] * kc[c * m + b]
                    + I * (2.0 * n[c] * c1[b * m + a] + (2.0 * n[b] - 1.0) * c2[ab] + 2.0 * q[c * m + b] * kc2[ab])
                    + I * ((1.0 - 2.0 * n[a]) * d1[ab] - 2.0 * n[c] * d2[ab] - 2.0 * q[c * m + a] * kc[ab])
                    + I * (x0 * (vn[a] - vn[b]) + n[c] * e2[ab] + cab * (g[a * m + c] - g[b * m + c]));
                acc -= summand(c, a, b, a) + summand(c, a, b, b) + summand(c, a, b, c);
                block[2 * k] = acc.re;
                block[2 * k + 1] = acc.im;
            }
        }
    });

    let triples: Vec<(usize, usize, usize)> = (2..m)
        .flat_map(|c| (1..c).flat_map(move |b| (0..b).map(move |a| (a, b, c))))
        .collect();
    ts.par_iter_mut().zip(triples.par_iter()).for_each(|(o, &(a, b, c))| {
        let mut acc = -(r.g(a, a) + r.g(b, b) + r.g(c, c)) * mom.t(a, b, c);
        for (p, x, y) in [(a, b, c), (b, a, c), (c, a, b)] {
            let qxy = q[x * m + y];
            let s = |l: usize| kb[p * m + l] * (n[x] * d.x(y, l, p) + n[y] * d.x(x, l, p) + qxy * cm[l * m + p]);
            let full = n[x] * h[y * m + p] + n[y] * h[x * m + p] + qxy * hc[p];
            acc += 2.0 * (I * (full - s(x) - s(y))).re;
        }
        *o = acc;
    });
}
