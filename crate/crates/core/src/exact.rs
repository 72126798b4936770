//! Exact Lindblad dynamics on the active-site Fock space.
//!
//! The Hamiltonian and the collective decay operator both conserve the
//! exciton number, and quantum jumps lower it by one. A density matrix that
//! starts diagonal in the exciton number therefore stays block diagonal, and
//! only the `C(M, n) x C(M, n)` sector blocks are stored and integrated.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::couplings::CouplingMatrices;
use crate::error::{Error, Result};
use crate::lattice::LatticeConfiguration;
use crate::ode::{integrate, IntegratorOptions, IntegratorStats};

/// Largest number of active sites the exact solver accepts.
pub const EXACT_SITE_LIMIT: usize = 14;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn check_size(n_sites: usize) -> Result<()> {
    if n_sites > EXACT_SITE_LIMIT {
        return Err(Error::ExactSizeGuard {
            active: n_sites,
            limit: EXACT_SITE_LIMIT,
        });
    }
    Ok(())
}

/// Occupation-number basis split into fixed-excitation sectors. Each sector
/// lists its states (bit `i` set = exciton on active site `i`) in increasing
/// order.
#[derive(Debug, Clone)]
pub struct FockBasis {
    n_sites: usize,
    sectors: Vec<Vec<u32>>,
    index: Vec<u32>,
}

impl FockBasis {
    pub fn new(n_sites: usize) -> Result<Self> {
        check_size(n_sites)?;
        let mut sectors = vec![Vec::new(); n_sites + 1];
        let mut index = vec![0u32; 1 << n_sites];
        for state in 0..(1u32 << n_sites) {
            let sector = &mut sectors[state.count_ones() as usize];
            index[state as usize] = sector.len() as u32;
            sector.push(state);
        }
        Ok(Self {
            n_sites,
            sectors,
            index,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn sector(&self, n: usize) -> &[u32] {
        &self.sectors[n]
    }

    pub fn dim(&self, n: usize) -> usize {
        self.sectors[n].len()
    }

    /// Position of a state inside its sector.
    pub fn index_of(&self, state: u32) -> usize {
        self.index[state as usize] as usize
    }
}

fn bits(state: u32, n_sites: usize) -> impl Iterator<Item = usize> {
    (0..n_sites).filter(move |&i| state >> i & 1 == 1)
}

fn holes(state: u32, n_sites: usize) -> impl Iterator<Item = usize> {
    (0..n_sites).filter(move |&i| state >> i & 1 == 0)
}

/// Sparse real operator on the full `2^M` Fock space, stored as triplets
/// `(row, col, value)` with rows/cols labelled by the occupation bit string.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    pub dim: usize,
    pub entries: Vec<(u32, u32, f64)>,
}

impl SparseOperator {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            out[(r as usize, c as usize)] += v;
        }
        out
    }
}

/// `H = sum_{i != j} (J_ij + t A_ij) s+_i s-_j + sum_{i < j} V_ij n_i n_j`
/// over the active sites.
pub fn build_hamiltonian(couplings: &CouplingMatrices) -> Result<SparseOperator> {
    let m = couplings.n_active();
    check_size(m)?;
    let hop = couplings.hopping();
    let mut entries = Vec::new();
    for state in 0..(1u32 << m) {
        let diag: f64 = bits(state, m)
            .flat_map(|i| bits(state, m).filter(move |&j| j > i).map(move |j| (i, j)))
            .map(|(i, j)| couplings.v[(i, j)])
            .sum();
        if diag != 0.0 {
            entries.push((state, state, diag));
        }
        // s+_i s-_j maps |state> (j full, i empty) to |target>
        for j in bits(state, m) {
            for i in holes(state, m) {
                let value = hop[(i, j)];
                if value != 0.0 {
                    let target = state ^ (1 << j) ^ (1 << i);
                    entries.push((target, state, value));
                }
            }
        }
    }
    Ok(SparseOperator {
        dim: 1 << m,
        entries,
    })
}

/// Convenience wrapper that builds the couplings first.
pub fn hamiltonian_for(
    lattice: &LatticeConfiguration,
    params: &crate::couplings::ModelParameters,
) -> Result<SparseOperator> {
    build_hamiltonian(&CouplingMatrices::build(lattice, params)?)
}

/// Density matrix stored as its exciton-number blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrixState {
    pub n_sites: usize,
    /// Row-major `dim_n x dim_n` block for each sector `n = 0..=n_sites`.
    pub blocks: Vec<Vec<Complex64>>,
    pub time: f64,
}

impl DensityMatrixState {
    /// Pure occupation-number state (no spatial coherence).
    pub fn fock(basis: &FockBasis, occupancy: &[bool]) -> Result<Self> {
        if occupancy.len() != basis.n_sites {
            return Err(Error::DimensionMismatch(format!(
                "{} occupations for {} sites",
                occupancy.len(),
                basis.n_sites
            )));
        }
        let state = occupancy
            .iter()
            .enumerate()
            .filter(|(_, &o)| o)
            .fold(0u32, |acc, (i, _)| acc | 1 << i);
        let mut blocks: Vec<Vec<Complex64>> = (0..=basis.n_sites)
            .map(|n| vec![ZERO; basis.dim(n) * basis.dim(n)])
            .collect();
        let n = state.count_ones() as usize;
        let k = basis.index_of(state);
        blocks[n][k * basis.dim(n) + k] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_sites: basis.n_sites,
            blocks,
            time: 0.0,
        })
    }

    pub fn dim(&self, n: usize) -> usize {
        (self.blocks[n].len() as f64).sqrt().round() as usize
    }

    pub fn block(&self, n: usize) -> DMatrix<Complex64> {
        let d = self.dim(n);
        DMatrix::from_row_slice(d, d, &self.blocks[n])
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.blocks.len())
            .map(|n| {
                let d = self.dim(n);
                (0..d).map(|k| self.blocks[n][k * d + k]).sum::<Complex64>()
            })
            .sum()
    }

    /// `sum_s P(s) * popcount(s)`.
    pub fn total_excitons(&self) -> f64 {
        (0..self.blocks.len())
            .map(|n| {
                let d = self.dim(n);
                n as f64 * (0..d).map(|k| self.blocks[n][k * d + k].re).sum::<f64>()
            })
            .sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for n in 0..self.blocks.len() {
            let d = self.dim(n);
            let b = &self.blocks[n];
            for r in 0..d {
                for c in r..d {
                    worst = worst.max((b[r * d + c] - b[c * d + r].conj()).norm());
                }
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.blocks.len())
            .map(|n| SymmetricEigen::new(self.block(n)).eigenvalues.min())
            .fold(f64::INFINITY, f64::min)
    }

    /// Full `2^M x 2^M` matrix in the bit-string basis.
    pub fn to_dense(&self, basis: &FockBasis) -> DMatrix<Complex64> {
        let dim = 1 << self.n_sites;
        let mut out = DMatrix::from_element(dim, dim, ZERO);
        for n in 0..self.blocks.len() {
            let states = basis.sector(n);
            let d = states.len();
            for (r, &sr) in states.iter().enumerate() {
                for (c, &sc) in states.iter().enumerate() {
                    out[(sr as usize, sc as usize)] = self.blocks[n][r * d + c];
                }
            }
        }
        out
    }

    /// `<s+_i s-_j>` for all pairs (diagonal holds `<n_i>`).
    pub fn coherences(&self, basis: &FockBasis) -> DMatrix<Complex64> {
        coherences_from_blocks(basis, self.blocks.iter().map(|b| b.as_slice()))
    }
}

fn coherences_from_blocks<'a>(
    basis: &FockBasis,
    blocks: impl Iterator<Item = &'a [Complex64]>,
) -> DMatrix<Complex64> {
    let m = basis.n_sites;
    let mut c = DMatrix::from_element(m, m, ZERO);
    for (n, block) in blocks.enumerate() {
        let states = basis.sector(n);
        let d = states.len();
        for (col, &s) in states.iter().enumerate() {
            let diag = block[col * d + col];
            for i in bits(s, m) {
                c[(i, i)] += diag;
            }
            // Tr(rho s+_i s-_j) = sum_s rho[s, s - j + i]
            for j in bits(s, m) {
                for i in holes(s, m) {
                    let other = basis.index_of(s ^ (1 << j) ^ (1 << i));
                    c[(i, j)] += block[col * d + other];
                }
            }
        }
    }
    c
}

/// Sparse `H_eff = H - (i/2) D` restricted to one sector, in CSR form.
#[derive(Debug, Clone)]
struct SectorGenerator {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<Complex64>,
    /// For each state, the states of sector `n + 1` reachable by adding one
    /// exciton: `(site, index)`.
    up_ptr: Vec<usize>,
    up: Vec<(u32, u32)>,
}

/// Sector-resolved Lindbladian for fixed couplings.
#[derive(Debug, Clone)]
pub struct ExactModel {
    basis: FockBasis,
    gamma: DMatrix<f64>,
    sectors: Vec<SectorGenerator>,
    offsets: Vec<usize>,
}

impl ExactModel {
    pub fn new(couplings: &CouplingMatrices) -> Result<Self> {
        let m = couplings.n_active();
        let basis = FockBasis::new(m)?;
        couplings.check_gamma_psd()?;
        let hop = couplings.hopping();
        let g = &couplings.gamma;
        let v = &couplings.v;
        let mut sectors = Vec::with_capacity(m + 1);
        let mut offsets = Vec::with_capacity(m + 2);
        let mut offset = 0;
        for n in 0..=m {
            offsets.push(offset);
            offset += basis.dim(n) * basis.dim(n);
            let states = basis.sector(n);
            let mut row_ptr = vec![0];
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            let mut up_ptr = vec![0];
            let mut up = Vec::new();
            for &s in states {
                let occupied: Vec<usize> = bits(s, m).collect();
                let mut diag = Complex64::new(0.0, 0.0);
                for (k, &i) in occupied.iter().enumerate() {
                    diag.im -= 0.5 * g[(i, i)];
                    for &j in &occupied[k + 1..] {
                        diag.re += v[(i, j)];
                    }
                }
                cols.push(basis.index_of(s) as u32);
                vals.push(diag);
                // row s collects <s| s+_i s-_j |s - i + j> for i in s, j not in s
                for &i in &occupied {
                    for j in holes(s, m) {
                        let k = Complex64::new(hop[(i, j)], -0.5 * g[(i, j)]);
                        if k != ZERO {
                            cols.push(basis.index_of(s ^ (1 << i) ^ (1 << j)) as u32);
                            vals.push(k);
                        }
                    }
                }
                row_ptr.push(cols.len());
                if n < m {
                    for j in holes(s, m) {
                        up.push((j as u32, basis.index_of(s | 1 << j) as u32));
                    }
                }
                up_ptr.push(up.len());
            }
            sectors.push(SectorGenerator {
                row_ptr,
                cols,
                vals,
                up_ptr,
                up,
            });
        }
        offsets.push(offset);
        Ok(Self {
            basis,
            gamma: g.clone(),
            sectors,
            offsets,
        })
    }

    pub fn basis(&self) -> &FockBasis {
        &self.basis
    }

    /// Number of complex entries in the block-diagonal state.
    pub fn state_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Highest sector with a nonzero block; higher sectors stay empty.
    fn top_sector(state: &DensityMatrixState) -> usize {
        state
            .blocks
            .iter()
            .rposition(|b| b.iter().any(|z| *z != ZERO))
            .unwrap_or(0)
    }

    /// Sectors held in a truncated flat state of `len` complex entries.
    fn sectors_in(&self, len: usize) -> usize {
        self.offsets.iter().position(|&o| o == len).expect("state length matches a sector boundary")
    }

    fn flatten(&self, state: &DensityMatrixState) -> Vec<f64> {
        let top = Self::top_sector(state);
        let mut flat = Vec::with_capacity(2 * self.offsets[top + 1]);
        for block in &state.blocks[..=top] {
            for z in block {
                flat.push(z.re);
                flat.push(z.im);
            }
        }
        flat
    }

    fn unflatten(&self, flat: &[f64], time: f64) -> DensityMatrixState {
        let z: &[Complex64] = bytemuck::cast_slice(flat);
        let held = self.sectors_in(z.len());
        let blocks = (0..self.offsets.len() - 1)
            .map(|n| {
                if n < held {
                    z[self.offsets[n]..self.offsets[n + 1]].to_vec()
                } else {
                    vec![ZERO; self.basis.dim(n) * self.basis.dim(n)]
                }
            })
            .collect();
        DensityMatrixState {
            n_sites: self.basis.n_sites,
            blocks,
            time,
        }
    }

    /// `d rho / dt` for a block state. `rho` may hold only sectors
    /// `0..=n_top`; sectors above are taken as empty.
    pub fn lindblad_rhs(&self, rho: &[Complex64], out: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let m = self.sectors_in(rho.len()) - 1;
        for n in 0..=m {
            let d = self.basis.dim(n);
            let r = &rho[self.offsets[n]..self.offsets[n + 1]];
            let o = &mut out[self.offsets[n]..self.offsets[n + 1]];
            let gen = &self.sectors[n];
            scratch.clear();
            scratch.resize(d * d, ZERO);
            // X = H_eff rho
            for a in 0..d {
                let x = &mut scratch[a * d..(a + 1) * d];
                for k in gen.row_ptr[a]..gen.row_ptr[a + 1] {
                    let c = gen.cols[k] as usize;
                    let val = gen.vals[k];
                    for (xi, ri) in x.iter_mut().zip(&r[c * d..(c + 1) * d]) {
                        *xi += val * ri;
                    }
                }
            }
            // -i (H_eff rho - rho H_eff^dag) = -i X + (-i X)^dag
            for a in 0..d {
                for b in 0..d {
                    let xab = scratch[a * d + b];
                    let xba = scratch[b * d + a];
                    o[a * d + b] = Complex64::new(xab.im + xba.im, -xab.re + xba.re);
                }
            }
            // sum_ij gamma_ij s-_j rho_{n+1} s+_i
            if n < m {
                let d1 = self.basis.dim(n + 1);
                let r1 = &rho[self.offsets[n + 1]..self.offsets[n + 2]];
                for a in 0..d {
                    for &(j, a1) in &gen.up[gen.up_ptr[a]..gen.up_ptr[a + 1]] {
                        let row = &r1[a1 as usize * d1..(a1 as usize + 1) * d1];
                        let gj = self.gamma.column(j as usize);
                        for b in 0..d {
                            let mut acc = ZERO;
                            for &(i, b1) in &gen.up[gen.up_ptr[b]..gen.up_ptr[b + 1]] {
                                acc += row[b1 as usize] * gj[i as usize];
                            }
                            o[a * d + b] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// Integration controls for [`evolve_master`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    pub t_max: f64,
    pub dt_out: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Stop once `N_x(t) < stop_fraction * N_x(0)`.
    pub stop_fraction: Option<f64>,
    /// Keep every `k`-th output state for later analysis.
    pub snapshot_stride: Option<usize>,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            dt_out: 0.01,
            rtol: 1e-8,
            atol: 1e-10,
            stop_fraction: Some(1e-3),
            snapshot_stride: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MasterRun {
    pub times: Vec<f64>,
    pub total_excitons: Vec<f64>,
    /// `<s+_i s-_j>` at each output time.
    pub coherences: Vec<DMatrix<Complex64>>,
    pub snapshots: Vec<DensityMatrixState>,
    /// Time-integrated eigenstate populations (unnormalised), when a spectrum
    /// was supplied.
    pub integrated_populations: Option<Vec<Vec<f64>>>,
    pub final_state: DensityMatrixState,
    /// Largest `|Tr rho - 1|` seen at the output times.
    pub trace_drift: f64,
    pub stats: IntegratorStats,
}

/// Integrate the master equation from `rho0`.
///
/// When `spectrum` is given, `p_alpha(t) = <alpha| rho(t) |alpha>` is
/// integrated on the fly with the trapezoid rule.
pub fn evolve_master(
    rho0: &DensityMatrixState,
    couplings: &CouplingMatrices,
    opts: &ExactOptions,
    spectrum: Option<&DecaySpectrum>,
) -> Result<MasterRun> {
    let model = ExactModel::new(couplings)?;
    evolve_with_model(&model, rho0, opts, spectrum)
}

pub fn evolve_with_model(
    model: &ExactModel,
    rho0: &DensityMatrixState,
    opts: &ExactOptions,
    spectrum: Option<&DecaySpectrum>,
) -> Result<MasterRun> {
    if rho0.n_sites != model.basis.n_sites {
        return Err(Error::DimensionMismatch(format!(
            "state has {} sites, couplings {}",
            rho0.n_sites, model.basis.n_sites
        )));
    }
    if let Some(s) = spectrum {
        s.check_sites(model.basis.n_sites)?;
    }
    if !(opts.t_max > 0.0 && opts.dt_out > 0.0) {
        return Err(Error::InvalidParameters("t_max and dt_out must be positive".into()));
    }
    let mut y = model.flatten(rho0);
    let integ = IntegratorOptions {
        rtol: opts.rtol,
        atol: opts.atol,
        ..Default::default()
    };

    let mut times = Vec::new();
    let mut total = Vec::new();
    let mut coherences = Vec::new();
    let mut snapshots = Vec::new();
    let mut populations: Option<Vec<Vec<f64>>> =
        spectrum.map(|s| s.sectors.iter().map(|sec| vec![0.0; sec.rates.len()]).collect());
    let mut last_pop: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut trace_drift = 0.0f64;
    let mut scratch = Vec::new();
    let basis = &model.basis;

    let (t_end, stats) = integrate(
        &mut y,
        opts.t_max,
        opts.dt_out,
        &integ,
        |_, rho, drho| {
            model.lindblad_rhs(bytemuck::cast_slice(rho), bytemuck::cast_slice_mut(drho), &mut scratch)
        },
        |t, flat| {
            let z: &[Complex64] = bytemuck::cast_slice(flat);
            let held = model.sectors_in(z.len());
            let blocks = (0..held).map(|n| &z[model.offsets[n]..model.offsets[n + 1]]);
            let c = coherences_from_blocks(basis, blocks);
            let nx: f64 = (0..basis.n_sites).map(|i| c[(i, i)].re).sum();
            let tr: f64 = (0..held)
                .map(|n| {
                    let d = basis.dim(n);
                    (0..d).map(|k| z[model.offsets[n] + k * d + k].re).sum::<f64>()
                })
                .sum();
            trace_drift = trace_drift.max((tr - 1.0).abs());
            if let (Some(spec), Some(acc)) = (spectrum, populations.as_mut()) {
                let p: Vec<Vec<f64>> = spec
                    .sectors
                    .iter()
                    .map(|sec| {
                        if sec.n_x >= held {
                            return vec![0.0; sec.rates.len()];
                        }
                        let d = basis.dim(sec.n_x);
                        sector_populations(&z[model.offsets[sec.n_x]..model.offsets[sec.n_x] + d * d], sec)
                    })
                    .collect();
                if let Some((t0, p0)) = &last_pop {
                    let dt = t - t0;
                    for ((acc_s, p_s), p0_s) in acc.iter_mut().zip(&p).zip(p0) {
                        for ((a, x), x0) in acc_s.iter_mut().zip(p_s).zip(p0_s) {
                            *a += 0.5 * dt * (x + x0);
                        }
                    }
                }
                last_pop = Some((t, p));
            }
            if let Some(stride) = opts.snapshot_stride {
                if times.len() % stride.max(1) == 0 {
                    snapshots.push(model.unflatten(flat, t));
                }
            }
            times.push(t);
            total.push(nx);
            coherences.push(c);
            let stop = opts
                .stop_fraction
                .is_some_and(|f| nx < f * total[0]);
            Ok(if stop { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
        },
    )?;

    Ok(MasterRun {
        times,
        total_excitons: total,
        coherences,
        snapshots,
        integrated_populations: populations,
        final_state: model.unflatten(&y, t_end),
        trace_drift,
        stats,
    })
}

/// Collective decay eigenmodes of one excitation sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSpectrum {
    pub n_x: usize,
    /// Eigenvalues of `D = sum_ij gamma_ij s+_i s-_j`, ascending.
    pub rates: Vec<f64>,
    /// Orthonormal eigenvectors as columns, in the sector basis.
    pub vectors: DMatrix<f64>,
    /// Normalised time-integrated populations, once computed.
    pub populations: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaySpectrum {
    pub n_sites: usize,
    pub sectors: Vec<SectorSpectrum>,
}

/// Matrix of `D` inside the `n_x` sector.
pub fn decay_operator(couplings: &CouplingMatrices, basis: &FockBasis, n_x: usize) -> Result<DMatrix<f64>> {
    let m = basis.n_sites;
    if n_x > m {
        return Err(Error::SectorOutOfRange { sector: n_x, sites: m });
    }
    let g = &couplings.gamma;
    let states = basis.sector(n_x);
    let d = states.len();
    let mut op = DMatrix::zeros(d, d);
    for (col, &s) in states.iter().enumerate() {
        op[(col, col)] = bits(s, m).map(|i| g[(i, i)]).sum();
        for j in bits(s, m) {
            for i in holes(s, m) {
                op[(basis.index_of(s ^ (1 << j) ^ (1 << i)), col)] += g[(i, j)];
            }
        }
    }
    Ok(op)
}

/// Diagonalise the collective decay operator in one sector.
pub fn decay_spectrum(couplings: &CouplingMatrices, n_x: usize) -> Result<SectorSpectrum> {
    let basis = FockBasis::new(couplings.n_active())?;
    sector_spectrum(couplings, &basis, n_x)
}

fn sector_spectrum(couplings: &CouplingMatrices, basis: &FockBasis, n_x: usize) -> Result<SectorSpectrum> {
    let op = decay_operator(couplings, basis, n_x)?;
    let eig = SymmetricEigen::new(op);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // D is PSD (checked on Gamma); negative values are roundoff
    let rates = order.iter().map(|&k| if eig.eigenvalues[k] <= 0.0 { 0.0 } else { eig.eigenvalues[k] }).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SectorSpectrum {
        n_x,
        rates,
        vectors,
        populations: None,
    })
}

/// All sectors `0..=M`.
pub fn full_decay_spectrum(couplings: &CouplingMatrices) -> Result<DecaySpectrum> {
    let basis = FockBasis::new(couplings.n_active())?;
    let sectors = (0..=basis.n_sites)
        .map(|n| sector_spectrum(couplings, &basis, n))
        .collect::<Result<_>>()?;
    Ok(DecaySpectrum {
        n_sites: basis.n_sites,
        sectors,
    })
}

/// `<alpha| rho_n |alpha>` for every eigenvector of the sector.
fn sector_populations(block: &[Complex64], sector: &SectorSpectrum) -> Vec<f64> {
    let d = sector.vectors.nrows();
    (0..sector.vectors.ncols())
        .map(|alpha| {
            let v = sector.vectors.column(alpha);
            let mut acc = 0.0;
            for a in 0..d {
                let mut row = 0.0;
                for b in 0..d {
                    row += block[a * d + b].re * v[b];
                }
                acc += v[a] * row;
            }
            acc
        })
        .collect()
}

impl DecaySpectrum {
    fn check_sites(&self, n_sites: usize) -> Result<()> {
        if self.n_sites != n_sites || self.sectors.iter().any(|s| s.vectors.nrows() != binomial(n_sites, s.n_x)) {
            return Err(Error::DimensionMismatch(format!(
                "spectrum built for {} sites, trajectory has {n_sites}",
                self.n_sites
            )));
        }
        Ok(())
    }

    /// Instantaneous eigenstate populations of a state.
    pub fn populations_of(&self, state: &DensityMatrixState) -> Result<Vec<Vec<f64>>> {
        self.check_sites(state.n_sites)?;
        Ok(self
            .sectors
            .iter()
            .map(|sec| sector_populations(&state.blocks[sec.n_x], sec))
            .collect())
    }

    /// Population-weighted mean rate over the excited sectors,
    /// `sum_alpha p_alpha Gamma_alpha / sum_{alpha, n >= 1} p_alpha`.
    pub fn mean_rate(&self, state: &DensityMatrixState) -> Result<f64> {
        let pops = self.populations_of(state)?;
        let mut num = 0.0;
        let mut den = 0.0;
        for (sec, p) in self.sectors.iter().zip(&pops) {
            if sec.n_x == 0 {
                continue;
            }
            for (rate, x) in sec.rates.iter().zip(p) {
                num += rate * x;
                den += x;
            }
        }
        Ok(num / den)
    }

    /// Fill in normalised populations from raw time integrals; the vacuum
    /// sector is excluded from the normalisation and reported as zero.
    pub fn with_integrated_populations(mut self, integrated: &[Vec<f64>]) -> Result<Self> {
        if integrated.len() != self.sectors.len()
            || integrated.iter().zip(&self.sectors).any(|(p, s)| p.len() != s.rates.len())
        {
            return Err(Error::DimensionMismatch("population / spectrum shapes differ".into()));
        }
        let norm: f64 = self
            .sectors
            .iter()
            .zip(integrated)
            .filter(|(s, _)| s.n_x > 0)
            .flat_map(|(_, p)| p.iter())
            .sum();
        for (sec, p) in self.sectors.iter_mut().zip(integrated) {
            sec.populations = Some(if sec.n_x == 0 {
                vec![0.0; p.len()]
            } else {
                p.iter().map(|x| x / norm).collect()
            });
        }
        Ok(self)
    }

    /// CSV rows `sector,alpha,rate,P_alpha`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "sector,alpha,rate,P_alpha")?;
        for sec in &self.sectors {
            for (alpha, rate) in sec.rates.iter().enumerate() {
                let p = sec.populations.as_ref().map_or(0.0, |p| p[alpha]);
                writeln!(out, "{},{alpha},{rate:.12e},{p:.12e}", sec.n_x)?;
            }
        }
        Ok(())
    }
}

/// Time-integrated populations from stored snapshots (trapezoid rule).
pub fn eigenstate_populations(snapshots: &[DensityMatrixState], spectrum: &DecaySpectrum) -> Result<DecaySpectrum> {
    if snapshots.is_empty() {
        return Err(Error::Empty("trajectory snapshots"));
    }
    let series = snapshots
        .iter()
        .map(|s| spectrum.populations_of(s))
        .collect::<Result<Vec<_>>>()?;
    let mut acc: Vec<Vec<f64>> = spectrum.sectors.iter().map(|s| vec![0.0; s.rates.len()]).collect();
    for w in 0..snapshots.len().saturating_sub(1) {
        let dt = snapshots[w + 1].time - snapshots[w].time;
        for (s, acc_s) in acc.iter_mut().enumerate() {
            for (alpha, a) in acc_s.iter_mut().enumerate() {
                *a += 0.5 * dt * (series[w][s][alpha] + series[w + 1][s][alpha]);
            }
        }
    }
    spectrum.clone().with_integrated_populations(&acc)
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k.min(n - k)).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}
