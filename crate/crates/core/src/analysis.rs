//! Emission-rate traces and the derived figures of merit.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::couplings::ModelParameters;
use crate::error::{Error, Result};
use crate::lattice::LatticeConfiguration;

/// Traces are cut once `N_x(t)` drops below this fraction of `N_x(0)`.
pub const TRUNCATION_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Cumulant { order: u8 },
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverKind::Exact => write!(f, "exact"),
            SolverKind::Cumulant { order } => write!(f, "cumulant order={order}"),
        }
    }
}

/// What a trace was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub n_rows: usize,
    pub n_cols: usize,
    pub a_over_lambda: f64,
    /// Initial exciton occupancy over all sites; `None` for ensemble means.
    pub occupancy: Option<Vec<bool>>,
    pub blocked: Vec<bool>,
    pub params: ModelParameters,
    pub solver: SolverKind,
    pub seeds: Vec<u64>,
}

impl TraceMetadata {
    pub fn new(lattice: &LatticeConfiguration, params: &ModelParameters, solver: SolverKind) -> Self {
        Self {
            n_rows: lattice.n_rows,
            n_cols: lattice.n_cols,
            a_over_lambda: lattice.a_over_lambda,
            occupancy: Some(lattice.occupancy.clone()),
            blocked: lattice.blocked.clone(),
            params: *params,
            solver,
            seeds: lattice.seed.into_iter().collect(),
        }
    }

    fn same_geometry(&self, other: &Self) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.a_over_lambda == other.a_over_lambda
            && self.solver == other.solver
            && self.params.gamma == other.params.gamma
            && self.params.tunneling_t == other.params.tunneling_t
    }

    fn n_occupied(&self) -> Option<usize> {
        self.occupancy.as_ref().map(|o| o.iter().filter(|&&x| x).count())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionTrace {
    pub times: Vec<f64>,
    /// `N_x(t) = sum_i <n_i>`.
    pub total_excitons: Vec<f64>,
    /// `sum_ij gamma_ij <s+_i s-_j>`.
    pub coherence_sum: Vec<f64>,
    /// `Gamma(t) = coherence_sum / N_x`.
    pub gamma_rate: Vec<f64>,
    pub metadata: TraceMetadata,
}

/// `Gamma(t)` from the coherence form; stops before `N_x` falls below the
/// truncation threshold.
pub fn emission_rate(total_excitons: &[f64], coherence_sum: &[f64]) -> Result<Vec<f64>> {
    if total_excitons.len() != coherence_sum.len() {
        return Err(Error::DimensionMismatch("N_x and coherence series differ in length".into()));
    }
    let n0 = *total_excitons.first().ok_or(Error::Empty("emission trace"))?;
    if n0.is_nan() || n0 <= 0.0 {
        return Err(Error::InvalidParameters("no initial excitons".into()));
    }
    Ok(total_excitons
        .iter()
        .zip(coherence_sum)
        .take_while(|(&n, _)| n >= TRUNCATION_FRACTION * n0)
        .map(|(n, s)| s / n)
        .collect())
}

impl EmissionTrace {
    /// Build from raw moments; `coherences[k]` is `<s+_i s-_j>` over the
    /// active sites at `times[k]`.
    pub fn from_moments(
        times: &[f64],
        total_excitons: &[f64],
        coherences: &[DMatrix<Complex64>],
        gamma: &DMatrix<f64>,
        metadata: TraceMetadata,
    ) -> Result<Self> {
        if times.len() != total_excitons.len() || times.len() != coherences.len() {
            return Err(Error::DimensionMismatch("trace series lengths differ".into()));
        }
        let sums: Vec<f64> = coherences
            .iter()
            .map(|c| {
                if c.shape() != gamma.shape() {
                    return Err(Error::DimensionMismatch("coherence and Gamma shapes differ".into()));
                }
                Ok(c.iter().zip(gamma.iter()).map(|(z, g)| g * z.re).sum())
            })
            .collect::<Result<_>>()?;
        Self::from_sums(times, total_excitons, &sums, metadata)
    }

    pub fn from_sums(times: &[f64], total_excitons: &[f64], coherence_sum: &[f64], metadata: TraceMetadata) -> Result<Self> {
        if times.len() != total_excitons.len() {
            return Err(Error::DimensionMismatch("trace series lengths differ".into()));
        }
        let gamma_rate = emission_rate(total_excitons, coherence_sum)?;
        let n = gamma_rate.len();
        Ok(Self {
            times: times[..n].to_vec(),
            total_excitons: total_excitons[..n].to_vec(),
            coherence_sum: coherence_sum[..n].to_vec(),
            gamma_rate,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn gamma_max(&self) -> (f64, f64) {
        gamma_max(self)
    }

    /// CSV with a solver comment line and columns `time,Nx,Gamma`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# solver: {}", self.metadata.solver)?;
        writeln!(out, "time,Nx,Gamma")?;
        for ((t, n), g) in self.times.iter().zip(&self.total_excitons).zip(&self.gamma_rate) {
            writeln!(out, "{t:.6},{n:.12e},{g:.12e}")?;
        }
        Ok(())
    }
}

/// Global maximum of `Gamma(t)` and its time. Ties go to the earliest
/// sample; an interior maximum is refined with a parabola through its
/// neighbours.
pub fn gamma_max(trace: &EmissionTrace) -> (f64, f64) {
    peak(&trace.times, &trace.gamma_rate)
}

fn peak(times: &[f64], values: &[f64]) -> (f64, f64) {
    let Some((k, &best)) = values
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, &f64)>, (i, v)| match acc {
            Some((_, b)) if v <= b => acc,
            _ => Some((i, v)),
        })
    else {
        return (f64::NAN, f64::NAN);
    };
    if k == 0 || k + 1 >= values.len() {
        return (best, times[k]);
    }
    let (t0, t1, t2) = (times[k - 1], times[k], times[k + 1]);
    let (y0, y1, y2) = (values[k - 1], best, values[k + 1]);
    let h = t1 - t0;
    if ((t2 - t1) - h).abs() > 1e-9 * h {
        return (best, t1);
    }
    let curv = y0 - 2.0 * y1 + y2;
    if curv >= 0.0 {
        return (best, t1);
    }
    let shift = 0.5 * (y0 - y2) / curv;
    let value = y1 - 0.25 * (y0 - y2) * shift;
    (value.max(best), t1 + shift * h)
}

/// `Gamma_max(eps_dd) / Gamma_max(0)` for two otherwise identical runs.
pub fn eta(with_interactions: &EmissionTrace, without: &EmissionTrace) -> Result<f64> {
    let (a, b) = (&with_interactions.metadata, &without.metadata);
    if !a.same_geometry(b) || a.occupancy != b.occupancy || a.blocked != b.blocked || a.seeds != b.seeds {
        return Err(Error::MismatchedRuns("runs differ in more than eps_dd".into()));
    }
    if b.params.eps_dd != 0.0 {
        return Err(Error::MismatchedRuns(format!(
            "reference run has eps_dd = {}, expected 0",
            b.params.eps_dd
        )));
    }
    Ok(gamma_max(with_interactions).0 / gamma_max(without).0)
}

/// `Gamma_max(f_e = 1 - f_x) / Gamma_max(f_e = 0)` for the same exciton
/// pattern.
pub fn chi(doped: &EmissionTrace, undoped: &EmissionTrace) -> Result<f64> {
    let (a, b) = (&doped.metadata, &undoped.metadata);
    if !a.same_geometry(b) || a.params.eps_dd != b.params.eps_dd || a.seeds != b.seeds {
        return Err(Error::MismatchedRuns("doped and undoped runs differ in model or solver".into()));
    }
    if a.occupancy != b.occupancy {
        return Err(Error::MismatchedRuns("exciton configurations differ".into()));
    }
    if b.blocked.iter().any(|&x| x) {
        return Err(Error::MismatchedRuns("reference run is doped".into()));
    }
    let n_sites = a.blocked.len();
    let n_blocked = a.blocked.iter().filter(|&&x| x).count();
    match a.n_occupied() {
        Some(n_x) if n_x + n_blocked == n_sites => {}
        _ => {
            return Err(Error::MismatchedRuns(
                "doped run does not have f_e = 1 - f_x".into(),
            ))
        }
    }
    Ok(gamma_max(doped).0 / gamma_max(undoped).0)
}

/// Ensemble mean over disorder realisations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedTrace {
    pub mean: EmissionTrace,
    pub gamma_std_error: Vec<f64>,
    pub nx_std_error: Vec<f64>,
    /// Per-realisation `Gamma_max`, for diagnostics.
    pub run_gamma_max: Vec<f64>,
    pub n_realizations: usize,
}

impl AveragedTrace {
    /// Maximum of the averaged trace.
    pub fn gamma_max(&self) -> (f64, f64) {
        gamma_max(&self.mean)
    }
}

/// Pointwise mean of `Gamma(t)` and `N_x(t)`. Individual traces may have
/// been truncated at different times; the mean covers their common prefix.
pub fn disorder_average(runs: &[EmissionTrace]) -> Result<AveragedTrace> {
    if runs.len() < 2 {
        return Err(Error::MismatchedRuns(format!("need at least 2 runs, got {}", runs.len())));
    }
    let first = &runs[0];
    let len = runs.iter().map(EmissionTrace::len).min().unwrap();
    if len == 0 {
        return Err(Error::Empty("emission trace"));
    }
    for r in &runs[1..] {
        let m = &r.metadata;
        if !m.same_geometry(&first.metadata) || m.params.eps_dd != first.metadata.params.eps_dd {
            return Err(Error::MismatchedRuns("realisations use different parameters".into()));
        }
        if r.times[..len]
            .iter()
            .zip(&first.times[..len])
            .any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
        {
            return Err(Error::InconsistentGrids("time grids differ".into()));
        }
    }
    let n = runs.len() as f64;
    let stats = |f: &dyn Fn(&EmissionTrace) -> &[f64]| -> (Vec<f64>, Vec<f64>) {
        (0..len)
            .map(|k| {
                let mean = runs.iter().map(|r| f(r)[k]).sum::<f64>() / n;
                let var = runs.iter().map(|r| (f(r)[k] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (mean, (var / n).sqrt())
            })
            .unzip()
    };
    let (gamma_mean, gamma_se) = stats(&|r| &r.gamma_rate);
    let (nx_mean, nx_se) = stats(&|r| &r.total_excitons);
    let (cs_mean, _) = stats(&|r| &r.coherence_sum);

    let mut seeds: Vec<u64> = runs.iter().flat_map(|r| r.metadata.seeds.iter().copied()).collect();
    seeds.sort_unstable();
    let mut blocked = first.metadata.blocked.clone();
    if runs.iter().any(|r| r.metadata.blocked != blocked) {
        blocked.iter_mut().for_each(|b| *b = false);
    }
    let metadata = TraceMetadata {
        occupancy: None,
        blocked,
        seeds,
        ..first.metadata.clone()
    };
    Ok(AveragedTrace {
        mean: EmissionTrace {
            times: first.times[..len].to_vec(),
            total_excitons: nx_mean,
            coherence_sum: cs_mean,
            gamma_rate: gamma_mean,
            metadata,
        },
        gamma_std_error: gamma_se,
        nx_std_error: nx_se,
        run_gamma_max: runs.iter().map(|r| gamma_max(r).0).collect(),
        n_realizations: runs.len(),
    })
}

/// Least-squares fit of `value = inf + alpha / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub inf: f64,
    pub alpha: f64,
    /// Euclidean norm of the residual vector.
    pub residual: f64,
    /// Standard errors from the residual variance (needs 3+ points).
    pub inf_std_error: Option<f64>,
    pub alpha_std_error: Option<f64>,
}

pub fn finite_size_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.iter().any(|&(n, v)| n.is_nan() || n <= 0.0 || !v.is_finite()) {
        return Err(Error::DegenerateFit("sizes must be positive and values finite".into()));
    }
    let mut sizes: Vec<f64> = points.iter().map(|p| p.0).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if sizes.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least 2 distinct sizes, got {}",
            sizes.len()
        )));
    }
    let n = points.len() as f64;
    let x_mean = points.iter().map(|p| 1.0 / p.0).sum::<f64>() / n;
    let y_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (1.0 / p.0 - x_mean).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (1.0 / p.0 - x_mean) * (p.1 - y_mean)).sum();
    let alpha = sxy / sxx;
    let inf = y_mean - alpha * x_mean;
    let rss: f64 = points.iter().map(|p| (p.1 - inf - alpha / p.0).powi(2)).sum();
    let (inf_se, alpha_se) = if points.len() > 2 {
        let s2 = rss / (n - 2.0);
        let sumx2: f64 = points.iter().map(|p| p.0.powi(-2)).sum();
        (Some((s2 * sumx2 / (n * sxx)).sqrt()), Some((s2 / sxx).sqrt()))
    } else {
        (None, None)
    };
    Ok(FitResult {
        inf,
        alpha,
        residual: rss.sqrt(),
        inf_std_error: inf_se,
        alpha_std_error: alpha_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(eps: f64) -> TraceMetadata {
        TraceMetadata {
            n_rows: 1,
            n_cols: 2,
            a_over_lambda: 0.05,
            occupancy: Some(vec![true, true]),
            blocked: vec![false, false],
            params: ModelParameters::with_eps_dd(eps),
            solver: SolverKind::Exact,
            seeds: vec![],
        }
    }

    fn synthetic(rates: &[f64], eps: f64) -> EmissionTrace {
        let times: Vec<f64> = (0..rates.len()).map(|k| k as f64 * 0.1).collect();
        let nx = vec![1.0; rates.len()];
        EmissionTrace::from_sums(&times, &nx, rates, meta(eps)).unwrap()
    }

    #[test]
    fn truncation_stops_before_small_nx() {
        let nx = [2.0, 1.0, 0.01, 0.001, 0.0];
        let cs = [2.0, 1.0, 0.01, 0.001, 0.0];
        assert_eq!(emission_rate(&nx, &cs).unwrap(), vec![1.0, 1.0, 1.0]);
        assert!(emission_rate(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn constant_trace_peaks_at_start() {
        assert_eq!(gamma_max(&synthetic(&[1.0; 5], 0.0)), (1.0, 0.0));
        assert_eq!(gamma_max(&synthetic(&[3.0, 2.0, 1.0], 0.0)), (3.0, 0.0));
    }

    #[test]
    fn parabola_refines_interior_peak() {
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let rates: Vec<f64> = times.iter().map(|t| 2.0 - (t - 0.83f64).powi(2)).collect();
        let tr = EmissionTrace::from_sums(&times, &[1.0; 20], &rates, meta(0.0)).unwrap();
        let (g, t) = gamma_max(&tr);
        assert!((g - 2.0).abs() < 1e-12 && (t - 0.83).abs() < 1e-12);
    }

    #[test]
    fn eta_of_identical_runs_is_one() {
        let tr = synthetic(&[1.0, 1.5, 1.2], 0.0);
        assert_eq!(eta(&tr, &tr).unwrap(), 1.0);
        let strong = synthetic(&[1.0, 1.2, 1.1], 5.0);
        assert!(eta(&strong, &tr).unwrap() < 1.0);
        assert!(eta(&tr, &strong).is_err());
        let mut other = tr.clone();
        other.metadata.n_cols = 3;
        assert!(eta(&other, &tr).is_err());
    }

    #[test]
    fn chi_checks_doping_and_pattern() {
        let tr = synthetic(&[1.0, 1.5], 0.0);
        // f_x = 1: the doped run is the undoped run
        assert_eq!(chi(&tr, &tr).unwrap(), 1.0);
        let mut partial = tr.clone();
        partial.metadata.occupancy = Some(vec![true, false]);
        assert!(chi(&partial, &partial).is_err());
        let mut doped = partial.clone();
        doped.metadata.blocked = vec![false, true];
        assert!(chi(&doped, &partial).is_ok());
        assert!(chi(&doped, &tr).is_err());
    }

    #[test]
    fn average_of_synthetic_traces() {
        let a = synthetic(&[1.0; 4], 0.0);
        let b = synthetic(&[3.0; 4], 0.0);
        let avg = disorder_average(&[a.clone(), b]).unwrap();
        assert!(avg.mean.gamma_rate.iter().all(|&g| (g - 2.0).abs() < 1e-12));
        let same = disorder_average(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.mean.gamma_rate, a.gamma_rate);
        assert!(same.gamma_std_error.iter().all(|&s| s == 0.0));
        assert!(disorder_average(&[a]).is_err());
    }

    #[test]
    fn average_rejects_shifted_grid() {
        let a = synthetic(&[1.0; 4], 0.0);
        let mut b = a.clone();
        b.times[2] += 0.05;
        assert!(matches!(disorder_average(&[a, b]), Err(Error::InconsistentGrids(_))));
    }

    #[test]
    fn exact_linear_fit() {
        let fit = finite_size_fit(&[(4.0, 1.0), (8.0, 0.75), (16.0, 0.625)]).unwrap();
        assert!((fit.inf - 0.5).abs() < 1e-12 && (fit.alpha - 2.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        let flat = finite_size_fit(&[(9.0, 0.7), (16.0, 0.7), (25.0, 0.7)]).unwrap();
        assert!((flat.inf - 0.7).abs() < 1e-12 && flat.alpha.abs() < 1e-12);
        assert!(finite_size_fit(&[(9.0, 1.0), (9.0, 2.0)]).is_err());
    }
}
