//! Sweep execution: expand the config into runs, evaluate them on a worker
//! pool and reduce the traces to peak rates, eta, chi and size fits.

use std::sync::atomic::{AtomicUsize, Ordering};

use moire_radiance::analysis::{chi, disorder_average, eta, finite_size_fit, gamma_max};
use moire_radiance::cumulant::{evolve_cumulant, init_from_fock, CumulantOptions};
use moire_radiance::exact::{evolve_with_model, full_decay_spectrum, DecaySpectrum, DensityMatrixState, ExactModel, ExactOptions};
use moire_radiance::{
    CouplingMatrices, EmissionTrace, FitResult, LatticeConfiguration, ModelParameters, SolverKind, TraceMetadata,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DopingLevel, ExperimentConfig, Initial, SolverChoice};

/// One parameter point of the sweep (all realisations share it).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point {
    pub n_rows: usize,
    pub n_cols: usize,
    pub initial: Initial,
    pub doping: DopingLevel,
    pub eps_dd: f64,
}

impl Point {
    pub fn id(&self) -> String {
        format!(
            "{}x{}_{}_{}_eps{}",
            self.n_rows,
            self.n_cols,
            self.initial.label(),
            self.doping.label(),
            self.eps_dd
        )
    }

    fn n_sites(&self) -> usize {
        self.n_rows * self.n_cols
    }
}

/// Result of a single trajectory.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub point: usize,
    pub seed: Option<u64>,
    pub lattice: Option<LatticeConfiguration>,
    pub outcome: Result<(EmissionTrace, Option<DecaySpectrum>), String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeSummary {
    pub n_rows: usize,
    pub n_cols: usize,
    pub a_over_lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub id: String,
    pub lattice: LatticeSummary,
    pub initial: Initial,
    pub doping: DopingLevel,
    /// Realised fillings (means over realisations).
    pub f_x: f64,
    pub f_e: f64,
    pub n_active: usize,
    pub params: ModelParameters,
    pub solver: SolverKind,
    pub seeds: Vec<u64>,
    pub n_realizations: usize,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
    #[serde(rename = "Gamma_max")]
    pub gamma_max: Option<f64>,
    pub t_peak: Option<f64>,
    /// Per-realisation maxima, for diagnostics.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub run_gamma_max: Vec<f64>,
    pub eta: Option<f64>,
    pub chi: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub quantity: &'static str,
    pub initial: Initial,
    pub doping: DopingLevel,
    pub eps_dd: f64,
    /// `(N, value)` pairs.
    pub points: Vec<(usize, f64)>,
    pub fit: FitResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub input_hash: String,
    pub points: Vec<PointSummary>,
    pub fits: Vec<FitSummary>,
    pub failures: usize,
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub points: Vec<Point>,
    pub runs: Vec<RunResult>,
    /// Ensemble mean per point (random initial states with 2+ realisations).
    pub means: Vec<Option<EmissionTrace>>,
    pub summary: Summary,
}

pub fn expand_points(config: &ExperimentConfig) -> Vec<Point> {
    let mut points = Vec::new();
    for (n_rows, n_cols) in config.sizes() {
        for initial in config.initials() {
            for doping in config.dopings() {
                for eps_dd in config.eps_values() {
                    points.push(Point {
                        n_rows,
                        n_cols,
                        initial,
                        doping,
                        eps_dd,
                    });
                }
            }
        }
    }
    points
}

fn solver_kind(config: &ExperimentConfig) -> SolverKind {
    match config.solver.kind {
        SolverChoice::Exact => SolverKind::Exact,
        SolverChoice::Cumulant => SolverKind::Cumulant {
            order: config.solver_order(),
        },
    }
}

/// Integrate one trajectory.
pub fn simulate(
    config: &ExperimentConfig,
    lattice: &LatticeConfiguration,
    params: &ModelParameters,
) -> moire_radiance::Result<(EmissionTrace, Option<DecaySpectrum>)> {
    let couplings = CouplingMatrices::build(lattice, params)?;
    let s = &config.solver;
    let kind = solver_kind(config);
    let meta = TraceMetadata::new(lattice, params, kind);
    match kind {
        SolverKind::Exact => {
            let model = ExactModel::new(&couplings)?;
            let rho0 = DensityMatrixState::fock(model.basis(), &lattice.active_occupancy())?;
            let spectrum = if config.output.spectra {
                Some(full_decay_spectrum(&couplings)?)
            } else {
                None
            };
            let opts = ExactOptions {
                t_max: s.t_max,
                dt_out: s.dt_out,
                rtol: s.rtol,
                atol: s.atol(),
                ..Default::default()
            };
            let run = evolve_with_model(&model, &rho0, &opts, spectrum.as_ref())?;
            let trace = EmissionTrace::from_moments(&run.times, &run.total_excitons, &run.coherences, &couplings.gamma, meta)?;
            let spectrum = match (spectrum, &run.integrated_populations) {
                (Some(sp), Some(p)) => Some(sp.with_integrated_populations(p)?),
                _ => None,
            };
            Ok((trace, spectrum))
        }
        SolverKind::Cumulant { order } => {
            let state = init_from_fock(lattice, order)?;
            let opts = CumulantOptions {
                t_max: s.t_max,
                dt_out: s.dt_out,
                rtol: s.rtol,
                atol: s.atol(),
                ..Default::default()
            };
            let run = evolve_cumulant(&state, &couplings, &opts)?;
            let trace = EmissionTrace::from_moments(&run.times, &run.total_excitons, &run.coherences, &couplings.gamma, meta)?;
            Ok((trace, None))
        }
    }
}

/// Seed of realisation `k`; shared by all points so that eta and chi compare
/// identical initial states.
pub fn realization_seed(base: u64, k: usize) -> u64 {
    base.wrapping_add(k as u64)
}

/// Run the whole sweep. `progress` receives one line per finished run.
pub fn execute(config: &ExperimentConfig, input_hash: &str, progress: impl Fn(&str) + Sync) -> Experiment {
    let points = expand_points(config);
    let jobs: Vec<(usize, Option<u64>)> = points
        .iter()
        .enumerate()
        .flat_map(|(p, point)| {
            let n = config.n_realizations(&point.initial);
            let random = matches!(point.initial, Initial::Random { .. });
            (0..n).map(move |k| (p, random.then(|| realization_seed(config.seeds.base_seed, k))))
        })
        .collect();
    let done = AtomicUsize::new(0);
    let total = jobs.len();
    let runs: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let point = &points[p];
            let lattice = config.configuration(
                point.n_rows,
                point.n_cols,
                &point.initial,
                &point.doping,
                seed.unwrap_or(config.seeds.base_seed),
            );
            let (lattice, outcome) = match lattice {
                Ok(lat) => {
                    let out = simulate(config, &lat, &config.model_params(point.eps_dd)).map_err(|e| e.to_string());
                    (Some(lat), out)
                }
                Err(e) => (None, Err(e.to_string())),
            };
            let k = done.fetch_add(1, Ordering::Relaxed) + 1;
            let label = match seed {
                Some(s) => format!("{} seed {s}", point.id()),
                None => point.id(),
            };
            match &outcome {
                Ok((trace, _)) => progress(&format!("[{k}/{total}] {label}: Gamma_max = {:.6}", gamma_max(trace).0)),
                Err(e) => progress(&format!("[{k}/{total}] {label}: {e}")),
            }
            RunResult {
                point: p,
                seed,
                lattice,
                outcome,
            }
        })
        .collect();
    reduce(config, input_hash, points, runs)
}

fn reduce(config: &ExperimentConfig, input_hash: &str, points: Vec<Point>, runs: Vec<RunResult>) -> Experiment {
    let kind = solver_kind(config);
    let mut means = Vec::with_capacity(points.len());
    // representative trace per point for eta / chi
    let mut reps: Vec<Option<EmissionTrace>> = Vec::with_capacity(points.len());
    let mut summaries = Vec::with_capacity(points.len());
    for (p, point) in points.iter().enumerate() {
        let mine: Vec<&RunResult> = runs.iter().filter(|r| r.point == p).collect();
        let mut errors: Vec<String> = mine.iter().filter_map(|r| r.outcome.as_ref().err().cloned()).collect();
        let traces: Vec<EmissionTrace> = mine.iter().filter_map(|r| r.outcome.as_ref().ok().map(|o| o.0.clone())).collect();
        let lattices: Vec<&LatticeConfiguration> = mine.iter().filter_map(|r| r.lattice.as_ref()).collect();
        let n_sites = point.n_sites() as f64;
        let mean_of = |f: &dyn Fn(&LatticeConfiguration) -> usize| {
            lattices.iter().map(|l| f(l) as f64).sum::<f64>() / (lattices.len().max(1) as f64 * n_sites)
        };
        let (rep, mean, run_gamma_max) = if !errors.is_empty() {
            (None, None, Vec::new())
        } else if traces.len() == 1 {
            (traces.into_iter().next(), None, Vec::new())
        } else {
            match disorder_average(&traces) {
                Ok(avg) => (Some(avg.mean.clone()), Some(avg.mean), avg.run_gamma_max),
                Err(e) => {
                    errors.push(e.to_string());
                    (None, None, Vec::new())
                }
            }
        };
        let peak = rep.as_ref().map(gamma_max);
        summaries.push(PointSummary {
            id: point.id(),
            lattice: LatticeSummary {
                n_rows: point.n_rows,
                n_cols: point.n_cols,
                a_over_lambda: config.lattice.a_over_lambda,
            },
            initial: point.initial,
            doping: point.doping,
            f_x: mean_of(&|l| l.n_occupied()),
            f_e: mean_of(&|l| l.n_blocked()),
            n_active: lattices.first().map_or(0, |l| l.n_active()),
            params: config.model_params(point.eps_dd),
            solver: kind,
            seeds: mine.iter().filter_map(|r| r.seed).collect(),
            n_realizations: mine.len(),
            status: if errors.is_empty() { "ok" } else { "failed" },
            errors,
            gamma_max: peak.map(|p| p.0),
            t_peak: peak.map(|p| p.1),
            run_gamma_max,
            eta: None,
            chi: None,
        });
        reps.push(rep);
        means.push(mean);
    }

    let find = |pred: &dyn Fn(&Point) -> bool| points.iter().position(pred);
    for (p, point) in points.iter().enumerate() {
        let Some(trace) = &reps[p] else { continue };
        let reference = find(&|q: &Point| {
            q.eps_dd == 0.0 && q.n_rows == point.n_rows && q.n_cols == point.n_cols && q.initial == point.initial && q.doping == point.doping
        });
        if let Some(Some(base)) = reference.map(|q| &reps[q]) {
            summaries[p].eta = eta(trace, base).ok();
        }
        if !point.doping.is_undoped() {
            let undoped = find(&|q: &Point| {
                q.doping.is_undoped() && q.eps_dd == point.eps_dd && q.n_rows == point.n_rows && q.n_cols == point.n_cols && q.initial == point.initial
            });
            if let Some(Some(base)) = undoped.map(|q| &reps[q]) {
                summaries[p].chi = chi(trace, base).ok();
            }
        } else if matches!(point.initial, Initial::Ordered { pattern } if pattern == moire_radiance::Pattern::Full) {
            // nothing to dope: the system is its own maximally doped twin
            summaries[p].chi = Some(1.0);
        }
    }

    let fits = size_fits(config, &points, &summaries);
    let failures = summaries.iter().filter(|s| s.status != "ok").count();
    Experiment {
        points,
        runs,
        means,
        summary: Summary {
            experiment: config.name.clone(),
            input_hash: input_hash.to_string(),
            points: summaries,
            fits,
            failures,
        },
    }
}

/// `value = inf + alpha / N` fits of eta and chi across lattice sizes.
fn size_fits(config: &ExperimentConfig, points: &[Point], summaries: &[PointSummary]) -> Vec<FitSummary> {
    let mut fits = Vec::new();
    if config.sizes().len() < 2 {
        return fits;
    }
    for initial in config.initials() {
        for doping in config.dopings() {
            for eps_dd in config.eps_values() {
                for (quantity, get) in [
                    ("eta", (|s: &PointSummary| s.eta) as fn(&PointSummary) -> Option<f64>),
                    ("chi", |s: &PointSummary| s.chi),
                ] {
                    if quantity == "eta" && eps_dd == 0.0 {
                        continue;
                    }
                    let data: Vec<(usize, f64)> = points
                        .iter()
                        .zip(summaries)
                        .filter(|(p, _)| p.initial == initial && p.doping == doping && p.eps_dd == eps_dd)
                        .filter_map(|(p, s)| get(s).map(|v| (p.n_sites(), v)))
                        .collect();
                    if quantity == "chi" && doping.is_undoped() {
                        continue;
                    }
                    let xy: Vec<(f64, f64)> = data.iter().map(|&(n, v)| (n as f64, v)).collect();
                    if let Ok(fit) = finite_size_fit(&xy) {
                        fits.push(FitSummary {
                            quantity,
                            initial,
                            doping,
                            eps_dd,
                            points: data,
                            fit,
                        });
                    }
                }
            }
        }
    }
    fits
}
