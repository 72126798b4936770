//! Trajectory-level invariants of both solvers and of the analysis layer.

use moire_radiance::analysis::{disorder_average, eta, finite_size_fit};
use moire_radiance::cumulant::{evolve_cumulant, init_from_occupancy, CumulantOptions};
use moire_radiance::exact::{binomial, decay_spectrum, evolve_master, DensityMatrixState, ExactOptions, FockBasis};
use moire_radiance::lattice::{build_triangular, doped_configuration, ordered_filling, random_filling};
use moire_radiance::{CouplingMatrices, Doping, EmissionTrace, ModelParameters, Pattern, SolverKind, TraceMetadata};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn couplings(rows: usize, cols: usize, a: f64, eps: f64, t: f64) -> CouplingMatrices {
    let lat = build_triangular(rows, cols, a).unwrap();
    let params = ModelParameters {
        eps_dd: eps,
        tunneling_t: t,
        ..Default::default()
    };
    CouplingMatrices::build(&lat, &params).unwrap()
}

/// Site `i` of the result is site `perm[i]` of `c`.
fn relabel(c: &CouplingMatrices, perm: &[usize]) -> CouplingMatrices {
    let m = perm.len();
    let p = |mat: &DMatrix<f64>| DMatrix::from_fn(m, m, |i, j| mat[(perm[i], perm[j])]);
    CouplingMatrices {
        j: p(&c.j),
        gamma: p(&c.gamma),
        v: p(&c.v),
        tunneling: p(&c.tunneling),
        active: perm.iter().map(|&k| c.active[k]).collect(),
        params: c.params,
    }
}

fn exact_run(c: &CouplingMatrices, occ: &[bool], t_max: f64) -> moire_radiance::exact::MasterRun {
    let basis = FockBasis::new(c.n_active()).unwrap();
    let rho = DensityMatrixState::fock(&basis, occ).unwrap();
    let opts = ExactOptions {
        t_max,
        dt_out: 0.01,
        rtol: 1e-10,
        atol: 1e-12,
        stop_fraction: None,
        snapshot_stride: None,
    };
    evolve_master(&rho, c, &opts, None).unwrap()
}

fn cumulant_run(c: &CouplingMatrices, occ: &[bool], t_max: f64, order: u8) -> moire_radiance::cumulant::CumulantRun {
    let opts = CumulantOptions {
        t_max,
        dt_out: 0.01,
        rtol: 1e-10,
        atol: 1e-12,
        stop_fraction: None,
    };
    evolve_cumulant(&init_from_occupancy(occ, order).unwrap(), c, &opts).unwrap()
}

fn occupancy(bits: u32, m: usize) -> Vec<bool> {
    (0..m).map(|i| bits >> i & 1 == 1).collect()
}

fn permutation(m: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..m).collect::<Vec<_>>()).prop_shuffle()
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn exact_dynamics_invariant_under_relabelling(perm in permutation(4), bits in 1u32..16, eps in 0.0..5.0f64) {
        let c = couplings(2, 2, 0.05, eps, 0.0);
        let occ = occupancy(bits, 4);
        let moved: Vec<bool> = perm.iter().map(|&k| occ[k]).collect();
        let a = exact_run(&c, &occ, 0.5);
        let b = exact_run(&relabel(&c, &perm), &moved, 0.5);
        prop_assert!(max_dev(&a.total_excitons, &b.total_excitons) < 1e-8);
        for (ca, cb) in a.coherences.iter().zip(&b.coherences) {
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((cb[(i, j)] - ca[(perm[i], perm[j])]).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn exact_independent_emitters_decay_exponentially(bits in 1u32..64, eps in 0.0..5.0f64, t in 0.0..2.0f64) {
        let c = couplings(2, 3, 0.05, eps, t).independent_emitters();
        let occ = occupancy(bits, 6);
        let n0 = bits.count_ones() as f64;
        let run = exact_run(&c, &occ, 2.0);
        let dev = run.times.iter().zip(&run.total_excitons).map(|(t, n)| (n - n0 * (-t).exp()).abs()).fold(0.0, f64::max);
        prop_assert!(dev < 1e-6, "deviation {dev}");
    }

    #[test]
    fn exact_exciton_number_never_grows(bits in 1u32..64, eps in 0.0..5.0f64, a in 0.03..0.3f64) {
        let c = couplings(2, 3, a, eps, 0.0);
        let run = exact_run(&c, &occupancy(bits, 6), 1.0);
        for w in run.total_excitons.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        prop_assert!(run.trace_drift < 1e-8);
        prop_assert!(run.final_state.hermiticity_error() < 1e-10);
        prop_assert!(run.final_state.min_eigenvalue() > -1e-8);
    }

    #[test]
    fn decay_spectrum_sums_match_combinatorial_trace(rows in 1usize..3, cols in 1usize..4, a in 0.02..0.5f64, n_x in 0usize..7) {
        let c = couplings(rows, cols, a, 0.0, 0.0);
        let m = c.n_active();
        prop_assume!(n_x <= m);
        let s = decay_spectrum(&c, n_x).unwrap();
        let sum: f64 = s.rates.iter().sum();
        let want = if n_x == 0 { 0.0 } else { binomial(m - 1, n_x - 1) as f64 * c.gamma.diagonal().sum() };
        prop_assert!((sum - want).abs() < 1e-9 * want.max(1.0), "{sum} vs {want}");
    }

    #[test]
    fn cumulant_dynamics_equivariant_under_relabelling(perm in permutation(6), bits in 1u32..64, eps in 0.0..5.0f64) {
        let c = couplings(2, 3, 0.08, eps, 0.0);
        let occ = occupancy(bits, 6);
        let moved: Vec<bool> = perm.iter().map(|&k| occ[k]).collect();
        let a = cumulant_run(&c, &occ, 0.05, 3);
        let b = cumulant_run(&relabel(&c, &perm), &moved, 0.05, 3);
        let (sa, sb) = (&a.final_state, &b.final_state);
        for i in 0..6 {
            prop_assert!((sb.population(i) - sa.population(perm[i])).abs() < 1e-9);
            for j in 0..6 {
                if i != j {
                    prop_assert!((sb.coherence(i, j) - sa.coherence(perm[i], perm[j])).norm() < 1e-9);
                    prop_assert!((sb.density_pair(i, j) - sa.density_pair(perm[i], perm[j])).abs() < 1e-9);
                }
            }
        }
        for (x, y, z) in [(0, 1, 2), (1, 3, 5), (0, 4, 5)] {
            prop_assert!((sb.density_triple(x, y, z) - sa.density_triple(perm[x], perm[y], perm[z])).abs() < 1e-9);
            prop_assert!((sb.density_coherence(x, y, z) - sa.density_coherence(perm[x], perm[y], perm[z])).norm() < 1e-9);
        }
    }

    #[test]
    fn cumulant_independent_emitters_decay_exponentially(bits in 1u32..64, eps in 0.0..5.0f64, order in 2u8..4) {
        // the closure is only exact once the coherent couplings are gone too
        let mut c = couplings(2, 3, 0.05, eps, 0.0).independent_emitters();
        c.j.fill(0.0);
        c.v.fill(0.0);
        let n0 = bits.count_ones() as f64;
        let run = cumulant_run(&c, &occupancy(bits, 6), 2.0, order);
        let dev = run.times.iter().zip(&run.total_excitons).map(|(t, n)| (n - n0 * (-t).exp()).abs()).fold(0.0, f64::max);
        prop_assert!(dev < 1e-8, "deviation {dev}");
    }

    #[test]
    fn cumulant_coherences_stay_hermitian(bits in 1u32..64, eps in 0.0..5.0f64) {
        let c = couplings(2, 3, 0.05, eps, 0.0);
        let run = cumulant_run(&c, &occupancy(bits, 6), 0.2, 3);
        for cm in &run.coherences {
            prop_assert!((cm - cm.adjoint()).camax() < 1e-12);
        }
    }

    #[test]
    fn order_three_is_exact_on_three_sites(bits in 1u32..8, eps in 0.0..5.0f64, a in 0.03..0.2f64) {
        let c = couplings(1, 3, a, eps, 0.0);
        let occ = occupancy(bits, 3);
        let ex = exact_run(&c, &occ, 2.0);
        let cu = cumulant_run(&c, &occ, 2.0, 3);
        prop_assert!(max_dev(&ex.total_excitons, &cu.total_excitons) < 1e-7);
        for (a, b) in ex.coherences.iter().zip(&cu.coherences) {
            prop_assert!((a - b).camax() < 1e-7);
        }
    }

    #[test]
    fn disorder_average_ignores_run_order(rates in prop::collection::vec(prop::collection::vec(0.1..5.0f64, 20), 2..6), perm_seed in any::<u64>()) {
        let runs: Vec<EmissionTrace> = rates.iter().enumerate().map(|(k, r)| synthetic(r, k as u64)).collect();
        let mut shuffled = runs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        let a = disorder_average(&runs).unwrap();
        let b = disorder_average(&shuffled).unwrap();
        prop_assert!(max_dev(&a.mean.gamma_rate, &b.mean.gamma_rate) < 1e-12);
        prop_assert!(max_dev(&a.gamma_std_error, &b.gamma_std_error) < 1e-12);
        prop_assert_eq!(&a.mean.metadata.seeds, &b.mean.metadata.seeds);
        prop_assert!((a.gamma_max().0 - b.gamma_max().0).abs() < 1e-12);
    }

    #[test]
    fn configurations_never_double_occupy(rows in 1usize..7, cols in 1usize..7, f_x in 0.0..1.0f64, seed in any::<u64>(), p in 0usize..5) {
        let base = build_triangular(rows, cols, 0.05).unwrap();
        let lat = random_filling(&base, f_x, seed).unwrap();
        prop_assert!(lat.occupancy.iter().zip(&lat.blocked).all(|(o, b)| !(o & b)));
        let pattern = Pattern::ALL[p];
        let doped = doped_configuration(&base, pattern, Doping::Complementary).unwrap();
        prop_assert!(doped.occupancy.iter().zip(&doped.blocked).all(|(o, b)| !(o & b)));
        prop_assert_eq!(doped.n_occupied(), doped.n_active());
    }
}

fn meta(seed: u64) -> TraceMetadata {
    TraceMetadata {
        n_rows: 1,
        n_cols: 2,
        a_over_lambda: 0.05,
        occupancy: Some(vec![true, true]),
        blocked: vec![false, false],
        params: ModelParameters::default(),
        solver: SolverKind::Exact,
        seeds: vec![seed],
    }
}

fn synthetic(rates: &[f64], seed: u64) -> EmissionTrace {
    let times: Vec<f64> = (0..rates.len()).map(|k| k as f64 * 0.01).collect();
    EmissionTrace::from_sums(&times, &vec![1.0; rates.len()], rates, meta(seed)).unwrap()
}

#[test]
fn single_site_cumulant_decays_exactly() {
    let c = couplings(1, 1, 0.05, 0.0, 0.0);
    for order in [2, 3] {
        let run = cumulant_run(&c, &[true], 5.0, order);
        let dev = run.times.iter().zip(&run.total_excitons).map(|(t, n)| (n - (-t).exp()).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-8, "order {order}: {dev}");
    }
}

#[test]
fn order_three_is_exact_on_two_sites() {
    let c = couplings(1, 2, 0.05, 3.0, 0.0);
    let ex = exact_run(&c, &[true, true], 5.0);
    let cu = cumulant_run(&c, &[true, true], 5.0, 3);
    assert!(max_dev(&ex.total_excitons, &cu.total_excitons) < 1e-8);
}

#[test]
fn coherence_rate_matches_exciton_loss() {
    // Gamma = sum gamma_ij <s+_i s-_j> / N_x against -(1/N_x) dN_x/dt
    let lat = ordered_filling(&build_triangular(2, 2, 0.05).unwrap(), Pattern::Full).unwrap();
    let params = ModelParameters::with_eps_dd(1.0);
    let c = CouplingMatrices::build(&lat, &params).unwrap();
    let basis = FockBasis::new(4).unwrap();
    let rho = DensityMatrixState::fock(&basis, &lat.active_occupancy()).unwrap();
    let dt = 1e-3;
    let opts = ExactOptions {
        t_max: 2.0,
        dt_out: dt,
        rtol: 1e-11,
        atol: 1e-13,
        stop_fraction: None,
        snapshot_stride: None,
    };
    let run = evolve_master(&rho, &c, &opts, None).unwrap();
    let trace = EmissionTrace::from_moments(&run.times, &run.total_excitons, &run.coherences, &c.gamma, TraceMetadata::new(&lat, &params, SolverKind::Exact)).unwrap();
    let n = &trace.total_excitons;
    let worst = (1..trace.len() - 1)
        .map(|k| {
            let fd = -(n[k + 1] - n[k - 1]) / (2.0 * dt) / n[k];
            (fd - trace.gamma_rate[k]).abs()
        })
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "max deviation {worst}");
}

#[test]
fn fit_standard_error_covers_truth() {
    let sizes = [9.0, 16.0, 25.0, 36.0];
    let sigma = 0.01;
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // standard error of the intercept for known sigma
    let x: Vec<f64> = sizes.iter().map(|n| 1.0 / n).collect();
    let xm = x.iter().sum::<f64>() / 4.0;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let true_se = sigma * (x.iter().map(|v| v * v).sum::<f64>() / (4.0 * sxx)).sqrt();
    let trials = 2000;
    let (mut known, mut estimated) = (0, 0);
    for _ in 0..trials {
        let pts: Vec<(f64, f64)> = sizes.iter().map(|&n| (n, 0.8 + 1.0 / n + noise.sample(&mut rng))).collect();
        let fit = finite_size_fit(&pts).unwrap();
        let err = (fit.inf - 0.8).abs();
        known += usize::from(err < 3.0 * true_se);
        estimated += usize::from(err < 3.0 * fit.inf_std_error.unwrap());
    }
    // normal: 99.7 %; Student t with 2 degrees of freedom: 90.5 %
    assert!(known as f64 / trials as f64 > 0.99, "{known}");
    let frac = estimated as f64 / trials as f64;
    assert!((0.87..0.94).contains(&frac), "{frac}");
}

#[test]
fn single_repeated_value_fits_flat() {
    let fit = finite_size_fit(&[(9.0, 0.7), (16.0, 0.7), (25.0, 0.7)]).unwrap();
    assert!((fit.inf - 0.7).abs() < 1e-14 && fit.alpha.abs() < 1e-12);
}


fn trace_with_gamma(gamma: f64, eps: f64) -> EmissionTrace {
    let lat = ordered_filling(&build_triangular(2, 2, 0.05).unwrap(), Pattern::Full).unwrap();
    let params = ModelParameters {
        gamma,
        eps_dd: eps,
        ..Default::default()
    };
    let c = CouplingMatrices::build(&lat, &params).unwrap();
    let basis = FockBasis::new(4).unwrap();
    let rho = DensityMatrixState::fock(&basis, &lat.active_occupancy()).unwrap();
    let opts = ExactOptions {
        t_max: 3.0 / gamma,
        dt_out: 0.002 / gamma,
        rtol: 1e-10,
        atol: 1e-12,
        stop_fraction: None,
        snapshot_stride: None,
    };
    let run = evolve_master(&rho, &c, &opts, None).unwrap();
    EmissionTrace::from_moments(&run.times, &run.total_excitons, &run.coherences, &c.gamma, TraceMetadata::new(&lat, &params, SolverKind::Exact)).unwrap()
}

#[test]
fn eta_does_not_depend_on_the_rate_unit() {
    for eps in [1.0, 5.0] {
        let unit = eta(&trace_with_gamma(1.0, eps), &trace_with_gamma(1.0, 0.0)).unwrap();
        for gamma in [0.5, 3.0] {
            let scaled_free = trace_with_gamma(gamma, 0.0);
            let scaled = eta(&trace_with_gamma(gamma, eps), &scaled_free).unwrap();
            assert!((scaled - unit).abs() < 1e-6, "eps {eps} gamma {gamma}: {scaled} vs {unit}");
            assert!((scaled_free.gamma_rate[0] - gamma).abs() < 1e-12);
        }
    }
}
