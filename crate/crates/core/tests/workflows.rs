use kplab_core::bilinear::{full_grid, Method};
use kplab_core::counting::{count_annulus, fit_growth_exponent, delta_grid, Annulus};
use kplab_core::field::{project_mean_zero, FrequencyField};
use kplab_core::phase::identity_sweep;
use kplab_core::probe::*;
use kplab_core::solver::*;
use kplab_core::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cosines(grid: SpatialGrid, modes: &[(FreqPoint, f64)]) -> SpatialSpectrum {
    let mut u = SpatialSpectrum::zeros(grid);
    for (xi, a) in modes {
        u.set(*xi, Complex64::new(a / 2.0, 0.0)).unwrap();
        u.set(-*xi, Complex64::new(a / 2.0, 0.0)).unwrap();
    }
    u
}

#[test]
fn small_identity_sweep_is_exact() {
    for a in [2.0, 3.5, 4.0] {
        let taus = [(0.5, -1.25), (17.0, 3.0)];
        let s = identity_sweep(6, 3, &DispersionParams::new(a).unwrap(), &taus);
        assert!(s.max_relative_deviation < 1e-12, "{s:?}");
        if a == 2.0 {
            assert_eq!(s.cubic_violations, 0);
        }
    }
}

#[test]
fn annulus_counts_stay_small() {
    let fit = fit_growth_exponent(1024, &delta_grid(4)).unwrap();
    assert!(fit.exponent < 0.5, "{fit:?}");
    // 25 ≤ |η|² < 26 holds the 12 lattice points of norm 25.
    assert_eq!(count_annulus(&Annulus::new(25, [0.0, 0.0])), 12);
}

#[test]
fn sweep_reports_a_slope() {
    let case = ProbeCase::preset(CaseName::Bil);
    let opts = SearchOptions { budget: 4, seed: 3, ascent_steps: 1, prune: true };
    let r = scaling_sweep(&case, &[Family::SinglePair, Family::RandomGaussian], &[2, 3, 4], &opts, Mode::Verify).unwrap();
    assert_eq!(r.rows.len(), 3);
    let ratios: Vec<f64> = r.rows.iter().map(|x| x.result.best.ratio_or_zero()).collect();
    assert!(ratios.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12)), "{ratios:?}");
    assert!(r.slope.unwrap().is_finite());
    assert!(scaling_sweep(&case, &[Family::SinglePair], &[4, 2], &opts, Mode::Verify).is_err());
}

#[test]
fn duality_through_fft_on_a_moderate_grid() {
    let g = GridSpec::cube(4).unwrap();
    let mut c = ProbeCase::preset(CaseName::Bil);
    c.params.eps0 = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u = SpaceTimeSpectrum::random_gaussian(g, &mut rng);
    let v = SpaceTimeSpectrum::random_gaussian(g, &mut rng);
    let w = SpaceTimeSpectrum::random_gaussian(full_grid(&g), &mut rng);
    let r = duality_check(&c, &u, &v, &w, Method::Fft).unwrap();
    assert!(r.deviation < 1e-10);
}

#[test]
fn kernel_sum_levels_behave() {
    let p = DispersionParams::new(2.0).unwrap();
    let rows = kernel_sum_sweep(6, &[4.0, 8.0], 0.55, 0.05, &p).unwrap();
    assert!(rows.iter().all(|r| r.max_ratio.is_finite() && r.max_omega_deviation < 1e-10));
}

#[test]
fn time_localization_ratio_is_bounded() {
    let p = DispersionParams::new(2.0).unwrap();
    let g = GridSpec::new(1, 1, 256, 2.0 * std::f64::consts::PI).unwrap();
    let u0 = SpatialSpectrum::from_fn(g.spatial(), |xi| {
        if xi == FreqPoint::new(1, [0, 0]) {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let r = probe_time_localization(&u0, &[0.5, 0.25, 0.125], 0.3, 0.45, g, &p, Mode::Verify).unwrap();
    // The ratio is bounded uniformly in T.
    assert!(r.rows.iter().all(|x| x.ratio < 2.0), "{r:?}");
}

#[test]
fn fourth_order_in_time() {
    let d = DispersionParams::new(2.0).unwrap();
    let g = SpatialGrid::new(6, 4).unwrap();
    let u0 = cosines(g, &[(FreqPoint::new(1, [0, 0]), 0.3), (FreqPoint::new(1, [1, 0]), 0.3)]);
    for scheme in [Scheme::IntegratingFactorRk4, Scheme::Etdrk4] {
        let run = |dt: f64| {
            let mut c = SolverConfig::new(d, g, dt, 0.5).unwrap();
            c.scheme = scheme;
            solve_cauchy(&u0, &c).unwrap().final_state().clone()
        };
        let reference = run(0.05 / 64.0);
        let e1 = run(0.05).sub(&reference).unwrap().l2_norm();
        let e2 = run(0.025).sub(&reference).unwrap().l2_norm();
        assert!(e1 / e2 > 12.0, "{scheme:?}: {e1:e} {e2:e}");
    }
}

#[test]
fn conservation_across_dispersion_exponents() {
    let g = SpatialGrid::new(8, 8).unwrap();
    let u0 = cosines(g, &[(FreqPoint::new(1, [0, 0]), 0.1), (FreqPoint::new(1, [1, 0]), 0.1)]);
    for a in [2.0, 3.5, 4.0] {
        let c = SolverConfig::new(DispersionParams::new(a).unwrap(), g, 1e-3, 0.2).unwrap();
        let tr = solve_cauchy(&u0, &c).unwrap();
        assert!(l2_drift(&tr) < 1e-10, "alpha {a}: {}", l2_drift(&tr));
        assert!(tr.diagnostics.iter().all(|d| d.conj_error < 1e-12));
        assert!(tr.states.iter().all(|s| s.is_mean_zero()));
    }
}

#[test]
fn complex_random_data_rejected_real_accepted() {
    let g = SpatialGrid::new(2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = SolverConfig::new(DispersionParams::new(2.0).unwrap(), g, 1e-3, 0.01).unwrap();
    let real = project_mean_zero(&SpatialSpectrum::random_gaussian(g, &mut rng, true)).scale(Complex64::new(0.01, 0.0));
    assert!(solve_cauchy(&real, &c).is_ok());
    let cplx = project_mean_zero(&SpatialSpectrum::random_gaussian(g, &mut rng, false));
    assert!(solve_cauchy(&cplx, &c).is_err());
}
