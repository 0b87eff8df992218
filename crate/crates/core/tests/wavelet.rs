use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scalodet::timeseries::TimeSeries;
use scalodet::wavelet::{cwt_direct, cwt_fft, ScaleGrid};

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn small_grid() -> ScaleGrid {
    ScaleGrid::new(0.5, 8.0, 4, 6.0).unwrap()
}

#[test]
fn linearity() {
    let grid = small_grid();
    let (f, g) = (noise(1, 512), noise(2, 512));
    let (alpha, beta) = (1.7, -0.3);
    let mix: Vec<f64> = f.iter().zip(&g).map(|(a, b)| alpha * a + beta * b).collect();
    let cw = |x: Vec<f64>| cwt_fft(&TimeSeries::new("x", 0.0, 50.0, x).unwrap(), &grid).unwrap();
    let (wf, wg, wm) = (cw(f), cw(g), cw(mix));
    for r in 0..grid.len() {
        for c in 0..512 {
            let expect = wf.coefficient(r, c).unwrap() * alpha + wg.coefficient(r, c).unwrap() * beta;
            assert!((wm.coefficient(r, c).unwrap() - expect).norm() <= 1e-9);
        }
    }
}

#[test]
fn shift_covariance_in_the_interior() {
    let grid = small_grid();
    let k = 37;
    let x = noise(3, 600);
    let mut shifted = vec![0.0; k];
    shifted.extend(&x);
    let a = cwt_fft(&TimeSeries::new("x", 0.0, 50.0, x).unwrap(), &grid).unwrap();
    let b = cwt_fft(&TimeSeries::new("x", 0.0, 50.0, shifted).unwrap(), &grid).unwrap();
    for r in 0..grid.len() {
        for c in 0..a.cols() {
            if a.is_interior(r, c) {
                let d = (a.coefficient(r, c).unwrap() - b.coefficient(r, c + k).unwrap()).norm();
                assert!(d <= 1e-9, "row {r} col {c}: {d}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn amplitude_homogeneity(seed in 0u64..1000, alpha in -20.0f64..20.0) {
        let grid = small_grid();
        let x = noise(seed, 256);
        let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let a = cwt_fft(&TimeSeries::new("x", 0.0, 50.0, x).unwrap(), &grid).unwrap();
        let b = cwt_fft(&TimeSeries::new("x", 0.0, 50.0, scaled).unwrap(), &grid).unwrap();
        for (m, s) in a.magnitudes().iter().zip(b.magnitudes()) {
            prop_assert!((s - alpha.abs() * m).abs() <= 1e-12 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn magnitudes_are_coefficient_moduli(seed in 0u64..1000) {
        let grid = small_grid();
        let w = cwt_direct(&TimeSeries::new("x", 0.0, 50.0, noise(seed, 128)).unwrap(), &grid).unwrap();
        for r in 0..w.rows() {
            for c in 0..w.cols() {
                prop_assert!((w.magnitude(r, c) - w.coefficient(r, c).unwrap().norm()).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn unit_impulse_matches_closed_form() {
    let rate = 50.0;
    let grid = small_grid();
    let n = 400;
    let k0 = 200;
    let mut x = vec![0.0; n];
    // unit-area impulse
    x[k0] = rate;
    let ts = TimeSeries::new("x", 0.0, rate, x).unwrap();
    for w in [cwt_direct(&ts, &grid).unwrap(), cwt_fft(&ts, &grid).unwrap()] {
        for r in 0..grid.len() {
            let a = grid.scale(r);
            for c in 0..n {
                let u = (c as f64 - k0 as f64) / rate / a;
                let expect = (-u * u / 2.0).exp() / a.sqrt();
                assert!((w.magnitude(r, c) - expect).abs() <= 1e-9 * (1.0 + expect), "row {r} col {c}");
            }
        }
    }
}

#[test]
fn one_hertz_cosine_peaks_on_its_row() {
    let rate = 50.0;
    let x: Vec<f64> = (0..3000).map(|i| (2.0 * std::f64::consts::PI * i as f64 / rate).cos()).collect();
    let ts = TimeSeries::new("x", 0.0, rate, x).unwrap();
    let grid = ScaleGrid::new(0.25, 4.0, 12, 6.0).unwrap();
    let target = grid.nearest_row(1.0);
    assert_relative_eq!(grid.frequency(target), 1.0, max_relative = 1e-12);
    let w = cwt_direct(&ts, &grid).unwrap();
    let interior: Vec<usize> = (0..w.cols()).filter(|&c| (0..w.rows()).all(|r| w.is_interior(r, c))).collect();
    assert!(!interior.is_empty());
    for c in interior {
        let best = (0..w.rows()).max_by(|&a, &b| w.magnitude(a, c).total_cmp(&w.magnitude(b, c))).unwrap();
        assert_eq!(best, target, "column {c}");
    }
}

#[test]
fn fft_rows_do_not_depend_on_thread_count() {
    let grid = ScaleGrid::new(0.0272, 6.951, 12, 6.0).unwrap();
    let ts = TimeSeries::new("x", 0.0, 100.0, noise(5, 2000)).unwrap();
    let many = cwt_fft(&ts, &grid).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| cwt_fft(&ts, &grid).unwrap());
    for r in 0..grid.len() {
        assert_eq!(many.coefficient_row(r), one.coefficient_row(r));
    }
}
