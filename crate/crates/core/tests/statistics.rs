use sdecert_core::estimate::{
    check_martingale_inequality, estimate_ball_stability, estimate_boundedness,
};
use sdecert_core::model::AffineSdeModel;
use sdecert_core::noise::TimeGrid;
use sdecert_core::sim::{ou_exact, simulate_ensemble, Scheme};
use statrs::function::erf::erfc;

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn normal_cdf_reference() {
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
    assert!(rel(normal_cdf(-2.0), 0.022_750_131_948_179_2) < 1e-9);
    assert!(rel(normal_cdf(-4.0), 3.167_124_183_311_996_5e-5) < 1e-9);
}

#[test]
fn ou_terminal_moments_match_closed_form() {
    let (alpha, beta, x0) = (-1.0, 1.0, 1.0);
    let model = AffineSdeModel::langevin(alpha, beta).unwrap();
    let grid = TimeGrid::new(0.0, 1e-3, 1000).unwrap();
    let ens = simulate_ensemble(&model, &[x0], &grid, 4000, 11, Scheme::EulerMaruyama).unwrap();
    let xs: Vec<f64> = ens.paths.iter().map(|p| p.terminal()[0]).collect();
    let (mean, var) = moments(&xs);
    let (m_exact, v_exact) = ou_exact(alpha, beta, x0, 1.0).unwrap();
    assert!((m_exact - (-1f64).exp()).abs() < 1e-15);
    assert!((v_exact - 0.432_332_358_381_693_6).abs() < 1e-12);
    let se = (v_exact / xs.len() as f64).sqrt();
    assert!(
        (mean - m_exact).abs() < 3.0 * se,
        "mean {mean} vs {m_exact}"
    );
    assert!((var / v_exact - 1.0).abs() < 0.1, "var {var} vs {v_exact}");
}

#[test]
fn ou_forgets_initial_state() {
    let model = AffineSdeModel::langevin(-1.0, 1.0).unwrap();
    let grid = TimeGrid::new(0.0, 1e-2, 1000).unwrap();
    let ens = simulate_ensemble(&model, &[5.0], &grid, 4000, 5, Scheme::EulerMaruyama).unwrap();
    let xs: Vec<f64> = ens.paths.iter().map(|p| p.terminal()[0]).collect();
    let (mean, var) = moments(&xs);
    let (m_exact, v_exact) = ou_exact(-1.0, 1.0, 5.0, 10.0).unwrap();
    // Stationary variance of the EM chain: dt * beta^2 / (1 - (1 + alpha dt)^2).
    let v_em = 1e-2 / (1.0 - 0.99f64.powi(2));
    assert!((v_exact - 0.5).abs() < 1e-8);
    assert!((mean - m_exact).abs() < 3.0 * (v_em / 4000.0).sqrt());
    assert!((var / v_em - 1.0).abs() < 0.1);
}

#[test]
fn milstein_matches_em_for_additive_noise_ensemble() {
    let model = AffineSdeModel::langevin(-1.0, 0.5).unwrap();
    let grid = TimeGrid::new(0.0, 1e-2, 200).unwrap();
    let em = simulate_ensemble(&model, &[1.0], &grid, 20, 3, Scheme::EulerMaruyama).unwrap();
    let mil = simulate_ensemble(&model, &[1.0], &grid, 20, 3, Scheme::Milstein).unwrap();
    assert_eq!(em.paths, mil.paths);
}

#[test]
fn langevin_probabilities_are_high() {
    let model = AffineSdeModel::langevin(-1.0, 1.0).unwrap();
    let grid = TimeGrid::new(0.0, 1e-2, 1000).unwrap();
    let ens = simulate_ensemble(&model, &[2.0], &grid, 1000, 21, Scheme::EulerMaruyama).unwrap();
    assert!(estimate_boundedness(&ens, 2.0, 6.0).unwrap().p_hat >= 0.99);
    let ens = simulate_ensemble(&model, &[0.5], &grid, 1000, 22, Scheme::EulerMaruyama).unwrap();
    assert!(estimate_ball_stability(&ens, 4.0, 1.0).unwrap().p_hat >= 0.99);
}

#[test]
fn martingale_reflection_formula() {
    let exact = normal_cdf(-2.0) + (-2f64).exp() * normal_cdf(0.0);
    assert!((exact - 0.09042).abs() < 5e-6);
    let r = check_martingale_inequality(|_| vec![1.0], 2.0, 1.0, 1.0, 4000, 9, 1e-3).unwrap();
    assert!(r.bound_respected);
    assert!(r.estimate.p_hat <= exact + 3.0 * r.estimate.half_width());
    assert!(
        r.estimate.p_hat >= exact - 4.0 * r.estimate.half_width(),
        "{:?}",
        r.estimate
    );
}
