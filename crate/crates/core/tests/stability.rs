mod support;

use modeconn::linalg::{spectral_norm, SPECTRAL_MAX_ITER, SPECTRAL_TOL};
use modeconn::net::{LossKind, Network};
use modeconn::stability::{
    epsilon_formula, interlayer_cushion, interlayer_smoothness, layer_cushion, stability_report, StabilityConfig,
};
use proptest::prelude::*;
use support::*;

fn quick() -> StabilityConfig {
    StabilityConfig {
        realizations: 3,
        t_grid: 5,
        ..StabilityConfig::default()
    }
}

fn scale_output(net: &Network, alpha: f64) -> Network {
    let mut w = net.weights().to_vec();
    let d = w.len();
    w[d - 1] = w[d - 1].scale(alpha);
    Network::new(w).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cushions_lie_in_unit_interval(seed in any::<u64>()) {
        let mut r = rng(seed);
        let dims = random_dims(&mut r, 4, 16);
        let net = random_network(&mut r, &dims);
        let data = regression_data(&mut r, 24, dims[0], *dims.last().unwrap());
        for i in 1..=net.depth() {
            if let Ok(s) = layer_cushion(&net, &data, i) {
                prop_assert!(s.values.iter().all(|&v| v > 0.0 && v <= 1.0));
            }
            for j in i..=net.depth() {
                if let Ok(s) = interlayer_cushion(&net, &data, i, j) {
                    prop_assert!(s.values.iter().all(|&v| v > 0.0 && v <= 1.0));
                    if i == j {
                        prop_assert!(s.values.iter().all(|&v| v == 1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn spectral_norm_is_between_max_row_and_frobenius(rows in 1usize..20, cols in 1usize..20, seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, rows, cols, 1.0);
        let s = spectral_norm(&a, SPECTRAL_TOL, SPECTRAL_MAX_ITER).unwrap().value;
        let max_row = (0..rows).map(|i| modeconn::linalg::norm2(a.row(i))).fold(0.0, f64::max);
        prop_assert!(s <= a.frobenius_norm() * (1.0 + 1e-12));
        prop_assert!(s >= max_row * (1.0 - 1e-9));
        prop_assert!((s - spectral_norm_oracle(&a)).abs() <= 1e-6 * s.max(1e-12));
    }
}

#[test]
fn report_epsilon_matches_direct_formula_and_scales_with_output() {
    let mut r = rng(21);
    let net = random_network(&mut r, &[4, 24, 24, 1]);
    let data = regression_data(&mut r, 64, 4, 1);
    let cfg = StabilityConfig {
        smoothness: false,
        ..quick()
    };
    let base = stability_report(&net, &data, LossKind::Squared, Some(1.0), &cfg).unwrap();
    let eps = base.epsilon.as_ref().expect("epsilon").epsilon;

    let product = (2..=base.depth)
        .map(|i| base.layer_cushion(i) * base.minimal_interlayer_cushions[i - 1])
        .fold(f64::INFINITY, f64::min);
    let direct = epsilon_formula(
        1.0,
        base.contraction,
        base.depth,
        base.max_output_norm,
        base.h_min(),
        product,
    );
    assert!((eps - direct).abs() <= 1e-12 * direct, "{eps} vs {direct}");

    let scaled = stability_report(&scale_output(&net, 3.0), &data, LossKind::Squared, Some(1.0), &cfg).unwrap();
    let eps3 = scaled.epsilon.expect("epsilon").epsilon;
    assert!((eps3 / eps - 3.0).abs() <= 1e-9, "ratio {}", eps3 / eps);
}

#[test]
fn contraction_is_at_least_one() {
    let mut r = rng(22);
    let net = random_network(&mut r, &[3, 10, 10, 2]);
    let data = regression_data(&mut r, 32, 3, 2);
    let rep = stability_report(&net, &data, LossKind::Squared, None, &quick()).unwrap();
    assert!(rep.contraction >= 1.0);
    assert!(rep.beta_note.is_some());
}

#[test]
fn finer_grid_never_raises_the_smoothness_minimum() {
    let mut r = rng(23);
    let net = random_network(&mut r, &[4, 16, 16, 16, 1]);
    let data = regression_data(&mut r, 24, 4, 1);
    let coarse = interlayer_smoothness(&net, &data, 0.5, 4, 5, 9).unwrap();
    let fine = interlayer_smoothness(&net, &data, 0.5, 4, 21, 9).unwrap();
    for (c, f) in coarse.realization_mins.iter().zip(&fine.realization_mins) {
        if let (Some(c), Some(f)) = (c, f) {
            assert!(f <= c, "fine {f} > coarse {c}");
        }
    }
    if let (Some(c), Some(f)) = (coarse.rho_min, fine.rho_min) {
        assert!(f <= c);
    }
}

#[test]
fn cross_entropy_uses_constant_beta() {
    let mut r = rng(24);
    let net = random_network(&mut r, &[3, 8, 8, 3]);
    let data = classification_data(&mut r, 16, 3, 3);
    let rep = stability_report(&net, &data, LossKind::SoftmaxCrossEntropy, None, &quick()).unwrap();
    assert_eq!(rep.beta, std::f64::consts::SQRT_2);
    assert!(rep.beta_note.is_none());
}

#[test]
fn histograms_are_written_per_quantity() {
    let mut r = rng(25);
    let net = random_network(&mut r, &[3, 8, 8, 1]);
    let data = regression_data(&mut r, 16, 3, 1);
    let rep = stability_report(&net, &data, LossKind::Squared, None, &quick()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = rep.write_histograms(dir.path()).unwrap();
    let names: Vec<String> = files
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"layer_cushion_2.csv".to_string()), "{names:?}");
    assert!(names.contains(&"interlayer_cushion_1_3.csv".to_string()), "{names:?}");
    assert!(names.contains(&"activation_contraction_1.csv".to_string()), "{names:?}");
}
