mod common;

use common::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use spatial_heckit::dataset::{build_neighborhoods, load_csv, ClusteredDataset, CsvSchema, NeighborhoodRule};
use spatial_heckit::differencing::{fixed_effect_operator, pairwise_operator, DifferenceOperator};
use spatial_heckit::estimator::{
    heckman_classic, two_step_fit, two_step_fit_with_probit, variance_two_step, TwoStepOptions,
};
use spatial_heckit::montecarlo::{generate_sample, SimCell};
use spatial_heckit::probit::{fit_probit, ProbitSpec};

/// Empirical SD of rho_hat under the null design below (sub-location fixed
/// effects, N = 10000), measured over 100 harness draws.
const RHO_SD_NULL: f64 = 0.411;

const FROZEN_BETA: [f64; 2] = [8.439367237112851, -1.6333457888725795];

fn fixture() -> ClusteredDataset {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/fixture12.csv");
    load_csv(path, &CsvSchema::default()).unwrap()
}

fn sub_fe(ds: &ClusteredDataset) -> DifferenceOperator {
    let g = build_neighborhoods(ds, NeighborhoodRule::SublocationMembership).unwrap();
    fixed_effect_operator(&g, &ds.selected_indices(), false)
}

#[test]
fn fixture_matches_dense_oracle_at_frozen_beta() {
    let ds = fixture();
    let mut probit = fit_probit(&ds, ProbitSpec::default()).unwrap();
    for (b, f) in probit.beta.iter().zip(FROZEN_BETA) {
        assert!((b - f).abs() < 1e-6 * f.abs(), "{b} vs {f}");
    }
    probit.beta = FROZEN_BETA.to_vec();
    let op = sub_fe(&ds);
    let fit = two_step_fit_with_probit(&ds, &op, probit.clone(), TwoStepOptions::default()).unwrap();

    let oracle = dense_two_step(&ds, &dense_fixed_effect(&ds, true), &selection_design_with_intercept(&ds), &probit);
    let theta = DVector::from_column_slice(&fit.theta);
    assert!((&theta - &oracle.theta).amax() <= 1e-10 * oracle.theta.amax());
    assert!(rel_err(&fit.v_twostep, &oracle.v) <= 1e-10, "{}", rel_err(&fit.v_twostep, &oracle.v));

    let again = variance_two_step(&fit, &op, &probit, &ds).unwrap();
    assert!(rel_err(&again, &oracle.v) <= 1e-10);
}

#[test]
fn null_model_is_consistent() {
    let cell = SimCell {
        locations: 100,
        sublocations: 4,
        size: 25,
        rho: 0.0,
        heterogeneity: false,
        ..SimCell::default()
    };
    let ds = generate_sample(&cell, 77);
    assert_eq!(ds.len(), 10_000);
    let fit = two_step_fit(&ds, &sub_fe(&ds), TwoStepOptions::default()).unwrap();
    assert!((fit.delta()[0] - 1.0).abs() < 0.05, "{}", fit.delta()[0]);
    // three empirical standard deviations of rho_hat over 100 draws of this design
    assert!(fit.rho().abs() < 3.0 * RHO_SD_NULL, "{}", fit.rho());

    let classic = heckman_classic(&ds, ProbitSpec::default()).unwrap();
    assert!((classic.delta()[0] - 1.0).abs() < 0.05);
}

#[test]
fn single_draw_sanity_envelope() {
    let cell = SimCell {
        locations: 100,
        sublocations: 2,
        size: 3,
        ..SimCell::default()
    };
    let ds = generate_sample(&cell, 5);
    let fit = two_step_fit(&ds, &sub_fe(&ds), TwoStepOptions::default()).unwrap();
    assert!((fit.delta()[0] - 1.0).abs() < 0.5);
}

#[test]
fn pairwise_complete_graph_agrees_with_classic() {
    let cell = SimCell {
        locations: 5,
        sublocations: 1,
        size: 1000,
        rho: 0.7,
        heterogeneity: false,
        ..SimCell::default()
    };
    let ds = generate_sample(&cell, 21);
    let g = build_neighborhoods(&ds, NeighborhoodRule::LocationMembership).unwrap();
    let op = pairwise_operator(&g, &ds.selected_indices());
    let diff = two_step_fit(&ds, &op, TwoStepOptions::default()).unwrap();
    let classic = heckman_classic(&ds, ProbitSpec::default()).unwrap();
    let joint = (diff.standard_errors()[0].powi(2) + classic.standard_errors()[0].powi(2)).sqrt();
    assert!((diff.delta()[0] - classic.delta()[0]).abs() < 2.0 * joint);
}

fn random_fit(seed: u64) -> Option<(ClusteredDataset, DifferenceOperator)> {
    let ds = random_dataset(seed, 4, 3, 6, 2, 1);
    let op = sub_fe(&ds);
    two_step_fit(&ds, &op, TwoStepOptions::default()).ok()?;
    Some((ds, op))
}

fn with_outcomes(ds: &ClusteredDataset, f: impl Fn(usize, f64) -> f64) -> ClusteredDataset {
    let obs = ds
        .observations()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut o = o.clone();
            o.outcome = o.outcome.map(|y| f(i, y));
            o
        })
        .collect();
    ClusteredDataset::new(obs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sublocation_shifts_leave_theta_unchanged(seed in 0u64..10_000, scale in -50.0f64..50.0) {
        let fitted = random_fit(seed);
        prop_assume!(fitted.is_some());
        let (ds, op) = fitted.unwrap();
        let base = two_step_fit(&ds, &op, TwoStepOptions::default()).unwrap();
        let shifted = with_outcomes(&ds, |i, y| y + scale * (1 + ds.sublocation_of(i)) as f64);
        let fit = two_step_fit(&shifted, &op, TwoStepOptions::default()).unwrap();
        for (a, b) in base.theta.iter().zip(&fit.theta) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + scale.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn rescaling_x_rescales_delta(seed in 0u64..10_000, kappa in prop_oneof![0.01f64..0.5, 2.0f64..100.0]) {
        let fitted = random_fit(seed);
        prop_assume!(fitted.is_some());
        let (ds, op) = fitted.unwrap();
        let base = two_step_fit(&ds, &op, TwoStepOptions::default()).unwrap();
        let obs = ds.observations().iter().map(|o| {
            let mut o = o.clone();
            o.x.iter_mut().for_each(|v| *v *= kappa);
            o
        }).collect();
        let scaled = ClusteredDataset::new(obs).unwrap();
        let fit = two_step_fit(&scaled, &op, TwoStepOptions::default()).unwrap();
        for k in 0..ds.p() {
            prop_assert!((fit.theta[k] * kappa - base.theta[k]).abs() <= 1e-10 * (1.0 + base.theta[k].abs()));
        }
        prop_assert!((fit.rho() - base.rho()).abs() <= 1e-10 * (1.0 + base.rho().abs()));
    }

    #[test]
    fn variance_is_psd_and_symmetric(seed in 0u64..10_000) {
        let fitted = random_fit(seed);
        prop_assume!(fitted.is_some());
        let (ds, op) = fitted.unwrap();
        let fit = two_step_fit(&ds, &op, TwoStepOptions::default()).unwrap();
        let v = &fit.v_twostep;
        let norm = v.norm();
        prop_assert!((v - v.transpose()).amax() <= 1e-10 * norm.max(1.0));
        let eig = SymmetricEigen::new(v.clone());
        prop_assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10 * norm));
        let score = fit.differenced_design().transpose() * DVector::from_column_slice(&fit.residuals);
        let scale = fit.differenced_design().amax() * DVector::from_column_slice(fit.differenced_outcome()).amax();
        prop_assert!(score.amax() <= 1e-8 * scale.max(1.0));
    }

    #[test]
    fn observation_order_does_not_matter(seed in 0u64..10_000, rot in 1usize..50) {
        let fitted = random_fit(seed);
        prop_assume!(fitted.is_some());
        let (ds, op) = fitted.unwrap();
        let base = two_step_fit(&ds, &op, TwoStepOptions::default()).unwrap();
        let mut obs = ds.observations().to_vec();
        let k = rot % obs.len();
        obs.rotate_left(k);
        obs.reverse();
        let perm = ClusteredDataset::new(obs).unwrap();
        let fit = two_step_fit(&perm, &sub_fe(&perm), TwoStepOptions::default()).unwrap();
        let a = DMatrix::from_row_slice(1, base.theta.len(), &base.theta);
        let b = DMatrix::from_row_slice(1, fit.theta.len(), &fit.theta);
        prop_assert!(rel_err(&b, &a) <= 1e-10);
        prop_assert!(rel_err(&fit.v_twostep, &base.v_twostep) <= 1e-10);
    }
}
