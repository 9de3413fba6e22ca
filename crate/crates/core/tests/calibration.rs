mod common;

use std::time::Instant;

use nmbc_core::calibration::{
    calibrate_sa, calibration_objective, predicted_lmt, pretune, pretune_objective,
    pretune_samples, AnnealOptions, CalibrationBounds, PretuneSample,
};
use nmbc_core::presets::{ankle2, scale_geometry};
use nmbc_core::{MtuParams, Trace};

fn offset(tr: &Trace, by: f64) -> Trace {
    let cols = (0..tr.channels().len())
        .map(|c| tr.column_at(c).iter().map(|v| v + by).collect())
        .collect();
    Trace::new(tr.channels().to_vec(), tr.time().to_vec(), cols).unwrap()
}

#[test]
fn pretune_identity_recovers_nominal_lengths() {
    let m = ankle2().unwrap();
    for (i, mtu) in m.mtus.iter().enumerate() {
        let samples = pretune_samples(&m, &m, i).unwrap();
        assert_eq!(samples.len(), 11);
        let r = pretune(&samples, &mtu.params).unwrap();
        assert!(r.objective <= 1e-10, "{}: {}", mtu.name, r.objective);
        assert!(r.objective <= r.initial_objective);
        assert!((r.l_opt / mtu.params.l_opt - 1.0).abs() < 1e-4);
        assert!((r.l_slack / mtu.params.l_slack - 1.0).abs() < 1e-4);
    }
}

#[test]
fn pretune_scaled_limb_matches_grid_search() {
    let generic = ankle2().unwrap();
    let scaled = scale_geometry(&generic, 1.1).unwrap();
    for (i, mtu) in generic.mtus.iter().enumerate() {
        let p = mtu.params;
        let samples = pretune_samples(&scaled, &generic, i).unwrap();
        let r = pretune(&samples, &p).unwrap();
        assert!(r.objective <= r.initial_objective);
        assert!((r.l_opt / (1.1 * p.l_opt) - 1.0).abs() < 0.01);
        assert!((r.l_slack / (1.1 * p.l_slack) - 1.0).abs() < 0.01);

        let steps = 200;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for a in 0..steps {
            for b in 0..steps {
                let lo = p.l_opt * (1.0 + 0.2 * a as f64 / (steps - 1) as f64);
                let ls = p.l_slack * (1.0 + 0.2 * b as f64 / (steps - 1) as f64);
                let f = pretune_objective(lo, ls, &samples);
                if f < best.0 {
                    best = (f, lo, ls);
                }
            }
        }
        assert!((r.l_opt / best.1 - 1.0).abs() < 0.01);
        assert!((r.l_slack / best.2 - 1.0).abs() < 0.01);
        assert!(r.objective <= best.0 + 1e-12);
    }
}

#[test]
fn predicted_length_is_continuous_at_toe_cutoff() {
    let at = 37.5 * 0.0127 - 0.2375;
    let sample = |f: f64| PretuneSample {
        pose_index: 1,
        angles: vec![0.0],
        lmt_scaled: 0.3,
        lnorm_unscaled: 1.0,
        fnorm_max: f,
        alpha: 0.0,
    };
    let below = predicted_lmt(0.05, 0.25, &sample(at - 1e-9));
    let above = predicted_lmt(0.05, 0.25, &sample(at + 1e-9));
    assert!((below - above).abs() <= 1e-4);
}

#[test]
fn objective_definition_examples() {
    let m = ankle2().unwrap();
    let ds = common::self_dataset(&m, 2, 2.0);
    assert_eq!(calibration_objective(&m.params(), &ds, &m).unwrap(), 0.0);

    let mut shifted = ds.clone();
    for t in &mut shifted.trials {
        t.tau_id = offset(&t.tau_id, 1.0);
    }
    let f = calibration_objective(&m.params(), &shifted, &m).unwrap();
    assert!((f - 1.0).abs() <= 1e-9, "{f}");
}

#[test]
fn objective_matches_direct_triple_sum() {
    let m = ankle2().unwrap();
    let mut params = m.params();
    params[0].shape_factor = -2.0;
    params[1].f_max_iso *= 1.2;
    let ds = common::self_dataset(&m, 2, 1.5);
    let perturbed = m.with_params(&params).unwrap();

    let mut sum = 0.0;
    let mut rows = 0;
    for t in &ds.trials {
        let pred = common::model_torque(&perturbed, &t.emg, &t.angles, &ds.dofs);
        rows = pred.len();
        for d in &ds.dofs {
            for (p, r) in pred.column(d).unwrap().iter().zip(t.tau_id.column(d).unwrap()) {
                sum += (p - r) * (p - r);
            }
        }
    }
    let oracle = sum / (rows * ds.trials.len() * ds.dofs.len()) as f64;
    let f = calibration_objective(&params, &ds, &m).unwrap();
    assert!((f - oracle).abs() <= 1e-12 * oracle.max(1.0), "{f} vs {oracle}");

    let mut swapped = ds.clone();
    swapped.trials.reverse();
    let g = calibration_objective(&params, &swapped, &m).unwrap();
    assert!((f - g).abs() <= 1e-12 * f.max(1.0));
}

#[test]
fn objective_rejects_inconsistent_dataset() {
    let m = ankle2().unwrap();
    let mut ds = common::self_dataset(&m, 1, 1.0);
    ds.dofs = vec!["knee_r".into()];
    assert!(calibration_objective(&m.params(), &ds, &m).is_err());
}

fn truth(nominal: &[MtuParams]) -> Vec<MtuParams> {
    nominal
        .iter()
        .enumerate()
        .map(|(i, p)| MtuParams {
            shape_factor: if i == 0 { -1.8 } else { -0.6 },
            f_max_iso: p.f_max_iso * if i == 0 { 1.2 } else { 0.85 },
            l_opt: p.l_opt * 1.01,
            l_slack: p.l_slack * 0.98,
            ..*p
        })
        .collect()
}

#[test]
fn annealing_recovers_torque_within_five_percent() {
    let nominal = ankle2().unwrap();
    let true_model = nominal.with_params(&truth(&nominal.params())).unwrap();
    let ds = common::self_dataset(&true_model, 2, 2.0);
    let start = Instant::now();
    let bounds = CalibrationBounds::default();
    let opts = AnnealOptions::default();
    let r = calibrate_sa(&ds, &nominal, &bounds, 7, &opts).unwrap();
    let elapsed = start.elapsed();
    let peak = ds
        .trials
        .iter()
        .flat_map(|t| t.tau_id.column_at(0).iter().copied())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    eprintln!(
        "initial {} final {} rmse {:?} peak {peak} evals {} temps {} in {elapsed:?}",
        r.initial_objective, r.final_objective, r.rmse_per_dof, r.evaluations, r.temperatures
    );
    assert!(r.final_objective <= r.initial_objective);
    assert!(r.rmse_per_dof[0] <= 0.05 * peak);
    for (p, base) in r.params.iter().zip(nominal.params()) {
        assert!(bounds.contains(&base, p), "{p:?}");
    }
    assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn annealing_is_seed_deterministic() {
    let nominal = ankle2().unwrap();
    let true_model = nominal.with_params(&truth(&nominal.params())).unwrap();
    let ds = common::self_dataset(&true_model, 1, 1.0);
    let opts = AnnealOptions { max_evaluations: 400, ..Default::default() };
    let bounds = CalibrationBounds::default();
    let a = calibrate_sa(&ds, &nominal, &bounds, 42, &opts).unwrap();
    let b = calibrate_sa(&ds, &nominal, &bounds, 42, &opts).unwrap();
    assert_eq!(a, b);
    let c = calibrate_sa(&ds, &nominal, &bounds, 43, &opts).unwrap();
    assert_ne!(a.params, c.params);
}
