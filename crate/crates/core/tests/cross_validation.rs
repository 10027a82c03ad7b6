mod common;

use spt_uts::*;

fn serialized(m: &TrainedPipeline) -> String {
    ModelFile::new(m.clone(), spt_uts::model_file::Provenance::new(0, b"")).to_json()
}

fn small(noise: f64) -> Vec<UniformCurve> {
    common::synthetic(&SynthConfig {
        n_materials: 4,
        curves_per_material: 10,
        noise_sigma_n: noise,
        ..Default::default()
    })
    .0
}

#[test]
fn empirical_zero_noise_is_exact() {
    let curves = small(0.0);
    let spec = PipelineSpec::empirical(EmpiricalMode::InstabilityForce, MarkerStrategy::PerCurve);
    let r = cross_validate(&curves, &spec, 10, 3).unwrap();
    assert!(r.mean_rmse < 1e-8, "{}", r.mean_rmse);
    assert_eq!(r.per_sample.len(), curves.len());
    assert!(r.per_sample.iter().enumerate().all(|(i, s)| s.row == i));
}

#[test]
fn constant_target_pca_lm_is_exact() {
    let mut curves = small(2.0);
    for c in &mut curves {
        c.meta_mut().rm_mpa = Some(650.0);
    }
    let r = cross_validate(&curves, &PipelineSpec::pca_lm(0.99), 5, 1).unwrap();
    assert!(r.mean_rmse < 1e-9, "{}", r.mean_rmse);
}

#[test]
fn report_statistics_are_consistent() {
    let curves = small(5.0);
    let r = cross_validate(&curves, &PipelineSpec::pca_lm(0.99), 4, 9).unwrap();
    assert_eq!(r.k, 4);
    assert_eq!(r.fold_rmse.len(), 4);
    assert_eq!(r.mean_rmse.to_bits(), (r.fold_rmse.iter().sum::<f64>() / 4.0).to_bits());
    let mut all: Vec<usize> = r.folds.concat();
    all.sort_unstable();
    assert_eq!(all, (0..curves.len()).collect::<Vec<_>>());
    for (f, fold) in r.folds.iter().enumerate() {
        let pred: Vec<f64> = fold.iter().map(|&i| r.per_sample[i].pred_mpa).collect();
        let truth: Vec<f64> = fold.iter().map(|&i| r.per_sample[i].true_mpa).collect();
        assert_eq!(rmse(&pred, &truth).unwrap(), r.fold_rmse[f]);
    }
}

#[test]
fn cv_is_deterministic_under_parallel_folds() {
    let curves = small(5.0);
    let spec = PipelineSpec::forest(ForestConfig { n_trees: 20, seed: 5, ..Default::default() });
    let a = cross_validate(&curves, &spec, 5, 11).unwrap();
    let b = cross_validate_with(&curves, &spec, 5, 11, &CvOptions { workers: Some(1), ..Default::default() }).unwrap();
    assert_eq!(a.fold_rmse, b.fold_rmse);
    for (x, y) in a.fold_models.iter().zip(&b.fold_models) {
        assert_eq!(serialized(x), serialized(y));
    }
}

#[test]
fn held_out_targets_never_reach_fitting() {
    let curves = small(5.0);
    let specs = [
        PipelineSpec::empirical(EmpiricalMode::InstabilityForce, MarkerStrategy::PerCurve),
        PipelineSpec::pca_lm(0.99),
        PipelineSpec::forest(ForestConfig { n_trees: 15, seed: 2, ..Default::default() }),
    ];
    for spec in &specs {
        let base = cross_validate(&curves, spec, 5, 4).unwrap();
        for (f, fold) in base.folds.iter().enumerate() {
            let mut mutated = curves.clone();
            for &i in fold {
                mutated[i].meta_mut().rm_mpa = Some(12345.0);
            }
            let again = cross_validate(&mutated, spec, 5, 4).unwrap();
            assert_eq!(again.folds, base.folds);
            assert_eq!(serialized(&again.fold_models[f]), serialized(&base.fold_models[f]), "{} fold {f}", spec.name());
        }
    }
}

#[test]
fn leave_one_out_memorizer_has_positive_error() {
    let curves = small(5.0);
    let spec = PipelineSpec::forest(ForestConfig {
        n_trees: 1,
        min_leaf: 1,
        bootstrap: false,
        mtry: Some(152),
        seed: 0,
        max_depth: None,
    });
    let fitted = fit_pipeline(&curves, &spec).unwrap();
    let train = fitted.predict(&curves).unwrap();
    let truth: Vec<f64> = curves.iter().map(|c| c.meta().rm_mpa.unwrap()).collect();
    assert_eq!(rmse(&train, &truth).unwrap(), 0.0);
    let r = cross_validate(&curves, &spec, curves.len(), 0).unwrap();
    assert!(r.fold_rmse.iter().all(|&e| e > 0.0));
}

#[test]
fn legacy_global_pca_shares_feature_stages() {
    let curves = small(5.0);
    let spec = PipelineSpec::pca_lm(0.99);
    let legacy = cross_validate_with(&curves, &spec, 4, 2, &CvOptions { legacy_global_pca: true, ..Default::default() }).unwrap();
    let pcas: Vec<_> = legacy.fold_models.iter().map(|m| m.pca.clone().unwrap()).collect();
    assert!(pcas.windows(2).all(|w| w[0] == w[1]));
    let clean = cross_validate(&curves, &spec, 4, 2).unwrap();
    assert_ne!(clean.fold_models[0].pca, clean.fold_models[1].pca);
}

#[test]
fn grouped_folds_keep_materials_apart() {
    let curves = small(5.0);
    let opts = CvOptions { scheme: FoldScheme::GroupedByMaterial, ..Default::default() };
    let r = cross_validate_with(&curves, &PipelineSpec::pca_lm(0.99), 4, 1, &opts).unwrap();
    for fold in &r.folds {
        let mut mats: Vec<&str> = fold.iter().map(|&i| curves[i].meta().material_id.as_str()).collect();
        mats.dedup();
        assert_eq!(mats.len(), 1);
    }
}

#[test]
fn bad_inputs() {
    let curves = small(0.0);
    assert!(matches!(
        cross_validate(&curves, &PipelineSpec::pca_lm(0.99), 1, 0),
        Err(spt_uts::eval::EvalError::BadK { .. })
    ));
    let mut unlabeled = curves.clone();
    unlabeled[3].meta_mut().rm_mpa = None;
    assert!(matches!(
        cross_validate(&unlabeled, &PipelineSpec::pca_lm(0.99), 5, 0),
        Err(spt_uts::eval::EvalError::Unlabeled(3))
    ));
    // per-curve markers without hints fail inside the fold with its index
    let mut no_hint = curves.clone();
    for c in &mut no_hint {
        c.meta_mut().v_i_hint_mm = None;
    }
    let spec = PipelineSpec::empirical(EmpiricalMode::InstabilityForce, MarkerStrategy::PerCurve);
    assert!(matches!(
        cross_validate(&no_hint, &spec, 5, 0),
        Err(spt_uts::eval::EvalError::Fold { .. })
    ));
}

#[test]
fn noise_scaling_is_monotone() {
    let spec = PipelineSpec::empirical(EmpiricalMode::InstabilityForce, MarkerStrategy::PerCurve);
    let errors: Vec<f64> = [0.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|&s| {
            let (curves, _) = common::synthetic(&SynthConfig { noise_sigma_n: s, ..Default::default() });
            cross_validate(&curves, &spec, 10, 7).unwrap().mean_rmse
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[0] < w[1]), "{errors:?}");
}

#[test]
fn synthetic_zero_noise_round_trip_per_curve() {
    let (curves, truth) = common::synthetic(&SynthConfig::default());
    let spec = PipelineSpec::empirical(EmpiricalMode::InstabilityForce, MarkerStrategy::PerCurve);
    let fitted = fit_pipeline(&curves, &spec).unwrap();
    let FittedModel::Empirical(m) = &fitted.model else { unreachable!() };
    assert!((m.beta - 0.3).abs() < 1e-9);
    for (p, t) in fitted.predict(&curves).unwrap().iter().zip(&truth.records) {
        assert!((p - t.rm_mpa).abs() <= 1e-6 * t.rm_mpa);
    }
}

#[test]
fn max_slope_recovers_planted_knee() {
    let (curves, truth) = common::synthetic(&SynthConfig::default());
    for (c, t) in curves.iter().zip(&truth.records) {
        let m = extract_markers(c, MarkerStrategy::MaxSlope).unwrap();
        let offset = (m.v_instability_mm - t.v_i_mm) / c.grid().spacing_mm;
        assert!(offset.abs() <= 2.0 + 1e-9, "offset {offset}");
        // brute force: the knee is where the raw first difference jumps most
        let f = c.force_n();
        let j = (t.v_i_mm / c.grid().spacing_mm).round() as usize;
        let jump = |k: usize| (f[k + 1] - f[k]) - (f[k] - f[k - 1]);
        let brute = (3..f.len() - 1).max_by(|&a, &b| jump(a).total_cmp(&jump(b))).unwrap();
        assert!(brute.abs_diff(j) <= 1);
        // F_m sits at the end of the window for this template
        assert_eq!(m.v_at_fmax_mm, c.grid().end_mm());
    }
}
