use tpc_core::analysis::{
    aggregate_attributions, attribute_cohort, attribute_stay, estimates_at, fit_baseline,
    reliability_grid, simulate_icu, BaselineKind, ATTRIBUTION_HOUR,
};
use tpc_core::ehr::{synthesize, GenConfig, PreprocessConfig, Split};
use tpc_core::model::ModelConfig;
use tpc_core::objectives::evaluate_predictions;
use tpc_core::trainer::{collect_predictions, predict_split, train, TrainConfig};

fn trained() -> (tpc_core::ehr::Dataset, tpc_core::model::Checkpoint, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let data = synthesize(dir.path(), 40, 21, &GenConfig::default(), &PreprocessConfig::default()).unwrap();
    let mc = ModelConfig {
        layers: 2,
        temp_channels: 4,
        point_channels: 4,
        final_hidden: 8,
        diag_embedding: 4,
        ..ModelConfig::default()
    };
    let tc = TrainConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 0.01,
        ..TrainConfig::default()
    };
    let out = train(&data, &mc, &tc).unwrap();
    (data, out.checkpoint, dir)
}

#[test]
fn integrated_gradients_on_a_trained_model() {
    let (data, ckpt, _dir) = trained();
    let model = ckpt.model().unwrap();
    let stays = data.split(Split::Train);
    let long: Vec<_> = stays.iter().copied().filter(|s| s.hours() >= ATTRIBUTION_HOUR).take(4).collect();
    assert!(!long.is_empty());
    for s in &long {
        let errs: Vec<f64> = [16, 64, 256]
            .iter()
            .map(|m| attribute_stay(&model, s, &data.meta.fill, *m, ATTRIBUTION_HOUR).unwrap().unwrap().completeness_error())
            .collect();
        assert!(errs[2] < 0.01, "stay {} completeness {:?}", s.stay_id, errs);
    }
    let short = stays.iter().find(|s| s.hours() < ATTRIBUTION_HOUR);
    if let Some(s) = short {
        assert!(attribute_stay(&model, s, &data.meta.fill, 8, ATTRIBUTION_HOUR).unwrap().is_none());
    }

    let per_stay = attribute_cohort(&model, &long, &data.meta.fill, 32, ATTRIBUTION_HOUR).unwrap();
    let result = aggregate_attributions(&data.meta.feature_names(), &per_stay).unwrap();
    let mut ranks: Vec<usize> = result.features.iter().map(|f| f.rank).collect();
    ranks.sort_unstable();
    assert_eq!(ranks, (1..=data.n_features()).collect::<Vec<_>>());
    assert!(result.features.iter().all(|f| f.mean_abs_attribution.is_finite()));
}

#[test]
fn attribution_is_zero_at_the_baseline() {
    let (data, ckpt, _dir) = trained();
    let model = ckpt.model().unwrap();
    let mut stay = data.stays.iter().find(|s| s.hours() >= ATTRIBUTION_HOUR).unwrap().clone();
    let t = stay.hours();
    for f in 0..stay.features() {
        for h in 0..t {
            stay.values.data_mut()[f * t + h] = data.meta.fill[f];
            stay.decay.data_mut()[f * t + h] = 1.0;
        }
    }
    let a = attribute_stay(&model, &stay, &data.meta.fill, 16, ATTRIBUTION_HOUR).unwrap().unwrap();
    assert!(a.combined().iter().all(|v| *v == 0.0));
    assert_eq!(a.prediction, a.baseline_prediction);
}

#[test]
fn grid_simulation_and_baselines_on_model_output() {
    let (data, ckpt, _dir) = trained();
    let set = predict_split(&ckpt, &data, Split::Train, 16).unwrap();
    let grid = reliability_grid(&set);
    assert_eq!(grid.iter().map(|c| c.n).sum::<usize>(), set.mask.iter().filter(|m| **m).count());

    let est = estimates_at(&set, 5);
    let sim = simulate_icu(&est, 20, 16, 1).unwrap();
    assert_eq!(sim.curve[0].true_mean, 16.0);

    let train_stays = data.split(Split::Train);
    let mean = fit_baseline(BaselineKind::Mean, &train_stays, 5).unwrap();
    let r = evaluate_predictions(&collect_predictions(&mean, &data.split(Split::Val), 5, 8).unwrap()).unwrap();
    assert_eq!(r.los.unwrap().kappa, Some(0.0));
}
