mod common;

use semsegdepth::harness::{
    evaluate, published, run_ablation, train, EvalConfig, OptimConfig, RunSettings, Splits, TrainConfig, Trained,
};
use semsegdepth::losses::LossWeights;
use semsegdepth::params::ParamStore;
use semsegdepth::zoo::{LossConfig, ModelConfig, VariantName};
use semsegdepth::Error;

use common::{micro_model, toy_samples, NC};

fn short(steps: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        optim: OptimConfig {
            steps,
            lr,
            batch_size: 2,
            ..OptimConfig::default()
        },
        loss: LossConfig {
            weights: LossWeights {
                semantic: 1.0,
                depth: 1e-7,
            },
            ..LossConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_training_keeps_the_initialization() {
    let samples = toy_samples(3, 11, 32, 32);
    let model = micro_model(VariantName::SemSegDepth);
    let init = model.init_params(5);
    let mut cfg = short(3, 0.0);
    cfg.optim.weight_decay = 0.0;
    let out = train(&model, init.clone(), &samples, &samples[..1], &cfg, 5).unwrap();
    assert_eq!(out.last, init);
    assert_eq!(out.best, init);
    assert_eq!(out.log.len(), 3);
    assert!(out.log.iter().all(|r| r.joint_loss.is_finite()));
}

#[test]
fn training_steps_change_every_trainable_tensor_of_semantic_models() {
    let samples = toy_samples(2, 12, 32, 32);
    let model = micro_model(VariantName::SemSegNetB);
    let init = model.init_params(1);
    let out = train(&model, init.clone(), &samples, &[], &short(2, 1e-3), 1).unwrap();
    for (k, t) in init.iter() {
        assert_ne!(out.last.get(k).unwrap(), t, "{k} did not move");
    }
}

#[test]
fn checkpoints_round_trip_and_reject_other_variants() {
    let dir = tempfile::tempdir().unwrap();
    let model = micro_model(VariantName::SemSegDepth);
    let params = model.init_params(2);
    let path = dir.path().join("ckpt.bin");
    params.save(&path).unwrap();
    let back = ParamStore::load(&path).unwrap();
    assert_eq!(back, params);
    model.check_params(&back).unwrap();

    let depth_only = micro_model(VariantName::DepthNetB);
    assert!(depth_only.check_params(&back).is_err());
    assert!(model.check_params(&depth_only.init_params(2)).is_err());

    assert!(matches!(
        ParamStore::load(&dir.path().join("absent.bin")),
        Err(Error::MissingCheckpoint(_))
    ));
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(ParamStore::load(&path).is_err());
}

#[test]
fn evaluation_is_repeatable_and_leaves_parameters_untouched() {
    let samples = toy_samples(3, 13, 32, 32);
    let model = micro_model(VariantName::SemSegDepth);
    let params = model.init_params(3);
    let snapshot = params.digest();
    let trained = Trained {
        model: &model,
        params: &params,
    };
    let a = evaluate(&trained, NC, &samples, &EvalConfig::default(), "d").unwrap();
    let b = evaluate(&trained, NC, &samples, &EvalConfig::default(), "d").unwrap();
    assert_eq!(a, b);
    assert_eq!(params.digest(), snapshot);
    assert_eq!(a.n_samples, 3);
    assert!(a.miou.is_some() && a.rmse_mm.is_some());
    assert!(evaluate(&trained, NC, &[], &EvalConfig::default(), "d").is_err());
}

#[test]
fn ablation_covers_all_nine_variants_in_table_order() {
    let data = toy_samples(6, 14, 32, 32);
    let splits = Splits {
        train: &data[..3],
        val: &data[3..4],
        test: &data[4..],
    };
    let settings = RunSettings {
        model: ModelConfig::micro(NC),
        train: short(1, 1e-3),
        eval: EvalConfig::default(),
        seed: 0,
    };
    let mut variants: Vec<VariantName> = VariantName::all().collect();
    variants.reverse();
    let report = run_ablation(&variants, &splits, &settings);
    let order: Vec<VariantName> = report.rows.iter().map(|r| r.variant).collect();
    assert_eq!(order, VariantName::all().collect::<Vec<_>>());
    for row in &report.rows {
        assert!(row.error.is_none(), "{}: {:?}", row.variant, row.error);
        let r = row.report.as_ref().unwrap();
        let spec = row.variant.spec();
        assert_eq!(r.miou.is_some(), spec.has_semantic(), "{}", row.variant);
        assert_eq!(r.rmse_mm.is_some(), spec.has_depth(), "{}", row.variant);
    }
    let table = report.render();
    assert_eq!(table, run_ablation(&variants, &splits, &settings).render());
    for v in VariantName::all() {
        assert!(table.contains(v.as_str()));
    }
    assert!(table.contains("0.5932") && table.contains("458.2") && table.contains("1497.0"));
}

#[test]
fn published_reference_rows() {
    assert_eq!(published(VariantName::SemSegDepth), (Some(0.5932), Some(458.2)));
    assert_eq!(published(VariantName::SemSegNetB), (Some(0.520), None));
    assert_eq!(published(VariantName::DepthNetB), (None, Some(580.2)));
    assert_eq!(published(VariantName::SemNetDepthDenseGt), (Some(0.638), None));
    assert_eq!(published(VariantName::SemSegDepthC), (Some(0.5841), Some(429.7)));
}
