use plab_core::dataio::{generate_synthetic, SynthConfig};
use plab_core::metrics::evaluate;
use plab_core::model::{init_params, ModelConfig};
use plab_core::trainer::{train, TrainConfig};
use plab_core::Split;

fn desk_model() -> ModelConfig {
    ModelConfig {
        input_dim: 16,
        num_classes: 5,
        ..ModelConfig::default()
    }
}

#[test]
fn loss_falls_over_fifty_epochs() {
    let ds = generate_synthetic(200, 5, 10, 16, 0.3, 0.1, 7).unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        model: desk_model(),
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &ds).unwrap();
    let h = &out.history.epochs;
    assert!(h[49].train_loss < h[0].train_loss);
    // Frozen from the first run; any drift means the numerics changed.
    for (got, want) in [
        (h[0].train_loss, 0.07829753908009031),
        (h[49].train_loss, 0.039686667406204086),
    ] {
        assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
    }
    assert!(h.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn trained_model_beats_initialization() {
    let ds = SynthConfig {
        num_clips: 150,
        mask_rate: 0.3,
        test_fraction: 1.0 / 3.0,
        seed: 3,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        learning_rate: 3e-3,
        model: desk_model(),
        seed: 3,
        ..TrainConfig::default()
    };
    let test = ds.split(Split::Test);
    let before = evaluate(
        &init_params(&cfg.model, cfg.seed).unwrap(),
        &cfg.model,
        &test,
        0.5,
    )
    .unwrap();
    let out = train(&cfg, &ds.split(Split::Train)).unwrap();
    let after = evaluate(&out.params, &cfg.model, &test, 0.5).unwrap();
    assert!(after.macro_f1() > before.macro_f1() + 0.2);
}
