//! Trains a small model on synthetic data and prints the epoch curve.
//!
//! ```text
//! cargo run --release -p aag-core --example train_synthetic -- [history|rgb] [d_model]
//! ```

use aag_core::data::{generate_synthetic, LabelRule, SyntheticSpec};
use aag_core::model::{AagModel, HistoryStrategy, ModelConfig};
use aag_core::training::{evaluate, fit, TrainConfig};

fn main() -> aag_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let rule = match args.next().as_deref() {
        Some("rgb") => LabelRule::RgbClusterDetermined,
        _ => LabelRule::HistoryDetermined,
    };
    let d_model = args.next().and_then(|s| s.parse().ok()).unwrap_or(32);

    let spec = SyntheticSpec {
        label_rule: rule,
        ..Default::default()
    };
    let (train, val, table) = generate_synthetic(&spec)?;
    let history_strategy = match rule {
        LabelRule::RgbClusterDetermined => HistoryStrategy::None,
        _ => HistoryStrategy::Concat,
    };
    let mut model = AagModel::<f32>::new(ModelConfig {
        d_ft: spec.d_ft,
        d_txt: spec.d_txt,
        n_classes: spec.n_classes,
        history_len: spec.history_len,
        d_model,
        history_strategy,
        ..ModelConfig::default()
    })?;
    println!("{} parameters", model.num_parameters());

    let report = fit(&mut model, &train, &val, &table, &TrainConfig::default(), None)?;
    for e in &report.epochs {
        println!(
            "epoch {:>3}  loss {:.4}  val top1 {:.3}{}",
            e.epoch,
            e.train_loss,
            e.val_top1,
            if e.improved { "  *" } else { "" }
        );
    }
    let m = evaluate(&model, &val, &table)?;
    println!(
        "best epoch {}: top1 {:.3}, top5 {:.3}, class-mean recall@5 {:.3}",
        report.best_epoch, m.top1, m.top5, m.class_mean_top5_recall
    );
    Ok(())
}
