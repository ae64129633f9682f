//! One training cycle with and without the consistency term against the
//! weight-averaged model.
//!
//!     cargo run --example semi_supervised

use todlab::activeloop::{evaluate, init_pools};
use todlab::data::gen_two_moons;
use todlab::nnet::{init_network, NetworkSpec};
use todlab::training::{revealed_labels, train_cycle, TrainConfig};

fn main() -> todlab::Result<()> {
    let all = gen_two_moons(1000, 0.2, 5)?;
    let (train, test) = all.split(0.2, 5)?;
    let pools = init_pools(train.len(), 0.1, 5)?;
    let labels = revealed_labels(train.labels(), &pools);
    let w0 = init_network(&NetworkSpec::classifier(vec![2, 32, 32, 2]), 5)?;

    for lambda in [0.0, 0.05, 0.5] {
        let config = TrainConfig {
            lambda,
            seed: 5,
            ..TrainConfig::default()
        };
        let (model, ema, history) =
            train_cycle(&config, &pools, train.features(), &labels, &w0, &w0)?;
        let last = history.epochs.last().expect("epochs > 0");
        let (acc, _) = evaluate(&model, &test)?;
        let (ema_acc, _) = evaluate(&ema, &test)?;
        println!(
            "lambda {lambda:<4}: supervised {:.4}, consistency {:.5}, test accuracy {acc:.4} (ema {ema_acc:.4})",
            last.supervised, last.unsupervised
        );
    }
    Ok(())
}
