//! Score an unlabeled pool by how much the model's output moved between two
//! training cycles.
//!
//!     cargo run --example cod_scores

use todlab::activeloop::init_pools;
use todlab::data::gen_two_moons;
use todlab::discrepancy::cod_scores;
use todlab::nnet::{init_network, NetworkSpec, OutputRepr};
use todlab::sampling::select_random;
use todlab::training::{revealed_labels, train_cycle, TrainConfig};

fn main() -> todlab::Result<()> {
    let data = gen_two_moons(600, 0.2, 1)?;
    let mut pools = init_pools(data.len(), 0.1, 1)?;
    let w0 = init_network(&NetworkSpec::classifier(vec![2, 16, 16, 2]), 1)?;
    let config = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };

    let labels = revealed_labels(data.labels(), &pools);
    let (w1, ema, _) = train_cycle(&config, &pools, data.features(), &labels, &w0, &w0)?;
    let extra = select_random(&pools.unlabeled_indices(), 30, 2)?;
    pools.mark_labeled(&extra.chosen)?;
    let labels = revealed_labels(data.labels(), &pools);
    let (w2, _, _) = train_cycle(&config, &pools, data.features(), &labels, &w1, &ema)?;

    let unlabeled = pools.unlabeled_indices();
    let mut scores = cod_scores(
        &w2,
        &w1,
        data.features(),
        &unlabeled,
        OutputRepr::Probabilities,
    )?;
    scores.sort_by(|a, b| b.value.total_cmp(&a.value));
    let mean_loss = |idx: &mut dyn Iterator<Item = usize>| -> todlab::Result<f64> {
        let losses: Vec<f64> = idx
            .map(|i| w2.loss(data.row(i), data.label(i)))
            .collect::<todlab::Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    };
    for s in scores.iter().take(5) {
        let loss = w2.loss(data.row(s.sample_index), data.label(s.sample_index))?;
        println!(
            "sample {:>3}: discrepancy {:.4}, true loss {:.4}",
            s.sample_index, s.value, loss
        );
    }
    let tenth = scores.len() / 10;
    println!(
        "mean true loss, top tenth by discrepancy {:.4} vs bottom tenth {:.4}",
        mean_loss(&mut scores[..tenth].iter().map(|s| s.sample_index))?,
        mean_loss(
            &mut scores[scores.len() - tenth..]
                .iter()
                .map(|s| s.sample_index)
        )?
    );
    Ok(())
}
