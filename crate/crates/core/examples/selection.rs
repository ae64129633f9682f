//! Compare what each acquisition strategy picks from the same pool.
//!
//!     cargo run --example selection

use todlab::activeloop::init_pools;
use todlab::data::gen_blobs;
use todlab::nnet::{init_network, NetworkSpec, OutputRepr};
use todlab::sampling::{acquire, AcquisitionKind, AcquisitionStrategy};
use todlab::training::{revealed_labels, train_cycle, TrainConfig};

fn main() -> todlab::Result<()> {
    let data = gen_blobs(800, 4, 0.8, 3)?;
    let pools = init_pools(data.len(), 0.1, 3)?;
    let labels = revealed_labels(data.labels(), &pools);
    let w0 = init_network(&NetworkSpec::classifier(vec![2, 16, 4]), 3)?;
    let config = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let (model, ema, _) = train_cycle(&config, &pools, data.features(), &labels, &w0, &w0)?;

    for kind in AcquisitionKind::ALL {
        let comparison = match kind {
            AcquisitionKind::Random => None,
            AcquisitionKind::Cod => Some(&w0),
            AcquisitionKind::Emaod => Some(&ema),
        };
        let pick = acquire(
            &AcquisitionStrategy::new(kind),
            &pools,
            &model,
            comparison,
            data.features(),
            8,
            3,
            OutputRepr::Probabilities,
        )?;
        println!("{kind:>6}: {:?}", pick.chosen);
    }
    Ok(())
}
