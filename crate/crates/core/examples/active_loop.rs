//! A full multi-cycle experiment, comparing discrepancy-driven acquisition
//! with random acquisition, and writing the run artifacts.
//!
//!     cargo run --example active_loop

use todlab::activeloop::{run_experiment, ExperimentConfig};
use todlab::data::DatasetSource;
use todlab::sampling::{AcquisitionKind, AcquisitionStrategy};

fn main() -> todlab::Result<()> {
    let base = ExperimentConfig::new(DatasetSource::Blobs {
        n: 2000,
        classes: 6,
        spread: 0.6,
    });
    for kind in [AcquisitionKind::Cod, AcquisitionKind::Random] {
        let config = ExperimentConfig {
            strategy: AcquisitionStrategy::new(kind),
            ..base.clone()
        };
        let run = run_experiment(&config, 0)?;
        println!("{kind}");
        for r in &run.records {
            println!(
                "  cycle {} labeled {:>4.0}%  accuracy {:.4}  unlabeled discrepancy {:.4}",
                r.cycle,
                100.0 * r.labeled_fraction,
                r.test_accuracy,
                r.mean_cod_unlabeled
            );
        }
        let dir = std::env::temp_dir().join(format!("todlab-active-loop-{kind}"));
        run.write_to(&dir, &config)?;
        println!("  artifacts in {}", dir.display());
    }
    Ok(())
}
