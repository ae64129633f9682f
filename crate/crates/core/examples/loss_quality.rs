//! How well the cycle-to-cycle discrepancy ranks unlabeled samples by true
//! loss: bucket means, capture curve and rank correlation.
//!
//!     cargo run --example loss_quality

use todlab::activeloop::{run_experiment, ExperimentConfig};
use todlab::analysis::{bucket_mean_loss, capture_curve, spearman};
use todlab::data::DatasetSource;

fn main() -> todlab::Result<()> {
    let config = ExperimentConfig::new(DatasetSource::TwoMoons {
        n: 2000,
        noise: 0.2,
    });
    let run = run_experiment(&config, 1)?;
    let cycle = 3;
    let diag = &run.diagnostics[cycle - 1];

    let buckets = bucket_mean_loss(&diag.cod, &diag.oracle_losses, 10)?;
    for b in &buckets.buckets {
        println!(
            "{:>3.0}-{:<3.0}% by discrepancy: mean loss {:.4}",
            b.from_pct, b.to_pct, b.mean_loss
        );
    }
    let curve = capture_curve(&diag.cod, &diag.oracle_losses, 0.25, &[0.1, 0.25, 0.5])?;
    for (p, c) in curve.sampling_fractions.iter().zip(&curve.captured) {
        println!("sampling {p:.2}: captures {c:.3} of the top-25% losses");
    }
    let values: Vec<f64> = diag.cod.iter().map(|s| s.value).collect();
    println!("spearman {}", spearman(&values, &diag.oracle_losses)?);
    Ok(())
}
