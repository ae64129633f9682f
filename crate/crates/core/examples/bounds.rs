//! Numerically check the discrepancy bounds on a few random networks.
//!
//!     cargo run --example bounds

use todlab::discrepancy::{
    bound_sweep, check_multi_step_bound, check_one_step_bound, random_instance,
    random_relu_instance, verify_relu_lipschitz,
};
use todlab::nnet::NetworkSpec;

fn main() -> todlab::Result<()> {
    let spec = NetworkSpec::regression(vec![3, 8, 8, 1]);
    for seed in 0..3 {
        let inst = random_instance(&spec, seed)?;
        let one = check_one_step_bound(&inst.snapshot, &inst.x, inst.y, 1e-3, seed)?;
        let many = check_multi_step_bound(&inst.snapshot, &inst.x, inst.y, 1e-3, 5, seed)?;
        println!(
            "seed {seed}: one step {:.3e} <= {:.3e}; five steps {:.3e} <= chained {:.3e} <= constant {:.3e}",
            one.lhs, one.rhs, many.constant_bound.lhs, many.chained_bound.rhs, many.constant_bound.rhs
        );
    }

    let (layer, x, r) = random_relu_instance(4, 3, 11);
    let lip = verify_relu_lipschitz(&layer, &x, &r, 11)?;
    println!("relu layer: {:.4} <= {:.4}", lip.lhs, lip.rhs);

    let sweep = bound_sweep(&[1e-3, 1e-1], &[1, 10], 200, 0)?;
    for c in &sweep.cells {
        println!(
            "eta {:<6} T {:<2} pass rate {:.3}",
            c.eta,
            c.steps,
            c.pass_rate()
        );
    }
    Ok(())
}
