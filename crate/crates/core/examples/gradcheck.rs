//! Finite-difference check of the encoder's analytic gradients.
//!
//!     cargo run --release --example gradcheck

use dismark::encoder::{grad_check, gradcheck_problem, Dims, GRAD_CHECK_EPSILON};

fn main() -> dismark::Result<()> {
    for hidden in [2, 4, 8] {
        let dims = Dims { vocab: 7, embed: 3, hidden, proj: 2 * hidden, classes: 3 };
        for seed in 0..3 {
            let (params, batch) = gradcheck_problem(dims, 3, 5, seed);
            let r = grad_check(&params, &batch, GRAD_CHECK_EPSILON, None, seed)?;
            println!(
                "hidden {} seed {}: {} coordinates, max relative error {:.2e}",
                hidden, seed, r.coords_checked, r.max_rel_error
            );
        }
    }
    Ok(())
}
