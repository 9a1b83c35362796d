//! Compares tape gradients of a FiLM-conditioned sine layer with central
//! finite differences.
//!
//!     cargo run --example gradcheck

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vgan::diffcore::{grad_check, DiffError, Tensor};
use vgan::nnlayers::film_siren;

fn main() -> vgan::diffcore::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |shape: &[usize], lo: f64, hi: f64| Tensor::<f64>::from_fn(shape, |_| rng.random_range(lo..hi));
    let x = rand(&[4, 3], -1.0, 1.0);
    let w = rand(&[5, 3], -1.0, 1.0);
    let b = rand(&[5], -1.0, 1.0);
    let gamma = rand(&[5], 1.0, 15.0);
    let beta = rand(&[5], -1.0, 1.0);
    let lift = |e: vgan::VganError| DiffError::InvalidArgument {
        op: "film_siren",
        msg: e.to_string(),
    };
    let names = ["x", "w", "b", "gamma", "beta"];
    let inputs = [&x, &w, &b, &gamma, &beta];
    for (k, name) in names.iter().enumerate() {
        let err = grad_check(
            |t, v| {
                let vars: Vec<_> = (0..5).map(|j| if j == k { v } else { t.constant(inputs[j].clone()) }).collect();
                let y = film_siren(t, vars[0], vars[1], vars[2], vars[3], vars[4]).map_err(lift)?;
                let y = t.square(y);
                Ok(t.sum(y))
            },
            inputs[k],
            1e-6,
        )?;
        println!("d/d{name:<6} max relative error {err:.2e}");
    }
    Ok(())
}
