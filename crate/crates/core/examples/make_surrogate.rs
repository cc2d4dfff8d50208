//! Regenerates the shipped surrogate truth under `data/surrogate/`.
//!
//! ```text
//! cargo run -p kroncov --example make_surrogate -- data/surrogate
//! ```

use std::path::PathBuf;

use kroncov::format::kcf::{self, FactorFile};
use kroncov::simulator::fitted_surrogate_truth;

fn main() -> kroncov::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/surrogate".into()));
    std::fs::create_dir_all(&out)?;
    let truth = fitted_surrogate_truth(8, 16, 64, 128.0, 10.0, 4, 20_240_601)?;
    kcf::write(&out.join("gamma.kcf"), &FactorFile::from_spatial(&truth.gamma))?;
    kcf::write(&out.join("psi.kcf"), &FactorFile::from_temporal(&truth.psi))?;
    kcf::write(&out.join("delta.kcf"), &FactorFile::from_epoch(&truth.delta))?;
    let d = truth.delta.diagonal();
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(*v), b.max(*v)));
    println!("wrote {} (delta max/min = {:.2})", out.display(), hi / lo);
    Ok(())
}
