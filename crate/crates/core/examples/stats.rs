//! Paired comparison of per-run AUROCs and radar-chart normalization.

use memssl::eval::{compare, radar_normalize};

fn main() -> memssl::Result<()> {
    let ours = [0.962, 0.958, 0.971, 0.966, 0.960];
    let baseline = [0.941, 0.950, 0.948, 0.939, 0.952];
    let c = compare(&ours, &baseline)?;
    println!("mean diff {:+.4} ({:+.2}%)", c.mean_diff, c.pct_diff);
    println!("paired t = {:.3}, p = {:.4}, Cohen's d = {:.3} over {} runs", c.t, c.p, c.cohens_d, c.n_runs);

    let per_model = [0.975, 0.921, 0.883, 0.902, 0.947];
    let radar = radar_normalize(&per_model)?;
    for (raw, r) in per_model.iter().zip(&radar) {
        println!("  {raw:.3} -> {r:.3}");
    }
    Ok(())
}
