//! Latin hypercube designs: plain versus maximin-improved, with the
//! stratification check and the minimum pairwise distance of each.
//!
//! ```text
//! cargo run --release --example maximin_design [n] [d]
//! ```

use osscal::design::{default_maximin_iters, lhs, maximin_lhs, stratum, DesignMatrix};

fn strata_ok(x: &DesignMatrix) -> bool {
    (0..x.ncols()).all(|k| {
        let mut seen = vec![false; x.nrows()];
        x.rows().for_each(|r| seen[stratum(r[k], x.nrows())] = true);
        seen.into_iter().all(|s| s)
    })
}

fn main() -> osscal::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().expect("integer argument"));
    let n = args.next().unwrap_or(50);
    let d = args.next().unwrap_or(2);
    let iters = default_maximin_iters(n, d);

    println!("n = {n}, d = {d}, maximin budget {iters} swaps");
    println!("seed   plain min-dist   maximin min-dist   stratified");
    for seed in 1..=5 {
        let plain = lhs(n, d, seed)?;
        let better = maximin_lhs(n, d, seed, iters)?;
        println!(
            "{seed:>4}   {:>14.4}   {:>16.4}   {}",
            plain.min_distance(),
            better.min_distance(),
            strata_ok(&plain) && strata_ok(&better)
        );
    }

    let mut out = Vec::new();
    maximin_lhs(6, d, 1, default_maximin_iters(6, d))?.write_csv(&mut out)?;
    println!("\nsmall design as CSV:\n{}", String::from_utf8_lossy(&out));
    Ok(())
}
