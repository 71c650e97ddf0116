//! On-site surrogates versus one global GP on the toy problem: out-of-sample
//! RMSE per field site over fresh test designs.
//!
//! ```text
//! cargo run --release --example surrogate_comparison [seed]
//! ```

use std::time::Instant;

use osscal::oss::{flop_parity, rmse_eval, SurrogateRef};
use osscal::pipeline::{toy_surrogates, ToyConfig};
use osscal::sim::ToySimulator;

fn main() -> osscal::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed must be an integer"));
    let cfg = ToyConfig { seed, ..Default::default() };

    let t = Instant::now();
    let (field, bank, global) = toy_surrogates(&cfg)?;
    let global = global.expect("global comparator enabled");
    println!("surrogates built in {:.1}s", t.elapsed().as_secs_f64());
    println!(
        "on-site runs: {} of {} converged ({:.2}% missing)",
        bank.total_runs(),
        bank.total_requested(),
        100.0 * bank.missing_fraction()
    );
    println!(
        "global runs:  {} of {} converged ({:.2}% missing)",
        global.n_converged(),
        global.n_requested,
        100.0 * global.missing_fraction()
    );
    let (fg, fo) = flop_parity(cfg.n_global, &bank);
    println!("cubic flops: global {fg:.3e}, on-site total {fo:.3e}");

    let sim = ToySimulator::default();
    let oss = rmse_eval(SurrogateRef::Bank(&bank), &field, cfg.n_test_per_site, &sim, cfg.test_seed())?;
    let glob = rmse_eval(SurrogateRef::Global(&global.gp), &field, cfg.n_test_per_site, &sim, cfg.test_seed())?;
    println!("{:>4} {:>8} {:>12} {:>12}", "site", "x", "oss rmse", "global rmse");
    for i in 0..field.len() {
        let show = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.5}"));
        println!(
            "{:>4} {:>8.4} {:>12} {:>12}",
            i + 1,
            field.site(i)[0],
            show(oss.per_site[i]),
            show(glob.per_site[i])
        );
    }
    println!("median: oss {:.5}  global {:.5}", oss.median(), glob.median());
    println!("mean:   oss {:.5}  global {:.5}", oss.mean(), glob.mean());
    Ok(())
}
