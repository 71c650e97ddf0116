//! The sparse joint likelihood of simulator runs and field data: builds a
//! small on-site bank for the toy problem, fits the bias GP at a plug-in
//! `u`, and profiles the log likelihood over a grid of `u`.
//!
//! ```text
//! cargo run --release --example joint_likelihood
//! ```

use std::time::Instant;

use osscal::calib::{modular_objective, PriorSpec};
use osscal::gp::FitConfig;
use osscal::koh::JointPrecompute;
use osscal::oss::{build_bank, BankConfig};
use osscal::sim::{gen_field, ToySimulator};

fn main() -> osscal::Result<()> {
    let field = gen_field(10, 0.02, 3)?;
    let bank = build_bank(&field, &ToySimulator::default(), &BankConfig::new(60, 2, 3))?;
    println!("bank: {} sites, {} converged runs", bank.len(), bank.total_runs());

    let score = modular_objective(&[0.8, 0.2], &bank, &PriorSpec::Uniform, &FitConfig::onsite(5))?;
    let phi_b = score.phi_b;
    println!("bias GP at u = (0.8, 0.2): tau2 {:.4}, theta {:.4}", phi_b.tau2, phi_b.theta[0]);

    let t = Instant::now();
    let pre = JointPrecompute::new(&bank, &phi_b)?;
    println!("precompute in {:.2} ms", 1e3 * t.elapsed().as_secs_f64());

    let k = 9;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    let t = Instant::now();
    print!("\n u1\\u2");
    for j in 1..=k {
        print!("{:>9.2}", j as f64 / (k + 1) as f64);
    }
    println!();
    for i in 1..=k {
        let u1 = i as f64 / (k + 1) as f64;
        print!("{u1:>6.2}");
        for j in 1..=k {
            let u2 = j as f64 / (k + 1) as f64;
            let l = pre.loglik(&[u1, u2])?;
            if l > best.0 {
                best = (l, u1, u2);
            }
            print!("{l:>9.1}");
        }
        println!();
    }
    println!(
        "\n{} evaluations in {:.1} ms; grid argmax u = ({:.2}, {:.2})",
        k * k,
        1e3 * t.elapsed().as_secs_f64(),
        best.1,
        best.2
    );
    Ok(())
}
