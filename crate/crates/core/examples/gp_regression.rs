//! Single-GP regression: MLE fit of the separable Gaussian kernel with a
//! nugget on noisy samples of a 1-d function, then predictive intervals on
//! a grid and an analytic-versus-numerical gradient check.
//!
//! ```text
//! cargo run --release --example gp_regression [n]
//! ```

use osscal::design::{maximin_lhs, DesignMatrix};
use osscal::gp::{fit_mle, log_marginal_likelihood, FitConfig};
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn f(x: f64) -> f64 {
    (6.0 * x).sin() + 0.5 * x
}

fn main() -> osscal::Result<()> {
    let n: usize = std::env::args().nth(1).map_or(15, |s| s.parse().expect("n must be an integer"));
    let x = maximin_lhs(n, 1, 7, 1000)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let y: Vec<f64> = x.rows().map(|r| f(r[0]) + noise.sample(&mut rng)).collect();

    let gp = fit_mle(&x, &y, &FitConfig::onsite(11))?;
    let hp = &gp.hyperparams;
    println!(
        "fitted: tau2 {:.4}, theta {:.4}, eta {:.2e}, loglik {:.3}",
        hp.tau2, hp.theta[0], hp.eta, gp.loglik
    );

    let grid = DesignMatrix::from_rows(11, 1, (0..11).map(|i| i as f64 / 10.0).collect())?;
    let (mean, var) = gp.predict(&grid)?;
    println!("\n    x      f(x)     mean    95% half-width");
    for (i, r) in grid.rows().enumerate() {
        println!(
            "{:>5.2} {:>9.4} {:>8.4} {:>10.4}",
            r[0],
            f(r[0]),
            mean[i],
            1.96 * var[i].sqrt()
        );
    }

    let h = 1e-5;
    let at = |lt: f64, le: f64| log_marginal_likelihood(&[lt.exp()], le.exp(), &x, &y);
    let (lt, le) = (hp.theta[0].ln() + 0.3, hp.eta.ln() - 0.5);
    let g = at(lt, le)?.gradient;
    let fd_t = (at(lt + h, le)?.loglik - at(lt - h, le)?.loglik) / (2.0 * h);
    let fd_e = (at(lt, le + h)?.loglik - at(lt, le - h)?.loglik) / (2.0 * h);
    println!("\ngradient (log theta, log eta): analytic ({:.6}, {:.6}), central differences ({fd_t:.6}, {fd_e:.6})", g[0], g[1]);
    Ok(())
}
