mod common;

use common::{dense_logdet, dense_loglik, dense_predict, random_instance, rel_err};
use nalgebra::DMatrix;
use osscal::koh::{aggregate_predictions, posterior_predict, JointPrecompute, PredictiveDistribution, Provenance};
use proptest::prelude::*;

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn block_logdets_match_dense_block_diagonal() {
    for seed in 0..10 {
        let inst = random_instance(seed);
        let pre = JointPrecompute::new(&inst.bank, &inst.phi_b).unwrap();
        let ws = pre.workspace(&inst.u).unwrap();
        let dense = dense_logdet(&inst.bank, &inst.phi_b, &inst.u);
        assert!(rel_err(pre.sum_logdet + ws.logdet_c, dense) < 1e-10 || (pre.sum_logdet + ws.logdet_c - dense).abs() < 1e-10);
    }
}

#[test]
fn single_site_is_a_single_gp() {
    let inst = random_instance(3);
    let one = inst.bank.select(&[0]);
    let pre = JointPrecompute::new(&one, &inst.phi_b).unwrap();
    let gp = &one.sites[0].gp;
    assert_eq!(pre.sum_logdet, gp.logdet);
    assert_eq!(pre.n_m, gp.n());
    let dense = dense_loglik(&one, &inst.phi_b, &inst.u);
    assert!(rel_err(pre.loglik(&inst.u).unwrap(), dense) < 1e-8);
}

#[test]
fn loglik_invariant_to_site_relabeling() {
    for seed in 0..10 {
        let inst = random_instance(100 + seed);
        let n = inst.bank.len();
        let perm: Vec<usize> = (0..n).rev().collect();
        let a = JointPrecompute::new(&inst.bank, &inst.phi_b).unwrap();
        let b = JointPrecompute::new(&inst.bank.select(&perm), &inst.phi_b).unwrap();
        assert!(rel_err(a.sum_q, b.sum_q) < 1e-12);
        assert!(rel_err(a.sum_logdet, b.sum_logdet) < 1e-12 || (a.sum_logdet - b.sum_logdet).abs() < 1e-12);
        let (la, lb) = (a.loglik(&inst.u).unwrap(), b.loglik(&inst.u).unwrap());
        assert!(rel_err(la, lb) < 1e-12, "{la} {lb}");
    }
}

#[test]
fn precompute_is_reused_bit_identically() {
    let inst = random_instance(7);
    let pre = JointPrecompute::new(&inst.bank, &inst.phi_b).unwrap();
    let first = pre.loglik(&inst.u).unwrap();
    let other: Vec<f64> = inst.u.iter().map(|v| 1.0 - v).collect();
    pre.loglik(&other).unwrap();
    assert_eq!(pre.loglik(&inst.u).unwrap().to_bits(), first.to_bits());
}

#[test]
fn mirrored_sites_give_equal_likelihood() {
    // two sites with mirrored designs, equal outputs and hyperparameters:
    // u and 1-u swap their roles, and swapping the sites is a relabeling
    let inst = (0..).map(random_instance).find(|i| i.bank.p_u == 1).unwrap();
    let mut bank = inst.bank.select(&[0, 1]);
    let g0 = bank.sites[0].gp.clone();
    let mirrored: Vec<Vec<f64>> = g0.inputs.rows().map(|r| vec![1.0 - r[0]]).collect();
    bank.sites[1].gp = osscal::gp::FittedGP::new(
        osscal::design::DesignMatrix::from_row_vecs(&mirrored).unwrap(),
        g0.outputs.clone(),
        g0.hyperparams.clone(),
        0.0,
    )
    .unwrap();
    bank.field.y[1] = bank.field.y[0];
    let pre = JointPrecompute::new(&bank, &inst.phi_b).unwrap();
    let u = 0.3;
    let a = pre.loglik(&[u]).unwrap();
    let b = pre.loglik(&[1.0 - u]).unwrap();
    assert!(rel_err(a, b) < 1e-10, "{a} {b}");
}

#[test]
fn far_new_site_reduces_to_its_surrogate() {
    let inst = random_instance(21);
    let mut new_bank = inst.new_bank.select(&[0]);
    new_bank.field.x = osscal::design::DesignMatrix::from_rows(1, 1, vec![1e6]).unwrap();
    let pre = JointPrecompute::new(&inst.bank, &inst.phi_b).unwrap();
    let p = posterior_predict(&pre, &new_bank, &inst.u).unwrap();
    let (m, v) = new_bank.sites[0].gp.predict_point(&inst.u).unwrap();
    assert!((p.mean[0] - m).abs() < 1e-12);
    assert!((p.cov[(0, 0)] - (v + inst.phi_b.marginal_variance())).abs() < 1e-10);
}

#[test]
fn predictive_variance_below_prior() {
    for seed in 0..10 {
        let inst = random_instance(300 + seed);
        let pre = JointPrecompute::new(&inst.bank, &inst.phi_b).unwrap();
        let p = posterior_predict(&pre, &inst.new_bank, &inst.u).unwrap();
        let prior = JointPrecompute::new(&inst.new_bank, &inst.phi_b).unwrap().v_b;
        for i in 0..p.mean.len() {
            assert!(p.cov[(i, i)] <= prior[(i, i)] + 1e-12);
            assert!(p.cov[(i, i)] >= 0.0);
        }
        assert_eq!(p.cov, p.cov.transpose());
    }
}

#[test]
fn coincident_site_with_short_bias_lengthscale() {
    let inst = random_instance(5);
    let mut phi_b = inst.phi_b.clone();
    phi_b.theta = vec![1e-8];
    let mut new_bank = inst.new_bank.select(&[0]);
    new_bank.field.x = inst.bank.field.x.select_rows(&[0]);
    let pre = JointPrecompute::new(&inst.bank, &phi_b).unwrap();
    let p = posterior_predict(&pre, &new_bank, &inst.u).unwrap();
    let (dm, dc) = dense_predict(&inst.bank, &new_bank, &phi_b, &inst.u);
    assert!((p.mean[0] - dm[0]).abs() < 1e-8 * dm[0].abs().max(1.0));
    assert!((p.cov[(0, 0)] - dc[(0, 0)]).abs() < 1e-8 * dc[(0, 0)].abs().max(1.0));
}

#[test]
fn aggregation_of_two_predictions() {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
    let a = PredictiveDistribution {
        mean: vec![1.0, -1.0],
        cov: sigma.clone(),
        provenance: Provenance::Point { u: vec![0.1] },
    };
    let b = PredictiveDistribution {
        mean: vec![3.0, 0.0],
        cov: sigma.clone(),
        provenance: Provenance::Point { u: vec![0.2] },
    };
    let agg = aggregate_predictions(&[a.clone(), b]).unwrap();
    assert_eq!(agg.mean, vec![2.0, -0.5]);
    // two-point population covariance of the means is outer(h, h), h = (m - m')/2
    let h = [-1.0, -0.5];
    for i in 0..2 {
        for j in 0..2 {
            assert!((agg.cov[(i, j)] - sigma[(i, j)] - h[i] * h[j]).abs() < 1e-15);
        }
    }
    let single = aggregate_predictions(std::slice::from_ref(&a)).unwrap();
    assert_eq!(single.mean, a.mean);
    assert_eq!(single.cov, a.cov);
    assert!(aggregate_predictions(&[]).is_err());
}

#[test]
fn u_outside_cube_is_rejected() {
    let inst = random_instance(9);
    let pre = JointPrecompute::new(&inst.bank, &inst.phi_b).unwrap();
    let mut u = inst.u.clone();
    u[0] = 1.5;
    assert!(pre.loglik(&u).is_err());
    assert!(pre.loglik(&[0.5; 3]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sparse_matches_dense(seed in 0u64..1_000_000) {
        let inst = random_instance(seed);
        let pre = JointPrecompute::new(&inst.bank, &inst.phi_b).unwrap();
        let sparse = pre.loglik(&inst.u).unwrap();
        let dense = dense_loglik(&inst.bank, &inst.phi_b, &inst.u);
        prop_assert!(rel_err(sparse, dense) <= 1e-8, "{} vs {}", sparse, dense);

        let p = posterior_predict(&pre, &inst.new_bank, &inst.u).unwrap();
        let (dm, dc) = dense_predict(&inst.bank, &inst.new_bank, &inst.phi_b, &inst.u);
        let scale_m = dm.abs().max().max(1e-12);
        for (a, b) in p.mean.iter().zip(dm.iter()) {
            prop_assert!((a - b).abs() <= 1e-8 * scale_m);
        }
        prop_assert!(max_abs_diff(&p.cov, &dc) <= 1e-8 * dc.abs().max());
    }
}
