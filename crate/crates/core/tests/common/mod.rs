//! Random small joint-model instances and brute-force dense oracles built
//! directly from the stacked covariance, independent of the sparse code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use osscal::design::DesignMatrix;
use osscal::gp::{FittedGP, KernelHyperparams};
use osscal::oss::{OnSiteSurrogate, SurrogateBank};
use osscal::sim::FieldDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub bank: SurrogateBank,
    pub new_bank: SurrogateBank,
    pub phi_b: KernelHyperparams,
    pub u: Vec<f64>,
}

fn random_hp(rng: &mut ChaCha8Rng, d: usize) -> KernelHyperparams {
    KernelHyperparams::new(
        rng.random_range(0.3..2.0),
        (0..d).map(|_| rng.random_range(0.05..1.0)).collect(),
        rng.random_range(1e-4..0.1),
    )
    .unwrap()
}

fn random_bank(rng: &mut ChaCha8Rng, n_f: usize, p_x: usize, p_u: usize) -> SurrogateBank {
    let x = DesignMatrix::from_rows(n_f, p_x, (0..n_f * p_x).map(|_| rng.random()).collect()).unwrap();
    let y = (0..n_f).map(|_| rng.random_range(-1.5..1.5)).collect();
    let field = FieldDataset::new(x, y, 0.0).unwrap();
    let sites = (0..n_f)
        .map(|i| {
            let n = rng.random_range(3..=8);
            let u = DesignMatrix::from_rows(n, p_u, (0..n * p_u).map(|_| rng.random()).collect()).unwrap();
            let y = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let hp = random_hp(rng, p_u);
            OnSiteSurrogate {
                gp: FittedGP::new(u, y, hp, 0.0).unwrap(),
                n_requested: n,
                seed: i as u64,
            }
        })
        .collect();
    SurrogateBank {
        field,
        sites,
        p_u,
        n_per_site: 8,
        master_seed: 0,
    }
}

/// `N_F ∈ {2,3,4}`, `n_i ∈ {3..8}`, `p_u ∈ {1,2}`, one field input.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_f = rng.random_range(2..=4);
    let p_u = rng.random_range(1..=2);
    let bank = random_bank(&mut rng, n_f, 1, p_u);
    let n_new = rng.random_range(1..=3);
    let new_bank = random_bank(&mut rng, n_new, 1, p_u);
    let phi_b = random_hp(&mut rng, 1);
    let u = (0..p_u).map(|_| rng.random()).collect();
    Instance {
        bank,
        new_bank,
        phi_b,
        u,
    }
}

/// `τ² exp(-Σ (a_k - b_k)² / θ_k)`, plus `τ² η` when `same_index`.
pub fn k(a: &[f64], b: &[f64], same_index: bool, hp: &KernelHyperparams) -> f64 {
    let s: f64 = a.iter().zip(b).zip(&hp.theta).map(|((x, y), t)| (x - y).powi(2) / t).sum();
    hp.tau2 * ((-s).exp() + if same_index { hp.eta } else { 0.0 })
}

/// Row offsets of each site's runs in the stacked simulator vector.
fn offsets(bank: &SurrogateBank) -> Vec<usize> {
    let mut o = vec![0];
    for s in &bank.sites {
        o.push(o.last().unwrap() + s.gp.n());
    }
    o
}

/// Covariance among all simulator runs of `bank` (block diagonal).
fn sim_block(bank: &SurrogateBank) -> DMatrix<f64> {
    let off = offsets(bank);
    let n = *off.last().unwrap();
    let mut m = DMatrix::zeros(n, n);
    for (s, site) in bank.sites.iter().enumerate() {
        let hp = &site.gp.hyperparams;
        for a in 0..site.gp.n() {
            for b in 0..site.gp.n() {
                m[(off[s] + a, off[s] + b)] = k(site.gp.inputs.row(a), site.gp.inputs.row(b), a == b, hp);
            }
        }
    }
    m
}

/// Covariance between every simulator run and every field observation at `u`.
fn sim_field_block(bank: &SurrogateBank, u: &[f64]) -> DMatrix<f64> {
    let off = offsets(bank);
    let mut m = DMatrix::zeros(*off.last().unwrap(), bank.len());
    for (s, site) in bank.sites.iter().enumerate() {
        for a in 0..site.gp.n() {
            m[(off[s] + a, s)] = k(site.gp.inputs.row(a), u, false, &site.gp.hyperparams);
        }
    }
    m
}

/// Field covariance: surrogate variance at the new point plus the bias GP.
fn field_block(bank: &SurrogateBank, phi_b: &KernelHyperparams) -> DMatrix<f64> {
    let n = bank.len();
    DMatrix::from_fn(n, n, |i, j| {
        let b = k(bank.field.site(i), bank.field.site(j), i == j, phi_b);
        if i == j {
            b + bank.sites[i].gp.hyperparams.tau2 * (1.0 + bank.sites[i].gp.hyperparams.eta)
        } else {
            b
        }
    })
}

fn stacked_outputs(bank: &SurrogateBank) -> Vec<f64> {
    bank.sites.iter().flat_map(|s| s.gp.outputs.clone()).collect()
}

/// The full `(N_M + N_F)` joint covariance and data vector.
pub fn dense_joint(bank: &SurrogateBank, phi_b: &KernelHyperparams, u: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let vo = sim_block(bank);
    let vob = sim_field_block(bank, u);
    let vb = field_block(bank, phi_b);
    let nm = vo.nrows();
    let nf = vb.nrows();
    let mut s = DMatrix::zeros(nm + nf, nm + nf);
    s.view_mut((0, 0), (nm, nm)).copy_from(&vo);
    s.view_mut((0, nm), (nm, nf)).copy_from(&vob);
    s.view_mut((nm, 0), (nf, nm)).copy_from(&vob.transpose());
    s.view_mut((nm, nm), (nf, nf)).copy_from(&vb);
    let mut z = stacked_outputs(bank);
    z.extend(&bank.field.y);
    (s, DVector::from_vec(z))
}

/// Dense MVN log density via LU.
pub fn dense_loglik(bank: &SurrogateBank, phi_b: &KernelHyperparams, u: &[f64]) -> f64 {
    let (s, z) = dense_joint(bank, phi_b, u);
    let n = z.len() as f64;
    let lu = s.lu();
    let logdet = lu.determinant().ln();
    let sol = lu.solve(&z).unwrap();
    -0.5 * logdet - 0.5 * z.dot(&sol) - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

pub fn dense_logdet(bank: &SurrogateBank, phi_b: &KernelHyperparams, u: &[f64]) -> f64 {
    dense_joint(bank, phi_b, u).0.lu().determinant().ln()
}

/// Conditional MVN of the new field observations given the stacked vector
/// `[y^M, y^M_new, y^F]`.
pub fn dense_predict(
    bank: &SurrogateBank,
    new_bank: &SurrogateBank,
    phi_b: &KernelHyperparams,
    u: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let (joint, z) = dense_joint(bank, phi_b, u);
    let nm = stacked_outputs(bank).len();
    let nf = bank.len();
    let vo_new = sim_block(new_bank);
    let nmn = vo_new.nrows();
    let nn = new_bank.len();
    let nt = nm + nmn + nf;

    // training order: y^M, y^M_new, y^F
    let mut st = DMatrix::zeros(nt, nt);
    st.view_mut((0, 0), (nm, nm)).copy_from(&joint.view((0, 0), (nm, nm)));
    st.view_mut((nm, nm), (nmn, nmn)).copy_from(&vo_new);
    st.view_mut((nm + nmn, nm + nmn), (nf, nf)).copy_from(&joint.view((nm, nm), (nf, nf)));
    st.view_mut((0, nm + nmn), (nm, nf)).copy_from(&joint.view((0, nm), (nm, nf)));
    st.view_mut((nm + nmn, 0), (nf, nm)).copy_from(&joint.view((nm, 0), (nf, nm)));
    let mut t = z.rows(0, nm).iter().copied().collect::<Vec<_>>();
    t.extend(stacked_outputs(new_bank));
    t.extend(z.rows(nm, nf).iter());
    let t = DVector::from_vec(t);

    // cross covariance of the targets with the training vector
    let mut sx = DMatrix::zeros(nn, nt);
    let vob_new = sim_field_block(new_bank, u);
    sx.view_mut((0, nm), (nn, nmn)).copy_from(&vob_new.transpose());
    for a in 0..nn {
        for b in 0..nf {
            sx[(a, nm + nmn + b)] = k(new_bank.field.site(a), bank.field.site(b), false, phi_b);
        }
    }
    let s_new = field_block(new_bank, phi_b);

    let lu = st.lu();
    let mean = &sx * lu.solve(&t).unwrap();
    let cov = s_new - &sx * lu.solve(&sx.transpose()).unwrap();
    (mean, cov)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
