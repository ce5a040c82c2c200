mod common;

use common::*;
use deem::covest::{build_v, estimate_sigma, project_diagonal, scale_diag, CovBundle};
use deem::estimators::{
    beta2, ee_expectation, ee_value, estimate_nuisance, fit, run_deem, solve_ee, EeFunction, FitOptions, Mode,
    NuisanceEstimates,
};
use deem::ldcore::{regularize, BlockDiagMatrix};
use deem::selection::{select, SelectionConfig};
use deem::sumstats::{harmonize, pvalues, SnpRecord, SummaryStats};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn block_ops_match_dense_oracle(seed in any::<u64>(), nb in 1usize..4) {
        let mut r = rng(seed);
        let sizes: Vec<usize> = (0..nb).map(|_| r.random_range(1..=10)).collect();
        let vb: Vec<_> = sizes.iter().map(|&s| random_spd(&mut r, s)).collect();
        let ab: Vec<_> = sizes.iter().map(|&s| random_psd(&mut r, s)).collect();
        let v = block_diag(vb.clone());
        let a = block_diag(ab.clone());
        let vd = dense(&vb);
        let ad = dense(&ab);
        let vinv = vd.clone().try_inverse().unwrap();
        let d: usize = sizes.iter().sum();
        let x: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let yv = nalgebra::DVector::from_vec(y.clone());

        let solved = v.solve(&x).unwrap();
        let oracle = &vinv * &xv;
        for i in 0..d {
            prop_assert!(rel_close(solved[i], oracle[i], 1e-8));
        }
        let mv = v.matvec(&x).unwrap();
        let mo = &vd * &xv;
        for i in 0..d {
            prop_assert!(rel_close(mv[i], mo[i], 1e-12));
        }
        prop_assert!(rel_close(v.quad_form(&x, &y).unwrap(), (xv.transpose() * &vinv * &yv)[0], 1e-8));
        prop_assert!(rel_close(v.trace_inv_prod(&a).unwrap(), (&vinv * &ad).trace(), 1e-8));
        let idiag = v.inverse_diagonal().unwrap();
        let (prod, vi) = v.diag_of_inv_prod(&a).unwrap();
        let p = &vinv * &ad;
        for i in 0..d {
            prop_assert!(rel_close(idiag[i], vinv[(i, i)], 1e-8));
            prop_assert!(rel_close(vi[i], vinv[(i, i)], 1e-8));
            prop_assert!(rel_close(prod[i], p[(i, i)], 1e-8));
        }
        let s: Vec<f64> = (0..d).map(|_| r.random_range(0.1..3.0)).collect();
        let sd = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.clone()));
        prop_assert!((v.scale_sym(&s).unwrap().to_dense() - &sd * &vd * &sd).amax() < 1e-12 * vd.amax() * 9.0);
        prop_assert!((v.lin_comb(2.0, &a, -0.5).unwrap().to_dense() - (&vd * 2.0 - &ad * 0.5)).amax() < 1e-12 * (vd.amax() + ad.amax()) * 4.0);
        prop_assert!((v.to_dense() - &vd).amax() == 0.0);
    }

    #[test]
    fn solve_inverts_matvec(seed in any::<u64>(), n in 1usize..12) {
        let mut r = rng(seed);
        let v = block_diag(vec![random_spd(&mut r, n)]);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let back = v.solve(&v.matvec(&x).unwrap()).unwrap();
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let err: f64 = x.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-8 * nx.max(1e-300));
    }

    #[test]
    fn regularize_keeps_unit_diagonal_and_factorizes(seed in any::<u64>(), n in 1usize..9, lambda in 0.0f64..=0.99) {
        let mut r = rng(seed);
        let ld = ld_set(vec![random_corr(&mut r, n), random_corr(&mut r, 3)]);
        let reg = regularize(&ld, lambda);
        for b in reg.blocks() {
            for i in 0..b.corr.nrows() {
                prop_assert_eq!(b.corr[(i, i)], 1.0);
            }
        }
        prop_assert!(reg.to_block_diag().factors().is_ok());
    }

    #[test]
    fn projection_is_orthogonal_to_diagonals(seed in any::<u64>(), n in 1usize..=8) {
        let mut r = rng(seed);
        let v = block_diag(vec![random_spd(&mut r, n)]);
        let sig = random_psd(&mut r, n);
        let s = block_diag(vec![sig.clone()]);
        let d = project_diagonal(&s, &v).unwrap();
        let vinv = v.to_dense().try_inverse().unwrap();
        let resid = &vinv * (&sig - DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)));
        let dt: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let t: f64 = (0..n).map(|j| dt[j] * resid[(j, j)]).sum();
        let scale: f64 = (0..n).map(|j| (dt[j] * (&vinv * &sig)[(j, j)]).abs()).sum::<f64>().max(1e-300);
        prop_assert!(t.abs() <= 1e-9 * scale);
    }

    #[test]
    fn expectation_vanishes_with_projection(seed in any::<u64>(), n in 1usize..=8, beta in -2.0f64..2.0, tau in 0.0f64..0.5, rho in -0.5f64..0.5) {
        let mut r = rng(seed);
        let sg = random_spd(&mut r, n) * 0.1;
        let sbg = random_spd(&mut r, n) * 0.3;
        let sp = random_spd(&mut r, n);
        let v = random_spd(&mut r, n);
        let b = CovBundle::new(block_diag(vec![sg]), block_diag(vec![sbg]), block_diag(vec![sp]), block_diag(vec![v])).unwrap();
        let e = ee_expectation(beta, &b, tau, rho);
        prop_assume!(e.is_ok());
        let e = e.unwrap();
        let tg = b.v.trace_inv_prod(&b.sigma_gamma).unwrap();
        prop_assert!(e.abs() <= 1e-9 * (tg * (rho - beta).abs()).max(1.0));
    }

    #[test]
    fn build_v_factorizes(seed in any::<u64>(), n in 1usize..9) {
        let mut r = rng(seed);
        let ld = ld_set(vec![random_corr(&mut r, n)]);
        let ses: Vec<f64> = (0..n).map(|_| r.random_range(0.01..0.1)).collect();
        let betas: Vec<f64> = (0..n).map(|_| r.random_range(-0.1..0.1)).collect();
        let st = stats(&ld.snp_ids(), &betas, &ses, 5000, "x");
        let sg = estimate_sigma(&scale_diag(&st), &ld).unwrap();
        let sp = deem::covest::estimate_sigma_p(&scale_diag(&st), &ld).unwrap();
        for lambda in [0.0, 0.5, 0.99] {
            prop_assert!(build_v(&sg, &sp, &ld, lambda).unwrap().factors().is_ok());
        }
    }

    #[test]
    fn pvalues_ignore_sign(seed in any::<u64>(), n in 1usize..20) {
        let mut r = rng(seed);
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let se: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
        let neg: Vec<f64> = b.iter().map(|x| -x).collect();
        prop_assert_eq!(pvalues(&stats(&ids, &b, &se, 10, "a")), pvalues(&stats(&ids, &neg, &se, 10, "a")));
    }

    #[test]
    fn harmonize_is_idempotent_and_follows_ld_order(seed in any::<u64>(), n in 2usize..15) {
        let mut r = rng(seed);
        let ld = ld_set(vec![random_corr(&mut r, n / 2 + 1), random_corr(&mut r, n - n / 2)]);
        let ids = ld.snp_ids();
        let mk = |r: &mut rand_chacha::ChaCha8Rng, label: &str, shuffle: bool| {
            let mut recs: Vec<SnpRecord> = ids
                .iter()
                .enumerate()
                .map(|(j, id)| {
                    let pair = [('A', 'G'), ('C', 'A'), ('A', 'T'), ('T', 'C')][j % 4];
                    let flip = r.random_bool(0.3);
                    let b: f64 = r.random_range(-1.0..1.0);
                    SnpRecord {
                        snp_id: id.clone(),
                        effect_allele: if flip { pair.1 } else { pair.0 },
                        other_allele: if flip { pair.0 } else { pair.1 },
                        beta: if flip { -b } else { b },
                        se: 0.1,
                        n: 100,
                    }
                })
                .collect();
            if shuffle {
                recs.reverse();
            }
            SummaryStats::new(recs, label, 100).unwrap()
        };
        let e = mk(&mut r, "exposure", false);
        let o = mk(&mut r, "outcome", true);
        let s = mk(&mut r, "supplemental", true);
        let (ds, rep) = harmonize(&e, &o, &s, &ld).unwrap();
        prop_assert_eq!(rep.dropped_ambiguous, ids.iter().enumerate().filter(|(j, _)| j % 4 == 2).count());
        let order: Vec<&String> = ids.iter().filter(|id| ds.snp_index.contains(id)).collect();
        prop_assert_eq!(ds.snp_index.iter().collect::<Vec<_>>(), order);
        let (again, rep2) = harmonize(&ds.exposure, &ds.outcome, &ds.supplemental, &ds.ld).unwrap();
        prop_assert_eq!(&again, &ds);
        prop_assert_eq!(rep2.sign_flipped, 0);
    }

    #[test]
    fn selection_is_monotone_and_clumped(seed in any::<u64>(), n in 2usize..20, c_hi in 0.01f64..1.0, frac in 0.0f64..1.0, rt in 0.05f64..1.0) {
        let mut r = rng(seed);
        let ld = ld_set(vec![random_corr(&mut r, n), random_corr(&mut r, 4)]);
        let d = ld.dim();
        let z: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
        let ds = dataset(ld, &vec![0.1; d], &vec![0.1; d], &z, 1.0);
        let hi = select(&ds, &SelectionConfig::new(c_hi, 1.0).unwrap());
        let lo = select(&ds, &SelectionConfig::new((c_hi * frac).max(1e-12), 1.0).unwrap());
        if let Ok(lo) = &lo {
            let hi = hi.as_ref().unwrap();
            prop_assert!(lo.indices.iter().all(|i| hi.indices.contains(i)));
        }
        let cfg = SelectionConfig::new(1.0, rt).unwrap();
        let a = select(&ds, &cfg).unwrap();
        prop_assert_eq!(&a, &select(&ds, &cfg).unwrap());
        let mut off = 0;
        for blk in ds.ld.blocks() {
            let k = blk.snp_ids.len();
            let kept: Vec<usize> = a.indices.iter().copied().filter(|&i| i >= off && i < off + k).collect();
            for (x, &i) in kept.iter().enumerate() {
                for &j in &kept[x + 1..] {
                    prop_assert!(blk.corr[(i - off, j - off)].abs() < rt);
                }
            }
            off += k;
        }
    }

    #[test]
    fn ee_is_continuous_where_defined(seed in any::<u64>(), beta in -3.0f64..3.0) {
        let mut r = rng(seed);
        let n = 5;
        let b = CovBundle::new(
            block_diag(vec![random_spd(&mut r, n) * 0.01]),
            block_diag(vec![random_spd(&mut r, n) * 0.02]),
            block_diag(vec![random_spd(&mut r, n)]),
            block_diag(vec![random_spd(&mut r, n)]),
        ).unwrap();
        let gh: Vec<f64> = (0..n).map(|_| r.random_range(-0.5..0.5)).collect();
        let bg: Vec<f64> = (0..n).map(|_| r.random_range(-0.5..0.5)).collect();
        let nu = NuisanceEstimates { tau_raw: 0.01, tau: 0.01, rho: 0.0, beta2: 0.0, rho_pinned: false };
        let f = EeFunction::new(Mode::TwoSamplePleiotropy, &b, &gh, &bg, &nu).unwrap();
        let (a, c) = (f.eval(beta), f.eval(beta + 1e-9));
        prop_assume!(a.is_ok() && c.is_ok());
        let (a, c) = (a.unwrap(), c.unwrap());
        prop_assert!((a - c).abs() < 1e-6 * (1.0 + f.scale()));
    }

    #[test]
    fn scale_equivariance_end_to_end(seed in any::<u64>(), k in 0.2f64..5.0) {
        let mut r = rng(seed);
        let ld = ld_set(vec![random_corr(&mut r, 6), random_corr(&mut r, 6)]);
        let d = ld.dim();
        let g: Vec<f64> = (0..d).map(|_| r.random_range(-0.1..0.1)).collect();
        let noise = |r: &mut rand_chacha::ChaCha8Rng| r.random_range(-0.01..0.01);
        let gh: Vec<f64> = g.iter().map(|x| x + noise(&mut r)).collect();
        let gt: Vec<f64> = g.iter().map(|x| x + noise(&mut r)).collect();
        let bg: Vec<f64> = g.iter().map(|x| 0.4 * x + noise(&mut r)).collect();
        let ids = ld.snp_ids();
        let se = vec![0.01; d];
        let base = deem::sumstats::HarmonizedDataset::from_aligned(
            stats(&ids, &gh, &se, 10_000, "e"),
            stats(&ids, &bg, &se, 10_000, "o"),
            stats(&ids, &gt, &se, 10_000, "s"),
            ld.clone(),
        ).unwrap();
        let bgk: Vec<f64> = bg.iter().map(|x| k * x).collect();
        let sek: Vec<f64> = se.iter().map(|x| k * x).collect();
        let scaled = deem::sumstats::HarmonizedDataset::from_aligned(
            stats(&ids, &gh, &se, 10_000, "e"),
            stats(&ids, &bgk, &sek, 10_000, "o"),
            stats(&ids, &gt, &se, 10_000, "s"),
            ld,
        ).unwrap();
        let cfg = SelectionConfig::new(1.0, 1.0).unwrap();
        for mode in [Mode::TwoSampleValid, Mode::TwoSamplePleiotropy] {
            let (Ok(a), Ok(b)) = (run_deem(&base, &cfg, mode, 0.5), run_deem(&scaled, &cfg, mode, 0.5)) else {
                continue;
            };
            prop_assert!(rel_close(b.beta, k * a.beta, 1e-7), "{} vs {}", b.beta, k * a.beta);
            prop_assert!(rel_close(b.se, k * a.se, 1e-7));
        }
    }

    #[test]
    fn one_sample_with_rho_zero_collapses_to_pleiotropy(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = 6;
        let b = CovBundle::new(
            block_diag(vec![random_spd(&mut r, n) * 0.001]),
            block_diag(vec![random_spd(&mut r, n) * 0.002]),
            block_diag(vec![random_spd(&mut r, n)]),
            block_diag(vec![random_spd(&mut r, n)]),
        ).unwrap();
        let g: Vec<f64> = (0..n).map(|_| r.random_range(0.05..0.3)).collect();
        let gh: Vec<f64> = g.iter().map(|x| x + r.random_range(-0.02..0.02)).collect();
        let gt: Vec<f64> = g.iter().map(|x| x + r.random_range(-0.02..0.02)).collect();
        let bg: Vec<f64> = g.iter().map(|x| 0.3 * x + r.random_range(-0.02..0.02)).collect();
        let p = fit(Mode::TwoSamplePleiotropy, &b, &gh, &bg, &gt, &FitOptions::default());
        let o = fit(Mode::OneSample, &b, &gh, &bg, &gt, &FitOptions { pin_rho: Some(0.0), ..FitOptions::default() });
        match (p, o) {
            (Ok(p), Ok(o)) => {
                prop_assert_eq!(p.beta.to_bits(), o.beta.to_bits());
                prop_assert_eq!(p.se.to_bits(), o.se.to_bits());
                prop_assert_eq!(p.beta1.to_bits(), o.beta1.to_bits());
                prop_assert_eq!(p.psi, o.psi);
                prop_assert_eq!(p.nuisance.tau_raw.to_bits(), o.nuisance.tau_raw.to_bits());
            }
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            (a, b) => prop_assert!(false, "outcomes differ: {:?} / {:?}", a.is_ok(), b.is_ok()),
        }
    }
}

#[test]
fn exact_ratio_identity_in_valid_mode() {
    let mut r = rng(42);
    for n in 1..6 {
        let v = block_diag(vec![random_spd(&mut r, n)]);
        let zero = BlockDiagMatrix::from_diagonal(&[n], &vec![0.0; n]).unwrap();
        let b = CovBundle::new(zero.clone(), zero.clone(), zero, v).unwrap();
        let gh: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
        let beta = r.random_range(-2.0..2.0);
        let bg: Vec<f64> = gh.iter().map(|x| beta * x).collect();
        let b2 = beta2(&gh, &gh, &bg, &b.v).unwrap();
        assert!((b2 - beta).abs() <= 4.0 * f64::EPSILON * beta.abs().max(1.0));
        let nu = estimate_nuisance(Mode::TwoSampleValid, &b, &gh, &bg, b2, None).unwrap();
        let (root, _) = solve_ee(Mode::TwoSampleValid, &b, &gh, &bg, &nu, b2).unwrap();
        assert!((root - beta).abs() < 1e-9);
        assert!(ee_value(beta, Mode::TwoSampleValid, &b, &gh, &bg, &nu).unwrap().abs() < 1e-12);
    }
}
