use proptest::prelude::*;

use rodeo::dataset::{load_csv, write_csv};
use rodeo::harness::{report_summary, Quartiles, ReplicateRow};
use rodeo::loclin::{derivative_stat, fit_local_linear};
use rodeo::rodeo::{initial_bandwidth, rodeo_hard, rodeo_soft, StepAction};
use rodeo::sigma::sigma_rice;
use rodeo::variants::{global_statistic, linear_prefit, sample_eval_points};
use rodeo::{
    BandwidthVector, Dataset, KernelSpec, RngSeed, RodeoConfig, SigmaPolicy, Smoother,
    SyntheticSpec, Variant,
};

fn noisy(d: usize, n: usize, seed: u64) -> Dataset {
    SyntheticSpec::new(Variant::CubicSine, d, 0.5)
        .unwrap()
        .generate(n, RngSeed::new(seed, 0))
        .unwrap()
}

fn shifted(data: &Dataset, a: f64, b: &[f64]) -> Dataset {
    let y = data
        .rows()
        .zip(data.y())
        .map(|(x, y)| y + a + x.iter().zip(b).map(|(x, b)| x * b).sum::<f64>())
        .collect();
    data.with_y(y).unwrap()
}

fn config(seed: u64) -> RodeoConfig {
    RodeoConfig {
        sigma_policy: SigmaPolicy::Known(0.5),
        seed: RngSeed::new(seed, 0),
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip_is_bit_exact(
        cells in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 6..60),
    ) {
        let d = 2;
        let n = cells.len() / 3;
        let x = cells[..n * d].to_vec();
        let y = cells[n * d..n * (d + 1)].to_vec();
        let names = vec!["a".to_string(), "b".to_string()];
        let data = Dataset::new(x, y, d, names).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("d.csv");
        write_csv(&data, &path, "target").unwrap();
        let back = load_csv(&path, "target").unwrap();
        prop_assert_eq!(back.column_names(), data.column_names());
        for (u, v) in back.y().iter().zip(data.y()) {
            prop_assert_eq!(u.to_bits(), v.to_bits());
        }
        for (r, s) in back.rows().zip(data.rows()) {
            for (u, v) in r.iter().zip(s) {
                prop_assert_eq!(u.to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn derivative_ignores_affine_trends(
        seed in 0u64..1000,
        a in -5.0..5.0f64,
        b in prop::collection::vec(-5.0..5.0f64, 3),
        h in prop::collection::vec(0.2..1.0f64, 3),
        x in prop::collection::vec(0.2..0.8f64, 3),
    ) {
        let data = noisy(3, 60, seed);
        let moved = shifted(&data, a, &b);
        let h = BandwidthVector::new(h).unwrap();
        for j in 0..3 {
            let z0 = derivative_stat(&data, &x, &h, j, KernelSpec::Gaussian, 1.0).unwrap().z;
            let z1 = derivative_stat(&moved, &x, &h, j, KernelSpec::Gaussian, 1.0).unwrap().z;
            prop_assert!((z0 - z1).abs() <= 1e-8 * (1.0 + z0.abs()), "j {}: {} vs {}", j, z0, z1);
        }
    }

    #[test]
    fn effective_kernel_reproduces_lines(
        seed in 0u64..1000,
        h in prop::collection::vec(0.15..2.0f64, 3),
        x in prop::collection::vec(0.0..1.0f64, 3),
    ) {
        let data = noisy(3, 60, seed);
        let fit = fit_local_linear(&data, &x, &BandwidthVector::new(h).unwrap(), KernelSpec::Gaussian).unwrap();
        prop_assume!(!fit.condition_flag);
        let g = &fit.effective_weights;
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        for j in 0..3 {
            let m: f64 = data.rows().zip(g).map(|(r, g)| g * (r[j] - x[j])).sum();
            prop_assert!(m.abs() <= 1e-10, "moment {}: {}", j, m);
        }
    }

    #[test]
    fn rodeo_path_invariants(seed in 0u64..1000, soft in any::<bool>()) {
        let data = noisy(4, 150, seed);
        let x = [0.5; 4];
        let cfg = if soft {
            RodeoConfig { beta: 0.9, ..config(seed) }
        } else {
            config(seed)
        };
        let res = if soft { rodeo_soft(&data, &x, &cfg) } else { rodeo_hard(&data, &x, &cfg) }.unwrap();
        let h0 = initial_bandwidth(cfg.c0, data.n()).unwrap();
        let bound = ((h0 / cfg.h_floor).ln() / (1.0 / cfg.beta).ln()).ceil() as usize + 1;
        prop_assert!(res.stopping_time <= cfg.max_steps);
        prop_assert!(res.stopping_time <= bound);

        let mut h = vec![h0; 4];
        let mut gone = [false; 4];
        let mut last_step = 0;
        for rec in &res.trace {
            prop_assert!(rec.step >= last_step);
            last_step = rec.step;
            prop_assert!(!gone[rec.variable], "variable {} came back", rec.variable);
            prop_assert_eq!(rec.h_before, h[rec.variable]);
            match rec.action {
                StepAction::Shrunk => h[rec.variable] *= cfg.beta,
                _ => gone[rec.variable] = true,
            }
        }
        prop_assert_eq!(res.h_star.as_slice(), &h[..]);
        for &hj in &h {
            let k = (hj / h0).ln() / cfg.beta.ln();
            prop_assert!((k - k.round()).abs() < 1e-9 && k.round() >= 0.0);
            prop_assert!(k.round() as usize <= res.stopping_time);
        }
        if !soft {
            let refit = fit_local_linear(&data, &x, &res.h_star, cfg.kernel).unwrap();
            prop_assert_eq!(refit.estimate.to_bits(), res.estimate.to_bits());
        }
        let again = if soft { rodeo_soft(&data, &x, &cfg) } else { rodeo_hard(&data, &x, &cfg) }.unwrap();
        prop_assert_eq!(again, res);
    }

    #[test]
    fn prefit_absorbs_affine_trends(
        seed in 0u64..1000,
        a in -3.0..3.0f64,
        b in prop::collection::vec(-3.0..3.0f64, 3),
    ) {
        let data = noisy(3, 80, seed);
        let r0 = linear_prefit(&data, 0.0).unwrap().residual_data;
        let r1 = linear_prefit(&shifted(&data, a, &b), 0.0).unwrap().residual_data;
        for (u, v) in r0.y().iter().zip(r1.y()) {
            prop_assert!((u - v).abs() <= 1e-8);
        }
        let x = [0.5; 3];
        let h0 = rodeo_hard(&r0, &x, &config(seed)).unwrap();
        let h1 = rodeo_hard(&r1, &x, &config(seed)).unwrap();
        prop_assert_eq!(h0.h_star, h1.h_star);
        prop_assert!((h0.estimate - h1.estimate).abs() <= 1e-8);
    }

    #[test]
    fn global_statistic_signs(seed in 0u64..1000, s in 0.0..2.0f64, ds in 0.0..2.0f64) {
        let data = noisy(3, 40, seed);
        let pts = sample_eval_points(&data, 5, RngSeed::new(seed, 0)).unwrap();
        let h = BandwidthVector::uniform(0.5, 3).unwrap();
        let at = |sigma| global_statistic(&data, &pts, &h, KernelSpec::Gaussian, Smoother::LocalLinear, sigma).unwrap();
        let (lo, hi, zero) = (at(s), at(s + ds), at(0.0));
        for j in 0..3 {
            prop_assert!(lo.t[j] >= 0.0);
            prop_assert!(lo.lambda[j] <= hi.lambda[j]);
            prop_assert_eq!(zero.lambda[j], 0.0);
            prop_assert_eq!(lo.t[j], hi.t[j]);
        }
    }

    #[test]
    fn pair_distance_is_bounded(seed in 0u64..1000, j in 1usize..30) {
        let data = noisy(2, 40, seed);
        let diameter = data
            .rows()
            .flat_map(|a| data.rows().map(move |b| {
                a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
            }))
            .fold(0.0, f64::max);
        let small = sigma_rice(&data, j).unwrap().max_distance;
        let large = sigma_rice(&data, j + 1).unwrap().max_distance;
        prop_assert!(small <= large && large <= diameter);
    }

    #[test]
    fn summary_is_recomputable(
        h in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 2), 1..25),
        fail in prop::collection::vec(any::<bool>(), 25),
    ) {
        let rows: Vec<ReplicateRow> = h
            .iter()
            .enumerate()
            .map(|(i, h)| ReplicateRow {
                run: i,
                replicate: i,
                point: 0,
                x: vec![0.5, 0.5],
                estimate: h[0],
                truth: Some(0.0),
                sq_error: Some(h[0] * h[0]),
                stopping_time: i % 7,
                h: h.clone(),
                removed: 1,
                frozen: 1,
                unfinished: 0,
                error: (fail[i] && i > 0).then(|| "boom".to_string()),
            })
            .collect();
        let s = report_summary(&rows).unwrap();
        let good: Vec<&ReplicateRow> = rows.iter().filter(|r| r.ok()).collect();
        prop_assert_eq!(s.succeeded, good.len());
        prop_assert_eq!(s.failed, rows.len() - good.len());
        for j in 0..2 {
            let col: Vec<f64> = good.iter().map(|r| r.h[j]).collect();
            prop_assert_eq!(s.bandwidths[j], Quartiles::of(&col).unwrap());
        }
        let errs: Vec<f64> = good.iter().map(|r| r.sq_error.unwrap()).collect();
        prop_assert_eq!(s.sq_error, Quartiles::of(&errs));
        prop_assert_eq!(s.removed, good.len());
        prop_assert_eq!(report_summary(&rows).unwrap(), s);
    }
}
