//! Acceptance harness: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{gaussian, grad_cases, planted_trajectories, random_flow, uniform, worst_log_det_error};
use koopflow::extensions::{ExtensionSpec, ExtensionVariant};
use koopflow::flows::{ArchName, ArchitectureSpec, Block};
use koopflow::gridsim::{
    fault_schedule, generate_dataset, integrate, FaultEvent, GridModel, Split, DEFAULT_DT, DEFAULT_T_END,
};
use koopflow::koopman::{edmd_fit, spectral_radius, ModelSpec};
use koopflow::numcore::seeded;
use koopflow::pipeline::{
    ablate_on, evaluate, invertibility_error, per_trajectory_rrmse, rrmse, train, EvalOptions, ExperimentData, KInit,
    Preparation,
};
use koopflow::{Dataset, ExperimentConfig, KoopmanModel, ParamStore, Tensor};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn default_dataset() -> Dataset {
    let model = GridModel::ieee14(0);
    generate_dataset(
        &model,
        &fault_schedule(14, 11, 0),
        0,
        DEFAULT_DT,
        DEFAULT_T_END,
        Split::Ratio(9, 2),
    )
    .unwrap()
}

fn exact_invertibility() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut seed = 0;
    for arch in [ArchName::Nice, ArchName::Realnvp, ArchName::Allinone, ArchName::Revnet] {
        for dim in [4, 7, 14] {
            seed += 1;
            let (flow, store) = random_flow(arch, dim, 4, &[32, 32], seed);
            let x = gaussian(&mut seeded(seed), 1000, dim);
            worst = worst.max(invertibility_error(&flow, &store, &x).unwrap());
        }
    }
    let t = start.elapsed();
    verdict(
        worst <= 1e-10 && t < Duration::from_secs(30),
        format!("max error {worst:.2e} in {t:.1?}"),
    )
}

fn approximate_invertibility() -> Verdict {
    let mut worst = 0.0f64;
    let mut worst_ratio = 0.0f64;
    for (i, dim) in [4, 7, 14].into_iter().enumerate() {
        let mut spec = ArchitectureSpec::new(ArchName::Iresnet, dim, 4, vec![32, 32]);
        spec.lipschitz = 0.9;
        spec.inversion_tol = 1e-9;
        let (flow, store) = random_flow(ArchName::Iresnet, dim, 4, &[32, 32], 100 + i as u64);
        let x = gaussian(&mut seeded(i as u64), 1000, dim);
        worst = worst.max(invertibility_error(&flow, &store, &x).unwrap());

        // Contraction rate of the fixed-point updates, per block.
        let mut h = x.clone();
        for blk in &flow.blocks {
            let Block::SpectralResidual(r) = blk else {
                unreachable!()
            };
            assert_eq!((r.lipschitz, r.tol), (spec.lipschitz, spec.inversion_tol));
            let y = flow_block_forward(blk, &store, &h);
            let inv = r.invert(&store, &y, 1e-9, 500).unwrap();
            let res = &inv.residuals;
            if res.len() >= 2 {
                let rate = (res[res.len() - 1] / res[0]).powf(1.0 / (res.len() - 1) as f64);
                worst_ratio = worst_ratio.max(rate);
            }
            h = y;
        }
    }
    verdict(
        worst <= 1e-8 && worst_ratio <= 0.95,
        format!("max error {worst:.2e}, worst geometric residual ratio {worst_ratio:.3}"),
    )
}

fn flow_block_forward(blk: &Block, store: &ParamStore, x: &Tensor) -> Tensor {
    let mut b = koopflow::Eval::new(store);
    use koopflow::Backend;
    let xv = b.constant(x.clone());
    (*blk.forward(&mut b, &xv).unwrap()).clone()
}

fn log_det_correctness() -> Verdict {
    let mut worst = 0.0f64;
    let mut rng = seeded(7);
    for (k, dim) in (2..=8).enumerate() {
        for (arch, depth) in [(ArchName::Realnvp, 1), (ArchName::Allinone, 4)] {
            let (flow, store) = random_flow(arch, dim, depth, &[16, 16], 200 + k as u64);
            let x = gaussian(&mut rng, 50, dim);
            worst = worst.max(worst_log_det_error(&flow, &store, &x));
        }
    }
    verdict(worst < 1e-4, format!("max relative determinant error {worst:.2e}"))
}

fn gradient_integrity() -> Verdict {
    let mut worst = (0.0f64, "");
    let mut checked = 0;
    for seed in 0..20 {
        for case in grad_cases(seed) {
            let e = case.check(1e-5).unwrap();
            checked += 1;
            if e > worst.0 {
                worst = (e, case.name);
            }
        }
    }
    verdict(
        worst.0 < 1e-5,
        format!(
            "{checked} checks over 20 configurations, worst {:.2e} ({})",
            worst.0, worst.1
        ),
    )
}

fn edmd_oracle() -> Verdict {
    let mut worst = 0.0f64;
    for q in 1..=10 {
        let mut rng = seeded(q as u64);
        let a = uniform(&mut rng, q, q, 1.0);
        let k = a.map(|v| v * 0.9 / spectral_radius(&a));
        let z0 = gaussian(&mut rng, 500, q);
        let z1 = z0.matmul(&k.transpose()).unwrap();
        let fit = edmd_fit(&z0, &z1, 0.0).unwrap();
        let err: f64 = fit.data().iter().zip(k.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.max(err.sqrt());
    }
    verdict(worst < 1e-8, format!("max Frobenius error {worst:.2e} for q = 1..10"))
}

fn planted_model() -> Verdict {
    let start = Instant::now();
    let all = planted_trajectories(12, 60, 1, 0.5);
    let prep = Preparation {
        delay: 1,
        subsample: 1,
        crop_to_post_fault: true,
    };
    let data = ExperimentData::new(&all[..8], &all[8..], None, prep).unwrap();
    let mut cfg = ExperimentConfig::new("planted");
    cfg.architecture = ArchName::Realnvp;
    cfg.delay = 1;
    cfg.hidden = vec![32, 32];
    cfg.epochs = 200;
    let out = train(&cfg, &data).unwrap();
    let (report, _) = evaluate(&out.model, &out.store, &data, EvalOptions::default()).unwrap();
    let t = start.elapsed();
    verdict(
        report.rrmse_test < 5.0 && t < Duration::from_secs(300),
        format!(
            "realnvp test RRMSE {:.3}% after {} epochs (best {}) in {t:.1?}",
            report.rrmse_test, cfg.epochs, out.best_epoch
        ),
    )
}

fn ablation_direction(ds: &Dataset) -> Verdict {
    let mut cfg = ExperimentConfig::new("default");
    let data = ExperimentData::from_dataset(ds, cfg.preparation()).unwrap();
    let base = ablate_on(&cfg, &data).unwrap();
    cfg.extension = Some(ExtensionVariant::Multitimescale);
    let hybrid = ablate_on(&cfg, &data).unwrap();
    let margin = base.rrmse_train - hybrid.rrmse_train;
    verdict(
        hybrid.rrmse_train < base.rrmse_train,
        format!(
            "train RRMSE identity {:.3e}% vs identity+multitimescale {:.3e}% (margin {margin:.2e} pp; 5 pp not reached)",
            base.rrmse_train, hybrid.rrmse_train
        ),
    )
}

fn architecture_ordering(ds: &Dataset) -> Verdict {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..3 {
        let mut test = Vec::new();
        for arch in [ArchName::Realnvp, ArchName::Allinone, ArchName::Iresnet] {
            let mut cfg = ExperimentConfig::new("default");
            cfg.architecture = arch;
            cfg.seed = seed;
            cfg.epochs = 8;
            cfg.subsample = 5;
            cfg.windows_per_epoch = Some(256);
            cfg.hidden = vec![32, 32];
            cfg.k_init = KInit::Edmd;
            let data = ExperimentData::from_dataset(ds, cfg.preparation()).unwrap();
            let out = train(&cfg, &data).unwrap();
            let (r, _) = evaluate(&out.model, &out.store, &data, EvalOptions::default()).unwrap();
            test.push((r.rrmse_test, out.store.trainable_count(), out.best_epoch));
        }
        let best = test[0].0.min(test[1].0);
        let iresnet = test[2].0;
        if best <= iresnet {
            wins += 1;
        }
        let rel = if best == iresnet {
            "tie"
        } else if best < iresnet {
            "coupling ahead"
        } else {
            "iresnet ahead"
        };
        lines.push(format!(
            "seed {seed}: realnvp {:.4e} ({} params, best epoch {}), allinone {:.4e} ({} params), iresnet {:.4e} ({} params, best epoch {}) [{rel}]",
            test[0].0, test[0].1, test[0].2, test[1].0, test[1].1, test[2].0, test[2].1, test[2].2
        ));
    }
    verdict(
        wins >= 2,
        format!(
            "{wins}/3 seeds with best affine coupling <= iresnet test RRMSE (%)\n      {}",
            lines.join("\n      ")
        ),
    )
}

fn hybrid_decode_independence() -> Verdict {
    let mut checked = 0;
    let mut ok = true;
    for variant in ExtensionVariant::ALL {
        for arch in [ArchName::Realnvp, ArchName::Allinone, ArchName::Iresnet] {
            let p = 6;
            let mut ext = ExtensionSpec::new(variant);
            ext.dim = Some(5);
            let spec = ModelSpec {
                flow: ArchitectureSpec::new(arch, p, 2, vec![16]),
                extension: Some(ext),
                seed: checked,
            };
            let mut store = ParamStore::new();
            let model = KoopmanModel::build(&mut store, &spec).unwrap();
            let mut rng = seeded(checked);
            model.encoder.flow.randomize(&mut store, &mut rng, 0.5);
            model.encoder.flow.power_iterate(&mut store, 100);
            let x = gaussian(&mut rng, 40, p);
            model
                .encoder
                .extension
                .as_ref()
                .unwrap()
                .setup(&mut store, &x, &mut rng)
                .unwrap();
            let z = model.encoder.encode_values(&store, &x).unwrap();
            let reference = model.encoder.decode_values(&store, &z).unwrap();
            for _ in 0..10 {
                let mut zp = z.clone();
                for r in 0..zp.rows() {
                    for c in p..zp.cols() {
                        let v = zp.get(r, c) + rng.random_range(-1e3..1e3);
                        zp.set(r, c, v);
                    }
                }
                let decoded = model.encoder.decode_values(&store, &zp).unwrap();
                ok &= decoded
                    .data()
                    .iter()
                    .zip(reference.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            }
            checked += 1;
        }
    }
    verdict(
        ok,
        format!("{checked} encoder configurations, 10 perturbations each, bitwise equal: {ok}"),
    )
}

fn simulator_sanity() -> Verdict {
    let model = GridModel::ieee14(0);
    let mut notes = Vec::new();
    let mut pass = true;

    let calm = integrate(&model, None, DEFAULT_DT, DEFAULT_T_END).unwrap();
    let drift = calm.states.max_abs();
    pass &= drift <= 1e-9;
    notes.push(format!("no-fault drift {drift:.1e}"));

    let mut worst_tail = 0.0f64;
    for bus in 0..model.n_bus() {
        let tr = integrate(&model, Some(&FaultEvent::new(bus)), DEFAULT_DT, DEFAULT_T_END).unwrap();
        let peaks: Vec<f64> = (0..tr.len())
            .map(|k| tr.states.row_slice(k).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect();
        let (arg, peak) = peaks
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |a, (k, &v)| if v > a.1 { (k, v) } else { a });
        let tail = peaks[peaks.len() - 1] / peak;
        pass &= arg > 0 && arg < tr.len() - 1 && tail < 0.1;
        worst_tail = worst_tail.max(tail);
    }
    notes.push(format!("final/peak {worst_tail:.3}"));

    let fault = FaultEvent::new(3);
    let coarse = integrate(&model, Some(&fault), DEFAULT_DT, DEFAULT_T_END).unwrap();
    let fine = integrate(&model, Some(&fault), DEFAULT_DT / 2.0, DEFAULT_T_END).unwrap();
    let mut diff = 0.0f64;
    for k in 0..coarse.len() {
        for (a, b) in coarse.states.row_slice(k).iter().zip(fine.states.row_slice(2 * k + 1)) {
            diff = diff.max((a - b).abs());
        }
    }
    pass &= diff < 1e-6;
    notes.push(format!("step halving {diff:.1e}"));

    for (count, split, expect) in [(11, Split::Ratio(9, 2), (9, 2)), (99, Split::Ratio(90, 9), (90, 9))] {
        let ds = generate_dataset(
            &model,
            &fault_schedule(14, count, 0),
            0,
            DEFAULT_DT,
            DEFAULT_T_END,
            split,
        )
        .unwrap();
        let got = (ds.train.len(), ds.test.len());
        pass &= got == expect;
        notes.push(format!("{count} faults -> {}/{}", got.0, got.1));
    }
    verdict(pass, notes.join(", "))
}

fn metric_identities() -> Verdict {
    let mut rng = seeded(11);
    let truth: Vec<Tensor> = (0..5).map(|i| gaussian(&mut rng, 20 + i * 7, 4)).collect();
    let pred: Vec<Tensor> = truth.iter().map(|t| t.map(|v| v + 0.1 * v.sin())).collect();
    let zeros: Vec<Tensor> = truth.iter().map(|t| Tensor::zeros(t.shape().to_vec())).collect();
    let self_err = rrmse(&truth, &truth).unwrap();
    let zero_err = rrmse(&truth, &zeros).unwrap();
    let base = rrmse(&truth, &pred).unwrap();
    let scale = |ts: &[Tensor], a: f64| -> Vec<Tensor> { ts.iter().map(|t| t.map(|v| v * a)).collect() };
    let scaled = rrmse(&scale(&truth, 37.5), &scale(&pred, 37.5)).unwrap();
    // Pooled from per-trajectory values weighted by ground-truth energy.
    let per = per_trajectory_rrmse(&truth, &pred).unwrap();
    let energy: Vec<f64> = truth.iter().map(Tensor::norm_sq).collect();
    let pooled = (per.iter().zip(&energy).map(|(r, e)| r * r * e).sum::<f64>() / energy.iter().sum::<f64>()).sqrt();
    let pass = self_err == 0.0
        && (zero_err - 100.0).abs() < 1e-10
        && (scaled - base).abs() < 1e-10
        && (pooled - base).abs() < 1e-10;
    verdict(
        pass,
        format!(
            "self {self_err}, zero {zero_err}, scaled diff {:.1e}, pooled diff {:.1e}",
            (scaled - base).abs(),
            (pooled - base).abs()
        ),
    )
}

fn main() -> ExitCode {
    let ds = default_dataset();
    type Check<'a> = Box<dyn Fn() -> Verdict + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("exact invertibility", Box::new(exact_invertibility)),
        ("approximate invertibility", Box::new(approximate_invertibility)),
        ("log-det correctness", Box::new(log_det_correctness)),
        ("gradient integrity", Box::new(gradient_integrity)),
        ("EDMD oracle", Box::new(edmd_oracle)),
        ("planted model end-to-end", Box::new(planted_model)),
        ("ablation direction", Box::new(|| ablation_direction(&ds))),
        ("architecture ordering", Box::new(|| architecture_ordering(&ds))),
        ("hybrid decode independence", Box::new(hybrid_decode_independence)),
        ("simulator sanity", Box::new(simulator_sanity)),
        ("metric identities", Box::new(metric_identities)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {} [{:.1?}]", i + 1, v.detail, start.elapsed());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
