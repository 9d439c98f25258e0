//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Criteria 4-11 train the full default pipeline twice (once stage by stage,
//! once through `run_all`) in temporary directories; expect several minutes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use flashdiff_core::autoencoder::Autoencoder;
use flashdiff_core::degradations::{DegradationFamily, ForwardOperator, GaussianBlurOp};
use flashdiff_core::latent_diffusion::{
    make_schedule, tweedie_from_eps, DiffusionSchedule, GaussianScoreOracle, NoisePredictor, ScoreModel,
};
use flashdiff_core::nn::{Activation, MlpNetwork, TimeEmbedding};
use flashdiff_core::numerics::{finite_diff_check, RngStream, Tensor};
use flashdiff_core::samplers::{ancestral_step, ldps_grad, snr_match};
use flashdiff_core::severity::{severity_loss, SeverityEncoder, SeverityLossWeights};
use flashdiff_harness::checkpoint::{load_checkpoint, Checkpoint};
use flashdiff_harness::experiments::{robustness_method, run_experiment, EXPERIMENTS};
use flashdiff_harness::pipeline;
use flashdiff_harness::report::{read_report, read_stats, stat, MetricsRow, ReportPaths, Stats};
use flashdiff_harness::{run_all, ExperimentConfig, FamilyKind, OutDir};

const GRAD_TOL: f64 = 1e-5;
const GRAD_INSTANCES: u64 = 20;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn fd(f: impl FnMut(&Tensor) -> f64, x: &Tensor, g: &Tensor) -> f64 {
    finite_diff_check(f, x, g, 1e-5).expect("finite difference probe")
}

fn random_image(rng: &mut RngStream, n: usize) -> Tensor {
    Tensor::new(vec![n, n], (0..n * n).map(|_| rng.uniform()).collect()).unwrap()
}

fn gradient_suite() -> Verdict {
    let started = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, err: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(err);
    };
    for trial in 0..GRAD_INSTANCES {
        let mut rng = RngStream::new(7000 + trial, 0);

        let net = MlpNetwork::new(&[7, 6, 5, 4], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let x = rng.gaussian(&[7]);
        let u = rng.gaussian(&[4]);
        let (_, cache) = net.forward(x.data()).unwrap();
        let (gx, grads) = net.vjp(&cache, u.data()).unwrap();
        note("mlp input", fd(|p| net.predict(p.data()).unwrap().dot(&u).unwrap(), &x, &gx));
        let mut probe = net.clone();
        let e = fd(
            |p| {
                probe.set_flat_params(p).unwrap();
                probe.predict(x.data()).unwrap().dot(&u).unwrap()
            },
            &net.flatten_params(),
            &grads.flatten(),
        );
        note("mlp params", e);

        let mut ae = Autoencoder::new([6, 6], &[10], 4, &mut rng).unwrap();
        ae.freeze();
        let z = rng.gaussian(&[4]);
        let u = rng.gaussian(&[6, 6]);
        let (_, cache) = ae.decode_with_cache(&z).unwrap();
        let g = ae.decode_vjp(&cache, &u).unwrap();
        note("decoder", fd(|p| ae.decode(p).unwrap().dot(&u).unwrap(), &z, &g));

        let blur = GaussianBlurOp::new(3, rng.uniform_range(0.2, 2.0)).unwrap();
        let img = random_image(&mut rng, 16);
        let u = rng.gaussian(&[16, 16]);
        let g = blur.vjp(&img, &u).unwrap();
        note("gaussian blur", fd(|p| blur.apply(p).unwrap().dot(&u).unwrap(), &img, &g));

        let t = rng.uniform();
        let nl = DegradationFamily::default_nonlinear().operator(t, &mut rng).unwrap();
        let g = nl.vjp(&img, &u).unwrap();
        note("nonlinear blur", fd(|p| nl.apply(p).unwrap().dot(&u).unwrap(), &img, &g));

        let mut sae = Autoencoder::new([4, 4], &[6], 4, &mut rng).unwrap();
        sae.freeze();
        let mut se = SeverityEncoder::from_autoencoder(&sae, &mut rng);
        let mut flat = se.flatten_params();
        for v in flat.data_mut() {
            *v += 0.1 * rng.normal();
        }
        se.set_flat_params(&flat).unwrap();
        let x0 = random_image(&mut rng, 4);
        let y = x0.map(|v| 0.8 * v + 0.05);
        let w = SeverityLossWeights::default();
        let (_, sg) = severity_loss(&se, &sae, &x0, &y, &w).unwrap();
        let mut probe = se.clone();
        let e = fd(
            |p| {
                probe.set_flat_params(p).unwrap();
                severity_loss(&probe, &sae, &x0, &y, &w).unwrap().0.total
            },
            &se.flatten_params(),
            &sg.flatten(),
        );
        note("severity loss", e);

        let sched = make_schedule(100, 1e-3, 0.05).unwrap();
        let score = ScoreModel::new(4, &[8], TimeEmbedding::new(4, 100.0).unwrap(), &mut rng).unwrap();
        let op = GaussianBlurOp::new(3, 1.0).unwrap();
        let z = rng.gaussian(&[4]);
        let y = rng.gaussian(&[6, 6]).scale(0.5);
        let i = rng.int_range(1, 100);
        let g = ldps_grad(&score, &ae, &op, &sched, &z, i, &y, true).unwrap();
        let objective = |p: &Tensor| {
            let eps = score.predict(&sched, p, i).unwrap();
            let z0 = tweedie_from_eps(&sched, p, &eps, i).unwrap();
            op.apply(&ae.decode(&z0).unwrap()).unwrap().sub(&y).unwrap().norm_sq()
        };
        note("ldps gradient", finite_diff_check(objective, &z, &g.grad, 1e-6).unwrap());
    }
    let elapsed = started.elapsed();
    let ok = worst.values().all(|&e| e <= GRAD_TOL) && elapsed < Duration::from_secs(60);
    let parts: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    verdict(
        ok,
        format!("{} instances each, max rel err: {}; {:.1}s", GRAD_INSTANCES, parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn oracle_sampler() -> Verdict {
    let started = Instant::now();
    let (d, chains) = (16, 5000);
    let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
    let oracle = GaussianScoreOracle::standard(d);
    let root = RngStream::new(2024, 7);
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for c in 0..chains {
        let mut rng = root.substream(c as u64);
        let mut z = rng.gaussian(&[d]);
        for i in (1..=sched.len()).rev() {
            z = ancestral_step(&oracle, &sched, &z, i, &mut rng).unwrap();
        }
        for k in 0..d {
            sum[k] += z.data()[k];
            sq[k] += z.data()[k] * z.data()[k];
        }
    }
    let n = chains as f64;
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for k in 0..d {
        let m = sum[k] / n;
        let v = (sq[k] / n - m * m) * n / (n - 1.0);
        worst_mean = worst_mean.max(m.abs());
        worst_var = worst_var.max((v - 1.0).abs());
    }
    let elapsed = started.elapsed();
    verdict(
        worst_mean <= 0.05 && worst_var <= 0.1 && elapsed < Duration::from_secs(300),
        format!(
            "max |mean| {worst_mean:.4} (<= 0.05), max |var/1 - 1| {worst_var:.4} (<= 0.10); {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn brute_force_match(sched: &DiffusionSchedule, v: f64) -> usize {
    let target = 1.0 / v;
    let mut best = (f64::INFINITY, 0);
    for i in 1..=sched.len() {
        let ab = sched.alpha_bar(i);
        let gap = (ab / (1.0 - ab) - target).abs();
        if gap < best.0 {
            best = (gap, i);
        }
    }
    best.1
}

fn snr_oracle() -> Verdict {
    let mut rng = RngStream::new(31337, 0);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let steps = rng.int_range(2, 1001);
        let b0 = 10f64.powf(rng.uniform_range(-5.0, -3.0));
        let b1 = rng.uniform_range(1e-3, 0.05).max(b0 * 1.01);
        let sched = make_schedule(steps, b0, b1).unwrap();
        let v = 10f64.powf(rng.uniform_range(-4.0, 4.0));
        if snr_match(&sched, v).unwrap() != brute_force_match(&sched, v) {
            mismatches += 1;
        }
    }
    let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
    let wrong_k = (1..=1000)
        .filter(|&k| {
            let ab = sched.alpha_bar(k);
            snr_match(&sched, (1.0 - ab) / ab).unwrap() != k
        })
        .count();
    verdict(
        mismatches == 0 && wrong_k == 0,
        format!("{mismatches}/1000 random pairs differ from brute force; {wrong_k}/1000 k not recovered"),
    )
}

fn stats_of(out: &OutDir, name: &str) -> Stats {
    read_stats(&ReportPaths::new(out.experiment(name)).stats()).expect("stats.csv")
}

fn get(stats: &Stats, key: &str) -> f64 {
    stat(stats, key).unwrap_or_else(|| panic!("missing stat {key}"))
}

fn tags() -> [&'static str; 2] {
    FamilyKind::ALL.map(|k| k.tag())
}

fn severity_monotone(out: &OutDir) -> Verdict {
    let s = stats_of(out, "severity-curve");
    let vals = tags().map(|t| get(&s, &format!("monotone_fraction.{t}")));
    verdict(
        vals.iter().all(|&v| v >= 0.85),
        format!("monotone fraction gaussian {:.3}, nonlinear {:.3} (>= 0.85)", vals[0], vals[1]),
    )
}

fn severity_correlation(out: &OutDir) -> Verdict {
    let s = stats_of(out, "correlation");
    let vals = tags().map(|t| get(&s, &format!("pearson_t_vhat.{t}")));
    verdict(
        vals.iter().all(|&v| v >= 0.7),
        format!("pearson(t, v_hat) gaussian {:.3}, nonlinear {:.3} (>= 0.7)", vals[0], vals[1]),
    )
}

fn severity_decomposition(out: &OutDir) -> Verdict {
    let s = stats_of(out, "decomposition");
    let mut ok = true;
    let mut parts = Vec::new();
    for t in tags() {
        let r = get(&s, &format!("pearson_tau_vnoisy.{t}"));
        let p = get(&s, &format!("permutation_p_tau_vnoisy.{t}"));
        ok &= r > 0.0 && p < 0.05;
        parts.push(format!("{t} r {r:.3} p {p:.3}"));
    }
    verdict(ok, format!("{} (need r > 0, p < 0.05)", parts.join(", ")))
}

fn adaptivity(out: &OutDir, efficiency_time: Duration) -> Verdict {
    let s = stats_of(out, "efficiency");
    let mut ok = efficiency_time < Duration::from_secs(20 * 60);
    let mut parts = Vec::new();
    for t in tags() {
        let flash = get(&s, &format!("flash_mean_mse.{t}"));
        let best = get(&s, &format!("best_ccdf_mean_mse.{t}"));
        let k = get(&s, &format!("best_ccdf_k.{t}"));
        let steps = get(&s, &format!("flash_mean_steps.{t}"));
        let sd = get(&s, &format!("flash_std_steps.{t}"));
        ok &= flash <= 1.05 * best && steps <= k && sd > 0.0;
        parts.push(format!(
            "{t} mse ratio {:.3} (<= 1.05), steps {steps:.1} vs k {k}, std {sd:.1}",
            flash / best
        ));
    }
    verdict(ok, format!("{}; {:.1}s", parts.join("; "), efficiency_time.as_secs_f64()))
}

fn consistency(out: &OutDir) -> Verdict {
    let s = stats_of(out, "efficiency");
    let vals = tags().map(|t| get(&s, &format!("flash_residual_below_ae.{t}")));
    verdict(
        vals.iter().all(|&v| v >= 0.7),
        format!("flash residual below AE: gaussian {:.3}, nonlinear {:.3} (>= 0.70)", vals[0], vals[1]),
    )
}

fn rows_for<'a>(rows: &'a [MetricsRow], family: &str, method: &str) -> Vec<&'a MetricsRow> {
    rows.iter().filter(|r| r.family == family && r.method == method).collect()
}

fn robustness_grid(out: &OutDir) -> Verdict {
    let rob = read_report(&ReportPaths::new(out.experiment("robustness")).report()).expect("robustness report");
    let eff = read_report(&ReportPaths::new(out.experiment("efficiency")).report()).expect("efficiency report");
    let finite = rob
        .iter()
        .all(|r| r.mse.is_finite() && r.psnr.is_finite() && r.residual.is_finite() && r.v_hat.is_some_and(f64::is_finite));
    let mut cells = 0;
    let mut matched_ok = true;
    for enc in FamilyKind::ALL {
        for test in FamilyKind::ALL {
            let cell = rows_for(&rob, test.tag(), &robustness_method(enc));
            if !cell.is_empty() {
                cells += 1;
            }
            if enc == test {
                let main = rows_for(&eff, test.tag(), "flash");
                matched_ok &= main.len() == cell.len()
                    && main.iter().zip(&cell).all(|(a, b)| {
                        let mut b = (*b).clone();
                        b.method = a.method.clone();
                        bits(a) == bits(&b)
                    });
            }
        }
    }
    verdict(
        finite && cells == 4 && matched_ok,
        format!("{cells}/4 cells, all finite {finite}, matched cells bit-equal to efficiency flash rows {matched_ok}"),
    )
}

fn bits(r: &MetricsRow) -> (usize, String, String, [u64; 5], Option<u64>, usize, usize) {
    (
        r.id,
        r.family.clone(),
        r.method.clone(),
        [r.t, r.tau, r.mse, r.psnr, r.residual].map(f64::to_bits),
        r.v_hat.map(f64::to_bits),
        r.i_start,
        r.steps,
    )
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.file_name().unwrap().to_string_lossy();
                if !name.starts_with("timing") {
                    out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
                }
            }
        }
    }
    out
}

fn corruptions(bytes: &[u8]) -> Vec<(String, Vec<u8>)> {
    let mut cases = Vec::new();
    let mut b = bytes.to_vec();
    b[0] = b'X';
    cases.push(("bad magic".into(), b));
    let mut b = bytes.to_vec();
    b[4] = 2;
    cases.push(("bad version".into(), b));
    let mut b = bytes.to_vec();
    b[12] = 1;
    cases.push(("nonzero reserved".into(), b));
    let mut b = bytes.to_vec();
    b.push(0);
    cases.push(("trailing byte".into(), b));
    let mut b = bytes.to_vec();
    b[14] = 0xff;
    b[15] = 0xff;
    cases.push(("oversized name length".into(), b));
    for cut in [0, 3, 13, 14, 20, bytes.len() / 2, bytes.len() - 1] {
        cases.push((format!("truncated to {cut}"), bytes[..cut].to_vec()));
    }
    cases
}

fn determinism_and_io(a: &OutDir, b: &OutDir) -> Verdict {
    let fa = files(&a.root);
    let fb = files(&b.root);
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let reports = fa.keys().filter(|k| k.ends_with("report.csv")).count();

    let mut round_trip_ok = true;
    let mut loud = 0;
    let mut silent = Vec::new();
    let mut n_ckpt = 0;
    for (name, bytes) in fa.iter().filter(|(k, _)| k.extension().is_some_and(|e| e == "fldc")) {
        n_ckpt += 1;
        let ckpt = load_checkpoint(&a.root.join(name)).expect("checkpoint loads");
        round_trip_ok &= ckpt.to_bytes().unwrap() == *bytes;
        let again = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
        round_trip_ok &= again.names().eq(ckpt.names())
            && again.names().all(|n| {
                let (x, y) = (again.get(n).unwrap(), ckpt.get(n).unwrap());
                x.shape() == y.shape() && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
            });
        for (what, bad) in corruptions(bytes) {
            match Checkpoint::from_bytes(&bad) {
                Err(e) if e.to_string().contains("offset") => loud += 1,
                _ => silent.push(format!("{}: {what}", name.display())),
            }
        }
    }
    let ok = differing.is_empty() && reports >= EXPERIMENTS.len() && n_ckpt > 0 && round_trip_ok && silent.is_empty();
    verdict(
        ok,
        format!(
            "{} files compared ({reports} report.csv), differing: {:?}; {n_ckpt} checkpoints round-trip {round_trip_ok}; \
             {loud} corruptions rejected with offsets, accepted: {:?}",
            fa.len(),
            differing,
            silent
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u8, &str, Verdict)> = Vec::new();
    let mut report = |id: u8, name: &'static str, v: Verdict| {
        println!("{} criterion {id:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };

    report(1, "gradient suite", gradient_suite());
    report(2, "oracle ancestral sampler", oracle_sampler());
    report(3, "snr_match oracle equivalence", snr_oracle());

    let cfg = ExperimentConfig::default();
    let tmp_a = tempfile::tempdir().expect("tempdir");
    let tmp_b = tempfile::tempdir().expect("tempdir");
    let a = OutDir::new(tmp_a.path());
    let b = OutDir::new(tmp_b.path());

    let started = Instant::now();
    pipeline::gen_data(&cfg, &a).expect("gen-data");
    pipeline::train_ae(&cfg, &a).expect("train-ae");
    pipeline::train_score_stage(&cfg, &a).expect("train-score");
    pipeline::train_sev_stage(&cfg, &a).expect("train-sev");
    let mut efficiency_time = Duration::ZERO;
    for name in EXPERIMENTS {
        let t = Instant::now();
        run_experiment(name, &cfg, &a).expect("experiment");
        if name == "efficiency" {
            efficiency_time = t.elapsed();
        }
    }
    let pipeline_time = started.elapsed();
    eprintln!("pipeline finished in {:.1}s; rerunning for determinism", pipeline_time.as_secs_f64());
    run_all(&cfg, &b).expect("rerun");

    report(4, "severity monotonicity", severity_monotone(&a));
    report(5, "severity correlation", severity_correlation(&a));
    report(6, "severity decomposition", severity_decomposition(&a));
    report(7, "adaptivity", adaptivity(&a, efficiency_time));
    report(8, "consistency improvement", consistency(&a));
    report(9, "robustness grid", robustness_grid(&a));
    report(10, "determinism and IO", determinism_and_io(&a, &b));
    report(
        11,
        "end-to-end budget",
        verdict(
            pipeline_time <= Duration::from_secs(45 * 60),
            format!("{:.1}s (<= 2700s)", pipeline_time.as_secs_f64()),
        ),
    );

    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{}/{} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
