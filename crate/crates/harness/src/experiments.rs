//! Reproduction experiments. Each one yields per-sample rows plus the
//! statistics derived from them; all randomness comes from per-sample
//! streams so rows do not depend on visiting order.

use std::collections::BTreeMap;

use flashdiff_core::data::{corrupt, Sample};
use flashdiff_core::degradations::{Degradation, ForwardOperator};
use flashdiff_core::numerics::{RngStream, Tensor};
use flashdiff_core::samplers::{ae_solve, ccdf_solve, flash_solve, snr_match, SolveResult};

use crate::config::{ExperimentConfig, FamilyKind};
use crate::error::{HarnessError, Result};
use crate::metrics::{mean, metrics, pearson, percentiles, permutation_pvalue, spearman, std_dev};
use crate::pipeline::{root_stream, Artifacts, OutDir};
use crate::report::{write_experiment, ExperimentOutput, MetricsRow, Stats, WarningRow};

pub const EXPERIMENTS: [&str; 5] = ["severity-curve", "correlation", "decomposition", "efficiency", "robustness"];

/// Validation-split sweep of the guidance strength; not part of `all`.
pub const TUNE_ETA: &str = "tune-eta";

pub const METRIC_NOTE: &str = "image-quality metrics are MSE, PSNR (unit peak) and the measurement \
residual |A(x_hat) - y|; FID is not computed at this scale";

/// Observation of a test sample under a family, shared by every method.
pub struct Measurement {
    pub y: Tensor,
    pub op: Degradation,
    pub t: f64,
}

pub fn measure(cfg: &ExperimentConfig, s: &Sample, kind: FamilyKind) -> Result<Measurement> {
    let t = s
        .t
        .ok_or_else(|| HarnessError::Invalid(format!("sample {} has no corruption level", s.id)))?;
    let mut rng = root_stream(cfg).domain(&format!("measure.{}", kind.tag()), s.id as u64);
    let c = corrupt(&s.image, t, cfg.family(kind), cfg.measurement.noise_std, &mut rng)?;
    Ok(Measurement { y: c.y, op: c.operator, t })
}

pub fn solve_stream(cfg: &ExperimentConfig, kind: FamilyKind, method: &str, id: usize) -> RngStream {
    root_stream(cfg).domain(&format!("solve.{}.{method}", kind.tag()), id as u64)
}

fn solve_samples<'a>(cfg: &ExperimentConfig, art: &'a Artifacts) -> &'a [Sample] {
    let test = &art.corpus.test;
    &test[..cfg.experiments.max_solve_samples.unwrap_or(test.len()).min(test.len())]
}

fn solve_row(s: &Sample, kind: FamilyKind, method: &str, t: f64, v_hat: Option<f64>, r: &SolveResult) -> Result<MetricsRow> {
    let (mse, psnr) = metrics(&r.reconstruction, &s.image)?;
    Ok(MetricsRow {
        id: s.id,
        family: kind.tag().into(),
        method: method.into(),
        t,
        tau: s.tau,
        v_hat,
        i_start: r.i_start,
        steps: r.steps_executed,
        mse,
        psnr,
        residual: r.residual,
    })
}

/// Row for a one-shot decode of the severity encoder's latent.
fn encoder_row(
    art: &Artifacts,
    s: &Sample,
    kind: FamilyKind,
    method: &str,
    t: f64,
    y: &Tensor,
    op: &impl ForwardOperator,
) -> Result<MetricsRow> {
    let out = art.sev(kind).forward(y)?;
    let x_hat = art.ae.decode(&out.z_hat)?;
    let (mse, psnr) = metrics(&x_hat, &s.image)?;
    Ok(MetricsRow {
        id: s.id,
        family: kind.tag().into(),
        method: method.into(),
        t,
        tau: s.tau,
        v_hat: Some(out.v_hat),
        i_start: snr_match(&art.sched, out.v_hat)?,
        steps: 0,
        mse,
        psnr,
        residual: op.apply(&x_hat)?.sub(y)?.norm(),
    })
}

fn rows_of<'a>(rows: &'a [MetricsRow], family: &str, method: &str) -> Vec<&'a MetricsRow> {
    rows.iter().filter(|r| r.family == family && r.method == method).collect()
}

fn v_hats(rows: &[&MetricsRow]) -> Vec<f64> {
    rows.iter().map(|r| r.v_hat.unwrap_or(f64::NAN)).collect()
}

fn level_method(level: f64) -> String {
    format!("level={level}")
}

pub fn severity_curve(cfg: &ExperimentConfig, art: &Artifacts) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    for kind in FamilyKind::ALL {
        let mut points = Vec::new();
        for s in &art.corpus.test {
            for &level in &cfg.experiments.severity_levels {
                // same stream at every level: identical noise and motion angles
                let mut rng = root_stream(cfg).domain(&format!("curve.{}", kind.tag()), s.id as u64);
                let c = corrupt(&s.image, level, cfg.family(kind), cfg.measurement.noise_std, &mut rng)?;
                let row = encoder_row(art, s, kind, &level_method(level), level, &c.y, &c.operator)?;
                points.push((level, row.v_hat.unwrap_or(f64::NAN)));
                out.rows.push(row);
            }
        }
        let means = cfg
            .experiments
            .severity_levels
            .iter()
            .map(|&l| (l, mean(&points.iter().filter(|p| p.0 == l).map(|p| p.1).collect::<Vec<_>>())))
            .collect();
        out.plots.push((format!("severity_curve_{}", kind.tag()), points));
        out.plots.push((format!("severity_curve_mean_{}", kind.tag()), means));
    }
    Ok(out)
}

/// Fraction of images whose `v_hat` never decreases as the level grows.
pub fn monotone_fraction(rows: &[MetricsRow], family: &str) -> (f64, usize) {
    let mut per_image: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.family == family && r.method.starts_with("level=")) {
        per_image.entry(r.id).or_default().push((r.t, r.v_hat.unwrap_or(f64::NAN)));
    }
    let n = per_image.len();
    let mut good = 0;
    for seq in per_image.values_mut() {
        seq.sort_by(|a, b| a.0.total_cmp(&b.0));
        if seq.windows(2).all(|w| w[1].1 >= w[0].1) {
            good += 1;
        }
    }
    (good as f64 / n.max(1) as f64, n)
}

pub fn severity_curve_stats(rows: &[MetricsRow]) -> Result<Stats> {
    let mut stats = Vec::new();
    for kind in FamilyKind::ALL {
        let (frac, n) = monotone_fraction(rows, kind.tag());
        stats.push((format!("monotone_fraction.{}", kind.tag()), frac));
        stats.push((format!("n_images.{}", kind.tag()), n as f64));
    }
    Ok(stats)
}

pub fn correlation(cfg: &ExperimentConfig, art: &Artifacts) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    for kind in FamilyKind::ALL {
        let mut points = Vec::new();
        for s in &art.corpus.test {
            let m = measure(cfg, s, kind)?;
            let row = encoder_row(art, s, kind, "severity", m.t, &m.y, &m.op)?;
            points.push((m.t, row.v_hat.unwrap_or(f64::NAN)));
            out.rows.push(row);
        }
        out.plots.push((format!("correlation_{}", kind.tag()), points));
    }
    Ok(out)
}

pub fn correlation_stats(rows: &[MetricsRow]) -> Result<Stats> {
    let mut stats = Vec::new();
    for kind in FamilyKind::ALL {
        let g = rows_of(rows, kind.tag(), "severity");
        let t: Vec<f64> = g.iter().map(|r| r.t).collect();
        let v = v_hats(&g);
        stats.push((format!("pearson_t_vhat.{}", kind.tag()), pearson(&t, &v)));
        stats.push((format!("spearman_t_vhat.{}", kind.tag()), spearman(&t, &v)));
        stats.push((format!("n.{}", kind.tag()), g.len() as f64));
    }
    Ok(stats)
}

pub fn decomposition(cfg: &ExperimentConfig, art: &Artifacts) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let id = flashdiff_core::degradations::IdentityOp;
    for kind in FamilyKind::ALL {
        let mut noisy_v = Vec::new();
        let mut full_v = Vec::new();
        let mut tau_points = Vec::new();
        for s in &art.corpus.test {
            let mut rng = root_stream(cfg).domain(&format!("noisy.{}", kind.tag()), s.id as u64);
            let mut y0 = s.image.clone();
            y0.axpy(cfg.measurement.noise_std, &rng.gaussian(s.image.shape()))?;
            let noisy = encoder_row(art, s, kind, "noisy", 0.0, &y0, &id)?;
            let m = measure(cfg, s, kind)?;
            let full = encoder_row(art, s, kind, "degraded", m.t, &m.y, &m.op)?;
            noisy_v.push(noisy.v_hat.unwrap_or(f64::NAN));
            full_v.push(full.v_hat.unwrap_or(f64::NAN));
            tau_points.push((s.tau, noisy.v_hat.unwrap_or(f64::NAN)));
            out.rows.push(noisy);
            out.rows.push(full);
        }
        let pn = percentiles(&noisy_v);
        let pf = percentiles(&full_v);
        out.plots.push((format!("decomposition_{}", kind.tag()), pn.into_iter().zip(pf).collect()));
        out.plots.push((format!("decomposition_tau_{}", kind.tag()), tau_points));
    }
    Ok(out)
}

pub fn decomposition_stats(cfg: &ExperimentConfig, rows: &[MetricsRow]) -> Result<Stats> {
    let mut stats = Vec::new();
    for kind in FamilyKind::ALL {
        let tag = kind.tag();
        let noisy = rows_of(rows, tag, "noisy");
        let full = rows_of(rows, tag, "degraded");
        let tau: Vec<f64> = noisy.iter().map(|r| r.tau).collect();
        let vn = v_hats(&noisy);
        let vf = v_hats(&full);
        let t: Vec<f64> = full.iter().map(|r| r.t).collect();
        let mut perm_rng = RngStream::new(cfg.seed, 2).domain(&format!("permutation.{tag}"), 0);
        stats.push((format!("pearson_tau_vnoisy.{tag}"), pearson(&tau, &vn)));
        stats.push((format!("spearman_tau_vnoisy.{tag}"), spearman(&tau, &vn)));
        stats.push((
            format!("permutation_p_tau_vnoisy.{tag}"),
            permutation_pvalue(&tau, &vn, cfg.experiments.permutations, &mut perm_rng),
        ));
        stats.push((format!("pearson_percentiles.{tag}"), pearson(&percentiles(&vn), &percentiles(&vf))));
        stats.push((format!("pearson_t_vdegraded.{tag}"), pearson(&t, &vf)));
    }
    Ok(stats)
}

pub fn ccdf_method(k: usize) -> String {
    format!("ccdf-k{k}")
}

pub fn efficiency(cfg: &ExperimentConfig, art: &Artifacts) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput {
        notes: vec![METRIC_NOTE.into()],
        ..Default::default()
    };
    for kind in FamilyKind::ALL {
        let tag = kind.tag();
        let guidance = cfg.guidance(kind);
        let se = art.sev(kind);
        for s in solve_samples(cfg, art) {
            let m = measure(cfg, s, kind)?;
            let (ae_res, v_hat) = ae_solve(se, &art.ae, &m.op, &m.y)?;
            out.timings.add(tag, "ae", ae_res.duration);
            out.rows.push(solve_row(s, kind, "ae", m.t, Some(v_hat), &ae_res)?);

            let mut rng = solve_stream(cfg, kind, "flash", s.id);
            let flash = flash_solve(se, &art.score, &art.ae, &m.op, &art.sched, &m.y, &guidance, &mut rng)?;
            if let Some(w) = flash.warning {
                out.warnings.push(WarningRow {
                    id: s.id,
                    family: tag.into(),
                    method: "flash".into(),
                    requested: w.requested,
                });
            }
            out.timings.add(tag, "flash", flash.solve.duration);
            out.rows.push(solve_row(s, kind, "flash", m.t, Some(flash.v_hat), &flash.solve)?);

            for &k in &cfg.experiments.fixed_steps {
                let method = ccdf_method(k);
                let mut rng = solve_stream(cfg, kind, &method, s.id);
                let r = ccdf_solve(&art.score, &art.ae, &m.op, &art.sched, &flash.z_hat, k, &m.y, &guidance, &mut rng)?;
                out.timings.add(tag, &method, r.duration);
                out.rows.push(solve_row(s, kind, &method, m.t, Some(flash.v_hat), &r)?);
            }
        }
        let methods: Vec<String> = std::iter::once("flash".to_string())
            .chain(cfg.experiments.fixed_steps.iter().map(|&k| ccdf_method(k)))
            .collect();
        let curve = methods
            .iter()
            .map(|m| {
                let g = rows_of(&out.rows, tag, m);
                let steps: Vec<f64> = g.iter().map(|r| r.steps as f64).collect();
                let mse: Vec<f64> = g.iter().map(|r| r.mse).collect();
                (mean(&steps), mean(&mse))
            })
            .collect();
        out.plots.push((format!("efficiency_{tag}"), curve));
        let flash_rows = rows_of(&out.rows, tag, "flash");
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for r in &flash_rows {
            *hist.entry(r.steps).or_default() += 1;
        }
        out.plots.push((
            format!("steps_hist_{tag}"),
            hist.into_iter().map(|(k, c)| (k as f64, c as f64)).collect(),
        ));
        out.plots.push((
            format!("steps_vs_vhat_{tag}"),
            flash_rows.iter().map(|r| (r.v_hat.unwrap_or(f64::NAN), r.steps as f64)).collect(),
        ));
    }
    Ok(out)
}

pub fn efficiency_stats(cfg: &ExperimentConfig, rows: &[MetricsRow]) -> Result<Stats> {
    let mut stats = Vec::new();
    for kind in FamilyKind::ALL {
        let tag = kind.tag();
        let flash = rows_of(rows, tag, "flash");
        let ae = rows_of(rows, tag, "ae");
        let flash_mse = mean(&flash.iter().map(|r| r.mse).collect::<Vec<_>>());
        let steps: Vec<f64> = flash.iter().map(|r| r.steps as f64).collect();
        let (best_k, best_mse) = cfg
            .experiments
            .fixed_steps
            .iter()
            .map(|&k| {
                let g = rows_of(rows, tag, &ccdf_method(k));
                (k, mean(&g.iter().map(|r| r.mse).collect::<Vec<_>>()))
            })
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        let below = flash
            .iter()
            .zip(&ae)
            .filter(|(f, a)| {
                debug_assert_eq!(f.id, a.id);
                f.residual < a.residual
            })
            .count();
        stats.push((format!("flash_mean_mse.{tag}"), flash_mse));
        stats.push((format!("best_ccdf_k.{tag}"), best_k as f64));
        stats.push((format!("best_ccdf_mean_mse.{tag}"), best_mse));
        stats.push((format!("flash_mse_ratio.{tag}"), flash_mse / best_mse));
        stats.push((format!("flash_mean_steps.{tag}"), mean(&steps)));
        stats.push((format!("flash_std_steps.{tag}"), std_dev(&steps)));
        stats.push((format!("flash_residual_below_ae.{tag}"), below as f64 / flash.len().max(1) as f64));
        stats.push((format!("ae_mean_mse.{tag}"), mean(&ae.iter().map(|r| r.mse).collect::<Vec<_>>())));
    }
    Ok(stats)
}

pub fn robustness_method(encoder: FamilyKind) -> String {
    format!("flash-enc-{}", encoder.tag())
}

/// Every severity encoder against every test-time family.
pub fn robustness(cfg: &ExperimentConfig, art: &Artifacts) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput {
        notes: vec![METRIC_NOTE.into()],
        ..Default::default()
    };
    for encoder in FamilyKind::ALL {
        for test in FamilyKind::ALL {
            let method = robustness_method(encoder);
            let guidance = cfg.guidance(test);
            for s in solve_samples(cfg, art) {
                let m = measure(cfg, s, test)?;
                let mut rng = solve_stream(cfg, test, "flash", s.id);
                let flash =
                    flash_solve(art.sev(encoder), &art.score, &art.ae, &m.op, &art.sched, &m.y, &guidance, &mut rng)?;
                if let Some(w) = flash.warning {
                    out.warnings.push(WarningRow {
                        id: s.id,
                        family: test.tag().into(),
                        method: method.clone(),
                        requested: w.requested,
                    });
                }
                out.timings.add(test.tag(), &method, flash.solve.duration);
                out.rows.push(solve_row(s, test, &method, m.t, Some(flash.v_hat), &flash.solve)?);
            }
        }
    }
    Ok(out)
}

pub fn robustness_stats(rows: &[MetricsRow]) -> Result<Stats> {
    let finite = rows
        .iter()
        .all(|r| r.mse.is_finite() && r.residual.is_finite() && r.v_hat.is_some_and(f64::is_finite));
    Ok(vec![
        ("rows".into(), rows.len() as f64),
        ("all_finite".into(), if finite { 1.0 } else { 0.0 }),
    ])
}

/// Solver-only run over the test split: adaptive by default, or fixed `k`.
pub fn solve(cfg: &ExperimentConfig, art: &Artifacts, kind: FamilyKind, fixed_steps: Option<usize>) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput {
        notes: vec![METRIC_NOTE.into()],
        ..Default::default()
    };
    let tag = kind.tag();
    let guidance = cfg.guidance(kind);
    let se = art.sev(kind);
    for s in solve_samples(cfg, art) {
        let m = measure(cfg, s, kind)?;
        match fixed_steps {
            Some(k) => {
                let method = ccdf_method(k);
                let z = se.forward(&m.y)?;
                let mut rng = solve_stream(cfg, kind, &method, s.id);
                let r = ccdf_solve(&art.score, &art.ae, &m.op, &art.sched, &z.z_hat, k, &m.y, &guidance, &mut rng)?;
                out.timings.add(tag, &method, r.duration);
                out.rows.push(solve_row(s, kind, &method, m.t, Some(z.v_hat), &r)?);
            }
            None => {
                let mut rng = solve_stream(cfg, kind, "flash", s.id);
                let f = flash_solve(se, &art.score, &art.ae, &m.op, &art.sched, &m.y, &guidance, &mut rng)?;
                if let Some(w) = f.warning {
                    out.warnings.push(WarningRow {
                        id: s.id,
                        family: tag.into(),
                        method: "flash".into(),
                        requested: w.requested,
                    });
                }
                out.timings.add(tag, "flash", f.solve.duration);
                out.rows.push(solve_row(s, kind, "flash", m.t, Some(f.v_hat), &f.solve)?);
            }
        }
    }
    Ok(out)
}

pub fn eta_method(eta: f64) -> String {
    format!("flash-eta={eta}")
}

/// Flash on the validation split for every `eta` in the grid.
pub fn tune_eta(cfg: &ExperimentConfig, art: &Artifacts) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput {
        notes: vec![METRIC_NOTE.into(), "validation split".into()],
        ..Default::default()
    };
    let val = &art.corpus.val;
    let samples = &val[..cfg.experiments.tune_samples.min(val.len())];
    for kind in FamilyKind::ALL {
        let tag = kind.tag();
        let se = art.sev(kind);
        let mut curve = Vec::new();
        for &eta in &cfg.experiments.eta_grid {
            let method = eta_method(eta);
            let mut guidance = cfg.guidance(kind);
            guidance.eta = eta;
            let mut mses = Vec::new();
            for s in samples {
                let m = measure(cfg, s, kind)?;
                let mut rng = solve_stream(cfg, kind, "flash", s.id);
                let f = flash_solve(se, &art.score, &art.ae, &m.op, &art.sched, &m.y, &guidance, &mut rng)?;
                out.timings.add(tag, &method, f.solve.duration);
                let row = solve_row(s, kind, &method, m.t, Some(f.v_hat), &f.solve)?;
                mses.push(row.mse);
                out.rows.push(row);
            }
            curve.push((eta, mean(&mses)));
        }
        out.plots.push((format!("tune_eta_{tag}"), curve));
    }
    Ok(out)
}

pub fn tune_eta_stats(cfg: &ExperimentConfig, rows: &[MetricsRow]) -> Result<Stats> {
    let mut stats = Vec::new();
    for kind in FamilyKind::ALL {
        let tag = kind.tag();
        let mut best = (f64::NAN, f64::INFINITY);
        for &eta in &cfg.experiments.eta_grid {
            let m = mean(&rows_of(rows, tag, &eta_method(eta)).iter().map(|r| r.mse).collect::<Vec<_>>());
            stats.push((format!("mean_mse.{tag}.eta={eta}"), m));
            if m < best.1 {
                best = (eta, m);
            }
        }
        stats.push((format!("best_eta.{tag}"), best.0));
    }
    Ok(stats)
}

fn count_stats(rows: &[MetricsRow]) -> Result<Stats> {
    Ok(vec![("rows".into(), rows.len() as f64)])
}

/// Runs one named experiment and writes its directory under `out`.
pub fn run_experiment(name: &str, cfg: &ExperimentConfig, out: &OutDir) -> Result<Stats> {
    if !EXPERIMENTS.contains(&name) && name != TUNE_ETA {
        return Err(HarnessError::UnknownExperiment(name.to_string()));
    }
    let art = Artifacts::load(cfg, out)?;
    let dir = out.experiment(name);
    let toml = cfg.to_toml();
    match name {
        "severity-curve" => write_experiment(&dir, &toml, severity_curve(cfg, &art)?, severity_curve_stats),
        "correlation" => write_experiment(&dir, &toml, correlation(cfg, &art)?, correlation_stats),
        "decomposition" => {
            write_experiment(&dir, &toml, decomposition(cfg, &art)?, |r| decomposition_stats(cfg, r))
        }
        "efficiency" => write_experiment(&dir, &toml, efficiency(cfg, &art)?, |r| efficiency_stats(cfg, r)),
        "robustness" => write_experiment(&dir, &toml, robustness(cfg, &art)?, robustness_stats),
        TUNE_ETA => write_experiment(&dir, &toml, tune_eta(cfg, &art)?, |r| tune_eta_stats(cfg, r)),
        _ => unreachable!("checked above"),
    }
}

pub fn run_solve(cfg: &ExperimentConfig, out: &OutDir, kind: FamilyKind, fixed_steps: Option<usize>) -> Result<Stats> {
    if let Some(k) = fixed_steps {
        if k == 0 || k > cfg.schedule.steps {
            return Err(HarnessError::Invalid(format!("--fixed-steps {k} outside 1..={}", cfg.schedule.steps)));
        }
    }
    let art = Artifacts::load(cfg, out)?;
    let dir = out.experiment(&format!("solve-{}", kind.tag()));
    write_experiment(&dir, &cfg.to_toml(), solve(cfg, &art, kind, fixed_steps)?, count_stats)
}
