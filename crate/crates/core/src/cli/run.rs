//! Experiment dispatch and output emission.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::cache::{cache_dir, load_or_assemble, CacheStatus};
use super::config::{Experiment, RunConfig, SCHEMA_VERSION};
use crate::dynamics::rte_diagnostic;
use crate::dyson::{
    atomic_tail, brute_force_correlation, omega_q_bound, omega_q_exact, trace_inequality_checks, wick_expectation,
    FiniteVolumeModel, SegmentPartition,
};
use crate::error::{Error, Result};
use crate::kms::{
    interacting_kms_vector, kernel_residual, overlap_decomposition_check, overlap_sweep, projection_distance,
    reference_vector, StateVector, SweepSetup,
};
use crate::liouvillian::LiouvillianBundle;
use crate::model::{c_p_beta, fgr_value, validate_a1, ModelSpec};
use crate::operator::C64;
use crate::spectral::{
    auto_pc_parameters, choose_pc_parameters, gamma0_matrix, low_spectrum, pc_positivity_probe, regularized_lso,
    virial_check,
};

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// 0 when every check inside the experiment passed, 1 otherwise.
    pub status: i32,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

struct Emitter {
    prefix: PathBuf,
    files: Vec<PathBuf>,
}

impl Emitter {
    fn path(&self, suffix: &str) -> PathBuf {
        let mut s = self.prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    }

    fn write(&mut self, suffix: &str, contents: &str) -> Result<()> {
        let p = self.path(suffix);
        fs::write(&p, contents)?;
        self.files.push(p);
        Ok(())
    }

    fn json(&mut self, suffix: &str, v: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(v).map_err(|e| Error::Numerical(e.to_string()))?;
        self.write(suffix, &(text + "\n"))
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    spec: ModelSpec,
    bundle: Option<LiouvillianBundle>,
}

impl Ctx<'_> {
    fn bundle(&self) -> &LiouvillianBundle {
        self.bundle.as_ref().expect("bundle assembled for this experiment")
    }
}

fn report(passed: bool, body: Value) -> Value {
    let mut v = json!({ "schema_version": SCHEMA_VERSION, "passed": passed });
    if let (Value::Object(a), Value::Object(b)) = (&mut v, body) {
        a.extend(b);
    }
    v
}

fn fv_model(cx: &Ctx) -> Result<FiniteVolumeModel> {
    let cfg = cx.cfg;
    FiniteVolumeModel::lattice(
        cx.spec.atom.clone(),
        &cx.spec.couplings,
        cfg.param_f64("box", 2.0 * PI)?,
        cfg.param_usize("n_cut", 2)?,
        cx.spec.beta,
        cx.spec.lambda,
    )
}

/// Shortest round-trip text; exponent form outside `[1e-5, 1e16)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn level_projector(d: usize, level: usize) -> Result<DMatrix<C64>> {
    if level >= d {
        return Err(Error::Config(format!("level {level} outside the {d}-level atom")));
    }
    let mut p = DMatrix::zeros(d, d);
    p[(level, level)] = C64::new(1.0, 0.0);
    Ok(p)
}

fn exec(cx: &Ctx, out: &mut Emitter) -> Result<(bool, String)> {
    let cfg = cx.cfg;
    let spec = &cx.spec;
    match cfg.experiment {
        Experiment::Validate => {
            let rep = validate_a1(spec);
            let fgr = fgr_value(spec);
            let passed = rep.passed && fgr > 0.0;
            out.json(".json", &report(passed, json!({ "checks": rep.checks, "fgr_value": fgr })))?;
            Ok((passed, format!("{} (fgr_value {fgr:.6e})", if passed { "PASS" } else { "FAIL" })))
        }
        Experiment::Fgr => {
            let fgr = fgr_value(spec);
            let g0 = gamma0_matrix(spec)?;
            let cpb = c_p_beta(spec)?;
            out.json(".json", &report(true, json!({ "fgr_value": fgr, "c_p_beta": cpb, "gamma0": g0 })))?;
            Ok((true, format!("fgr_value {fgr:.6e}, gap {:.6e}", g0.gap)))
        }
        Experiment::Spectrum => {
            let count = cfg.param_usize("count", 6)?;
            let tol = cfg.param_f64("tol", 1e-8)?;
            let r = low_spectrum(&cx.bundle().l_lambda(), count, tol)?;
            out.json(".json", &report(true, json!({ "eigenvalues": r.eigenvalues, "residuals": r.residuals })))?;
            Ok((true, format!("{} eigenvalues", r.eigenvalues.len())))
        }
        Experiment::Kms => {
            let b = cx.bundle();
            let psi = interacting_kms_vector(b)?;
            let omega0 = reference_vector(spec, &b.basis);
            let dec = overlap_decomposition_check(b, &psi);
            let res = kernel_residual(b, &psi);
            out.json(
                ".json",
                &report(
                    true,
                    json!({
                        "dim": b.dim(),
                        "kernel_residual": res,
                        "overlap_distance": projection_distance(&psi, &omega0),
                        "n_expectation": dec.n_term,
                        "decomposition": dec,
                    }),
                ),
            )?;
            Ok((true, format!("kernel residual {res:.3e}")))
        }
        Experiment::OverlapSweep => {
            let betas = cfg.param_f64_list("betas", &[spec.beta])?;
            let lambdas = cfg.param_f64_list("lambdas", &[spec.lambda])?;
            let setup = SweepSetup {
                grid: cfg.bath_grid()?,
                n_total_max: cfg.truncation.n_total_max,
            };
            let recs = overlap_sweep(spec, &setup, &betas, &lambdas);
            let mut csv = String::from("beta,lambda,overlap_distance,kernel_residual,n_expectation\n");
            for r in &recs {
                let cells = [r.beta, r.lambda, r.overlap_distance, r.kernel_residual, r.n_expectation].map(fmt_f64);
                csv.push_str(&cells.join(","));
                csv.push('\n');
            }
            out.write(".csv", &csv)?;
            let failed = recs.iter().filter(|r| r.extras.contains_key("failed")).count();
            Ok((failed == 0, format!("{} points, {failed} failed", recs.len())))
        }
        Experiment::Lso => {
            let eps = cfg.param_f64_list("epsilons", &[0.2, 0.1, 0.05])?;
            let g0 = gamma0_matrix(spec)?;
            let mut mats = Vec::new();
            for &e in &eps {
                let m = regularized_lso(cx.bundle(), e)?;
                let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect();
                mats.push(json!({ "epsilon": e, "matrix": rows }));
            }
            out.json(".json", &report(true, json!({ "gamma0": g0, "regularized": mats })))?;
            Ok((true, format!("gap {:.6e}", g0.gap)))
        }
        Experiment::Virial => {
            let b = cx.bundle();
            let e = cfg.param_f64("e", 0.6)?;
            let t = cfg.param_f64("t", 0.1)?;
            let params = match cfg.params.get("nu") {
                Some(_) => choose_pc_parameters(spec.lambda, cfg.param_f64("nu", 1.2)?, e, t, gamma0_matrix(spec)?.gap)?,
                None => auto_pc_parameters(b, e, t)?,
            };
            let psi = interacting_kms_vector(b)?;
            let (bexp, nratio) = virial_check(b, &params, &psi)?;
            let res = kernel_residual(b, &psi);
            out.json(
                ".json",
                &report(true, json!({ "params": params, "b_expectation": bexp, "n_bound_ratio": nratio, "kernel_residual": res })),
            )?;
            Ok((true, format!("<B> {bexp:.3e}, N ratio {nratio:.3}")))
        }
        Experiment::Evolve => {
            let b = cx.bundle();
            let d = spec.dim();
            let level = cfg.param_usize("level", 1)?;
            let init = cfg.param_usize("initial_level", 1)?;
            level_projector(d, init)?;
            let a = b.atomic_observable(&level_projector(d, level)?);
            let mut v = vec![C64::new(0.0, 0.0); b.dim()];
            v[b.index(init, init, 0)] = C64::new(1.0, 0.0);
            let t_rec = 2.0 * PI / b.grid.min_spacing();
            let t_final = cfg.param_f64("t_final", 0.9 * t_rec)?;
            let r = rte_diagnostic(b, &StateVector::new(v), &a, t_final)?;
            out.write(".csv", &r.trajectory.to_csv())?;
            out.json(
                ".json",
                &report(
                    true,
                    json!({
                        "deviation": r.deviation,
                        "initial_deviation": r.initial_deviation,
                        "trend": r.trend,
                        "target": r.target,
                        "recurrence_time": r.recurrence_time,
                        "t_final": t_final,
                    }),
                ),
            )?;
            Ok((true, format!("deviation {:.3e} of initial {:.3e}", r.deviation, r.initial_deviation)))
        }
        Experiment::DysonBound => {
            let fv = fv_model(cx)?;
            let n_max = cfg.param_usize("n_max", 6)?;
            let betas = cfg.param_f64_list("betas", &[1.0, 2.0, 4.0])?;
            let lambdas = cfg.param_f64_list("lambdas", &[0.0, 0.05, 0.1])?;
            let two_ms = cfg.param_usize_list("two_ms", &[2, 4])?;
            let points: Vec<(f64, f64)> = betas.iter().flat_map(|&b| lambdas.iter().map(move |&l| (b, l))).collect();
            let rows: Vec<Result<Vec<(String, f64)>>> = points
                .par_iter()
                .map(|&(beta, lam)| {
                    let m = fv.with_beta(beta).with_lambda(lam);
                    let exact = omega_q_exact(&m, n_max)?;
                    two_ms
                        .iter()
                        .map(|&tm| {
                            let part = SegmentPartition::new(tm, beta)?;
                            let bound = omega_q_bound(&m, &part, part.tau())?;
                            Ok((
                                format!(
                                    "{},{},{tm},{},{},{},{}",
                                    fmt_f64(beta),
                                    fmt_f64(lam),
                                    fmt_f64(part.tau()),
                                    fmt_f64(bound),
                                    fmt_f64(exact),
                                    fmt_f64(bound - exact)
                                ),
                                bound - exact,
                            ))
                        })
                        .collect()
                })
                .collect();
            let mut csv = String::from("beta,lambda,two_m,tau,bound,exact,margin\n");
            let mut violations = 0;
            for r in rows {
                for (line, margin) in r? {
                    if !(margin >= 0.0) {
                        violations += 1;
                    }
                    csv.push_str(&line);
                    csv.push('\n');
                }
            }
            out.write(".csv", &csv)?;
            Ok((violations == 0, format!("{violations} bound violations")))
        }
        Experiment::DysonOracle => {
            let fv = fv_model(cx)?;
            let samples = cfg.param_usize("samples", 200)?;
            let rep = trace_inequality_checks(samples, cfg.seed, &fv, cfg.param_usize("n_max", 3)?)?;
            let part = SegmentPartition::new(2, spec.beta)?;
            let tail = atomic_tail(&spec.atom, &part);
            let passed = rep.offending.is_empty();
            out.json(".json", &report(passed, json!({ "trace_inequalities": rep, "atomic_tail": tail })))?;
            Ok((passed, format!("{} offending samples", rep.offending.len())))
        }
        Experiment::WickTest => {
            let samples = cfg.param_usize("samples", 10)?;
            let points = cfg.param_usize("points", 4)?;
            let n_max = cfg.param_usize("n_max", 40)?;
            let fv = FiniteVolumeModel::single_mode(cfg.param_f64("energy", 1.0)?, 1.0, spec.beta);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut worst: f64 = 0.0;
            let mut rows = Vec::new();
            for _ in 0..samples {
                let mut ts: Vec<f64> = (0..points).map(|_| rng.gen_range(0.0..spec.beta)).collect();
                ts.sort_by(f64::total_cmp);
                let alphas = vec![0; points];
                let w = wick_expectation(&fv, &alphas, &ts)?;
                let bf = brute_force_correlation(&fv, &alphas, &ts, n_max)?;
                let rel = (w - bf).abs() / bf.abs().max(1e-300);
                worst = worst.max(rel);
                rows.push(json!({ "times": ts, "wick": w, "brute_force": bf, "relative_error": rel }));
            }
            let passed = worst <= 1e-6;
            out.json(".json", &report(passed, json!({ "max_relative_error": worst, "samples": rows })))?;
            Ok((passed, format!("max relative error {worst:.3e}")))
        }
        Experiment::PcProbe => {
            let b = cx.bundle();
            let params = auto_pc_parameters(b, cfg.param_f64("e", 0.6)?, cfg.param_f64("t", 0.1)?)?;
            let w = cfg.param_f64_list("window", &[-0.5, 0.5])?;
            if w.len() != 2 {
                return Err(Error::Config("params.window: expected [lo, hi]".into()));
            }
            let probe = pc_positivity_probe(b, &params, (w[0], w[1]))?;
            let passed = probe.min_quadratic_form > 0.0;
            out.json(".json", &report(passed, json!({ "params": params, "probe": probe })))?;
            Ok((passed, format!("min quadratic form {:.6e}", probe.min_quadratic_form)))
        }
    }
}

fn default_cache_dir(prefix: &Path) -> PathBuf {
    prefix.parent().map(|p| p.join("cache")).unwrap_or_else(|| PathBuf::from("cache"))
}

/// Runs the configured experiment and writes its outputs plus
/// `<output>.manifest.json`.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let spec = cfg.model_spec()?;
    if let Some(dir) = cfg.output.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("threads: {e}")))?;
    pool.install(|| {
        let mut cache = Value::Null;
        let bundle = if cfg.experiment.needs_bundle() {
            let dir = cache_dir(&default_cache_dir(&cfg.output));
            let (b, status, path) = load_or_assemble(&dir, &spec, &cfg.bath_grid()?, cfg.truncation.n_total_max)?;
            cache = json!({ "status": status.as_str(), "path": path });
            if status == CacheStatus::Hit {
                log_line(&format!("cache hit {}", path.display()));
            }
            Some(b)
        } else {
            None
        };
        let assembled = start.elapsed().as_secs_f64();
        let mut out = Emitter {
            prefix: cfg.output.clone(),
            files: Vec::new(),
        };
        let glue_phase = spec.glue_phase();
        let cx = Ctx { cfg, spec, bundle };
        let (passed, summary) = exec(&cx, &mut out)?;
        let total = start.elapsed().as_secs_f64();
        let manifest = json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": cfg.experiment.name(),
            "package": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
            "config": cfg,
            "seed": cfg.seed,
            "glue_phase": glue_phase,
            "cache": cache,
            "timings": { "setup_s": assembled, "experiment_s": total - assembled, "total_s": total },
            "outputs": out.files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "passed": passed,
            "summary": summary,
        });
        out.json(".manifest.json", &manifest)?;
        Ok(RunOutcome {
            status: if passed { 0 } else { 1 },
            files: out.files,
            summary,
        })
    })
}

fn log_line(s: &str) {
    eprintln!("thermofield: {s}");
}
