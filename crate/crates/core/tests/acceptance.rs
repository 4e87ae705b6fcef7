//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Statistical checks use fixed seeds; tolerances are pinned below.

use std::process::ExitCode;
use std::time::Instant;

use ldp_online::clipping::build_clip_plan;
use ldp_online::domain::{Feature, HypothesisClass, SeededRng};
use ldp_online::harness::{
    batch_select, run_experiment, run_on_class, sweep_with, Algorithm, Experiment, ExperimentConfig,
    InstanceSource, SweepAxis, SweepResult, TruthSelection,
};
use ldp_online::instances::{
    block_uniform_instance, build_hard_instance, hadamard, hard_horizon_threshold, identity_instance,
    random_instance,
};
use ldp_online::learners::{RegretLedger, WeightState};
use ldp_online::metrics::kl;
use ldp_online::privacy::{
    accountant_check, dp_ratio_bound, laplace_log_density, PrivacyParams, RandomizedResponse,
};

/// |dp_ratio_bound − ε| for the pure mechanism's scale.
const DP_RATIO_TOL: f64 = 1e-12;
/// Closed-form mixture KL against `kl()`.
const MIXTURE_KL_TOL: f64 = 1e-9;
/// Standard errors of slack on the mean risk.
const SE_MARGIN: f64 = 3.0;
/// Admissible log-log slope of mean risk against T.
const SLOPE_RANGE: (f64, f64) = (0.4, 0.75);
/// Largest max/min ratio of exp3-pure risk across M.
const M_INVARIANCE_RATIO: f64 = 2.0;
const BATCH_ALPHA: f64 = 0.2;
const BATCH_REQUIRED: usize = 8;
const BATCH_TRIALS: usize = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Experiments whose exp3 potential and Pinsker flags feed criteria 2 and 10.
#[derive(Default)]
struct Pool {
    exp3_runs: usize,
    exp3_potential_fail: usize,
    traces: usize,
    pinsker_fail: usize,
}

impl Pool {
    fn add(&mut self, e: &Experiment) {
        if e.report.algorithm == Algorithm::Exp3Pure {
            self.exp3_runs += e.report.runs.len();
            self.exp3_potential_fail += e.report.runs.iter().filter(|r| !r.potential_ok).count();
        }
        self.traces += e.traces.len();
        self.pinsker_fail += e.report.runs.iter().filter(|r| !r.pinsker_ok).count();
    }

    fn add_sweep(&mut self, s: &SweepResult) {
        for e in &s.experiments {
            self.add(e);
        }
    }
}

fn wma_regret() -> Outcome {
    let (k, horizon) = (16usize, 10_000usize);
    let eta = (2.0 * (k as f64).ln() / horizon as f64).sqrt();
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut failures = 0;
    for seq in 0..50u64 {
        let mut rng = SeededRng::new(seq, 1);
        let mut state = WeightState::new(k, eta);
        let mut ledger = RegretLedger::new(k);
        let phase = rng.index(2);
        for t in 0..horizon {
            let loss: Vec<f64> = if seq % 2 == 0 {
                (0..k).map(|_| rng.uniform()).collect()
            } else {
                // two leaders trade places every round; the rest always lose
                let odd = (t + phase) % 2 == 1;
                (0..k)
                    .map(|j| match j {
                        0 if t == 0 => 0.5,
                        0 => f64::from(u8::from(!odd)),
                        1 => f64::from(u8::from(odd)),
                        _ => 1.0,
                    })
                    .collect()
            };
            let w = state.normalized();
            state.update(&loss).expect("finite losses");
            ledger.record(&w, &loss);
        }
        let ratio = ledger.regret() / ledger.wma_bound(horizon);
        worst = worst.max(ratio);
        if ledger.regret() > ledger.wma_bound(horizon) {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("50 sequences, {failures} over bound, max regret/bound = {worst:.3}"),
    )
}

fn clipping_range() -> Outcome {
    let mut rng = SeededRng::new(2024, 3);
    let mut violations = 0usize;
    let mut entries = 0usize;
    for _ in 0..200 {
        let k = 1 + rng.index(32);
        let m = 2 + rng.index(255);
        let horizon = 2 + rng.index(99_999);
        let alpha = [0.05, 0.3, 1.0, 5.0][rng.index(4)];
        let class = random_instance(k, m, alpha, &mut rng).expect("valid instance");
        let plan = build_clip_plan(&class, Feature(0), horizon).expect("plan");
        let (lo, hi) = plan.mass_range();
        for j in 0..k {
            let f = class.hypotheses()[j].evaluate(Feature(0)).expect("constant");
            let q = plan.pushforward(f.probs()).expect("pushforward");
            for &v in q.probs() {
                entries += 1;
                if !(lo <= v && v <= hi) {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!("200 instances, {entries} entries, {violations} outside [1/(T·N'), 1/M]"),
    )
}

fn privacy() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let mut grid_fail = 0;
    for p in 0..=10 {
        for eps in [0.1, 0.5, 1.0, 2.0] {
            for delta in [1e-2, 1e-6] {
                if !accountant_check(1 << p, eps, delta).ok {
                    grid_fail += 1;
                }
            }
        }
    }
    pass &= grid_fail == 0;
    notes.push(format!("accountant grid failures {grid_fail}/88"));

    let mut worst_dp: f64 = 0.0;
    for k in [2, 4, 8, 16, 64] {
        for horizon in [100, 1000, 10_000, 100_000] {
            for eps in [0.1, 0.5, 1.0, 2.0, 8.0] {
                let params = PrivacyParams::pure(eps, k, horizon).expect("params");
                let r = dp_ratio_bound(params.sensitivity(), params.noise_scale());
                worst_dp = worst_dp.max((r - eps).abs());
            }
        }
    }
    let mut rng = SeededRng::new(7, 4);
    let mut density_excess: f64 = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let (sens, scale) = (0.1 + 5.0 * rng.uniform(), 0.1 + 5.0 * rng.uniform());
        let x = 20.0 * (rng.uniform() - 0.5);
        let (u, v) = (sens * rng.uniform(), sens * rng.uniform());
        let diff = (laplace_log_density(x - u, scale) - laplace_log_density(x - v, scale)).abs();
        density_excess = density_excess.max(diff - dp_ratio_bound(sens, scale));
    }
    pass &= worst_dp <= DP_RATIO_TOL && density_excess <= DP_RATIO_TOL;
    notes.push(format!(
        "max |ratio - eps| = {worst_dp:.1e}, density check excess {density_excess:.1e}"
    ));

    let mut rr_fail = 0;
    for m in [2, 3, 8, 64, 512] {
        for eps in [0.1, 0.5, 1.0, 3f64.ln(), 2.0, 5.0] {
            let rr = RandomizedResponse::new(m, eps).expect("channel");
            let c = rr.matrix();
            let bound = eps.exp();
            for o in 0..m {
                for a in [0, o, m - 1] {
                    for b in [0, o, m - 1] {
                        if c[a][o] > bound * c[b][o] {
                            rr_fail += 1;
                        }
                    }
                }
            }
        }
    }
    pass &= rr_fail == 0;
    notes.push(format!("rr ratio violations {rr_fail}"));
    outcome(pass, notes.join("; "))
}

fn hard_instance() -> Outcome {
    let mut built = 0;
    let mut problems = Vec::new();
    for k in [2usize, 4, 8] {
        for horizon in [1000usize, 10_000] {
            for eps in [0.5, 1.0, 2.0] {
                if (horizon as f64) < hard_horizon_threshold(k, eps) {
                    continue;
                }
                let inst = build_hard_instance(k, horizon, eps).expect("precondition met");
                built += 1;
                let h = hadamard(inst.n).expect("hadamard");
                let size = h.len() as i64;
                for a in 0..h.len() {
                    for b in 0..h.len() {
                        let dot: i64 = h.iter().map(|r| i64::from(r[a] * r[b])).sum();
                        if dot != if a == b { size } else { 0 } {
                            problems.push(format!("orthogonality K={k}"));
                        }
                    }
                }
                for hyp in inst.class.hypotheses() {
                    let f = hyp.evaluate(Feature(0)).expect("constant");
                    let sum: f64 = f.probs().iter().sum();
                    if f.probs().iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
                        problems.push(format!("simplex K={k} T={horizon} eps={eps}"));
                    }
                }
                for i in 0..k {
                    let (p1, p2) = inst.pair(i);
                    let mid: Vec<f64> =
                        p1.probs().iter().zip(p2.probs()).map(|(a, b)| (a + b) / 2.0).collect();
                    let measured = kl(p1.probs(), &mid).expect("kl");
                    if (measured - inst.mixture_kl_closed_form()).abs() > MIXTURE_KL_TOL {
                        problems.push(format!("mixture KL K={k} T={horizon} eps={eps} pair {i}"));
                    }
                    if !(measured >= inst.a / 16.0) {
                        problems.push(format!("separation K={k} T={horizon} eps={eps} pair {i}"));
                    }
                }
            }
        }
    }
    let detail = if problems.is_empty() {
        format!("{built} instances checked")
    } else {
        format!("{built} instances, problems: {}", problems.join(", "))
    };
    outcome(problems.is_empty() && built > 0, detail)
}

fn bound_detail(e: &Experiment) -> (bool, String) {
    let r = &e.report;
    let bound = r.risk_bound.expect("clipping learner");
    let ok = r.mean_kl_cum <= bound + SE_MARGIN * r.se_kl_cum;
    (
        ok,
        format!(
            "mean kl_cum {:.2} (se {:.2}) vs bound {:.1}",
            r.mean_kl_cum, r.se_kl_cum, bound
        ),
    )
}

fn approx_bound(pool: &mut Pool) -> Outcome {
    let mut cfg = ExperimentConfig::new(Algorithm::WmaLdp, 2.0);
    cfg.k = Some(8);
    cfg.m = Some(16);
    cfg.horizon = Some(10_000);
    cfg.delta = Some(1e-4);
    cfg.gamma = Some((8.0f64 * 10_000.0 * 100.0).ln());
    cfg.reps = 100;
    cfg.seed = 6;
    cfg.record_every = 100;
    let e = run_experiment(&cfg).expect("wma experiment");
    pool.add(&e);
    let (ok, detail) = bound_detail(&e);
    outcome(ok, format!("wma-ldp K=8 M=16 T=1e4, 100 reps: {detail}"))
}

fn pure_bound(pool: &mut Pool) -> Outcome {
    let mut cfg = ExperimentConfig::new(Algorithm::Exp3Pure, 1.0);
    cfg.k = Some(8);
    cfg.m = Some(16);
    cfg.horizon = Some(100_000);
    cfg.reps = 50;
    cfg.seed = 7;
    cfg.record_every = 1000;
    let e = run_experiment(&cfg).expect("exp3 experiment");
    pool.add(&e);
    let (ok, detail) = bound_detail(&e);
    outcome(ok, format!("exp3-pure K=8 M=16 T=1e5, 50 reps: {detail}"))
}

fn t_sweep(pool: &mut Pool) -> Outcome {
    let mut cfg = ExperimentConfig::new(Algorithm::Exp3Pure, 1.0);
    cfg.reps = 20;
    cfg.seed = 8;
    cfg.record_every = 100;
    let build = |_: &ExperimentConfig| identity_instance(8);
    let s = sweep_with(&cfg, SweepAxis::T, &[1e3, 1e4, 1e5], Some(&build)).expect("T sweep");
    pool.add_sweep(&s);
    let means = s.means();
    let slope = s.slope.unwrap_or(f64::NAN);
    outcome(
        slope >= SLOPE_RANGE.0 && slope <= SLOPE_RANGE.1,
        format!(
            "exp3-pure K=8 identity, means {:.1}/{:.1}/{:.1}, slope {slope:.3} (want [{}, {}])",
            means[0], means[1], means[2], SLOPE_RANGE.0, SLOPE_RANGE.1
        ),
    )
}

fn m_sweep(pool: &mut Pool) -> Outcome {
    let values = [8.0, 64.0, 512.0];
    let build = |c: &ExperimentConfig| block_uniform_instance(8, c.m.expect("axis sets M"));
    let run = |alg: Algorithm| {
        let mut cfg = ExperimentConfig::new(alg, 1.0);
        cfg.horizon = Some(10_000);
        cfg.reps = 10;
        cfg.seed = 9;
        cfg.record_every = 100;
        sweep_with(&cfg, SweepAxis::M, &values, Some(&build)).expect("M sweep")
    };
    let rr = run(Algorithm::RrBaseline);
    let ex = run(Algorithm::Exp3Pure);
    pool.add_sweep(&rr);
    pool.add_sweep(&ex);
    let (rm, em) = (rr.means(), ex.means());
    let increasing = rm.windows(2).all(|w| w[0] < w[1]);
    let hi = em.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = em.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = hi / lo;
    outcome(
        increasing && ratio <= M_INVARIANCE_RATIO,
        format!(
            "rr-baseline {:.1}/{:.1}/{:.1} (increasing: {increasing}); exp3-pure {:.1}/{:.1}/{:.1} (max/min {ratio:.2})",
            rm[0], rm[1], rm[2], em[0], em[1], em[2]
        ),
    )
}

fn batch(pool: &Pool) -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("identity4.json");
    let class: HypothesisClass = identity_instance(4).expect("class");
    std::fs::write(&path, class.to_json().expect("json")).expect("write class");
    let mut hits = 0;
    let mut errors = Vec::new();
    let mut horizon = 0;
    for trial in 0..BATCH_TRIALS {
        let mut cfg = ExperimentConfig::new(Algorithm::Exp3Pure, 1.0);
        cfg.instance = InstanceSource::File(path.clone());
        cfg.truth = TruthSelection::Index(trial % 4);
        cfg.seed = 100 + trial as u64;
        let r = batch_select(&cfg, BATCH_ALPHA, 9).expect("batch selection");
        horizon = horizon.max(r.horizon);
        if r.tv_error <= BATCH_ALPHA {
            hits += 1;
        }
        errors.push(format!("{:.3}", r.tv_error));
    }
    let pinsker = pool.pinsker_fail == 0;
    outcome(
        pinsker && hits >= BATCH_REQUIRED,
        format!(
            "pinsker failures {}/{} traces; batch hits {hits}/{BATCH_TRIALS} at alpha {BATCH_ALPHA} (T up to {horizon}, tv [{}])",
            pool.pinsker_fail,
            pool.traces,
            errors.join(" ")
        ),
    )
}

fn reproducible() -> Outcome {
    let mut same = true;
    for alg in [Algorithm::WmaLdp, Algorithm::Exp3Pure, Algorithm::RrBaseline] {
        let mut cfg = ExperimentConfig::new(alg, 1.0);
        cfg.k = Some(5);
        cfg.m = Some(7);
        cfg.horizon = Some(2000);
        cfg.reps = 4;
        cfg.seed = 11;
        if alg == Algorithm::WmaLdp {
            cfg.delta = Some(1e-3);
        }
        let a = run_experiment(&cfg).and_then(|e| e.csv_bytes()).expect("first run");
        let b = run_experiment(&cfg).and_then(|e| e.csv_bytes()).expect("second run");
        same &= a == b;
    }
    let mut cfg = ExperimentConfig::new(Algorithm::Exp3Pure, 1.0);
    cfg.instance = InstanceSource::Hard;
    cfg.k = Some(2);
    cfg.horizon = Some(1000);
    cfg.truth = TruthSelection::Scan;
    let class = cfg.build_class().expect("hard class");
    let a = run_on_class(&cfg, class.clone()).and_then(|e| e.csv_bytes()).expect("run");
    let b = run_on_class(&cfg, class).and_then(|e| e.csv_bytes()).expect("run");
    same &= a == b;
    outcome(same, "four configs run twice, CSV bytes compared")
}

fn main() -> ExitCode {
    let mut pool = Pool::default();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        eprintln!("  [{n}] {name} took {:.1}s", start.elapsed().as_secs_f64());
        (n, name, o)
    };
    results.push(timed(1, "wma regret", &mut wma_regret));
    results.push(timed(3, "clipping range", &mut clipping_range));
    results.push(timed(4, "privacy", &mut privacy));
    results.push(timed(5, "hard instance", &mut hard_instance));
    results.push(timed(6, "approximate-dp risk bound", &mut || approx_bound(&mut pool)));
    results.push(timed(7, "pure-dp risk bound", &mut || pure_bound(&mut pool)));
    results.push(timed(8, "T-sweep slope", &mut || t_sweep(&mut pool)));
    results.push(timed(9, "M-sweep contrast", &mut || m_sweep(&mut pool)));
    let potential = outcome(
        pool.exp3_runs > 0 && pool.exp3_potential_fail == 0,
        format!(
            "{} of {} exp3-pure runs violate the potential inequality",
            pool.exp3_potential_fail, pool.exp3_runs
        ),
    );
    results.push((2, "exp3 potential inequality", potential));
    results.push(timed(10, "pinsker and batch selection", &mut || batch(&pool)));
    results.push(timed(11, "reproducibility", &mut reproducible));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, o) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("criterion {n:>2} {tag} {name}: {}", o.detail);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
