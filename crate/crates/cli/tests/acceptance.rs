//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use regimeswitch::bayes::{
    build_design_matrix, lemma1_bound, log_marginal_path, log_marginal_y_given_path, BoundMode, BoundOptions,
    Priors,
};
use regimeswitch::estimator::{complete_data_loglik, mstep, MStepOptions, SufficientStats};
use regimeswitch::ffbs::{exact_posterior_enumeration, sample_path};
use regimeswitch::likelihood::brute_force_likelihood;
use regimeswitch::selection::{lrt_test, penalty, select_states, DimFormula};
use regimeswitch::{
    em_fit, forward_filter, simulate, smooth, HiddenPath, InitialLaw, ModelSpec,
    ObservationSeries, Regime, RegimeKind, SaemConfig, TransitionMatrix,
};

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

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_transition<R: Rng>(m: usize, r: &mut R) -> TransitionMatrix {
    let mut data = Vec::with_capacity(m * m);
    for _ in 0..m {
        let row: Vec<f64> = (0..m).map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / s));
    }
    TransitionMatrix::from_row_major(m, data).unwrap()
}

fn random_spec<R: Rng>(m: usize, kind: RegimeKind, sigma2: f64, r: &mut R) -> ModelSpec {
    let a = random_transition(m, r);
    match kind {
        RegimeKind::Hmm => {
            let means: Vec<f64> = (0..m).map(|_| r.random_range(-3.0..3.0)).collect();
            ModelSpec::hmm(&means, sigma2, a).unwrap()
        }
        RegimeKind::LinearAr => {
            let pairs: Vec<(f64, f64)> = (0..m)
                .map(|_| (r.random_range(-0.9..0.9), r.random_range(-3.0..3.0)))
                .collect();
            ModelSpec::linear_ar(&pairs, sigma2, a).unwrap()
        }
    }
}

fn random_kind<R: Rng>(r: &mut R) -> RegimeKind {
    if r.random::<bool>() {
        RegimeKind::Hmm
    } else {
        RegimeKind::LinearAr
    }
}

fn draw<R: Rng>(spec: &ModelSpec, n: usize, r: &mut R) -> (HiddenPath, ObservationSeries) {
    simulate(spec, n, 0.0, InitialLaw::Stationary, r).unwrap()
}

fn hmm_scenario() -> ModelSpec {
    let a = TransitionMatrix::from_rows(&[
        vec![0.9, 0.05, 0.05],
        vec![0.05, 0.9, 0.05],
        vec![0.05, 0.05, 0.9],
    ])
    .unwrap();
    ModelSpec::hmm(&[-2.0, 1.0, 4.0], 1.5, a).unwrap()
}

fn ar_scenario_first() -> ModelSpec {
    let a = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
    ModelSpec::linear_ar(&[(1.0, -1.0), (-0.5, 0.5)], 1.5, a).unwrap()
}

fn ar_scenario_second() -> ModelSpec {
    let a = TransitionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap();
    ModelSpec::linear_ar(&[(1.0, -2.0), (-0.7, 1.08)], 1.5, a).unwrap()
}

fn penalties() -> Outcome {
    let table1 = [15.53, 31.07, 52.82, 80.78, 114.97, 155.36];
    let table2 = [(2, 18.64), (3, 37.28), (5, 93.21), (6, 130.50)];
    let mut worst: f64 = 0.0;
    for (k, want) in table1.iter().enumerate() {
        worst = worst.max((penalty(500, k + 2, RegimeKind::Hmm, DimFormula::Stated) - want).abs());
    }
    for (m, want) in table2 {
        worst = worst.max((penalty(500, m, RegimeKind::LinearAr, DimFormula::Table2) - want).abs());
    }
    outcome(worst <= 0.01, format!("max |pen - table| = {worst:.4}"))
}

fn forward_vs_enumeration() -> Outcome {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    let count = 200;
    for _ in 0..count {
        let m = r.random_range(1..=3);
        let n = r.random_range(1..=8);
        let kind = random_kind(&mut r);
        let spec = random_spec(m, kind, r.random_range(0.2..3.0), &mut r);
        let (_, series) = draw(&spec, n, &mut r);
        let fwd = forward_filter(&spec, &series).unwrap().loglik();
        let en = brute_force_likelihood(&spec, &series).unwrap();
        worst = worst.max((fwd - en).abs() / en.abs());
    }
    outcome(worst <= 1e-10, format!("{count} instances, max relative error {worst:.2e}"))
}

fn ffbs_exactness() -> Outcome {
    let a = TransitionMatrix::from_rows(&[vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap();
    let spec = ModelSpec::linear_ar(&[(0.3, -1.0), (-0.2, 1.0)], 0.8, a).unwrap();
    let series = ObservationSeries::new(0.2, vec![-0.8, 0.4, 1.3, -0.2, 0.9]).unwrap();
    let posterior = exact_posterior_enumeration(&spec, &series).unwrap();
    let gamma = smooth(&spec, &series).unwrap();
    let draws = 100_000;
    let mut r = rng(2);
    let mut counts = std::collections::BTreeMap::<HiddenPath, usize>::new();
    let mut marg = [[0usize; 2]; 5];
    for _ in 0..draws {
        let p = sample_path(&spec, &series, &mut r).unwrap();
        for (k, &x) in p.states().iter().enumerate() {
            marg[k][x] += 1;
        }
        *counts.entry(p).or_default() += 1;
    }
    let d = draws as f64;
    let mut worst: f64 = 0.0;
    for (path, &p) in &posterior {
        let freq = *counts.get(path).unwrap_or(&0) as f64 / d;
        let se = (p * (1.0 - p) / d).sqrt();
        worst = worst.max((freq - p).abs() / se);
    }
    for (k, row) in marg.iter().enumerate() {
        let p = gamma.gamma(k)[1];
        let se = (p * (1.0 - p) / d).sqrt();
        worst = worst.max((row[1] as f64 / d - p).abs() / se);
    }
    outcome(
        worst <= 3.0,
        format!("{} paths and 5 marginals, max deviation {worst:.2} SE", posterior.len()),
    )
}

fn em_monotone() -> Outcome {
    let mut r = rng(3);
    let mut worst_drop: f64 = 0.0;
    for _ in 0..20 {
        let m = r.random_range(1..=3);
        let kind = random_kind(&mut r);
        let spec = random_spec(m, kind, r.random_range(0.3..2.0), &mut r);
        let (_, series) = draw(&spec, 200, &mut r);
        let cfg = SaemConfig::new(m, kind)
            .with_iterations(200)
            .with_seed(r.random());
        let fit = em_fit(&series, &cfg).unwrap();
        let ll: Vec<f64> = fit.trajectory.iter().filter_map(|p| p.loglik).collect();
        for w in ll.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    outcome(worst_drop <= 1e-9, format!("20 instances, largest decrease {worst_drop:.2e}"))
}

fn random_weighted_stats<R: Rng>(n: usize, m: usize, r: &mut R) -> SufficientStats {
    let mut s1 = Vec::with_capacity(n * m);
    for _ in 0..n {
        let w: Vec<f64> = (0..m).map(|_| r.random_range(0.05..1.0)).collect();
        let t: f64 = w.iter().sum();
        s1.extend(w.iter().map(|v| v / t));
    }
    let scale = (n - 1) as f64 / (m * m) as f64;
    let s3: Vec<f64> = (0..m * m).map(|_| scale * r.random_range(0.2..1.8)).collect();
    let s2: Vec<f64> = (0..m).map(|i| s3[i * m..(i + 1) * m].iter().sum()).collect();
    SufficientStats::from_parts(n, m, s1, s2, s3).unwrap()
}

fn max_gradient(stats: &SufficientStats, series: &ObservationSeries, spec: &ModelSpec, kind: RegimeKind) -> f64 {
    let h = 1e-6;
    let m = spec.num_states();
    let theta = spec.theta().to_vec();
    let s2 = spec.sigma2();
    let a = spec.transition().as_slice().to_vec();
    let f = |th: &[Regime], s2: f64, a: &[f64]| complete_data_loglik(stats, series, th, s2, a);
    let mut worst: f64 = 0.0;
    for i in 0..m {
        let mut bump = |shift: &dyn Fn(&mut Regime, f64)| {
            let (mut up, mut dn) = (theta.clone(), theta.clone());
            shift(&mut up[i], h);
            shift(&mut dn[i], -h);
            worst = worst.max(((f(&up, s2, &a) - f(&dn, s2, &a)) / (2.0 * h)).abs());
        };
        bump(&|t, d| t.intercept += d);
        if kind == RegimeKind::LinearAr {
            bump(&|t, d| t.slope += d);
        }
    }
    worst = worst.max(((f(&theta, s2 + h, &a) - f(&theta, s2 - h, &a)) / (2.0 * h)).abs());
    for i in 0..m {
        for j in 0..m - 1 {
            let (mut up, mut dn) = (a.clone(), a.clone());
            up[i * m + j] += h;
            up[i * m + m - 1] -= h;
            dn[i * m + j] -= h;
            dn[i * m + m - 1] += h;
            worst = worst.max(((f(&theta, s2, &up) - f(&theta, s2, &dn)) / (2.0 * h)).abs());
        }
    }
    worst
}

fn mstep_optimality() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for kind in [RegimeKind::Hmm, RegimeKind::LinearAr] {
        for _ in 0..50 {
            let m = r.random_range(1..=3);
            let n = r.random_range(20..=60);
            let spec = random_spec(m, kind, 1.0, &mut r);
            let (_, series) = draw(&spec, n, &mut r);
            let stats = random_weighted_stats(n, m, &mut r);
            let out = mstep(&stats, &series, kind, MStepOptions::default())
                .unwrap()
                .into_spec(kind)
                .unwrap();
            worst = worst.max(max_gradient(&stats, &series, &out, kind));
        }
    }
    outcome(worst <= 1e-6, format!("50 instances per kind, max |gradient| {worst:.2e}"))
}

fn within(fit: &ModelSpec, truth: &ModelSpec) -> bool {
    let m = truth.num_states();
    let theta_ok = fit
        .theta()
        .iter()
        .zip(truth.theta())
        .all(|(a, b)| (a.intercept - b.intercept).abs() <= 0.3);
    let sigma_ok = (fit.sigma2() - truth.sigma2()).abs() <= 0.2;
    let a_ok = (0..m).all(|i| (0..m).all(|j| (fit.transition().get(i, j) - truth.transition().get(i, j)).abs() <= 0.07));
    theta_ok && sigma_ok && a_ok
}

fn hmm_recovery() -> Outcome {
    let truth = hmm_scenario();
    let hits: usize = (0..20u64)
        .into_par_iter()
        .map(|rep| {
            let (_, series) = draw(&truth, 500, &mut rng(1000 + rep));
            let cfg = SaemConfig::new(3, RegimeKind::Hmm).with_seed(rep);
            let fit = regimeswitch::saem_fit(&series, &cfg).unwrap();
            usize::from(within(&fit.spec_hat, &truth))
        })
        .sum();
    outcome(hits >= 16, format!("{hits}/20 replicates within tolerance"))
}

fn selection() -> Outcome {
    let run = |truth: ModelSpec, kind: RegimeKind, want: usize, base: u64| -> usize {
        (0..20u64)
            .into_par_iter()
            .map(|rep| {
                let (_, series) = draw(&truth, 500, &mut rng(base + rep));
                let cfg = SaemConfig::new(1, kind).with_seed(rep);
                let res = select_states(&series, 5, &cfg, 5, DimFormula::Stated).unwrap();
                usize::from(res.m_hat == want)
            })
            .sum()
    };
    let hmm = run(hmm_scenario(), RegimeKind::Hmm, 3, 2000);
    let ar = run(ar_scenario_first(), RegimeKind::LinearAr, 2, 3000);
    outcome(
        hmm >= 14 && ar >= 14,
        format!("HMM m=3 chosen {hmm}/20, AR m=2 chosen {ar}/20"),
    )
}

fn lrt() -> Outcome {
    let size: usize = (0..100u64)
        .into_par_iter()
        .map(|rep| {
            let (_, series) = draw(&hmm_scenario(), 500, &mut rng(4000 + rep));
            let cfg = SaemConfig::new(3, RegimeKind::Hmm).with_seed(rep);
            usize::from(lrt_test(&series, 3, 0.05, &cfg, 5).unwrap().result.reject)
        })
        .sum();
    let power: usize = (0..20u64)
        .into_par_iter()
        .map(|rep| {
            let (_, series) = draw(&ar_scenario_second(), 500, &mut rng(5000 + rep));
            let cfg = SaemConfig::new(2, RegimeKind::Hmm).with_seed(rep);
            usize::from(lrt_test(&series, 2, 0.05, &cfg, 5).unwrap().result.reject)
        })
        .sum();
    let rate = size as f64 / 100.0;
    outcome(
        rate <= 0.10 && power >= 18,
        format!("size {rate:.2} (100 null replicates), power {power}/20"),
    )
}

fn monte_carlo_marginal(
    series: &ObservationSeries,
    path: &HiddenPath,
    m: usize,
    kind: RegimeKind,
    priors: &Priors,
    draws: usize,
    seed: u64,
) -> f64 {
    let design = build_design_matrix(path, series, m, kind).unwrap();
    let z = &design.z;
    let p = z.ncols();
    let y = series.values();
    let n = y.len() as f64;
    let precision = Gamma::new(priors.v0 / 2.0, 2.0 / priors.u0).unwrap();
    let mut r = rng(seed);
    let mut theta = vec![0.0; p];
    let mut sum = 0.0;
    for _ in 0..draws {
        let s2 = 1.0 / precision.sample(&mut r);
        for (j, t) in theta.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut r);
            *t = e * (s2 * priors.sigma[(j, j)]).sqrt();
        }
        let rss: f64 = y
            .iter()
            .enumerate()
            .map(|(k, yk)| (yk - (0..p).map(|j| z[(k, j)] * theta[j]).sum::<f64>()).powi(2))
            .sum();
        sum += (-0.5 * rss / s2).exp() / (2.0 * std::f64::consts::PI * s2).powf(n / 2.0);
    }
    sum / draws as f64
}

fn bayes_marginals() -> Outcome {
    let series = ObservationSeries::new(0.4, vec![0.3, -0.5, 1.2, 0.1]).unwrap();
    let cases = [
        (1, RegimeKind::Hmm, HiddenPath(vec![0; 4])),
        (1, RegimeKind::LinearAr, HiddenPath(vec![0; 4])),
        (2, RegimeKind::Hmm, HiddenPath(vec![0, 1, 1, 0])),
        (2, RegimeKind::LinearAr, HiddenPath(vec![1, 1, 0, 0])),
    ];
    let rel: Vec<f64> = cases
        .par_iter()
        .enumerate()
        .map(|(k, (m, kind, path))| {
            let priors = Priors::default_for(*m, *kind);
            let exact = log_marginal_y_given_path(&series, path, *m, &priors, *kind)
                .unwrap()
                .exp();
            let mc = monte_carlo_marginal(&series, path, *m, *kind, &priors, 1_000_000, 90 + k as u64);
            (mc - exact).abs() / exact
        })
        .collect();
    let worst_rel = rel.iter().cloned().fold(0.0, f64::max);

    let mut worst_sum: f64 = 0.0;
    let mut r = rng(6);
    for n in 2..=6 {
        let e = [r.random_range(0.1..3.0), r.random_range(0.1..3.0)];
        for x1 in 0..2 {
            let mut total = 0.0;
            for code in 0..(1usize << (n - 1)) {
                let mut states = vec![x1];
                states.extend((0..n - 1).map(|k| (code >> k) & 1));
                total += log_marginal_path(&HiddenPath(states), 2, &e).unwrap().exp();
            }
            worst_sum = worst_sum.max((total - 1.0).abs());
        }
    }

    // instances at the simulation scenarios' noise level
    let mut holds = 0;
    let mut r = rng(7);
    for _ in 0..100 {
        let n = r.random_range(4..=6);
        let spec = random_spec(2, RegimeKind::Hmm, 1.5, &mut r);
        let (path, series) = draw(&spec, n, &mut r);
        let priors = Priors::default_for(2, RegimeKind::Hmm);
        let ok = [BoundMode::Marginal, BoundMode::PathWise].iter().all(|&mode| {
            lemma1_bound(
                &series,
                &path,
                &priors,
                &spec,
                RegimeKind::Hmm,
                BoundOptions { mode, ..Default::default() },
            )
            .unwrap()
            .holds()
        });
        holds += usize::from(ok);
    }
    outcome(
        worst_rel <= 0.05 && worst_sum <= 1e-10 && holds == 100,
        format!(
            "marginal vs Monte Carlo max rel {worst_rel:.4}; path marginal |sum-1| {worst_sum:.1e}; bound holds {holds}/100"
        ),
    )
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_regimeswitch"))
        .args(args)
        .env("REGIMESWITCH_THREADS", "2")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn workflow(dir: &Path) -> Result<Vec<Vec<u8>>, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let model = p("model.json");
    std::fs::write(&model, serde_json::to_string(&ar_scenario_first()).unwrap()).map_err(|e| e.to_string())?;
    let steps: Vec<Vec<String>> = vec![
        vec!["simulate", "--model", &model, "--n", "300", "--seed", "11", "--out", &p("series.csv")],
        vec!["simulate", "--model", &model, "--n", "6", "--seed", "12", "--out", &p("small.csv")],
        vec![
            "fit", "--series", &p("series.csv"), "--m", "2", "--kind", "ar", "--seed", "3", "--iterations", "200",
            "--restarts", "2", "--out", &p("fit.json"), "--trajectory", &p("traj.csv"),
        ],
        vec!["fit", "--series", &p("series.csv"), "--m", "2", "--kind", "ar", "--algo", "em", "--out", &p("em.json")],
        vec![
            "select", "--series", &p("series.csv"), "--m-max", "3", "--kind", "ar", "--iterations", "100",
            "--restarts", "2", "--out", &p("sel.csv"), "--model-out", &p("chosen.json"),
        ],
        vec![
            "lrt", "--series", &p("series.csv"), "--m", "2", "--iterations", "100", "--restarts", "2", "--out",
            &p("lrt.json"),
        ],
        vec!["bound", "--series", &p("small.csv"), "--model", &model, "--out", &p("bound.csv")],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for s in &steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        if !cli(&args) {
            return Err(format!("command failed: {}", args[0]));
        }
    }
    ["series.csv", "small.csv", "fit.json", "traj.csv", "em.json", "sel.csv", "chosen.json", "lrt.json", "bound.csv"]
        .iter()
        .map(|f| std::fs::read(dir.join(f)).map_err(|e| e.to_string()))
        .collect()
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    match (workflow(a.path()), workflow(b.path())) {
        (Ok(x), Ok(y)) => {
            let same = x == y;
            outcome(same, format!("{} output files, identical: {same}", x.len()))
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("penalty arithmetic", penalties),
        ("forward vs enumeration", forward_vs_enumeration),
        ("FFBS exactness", ffbs_exactness),
        ("EM monotonicity", em_monotone),
        ("M-step optimality", mstep_optimality),
        ("HMM parameter recovery", hmm_recovery),
        ("state-count selection", selection),
        ("LRT size and power", lrt),
        ("conjugate marginals and bound", bayes_marginals),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {} {name}: {} [{:.1}s]", k + 1, o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
