//! Acceptance checks. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use crmrank::aggregation::aggregate_feedback;
use crmrank::estimators::{
    empirical_average, ips, lagrangian_gradient, lagrangian_risk, lagrangian_risk_on, snips, snips_denominator,
};
use crmrank::evaluation::{
    evaluate_policy, learning_curve, rank_metrics, rank_metrics_with_gain, read_qrels, read_trec_run, Gain, Qrels,
    RankedList, DEFAULT_KS,
};
use crmrank::log_data::split_queries;
use crmrank::policy::{action_probabilities, grad_action_prob, init_params, ScorerKind};
use crmrank::simulator::{
    build_dataset, generate_world, logging_true_risk, simulate_log, true_risk, SimConfig, SimulatedDataset,
};
use crmrank::training::{lambda_grid, lambda_search, train_counterfactual, CrmObjective, LambdaSearch, TrainConfig};
use crmrank::{Action, BanditLog, BanditRecord, FeatureVector, PolicyParams};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Independent reference computations. Parameters are read straight from the
// flat buffer so nothing here shares code with the library's forward pass.

fn reference_show_prob(params: &PolicyParams<f64>, x: &[f64]) -> f64 {
    let v = params.values();
    let d = params.feature_dim();
    let (l0, l1) = match params.kind() {
        ScorerKind::Linear => {
            let l0 = v[2 * d] + (0..d).map(|j| v[j] * x[j]).sum::<f64>();
            let l1 = v[2 * d + 1] + (0..d).map(|j| v[d + j] * x[j]).sum::<f64>();
            (l0, l1)
        }
        ScorerKind::Mlp => {
            let h = params.hidden();
            let hid: Vec<f64> = (0..h)
                .map(|i| (v[h * d + i] + (0..d).map(|j| v[i * d + j] * x[j]).sum::<f64>()).tanh())
                .collect();
            let o = h * d + h;
            let l0 = v[o + 2 * h] + (0..h).map(|i| v[o + i] * hid[i]).sum::<f64>();
            let l1 = v[o + 2 * h + 1] + (0..h).map(|i| v[o + h + i] * hid[i]).sum::<f64>();
            (l0, l1)
        }
    };
    1.0 / (1.0 + (l0 - l1).exp())
}

fn reference_prob(params: &PolicyParams<f64>, x: &[f64], action: Action) -> f64 {
    let show = reference_show_prob(params, x);
    match action {
        Action::Show => show,
        Action::Hide => 1.0 - show,
    }
}

fn reference_estimates(records: &[BanditRecord<f64>], params: &PolicyParams<f64>) -> (f64, f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in records {
        let w = reference_prob(params, &r.context.to_f64(), r.action) / r.propensity;
        num += if r.loss { w } else { 0.0 };
        den += w;
    }
    let n = records.len() as f64;
    // (query, product, action) -> (loss sum, count, context)
    type Groups = HashMap<(String, String, Action), (f64, f64, Vec<f64>)>;
    let mut groups = Groups::new();
    for r in records {
        let g = groups
            .entry((r.query_id.clone(), r.product_id.clone(), r.action))
            .or_insert((0.0, 0.0, r.context.to_f64()));
        g.0 += if r.loss { 1.0 } else { 0.0 };
        g.1 += 1.0;
    }
    let ea = groups
        .iter()
        .map(|((_, _, a), (losses, count, x))| losses / count * reference_prob(params, x, *a))
        .sum();
    (num / den, num / n, ea)
}

fn random_params(rng: &mut ChaCha8Rng, kind: ScorerKind, d: usize, h: usize) -> PolicyParams<f64> {
    let len = match kind {
        ScorerKind::Linear => 2 * d + 2,
        ScorerKind::Mlp => h * d + h + 2 * h + 2,
    };
    let values = (0..len).map(|_| rng.random_range(-1.5..1.5)).collect();
    PolicyParams::from_flat(kind, d, h, values).unwrap()
}

fn random_log(rng: &mut ChaCha8Rng, n: usize, d: usize) -> BanditLog<f64> {
    // A handful of repeated contexts so empirical-average groups have more
    // than one member.
    let n_contexts = rng.random_range(1..=n.min(6));
    let contexts: Vec<(String, String, FeatureVector<f64>)> = (0..n_contexts)
        .map(|i| {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            (
                format!("q{}", i % 2),
                format!("p{i}"),
                FeatureVector::from_f64(&x).unwrap(),
            )
        })
        .collect();
    let records = (0..n)
        .map(|_| {
            let (q, p, x) = &contexts[rng.random_range(0..n_contexts)];
            let action = if rng.random_bool(0.5) {
                Action::Show
            } else {
                Action::Hide
            };
            BanditRecord::new(
                q.clone(),
                p.clone(),
                x.clone(),
                action,
                rng.random_range(0.05..=1.0),
                rng.random_bool(0.4),
            )
            .unwrap()
        })
        .collect();
    BanditLog::new(records, d, BTreeMap::new()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ---------------------------------------------------------------------------

fn c1_estimator_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for trial in 0..500 {
        let n = rng.random_range(1..=20);
        let d = rng.random_range(1..=4);
        let kind = if trial % 2 == 0 {
            ScorerKind::Linear
        } else {
            ScorerKind::Mlp
        };
        let params = random_params(&mut rng, kind, d, 3);
        let log = random_log(&mut rng, n, d);
        let (s_ref, i_ref, e_ref) = reference_estimates(log.records(), &params);
        let s = snips(&log, &params).map_err(fail)?.estimate;
        let i = ips(&log, &params).map_err(fail)?.estimate;
        let e = empirical_average(&log, &params).map_err(fail)?.estimate;
        for (name, got, want) in [("snips", s, s_ref), ("ips", i, i_ref), ("ea", e, e_ref)] {
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure(err <= 1e-12, || {
                format!("trial {trial}: {name} {got} vs reference {want}")
            })?;
        }
    }
    Ok(format!("500 random logs, max abs diff {worst:.1e}"))
}

fn c2_self_normalization() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..100 {
        let d = 3;
        let n = rng.random_range(1..=50);
        let params = random_params(&mut rng, ScorerKind::Linear, d, 0);
        let records: Vec<BanditRecord<f64>> = (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
                let x = FeatureVector::from_f64(&x).unwrap();
                let action = if rng.random_bool(0.5) {
                    Action::Show
                } else {
                    Action::Hide
                };
                let p = action_probabilities(&params, &x).unwrap().prob(action);
                BanditRecord::new("q", format!("p{i}"), x, action, p, rng.random_bool(0.3)).unwrap()
            })
            .collect();
        let mean_delta = records.iter().filter(|r| r.loss).count() as f64 / n as f64;
        let log = BanditLog::new(records.clone(), d, BTreeMap::new()).unwrap();
        let sn = snips(&log, &params).map_err(fail)?;
        let ip = ips(&log, &params).map_err(fail)?;
        ensure(sn.mean_importance_weight == 1.0, || {
            format!("trial {trial}: S = {}", sn.mean_importance_weight)
        })?;
        ensure(sn.estimate == mean_delta && ip.estimate == mean_delta, || {
            format!(
                "trial {trial}: snips {} ips {} mean {}",
                sn.estimate, ip.estimate, mean_delta
            )
        })?;

        // Power-of-two factors scale exactly in binary floating point; other
        // factors are held to rounding error.
        let base_p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=0.45)).collect();
        let scaled = |c: f64| {
            let recs = records
                .iter()
                .zip(&base_p)
                .map(|(r, &p)| BanditRecord {
                    propensity: p * c,
                    ..r.clone()
                })
                .collect();
            BanditLog::new(recs, d, BTreeMap::new()).unwrap()
        };
        let reference = scaled(1.0);
        let sn0 = snips(&reference, &params).map_err(fail)?.estimate;
        let ip0 = ips(&reference, &params).map_err(fail)?.estimate;
        for c in [0.25, 0.5, 2.0] {
            let log_c = scaled(c);
            let sn_c = snips(&log_c, &params).map_err(fail)?.estimate;
            let ip_c = ips(&log_c, &params).map_err(fail)?.estimate;
            ensure(sn_c == sn0, || {
                format!("trial {trial}: snips changed under c={c}: {sn_c} vs {sn0}")
            })?;
            ensure(ip_c == ip0 / c, || {
                format!("trial {trial}: ips {ip_c} vs {} under c={c}", ip0 / c)
            })?;
        }
        for c in [0.3, 1.7, 2.2] {
            let log_c = scaled(c);
            let sn_c = snips(&log_c, &params).map_err(fail)?.estimate;
            let ip_c = ips(&log_c, &params).map_err(fail)?.estimate;
            ensure(rel_err(sn_c, sn0) <= 1e-14 || (sn_c - sn0).abs() <= 1e-15, || {
                format!("trial {trial}: snips drift under c={c}")
            })?;
            ensure(
                rel_err(ip_c, ip0 / c) <= 1e-14 || (ip_c - ip0 / c).abs() <= 1e-15,
                || format!("trial {trial}: ips drift under c={c}"),
            )?;
        }
    }
    Ok("100 logs; identities exact, power-of-two scaling exact".into())
}

fn c3_lagrangian_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let d = rng.random_range(1..=5);
        let kind = if trial % 2 == 0 {
            ScorerKind::Linear
        } else {
            ScorerKind::Mlp
        };
        let params = random_params(&mut rng, kind, d, 4);
        let n = rng.random_range(1..=200);
        let log = random_log(&mut rng, n, d);
        let lambda: f64 = rng.random_range(0.0..=1.0);
        let lag = lagrangian_risk(&log, &params, lambda).map_err(fail)?;
        let ip = ips(&log, &params).map_err(fail)?.estimate;
        let s = snips_denominator(&log, &params).map_err(fail)?;
        let err = (lag - (ip - lambda * s)).abs();
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("trial {trial}: {lag} vs {}", ip - lambda * s))?;
    }
    Ok(format!("100 instances, max abs diff {worst:.1e}"))
}

fn vector_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-10 {
        diff
    } else {
        diff / scale
    }
}

fn central_difference<F: Fn(&PolicyParams<f64>) -> f64>(params: &PolicyParams<f64>, f: F) -> Vec<f64> {
    let h = 1e-5;
    (0..params.len())
        .map(|i| {
            let mut plus = params.clone();
            plus.values_mut()[i] += h;
            let mut minus = params.clone();
            minus.values_mut()[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn c4_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for kind in [ScorerKind::Linear, ScorerKind::Mlp] {
        for trial in 0..50 {
            let d = rng.random_range(1..=6);
            let h = rng.random_range(1..=5);
            let params = random_params(&mut rng, kind, d, h);
            let n = rng.random_range(1..=32);
            let log = random_log(&mut rng, n, d);
            let lambda: f64 = rng.random_range(0.0..=1.0);
            let batch = log.records();

            let analytic = lagrangian_gradient(batch, &params, lambda).map_err(fail)?;
            let numeric = central_difference(&params, |p| lagrangian_risk_on(batch, p, lambda).unwrap());
            let err = vector_rel_err(analytic.values(), &numeric);
            worst = worst.max(err);
            ensure(err < 1e-4, || {
                format!("{kind:?} trial {trial}: lagrangian gradient rel err {err:.2e}")
            })?;

            let x = &batch[0].context;
            for action in Action::ALL {
                let analytic = grad_action_prob(&params, x, action).map_err(fail)?;
                let numeric = central_difference(&params, |p| action_probabilities(p, x).unwrap().prob(action));
                let err = vector_rel_err(analytic.values(), &numeric);
                worst = worst.max(err);
                ensure(err < 1e-4, || {
                    format!("{kind:?} trial {trial}: action-prob gradient rel err {err:.2e}")
                })?;
            }
        }
    }
    Ok(format!("50 linear + 50 mlp instances, max rel err {worst:.1e}"))
}

fn estimator_world() -> crmrank::SyntheticWorld64 {
    let config = SimConfig {
        n_queries: 20,
        products_per_query: 25,
        logging_temperature: 2.0,
        ..SimConfig::default()
    };
    generate_world(&config, 55).unwrap()
}

fn c5_ips_unbiased() -> Check {
    let world = estimator_world();
    let target = init_params::<f64>(ScorerKind::Linear, world.feature_dim(), 0, 8).map_err(fail)?;
    let truth = true_risk(&world, &target).map_err(fail)?;
    let estimates: Vec<f64> = (0..200)
        .map(|i| {
            let log = simulate_log(&world, &world.logging, 2_000, 10_000 + i).unwrap();
            ips(&log, &target).unwrap().estimate
        })
        .collect();
    let m = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / m;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let se = (var / m).sqrt();
    let z = (mean - truth) / se;
    ensure(z.abs() <= 3.0, || {
        format!("mean IPS {mean:.5} vs true risk {truth:.5}, {z:.2} standard errors")
    })?;
    Ok(format!("mean IPS {mean:.5}, true risk {truth:.5}, z = {z:.2}"))
}

fn c6_snips_consistency() -> Check {
    let world = estimator_world();
    let target = init_params::<f64>(ScorerKind::Linear, world.feature_dim(), 0, 8).map_err(fail)?;
    let truth = true_risk(&world, &target).map_err(fail)?;
    let mean_abs_err = |n: usize| -> f64 {
        (0..20)
            .map(|i| {
                let log = simulate_log(&world, &world.logging, n, 20_000 + i).unwrap();
                (snips(&log, &target).unwrap().estimate - truth).abs()
            })
            .sum::<f64>()
            / 20.0
    };
    let small = mean_abs_err(500);
    let large = mean_abs_err(5_000);
    ensure(large < small, || {
        format!("mean |error| {large:.5} at n=5000 vs {small:.5} at n=500")
    })?;
    Ok(format!(
        "mean |SNIPS - risk|: {small:.5} at n=500, {large:.5} at n=5000"
    ))
}

fn experiment_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        epochs: 10,
        eval_every: 2_000,
        seed,
        ..TrainConfig::default()
    }
}

struct MainRun {
    data: SimulatedDataset<f64>,
    search: LambdaSearch<f64>,
}

fn main_run() -> MainRun {
    let data = build_dataset::<f64>(&SimConfig::default(), 7).unwrap();
    let p0 = init_params(ScorerKind::Linear, data.world.feature_dim(), 0, 7).unwrap();
    let search = lambda_search(&data.log, &data.dev, &p0, &experiment_train_config(7), 2).unwrap();
    MainRun { data, search }
}

fn c7_crm_learning(run: &MainRun) -> Check {
    let world = &run.data.world;
    let logging_risk = logging_true_risk(world, &world.logging).map_err(fail)?;
    let learned_risk = true_risk(world, &run.search.params).map_err(fail)?;
    let logging_map = evaluate_policy(&world.logging.as_policy(), &run.data.test, &DEFAULT_KS)
        .map_err(fail)?
        .map;
    let learned_map = evaluate_policy(&run.search.params, &run.data.test, &DEFAULT_KS)
        .map_err(fail)?
        .map;
    let detail = format!(
        "lambda* {:.3}; true risk {learned_risk:.4} vs logging {logging_risk:.4}; test MAP {learned_map:.4} vs logging {logging_map:.4}",
        run.search.lambda_star
    );
    ensure(learned_risk < logging_risk && learned_map > logging_map, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn c8_estimator_ordering() -> Check {
    let mut sums = [0.0f64; 3];
    let seeds = 1..=5u64;
    let n = seeds.clone().count() as f64;
    for seed in seeds {
        let data = build_dataset::<f64>(&SimConfig::default(), seed).map_err(fail)?;
        let p0 = init_params(ScorerKind::Linear, data.world.feature_dim(), 0, seed).map_err(fail)?;
        let config = experiment_train_config(seed);
        let search = lambda_search(&data.log, &data.dev, &p0, &config, 2).map_err(fail)?;
        let ips_out = train_counterfactual(&data.log, &data.dev, &p0, &config, CrmObjective::Ips).map_err(fail)?;
        let ea_out =
            train_counterfactual(&data.log, &data.dev, &p0, &config, CrmObjective::EmpiricalAverage).map_err(fail)?;
        for (slot, params) in [&search.params, &ips_out.best, &ea_out.best].into_iter().enumerate() {
            sums[slot] += evaluate_policy(params, &data.test, &DEFAULT_KS).map_err(fail)?.map;
        }
    }
    let [lag, ips_map, ea] = sums.map(|s| s / n);
    let detail = format!("mean test MAP: lagrangian {lag:.4}, ips {ips_map:.4}, ea {ea:.4}");
    ensure(lag >= ips_map && ips_map >= ea, || detail.clone())?;
    Ok(detail)
}

fn c9_lambda_s(run: &MainRun) -> Check {
    let data = &run.data;
    let p0 = init_params(ScorerKind::Linear, data.world.feature_dim(), 0, 7).map_err(fail)?;
    let lambdas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let grid = lambda_grid(&data.log, &data.dev, &p0, &experiment_train_config(7), &lambdas).map_err(fail)?;
    let s: Vec<f64> = grid.iter().map(|(p, _)| p.s).collect();
    let inversions: Vec<f64> = s.windows(2).filter(|w| w[1] < w[0]).map(|w| w[0] - w[1]).collect();
    let mut best = 0;
    for (i, (p, _)) in grid.iter().enumerate() {
        if p.dev_metrics.map > grid[best].0.dev_metrics.map {
            best = i;
        }
    }
    let best_s = s[best];
    let series = s.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ");
    let detail = format!(
        "S over lambda 0.1..0.9: [{series}]; dev-best lambda {:.1} has S {best_s:.4}",
        lambdas[best]
    );
    ensure(inversions.len() <= 1 && inversions.iter().all(|&d| d <= 0.02), || {
        detail.clone()
    })?;
    ensure((0.8..=1.2).contains(&best_s), || detail.clone())?;
    Ok(detail)
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn c10_metric_fixture() -> Check {
    let runs = read_trec_run(BufReader::new(File::open(fixture("run.txt")).map_err(fail)?)).map_err(fail)?;
    let qrels = read_qrels(BufReader::new(File::open(fixture("qrels.txt")).map_err(fail)?)).map_err(fail)?;
    let expected: serde_json::Value =
        serde_json::from_reader(File::open(fixture("expected.json")).map_err(fail)?).map_err(fail)?;
    ensure(runs.len() == 20, || format!("fixture has {} queries", runs.len()))?;
    let mut worst: f64 = 0.0;
    for (gain, key) in [(Gain::Linear, "linear"), (Gain::Exponential, "exponential")] {
        let report = rank_metrics_with_gain(&runs, &qrels, &[5, 10], gain).map_err(fail)?;
        let want = &expected[key];
        for (measure, got) in [
            ("map", report.map),
            ("recip_rank", report.mrr),
            ("P_5", report.precision(5)),
            ("P_10", report.precision(10)),
            ("ndcg_cut_5", report.ndcg(5)),
            ("ndcg_cut_10", report.ndcg(10)),
        ] {
            let w = want[measure]
                .as_f64()
                .ok_or_else(|| format!("missing {key}.{measure}"))?;
            worst = worst.max((got - w).abs());
            ensure((got - w).abs() <= 1e-4, || {
                format!("{key} {measure}: {got} vs trec_eval {w}")
            })?;
        }
    }
    let hand: Qrels = [("q".to_string(), [("a".to_string(), 0u8), ("b".to_string(), 3u8)].into())].into();
    let list = RankedList::new("q", vec![("a".into(), 2.0), ("b".into(), 1.0)]).map_err(fail)?;
    let ndcg2 = rank_metrics(&[list], &hand, &[2]).map_err(fail)?.ndcg(2);
    ensure((ndcg2 - 0.630930).abs() <= 1e-6, || {
        format!("hand example NDCG@2 {ndcg2}")
    })?;
    Ok(format!("max diff vs trec_eval {worst:.1e}; hand NDCG@2 {ndcg2:.6}"))
}

fn c11_aggregation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut impressions = Vec::new();
    let mut positives = Vec::new();
    for q in 0..40 {
        for p in 0..30 {
            let (qid, pid) = (format!("q{q}"), format!("p{p}"));
            let vis: u64 = if rng.random_bool(0.1) {
                rng.random_range(48..=52)
            } else {
                rng.random_range(0..=150)
            };
            let pos = if rng.random_bool(0.5) {
                0
            } else {
                rng.random_range(0..=vis)
            };
            impressions.extend(std::iter::repeat_n((qid.clone(), pid.clone()), vis as usize));
            positives.extend(std::iter::repeat_n((qid, pid), pos as usize));
        }
    }
    impressions.shuffle(&mut rng);
    positives.shuffle(&mut rng);

    let table = aggregate_feedback::<f64, _, _, _, _, _, _>(
        impressions.iter().map(|(q, p)| (q.as_str(), p.as_str())),
        positives.iter().map(|(q, p)| (q.as_str(), p.as_str())),
        50,
    )
    .map_err(fail)?;

    // Brute force with exact integer label arithmetic.
    let mut counts: HashMap<(String, String), (u64, u64)> = HashMap::new();
    for k in &impressions {
        counts.entry(k.clone()).or_default().0 += 1;
    }
    for k in &positives {
        counts.entry(k.clone()).or_default().1 += 1;
    }
    counts.retain(|_, (v, _)| *v >= 50);
    let mut best: HashMap<String, (u64, u64)> = HashMap::new();
    for ((q, _), &(v, p)) in &counts {
        let e = best.entry(q.clone()).or_insert((1, 0));
        if (p as u128) * (e.0 as u128) > (e.1 as u128) * (v as u128) {
            *e = (v, p);
        }
    }
    ensure(table.len() == counts.len(), || {
        format!("{} pairs vs {} expected", table.len(), counts.len())
    })?;
    for ((q, p), &(v, pos)) in &counts {
        let got = table.get(q, p).ok_or_else(|| format!("missing pair ({q}, {p})"))?;
        let rr = pos as f64 / v as f64;
        let (bv, bp) = best[q];
        let max_rr = bp as f64 / bv as f64;
        let nrr = if bp == 0 { 0.0 } else { rr / max_rr };
        let label = if bp == 0 {
            0
        } else {
            let num = 4 * pos as u128 * bv as u128;
            let den = v as u128 * bp as u128;
            num.div_ceil(den) as u8
        };
        ensure(got.visibility == v && got.positives == pos, || {
            format!("counts differ for ({q}, {p})")
        })?;
        ensure(got.rr == rr && got.nrr == nrr, || {
            format!("rr/nrr differ for ({q}, {p}): {:?}", got)
        })?;
        ensure(got.label == label, || {
            format!("label {} vs {label} for ({q}, {p})", got.label)
        })?;
    }

    let ids: Vec<String> = (0..3060).map(|i| format!("query{i}")).collect();
    let split = split_queries(ids, (0.6, 0.2, 0.2), 11).map_err(fail)?;
    let sizes = (split.train.len(), split.dev.len(), split.test.len());
    ensure(sizes == (1836, 612, 612), || format!("split sizes {sizes:?}"))?;
    let all: BTreeSet<&String> = split.train.iter().chain(&split.dev).chain(&split.test).collect();
    ensure(all.len() == 3060, || "split is not a partition".into())?;
    Ok(format!("{} pairs after filtering match; split {sizes:?}", counts.len()))
}

fn c12_learning_progress(run: &MainRun) -> Check {
    let curve = learning_curve(&run.search.history).map_err(fail)?;
    let (first, last) = (curve.first().ok_or("empty curve")?, curve.last().ok_or("empty curve")?);
    let detail = format!(
        "avg rank {:.2} -> {:.2}; avg DCG {:.3} -> {:.3} over {} checkpoints",
        first.avg_rank,
        last.avg_rank,
        first.avg_dcg,
        last.avg_dcg,
        curve.len()
    );
    ensure(last.avg_rank < first.avg_rank && last.avg_dcg > first.avg_dcg, || {
        detail.clone()
    })?;
    Ok(detail)
}

fn report(id: &str, name: &str, limit: Duration, elapsed: Duration, result: Check) -> bool {
    let within = elapsed <= limit;
    let (status, detail) = match (&result, within) {
        (Ok(d), true) => ("PASS", d.clone()),
        (Ok(d), false) => ("FAIL", format!("{d}; took longer than {limit:?}")),
        (Err(e), _) => ("FAIL", e.clone()),
    };
    println!(
        "criterion {id:>2} {status} {name} [{:.2}s]: {detail}",
        elapsed.as_secs_f64()
    );
    status == "PASS"
}

fn timed<F: FnOnce() -> Check>(f: F) -> (Duration, Check) {
    let start = Instant::now();
    let r = f();
    (start.elapsed(), r)
}

fn main() {
    let secs = Duration::from_secs;
    let mut ok = true;
    let (t, r) = timed(c1_estimator_oracle);
    ok &= report("1", "estimator oracle equivalence", secs(1), t, r);
    let (t, r) = timed(c2_self_normalization);
    ok &= report("2", "self-normalization identities", secs(1), t, r);
    let (t, r) = timed(c3_lagrangian_identity);
    ok &= report("3", "lagrangian identity", secs(1), t, r);
    let (t, r) = timed(c4_gradients);
    ok &= report("4", "gradient correctness", secs(10), t, r);
    let (t, r) = timed(c5_ips_unbiased);
    ok &= report("5", "IPS unbiasedness", secs(30), t, r);
    let (t, r) = timed(c6_snips_consistency);
    ok &= report("6", "SNIPS consistency", secs(30), t, r);

    let start = Instant::now();
    let run = main_run();
    let (t7, r7) = timed(|| c7_crm_learning(&run));
    let (t12, r12) = timed(|| c12_learning_progress(&run));
    let shared = start.elapsed() - t7 - t12;
    ok &= report("7", "CRM beats logging policy", secs(120), shared + t7, r7);
    let (t, r) = timed(c8_estimator_ordering);
    ok &= report("8", "estimator ordering", secs(300), t, r);
    let (t, r) = timed(|| c9_lambda_s(&run));
    ok &= report("9", "lambda-S behaviour", secs(300), t, r);
    let (t, r) = timed(c10_metric_fixture);
    ok &= report("10", "trec_eval fixture", secs(5), t, r);
    let (t, r) = timed(c11_aggregation);
    ok &= report("11", "aggregation pipeline", secs(5), t, r);
    ok &= report("12", "learning progress shape", secs(120), shared + t7 + t12, r12);

    if !ok {
        eprintln!("acceptance: at least one criterion failed");
        std::process::exit(1);
    }
    println!("acceptance: all 12 criteria passed");
}
