//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

#[path = "../../core/tests/common/mod.rs"]
mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use oracle::*;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;
use tqx_cli::pipeline::{prepare, synthetic_artifacts, write_run_dir, Plan, MANIFEST};
use tqx_cli::{run_pipeline, RunConfig};
use tqx_core::classifier::{evaluate_metrics, multi_seed_run, train, MeanStd, MetricSpec, MlpModel, Split, TrainConfig};
use tqx_core::clustering::{
    lloyd, match_clusters_to_labels, silhouette, top_keywords_per_cluster, Distance, KMeansConfig,
};
use tqx_core::retrieval::{
    aggregate_ranks, quantify, rank_keywords, rank_scores, select_top_m, text_based_embeddings, QuantifyConfig,
};
use tqx_core::synthetic::{generate_synthetic, SyntheticConfig};
use tqx_core::{Embeddings64, SimilarityMatrix};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("r{i}")).collect()
}

fn clamp_rows(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|r| r.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
        .collect()
}

fn oracle_ranks(sims: &[Vec<f64>]) -> Vec<Vec<u32>> {
    sims.iter().map(|r| ranks(r)).collect()
}

fn within_budget(start: Instant, budget: Duration, what: &str) -> Check {
    let took = start.elapsed();
    ensure!(took < budget, "{what} took {took:?}, budget {budget:?}");
    Ok(format!("{took:.2?}"))
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut r = rng(101);
    for case in 0..200 {
        let n = r.random_range(1..=10);
        let nw = r.random_range(1..=20);
        let d = r.random_range(1..=8);
        let m = r.random_range(1..=nw + 2);
        let images = random_matrix(&mut r, n, d);
        let keywords = random_matrix(&mut r, nw, d);
        let sims = clamp_rows(cosine(&images, &keywords));
        let s = SimilarityMatrix::from_rows(&sims).map_err(|e| e.to_string())?;

        let rm = rank_keywords(&s);
        let expected = oracle_ranks(&sims);
        for (i, row) in expected.iter().enumerate() {
            ensure!(rm.row(i) == row.as_slice(), "case {case}: rank row {i} differs");
        }
        let mean = mean_ranks(&expected);
        ensure!(aggregate_ranks(&rm) == mean, "case {case}: mean ranks differ");
        let sel = select_top_m(&mean, m).map_err(|e| e.to_string())?;
        ensure!(sel.selected == top_m(&mean, m), "case {case}: selection differs");

        let kw = Embeddings64::from_rows(ids(nw), &keywords).map_err(|e| e.to_string())?;
        let t = text_based_embeddings(&s, &sel, &kw, &ids(n), 1.0).map_err(|e| e.to_string())?;
        let unit_kw: Vec<Vec<f64>> = keywords.iter().map(|k| unit(k)).collect();
        for i in 0..n {
            let (_, e) = text_embedding(&sims[i], &sel.selected, &unit_kw, 1.0);
            for (a, b) in t.embeddings.row(i).iter().zip(&e) {
                ensure!((a - b).abs() <= 1e-6, "case {case}: embedding row {i} off by {}", (a - b).abs());
            }
        }
    }
    within_budget(start, Duration::from_secs(5), "200 instances")
        .map(|t| format!("200 instances match the oracle in {t}"))
}

fn criterion_2() -> Check {
    let mut r = rng(202);
    for case in 0..100 {
        let n = r.random_range(1..=10);
        let nw = r.random_range(2..=20);
        let m = r.random_range(1..=nw);
        let scores: Vec<f64> = (0..n * nw).map(|_| r.random_range(0.01..1.0)).collect();
        let s = SimilarityMatrix::new(n, nw, scores.clone()).map_err(|e| e.to_string())?;
        let base = rank_keywords(&s);
        let base_sel = select_top_m(&aggregate_ranks(&base), m).map_err(|e| e.to_string())?;
        let transforms: [(&str, fn(f64) -> f64); 2] = [("2x+1", |x| 2.0 * x + 1.0), ("x^3", |x| x * x * x)];
        for (name, f) in transforms {
            let moved: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            let rm = rank_scores(nw, &moved).map_err(|e| e.to_string())?;
            ensure!(rm == base, "case {case}: {name} changed the rank matrix");
            let sel = select_top_m(&aggregate_ranks(&rm), m).map_err(|e| e.to_string())?;
            ensure!(sel == base_sel, "case {case}: {name} changed the selection");
        }
    }
    Ok("ranks and selections unchanged under 2x+1 and x^3 on 100 instances".into())
}

fn criterion_3() -> Check {
    let mut r = rng(303);
    let temperatures = [0.1, 1.0, 10.0];
    for case in 0..100 {
        let n = r.random_range(1..=8);
        let nw = r.random_range(2..=15);
        let d = r.random_range(2..=6);
        let m = r.random_range(1..=nw);
        let images = random_matrix(&mut r, n, d);
        let keywords = random_matrix(&mut r, nw, d);
        let sims = clamp_rows(cosine(&images, &keywords));
        let s = SimilarityMatrix::from_rows(&sims).map_err(|e| e.to_string())?;
        let sel = select_top_m(&aggregate_ranks(&rank_keywords(&s)), m).map_err(|e| e.to_string())?;
        let kw = Embeddings64::from_rows(ids(nw), &keywords).map_err(|e| e.to_string())?;
        let unit_kw: Vec<Vec<f64>> = keywords.iter().map(|k| unit(k)).collect();
        let mut argmax: Option<Vec<usize>> = None;
        for &tau in &temperatures {
            let t = text_based_embeddings(&s, &sel, &kw, &ids(n), tau).map_err(|e| e.to_string())?;
            for i in 0..n {
                let w = t.weight_row(i);
                let sum: f64 = w.iter().sum();
                ensure!((sum - 1.0).abs() <= 1e-6, "case {case}: weights sum to {sum} at tau {tau}");
                ensure!(w.iter().all(|&v| v >= 0.0), "case {case}: negative weight");
                let mut explicit = vec![0.0; d];
                for (k, &j) in sel.selected.iter().enumerate() {
                    for (x, u) in explicit.iter_mut().zip(&unit_kw[j]) {
                        *x += w[k] * u;
                    }
                }
                for (a, b) in t.embeddings.row(i).iter().zip(&explicit) {
                    ensure!((a - b).abs() <= 1e-6, "case {case}: embedding differs from weighted sum");
                }
                let (ow, _) = text_embedding(&sims[i], &sel.selected, &unit_kw, tau);
                for (a, b) in w.iter().zip(&ow) {
                    ensure!((a - b).abs() <= 1e-6, "case {case}: weights differ from softmax oracle");
                }
            }
            let tops: Vec<usize> = (0..n).map(|i| t.top_keyword(i)).collect();
            match &argmax {
                None => argmax = Some(tops),
                Some(prev) => ensure!(*prev == tops, "case {case}: argmax keyword moved at tau {tau}"),
            }
        }
    }
    Ok("weights sum to 1, embeddings equal the explicit sum, argmax stable over tau".into())
}

fn criterion_4() -> Check {
    let mut r = rng(404);
    let mut runs = 0;
    let mut optimal = 0;
    for case in 0..20 {
        let n = r.random_range(4..=8);
        let k = r.random_range(2..=3);
        let points = random_matrix(&mut r, n, 2);
        let x = Embeddings64::from_rows(ids(n), &points).map_err(|e| e.to_string())?;
        let mut best = f64::INFINITY;
        for seed in 0..20 {
            let res = lloyd(&x, &KMeansConfig::new(k, seed)).map_err(|e| e.to_string())?;
            runs += 1;
            ensure!(
                res.inertia_trace.windows(2).all(|w| w[1] <= w[0]),
                "case {case} seed {seed}: inertia increased {:?}",
                res.inertia_trace
            );
            best = best.min(res.inertia);
        }
        let target = optimal_inertia(&points, k);
        if (best - target).abs() <= 1e-9 * target.max(1.0) {
            optimal += 1;
        }
    }
    ensure!(optimal >= 18, "best-of-20 reached the optimum in only {optimal}/20 instances");

    let points = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
    let x = Embeddings64::from_rows(ids(4), &points).map_err(|e| e.to_string())?;
    let res = lloyd(&x, &KMeansConfig::new(2, 0)).map_err(|e| e.to_string())?;
    ensure!(res.inertia == 1.0, "1-D fixture inertia {}", res.inertia);
    Ok(format!("{runs} monotone traces, optimum reached in {optimal}/20, 1-D fixture inertia 1.0"))
}

fn criterion_5() -> Check {
    let mut r = rng(505);
    for case in 0..100 {
        let n = r.random_range(4..=30);
        let k = r.random_range(2..=4);
        let d = r.random_range(1..=4);
        let points = random_matrix(&mut r, n, d);
        let labels: Vec<usize> = loop {
            let l: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
            if l.iter().any(|&v| v != l[0]) {
                break l;
            }
        };
        let x = Embeddings64::from_rows(ids(n), &points).map_err(|e| e.to_string())?;
        let s = silhouette(&x, &labels, Distance::Euclidean).map_err(|e| e.to_string())?;
        let expected = oracle::silhouette(&points, &labels);
        for (i, (a, b)) in s.per_sample.iter().zip(&expected).enumerate() {
            ensure!((a - b).abs() <= 1e-9, "case {case}: sample {i} {a} vs {b}");
        }
        let mean = expected.iter().sum::<f64>() / n as f64;
        ensure!((s.mean - mean).abs() <= 1e-9, "case {case}: mean {} vs {mean}", s.mean);

        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let relabeled: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let p = silhouette(&x, &relabeled, Distance::Euclidean).map_err(|e| e.to_string())?;
        for (a, b) in p.per_sample.iter().zip(&s.per_sample) {
            ensure!((a - b).abs() <= 1e-12, "case {case}: relabeling changed a score");
        }
    }
    Ok("100 instances within 1e-9, invariant under label permutation".into())
}

fn to_model(net: &Net) -> MlpModel<f64> {
    let mut m = MlpModel::zeros(net.d, net.h, net.c);
    m.w1 = net.w1.clone();
    m.b1 = net.b1.clone();
    m.bn_gamma = net.gamma.clone();
    m.bn_beta = net.beta.clone();
    m.w2 = net.w2.clone();
    m.b2 = net.b2.clone();
    m.bn_running_mean = net.running_mean.clone();
    m.bn_running_var = net.running_var.clone();
    m
}

fn criterion_6() -> Check {
    let mut r = rng(606);
    let mut checked = 0;
    for case in 0..50 {
        let d = r.random_range(1..=4);
        let h = r.random_range(1..=5);
        let c = r.random_range(2..=3);
        let net = Net::random(&mut r, d, h, c);
        let batch = random_matrix(&mut r, 5, d);
        let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..c)).collect();
        let (loss, grads, _) = to_model(&net)
            .loss_and_grads(&batch.concat(), &labels)
            .map_err(|e| e.to_string())?;
        ensure!((loss - net.loss(&batch, &labels)).abs() <= 1e-10, "case {case}: loss differs");
        let numeric = net.numeric_grads(&batch, &labels, 1e-5);
        for (p, (analytic, numeric)) in grads.slices().iter().zip(numeric.iter()).enumerate() {
            for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
                ensure!(grad_close(a, n, 1e-4, 1e-7), "case {case}: param {p}[{i}] analytic {a} numeric {n}");
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} partial derivatives over 50 networks"))
}

fn criterion_7() -> Check {
    let y = [0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 3, 3, 3, 3];
    let p = [0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 2, 1, 1, 2, 2, 2, 3, 2, 3, 3, 3];
    let cancer = [1, 2, 3];

    let perfect = evaluate_metrics(&y, &y, 4, &cancer).map_err(|e| e.to_string())?;
    ensure!(perfect.acc == 100.0 && perfect.acc_c == Some(100.0), "perfect accuracy {perfect:?}");
    ensure!(perfect.macro_f1 == 1.0 && perfect.kappa_quadratic == 1.0, "perfect scores {perfect:?}");

    let constant = evaluate_metrics(&[0, 0, 0, 0], &[0, 0, 1, 1], 2, &[1]).map_err(|e| e.to_string())?;
    ensure!(constant.kappa_quadratic.abs() <= 1e-12, "constant predictor kappa {}", constant.kappa_quadratic);

    let m = evaluate_metrics(&p, &y, 4, &cancer).map_err(|e| e.to_string())?;
    let expected = [
        ("acc", m.acc, 750.0 / 11.0),
        ("acc_c", m.acc_c.unwrap_or(f64::NAN), 62.5),
        ("macro_f1", m.macro_f1, 4709.0 / 6864.0),
        ("kappa", m.kappa_quadratic, 472.0 / 549.0),
        ("precision", m.precision, 1157.0 / 1680.0),
        ("recall", m.recall, 11.0 / 16.0),
    ];
    for (name, got, want) in expected {
        ensure!((got - want).abs() <= 1e-9, "{name}: {got} vs {want}");
    }
    Ok("perfect, constant and 4-class fixtures match within 1e-9".into())
}

fn criterion_8() -> Check {
    let start = Instant::now();
    let fx = generate_synthetic(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    let k = fx.class_names.len();
    let res = quantify(&fx.images, &fx.pool, &fx.keywords, &QuantifyConfig::default()).map_err(|e| e.to_string())?;
    let text = &res.text.embeddings;

    let clusters = lloyd(text, &KMeansConfig::new(k, 0)).map_err(|e| e.to_string())?;
    let sil = silhouette(text, &clusters.assignments, Distance::Euclidean).map_err(|e| e.to_string())?;
    ensure!(sil.mean >= 0.5, "text silhouette {:.3}", sil.mean);

    let matching = match_clusters_to_labels(&clusters.assignments, &fx.labels, k, k).map_err(|e| e.to_string())?;
    let agreement = matching.agreement_ratio();
    ensure!(agreement >= 0.95, "cluster agreement {:.3}", agreement);

    let split = Split::stratified(&fx.labels, k, 0.2, 0).map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 50,
        ..TrainConfig::default()
    };
    let spec = MetricSpec {
        n_classes: k,
        cancer_classes: (1..k).collect(),
    };
    let outcome = train(text, &fx.labels, &split, &config, &spec).map_err(|e| e.to_string())?;
    ensure!(outcome.metrics.acc >= 95.0, "MLP accuracy {:.1}%", outcome.metrics.acc);

    let tops = top_keywords_per_cluster(&res.ranks, &clusters.assignments, k, &fx.pool, 5).map_err(|e| e.to_string())?;
    for (cluster, top) in tops.iter().enumerate() {
        let anchor = fx.anchors[matching.mapping[cluster]];
        ensure!(
            top.iter().any(|kw| kw.index == anchor),
            "cluster {cluster} top-5 misses anchor {anchor}"
        );
    }
    let t = within_budget(start, Duration::from_secs(60), "synthetic fixture")?;
    Ok(format!(
        "silhouette {:.3}, agreement {:.1}%, MLP accuracy {:.1}%, anchors in top-5, {t}",
        sil.mean,
        100.0 * agreement,
        outcome.metrics.acc
    ))
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn reference_mean_std(values: &[f64]) -> (f64, f64) {
    // two-pass textbook formulas, n - 1 denominator
    let mut total = 0.0;
    for v in values {
        total += v;
    }
    let mean = total / values.len() as f64;
    let mut sq = 0.0;
    for v in values {
        sq += (v - mean) * (v - mean);
    }
    (mean, (sq / (values.len() - 1) as f64).sqrt())
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let files = synthetic_artifacts(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    write_run_dir(&data, &files, false).map_err(|e| e.to_string())?;

    let mut config = RunConfig::load(&data.join("config.toml")).map_err(|e| e.to_string())?;
    config.classifier.n_seeds = 50;
    config.classifier.train.epochs = 10;
    config.classifier.train.hidden_width = 32;
    let run_a = dir.path().join("a");
    write_run_dir(&run_a, &run_pipeline(config).map_err(|e| e.to_string())?, false).map_err(|e| e.to_string())?;

    let manifest = run_a.join(MANIFEST);
    let mut replays = Vec::new();
    for name in ["b", "c"] {
        let replay = RunConfig::load(&manifest).map_err(|e| e.to_string())?;
        let out = dir.path().join(name);
        write_run_dir(&out, &run_pipeline(replay).map_err(|e| e.to_string())?, false).map_err(|e| e.to_string())?;
        replays.push(read_tree(&out));
    }
    let a = read_tree(&run_a);
    for (i, tree) in replays.iter().enumerate() {
        ensure!(tree.keys().eq(a.keys()), "replay {i} lists different files");
        for (rel, bytes) in &a {
            ensure!(tree[rel] == *bytes, "replay {i}: {rel} differs");
        }
    }

    let mut checked = 0;
    for (rel, bytes) in &a {
        if !rel.ends_with("classification.json") {
            continue;
        }
        let doc: Value = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        let per_seed = doc["per_seed"].as_array().ok_or("per_seed missing")?;
        ensure!(per_seed.len() == 50, "{rel}: {} per-seed rows", per_seed.len());
        for metric in ["acc", "macro_f1", "kappa_quadratic", "precision", "recall"] {
            let values: Vec<f64> = per_seed.iter().map(|s| s[metric].as_f64().unwrap()).collect();
            let (mean, std) = reference_mean_std(&values);
            let got_mean = doc[metric]["mean"].as_f64().unwrap();
            let got_std = doc[metric]["std"].as_f64().unwrap();
            ensure!((got_mean - mean).abs() <= 1e-12 * mean.abs().max(1.0), "{rel} {metric} mean");
            ensure!((got_std - std).abs() <= 1e-12 * std.abs().max(1.0), "{rel} {metric} std");
        }
        checked += 1;
    }
    ensure!(checked > 0, "no classification reports found");

    let fixed = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
    ensure!(
        fixed.mean == 2.5 && (fixed.std - 1.2909944487358056).abs() <= 1e-15,
        "fixed-set mean/std {fixed:?}"
    );
    Ok(format!(
        "{} files identical across three runs, {checked} reports with 50 seeds and matching mean/std",
        a.len()
    ))
}

const BARE: &str = r#"
[data]
image_embeddings = "images.tqxe"
keyword_embeddings = "keywords.tqxe"
pool = "pool.jsonl"
labels = "labels.csv"

[dataset]
class_order = ["class-0", "class-1", "class-2"]
"#;

fn criterion_10() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let files = synthetic_artifacts(&SyntheticConfig::default()).map_err(|e| e.to_string())?;
    write_run_dir(&data, &files, false).map_err(|e| e.to_string())?;
    let path = data.join("bare.toml");
    fs::write(&path, BARE).map_err(|e| e.to_string())?;

    let config = RunConfig::load(&path).map_err(|e| e.to_string())?;
    let plan = Plan::full(&config);
    let resolved = prepare(config, plan).map_err(|e| e.to_string())?.config;
    let t = &resolved.classifier.train;
    let checks = [
        ("retrieval.m", resolved.retrieval.m as f64, 1000.0),
        ("retrieval.temperature", resolved.retrieval.temperature, 1.0),
        ("clustering.max_iter", resolved.clustering.max_iter as f64, 300.0),
        ("clustering.top_keywords", resolved.clustering.top_keywords as f64, 5.0),
        ("clustering.k", resolved.clustering.k.map_or(f64::NAN, |k| k as f64), 3.0),
        ("classifier.train.learning_rate", t.learning_rate, 0.01),
        ("classifier.train.epochs", t.epochs as f64, 300.0),
        ("classifier.n_seeds", resolved.classifier.n_seeds as f64, 50.0),
    ];
    for (name, got, want) in checks {
        ensure!(got == want, "{name} resolved to {got}, expected {want}");
    }

    let snapshot = include_str!("snapshots/bare_config.toml");
    let mut defaults = RunConfig::from_toml_str(BARE).map_err(|e| e.to_string())?;
    defaults.data = Default::default();
    ensure!(defaults.to_toml() == snapshot, "resolved config drifted from the snapshot:\n{}", defaults.to_toml());
    Ok("bare config resolves to the documented defaults with k = |classes|".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("retrieval matches the reference implementation", criterion_1),
        ("rank invariance under monotone transforms", criterion_2),
        ("softmax weight contract", criterion_3),
        ("K-Means monotonicity and optimality", criterion_4),
        ("silhouette matches the direct formula", criterion_5),
        ("MLP gradients match finite differences", criterion_6),
        ("classification metrics", criterion_7),
        ("end-to-end synthetic recovery", criterion_8),
        ("reproducible runs and seed aggregation", criterion_9),
        ("configuration defaults", criterion_10),
    ];
    let mut failed = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {title}: {detail} [{took:.2}s]", i + 1),
            Err(reason) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {title}: {reason} [{took:.2}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
