//! End-to-end acceptance checks. Prints one PASS/FAIL/SKIP line per
//! criterion and exits non-zero if any criterion fails.
//!
//! Criterion 10 runs only when `DOCKET_REAL_LABELED` and
//! `DOCKET_REAL_UNLABELED` point at a real labeled corpus (JSONL) and a file
//! of unlabeled motions; `DOCKET_REAL_STANDARDIZATION` optionally supplies a
//! standardization table.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use docket_core::corpus::{indicator_phrase, Class};
use docket_core::eval::{bootstrap, confusion, metrics, ConfusionMatrix, EvaluationReport};
use docket_core::features::{ConcatFeatures, TokenCube};
use docket_core::interpret::PdpReport;
use docket_core::model::{encode, load_model, ConvLstmModel, Encoded, Encoder, HyperParams, MlpModel, Pipeline};
use docket_core::nn::{gradient_check, ElasticNet, GradCheckConfig};
use docket_core::pipeline::{self, RunConfig, Workspace};
use docket_core::rng;
use docket_core::train::{random_search, train, SearchGrid, SearchResult, StepEvent, TrainConfig};
use docket_core::vectorize::{EmbeddingMatrix, TfidfModel};
use rand::Rng;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Line {
    status: Status,
    detail: String,
}

fn check(ok: bool, detail: String) -> Line {
    Line {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn failed(e: impl std::fmt::Display) -> Line {
    Line {
        status: Status::Fail,
        detail: format!("error: {e}"),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Spearman rank correlation (average ranks for ties).
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for &k in &idx[i..=j] {
                r[k] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

struct FullRun {
    dir: tempfile::TempDir,
    seconds: f64,
}

fn full_run() -> Result<FullRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = RunConfig::from_file(&repo_file("configs/synthetic.conf")).map_err(|e| e.to_string())?;
    let ws = Workspace::new(dir.path(), config);
    let start = Instant::now();
    for stage in [
        "synth-gen",
        "preprocess",
        "train-embeddings",
        "tune",
        "train",
        "evaluate",
        "interpret",
    ] {
        let t = Instant::now();
        ws.run(stage).map_err(|e| format!("{stage}: {e}"))?;
        println!(
            "  [full synthetic run] {stage} finished in {:.1}s",
            t.elapsed().as_secs_f64()
        );
    }
    Ok(FullRun {
        dir,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn criterion_1(run: &FullRun) -> Line {
    let report: EvaluationReport = read_json(&run.dir.path().join(pipeline::EVALUATION_JSON));
    let m = &report.rows[0].metrics;
    check(
        m.accuracy >= 0.90 && m.macro_avg.f1 >= 0.85,
        format!(
            "tuned W2V/CNN/LSTM test accuracy {:.4} (>= 0.90), macro F1 {:.4} (>= 0.85); full run {:.0}s",
            m.accuracy, m.macro_avg.f1, run.seconds
        ),
    )
}

fn criterion_2(run: &FullRun) -> Line {
    let report: EvaluationReport = read_json(&run.dir.path().join(pipeline::EVALUATION_JSON));
    let row = report.rows.iter().find(|r| r.classifier == "Majority class").unwrap();
    let acc = row.metrics.accuracy;
    check(
        (acc - 0.47).abs() <= 0.02,
        format!("majority-class test accuracy {acc:.4} (0.47 +/- 0.02)"),
    )
}

fn criterion_3(run: &FullRun) -> Line {
    let root = run.dir.path();
    let model = match load_model(&root.join(pipeline::model_path(Pipeline::ConvLstmW2v))) {
        Ok(m) => m,
        Err(e) => return failed(e),
    };
    let emb = EmbeddingMatrix::load(&root.join(pipeline::EMBEDDINGS), 10).unwrap();
    let tfidf: TfidfModel = read_json::<TfidfModel>(&root.join(pipeline::TFIDF)).reindexed();
    let test = match Workspace::new(root, RunConfig::default()).split() {
        Ok(s) => s.test,
        Err(e) => return failed(e),
    };
    let mut r = rng::stream(3, 0);
    let pick: Vec<_> = (0..2).map(|_| test[r.random_range(0..test.len())].clone()).collect();
    let y: Vec<Class> = pick.iter().map(|p| p.label.unwrap()).collect();
    let reg = ElasticNet::new(5e-4, 1e-4).unwrap();
    let hp = |hidden| HyperParams {
        filters: 9,
        hidden,
        l1: 5e-4,
        l2: 1e-4,
    };

    let Some(conv) = model.classifier.conv_lstm() else {
        return failed("model file does not hold a conv_lstm model");
    };
    let mut conv = conv.clone();
    let Ok(Encoded::Tokens(cubes)) = encode(Pipeline::ConvLstmW2v, &model.encoder, &pick) else {
        return failed("could not encode token cubes");
    };
    let refs: Vec<&TokenCube> = cubes.iter().collect();
    let conv_report = gradient_check(&mut conv, &refs, &y, reg, &GradCheckConfig::default()).unwrap();

    let Ok(Encoded::Concat(xs)) = encode(Pipeline::MlpW2v, &Encoder::Embeddings(emb), &pick) else {
        return failed("could not encode pooled vectors");
    };
    let refs: Vec<&ConcatFeatures> = xs.iter().collect();
    let mut mlp = MlpModel::new(xs[0].dim(), &hp(50), &mut rng::stream(3, 1));
    let w2v_report = gradient_check(&mut mlp, &refs, &y, reg, &GradCheckConfig::default()).unwrap();

    let Ok(Encoded::Concat(xs)) = encode(Pipeline::MlpTfidf, &Encoder::Tfidf(tfidf), &pick) else {
        return failed("could not encode TFIDF vectors");
    };
    let refs: Vec<&ConcatFeatures> = xs.iter().collect();
    let mut mlp = MlpModel::new(xs[0].dim(), &hp(10), &mut rng::stream(3, 2));
    let sampled = GradCheckConfig {
        max_coordinates: Some(5000),
        ..Default::default()
    };
    let tfidf_report = gradient_check(&mut mlp, &refs, &y, reg, &sampled).unwrap();
    let conv_err = conv_report.max_relative_error;
    let mlp_err = w2v_report.max_relative_error.max(tfidf_report.max_relative_error);
    let kinks: usize = [&conv_report, &w2v_report, &tfidf_report]
        .iter()
        .flat_map(|r| &r.params)
        .map(|p| p.kinks)
        .sum();
    check(
        conv_err < 1e-4 && mlp_err < 1e-6,
        format!(
            "max relative error conv_lstm {conv_err:.2e} (< 1e-4), mlp {mlp_err:.2e} (< 1e-6); \
             {kinks} coordinates on the L1 kink excluded"
        ),
    )
}

fn criterion_4(run: &FullRun) -> Line {
    let root = run.dir.path();
    let model = load_model(&root.join(pipeline::model_path(Pipeline::ConvLstmW2v))).unwrap();
    let Encoder::Embeddings(emb) = &model.encoder else {
        return failed("model has no embeddings");
    };
    let prepared = match Workspace::new(root, RunConfig::default()).split() {
        Ok(s) => s.train,
        Err(e) => return failed(e),
    };
    let y: Vec<Class> = prepared.iter().map(|p| p.label.unwrap()).collect();
    let Ok(Encoded::Tokens(cubes)) = encode(Pipeline::ConvLstmW2v, &model.encoder, &prepared) else {
        return failed("could not encode token cubes");
    };
    let hp = model.metadata.hyperparams;
    let mut net = ConvLstmModel::new(emb, &hp, &mut rng::stream(4, 0));
    let initial = net.embeddings.value.clone();
    let mut steps = 0u64;
    let mut worst: f64 = 0.0;
    let mut frozen = true;
    let mut observer = |_: &StepEvent, m: &ConvLstmModel| {
        steps += 1;
        for row in m.filters.value.rows().into_iter().chain(m.embeddings.value.rows()) {
            worst = worst.max((row.dot(&row).sqrt() - 1.0).abs());
        }
        frozen &= m.embeddings.value == initial;
    };
    let train_config = TrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let reg = ElasticNet::new(hp.l1, hp.l2).unwrap();
    if let Err(e) = train(&mut net, &cubes, &y, reg, &train_config, 4, Some(&mut observer)) {
        return failed(e);
    }
    let end_frozen = net.embeddings.value == initial;
    check(
        worst < 1e-6 && frozen && end_frozen && steps > 0,
        format!("{steps} steps; worst filter/embedding norm deviation {worst:.2e} (< 1e-6); embeddings bitwise unchanged: {}", frozen && end_frozen),
    )
}

fn criterion_5(run: &FullRun) -> Line {
    let root = run.dir.path();
    let report: PdpReport = read_json(&root.join(pipeline::INTERPRET_DIR).join("report.json"));
    let model = load_model(&root.join(pipeline::model_path(Pipeline::ConvLstmW2v))).unwrap();
    let (a, b) = indicator_phrase(Class::Archived);
    let planted: HashSet<String> = model
        .metadata
        .preprocessor
        .process(&format!("{a} {b}"))
        .tokens
        .into_iter()
        .collect();
    let filters: Vec<usize> = report
        .similarity
        .iter()
        .filter(|f| f.tokens.iter().any(|(t, _)| planted.contains(t)))
        .map(|f| f.filter)
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for &k in &filters {
        let curve = report
            .curves
            .iter()
            .find(|c| c.t == -1 && c.filter == k && c.class == Class::Archived)
            .unwrap();
        let rho = spearman(&curve.grid, &curve.values);
        if best.is_none_or(|(_, r)| rho > r) {
            best = Some((k, rho));
        }
    }
    let worst_mean = report.curves.iter().map(|c| c.mean().abs()).fold(0.0, f64::max);
    let (a_ok, b_ok, c_ok) = (
        !filters.is_empty(),
        best.is_some_and(|(_, r)| r > 0.9),
        worst_mean < 1e-9,
    );
    let planted_list: Vec<&String> = planted.iter().collect();
    check(
        a_ok && b_ok && c_ok,
        format!(
            "(a) filters with {planted_list:?} in their top 3: {filters:?}; (b) best Spearman at t=-1 for class 1: {} (> 0.9); (c) max |curve mean| {worst_mean:.1e} over {} curves (< 1e-9)",
            best.map_or("none".to_string(), |(k, r)| format!("filter {k} rho {r:.3}")),
            report.curves.len()
        ),
    )
}

fn criterion_6() -> Line {
    let cm = ConfusionMatrix {
        counts: [[40, 5, 2], [10, 40, 0], [0, 2, 1]],
    };
    let m = metrics(&cm).unwrap();
    let oracle = [
        (m.accuracy, 0.81),
        (m.macro_avg.f1, (160.0 / 97.0 + 1.0 / 3.0) / 3.0),
        (m.macro_avg.precision, (0.8 + 40.0 / 47.0 + 1.0 / 3.0) / 3.0),
        (m.macro_avg.recall, (40.0 / 47.0 + 0.8 + 1.0 / 3.0) / 3.0),
        (m.weighted_avg.f1, 0.81),
        (m.weighted_avg.precision, (37.6 + 2000.0 / 47.0 + 1.0) / 100.0),
        (m.weighted_avg.recall, 0.81),
        (m.per_class[2].f1, 1.0 / 3.0),
    ];
    let worst = oracle.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut r = rng::stream(6, 0);
    let mut exact = 0;
    let mut tried = 0;
    while tried < 1000 {
        let mut cm = ConfusionMatrix::default();
        for row in cm.counts.iter_mut() {
            for c in row.iter_mut() {
                *c = r.random_range(0..500);
            }
        }
        if cm.total() == 0 {
            continue;
        }
        tried += 1;
        let m = metrics(&cm).unwrap();
        if m.weighted_avg.recall == m.accuracy {
            exact += 1;
        }
    }
    check(
        worst < 1e-12 && exact == 1000,
        format!("max deviation from hand oracle {worst:.1e} (< 1e-12); weighted recall == accuracy on {exact}/1000 matrices"),
    )
}

fn criterion_7() -> Line {
    let m = 500;
    let p = 0.9;
    let mut r = rng::stream(7, 0);
    let truth: Vec<Class> = (0..m).map(|_| Class::from_index(r.random_range(0..3))).collect();
    let pred: Vec<Class> = truth
        .iter()
        .map(|&t| {
            if r.random_bool(p) {
                t
            } else {
                Class::from_index((t.index() + r.random_range(1..3)) % 3)
            }
        })
        .collect();
    let a = bootstrap(&truth, &pred, 100, 99).unwrap();
    let b = bootstrap(&truth, &pred, 100, 99).unwrap();
    let se = a.metrics["accuracy"].std_error;
    let expected = (p * (1.0 - p) / m as f64).sqrt();
    let observed_acc = metrics(&confusion(&truth, &pred).unwrap()).unwrap().accuracy;
    check(
        a == b && (se - expected).abs() <= 0.3 * expected,
        format!(
            "repeat run identical: {}; accuracy SE {se:.4} vs sqrt(p(1-p)/m) = {expected:.4} (within 30%); simulated accuracy {observed_acc:.3}",
            a == b
        ),
    )
}

fn criterion_8(run: &FullRun) -> Line {
    let grid = SearchGrid::default();
    // Cheap deterministic score standing in for validation accuracy.
    let score = |hp: &HyperParams, seed: u64| Ok((rng::derive_seed(seed, hp.hidden as u64) % 1000) as f64 / 1000.0);
    let result = random_search(&grid, 50, 8, score).unwrap();
    let distinct: HashSet<String> = result.trials.iter().map(|t| format!("{:?}", t.hyperparams)).collect();
    let max = result
        .trials
        .iter()
        .map(|t| t.validation_accuracy)
        .fold(f64::MIN, f64::max);
    let table4 = HyperParams {
        filters: 9,
        hidden: 100,
        l1: 5e-4,
        l2: 1e-4,
    };
    let in_grid = result.trials.iter().all(|t| grid.contains(&t.hyperparams));
    let real: SearchResult = read_json(&run.dir.path().join(pipeline::tuning_path(Pipeline::ConvLstmW2v)));
    let real_distinct: HashSet<String> = real.trials.iter().map(|t| format!("{:?}", t.hyperparams)).collect();
    let real_max = real
        .trials
        .iter()
        .map(|t| t.validation_accuracy)
        .fold(f64::MIN, f64::max);
    let ok = distinct.len() == 50
        && in_grid
        && result.winner().validation_accuracy == max
        && grid.contains(&table4)
        && real_distinct.len() == 50
        && real.winner().validation_accuracy == real_max;
    check(
        ok,
        format!(
            "{} distinct grid configurations drawn, winner equals max: {}; full run: {} distinct, winner {:.4} == max {:.4}; (9, 100, 5e-4, 1e-4) in grid: {}",
            distinct.len(),
            result.winner().validation_accuracy == max,
            real_distinct.len(),
            real.winner().validation_accuracy,
            real_max,
            grid.contains(&table4)
        ),
    )
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Line {
    let settings = [
        "synth.n_labeled=300",
        "synth.n_unlabeled=1200",
        "cbow.epochs=2",
        "train.epochs=5",
        "search.trials=3",
        "search.hidden=10,25",
        "interpret.grid_points=11",
    ];
    let mut trees = Vec::new();
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        for stage in [
            "synth-gen",
            "preprocess",
            "train-embeddings",
            "tune",
            "train",
            "evaluate",
            "interpret",
        ] {
            let mut cmd = Command::new(env!("CARGO_BIN_EXE_docket"));
            cmd.arg("--workdir").arg(dir.path());
            for s in settings {
                cmd.args(["--set", s]);
            }
            let out = cmd.arg(stage).output().unwrap();
            if !out.status.success() {
                return failed(format!("{stage}: {}", String::from_utf8_lossy(&out.stderr)));
            }
        }
        trees.push(tree(dir.path()));
    }
    let reports = trees[0].keys().filter(|k| k.starts_with("reports")).count();
    let differing: Vec<&String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k)
        .collect();
    check(
        differing.is_empty() && trees[0].len() == trees[1].len() && reports > 0,
        format!(
            "two CLI runs synth-gen..interpret: {} files ({reports} reports) compared, differing: {differing:?}",
            trees[0].len()
        ),
    )
}

fn criterion_10() -> Line {
    let (Ok(labeled), Ok(unlabeled)) = (
        std::env::var("DOCKET_REAL_LABELED"),
        std::env::var("DOCKET_REAL_UNLABELED"),
    ) else {
        return Line {
            status: Status::Skip,
            detail: "set DOCKET_REAL_LABELED and DOCKET_REAL_UNLABELED to run on the real corpus".into(),
        };
    };
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::default();
    config.set("labeled", &labeled).unwrap();
    config.set("unlabeled", &unlabeled).unwrap();
    config
        .set(
            "standardization",
            &std::env::var("DOCKET_REAL_STANDARDIZATION").unwrap_or_default(),
        )
        .unwrap();
    let ws = Workspace::new(dir.path(), config);
    for stage in ["preprocess", "train-embeddings", "tune", "train", "evaluate"] {
        if let Err(e) = ws.run(stage) {
            return failed(format!("{stage}: {e}"));
        }
    }
    let report: EvaluationReport = read_json(&dir.path().join(pipeline::EVALUATION_JSON));
    let acc = report.rows[0].metrics.accuracy;
    check(
        acc >= 0.47 + 0.25,
        format!("real corpus test accuracy {acc:.4} (>= 0.72)"),
    )
}

fn main() {
    println!("acceptance: full synthetic run (configs/synthetic.conf)");
    let run = full_run();
    let needs_run = |f: &dyn Fn(&FullRun) -> Line| match &run {
        Ok(r) => f(r),
        Err(e) => failed(format!("full synthetic run failed: {e}")),
    };
    let lines = [
        needs_run(&criterion_1),
        needs_run(&criterion_2),
        needs_run(&criterion_3),
        needs_run(&criterion_4),
        needs_run(&criterion_5),
        criterion_6(),
        criterion_7(),
        needs_run(&criterion_8),
        criterion_9(),
        criterion_10(),
    ];
    let mut any_failed = false;
    for (i, line) in lines.iter().enumerate() {
        let tag = match line.status {
            Status::Pass => "PASS",
            Status::Fail => {
                any_failed = true;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("criterion {:>2} {tag}: {}", i + 1, line.detail);
    }
    if any_failed {
        std::process::exit(1);
    }
}
