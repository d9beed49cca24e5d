//! Acceptance suite. Prints one `[PASS]`, `[FAIL]` or `[SKIP]` line per
//! criterion and exits non-zero if any criterion fails.
//!
//! Criterion 9 needs a real BERT checkpoint with an NSP head; point
//! `NSPGRADE_CHECKPOINT` at its directory to run it.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use nspgrade_bert::{write_toy_checkpoint, BertNspEncoder, ToyCheckpoint};
use nspgrade_core::baselines::random_score;
use nspgrade_core::encoder::{BackendConfig, BackendKind, EmbedEntry, EmbedRule, NspRule};
use nspgrade_core::eval::{
    cohens_kappa, f1_weighted, run_experiment, CellReport, CellStats, ExperimentConfig, ExperimentPlan,
    ItemConfig, MetricReport, ModelKind, ReportFormat, ReportMetadata,
};
use nspgrade_core::fewshot::{build_pairs, select_samples, SampleStrategy};
use nspgrade_core::mensp::compute_threshold;
use nspgrade_core::{
    Encoder, ExemplarSet, GradeLevel, LabeledResponse, MenspScorer, MockEncoder, MockSpec, ScorerOptions, Stage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

type Criterion = (&'static str, fn() -> Verdict);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let elapsed = start.elapsed();
    if elapsed < limit {
        Ok(())
    } else {
        Err(format!("took {elapsed:.2?}, limit {limit:?}"))
    }
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn labels(v: &[u32]) -> Vec<GradeLevel> {
    v.iter().copied().map(GradeLevel).collect()
}

// Independent references computed from a plain f64 contingency table.

fn table(h: &[u32], m: &[u32], g: usize) -> Vec<Vec<f64>> {
    let mut t = vec![vec![0.0; g]; g];
    for (&a, &b) in h.iter().zip(m) {
        t[a as usize][b as usize] += 1.0;
    }
    t
}

fn kappa_oracle(h: &[u32], m: &[u32], g: usize) -> f64 {
    let t = table(h, m, g);
    let n = h.len() as f64;
    let po: f64 = (0..g).map(|i| t[i][i]).sum::<f64>() / n;
    let pe: f64 = (0..g)
        .map(|i| {
            let row: f64 = t[i].iter().sum();
            let col: f64 = (0..g).map(|j| t[j][i]).sum();
            (row / n) * (col / n)
        })
        .sum();
    if pe == 1.0 {
        1.0
    } else {
        (po - pe) / (1.0 - pe)
    }
}

fn f1_weighted_oracle(h: &[u32], m: &[u32], g: usize) -> f64 {
    let t = table(h, m, g);
    let n = h.len() as f64;
    let mut total = 0.0;
    for (c, row) in t.iter().enumerate() {
        let tp = row[c];
        let support: f64 = row.iter().sum();
        let predicted: f64 = (0..g).map(|j| t[j][c]).sum();
        let f1 = if support + predicted == 0.0 {
            0.0
        } else {
            2.0 * tp / (support + predicted)
        };
        total += support * f1;
    }
    total / n
}

fn c1_metric_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let h: Vec<u32> = (0..50).map(|_| rng.random_range(0..3)).collect();
        let m: Vec<u32> = (0..50).map(|_| rng.random_range(0..3)).collect();
        let k = cohens_kappa(&labels(&h), &labels(&m)).unwrap();
        let f = f1_weighted(&labels(&h), &labels(&m)).unwrap();
        worst = worst
            .max((k - kappa_oracle(&h, &m, 3)).abs())
            .max((f - f1_weighted_oracle(&h, &m, 3)).abs());
    }
    if let Err(e) = within(Duration::from_secs(10), start) {
        return Verdict::Fail(e);
    }
    check(worst < 1e-9, format!("max |delta| = {worst:.3e} over 1000 pairs (< 1e-9)"))
}

fn c2_anchors() -> Verdict {
    let (h, m) = ([0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0]);
    let k = cohens_kappa(&labels(&h), &labels(&m)).unwrap();
    let (fh, fm) = ([0, 0, 1], [0, 1, 1]);
    let f = f1_weighted(&labels(&fh), &labels(&fm)).unwrap();
    let oracle_ok = (kappa_oracle(&h, &m, 3) - 0.5).abs() < 1e-12
        && (f1_weighted_oracle(&fh, &fm, 2) - 2.0 / 3.0).abs() < 1e-12;
    check(
        k == 0.5 && (f - 2.0 / 3.0).abs() <= 1e-9 && oracle_ok,
        format!("kappa = {k} (exactly 0.5), weighted F1 = {f:.12} (2/3 +- 1e-9)"),
    )
}

fn embed_table(entries: &[(&str, Vec<f64>)]) -> EmbedRule {
    EmbedRule::Table {
        entries: entries
            .iter()
            .map(|(t, v)| EmbedEntry {
                text: t.to_string(),
                vector: v.clone(),
            })
            .collect(),
        default: vec![1.0; entries[0].1.len()],
    }
}

fn table_mock(entries: &[(&str, Vec<f64>)]) -> Arc<dyn Encoder> {
    Arc::new(
        MockEncoder::new(
            MockSpec {
                nsp_rule: NspRule::Constant { probability: 0.5 },
                embed_rule: embed_table(entries),
                fail_on: None,
            },
            512,
        )
        .unwrap(),
    )
}

fn plain_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn c3_threshold() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let levels = 2 + trial % 4;
        let dim = 2 + trial % 7;
        let texts: Vec<String> = (0..levels).map(|l| format!("exemplar {l}")).collect();
        let vectors: Vec<Vec<f64>> = (0..levels)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let entries: Vec<(&str, Vec<f64>)> = texts.iter().map(String::as_str).zip(vectors.clone()).collect();
        let set = ExemplarSet::new("t", texts.clone()).unwrap();
        let theta = compute_threshold(table_mock(&entries).as_ref(), &set).unwrap();
        let top = &vectors[levels - 1];
        let hand: f64 = vectors[..levels - 1].iter().map(|v| plain_cosine(v, top)).sum::<f64>() / (levels - 1) as f64;
        worst = worst.max((theta - hand).abs());
    }

    // Both non-perfect exemplars sit at cosine 0.6 from the perfect one, so
    // theta is exactly 0.6 and a response equal to exemplar 0 lands on it.
    let entries = [
        ("zero", vec![0.6, 0.8]),
        ("one", vec![0.6, -0.8]),
        ("two", vec![1.0, 0.0]),
        ("on the line", vec![0.6, 0.8]),
        ("just below", vec![0.6, 0.8000001]),
    ];
    let set = ExemplarSet::new("t", vec!["zero".into(), "one".into(), "two".into()]).unwrap();
    let scorer = MenspScorer::new(table_mock(&entries), set, ScorerOptions::default()).unwrap();
    let on_line = scorer.score("on the line").unwrap();
    let below = scorer.score("just below").unwrap();
    let boundary_ok = scorer.cosine_to_perfect("on the line").unwrap() == scorer.theta()
        && on_line.stage == Stage::Matched
        && below.stage == Stage::ZeroIdentified;
    check(
        worst < 1e-12 && boundary_ok,
        format!(
            "max |theta - hand mean| = {worst:.3e} over 200 random sets (< 1e-12); \
             cosine == theta -> {:?}, just below -> {:?}",
            on_line.stage, below.stage
        ),
    )
}

fn zero_shot_plan(items: Vec<ItemConfig>, seeds: Vec<u64>) -> ExperimentPlan {
    ExperimentPlan {
        models: vec![ModelKind::Random, ModelKind::Mensp],
        shots: vec![0],
        seeds,
        ..ExperimentPlan::new(items)
    }
}

fn c4_oracle_pipeline() -> Verdict {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let item = write_item(dir.path(), "heat", 30);
    let config = ExperimentConfig {
        backend: BackendConfig {
            mock: Some(oracle_mock()),
            ..BackendConfig::default()
        },
        ..ExperimentConfig::new(zero_shot_plan(
            vec![ItemConfig {
                responses: item.responses,
                exemplars: item.exemplars,
                manual_samples: BTreeMap::new(),
            }],
            vec![0],
        ))
    };
    let backend: Arc<dyn Encoder> = Arc::new(MockEncoder::new(oracle_mock(), 512).unwrap());
    let report = run_experiment(&config, Some(backend)).unwrap();
    let cell = report.cell("heat", 0, None, ModelKind::Mensp).cloned();
    if let Err(e) = within(Duration::from_secs(5), start) {
        return Verdict::Fail(e);
    }
    match cell.and_then(|c| c.stats) {
        Some(s) => check(
            s.kappa_mean == 1.0 && s.f1_mean == 1.0,
            format!("90 responses: kappa = {}, F1 = {} (both exactly 1.0)", s.kappa_mean, s.f1_mean),
        ),
        None => Verdict::Fail("MeNSP cell missing or failed".into()),
    }
}

fn c5_random_calibration() -> Verdict {
    let start = Instant::now();
    let gold: Vec<GradeLevel> = (0..300).map(|i| GradeLevel(i % 3)).collect();
    let mean = (0..200u64)
        .map(|seed| cohens_kappa(&gold, &random_score(seed, gold.len(), 3)).unwrap())
        .sum::<f64>()
        / 200.0;
    if let Err(e) = within(Duration::from_secs(30), start) {
        return Verdict::Fail(e);
    }
    check(
        (-0.05..=0.05).contains(&mean),
        format!("mean kappa over 200 seeds = {mean:.4} (in [-0.05, 0.05])"),
    )
}

fn c6_combinatorics() -> Verdict {
    let mut notes = Vec::new();
    for k in [1usize, 3] {
        for g in [2u32, 3, 4] {
            let exemplars = ExemplarSet::new("item", (0..g).map(|l| format!("exemplar for level {l}")).collect()).unwrap();
            let pool: Vec<LabeledResponse> = (0..g * 5)
                .map(|i| LabeledResponse {
                    response_id: format!("r{i}"),
                    item_id: "item".into(),
                    text: format!("response number {i}"),
                    gold: GradeLevel(i % g),
                })
                .collect();
            let draw = |seed| select_samples(&pool, k, &SampleStrategy::random(), seed, "item", g).unwrap();
            let samples = draw(42);
            let per_level_ok = (0..g).all(|l| samples.iter().filter(|s| s.gold.0 == l).count() == k);
            let reproducible = samples == draw(42);
            let pairs = build_pairs(&samples, &exemplars).unwrap();
            let positives = pairs.iter().filter(|p| p.label).count();
            let kg = k * g as usize;
            if !(per_level_ok && reproducible && pairs.len() == kg * g as usize && positives == kg) {
                return Verdict::Fail(format!(
                    "k={k} G={g}: {} pairs, {positives} positive, per-level ok {per_level_ok}, reproducible {reproducible}",
                    pairs.len()
                ));
            }
            notes.push(format!("({k},{g}):{}/{positives}", pairs.len()));
        }
    }
    Verdict::Pass(format!("pairs/positives {}", notes.join(" ")))
}

fn evaluate_twice(dir: &Path, config: serde_json::Value) -> Result<(Vec<u8>, serde_json::Value), String> {
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    let mut outputs = Vec::new();
    for run in ["run-a", "run-b"] {
        let out = dir.join(run);
        let o = nspgrade(&["evaluate", "--config", path_str(&config_path), "--output", path_str(&out)]);
        if o.status.code() != Some(0) {
            return Err(format!("evaluate exited {:?}: {}", o.status.code(), stderr(&o)));
        }
        let csv = std::fs::read(out.join("report.csv")).unwrap();
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("report.meta.json")).unwrap()).unwrap();
        outputs.push((csv, meta));
    }
    let (b, _) = outputs.pop().unwrap();
    let (a, meta) = outputs.pop().unwrap();
    if a != b {
        return Err("report.csv differs between runs".into());
    }
    Ok((a, meta))
}

fn grid(item: &ItemFiles) -> serde_json::Value {
    json!({
        "items": [{ "responses": item.responses, "exemplars": item.exemplars }],
        "shots": [0, 1, 3],
        "seeds": [0, 1],
    })
}

fn c7_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let item = write_item(&dir.path().join("data"), "heat", 8);

    let mock_dir = dir.path().join("mock");
    std::fs::create_dir_all(&mock_dir).unwrap();
    let mock = json!({
        "backend": { "kind": "mock", "mock": oracle_mock() },
        "experiment": grid(&item),
    });
    let mock_csv = match evaluate_twice(&mock_dir, mock) {
        Ok((csv, _)) => csv,
        Err(e) => return Verdict::Fail(format!("mock backend: {e}")),
    };

    let toy_dir = dir.path().join("toy");
    write_toy_checkpoint(
        &toy_dir.join("checkpoint"),
        &ToyCheckpoint {
            words: toy_words(),
            ..ToyCheckpoint::default()
        },
    )
    .unwrap();
    let toy = json!({
        "backend": { "kind": "pretrained", "path": "checkpoint", "max_sequence_length": 64 },
        "finetune": { "epochs": 3, "learning_rate": 1e-3, "batch_size": 4 },
        "experiment": grid(&item),
    });
    let (toy_csv, meta) = match evaluate_twice(&toy_dir, toy) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(format!("toy backend: {e}")),
    };
    let failures = meta["failures"].as_array().map_or(0, Vec::len);
    let few_shot_mensp = String::from_utf8_lossy(&toy_csv)
        .lines()
        .filter(|l| l.contains(",MeNSP,") && !l.starts_with("heat,0,"))
        .count();
    check(
        failures == 0 && few_shot_mensp == 2,
        format!(
            "byte-identical report.csv: mock ({} bytes), toy trainable ({} bytes, {few_shot_mensp} few-shot MeNSP cells, {failures} failed cells)",
            mock_csv.len(),
            toy_csv.len()
        ),
    )
}

fn c8_report_format() -> Verdict {
    let report = MetricReport {
        items: vec!["G4".into()],
        cells: vec![CellReport {
            item: "G4".into(),
            shot: 0,
            strategy: None,
            model: ModelKind::Mensp,
            stats: Some(CellStats {
                seeds: 5,
                kappa_mean: 0.303,
                kappa_std: 0.003,
                f1_mean: 0.5,
                f1_std: 0.0,
            }),
            error: None,
        }],
        metadata: ReportMetadata {
            config_digest: "0".into(),
            backend: None,
            seeds: vec![0],
            timestamp: None,
        },
    };
    let md = report.render(ReportFormat::Markdown);
    check(
        md.contains("| 0 | - | MeNSP | 30.3±0.3 |"),
        "mean 0.303, std 0.003 renders as 30.3±0.3".into(),
    )
}

fn c9_real_backend() -> Verdict {
    let Some(checkpoint) = std::env::var_os("NSPGRADE_CHECKPOINT") else {
        return Verdict::Skip("set NSPGRADE_CHECKPOINT to a BERT checkpoint directory to run".into());
    };
    let start = Instant::now();
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/ice-trays");
    let backend_config = BackendConfig {
        kind: BackendKind::Pretrained,
        path: Some(PathBuf::from(checkpoint)),
        ..BackendConfig::default()
    };
    let backend: Arc<dyn Encoder> = match BertNspEncoder::from_backend_config(&backend_config) {
        Ok(b) => Arc::new(b),
        Err(e) => return Verdict::Fail(format!("cannot load checkpoint: {e}")),
    };
    let config = ExperimentConfig {
        backend: backend_config,
        ..ExperimentConfig::new(zero_shot_plan(
            vec![ItemConfig {
                responses: data.join("responses.jsonl"),
                exemplars: data.join("exemplars.json"),
                manual_samples: BTreeMap::new(),
            }],
            (0..5).collect(),
        ))
    };
    let report = match run_experiment(&config, Some(backend)) {
        Ok(r) => r,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    if let Err(e) = within(Duration::from_secs(300), start) {
        return Verdict::Fail(e);
    }
    let kappa = |model| {
        report
            .cell("ice-trays", 0, None, model)
            .and_then(|c| c.stats.as_ref())
            .map(|s| s.kappa_mean)
    };
    match (kappa(ModelKind::Mensp), kappa(ModelKind::Random)) {
        (Some(mensp), Some(random)) => check(
            mensp > random && mensp >= 0.3,
            format!("zero-shot kappa {mensp:.3} vs random mean {random:.3} (need > random and >= 0.3)"),
        ),
        _ => Verdict::Fail(format!("cells failed: {:?}", report.failures().map(|c| &c.error).collect::<Vec<_>>())),
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("C1 metric oracle equivalence", c1_metric_oracles),
        ("C2 hand-computed anchors", c2_anchors),
        ("C3 threshold exactness and strict boundary", c3_threshold),
        ("C4 oracle pipeline", c4_oracle_pipeline),
        ("C5 random-baseline calibration", c5_random_calibration),
        ("C6 few-shot combinatorics", c6_combinatorics),
        ("C7 evaluate determinism", c7_determinism),
        ("C8 report cell format", c8_report_format),
        ("C9 real-backend smoke test", c9_real_backend),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("[{tag}] {name}: {detail} ({:.2}s)", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
