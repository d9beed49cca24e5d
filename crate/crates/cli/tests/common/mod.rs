#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nspgrade_core::corpus::{write_responses, ExemplarSet, GradeLevel, LabeledResponse};
use nspgrade_core::encoder::{EmbedRule, MockSpec, NspRule};

pub const EXEMPLARS: [&str; 3] = [
    "cheese",
    "heat moves",
    "heat moves from hot to cold by conduction",
];

pub const KEYWORDS: [&str; 6] = ["heat", "moves", "hot", "cold", "conduction", "cheese"];

/// Jaccard NSP plus keyword-count embeddings: level-0 answers share no
/// keyword with the perfect exemplar, the others overlap their own
/// exemplar most.
pub fn oracle_mock() -> MockSpec {
    MockSpec {
        nsp_rule: NspRule::Jaccard {},
        embed_rule: EmbedRule::KeywordCounts {
            keywords: KEYWORDS.iter().map(|s| s.to_string()).collect(),
        },
        fail_on: None,
    }
}

pub fn response_text(level: u32, i: usize) -> String {
    match level {
        0 => format!("i like cheese and bread r{i}"),
        1 => format!("heat moves quickly r{i}"),
        _ => format!("heat moves from hot to cold by conduction r{i}"),
    }
}

pub fn responses(item_id: &str, per_level: usize) -> Vec<LabeledResponse> {
    (0..per_level * 3)
        .map(|i| {
            let level = (i % 3) as u32;
            LabeledResponse {
                response_id: format!("{item_id}-{i}"),
                item_id: item_id.into(),
                text: response_text(level, i),
                gold: GradeLevel(level),
            }
        })
        .collect()
}

pub struct ItemFiles {
    pub exemplars: PathBuf,
    pub responses: PathBuf,
}

pub fn write_item(dir: &Path, item_id: &str, per_level: usize) -> ItemFiles {
    std::fs::create_dir_all(dir).unwrap();
    let set = ExemplarSet::new(item_id, EXEMPLARS.iter().map(|s| s.to_string()).collect()).unwrap();
    let exemplars = dir.join(format!("{item_id}.exemplars.json"));
    std::fs::write(&exemplars, set.to_json()).unwrap();
    let responses_path = dir.join(format!("{item_id}.responses.jsonl"));
    write_responses(
        std::fs::File::create(&responses_path).unwrap(),
        &responses(item_id, per_level),
    )
    .unwrap();
    ItemFiles {
        exemplars,
        responses: responses_path,
    }
}

pub fn write_samples(path: &Path, samples: &[LabeledResponse]) {
    write_responses(std::fs::File::create(path).unwrap(), samples).unwrap();
}

pub fn toy_words() -> Vec<String> {
    let mut words: Vec<String> = KEYWORDS.iter().map(|s| s.to_string()).collect();
    for w in ["i", "like", "and", "bread", "quickly", "from", "to", "by"] {
        words.push(w.into());
    }
    words
}

pub fn nspgrade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nspgrade"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}
