//! Assessment items, exemplar sets, labeled responses and seeded few-shot
//! splitting.
//!
//! Responses are stored one JSON record per line
//! (`{"response_id": .., "text": .., "gold": ..}`); exemplars as a single
//! JSON document per item with an `item_id` and a `levels` array of
//! `{level, text}` objects.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A grade on an item's rubric, `0..num_levels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GradeLevel(pub u32);

impl GradeLevel {
    pub fn value(self) -> u32 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for GradeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for GradeLevel {
    fn from(value: u32) -> Self {
        GradeLevel(value)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: malformed record: {message}")]
    MalformedRecord {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("{source_name}:{line}: gold grade {gold} is outside 0..{num_levels}")]
    GoldOutOfRange {
        source_name: String,
        line: usize,
        gold: i64,
        num_levels: u32,
    },
    #[error("{source_name}:{line}: duplicate response_id {response_id:?}")]
    DuplicateResponseId {
        source_name: String,
        line: usize,
        response_id: String,
    },
    #[error("{source_name}: malformed exemplar document: {message}")]
    MalformedDocument { source_name: String, message: String },
    #[error("exemplar set for item {item_id:?} has no exemplar for level {level}")]
    MissingLevel { item_id: String, level: u32 },
    #[error("exemplar set for item {item_id:?} has an empty exemplar for level {level}")]
    EmptyExemplar { item_id: String, level: u32 },
    #[error("exemplar set for item {item_id:?} lists level {level} more than once")]
    DuplicateLevel { item_id: String, level: u32 },
    #[error("item {item_id:?} needs at least 2 grading levels, found {found}")]
    TooFewLevels { item_id: String, found: usize },
    #[error("item_id must be non-empty")]
    EmptyItemId,
    #[error("level {level} has {available} responses, {required} required")]
    InsufficientSamples {
        level: GradeLevel,
        available: usize,
        required: usize,
    },
    #[error("response_id {0:?} appears more than once in the pool")]
    DuplicateInPool(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentItem {
    pub item_id: String,
    pub prompt_text: String,
    pub num_levels: u32,
    pub complexity_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledResponse {
    pub response_id: String,
    pub item_id: String,
    pub text: String,
    pub gold: GradeLevel,
}

/// One authored exemplar per grading level; the top level is the perfect
/// response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExemplarSet {
    item_id: String,
    prompt_text: Option<String>,
    complexity_label: Option<String>,
    exemplars: BTreeMap<GradeLevel, String>,
}

impl ExemplarSet {
    /// Validates that `texts[g]` exists and is non-empty for every level.
    pub fn new(item_id: impl Into<String>, texts: Vec<String>) -> Result<Self> {
        let item_id = item_id.into();
        let exemplars = texts
            .into_iter()
            .enumerate()
            .map(|(level, text)| (GradeLevel(level as u32), text))
            .collect();
        Self::from_map(item_id, None, None, exemplars)
    }

    fn from_map(
        item_id: String,
        prompt_text: Option<String>,
        complexity_label: Option<String>,
        exemplars: BTreeMap<GradeLevel, String>,
    ) -> Result<Self> {
        if item_id.trim().is_empty() {
            return Err(CorpusError::EmptyItemId);
        }
        let top = exemplars.keys().next_back().map_or(0, |g| g.0 as usize + 1);
        for level in 0..top as u32 {
            match exemplars.get(&GradeLevel(level)) {
                None => return Err(CorpusError::MissingLevel { item_id, level }),
                Some(text) if text.trim().is_empty() => {
                    return Err(CorpusError::EmptyExemplar { item_id, level })
                }
                Some(_) => {}
            }
        }
        if exemplars.len() < 2 {
            return Err(CorpusError::TooFewLevels {
                item_id,
                found: exemplars.len(),
            });
        }
        Ok(Self {
            item_id,
            prompt_text,
            complexity_label,
            exemplars,
        })
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn num_levels(&self) -> u32 {
        self.exemplars.len() as u32
    }

    pub fn levels(&self) -> impl Iterator<Item = GradeLevel> + '_ {
        self.exemplars.keys().copied()
    }

    pub fn text(&self, level: GradeLevel) -> Option<&str> {
        self.exemplars.get(&level).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (GradeLevel, &str)> {
        self.exemplars.iter().map(|(g, t)| (*g, t.as_str()))
    }

    pub fn perfect_level(&self) -> GradeLevel {
        GradeLevel(self.num_levels() - 1)
    }

    pub fn perfect(&self) -> &str {
        &self.exemplars[&self.perfect_level()]
    }

    pub fn item(&self) -> AssessmentItem {
        AssessmentItem {
            item_id: self.item_id.clone(),
            prompt_text: self.prompt_text.clone().unwrap_or_default(),
            num_levels: self.num_levels(),
            complexity_label: self.complexity_label.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let doc = ExemplarDocument {
            item_id: self.item_id.clone(),
            prompt_text: self.prompt_text.clone(),
            complexity_label: self.complexity_label.clone(),
            levels: self
                .exemplars
                .iter()
                .map(|(g, text)| ExemplarLevel {
                    level: i64::from(g.0),
                    text: text.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("exemplar document serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExemplarDocument {
    item_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    complexity_label: Option<String>,
    levels: Vec<ExemplarLevel>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExemplarLevel {
    level: i64,
    text: String,
}

pub fn parse_exemplars(source_name: &str, json: &str) -> Result<ExemplarSet> {
    let doc: ExemplarDocument =
        serde_json::from_str(json).map_err(|e| CorpusError::MalformedDocument {
            source_name: source_name.to_owned(),
            message: e.to_string(),
        })?;
    let mut exemplars = BTreeMap::new();
    for entry in doc.levels {
        let level = u32::try_from(entry.level).map_err(|_| CorpusError::MalformedDocument {
            source_name: source_name.to_owned(),
            message: format!("negative level {}", entry.level),
        })?;
        if exemplars.insert(GradeLevel(level), entry.text).is_some() {
            return Err(CorpusError::DuplicateLevel {
                item_id: doc.item_id,
                level,
            });
        }
    }
    ExemplarSet::from_map(doc.item_id, doc.prompt_text, doc.complexity_label, exemplars)
}

pub fn load_exemplars(path: impl AsRef<Path>) -> Result<ExemplarSet> {
    let path = path.as_ref();
    let json = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_exemplars(&path.display().to_string(), &json)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseRecord {
    response_id: String,
    text: String,
    #[serde(default)]
    gold: Option<i64>,
}

/// A response read for scoring; the human grade is optional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseToScore {
    pub response_id: String,
    pub text: String,
    pub gold: Option<GradeLevel>,
}

/// Blank lines are skipped but still counted for error line numbers.
fn parse_records<R: BufRead>(
    reader: R,
    source_name: &str,
    num_levels: u32,
    require_gold: bool,
) -> Result<Vec<ResponseToScore>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let malformed = |message: String| CorpusError::MalformedRecord {
            source_name: source_name.to_owned(),
            line: line_no,
            message,
        };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let record: ResponseRecord =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let gold = match record.gold {
            None if require_gold => return Err(malformed("missing field `gold`".into())),
            None => None,
            Some(g) if g < 0 || g >= i64::from(num_levels) => {
                return Err(CorpusError::GoldOutOfRange {
                    source_name: source_name.to_owned(),
                    line: line_no,
                    gold: g,
                    num_levels,
                });
            }
            Some(g) => Some(GradeLevel(g as u32)),
        };
        if !seen.insert(record.response_id.clone()) {
            return Err(CorpusError::DuplicateResponseId {
                source_name: source_name.to_owned(),
                line: line_no,
                response_id: record.response_id,
            });
        }
        out.push(ResponseToScore {
            response_id: record.response_id,
            text: record.text,
            gold,
        });
    }
    Ok(out)
}

/// Parses line-delimited labeled response records (`response_id`, `text`,
/// `gold`).
pub fn parse_responses<R: BufRead>(
    reader: R,
    source_name: &str,
    item_id: &str,
    num_levels: u32,
) -> Result<Vec<LabeledResponse>> {
    Ok(parse_records(reader, source_name, num_levels, true)?
        .into_iter()
        .map(|r| LabeledResponse {
            response_id: r.response_id,
            item_id: item_id.to_owned(),
            text: r.text,
            gold: r.gold.expect("gold required"),
        })
        .collect())
}

/// Like [`load_responses`] but `gold` may be absent.
pub fn load_responses_to_score(path: impl AsRef<Path>, num_levels: u32) -> Result<Vec<ResponseToScore>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_records(BufReader::new(file), &path.display().to_string(), num_levels, false)
}

pub fn load_responses(
    path: impl AsRef<Path>,
    item_id: &str,
    num_levels: u32,
) -> Result<Vec<LabeledResponse>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_responses(
        BufReader::new(file),
        &path.display().to_string(),
        item_id,
        num_levels,
    )
}

pub fn write_responses<W: Write>(mut writer: W, responses: &[LabeledResponse]) -> std::io::Result<()> {
    for r in responses {
        let record = ResponseRecord {
            response_id: r.response_id.clone(),
            text: r.text.clone(),
            gold: Some(i64::from(r.gold.0)),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledResponse>,
    pub test: Vec<LabeledResponse>,
    pub seed: u64,
    pub shots_per_level: usize,
}

/// Per-level shuffled order of pool indices. The generator is consumed the
/// same way regardless of `k`, so smaller draws are prefixes of larger ones.
pub(crate) fn shuffled_levels(
    pool: &[LabeledResponse],
    seed: u64,
) -> Result<BTreeMap<GradeLevel, Vec<usize>>> {
    let mut seen = HashSet::new();
    let mut by_level: BTreeMap<GradeLevel, Vec<usize>> = BTreeMap::new();
    for (idx, r) in pool.iter().enumerate() {
        if !seen.insert(r.response_id.as_str()) {
            return Err(CorpusError::DuplicateInPool(r.response_id.clone()));
        }
        by_level.entry(r.gold).or_default().push(idx);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in by_level.values_mut() {
        members.shuffle(&mut rng);
    }
    Ok(by_level)
}

/// Draws exactly `k` responses per grade level present in `pool` into the
/// training side; the rest (in pool order) is the test side.
pub fn few_shot_split(pool: &[LabeledResponse], k: usize, seed: u64) -> Result<DatasetSplit> {
    let by_level = shuffled_levels(pool, seed)?;
    let mut in_train = vec![false; pool.len()];
    let mut train = Vec::new();
    for (level, members) in &by_level {
        if members.len() < k {
            return Err(CorpusError::InsufficientSamples {
                level: *level,
                available: members.len(),
                required: k,
            });
        }
        for &idx in &members[..k] {
            in_train[idx] = true;
            train.push(pool[idx].clone());
        }
    }
    let test = pool
        .iter()
        .zip(&in_train)
        .filter(|(_, &taken)| !taken)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(DatasetSplit {
        train,
        test,
        seed,
        shots_per_level: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(per_level: &[usize]) -> Vec<LabeledResponse> {
        let mut out = Vec::new();
        for (level, &n) in per_level.iter().enumerate() {
            for i in 0..n {
                out.push(LabeledResponse {
                    response_id: format!("r{level}-{i}"),
                    item_id: "item".into(),
                    text: format!("text {level} {i}"),
                    gold: GradeLevel(level as u32),
                });
            }
        }
        out
    }

    #[test]
    fn parses_records_in_order() {
        let data = r#"{"response_id":"a","text":"one","gold":0}
{"response_id":"b","text":"two","gold":2}
{"response_id":"c","text":"three","gold":1}
"#;
        let rs = parse_responses(data.as_bytes(), "mem", "G4", 3).unwrap();
        assert_eq!(
            rs.iter().map(|r| r.response_id.as_str()).collect::<Vec<_>>(),
            ["a", "b", "c"]
        );
        assert_eq!(rs[1].gold, GradeLevel(2));
        assert_eq!(rs[0].item_id, "G4");
    }

    #[test]
    fn gold_out_of_range_names_the_line() {
        let data = "{\"response_id\":\"a\",\"text\":\"x\",\"gold\":0}\n{\"response_id\":\"b\",\"text\":\"y\",\"gold\":5}\n";
        let err = parse_responses(data.as_bytes(), "mem", "G4", 3).unwrap_err();
        assert!(matches!(err, CorpusError::GoldOutOfRange { line: 2, gold: 5, .. }));
        assert!(err.to_string().contains("mem:2"));
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_responses("".as_bytes(), "mem", "G4", 3).unwrap().is_empty());
    }

    #[test]
    fn malformed_and_duplicate_records() {
        let err = parse_responses("{\"response_id\":\"a\"}\n".as_bytes(), "mem", "x", 3).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedRecord { line: 1, .. }));
        let data = "{\"response_id\":\"a\",\"text\":\"x\",\"gold\":0}\n\n{\"response_id\":\"a\",\"text\":\"y\",\"gold\":1}\n";
        let err = parse_responses(data.as_bytes(), "mem", "x", 3).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateResponseId { line: 3, .. }));
    }

    #[test]
    fn exemplar_documents() {
        let ok = r#"{"item_id":"G4","levels":[{"level":0,"text":"a"},{"level":1,"text":"b"},{"level":2,"text":"c"}]}"#;
        let set = parse_exemplars("mem", ok).unwrap();
        assert_eq!(set.num_levels(), 3);
        assert_eq!(set.perfect(), "c");

        let missing = r#"{"item_id":"G4","levels":[{"level":0,"text":"a"},{"level":2,"text":"c"}]}"#;
        assert!(matches!(
            parse_exemplars("mem", missing),
            Err(CorpusError::MissingLevel { level: 1, .. })
        ));

        let empty = r#"{"item_id":"G4","levels":[{"level":0,"text":"a"},{"level":1,"text":"b"},{"level":2,"text":""}]}"#;
        assert!(matches!(
            parse_exemplars("mem", empty),
            Err(CorpusError::EmptyExemplar { level: 2, .. })
        ));

        let dup = r#"{"item_id":"G4","levels":[{"level":0,"text":"a"},{"level":0,"text":"b"}]}"#;
        assert!(matches!(
            parse_exemplars("mem", dup),
            Err(CorpusError::DuplicateLevel { level: 0, .. })
        ));

        let single = r#"{"item_id":"G4","levels":[{"level":0,"text":"a"}]}"#;
        assert!(matches!(
            parse_exemplars("mem", single),
            Err(CorpusError::TooFewLevels { .. })
        ));
    }

    #[test]
    fn exemplar_json_round_trips() {
        let set = ExemplarSet::new("G5", vec!["zero".into(), "one".into(), "two".into()]).unwrap();
        assert_eq!(parse_exemplars("mem", &set.to_json()).unwrap(), set);
    }

    #[test]
    fn split_counts() {
        let p = pool(&[3, 3, 3]);
        let split = few_shot_split(&p, 1, 7).unwrap();
        assert_eq!(split.train.len(), 3);
        assert_eq!(split.test.len(), 6);
        for level in 0..3 {
            assert_eq!(split.train.iter().filter(|r| r.gold.0 == level).count(), 1);
        }
    }

    #[test]
    fn split_k_zero_keeps_pool_as_test() {
        let p = pool(&[2, 2, 2]);
        let split = few_shot_split(&p, 0, 1).unwrap();
        assert!(split.train.is_empty());
        assert_eq!(split.test, p);
    }

    #[test]
    fn split_insufficient_level() {
        let p = pool(&[3, 2, 3]);
        let err = few_shot_split(&p, 3, 1).unwrap_err();
        assert!(matches!(
            err,
            CorpusError::InsufficientSamples { level: GradeLevel(1), available: 2, required: 3 }
        ));
    }

    #[test]
    fn split_ignores_absent_levels() {
        let p = pool(&[4, 0, 4]);
        let split = few_shot_split(&p, 2, 3).unwrap();
        assert_eq!(split.train.len(), 4);
    }

    #[test]
    fn smaller_draws_are_prefixes() {
        let p = pool(&[5, 5, 5]);
        let one = few_shot_split(&p, 1, 11).unwrap();
        let three = few_shot_split(&p, 3, 11).unwrap();
        for r in &one.train {
            assert!(three.train.contains(r));
        }
    }
}
