//! Triple files, vocabularies with inverse relations, filter maps and
//! relation-cardinality categories.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INVERSE_SUFFIX: &str = "_reverse";
pub const SPLIT_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];

/// Threshold on tails-per-head / heads-per-tail separating "1" from "N".
pub const CARDINALITY_THRESHOLD: f64 = 1.5;

/// A labelled fact as read from disk.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl RawTriple {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        RawTriple {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
        }
    }
}

/// An index-encoded fact. Relation indices `>= R` are synthetic inverses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: u32,
    pub relation: u32,
    pub object: u32,
}

impl Triple {
    pub fn new(subject: u32, relation: u32, object: u32) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }
}

/// Parse tab-separated triples. `source` is only used in error messages.
pub fn parse_triples<R: BufRead>(reader: R, source: &Path) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: source.to_path_buf(),
                line: i + 1,
                message: "empty field".to_string(),
            });
        }
        out.push(RawTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<RawTriple>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triples(BufReader::new(file), path)
}

/// Bidirectional label/index maps. Relations hold the `R` base labels followed
/// by their `R` inverses, so relation `i + R` is the inverse of `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyDump", into = "VocabularyDump")]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: HashMap<String, u32>,
    relation_index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyDump {
    entities: Vec<String>,
    relations: Vec<String>,
}

impl From<Vocabulary> for VocabularyDump {
    fn from(v: Vocabulary) -> Self {
        VocabularyDump {
            entities: v.entities,
            relations: v.relations,
        }
    }
}

impl TryFrom<VocabularyDump> for Vocabulary {
    type Error = Error;

    fn try_from(d: VocabularyDump) -> Result<Self> {
        if !d.relations.len().is_multiple_of(2) {
            return Err(Error::Checkpoint(format!(
                "vocabulary lists {} relations; expected base + inverse pairs",
                d.relations.len()
            )));
        }
        let base = d.relations.len() / 2;
        for i in 0..base {
            let expected = format!("{}{INVERSE_SUFFIX}", d.relations[i]);
            if d.relations[i + base] != expected {
                return Err(Error::DuplicateRelation(d.relations[i + base].clone()));
            }
        }
        Vocabulary::from_parts(d.entities, d.relations[..base].to_vec())
    }
}

impl Vocabulary {
    /// Build from triples of every split; first-occurrence order.
    pub fn build<'a, I>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a RawTriple>,
    {
        let mut entities = Vec::new();
        let mut seen_entities = HashSet::new();
        let mut relations = Vec::new();
        let mut seen_relations = HashSet::new();
        for t in triples {
            for label in [&t.subject, &t.object] {
                if seen_entities.insert(label.as_str()) {
                    entities.push(label.clone());
                }
            }
            if seen_relations.insert(t.relation.as_str()) {
                relations.push(t.relation.clone());
            }
        }
        if entities.is_empty() {
            return Err(Error::Empty("vocabulary triples"));
        }
        Vocabulary::from_parts(entities, relations)
    }

    fn from_parts(entities: Vec<String>, base_relations: Vec<String>) -> Result<Self> {
        let mut entity_index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if entity_index.insert(e.clone(), i as u32).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entity label {e:?}")));
            }
        }
        let mut relations = base_relations.clone();
        relations.extend(
            base_relations
                .iter()
                .map(|r| format!("{r}{INVERSE_SUFFIX}")),
        );
        let mut relation_index = HashMap::with_capacity(relations.len());
        for (i, r) in relations.iter().enumerate() {
            if relation_index.insert(r.clone(), i as u32).is_some() {
                return Err(Error::DuplicateRelation(r.clone()));
            }
        }
        Ok(Vocabulary {
            entities,
            relations,
            entity_index,
            relation_index,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Stored relations, inverses included (2R).
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.relations.len() / 2
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn entity_label(&self, idx: u32) -> Option<&str> {
        self.entities.get(idx as usize).map(String::as_str)
    }

    pub fn relation_label(&self, idx: u32) -> Option<&str> {
        self.relations.get(idx as usize).map(String::as_str)
    }

    pub fn entity_id(&self, label: &str) -> Option<u32> {
        self.entity_index.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<u32> {
        self.relation_index.get(label).copied()
    }

    pub fn inverse_of(&self, relation: u32) -> u32 {
        let base = self.num_base_relations() as u32;
        if relation < base {
            relation + base
        } else {
            relation - base
        }
    }

    pub fn is_inverse(&self, relation: u32) -> bool {
        relation as usize >= self.num_base_relations()
    }

    /// Labels of a base-relation triple. Inverse triples decode to their
    /// synthetic relation label.
    pub fn decode(&self, t: Triple) -> Option<RawTriple> {
        Some(RawTriple::new(
            self.entity_label(t.subject)?,
            self.relation_label(t.relation)?,
            self.entity_label(t.object)?,
        ))
    }
}

/// Each raw `(s, r, o)` yields `(s, r, o)` followed by `(o, r + R, s)`.
pub fn encode_with_inverses(raw: &[RawTriple], vocab: &Vocabulary) -> Result<Vec<Triple>> {
    let base = vocab.num_base_relations() as u32;
    let lookup_entity = |label: &str| {
        vocab.entity_id(label).ok_or_else(|| Error::UnknownLabel {
            kind: "entity",
            label: label.to_string(),
        })
    };
    let mut out = Vec::with_capacity(raw.len() * 2);
    for t in raw {
        let s = lookup_entity(&t.subject)?;
        let o = lookup_entity(&t.object)?;
        let r = vocab
            .relation_id(&t.relation)
            .filter(|&r| r < base)
            .ok_or_else(|| Error::UnknownLabel {
                kind: "relation",
                label: t.relation.clone(),
            })?;
        out.push(Triple::new(s, r, o));
        out.push(Triple::new(o, r + base, s));
    }
    Ok(out)
}

/// Known-true objects for every `(subject, relation)` query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterMap {
    map: HashMap<(u32, u32), Vec<u32>>,
}

impl FilterMap {
    pub fn build(splits: &[&[Triple]]) -> Self {
        let mut sets: HashMap<(u32, u32), BTreeSet<u32>> = HashMap::new();
        for split in splits {
            for t in split.iter() {
                sets.entry((t.subject, t.relation))
                    .or_default()
                    .insert(t.object);
            }
        }
        FilterMap {
            map: sets
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
        }
    }

    /// Sorted objects for `(subject, relation)`; empty when the pair is unseen.
    pub fn get(&self, subject: u32, relation: u32) -> &[u32] {
        self.map
            .get(&(subject, relation))
            .map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, subject: u32, relation: u32, object: u32) -> bool {
        self.get(subject, relation).binary_search(&object).is_ok()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Entries sorted by key.
    pub fn sorted_entries(&self) -> Vec<((u32, u32), &[u32])> {
        let mut entries: Vec<_> = self.map.iter().map(|(&k, v)| (k, v.as_slice())).collect();
        entries.sort_unstable_by_key(|(k, _)| *k);
        entries
    }
}

pub fn build_filter_map(splits: &[&[Triple]]) -> FilterMap {
    FilterMap::build(splits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::config("split", format!("unknown split {other:?}"))),
        }
    }
}

/// Encoded splits plus the filter map over all of them.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub filter_map: FilterMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} entities, {} relations, {} train, {} valid, {} test",
            self.entities, self.relations, self.train, self.valid, self.test
        )
    }
}

impl Dataset {
    pub fn from_raw(train: &[RawTriple], valid: &[RawTriple], test: &[RawTriple]) -> Result<Self> {
        let vocab = Vocabulary::build(train.iter().chain(valid).chain(test))?;
        Dataset::from_raw_with_vocab(vocab, train, valid, test)
    }

    pub fn from_raw_with_vocab(
        vocab: Vocabulary,
        train: &[RawTriple],
        valid: &[RawTriple],
        test: &[RawTriple],
    ) -> Result<Self> {
        let train = encode_with_inverses(train, &vocab)?;
        let valid = encode_with_inverses(valid, &vocab)?;
        let test = encode_with_inverses(test, &vocab)?;
        Ok(Dataset::from_encoded(vocab, train, valid, test))
    }

    pub fn from_encoded(
        vocab: Vocabulary,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Self {
        let filter_map = FilterMap::build(&[&train, &valid, &test]);
        Dataset {
            vocab,
            train,
            valid,
            test,
            filter_map,
        }
    }

    /// Load `train.txt`, `valid.txt` and `test.txt` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let paths: Vec<PathBuf> = SPLIT_FILES.iter().map(|f| dir.join(f)).collect();
        let missing: Vec<String> = SPLIT_FILES
            .iter()
            .zip(&paths)
            .filter(|(_, p)| !p.is_file())
            .map(|(f, _)| f.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles {
                dir: dir.to_path_buf(),
                missing,
            });
        }
        let train = load_triples(&paths[0])?;
        let valid = load_triples(&paths[1])?;
        let test = load_triples(&paths[2])?;
        Dataset::from_raw(&train, &valid, &test)
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.vocab.num_entities(),
            relations: self.vocab.num_base_relations(),
            train: self.train.len() / 2,
            valid: self.valid.len() / 2,
            test: self.test.len() / 2,
        }
    }
}

/// Cardinality class of a base relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationCategory {
    #[serde(rename = "1:1")]
    OneToOne,
    #[serde(rename = "1:N")]
    OneToMany,
    #[serde(rename = "N:1")]
    ManyToOne,
    #[serde(rename = "N:N")]
    ManyToMany,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 4] = [
        RelationCategory::OneToOne,
        RelationCategory::OneToMany,
        RelationCategory::ManyToOne,
        RelationCategory::ManyToMany,
    ];

    pub fn from_ratios(tails_per_head: f64, heads_per_tail: f64) -> Self {
        let many_tails = tails_per_head >= CARDINALITY_THRESHOLD;
        let many_heads = heads_per_tail >= CARDINALITY_THRESHOLD;
        match (many_tails, many_heads) {
            (false, false) => RelationCategory::OneToOne,
            (true, false) => RelationCategory::OneToMany,
            (false, true) => RelationCategory::ManyToOne,
            (true, true) => RelationCategory::ManyToMany,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RelationCategory::OneToOne => "1:1",
            RelationCategory::OneToMany => "1:N",
            RelationCategory::ManyToOne => "N:1",
            RelationCategory::ManyToMany => "N:N",
        }
    }
}

impl fmt::Display for RelationCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-relation tails-per-head and heads-per-tail over base triples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cardinality {
    pub triples: usize,
    pub tails_per_head: f64,
    pub heads_per_tail: f64,
}

pub fn relation_cardinalities(train: &[Triple], vocab: &Vocabulary) -> Vec<Cardinality> {
    let base = vocab.num_base_relations();
    let mut counts = vec![0usize; base];
    let mut heads: Vec<HashSet<u32>> = vec![HashSet::new(); base];
    let mut tails: Vec<HashSet<u32>> = vec![HashSet::new(); base];
    for t in train.iter().filter(|t| (t.relation as usize) < base) {
        let r = t.relation as usize;
        counts[r] += 1;
        heads[r].insert(t.subject);
        tails[r].insert(t.object);
    }
    (0..base)
        .map(|r| {
            let n = counts[r] as f64;
            Cardinality {
                triples: counts[r],
                tails_per_head: if heads[r].is_empty() {
                    0.0
                } else {
                    n / heads[r].len() as f64
                },
                heads_per_tail: if tails[r].is_empty() {
                    0.0
                } else {
                    n / tails[r].len() as f64
                },
            }
        })
        .collect()
}

/// Category of every base relation, indexed by base relation id.
pub fn classify_relations(train: &[Triple], vocab: &Vocabulary) -> Vec<RelationCategory> {
    relation_cardinalities(train, vocab)
        .into_iter()
        .enumerate()
        .map(|(r, c)| {
            if c.triples == 0 {
                log::warn!(
                    "relation {:?} has no training triples; classified as N:N",
                    vocab.relation_label(r as u32).unwrap_or("?")
                );
                RelationCategory::ManyToMany
            } else {
                RelationCategory::from_ratios(c.tails_per_head, c.heads_per_tail)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn raw(s: &str, r: &str, o: &str) -> RawTriple {
        RawTriple::new(s, r, o)
    }

    #[test]
    fn parses_freebase_line() {
        let src = "/m/027rn\t/location/country\t/m/06cx9\n";
        let got = parse_triples(Cursor::new(src), Path::new("x")).unwrap();
        assert_eq!(got, vec![raw("/m/027rn", "/location/country", "/m/06cx9")]);
    }

    #[test]
    fn skips_blank_lines_and_keeps_order() {
        let src = "a\tr\tb\n\n  \nb\tr\tc\r\n";
        let got = parse_triples(Cursor::new(src), Path::new("x")).unwrap();
        assert_eq!(got, vec![raw("a", "r", "b"), raw("b", "r", "c")]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let src = "a\tr\tb\nbad line\n";
        let err = parse_triples(Cursor::new(src), Path::new("train.txt")).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        assert!(parse_triples(Cursor::new("a\t\tb\n"), Path::new("x")).is_err());
    }

    #[test]
    fn single_triple_vocabulary() {
        let v = Vocabulary::build(&[raw("a", "r", "b")]).unwrap();
        assert_eq!(v.num_entities(), 2);
        assert_eq!(v.relations(), &["r".to_string(), "r_reverse".to_string()]);
        assert_eq!(v.inverse_of(0), 1);
        assert_eq!(v.inverse_of(1), 0);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        assert!(Vocabulary::build(&[]).is_err());
    }

    #[test]
    fn colliding_inverse_label_is_rejected() {
        let t = [raw("a", "r", "b"), raw("a", "r_reverse", "b")];
        assert!(matches!(
            Vocabulary::build(&t),
            Err(Error::DuplicateRelation(_))
        ));
    }

    #[test]
    fn encode_emits_adjacent_inverse() {
        let t = [raw("a", "r", "b")];
        let v = Vocabulary::build(&t).unwrap();
        let enc = encode_with_inverses(&t, &v).unwrap();
        assert_eq!(enc, vec![Triple::new(0, 0, 1), Triple::new(1, 1, 0)]);
    }

    #[test]
    fn encode_self_loop() {
        let t = [raw("a", "r", "a")];
        let v = Vocabulary::build(&t).unwrap();
        let enc = encode_with_inverses(&t, &v).unwrap();
        assert_eq!(enc, vec![Triple::new(0, 0, 0), Triple::new(0, 1, 0)]);
    }

    #[test]
    fn encode_unknown_label_names_it() {
        let v = Vocabulary::build(&[raw("a", "r", "b")]).unwrap();
        let err = encode_with_inverses(&[raw("a", "r", "zzz")], &v).unwrap_err();
        assert!(err.to_string().contains("zzz"));
        let err = encode_with_inverses(&[raw("a", "r_reverse", "b")], &v).unwrap_err();
        assert!(err.to_string().contains("r_reverse"));
    }

    #[test]
    fn filter_map_unions_splits() {
        let train = [Triple::new(0, 0, 1), Triple::new(0, 0, 2)];
        let test = [Triple::new(0, 0, 3)];
        let fm = FilterMap::build(&[&train, &test]);
        assert_eq!(fm.get(0, 0), &[1, 2, 3]);
        assert!(fm.get(5, 0).is_empty());
    }

    #[test]
    fn vocabulary_json_round_trip() {
        let t = [raw("a", "r", "b"), raw("b", "q", "c")];
        let v = Vocabulary::build(&t).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(
            json,
            r#"{"entities":["a","b","c"],"relations":["r","q","r_reverse","q_reverse"]}"#
        );
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn classify_examples() {
        let v = Vocabulary::build(&[
            raw("e0", "r", "e1"),
            raw("e0", "r", "e2"),
            raw("e0", "r", "e3"),
            raw("e0", "q", "e1"),
        ])
        .unwrap();
        let one = [Triple::new(0, 1, 1)];
        let many = [
            Triple::new(0, 0, 1),
            Triple::new(0, 0, 2),
            Triple::new(0, 0, 3),
        ];
        let cats = classify_relations(&one, &v);
        // relation 0 has no triples in `one`
        assert_eq!(
            cats,
            vec![RelationCategory::ManyToMany, RelationCategory::OneToOne]
        );
        let cats = classify_relations(&many, &v);
        assert_eq!(cats[0], RelationCategory::OneToMany);
    }

    #[test]
    fn classify_ignores_inverse_triples() {
        let v = Vocabulary::build(&[raw("a", "r", "b")]).unwrap();
        let enc = [
            Triple::new(0, 0, 1),
            Triple::new(1, 1, 0),
            Triple::new(2, 1, 0),
        ];
        assert_eq!(
            classify_relations(&enc, &v),
            vec![RelationCategory::OneToOne]
        );
    }

    #[test]
    fn threshold_boundaries() {
        assert_eq!(
            RelationCategory::from_ratios(1.49, 1.49),
            RelationCategory::OneToOne
        );
        assert_eq!(
            RelationCategory::from_ratios(1.5, 1.0),
            RelationCategory::OneToMany
        );
        assert_eq!(
            RelationCategory::from_ratios(1.0, 1.5),
            RelationCategory::ManyToOne
        );
        assert_eq!(
            RelationCategory::from_ratios(1.5, 1.5),
            RelationCategory::ManyToMany
        );
    }

    #[test]
    fn missing_files_are_all_listed() {
        let dir = tempfile::tempdir().unwrap();
        let err = Dataset::load_dir(dir.path()).unwrap_err();
        let msg = err.to_string();
        for f in SPLIT_FILES {
            assert!(msg.contains(f), "{msg}");
        }
    }
}
