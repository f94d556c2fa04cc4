//! Small synthetic knowledge graph used by tests, the acceptance suite and
//! the browser demo.
//!
//! 30 entities fall into six classes of five. Four relations cover the four
//! cardinality categories:
//!
//! * `bridges` (N:N): complete links between class pairs (0,1), (2,3), (4,5).
//! * `leads` (1:N): three heads, each linked to every member of one class.
//! * `belongs` (N:1): every member of three classes linked to one anchor.
//! * `pairs` (1:1): `x -> x + 15` for `x < 15`.
//!
//! Held-out triples are drawn only from the block-structured relations, so
//! each one is implied by the remaining members of its block.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kg_data::{Dataset, RawTriple};
use crate::model::ModelConfig;
use crate::optim::AdamHyper;
use crate::train::TrainSettings;

pub const NUM_ENTITIES: usize = 30;
const CLASS_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyKg {
    pub train: Vec<RawTriple>,
    pub valid: Vec<RawTriple>,
    pub test: Vec<RawTriple>,
}

fn entity(i: usize) -> String {
    format!("e{i:02}")
}

fn class(c: usize) -> std::ops::Range<usize> {
    c * CLASS_SIZE..(c + 1) * CLASS_SIZE
}

/// Model sized for the toy graph.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        entity_dim: 16,
        relation_dim: 16,
        hidden_rows: 16,
        relation_out_dim: 16,
        input_dropout: 0.3,
        hidden_dropout: 0.3,
        ..ModelConfig::default()
    }
}

/// 200-epoch budget with evaluation every 5 epochs.
pub fn toy_train_settings() -> TrainSettings {
    TrainSettings {
        batch_size: 16,
        epochs: 200,
        eval_every: 5,
        patience: 40,
        ..TrainSettings::default()
    }
}

pub fn toy_hyper() -> AdamHyper {
    AdamHyper::with_lr(0.005)
}

type Fact = (usize, &'static str, usize);

/// Build the toy graph. `seed` decides which block members are held out and
/// the order of the training file.
pub fn toy_kg(seed: u64) -> ToyKg {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let bridge_blocks = [(0, 1), (2, 3), (4, 5)];
    let lead_heads = [(10, 4), (15, 5), (20, 1)];
    let belong_anchors = [(1, 12), (3, 2), (5, 22)];

    let mut held_valid: Vec<Fact> = Vec::new();
    let mut held_test: Vec<Fact> = Vec::new();

    // two bridges per block with distinct heads and tails
    for &(a, b) in &bridge_blocks {
        let mut heads: Vec<usize> = class(a).collect();
        let mut tails: Vec<usize> = class(b).collect();
        heads.shuffle(&mut rng);
        tails.shuffle(&mut rng);
        held_valid.push((heads[0], "bridges", tails[0]));
        held_test.push((heads[1], "bridges", tails[1]));
    }
    for (i, &(h, c)) in lead_heads.iter().enumerate() {
        let mut tails: Vec<usize> = class(c).collect();
        tails.shuffle(&mut rng);
        let target = if i < 2 {
            &mut held_valid
        } else {
            &mut held_test
        };
        target.push((h, "leads", tails[0]));
    }
    for (i, &(c, anchor)) in belong_anchors.iter().enumerate() {
        let mut heads: Vec<usize> = class(c).collect();
        heads.shuffle(&mut rng);
        let target = if i < 1 {
            &mut held_valid
        } else {
            &mut held_test
        };
        target.push((heads[0], "belongs", anchor));
    }

    let mut all: Vec<Fact> = Vec::with_capacity(120);
    for &(a, b) in &bridge_blocks {
        for h in class(a) {
            for t in class(b) {
                all.push((h, "bridges", t));
            }
        }
    }
    for &(h, c) in &lead_heads {
        for t in class(c) {
            all.push((h, "leads", t));
        }
    }
    for &(c, anchor) in &belong_anchors {
        for h in class(c) {
            all.push((h, "belongs", anchor));
        }
    }
    for x in 0..15 {
        all.push((x, "pairs", x + 15));
    }

    let mut train: Vec<Fact> = all
        .into_iter()
        .filter(|f| !held_valid.contains(f) && !held_test.contains(f))
        .collect();
    train.shuffle(&mut rng);

    let to_raw = |facts: &[Fact]| -> Vec<RawTriple> {
        facts
            .iter()
            .map(|&(s, r, o)| RawTriple::new(&entity(s), r, &entity(o)))
            .collect()
    };
    ToyKg {
        train: to_raw(&train),
        valid: to_raw(&held_valid),
        test: to_raw(&held_test),
    }
}

impl ToyKg {
    /// Encode with a vocabulary whose entity order is `e00..e29`.
    pub fn dataset(&self) -> Result<Dataset> {
        let mut ordered: Vec<RawTriple> = (0..NUM_ENTITIES)
            .map(|i| RawTriple::new(&entity(i), "bridges", &entity(i)))
            .collect();
        for r in ["leads", "belongs", "pairs"] {
            ordered.push(RawTriple::new(&entity(0), r, &entity(0)));
        }
        let vocab = crate::kg_data::Vocabulary::build(&ordered)?;
        Dataset::from_raw_with_vocab(vocab, &self.train, &self.valid, &self.test)
    }

    /// Write `train.txt`, `valid.txt`, `test.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, split) in [
            ("train.txt", &self.train),
            ("valid.txt", &self.valid),
            ("test.txt", &self.test),
        ] {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            for t in split {
                writeln!(f, "{}\t{}\t{}", t.subject, t.relation, t.object)
                    .map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_data::{classify_relations, RelationCategory};

    #[test]
    fn sizes_and_split() {
        let kg = toy_kg(0);
        assert_eq!(kg.train.len() + kg.valid.len() + kg.test.len(), 120);
        assert_eq!(kg.valid.len(), 6);
        assert_eq!(kg.test.len(), 6);
        let ds = kg.dataset().unwrap();
        assert_eq!(ds.num_entities(), 30);
        assert_eq!(ds.vocab.num_base_relations(), 4);
    }

    #[test]
    fn every_category_present() {
        let ds = toy_kg(0).dataset().unwrap();
        let mut cats = classify_relations(&ds.train, &ds.vocab);
        cats.sort();
        assert_eq!(cats, RelationCategory::ALL.to_vec());
    }

    #[test]
    fn splits_are_disjoint_and_deterministic() {
        let a = toy_kg(3);
        assert_eq!(a, toy_kg(3));
        for t in a.valid.iter().chain(&a.test) {
            assert!(!a.train.contains(t));
        }
        assert!(a.valid.iter().all(|t| !a.test.contains(t)));
    }

    #[test]
    fn every_entity_seen_in_training() {
        let ds = toy_kg(0).dataset().unwrap();
        let mut seen = [false; NUM_ENTITIES];
        for t in &ds.train {
            seen[t.subject as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
