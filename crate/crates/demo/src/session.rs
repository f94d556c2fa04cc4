//! Plain-Rust side of the demo, usable and testable off the browser.

use comdense::eval::{self, RankingMetrics};
use comdense::kg_data::{Dataset, Split, Triple};
use comdense::model::{
    self, param_count, ModelConfig, ParamCount, ParamLayout, Parameters, Variant,
};
use comdense::ndmath::sigmoid;
use comdense::optim::{AdamHyper, AdamState};
use comdense::synthetic::{toy_hyper, toy_kg, toy_model_config, toy_train_settings};
use comdense::train::{self, build_examples, epoch_rng, init_rng, TrainExample, TrainSettings};
use comdense::Result;
use serde::Serialize;

/// Training session on the toy graph.
pub struct Session {
    dataset: Dataset,
    params: Parameters,
    state: AdamState,
    examples: Vec<TrainExample>,
    settings: TrainSettings,
    hyper: AdamHyper,
    epoch: usize,
    losses: Vec<f64>,
    evaluations: Vec<EvalPoint>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub valid: RankingMetrics,
    pub test: RankingMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub entity: String,
    pub score: f64,
    pub probability: f64,
    /// `train`, `valid`, `test` or empty when the triple is not in the graph.
    pub split: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct History<'a> {
    pub epoch: usize,
    pub losses: &'a [f64],
    pub evaluations: &'a [EvalPoint],
}

impl Session {
    pub fn new(variant: &str, seed: u64, learning_rate: f64) -> Result<Self> {
        let dataset = toy_kg(0).dataset()?;
        let config = ModelConfig {
            variant: variant.parse::<Variant>()?,
            ..toy_model_config()
        };
        let layout = ParamLayout::for_vocab(&config, &dataset.vocab)?;
        let params = Parameters::init(layout, &mut init_rng(seed));
        let state = AdamState::new(&params);
        let hyper = AdamHyper {
            learning_rate,
            ..toy_hyper()
        };
        hyper.validate()?;
        Ok(Session {
            examples: build_examples(&dataset.train),
            dataset,
            params,
            state,
            settings: TrainSettings {
                seed,
                ..toy_train_settings()
            },
            hyper,
            epoch: 0,
            losses: Vec::new(),
            evaluations: Vec::new(),
        })
    }

    /// Run `epochs` more epochs; returns the last epoch's mean loss.
    pub fn train(&mut self, epochs: usize) -> Result<f64> {
        for _ in 0..epochs {
            self.epoch += 1;
            let mut rng = epoch_rng(self.settings.seed, self.epoch);
            let stats = train::train_epoch(
                &mut self.params,
                &mut self.state,
                &self.examples,
                &self.settings,
                &self.hyper,
                &mut rng,
            )?;
            self.losses.push(stats.mean_loss);
        }
        Ok(self.losses.last().copied().unwrap_or(f64::NAN))
    }

    /// Filtered validation and test metrics at the current epoch.
    pub fn evaluate(&mut self) -> Result<EvalPoint> {
        let point = EvalPoint {
            epoch: self.epoch,
            valid: eval::evaluate(&self.params, &self.dataset, Split::Valid)?.overall,
            test: eval::evaluate(&self.params, &self.dataset, Split::Test)?.overall,
        };
        if self
            .evaluations
            .last()
            .is_none_or(|p| p.epoch != point.epoch)
        {
            self.evaluations.push(point);
        }
        Ok(point)
    }

    pub fn history(&self) -> History<'_> {
        History {
            epoch: self.epoch,
            losses: &self.losses,
            evaluations: &self.evaluations,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn entities(&self) -> &[String] {
        self.dataset.vocab.entities()
    }

    /// Every relation label, inverses included.
    pub fn relations(&self) -> &[String] {
        self.dataset.vocab.relations()
    }

    fn split_of(&self, t: Triple) -> &'static str {
        for (name, split) in [
            ("train", Split::Train),
            ("valid", Split::Valid),
            ("test", Split::Test),
        ] {
            if self.dataset.split(split).contains(&t) {
                return name;
            }
        }
        ""
    }

    /// Scores of every candidate object for `(subject, relation, ?)`, best first.
    pub fn query(&self, subject: &str, relation: &str) -> Result<Vec<Candidate>> {
        let vocab = &self.dataset.vocab;
        let s = vocab
            .entity_id(subject)
            .ok_or_else(|| comdense::Error::UnknownLabel {
                kind: "entity",
                label: subject.to_string(),
            })?;
        let r = vocab
            .relation_id(relation)
            .ok_or_else(|| comdense::Error::UnknownLabel {
                kind: "relation",
                label: relation.to_string(),
            })?;
        let scores = model::scores(&self.params, s, r)?;
        let mut out: Vec<Candidate> = scores
            .iter()
            .enumerate()
            .map(|(o, &score)| Candidate {
                entity: vocab.entities()[o].clone(),
                score,
                probability: sigmoid(score),
                split: self.split_of(Triple::new(s, r, o as u32)),
            })
            .collect();
        out.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamBreakdown {
    pub embeddings: u64,
    pub relation_aware: u64,
    pub common: u64,
    pub projection: u64,
    pub total: u64,
}

impl From<ParamCount> for ParamBreakdown {
    fn from(c: ParamCount) -> Self {
        ParamBreakdown {
            embeddings: c.embeddings,
            relation_aware: c.relation_aware,
            common: c.common,
            projection: c.projection,
            total: c.total(),
        }
    }
}

/// Parameter count for a JSON model config (missing fields take defaults)
/// over `entities` and `base_relations` plus their inverses.
pub fn param_breakdown(
    config_json: &str,
    entities: usize,
    base_relations: usize,
) -> Result<ParamBreakdown> {
    let config: ModelConfig = serde_json::from_str(config_json)?;
    config.validate()?;
    Ok(param_count(&config, entities, 2 * base_relations)?.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_learns_toy_graph() {
        let mut s = Session::new("ComDensE", 0, 0.005).unwrap();
        let first = s.train(1).unwrap();
        let later = s.train(59).unwrap();
        assert!(later < first);
        let point = s.evaluate().unwrap();
        assert_eq!(point.epoch, 60);
        assert!(point.valid.mrr >= 0.95, "{}", point.valid.mrr);
        s.evaluate().unwrap();
        assert_eq!(s.history().evaluations.len(), 1);
        assert_eq!(s.history().losses.len(), 60);
    }

    #[test]
    fn query_marks_known_objects() {
        let s = Session::new("SharedOnly", 1, 0.005).unwrap();
        let c = s.query("e00", "pairs").unwrap();
        assert_eq!(c.len(), 30);
        assert!(c.windows(2).all(|w| w[0].score >= w[1].score));
        let known: Vec<&Candidate> = c.iter().filter(|c| !c.split.is_empty()).collect();
        assert_eq!(known.len(), 1);
        assert_eq!(known[0].entity, "e15");
        assert!(s.query("nobody", "pairs").is_err());
        assert!(s.query("e00", "pairs_reverse").is_ok());
    }

    #[test]
    fn breakdown_matches_library_count() {
        let b = param_breakdown("{}", 14_541, 237).unwrap();
        assert_eq!(b.total, 66_552_576);
        let shared = param_breakdown(r#"{"variant": "SharedOnly"}"#, 100, 3).unwrap();
        assert_eq!(shared.relation_aware, 0);
        assert!(param_breakdown(r#"{"width": 0}"#, 10, 1).is_err());
        assert!(param_breakdown(r#"{"colour": 1}"#, 10, 1).is_err());
    }

    #[test]
    fn unknown_variant_rejected() {
        assert!(Session::new("Bogus", 0, 0.01).is_err());
        assert!(Session::new("ComDensE", 0, -1.0).is_err());
    }
}
