//! Filtered ranking evaluation.
//!
//! Every encoded triple `(s, r, o)` is a query `(s, r, ?)`. Because splits
//! carry inverse triples, queries over base relations are tail predictions
//! and queries over inverse relations are head predictions. Ties are broken
//! pessimistically: entities scoring equal to the target rank ahead of it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::{classify_relations, Dataset, RelationCategory, Split, Triple};
use crate::model::{self, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Head,
    Tail,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Head, Direction::Tail];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Head => "head",
            Direction::Tail => "tail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankRecord {
    pub triple: Triple,
    pub direction: Direction,
    pub filtered_rank: usize,
    pub raw_rank: usize,
}

/// Rank of `target` among all entities, raw and filtered.
///
/// `filter_out` lists other known-true objects and must be sorted ascending;
/// the target itself is always kept. Returns `(filtered_rank, raw_rank)`.
pub fn rank_of(scores: &[f64], target: u32, filter_out: &[u32]) -> Result<(usize, usize)> {
    let t = target as usize;
    if t >= scores.len() {
        return Err(Error::OutOfRange {
            what: "target entity",
            index: t,
            bound: scores.len(),
        });
    }
    debug_assert!(
        filter_out.windows(2).all(|w| w[0] <= w[1]),
        "filter must be sorted"
    );
    let st = scores[t];
    let mut raw = 1usize;
    for (j, &sj) in scores.iter().enumerate() {
        if j != t && sj >= st {
            raw += 1;
        }
    }
    let mut filtered = raw;
    let mut prev = None;
    for &j in filter_out {
        if prev == Some(j) {
            continue;
        }
        prev = Some(j);
        let j = j as usize;
        if j >= scores.len() {
            return Err(Error::OutOfRange {
                what: "filtered entity",
                index: j,
                bound: scores.len(),
            });
        }
        if j != t && scores[j] >= st {
            filtered -= 1;
        }
    }
    Ok((filtered, raw))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

impl RankingMetrics {
    pub fn from_ranks<I: IntoIterator<Item = usize>>(ranks: I) -> Self {
        let mut m = RankingMetrics::default();
        for r in ranks {
            m.count += 1;
            m.mrr += 1.0 / r as f64;
            m.hits1 += f64::from(r <= 1);
            m.hits3 += f64::from(r <= 3);
            m.hits10 += f64::from(r <= 10);
        }
        if m.count > 0 {
            let n = m.count as f64;
            m.mrr /= n;
            m.hits1 /= n;
            m.hits3 /= n;
            m.hits10 /= n;
        }
        m
    }

    pub fn from_records<'a, I: IntoIterator<Item = &'a RankRecord>>(records: I) -> Self {
        RankingMetrics::from_ranks(records.into_iter().map(|r| r.filtered_rank))
    }
}

/// Fraction of ranks at or below `n`.
pub fn hits_at(ranks: &[usize], n: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= n).count() as f64 / ranks.len() as f64
}

pub fn mean_reciprocal_rank(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Metrics per direction × relation category; empty cells are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryReport {
    pub cells: BTreeMap<Direction, BTreeMap<RelationCategory, Option<RankingMetrics>>>,
}

impl CategoryReport {
    pub fn get(&self, direction: Direction, category: RelationCategory) -> Option<&RankingMetrics> {
        self.cells.get(&direction)?.get(&category)?.as_ref()
    }

    /// Plain-text table with MRR / HIT@10 / HIT@1 per cell.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6}{:<6}{:>8}{:>8}{:>8}{:>8}",
            "pred", "type", "MRR", "HIT@10", "HIT@1", "count"
        );
        for d in Direction::ALL {
            for c in RelationCategory::ALL {
                match self.get(d, c) {
                    Some(m) => {
                        let _ = writeln!(
                            out,
                            "{:<6}{:<6}{:>8.3}{:>8.3}{:>8.3}{:>8}",
                            d.name(),
                            c.label(),
                            m.mrr,
                            m.hits10,
                            m.hits1,
                            m.count
                        );
                    }
                    None => {
                        let _ = writeln!(
                            out,
                            "{:<6}{:<6}{:>8}{:>8}{:>8}{:>8}",
                            d.name(),
                            c.label(),
                            "-",
                            "-",
                            "-",
                            0
                        );
                    }
                }
            }
        }
        out
    }
}

/// Direction of a record given `R` base relations.
pub fn direction_of(triple: &Triple, num_base_relations: usize) -> Direction {
    if (triple.relation as usize) < num_base_relations {
        Direction::Tail
    } else {
        Direction::Head
    }
}

fn base_relation(triple: &Triple, num_base_relations: usize) -> usize {
    triple.relation as usize % num_base_relations
}

/// Partition records into 8 cells by direction and the category of their base relation.
pub fn category_report(records: &[RankRecord], categories: &[RelationCategory]) -> CategoryReport {
    let num_base = categories.len();
    let mut buckets: BTreeMap<(Direction, RelationCategory), Vec<usize>> = BTreeMap::new();
    for rec in records {
        let cat = categories[base_relation(&rec.triple, num_base)];
        buckets
            .entry((rec.direction, cat))
            .or_default()
            .push(rec.filtered_rank);
    }
    let mut cells = BTreeMap::new();
    for d in Direction::ALL {
        let row: &mut BTreeMap<RelationCategory, Option<RankingMetrics>> =
            cells.entry(d).or_default();
        for c in RelationCategory::ALL {
            row.insert(
                c,
                buckets
                    .get(&(d, c))
                    .map(|ranks| RankingMetrics::from_ranks(ranks.iter().copied())),
            );
        }
    }
    CategoryReport { cells }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub overall: RankingMetrics,
    pub by_direction: BTreeMap<Direction, RankingMetrics>,
    pub by_category: CategoryReport,
    #[serde(skip)]
    pub records: Vec<RankRecord>,
}

impl Evaluation {
    pub fn from_records(records: Vec<RankRecord>, categories: &[RelationCategory]) -> Self {
        let overall = RankingMetrics::from_records(&records);
        let by_direction = Direction::ALL
            .into_iter()
            .map(|d| {
                (
                    d,
                    RankingMetrics::from_records(records.iter().filter(|r| r.direction == d)),
                )
            })
            .collect();
        let by_category = category_report(&records, categories);
        Evaluation {
            overall,
            by_direction,
            by_category,
            records,
        }
    }

    /// Tab-separated `(s, r, o, direction, filtered_rank, raw_rank)` rows.
    pub fn records_tsv(&self) -> String {
        let mut out =
            String::from("subject\trelation\tobject\tdirection\tfiltered_rank\traw_rank\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.triple.subject,
                r.triple.relation,
                r.triple.object,
                r.direction.name(),
                r.filtered_rank,
                r.raw_rank
            );
        }
        out
    }
}

fn rank_triple(params: &Parameters, dataset: &Dataset, t: &Triple) -> Result<RankRecord> {
    let scores = model::scores(params, t.subject, t.relation)?;
    let (filtered_rank, raw_rank) = rank_of(
        &scores,
        t.object,
        dataset.filter_map.get(t.subject, t.relation),
    )?;
    Ok(RankRecord {
        triple: *t,
        direction: direction_of(t, dataset.vocab.num_base_relations()),
        filtered_rank,
        raw_rank,
    })
}

/// Rank every triple of `triples` in inference mode. Records keep input order.
pub fn rank_triples(
    params: &Parameters,
    dataset: &Dataset,
    triples: &[Triple],
) -> Result<Vec<RankRecord>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        triples
            .par_iter()
            .map(|t| rank_triple(params, dataset, t))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        triples
            .iter()
            .map(|t| rank_triple(params, dataset, t))
            .collect()
    }
}

/// Filtered evaluation of one split with direction and category breakdowns.
pub fn evaluate(params: &Parameters, dataset: &Dataset, split: Split) -> Result<Evaluation> {
    let records = rank_triples(params, dataset, dataset.split(split))?;
    let categories = classify_relations(&dataset.train, &dataset.vocab);
    Ok(Evaluation::from_records(records, &categories))
}

/// Mean and sample standard deviation of metrics across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: usize,
    pub mean: RankingMetrics,
    pub stddev: RankingMetrics,
}

pub fn summarize_runs(runs: &[RankingMetrics]) -> RunSummary {
    let n = runs.len();
    let field = |f: fn(&RankingMetrics) -> f64| -> (f64, f64) {
        if n == 0 {
            return (0.0, 0.0);
        }
        let mean = runs.iter().map(f).sum::<f64>() / n as f64;
        let var = if n > 1 {
            runs.iter().map(|m| (f(m) - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        (mean, var.sqrt())
    };
    let (mrr, mrr_sd) = field(|m| m.mrr);
    let (h1, h1_sd) = field(|m| m.hits1);
    let (h3, h3_sd) = field(|m| m.hits3);
    let (h10, h10_sd) = field(|m| m.hits10);
    let count = runs.first().map_or(0, |m| m.count);
    RunSummary {
        runs: n,
        mean: RankingMetrics {
            mrr,
            hits1: h1,
            hits3: h3,
            hits10: h10,
            count,
        },
        stddev: RankingMetrics {
            mrr: mrr_sd,
            hits1: h1_sd,
            hits3: h3_sd,
            hits10: h10_sd,
            count,
        },
    }
}
