//! Combined relation-aware and common dense encoder.
//!
//! A query `(s, r)` is encoded as `x = [e_s; e_r]`, passed through a
//! relation-specific branch and a shared branch, concatenated, projected back
//! to entity space as `h_sr`, and scored against every entity embedding with
//! an inner product.
//!
//! Parameters live in a flat list of tensors described by a [`ParamLayout`],
//! which is what the optimizer, checkpoints and parameter accounting iterate
//! over.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::Vocabulary;
use crate::ndmath::{
    affine_backward_accumulate, affine_forward, check_rate, dot, dropout,
    project_backward_accumulate, project_forward, Activation, DropoutMask, Matrix,
};

/// Which relation-aware encoder is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    /// Per-relation affine maps plus the common layer.
    #[default]
    ComDensE,
    /// Common layer only; no relation-aware branch.
    SharedOnly,
    /// Relation branch is `x + v_r`.
    RelationTranslationOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [
        Variant::ComDensE,
        Variant::SharedOnly,
        Variant::RelationTranslationOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ComDensE => "ComDensE",
            Variant::SharedOnly => "SharedOnly",
            Variant::RelationTranslationOnly => "RelationTranslationOnly",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("variant", format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Entity embedding size (`d_e`).
    pub entity_dim: usize,
    /// Relation embedding size (`d_r`).
    pub relation_dim: usize,
    /// Row unit of the common layer (`d_h`); the layer has `width * hidden_rows` outputs.
    pub hidden_rows: usize,
    pub width: usize,
    /// Output size of each relation-aware affine map (`d_z`).
    pub relation_out_dim: usize,
    pub depth_common: usize,
    pub depth_relation: usize,
    pub variant: Variant,
    pub input_dropout: f64,
    pub hidden_dropout: f64,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            entity_dim: 256,
            relation_dim: 256,
            hidden_rows: 256,
            width: 2,
            relation_out_dim: 256,
            depth_common: 1,
            depth_relation: 1,
            variant: Variant::ComDensE,
            input_dropout: 0.4,
            hidden_dropout: 0.5,
            activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    /// `d = d_e + d_r`.
    pub fn input_dim(&self) -> usize {
        self.entity_dim + self.relation_dim
    }

    pub fn common_out_dim(&self) -> usize {
        self.width * self.hidden_rows
    }

    pub fn relation_branch_dim(&self) -> usize {
        match self.variant {
            Variant::ComDensE => self.relation_out_dim,
            Variant::SharedOnly => 0,
            Variant::RelationTranslationOnly => self.input_dim(),
        }
    }

    /// Rows of the projection matrix: relation branch output plus common output.
    pub fn projection_rows(&self) -> usize {
        self.relation_branch_dim() + self.common_out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.entity_dim", self.entity_dim),
            ("model.relation_dim", self.relation_dim),
            ("model.hidden_rows", self.hidden_rows),
            ("model.width", self.width),
            ("model.relation_out_dim", self.relation_out_dim),
            ("model.depth_common", self.depth_common),
            ("model.depth_relation", self.depth_relation),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        check_rate("model.input_dropout", self.input_dropout)?;
        check_rate("model.hidden_dropout", self.hidden_dropout)?;
        Ok(())
    }
}

/// Parameter group used for accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embeddings,
    RelationAware,
    Common,
    Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    Embedding,
    Offset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub group: ParamGroup,
    pub kind: TensorKind,
    pub rows: usize,
    pub cols: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tensor inventory for a config and vocabulary size.
///
/// Order: entity embeddings, relation embeddings, common layers (weight, bias),
/// projection, then relation-aware tensors grouped by relation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    config: ModelConfig,
    num_entities: usize,
    num_relations: usize,
    specs: Vec<TensorSpec>,
}

const ENTITY_EMB: usize = 0;
const RELATION_EMB: usize = 1;

impl ParamLayout {
    /// `num_relations` counts stored relations, inverses included.
    pub fn new(config: &ModelConfig, num_entities: usize, num_relations: usize) -> Result<Self> {
        config.validate()?;
        if num_entities == 0 || num_relations == 0 {
            return Err(Error::Empty("vocabulary sizes"));
        }
        let d = config.input_dim();
        let mut specs = Vec::new();
        let mut push = |name: String, group, kind, rows, cols| {
            specs.push(TensorSpec {
                name,
                group,
                kind,
                rows,
                cols,
            })
        };
        push(
            "entity_emb".into(),
            ParamGroup::Embeddings,
            TensorKind::Embedding,
            num_entities,
            config.entity_dim,
        );
        push(
            "relation_emb".into(),
            ParamGroup::Embeddings,
            TensorKind::Embedding,
            num_relations,
            config.relation_dim,
        );
        let wide = config.common_out_dim();
        for k in 0..config.depth_common {
            let cols = if k == 0 { d } else { wide };
            push(
                format!("common.{k}.weight"),
                ParamGroup::Common,
                TensorKind::Weight,
                wide,
                cols,
            );
            push(
                format!("common.{k}.bias"),
                ParamGroup::Common,
                TensorKind::Bias,
                1,
                wide,
            );
        }
        push(
            "projection".into(),
            ParamGroup::Projection,
            TensorKind::Weight,
            config.projection_rows(),
            config.entity_dim,
        );
        for r in 0..num_relations {
            for k in 0..config.depth_relation {
                match config.variant {
                    Variant::ComDensE => {
                        let dz = config.relation_out_dim;
                        let cols = if k == 0 { d } else { dz };
                        push(
                            format!("relation.{r}.{k}.weight"),
                            ParamGroup::RelationAware,
                            TensorKind::Weight,
                            dz,
                            cols,
                        );
                        push(
                            format!("relation.{r}.{k}.bias"),
                            ParamGroup::RelationAware,
                            TensorKind::Bias,
                            1,
                            dz,
                        );
                    }
                    Variant::RelationTranslationOnly => push(
                        format!("relation.{r}.{k}.offset"),
                        ParamGroup::RelationAware,
                        TensorKind::Offset,
                        1,
                        d,
                    ),
                    Variant::SharedOnly => {}
                }
            }
        }
        Ok(ParamLayout {
            config: config.clone(),
            num_entities,
            num_relations,
            specs,
        })
    }

    pub fn for_vocab(config: &ModelConfig, vocab: &Vocabulary) -> Result<Self> {
        ParamLayout::new(config, vocab.num_entities(), vocab.num_relations())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn entity_emb(&self) -> usize {
        ENTITY_EMB
    }

    pub fn relation_emb(&self) -> usize {
        RELATION_EMB
    }

    pub fn common_weight(&self, layer: usize) -> usize {
        2 + 2 * layer
    }

    pub fn common_bias(&self, layer: usize) -> usize {
        3 + 2 * layer
    }

    pub fn projection(&self) -> usize {
        2 + 2 * self.config.depth_common
    }

    fn relation_tensors_per_layer(&self) -> usize {
        match self.config.variant {
            Variant::ComDensE => 2,
            Variant::RelationTranslationOnly => 1,
            Variant::SharedOnly => 0,
        }
    }

    fn relation_slot(&self, relation: usize, layer: usize) -> usize {
        let per_layer = self.relation_tensors_per_layer();
        self.projection() + 1 + (relation * self.config.depth_relation + layer) * per_layer
    }

    /// Affine weight of relation `relation`, layer `layer` (ComDensE only).
    pub fn relation_weight(&self, relation: usize, layer: usize) -> usize {
        debug_assert_eq!(self.config.variant, Variant::ComDensE);
        self.relation_slot(relation, layer)
    }

    pub fn relation_bias(&self, relation: usize, layer: usize) -> usize {
        debug_assert_eq!(self.config.variant, Variant::ComDensE);
        self.relation_slot(relation, layer) + 1
    }

    /// Translation offset `v_r` (translation variant only).
    pub fn relation_offset(&self, relation: usize, layer: usize) -> usize {
        debug_assert_eq!(self.config.variant, Variant::RelationTranslationOnly);
        self.relation_slot(relation, layer)
    }

    /// Tensor indices owned by one relation.
    pub fn relation_tensors(&self, relation: usize) -> std::ops::Range<usize> {
        let per = self.relation_tensors_per_layer() * self.config.depth_relation;
        let start = self.projection() + 1 + relation * per;
        start..start + per
    }

    pub fn param_count(&self) -> ParamCount {
        let mut count = ParamCount::default();
        for s in &self.specs {
            let n = s.len() as u64;
            match s.group {
                ParamGroup::Embeddings => count.embeddings += n,
                ParamGroup::RelationAware => count.relation_aware += n,
                ParamGroup::Common => count.common += n,
                ParamGroup::Projection => count.projection += n,
            }
        }
        count
    }
}

/// Element counts per parameter group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub embeddings: u64,
    pub relation_aware: u64,
    pub common: u64,
    pub projection: u64,
}

impl ParamCount {
    pub fn total(&self) -> u64 {
        self.embeddings + self.relation_aware + self.common + self.projection
    }
}

/// Total learnable scalars for `config` over `num_entities` entities and
/// `num_relations` stored relations (inverses included).
pub fn param_count(
    config: &ModelConfig,
    num_entities: usize,
    num_relations: usize,
) -> Result<ParamCount> {
    Ok(ParamLayout::new(config, num_entities, num_relations)?.param_count())
}

/// All learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    layout: ParamLayout,
    tensors: Vec<Matrix>,
}

impl Parameters {
    pub fn zeros(layout: ParamLayout) -> Self {
        let tensors = layout
            .specs
            .iter()
            .map(|s| Matrix::zeros(s.rows, s.cols))
            .collect();
        Parameters { layout, tensors }
    }

    /// Glorot-uniform weights and embeddings, `a = sqrt(6 / (rows + cols))`;
    /// biases and translation offsets start at zero.
    pub fn init<R: Rng + ?Sized>(layout: ParamLayout, rng: &mut R) -> Self {
        let mut params = Parameters::zeros(layout);
        for (spec, t) in params.layout.specs.iter().zip(params.tensors.iter_mut()) {
            if matches!(spec.kind, TensorKind::Bias | TensorKind::Offset) {
                continue;
            }
            let a = (6.0 / (spec.rows + spec.cols) as f64).sqrt();
            for v in t.data_mut() {
                *v = rng.random_range(-a..a);
            }
        }
        params
    }

    pub fn from_tensors(layout: ParamLayout, tensors: Vec<Matrix>) -> Result<Self> {
        if tensors.len() != layout.len() {
            return Err(Error::shape(
                "Parameters::from_tensors",
                layout.len(),
                tensors.len(),
            ));
        }
        for (spec, t) in layout.specs.iter().zip(&tensors) {
            if t.shape() != (spec.rows, spec.cols) {
                return Err(Error::shape(
                    "Parameters::from_tensors",
                    format!("{} {}x{}", spec.name, spec.rows, spec.cols),
                    format!("{}x{}", t.rows(), t.cols()),
                ));
            }
        }
        Ok(Parameters { layout, tensors })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensor(&self, idx: usize) -> &Matrix {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Matrix {
        &mut self.tensors[idx]
    }

    pub fn entity_emb(&self) -> &Matrix {
        &self.tensors[ENTITY_EMB]
    }

    pub fn relation_emb(&self) -> &Matrix {
        &self.tensors[RELATION_EMB]
    }

    pub fn num_entities(&self) -> usize {
        self.layout.num_entities
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    fn check_query(&self, subject: u32, relation: u32) -> Result<()> {
        if subject as usize >= self.layout.num_entities {
            return Err(Error::OutOfRange {
                what: "entity",
                index: subject as usize,
                bound: self.layout.num_entities,
            });
        }
        if relation as usize >= self.layout.num_relations {
            return Err(Error::OutOfRange {
                what: "relation",
                index: relation as usize,
                bound: self.layout.num_relations,
            });
        }
        Ok(())
    }
}

/// Gradients aligned with a [`ParamLayout`]. Tensors never touched stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn empty(layout: &ParamLayout) -> Self {
        Gradients {
            tensors: vec![None; layout.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, idx: usize) -> Option<&Matrix> {
        self.tensors[idx].as_ref()
    }

    pub fn tensors(&self) -> &[Option<Matrix>] {
        &self.tensors
    }

    pub fn slot(&mut self, layout: &ParamLayout, idx: usize) -> &mut Matrix {
        let spec = &layout.specs[idx];
        self.tensors[idx].get_or_insert_with(|| Matrix::zeros(spec.rows, spec.cols))
    }

    /// Two distinct slots at once; `first < second`.
    fn pair(
        &mut self,
        layout: &ParamLayout,
        first: usize,
        second: usize,
    ) -> (&mut Matrix, &mut Matrix) {
        assert!(first < second);
        self.slot(layout, first);
        self.slot(layout, second);
        let (lo, hi) = self.tensors.split_at_mut(second);
        (
            lo[first].as_mut().expect("allocated"),
            hi[0].as_mut().expect("allocated"),
        )
    }

    /// `true` when every stored entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .flatten()
            .all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.tensors.len(), other.tensors.len());
        for (mine, theirs) in self.tensors.iter_mut().zip(&other.tensors) {
            let Some(theirs) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, b) in m.data_mut().iter_mut().zip(theirs.data()) {
                        *a += b;
                    }
                }
                None => *mine = Some(theirs.clone()),
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.iter_mut().flatten() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// Intermediate values kept by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    subject: u32,
    relation: u32,
    input_mask: DropoutMask,
    relation_inputs: Vec<Vec<f64>>,
    relation_pre: Vec<Vec<f64>>,
    common_inputs: Vec<Vec<f64>>,
    common_pre: Vec<Vec<f64>>,
    hidden_mask: DropoutMask,
    latent: Vec<f64>,
    projection_pre: Vec<f64>,
    query: Vec<f64>,
}

impl ForwardCache {
    pub fn subject(&self) -> u32 {
        self.subject
    }

    pub fn relation(&self) -> u32 {
        self.relation
    }

    /// `h_sr`.
    pub fn query(&self) -> &[f64] {
        &self.query
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// One score per entity.
    pub scores: Vec<f64>,
    /// `h_sr`, the encoded query in entity space.
    pub query: Vec<f64>,
    /// Present only for training-mode passes.
    pub cache: Option<ForwardCache>,
}

/// Encode `(subject, relation)` into `h_sr` without scoring.
pub fn encode_query<R: Rng + ?Sized>(
    params: &Parameters,
    subject: u32,
    relation: u32,
    training: bool,
    rng: &mut R,
) -> Result<(Vec<f64>, Option<ForwardCache>)> {
    params.check_query(subject, relation)?;
    let layout = &params.layout;
    let cfg = &layout.config;
    let act = cfg.activation;

    let mut x = Vec::with_capacity(cfg.input_dim());
    x.extend_from_slice(params.entity_emb().row(subject as usize));
    x.extend_from_slice(params.relation_emb().row(relation as usize));
    let (x, input_mask) = dropout(&x, cfg.input_dropout, rng, training)?;

    let r = relation as usize;
    let mut relation_inputs = Vec::with_capacity(cfg.depth_relation);
    let mut relation_pre = Vec::with_capacity(cfg.depth_relation);
    if cfg.variant != Variant::SharedOnly {
        let mut a = x.clone();
        for k in 0..cfg.depth_relation {
            let z = match cfg.variant {
                Variant::ComDensE => affine_forward(
                    params.tensor(layout.relation_weight(r, k)),
                    params.tensor(layout.relation_bias(r, k)).data(),
                    &a,
                )?,
                Variant::RelationTranslationOnly => {
                    let v = params.tensor(layout.relation_offset(r, k)).data();
                    a.iter().zip(v).map(|(ai, vi)| ai + vi).collect()
                }
                Variant::SharedOnly => unreachable!(),
            };
            let next = act.forward(&z);
            relation_inputs.push(std::mem::replace(&mut a, next));
            relation_pre.push(z);
        }
        relation_inputs.push(a);
    }

    let mut common_inputs = Vec::with_capacity(cfg.depth_common + 1);
    let mut common_pre = Vec::with_capacity(cfg.depth_common);
    let mut c = x;
    for k in 0..cfg.depth_common {
        let z = affine_forward(
            params.tensor(layout.common_weight(k)),
            params.tensor(layout.common_bias(k)).data(),
            &c,
        )?;
        let next = act.forward(&z);
        common_inputs.push(std::mem::replace(&mut c, next));
        common_pre.push(z);
    }
    common_inputs.push(c);

    let mut latent = Vec::with_capacity(cfg.projection_rows());
    if let Some(a) = relation_inputs.last() {
        latent.extend_from_slice(a);
    }
    latent.extend_from_slice(common_inputs.last().expect("common output"));
    let (latent, hidden_mask) = dropout(&latent, cfg.hidden_dropout, rng, training)?;

    let projection_pre = project_forward(params.tensor(layout.projection()), &latent)?;
    let query = act.forward(&projection_pre);

    let cache = training.then(|| ForwardCache {
        subject,
        relation,
        input_mask,
        relation_inputs,
        relation_pre,
        common_inputs,
        common_pre,
        hidden_mask,
        latent,
        projection_pre,
        query: query.clone(),
    });
    Ok((query, cache))
}

/// Score every entity as an object of `(subject, relation, ?)`.
pub fn forward<R: Rng + ?Sized>(
    params: &Parameters,
    subject: u32,
    relation: u32,
    training: bool,
    rng: &mut R,
) -> Result<Forward> {
    let (query, cache) = encode_query(params, subject, relation, training, rng)?;
    let scores = params.entity_emb().matvec(&query)?;
    Ok(Forward {
        scores,
        query,
        cache,
    })
}

/// Inference-mode forward; dropout never fires so no RNG is needed.
pub fn scores(params: &Parameters, subject: u32, relation: u32) -> Result<Vec<f64>> {
    let mut rng = NoRng;
    Ok(forward(params, subject, relation, false, &mut rng)?.scores)
}

/// `ψ(s, r, o) = h_srᵀ e_o`, identical to `scores(s, r)[o]`.
pub fn score_triple(params: &Parameters, subject: u32, relation: u32, object: u32) -> Result<f64> {
    if object as usize >= params.num_entities() {
        return Err(Error::OutOfRange {
            what: "entity",
            index: object as usize,
            bound: params.num_entities(),
        });
    }
    let mut rng = NoRng;
    let (query, _) = encode_query(params, subject, relation, false, &mut rng)?;
    Ok(dot(params.entity_emb().row(object as usize), &query))
}

/// Gradients of `scoresᵀ · dscores` with respect to every parameter.
pub fn backward(params: &Parameters, cache: &ForwardCache, dscores: &[f64]) -> Result<Gradients> {
    let mut grads = Gradients::empty(&params.layout);
    backward_into(params, cache, dscores, &mut grads)?;
    Ok(grads)
}

/// Like [`backward`] but accumulates into `grads`.
pub fn backward_into(
    params: &Parameters,
    cache: &ForwardCache,
    dscores: &[f64],
    grads: &mut Gradients,
) -> Result<()> {
    let layout = &params.layout;
    let cfg = &layout.config;
    let act = cfg.activation;
    let e = layout.num_entities;
    if dscores.len() != e {
        return Err(Error::shape("backward dscores", e, dscores.len()));
    }
    if grads.len() != layout.len() {
        return Err(Error::shape(
            "backward gradients",
            layout.len(),
            grads.len(),
        ));
    }

    // scores = E h  =>  dE += dscores ⊗ h, dh = Eᵀ dscores
    let entity_emb = params.entity_emb();
    let de = cfg.entity_dim;
    let mut dquery = vec![0.0; de];
    {
        let dent = grads.slot(layout, ENTITY_EMB).data_mut();
        for (i, &g) in dscores.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut dent[i * de..(i + 1) * de];
            for (d, h) in row.iter_mut().zip(&cache.query) {
                *d += g * h;
            }
            for (dq, w) in dquery.iter_mut().zip(entity_emb.row(i)) {
                *dq += g * w;
            }
        }
    }

    let dproj_pre = act.backward(&cache.projection_pre, &dquery);
    let dlatent = project_backward_accumulate(
        params.tensor(layout.projection()),
        &cache.latent,
        &dproj_pre,
        grads.slot(layout, layout.projection()).data_mut(),
    )?;
    let dlatent = cache.hidden_mask.backward(&dlatent);

    let split = cfg.relation_branch_dim();
    let (drel_out, dcommon_out) = dlatent.split_at(split);

    let mut dx = vec![0.0; cfg.input_dim()];

    let mut dc = dcommon_out.to_vec();
    for k in (0..cfg.depth_common).rev() {
        let dz = act.backward(&cache.common_pre[k], &dc);
        let (w_idx, b_idx) = (layout.common_weight(k), layout.common_bias(k));
        let (dw, db) = grads.pair(layout, w_idx, b_idx);
        dc = affine_backward_accumulate(
            params.tensor(w_idx),
            &cache.common_inputs[k],
            &dz,
            dw.data_mut(),
            db.data_mut(),
        )?;
    }
    for (d, g) in dx.iter_mut().zip(&dc) {
        *d += g;
    }

    if cfg.variant != Variant::SharedOnly {
        let r = cache.relation as usize;
        let mut da = drel_out.to_vec();
        for k in (0..cfg.depth_relation).rev() {
            let dz = act.backward(&cache.relation_pre[k], &da);
            da = match cfg.variant {
                Variant::ComDensE => {
                    let (w_idx, b_idx) = (layout.relation_weight(r, k), layout.relation_bias(r, k));
                    let (dw, db) = grads.pair(layout, w_idx, b_idx);
                    affine_backward_accumulate(
                        params.tensor(w_idx),
                        &cache.relation_inputs[k],
                        &dz,
                        dw.data_mut(),
                        db.data_mut(),
                    )?
                }
                Variant::RelationTranslationOnly => {
                    let dv = grads.slot(layout, layout.relation_offset(r, k)).data_mut();
                    for (d, g) in dv.iter_mut().zip(&dz) {
                        *d += g;
                    }
                    dz
                }
                Variant::SharedOnly => unreachable!(),
            };
        }
        for (d, g) in dx.iter_mut().zip(&da) {
            *d += g;
        }
    }

    let dx = cache.input_mask.backward(&dx);
    let (ds, dr) = dx.split_at(de);
    let s = cache.subject as usize;
    for (d, g) in grads.slot(layout, ENTITY_EMB).row_mut(s).iter_mut().zip(ds) {
        *d += g;
    }
    let r = cache.relation as usize;
    for (d, g) in grads
        .slot(layout, RELATION_EMB)
        .row_mut(r)
        .iter_mut()
        .zip(dr)
    {
        *d += g;
    }
    Ok(())
}

/// RNG stand-in for inference passes, where dropout never samples.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("inference forward must not sample")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("inference forward must not sample")
    }

    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("inference forward must not sample")
    }
}
