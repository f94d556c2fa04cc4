//! WebAssembly bindings for the static demo page in `www/`.

pub mod session;

use serde::Serialize;
use wasm_bindgen::prelude::*;

pub use session::{param_breakdown, Session};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js_err)
}

/// Toy-graph training session exposed to JavaScript.
#[wasm_bindgen]
pub struct ToyTrainer {
    inner: Session,
}

#[wasm_bindgen]
impl ToyTrainer {
    #[wasm_bindgen(constructor)]
    pub fn new(variant: &str, seed: u32, learning_rate: f64) -> Result<ToyTrainer, JsError> {
        Ok(ToyTrainer {
            inner: Session::new(variant, seed as u64, learning_rate).map_err(js_err)?,
        })
    }

    /// Train more epochs; returns the latest mean loss.
    pub fn train(&mut self, epochs: u32) -> Result<f64, JsError> {
        self.inner.train(epochs as usize).map_err(js_err)
    }

    /// JSON `{epoch, valid, test}` with filtered metrics.
    pub fn evaluate(&mut self) -> Result<String, JsError> {
        let point = self.inner.evaluate().map_err(js_err)?;
        to_json(&point)
    }

    /// JSON `{epoch, losses, evaluations}`.
    pub fn history(&self) -> Result<String, JsError> {
        to_json(&self.inner.history())
    }

    pub fn epoch(&self) -> u32 {
        self.inner.epoch() as u32
    }

    /// JSON array of entity labels.
    pub fn entities(&self) -> Result<String, JsError> {
        to_json(&self.inner.entities())
    }

    /// JSON array of relation labels, inverses included.
    pub fn relations(&self) -> Result<String, JsError> {
        to_json(&self.inner.relations())
    }

    /// JSON array of `{entity, score, probability, split}`, best first.
    pub fn query(&self, subject: &str, relation: &str) -> Result<String, JsError> {
        let c = self.inner.query(subject, relation).map_err(js_err)?;
        to_json(&c)
    }
}

/// JSON parameter breakdown for a (partial) model config.
#[wasm_bindgen(js_name = paramCount)]
pub fn param_count(
    config_json: &str,
    entities: u32,
    base_relations: u32,
) -> Result<String, JsError> {
    let b =
        param_breakdown(config_json, entities as usize, base_relations as usize).map_err(js_err)?;
    to_json(&b)
}
