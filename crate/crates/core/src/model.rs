//! Parametric recommendation-model architectures and operator-level work
//! accounting.
//!
//! A model is a dense-feature MLP stack (optional), a set of embedding tables
//! combined by a pooling operator, a feature-interaction step, and one or more
//! predictor MLP stacks. The eight built-in archetypes cover collaborative
//! filtering, wide-and-deep, the DLRM family and the attention-based
//! e-commerce models.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::platform::{cpu_service_time, CpuPlatformSpec};

/// Bytes per tensor element (fp32).
pub const ELEMENT_BYTES: u64 = 4;

/// Names of the built-in archetypes, in zoo order.
pub const ZOO: [&str; 8] = [
    "NCF",
    "WND",
    "MT-WND",
    "DLRM-RMC1",
    "DLRM-RMC2",
    "DLRM-RMC3",
    "DIN",
    "DIEN",
];

/// Ordered FC layer widths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct LayerStack(Vec<usize>);

impl LayerStack {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidModel("layer stack must not be empty".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidModel(format!(
                "layer widths must be >= 1, got {dims:?}"
            )));
        }
        Ok(LayerStack(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn output_width(&self) -> usize {
        *self.0.last().expect("non-empty by construction")
    }

    /// Per-item (flops, bytes) of running the stack on `input` features.
    /// Bytes count activation traffic: each layer reads its input and writes
    /// its output once.
    fn per_item(&self, input: usize) -> (u64, u64) {
        let mut flops = 0u64;
        let mut bytes = 0u64;
        let mut d_in = input as u64;
        for &d_out in &self.0 {
            let d_out = d_out as u64;
            flops += 2 * d_in * d_out;
            bytes += (d_in + d_out) * ELEMENT_BYTES;
            d_in = d_out;
        }
        (flops, bytes)
    }
}

impl TryFrom<Vec<usize>> for LayerStack {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        LayerStack::new(dims)
    }
}

impl From<LayerStack> for Vec<usize> {
    fn from(stack: LayerStack) -> Self {
        stack.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pooling {
    Sum,
    Concat,
    AttentionFc,
    AttentionRnn,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub num_tables: usize,
    pub lookups_per_table: usize,
    pub embedding_dim: usize,
    pub pooling: Pooling,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub dense_fc: Option<LayerStack>,
    pub predict_fc: LayerStack,
    pub num_parallel_predict_stacks: usize,
    pub embeddings: EmbeddingConfig,
    pub dense_input_dim: usize,
    pub recurrent_hidden_dim: Option<usize>,
}

/// Hidden width of the DIEN interest-evolution GRU.
pub const DEFAULT_RECURRENT_HIDDEN: usize = 64;

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let e = &self.embeddings;
        if self.num_parallel_predict_stacks == 0 {
            return Err(Error::InvalidModel(
                "num_parallel_predict_stacks must be >= 1".into(),
            ));
        }
        if e.num_tables > 0 && e.lookups_per_table == 0 {
            return Err(Error::InvalidModel(
                "lookups_per_table must be >= 1 when tables are present".into(),
            ));
        }
        if !(8..=256).contains(&e.embedding_dim) {
            return Err(Error::InvalidModel(format!(
                "embedding_dim {} outside [8, 256]",
                e.embedding_dim
            )));
        }
        match (e.pooling, self.recurrent_hidden_dim) {
            (Pooling::AttentionRnn, None) | (Pooling::AttentionRnn, Some(0)) => {
                return Err(Error::InvalidModel(
                    "AttentionRnn pooling requires recurrent_hidden_dim".into(),
                ))
            }
            (Pooling::AttentionRnn, _) | (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::InvalidModel(
                    "recurrent_hidden_dim is only meaningful with AttentionRnn pooling".into(),
                ))
            }
        }
        if self.dense_fc.is_some() && self.dense_input_dim == 0 {
            return Err(Error::InvalidModel(
                "a dense FC stack needs dense_input_dim >= 1".into(),
            ));
        }
        if self.interaction_width() == 0 {
            return Err(Error::InvalidModel("model has no input features".into()));
        }
        Ok(())
    }

    fn pooled_width(&self) -> usize {
        let e = &self.embeddings;
        match e.pooling {
            Pooling::Sum | Pooling::AttentionFc => e.num_tables * e.embedding_dim,
            Pooling::Concat => e.num_tables * e.lookups_per_table * e.embedding_dim,
            Pooling::AttentionRnn => {
                e.num_tables * self.recurrent_hidden_dim.unwrap_or(DEFAULT_RECURRENT_HIDDEN)
            }
        }
    }

    /// Width of the feature vector entering the predictor stacks.
    pub fn interaction_width(&self) -> usize {
        let dense_out = match &self.dense_fc {
            Some(stack) => stack.output_width(),
            None => self.dense_input_dim,
        };
        dense_out + self.pooled_width()
    }

    /// Bytes shipped to an accelerator per item: dense features plus 8-byte
    /// embedding indices. Tables stay device-resident.
    pub fn input_bytes_per_item(&self) -> u64 {
        let e = &self.embeddings;
        self.dense_input_dim as u64 * ELEMENT_BYTES
            + (e.num_tables * e.lookups_per_table) as u64 * 8
    }

    fn per_item_work(&self) -> WorkBreakdown {
        let mut w = WorkBreakdown::default();
        let e = &self.embeddings;
        let tl = (e.num_tables * e.lookups_per_table) as u64;
        let dim = e.embedding_dim as u64;

        if let Some(stack) = &self.dense_fc {
            let (flops, bytes) = stack.per_item(self.dense_input_dim);
            w.set(OpCategory::DenseFc, flops, bytes);
        }

        w.set(OpCategory::EmbeddingLookup, 0, tl * dim * ELEMENT_BYTES);

        match e.pooling {
            // Sum pooling is fused into the gather; only the adds remain.
            Pooling::Sum => w.set(OpCategory::Pooling, tl * dim, 0),
            Pooling::Concat => {}
            Pooling::AttentionFc | Pooling::AttentionRnn => {
                // Weighted sum re-reads the gathered vectors.
                w.set(OpCategory::Pooling, 2 * tl * dim, tl * dim * ELEMENT_BYTES);
                // One dim x dim FC pass per looked-up vector, which is
                // still cache-resident; only the scores go out.
                w.set(OpCategory::Attention, 2 * tl * dim * dim, tl * ELEMENT_BYTES);
            }
        }

        if e.pooling == Pooling::AttentionRnn {
            let hidden = self.recurrent_hidden_dim.unwrap_or(DEFAULT_RECURRENT_HIDDEN) as u64;
            // Three gate FC passes per timestep, one timestep per lookup of
            // every table's behaviour sequence.
            w.set(
                OpCategory::Recurrent,
                2 * tl * 3 * (dim + hidden) * hidden,
                tl * 3 * (dim + 2 * hidden) * ELEMENT_BYTES,
            );
        }

        let width = self.interaction_width() as u64;
        w.set(OpCategory::Interaction, width, 2 * width * ELEMENT_BYTES);

        let (flops, bytes) = self.predict_fc.per_item(self.interaction_width());
        let stacks = self.num_parallel_predict_stacks as u64;
        w.set(OpCategory::PredictFc, flops * stacks, bytes * stacks);
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpCategory {
    DenseFc,
    PredictFc,
    EmbeddingLookup,
    Pooling,
    Attention,
    Recurrent,
    Interaction,
}

impl OpCategory {
    pub const ALL: [OpCategory; 7] = [
        OpCategory::DenseFc,
        OpCategory::PredictFc,
        OpCategory::EmbeddingLookup,
        OpCategory::Pooling,
        OpCategory::Attention,
        OpCategory::Recurrent,
        OpCategory::Interaction,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_fc(self) -> bool {
        matches!(self, OpCategory::DenseFc | OpCategory::PredictFc)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OpCategory::DenseFc => "DenseFC",
            OpCategory::PredictFc => "PredictFC",
            OpCategory::EmbeddingLookup => "EmbeddingLookup",
            OpCategory::Pooling => "Pooling",
            OpCategory::Attention => "Attention",
            OpCategory::Recurrent => "Recurrent",
            OpCategory::Interaction => "Interaction",
        }
    }
}

impl fmt::Display for OpCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Work {
    pub flops: u64,
    pub bytes: u64,
}

/// Flops and bytes per operator category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WorkBreakdown {
    entries: [Work; 7],
}

impl WorkBreakdown {
    fn set(&mut self, cat: OpCategory, flops: u64, bytes: u64) {
        self.entries[cat.index()] = Work { flops, bytes };
    }

    pub fn get(&self, cat: OpCategory) -> Work {
        self.entries[cat.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (OpCategory, Work)> + '_ {
        OpCategory::ALL.iter().map(move |&c| (c, self.get(c)))
    }

    pub fn total(&self) -> Work {
        self.entries.iter().fold(Work::default(), |acc, w| Work {
            flops: acc.flops + w.flops,
            bytes: acc.bytes + w.bytes,
        })
    }

    fn scaled(mut self, k: u64) -> Self {
        for w in &mut self.entries {
            w.flops *= k;
            w.bytes *= k;
        }
        self
    }
}

fn stack(dims: &[usize]) -> LayerStack {
    LayerStack::new(dims.to_vec()).expect("static zoo dims are valid")
}

/// Looks up one of the eight built-in archetypes by its zoo name.
pub fn builtin_model(name: &str) -> Result<ModelSpec> {
    let emb = |num_tables, lookups_per_table, pooling| EmbeddingConfig {
        num_tables,
        lookups_per_table,
        embedding_dim: 32,
        pooling,
    };
    let spec = |dense_fc: Option<&[usize]>,
                predict: &[usize],
                stacks,
                embeddings,
                dense_input_dim,
                recurrent_hidden_dim| ModelSpec {
        name: name.to_string(),
        dense_fc: dense_fc.map(stack),
        predict_fc: stack(predict),
        num_parallel_predict_stacks: stacks,
        embeddings,
        dense_input_dim,
        recurrent_hidden_dim,
    };
    let model = match name {
        "NCF" => spec(None, &[256, 256, 128], 1, emb(4, 1, Pooling::Concat), 0, None),
        "WND" => spec(None, &[1024, 512, 256], 1, emb(20, 1, Pooling::Concat), 1000, None),
        "MT-WND" => spec(None, &[1024, 512, 256], 4, emb(20, 1, Pooling::Concat), 1000, None),
        "DLRM-RMC1" => spec(
            Some(&[256, 128, 32]),
            &[256, 64, 1],
            1,
            emb(10, 80, Pooling::Sum),
            256,
            None,
        ),
        "DLRM-RMC2" => spec(
            Some(&[256, 128, 32]),
            &[512, 128, 1],
            1,
            emb(40, 80, Pooling::Sum),
            256,
            None,
        ),
        "DLRM-RMC3" => spec(
            Some(&[2560, 512, 32]),
            &[512, 128, 1],
            1,
            emb(10, 20, Pooling::Sum),
            256,
            None,
        ),
        "DIN" => spec(None, &[200, 80, 2], 1, emb(20, 200, Pooling::AttentionFc), 0, None),
        "DIEN" => spec(
            None,
            &[200, 80, 2],
            1,
            emb(20, 20, Pooling::AttentionRnn),
            0,
            Some(DEFAULT_RECURRENT_HIDDEN),
        ),
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Ok(model)
}

/// Operator work for one request of `batch` items. Linear in `batch`.
pub fn work(model: &ModelSpec, batch: usize) -> WorkBreakdown {
    assert!(batch >= 1, "batch must be >= 1");
    model.per_item_work().scaled(batch as u64)
}

/// Category with the largest modeled time on a fully loaded CPU (every core
/// active) at the given batch.
pub fn dominant_category(model: &ModelSpec, cpu: &CpuPlatformSpec, batch: usize) -> OpCategory {
    let t = cpu_service_time(model, batch, cpu.cores, cpu);
    OpCategory::ALL
        .iter()
        .copied()
        .max_by(|a, b| t.category(*a).total_cmp(&t.category(*b)))
        .expect("seven categories")
}

/// Fraction of modeled CPU time per category on a fully loaded server.
pub fn time_shares(model: &ModelSpec, cpu: &CpuPlatformSpec, batch: usize) -> Vec<(OpCategory, f64)> {
    let t = cpu_service_time(model, batch, cpu.cores, cpu);
    OpCategory::ALL
        .iter()
        .map(|&c| (c, t.category(c) / t.total))
        .collect()
}
