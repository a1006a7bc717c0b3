//! Per-layer key/value history for autoregressive decoding.

use crate::archspace::ArchConfig;

use super::EngineError;

/// Key/value history for every decoder layer.
///
/// Each layer stores one `kv_heads * head_dim` stripe per committed
/// position, laid out `[position][kv_head][head_dim]`. All layers always
/// hold the same number of positions; a token is appended layer by layer
/// and then committed once.
#[derive(Debug, Clone)]
pub struct KvCache {
    num_layers: usize,
    kv_heads: usize,
    head_dim: usize,
    context_len: usize,
    len: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

impl KvCache {
    pub fn new(config: &ArchConfig) -> Self {
        let stride = config.kv_heads * config.head_dim();
        let alloc = || {
            (0..config.num_layers)
                .map(|_| Vec::with_capacity(config.context_len * stride))
                .collect()
        };
        Self {
            num_layers: config.num_layers,
            kv_heads: config.kv_heads,
            head_dim: config.head_dim(),
            context_len: config.context_len,
            len: 0,
            keys: alloc(),
            values: alloc(),
        }
    }

    /// Committed position count, identical across layers.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    fn stride(&self) -> usize {
        self.kv_heads * self.head_dim
    }

    /// Appends one position's keys and values for `layer`. Every layer must
    /// be appended exactly once before [`commit`](Self::commit).
    pub fn append(&mut self, layer: usize, k: &[f32], v: &[f32]) -> Result<(), EngineError> {
        debug_assert_eq!(k.len(), self.stride());
        debug_assert_eq!(v.len(), self.stride());
        if self.len >= self.context_len {
            return Err(EngineError::ContextOverflow {
                have: self.len,
                capacity: self.context_len,
                requested: 1,
            });
        }
        debug_assert_eq!(
            self.keys[layer].len(),
            self.len * self.stride(),
            "layer {layer} appended twice before commit"
        );
        self.keys[layer].extend_from_slice(k);
        self.values[layer].extend_from_slice(v);
        Ok(())
    }

    /// Marks the appended position as committed on all layers.
    pub fn commit(&mut self) {
        let expect = (self.len + 1) * self.stride();
        for layer in 0..self.num_layers {
            debug_assert_eq!(self.keys[layer].len(), expect);
            debug_assert_eq!(self.values[layer].len(), expect);
        }
        self.len += 1;
    }

    /// Key history of `layer`; position `t`, head `h` lives at
    /// `(t * kv_heads + h) * head_dim`.
    pub fn keys(&self, layer: usize) -> &[f32] {
        &self.keys[layer]
    }

    pub fn values(&self, layer: usize) -> &[f32] {
        &self.values[layer]
    }

    pub fn key_at(&self, layer: usize, position: usize, kv_head: usize) -> &[f32] {
        let start = (position * self.kv_heads + kv_head) * self.head_dim;
        &self.keys[layer][start..][..self.head_dim]
    }

    pub fn value_at(&self, layer: usize, position: usize, kv_head: usize) -> &[f32] {
        let start = (position * self.kv_heads + kv_head) * self.head_dim;
        &self.values[layer][start..][..self.head_dim]
    }
}
