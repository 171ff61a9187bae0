// SPDX-License-Identifier: MIT OR Apache-2.0

use memlab_tensor::Tensor;

/// Internal activations captured during one forward pass over a single
/// sequence of `T` tokens. Every per-layer vector has one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBundle {
    /// Token (plus learned position) embedding entering layer 0, `T x d`.
    pub embed: Tensor,
    /// Residual-stream output of each layer, after any injected noise, `T x d`.
    pub residual: Vec<Tensor>,
    /// Concatenated per-head attention outputs before the output projection,
    /// `T x d` with head `h` in columns `h*dh .. (h+1)*dh`.
    pub attn_heads: Vec<Tensor>,
    /// Attention block output after the output projection, `T x d`.
    pub attn_out: Vec<Tensor>,
    /// MLP block output, `T x d`.
    pub mlp_out: Vec<Tensor>,
    /// Final-normalized hidden state fed to the unembedding, `T x d`.
    pub final_hidden: Tensor,
    /// `T x V`.
    pub logits: Tensor,
    pub n_heads: usize,
}

impl TraceBundle {
    pub fn n_layers(&self) -> usize {
        self.residual.len()
    }

    /// Output of head `head` at `layer`, `T x (d / H)`.
    pub fn head(&self, layer: usize, head: usize) -> Tensor {
        let all = &self.attn_heads[layer];
        let (t, d) = all.dims2().expect("trace tensors are rank 2");
        let dh = d / self.n_heads;
        let mut data = Vec::with_capacity(t * dh);
        for r in 0..t {
            data.extend_from_slice(&all.row(r)[head * dh..(head + 1) * dh]);
        }
        Tensor::new(vec![t, dh], data).expect("slice of a finite tensor")
    }
}
