//! Attention-pooling encoder that keeps the session embedding in the item
//! embedding space: `s = Σ_l α_l x_l`, `α = softmax(q · tanh(P x_l))`.

use rand::Rng;

use crate::tensor::{axpy, dot, softmax, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct AttnParams {
    pub query: Vec<f64>,
    pub proj: Matrix,
}

#[derive(Debug, Clone)]
pub struct AttnTrace {
    items: Vec<usize>,
    /// `tanh(P x_l)` per position.
    hidden: Vec<Vec<f64>>,
    alpha: Vec<f64>,
}

impl AttnTrace {
    pub fn weights(&self) -> &[f64] {
        &self.alpha
    }
}

impl AttnParams {
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        Self { query: Matrix::xavier(1, d, rng).as_slice().to_vec(), proj: Matrix::xavier(d, d, rng) }
    }

    pub fn zeros(d: usize) -> Self {
        Self { query: vec![0.0; d], proj: Matrix::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.query.len()
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let d = self.dim();
        vec![("attn.query", vec![d], &self.query), ("attn.proj", vec![d, d], self.proj.as_slice())]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.query, self.proj.as_mut_slice()]
    }

    pub fn forward(&self, prefix: &[usize], table: &Matrix) -> (Vec<f64>, AttnTrace) {
        let d = self.dim();
        let hidden: Vec<Vec<f64>> = prefix
            .iter()
            .map(|&i| {
                let mut t = vec![0.0; d];
                self.proj.matvec(table.row(i), &mut t);
                t.iter_mut().for_each(|x| *x = x.tanh());
                t
            })
            .collect();
        let logits: Vec<f64> = hidden.iter().map(|t| dot(&self.query, t)).collect();
        let alpha = softmax(&logits);
        let mut s = vec![0.0; d];
        for (&i, &a) in prefix.iter().zip(&alpha) {
            axpy(a, table.row(i), &mut s);
        }
        (s, AttnTrace { items: prefix.to_vec(), hidden, alpha })
    }

    pub fn backward(
        &self,
        trace: &AttnTrace,
        table: &Matrix,
        d_out: &[f64],
        grads: &mut AttnParams,
        d_table: &mut Matrix,
    ) {
        let d = self.dim();
        let d_alpha: Vec<f64> = trace.items.iter().map(|&i| dot(d_out, table.row(i))).collect();
        let mean: f64 = trace.alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
        let mut da = vec![0.0; d];
        for (pos, &item) in trace.items.iter().enumerate() {
            let a = trace.alpha[pos];
            axpy(a, d_out, d_table.row_mut(item));
            let de = a * (d_alpha[pos] - mean);
            if de == 0.0 {
                continue;
            }
            let t = &trace.hidden[pos];
            axpy(de, t, &mut grads.query);
            for k in 0..d {
                da[k] = de * self.query[k] * (1.0 - t[k] * t[k]);
            }
            grads.proj.add_outer(1.0, &da, table.row(item));
            self.proj.matvec_t_acc(&da, d_table.row_mut(item));
        }
    }
}
