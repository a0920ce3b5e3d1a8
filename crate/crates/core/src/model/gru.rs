//! Single-layer GRU session encoder.
//!
//! ```text
//! z = σ(W_z x + U_z h + b_z)
//! r = σ(W_r x + U_r h + b_r)
//! n = tanh(W_n x + r ⊙ (U_n h) + b_n)
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```
//!
//! The session embedding is the final hidden state, with `h_0 = 0`.

use rand::Rng;

use crate::tensor::{axpy, sigmoid, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_n: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_n: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_n: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Step {
    item: usize,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    /// `U_n h_prev`
    un_h: Vec<f64>,
    n: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GruTrace {
    steps: Vec<Step>,
}

impl GruParams {
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        let mut m = || Matrix::xavier(d, d, rng);
        Self {
            w_z: m(),
            w_r: m(),
            w_n: m(),
            u_z: m(),
            u_r: m(),
            u_n: m(),
            b_z: vec![0.0; d],
            b_r: vec![0.0; d],
            b_n: vec![0.0; d],
        }
    }

    pub fn zeros(d: usize) -> Self {
        let m = || Matrix::zeros(d, d);
        Self {
            w_z: m(),
            w_r: m(),
            w_n: m(),
            u_z: m(),
            u_r: m(),
            u_n: m(),
            b_z: vec![0.0; d],
            b_r: vec![0.0; d],
            b_n: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.b_z.len()
    }

    pub(crate) fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        let d = self.dim();
        vec![
            ("gru.w_z", vec![d, d], self.w_z.as_slice()),
            ("gru.w_r", vec![d, d], self.w_r.as_slice()),
            ("gru.w_n", vec![d, d], self.w_n.as_slice()),
            ("gru.u_z", vec![d, d], self.u_z.as_slice()),
            ("gru.u_r", vec![d, d], self.u_r.as_slice()),
            ("gru.u_n", vec![d, d], self.u_n.as_slice()),
            ("gru.b_z", vec![d], &self.b_z),
            ("gru.b_r", vec![d], &self.b_r),
            ("gru.b_n", vec![d], &self.b_n),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_z.as_mut_slice(),
            self.w_r.as_mut_slice(),
            self.w_n.as_mut_slice(),
            self.u_z.as_mut_slice(),
            self.u_r.as_mut_slice(),
            self.u_n.as_mut_slice(),
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_n,
        ]
    }

    /// Runs the GRU over the rows of `table` selected by `prefix`.
    pub fn forward(&self, prefix: &[usize], table: &Matrix) -> (Vec<f64>, GruTrace) {
        let d = self.dim();
        let mut h = vec![0.0; d];
        let mut steps = Vec::with_capacity(prefix.len());
        let mut a = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for &item in prefix {
            let x = table.row(item);
            let gate = |w: &Matrix, u: &Matrix, b: &[f64], a: &mut [f64], tmp: &mut [f64]| {
                w.matvec(x, a);
                u.matvec(&h, tmp);
                a.iter().zip(tmp.iter()).zip(b).map(|((ai, ti), bi)| sigmoid(ai + ti + bi)).collect::<Vec<f64>>()
            };
            let z = gate(&self.w_z, &self.u_z, &self.b_z, &mut a, &mut tmp);
            let r = gate(&self.w_r, &self.u_r, &self.b_r, &mut a, &mut tmp);
            let mut un_h = vec![0.0; d];
            self.u_n.matvec(&h, &mut un_h);
            self.w_n.matvec(x, &mut a);
            let n: Vec<f64> = (0..d).map(|i| (a[i] + r[i] * un_h[i] + self.b_n[i]).tanh()).collect();
            let h_next: Vec<f64> = (0..d).map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i]).collect();
            steps.push(Step { item, h_prev: std::mem::replace(&mut h, h_next), z, r, un_h, n });
        }
        (h, GruTrace { steps })
    }

    /// Backprop `∂L/∂h_L` through the recurrence. Parameter gradients go to
    /// `grads`, input gradients to the matching rows of `d_table`.
    pub fn backward(
        &self,
        trace: &GruTrace,
        table: &Matrix,
        d_out: &[f64],
        grads: &mut GruParams,
        d_table: &mut Matrix,
    ) {
        let d = self.dim();
        let mut dh = d_out.to_vec();
        let mut da_n = vec![0.0; d];
        let mut da_r = vec![0.0; d];
        let mut da_z = vec![0.0; d];
        let mut d_un = vec![0.0; d];
        for step in trace.steps.iter().rev() {
            let x = table.row(step.item);
            let mut dh_prev = vec![0.0; d];
            for i in 0..d {
                let (z, r, n, h) = (step.z[i], step.r[i], step.n[i], step.h_prev[i]);
                let dn = dh[i] * (1.0 - z);
                let dz = dh[i] * (h - n);
                dh_prev[i] = dh[i] * z;
                da_n[i] = dn * (1.0 - n * n);
                let dr = da_n[i] * step.un_h[i];
                d_un[i] = da_n[i] * r;
                da_r[i] = dr * r * (1.0 - r);
                da_z[i] = dz * z * (1.0 - z);
            }
            let dx = d_table.row_mut(step.item);
            for (w, gw, gu, gb, da, u) in [
                (&self.w_z, &mut grads.w_z, &mut grads.u_z, &mut grads.b_z, &da_z, &self.u_z),
                (&self.w_r, &mut grads.w_r, &mut grads.u_r, &mut grads.b_r, &da_r, &self.u_r),
            ] {
                gw.add_outer(1.0, da, x);
                gu.add_outer(1.0, da, &step.h_prev);
                axpy(1.0, da, gb);
                w.matvec_t_acc(da, dx);
                u.matvec_t_acc(da, &mut dh_prev);
            }
            grads.w_n.add_outer(1.0, &da_n, x);
            axpy(1.0, &da_n, &mut grads.b_n);
            self.w_n.matvec_t_acc(&da_n, dx);
            grads.u_n.add_outer(1.0, &d_un, &step.h_prev);
            self.u_n.matvec_t_acc(&d_un, &mut dh_prev);
            dh = dh_prev;
        }
    }
}
