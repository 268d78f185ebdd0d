use rand::Rng;

use super::{kaiming_uniform, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// A stack of linear layers, each followed by feature normalization (with
/// learned scale/shift) and ReLU, except the last one when `plain_last`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    /// Input width followed by every layer's output width.
    pub dims: Vec<usize>,
    pub plain_last: bool,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, widths: &[usize], plain_last: bool) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(widths);
        Mlp { prefix: prefix.into(), dims, plain_last }
    }

    pub fn input_width(&self) -> usize {
        self.dims[0]
    }

    pub fn output_width(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn normed(&self, i: usize) -> bool {
        !(self.plain_last && i + 1 == self.layers())
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for i in 0..self.layers() {
            let (fi, fo) = (self.dims[i], self.dims[i + 1]);
            let p = format!("{}.{i}", self.prefix);
            let mut w = kaiming_uniform(fi, fo, rng);
            if !self.normed(i) {
                // Regression/logit outputs start near zero.
                w.scale_in_place(0.1);
            }
            store.insert(format!("{p}.w"), w, true);
            store.insert(format!("{p}.b"), Tensor::zeros(1, fo), true);
            if self.normed(i) {
                store.insert(format!("{p}.g"), Tensor::filled(1, fo, 1.0), true);
                store.insert(format!("{p}.beta"), Tensor::zeros(1, fo), true);
                store.insert(format!("{p}.rm"), Tensor::zeros(1, fo), false);
                store.insert(format!("{p}.rv"), Tensor::filled(1, fo, 1.0), false);
            }
        }
    }

    /// Recovers layer widths from the weights stored under `prefix`.
    pub fn infer(store: &ParamStore, prefix: &str, plain_last: bool) -> Result<Self> {
        let mut dims = Vec::new();
        let mut i = 0;
        while let Some(w) = store.get(&format!("{prefix}.{i}.w")) {
            if dims.is_empty() {
                dims.push(w.rows);
            } else if *dims.last().unwrap() != w.rows {
                return Err(Error::Checkpoint(format!("{prefix}.{i}.w has {} inputs, expected {}", w.rows, dims.last().unwrap())));
            }
            dims.push(w.cols);
            i += 1;
        }
        if dims.is_empty() {
            return Err(Error::Checkpoint(format!("no layers under {prefix}")));
        }
        Ok(Mlp { prefix: prefix.to_string(), dims, plain_last })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, norm: bool) -> Var {
        let mut h = x;
        for i in 0..self.layers() {
            let p = format!("{}.{i}", self.prefix);
            let w = g.param(&format!("{p}.w"));
            let b = g.param(&format!("{p}.b"));
            h = g.matmul(h, w);
            h = g.add_bias(h, b);
            if self.normed(i) {
                if norm {
                    h = g.feature_norm(h, &p);
                    let gamma = g.param(&format!("{p}.g"));
                    let beta = g.param(&format!("{p}.beta"));
                    h = g.mul_row(h, gamma);
                    h = g.add_bias(h, beta);
                }
                h = g.relu(h);
            }
        }
        h
    }
}
