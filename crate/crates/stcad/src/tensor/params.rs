//! Learnable parameters, the Adam optimizer, and the STCKPT checkpoint
//! format.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::tape::{Tape, TensorId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadFormat(String),
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    /// Registration index in the owning store.
    pub fn index(&self) -> usize {
        self.0
    }
}

/// One learnable weight tensor with its gradient accumulator and Adam
/// moment state.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// All parameters of one model, in registration order. Names are unique.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> ParamId {
        assert_eq!(values.len(), rows * cols, "parameter {name} value length");
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        let n = values.len();
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        self.params.push(Parameter {
            name: name.to_string(),
            rows,
            cols,
            values,
            grad: vec![0.0; n],
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Bind a parameter's current values onto a tape as a leaf.
    pub fn bind(&self, tape: &mut Tape, id: ParamId) -> TensorId {
        let p = &self.params[id.0];
        tape.leaf(p.rows, p.cols, p.values.clone())
    }

    /// Copy tape gradients back into parameter accumulators (additively).
    pub fn accumulate_grads(&mut self, tape: &Tape, bindings: &[(ParamId, TensorId)]) {
        for &(pid, tid) in bindings {
            let g = tape.grad(tid);
            for (acc, &gi) in self.params[pid.0].grad.iter_mut().zip(g) {
                *acc += gi;
            }
        }
    }

    /// Add `scale * grads[i]` into parameter i's accumulator, where `grads`
    /// follows registration order (as produced by iterating bindings).
    pub fn add_scaled_grads(&mut self, grads: &[Vec<f64>], scale: f64) {
        assert_eq!(grads.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(grads) {
            for (a, &gi) in p.grad.iter_mut().zip(g) {
                *a += gi * scale;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Bias-corrected Adam update over all parameters; gradients are zeroed
    /// afterwards.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            for i in 0..p.values.len() {
                let g = p.grad[i];
                p.first_moment[i] = cfg.beta1 * p.first_moment[i] + (1.0 - cfg.beta1) * g;
                p.second_moment[i] = cfg.beta2 * p.second_moment[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = p.first_moment[i] / bc1;
                let v_hat = p.second_moment[i] / bc2;
                p.values[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
            p.grad.fill(0.0);
        }
    }

    // -- STCKPT format ------------------------------------------------------
    //
    // Text, whitespace-tolerant:
    //   STCKPT v1
    //   <name> <ndims> <dim...> <value...>     (one record per parameter)

    pub fn save<W: Write>(&self, w: &mut W) -> Result<(), CheckpointError> {
        writeln!(w, "STCKPT v1")?;
        for p in &self.params {
            write!(w, "{} 2 {} {}", p.name, p.rows, p.cols)?;
            for v in &p.values {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Load values into this store. Every stored record must match an
    /// existing parameter's name and shape; moments and step reset.
    pub fn load<R: BufRead>(&mut self, r: &mut R) -> Result<(), CheckpointError> {
        let mut content = String::new();
        std::io::Read::read_to_string(r, &mut content)?;
        let mut tokens = content.split_whitespace();
        match (tokens.next(), tokens.next()) {
            (Some("STCKPT"), Some("v1")) => {}
            _ => return Err(CheckpointError::BadFormat("missing STCKPT v1 header".into())),
        }
        let mut seen = 0usize;
        while let Some(name) = tokens.next() {
            let ndims: usize = next_num(&mut tokens, "ndims")?;
            if ndims != 2 {
                return Err(CheckpointError::BadFormat(format!(
                    "parameter {name}: expected 2 dims, got {ndims}"
                )));
            }
            let rows: usize = next_num(&mut tokens, "rows")?;
            let cols: usize = next_num(&mut tokens, "cols")?;
            let n = rows * cols;
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(next_num::<f64>(&mut tokens, "value")?);
            }
            let idx = *self.index.get(name).ok_or_else(|| {
                CheckpointError::BadFormat(format!("unknown parameter {name}"))
            })?;
            let p = &mut self.params[idx];
            if (p.rows, p.cols) != (rows, cols) {
                return Err(CheckpointError::BadFormat(format!(
                    "parameter {name}: shape {rows}x{cols} vs expected {}x{}",
                    p.rows, p.cols
                )));
            }
            p.values = values;
            p.grad.fill(0.0);
            p.first_moment.fill(0.0);
            p.second_moment.fill(0.0);
            seen += 1;
        }
        if seen != self.params.len() {
            return Err(CheckpointError::BadFormat(format!(
                "checkpoint holds {seen} parameters, model has {}",
                self.params.len()
            )));
        }
        self.step = 0;
        Ok(())
    }
}

fn next_num<T: std::str::FromStr>(
    tokens: &mut std::str::SplitWhitespace,
    what: &str,
) -> Result<T, CheckpointError> {
    tokens
        .next()
        .ok_or_else(|| CheckpointError::BadFormat(format!("missing {what}")))?
        .parse()
        .map_err(|_| CheckpointError::BadFormat(format!("bad {what}")))
}
