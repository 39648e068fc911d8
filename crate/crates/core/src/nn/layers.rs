use rand::Rng;

use super::{Graph, Init, NnError, ParamId, ParamStore, Tensor, Var};

/// Lookup table `[vocab x dim]`.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(Self { table: store.add_init(name, &[vocab, dim], Init::EMBEDDING, rng)? })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self, NnError> {
        Ok(Self { table: lookup(store, name)? })
    }

    pub fn dim(&self, store: &ParamStore) -> usize {
        store.value(self.table).cols()
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var, NnError> {
        g.embed(self.table, ids)
    }
}

/// 1-D convolution over time with zero padding, bias, then max over time.
///
/// Filters are stored flattened as `[kernel * d_in x filters]`, tap-major.
#[derive(Clone, Copy, Debug)]
pub struct Conv1dMaxPool {
    pub filters: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv1dMaxPool {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        filters: usize,
        kernel: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(Self {
            filters: store.add_init(&format!("{name}.filters"), &[kernel * d_in, filters], Init::WEIGHTS, rng)?,
            bias: store.add_init(&format!("{name}.bias"), &[1, filters], Init::Zeros, rng)?,
            kernel,
        })
    }

    pub fn from_store(store: &ParamStore, name: &str, kernel: usize) -> Result<Self, NnError> {
        Ok(Self {
            filters: lookup(store, &format!("{name}.filters"))?,
            bias: lookup(store, &format!("{name}.bias"))?,
            kernel,
        })
    }

    /// One `[n x d_in]` sequence to a `[1 x filters]` row.
    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<Var, NnError> {
        let n = g.value(input).rows();
        self.forward_segments(g, input, &[n])
    }

    /// Stacked sequences of lengths `lens` to `[lens.len() x filters]`.
    pub fn forward_segments(&self, g: &mut Graph, input: Var, lens: &[usize]) -> Result<Var, NnError> {
        if lens.contains(&0) {
            return Err(NnError::ShapeMismatch { op: "conv1d", detail: "empty sequence".into() });
        }
        let windows = g.unfold(input, lens, self.kernel)?;
        let w = g.param(self.filters);
        let b = g.param(self.bias);
        let z = g.matmul(windows, w)?;
        let z = g.add_bias(z, b)?;
        g.segment_max(z, lens)
    }
}

/// Unidirectional LSTM with gate blocks ordered input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
}

impl Lstm {
    pub const FORGET_BIAS: f64 = 1.0;

    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let w_x = store.add_init(&format!("{name}.w_x"), &[d_in, 4 * hidden], Init::WEIGHTS, rng)?;
        let w_h = store.add_init(&format!("{name}.w_h"), &[hidden, 4 * hidden], Init::WEIGHTS, rng)?;
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = Self::FORGET_BIAS);
        let bias = store.add(&format!("{name}.bias"), b)?;
        Ok(Self { w_x, w_h, bias })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self, NnError> {
        Ok(Self {
            w_x: lookup(store, &format!("{name}.w_x"))?,
            w_h: lookup(store, &format!("{name}.w_h"))?,
            bias: lookup(store, &format!("{name}.bias"))?,
        })
    }

    pub fn hidden(&self, store: &ParamStore) -> usize {
        store.value(self.w_h).rows()
    }

    /// `[n x d]` to `[n x h]`, reading the sequence front to back.
    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<Var, NnError> {
        let n = g.value(input).rows();
        self.forward_segments(g, input, &[n])
    }

    /// Backward direction: reverse, run, reverse the outputs back.
    pub fn backward_dir(&self, g: &mut Graph, input: Var) -> Result<Var, NnError> {
        let n = g.value(input).rows();
        self.backward_segments(g, input, &[n])
    }

    pub fn forward_segments(&self, g: &mut Graph, input: Var, lens: &[usize]) -> Result<Var, NnError> {
        let w_x = g.param(self.w_x);
        let w_h = g.param(self.w_h);
        let b = g.param(self.bias);
        let xp = g.matmul(input, w_x)?;
        let xp = g.add_bias(xp, b)?;
        g.lstm_recurrence(xp, w_h, lens)
    }

    pub fn backward_segments(&self, g: &mut Graph, input: Var, lens: &[usize]) -> Result<Var, NnError> {
        let rev = g.reverse_segments(input, lens)?;
        let out = self.forward_segments(g, rev, lens)?;
        g.reverse_segments(out, lens)
    }
}

/// Forward and backward LSTMs whose concatenated outputs are averaged over time.
#[derive(Clone, Copy, Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(Self {
            fwd: Lstm::new(store, &format!("{name}.fwd"), d_in, hidden, rng)?,
            bwd: Lstm::new(store, &format!("{name}.bwd"), d_in, hidden, rng)?,
        })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self, NnError> {
        Ok(Self {
            fwd: Lstm::from_store(store, &format!("{name}.fwd"))?,
            bwd: Lstm::from_store(store, &format!("{name}.bwd"))?,
        })
    }

    /// Per-step `[n x 2h]` outputs for stacked sequences.
    pub fn sequence_segments(&self, g: &mut Graph, input: Var, lens: &[usize]) -> Result<Var, NnError> {
        let f = self.fwd.forward_segments(g, input, lens)?;
        let b = self.bwd.backward_segments(g, input, lens)?;
        g.concat_cols(&[f, b])
    }

    /// `[n x d]` to the `[1 x 2h]` time average.
    pub fn forward_avg(&self, g: &mut Graph, input: Var) -> Result<Var, NnError> {
        let n = g.value(input).rows();
        if n == 0 {
            return Err(NnError::ShapeMismatch { op: "bilstm", detail: "empty sequence".into() });
        }
        self.forward_avg_segments(g, input, &[n])
    }

    /// Stacked sequences to `[lens.len() x 2h]`; empty sequences give zero rows.
    pub fn forward_avg_segments(&self, g: &mut Graph, input: Var, lens: &[usize]) -> Result<Var, NnError> {
        let seq = self.sequence_segments(g, input, lens)?;
        g.segment_mean(seq, lens)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Affine map `x W + b` followed by an activation.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weights: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        Ok(Self {
            weights: store.add_init(&format!("{name}.w"), &[d_in, d_out], Init::WEIGHTS, rng)?,
            bias: store.add_init(&format!("{name}.b"), &[1, d_out], Init::Zeros, rng)?,
            activation,
        })
    }

    pub fn from_store(store: &ParamStore, name: &str, activation: Activation) -> Result<Self, NnError> {
        Ok(Self {
            weights: lookup(store, &format!("{name}.w"))?,
            bias: lookup(store, &format!("{name}.b"))?,
            activation,
        })
    }

    pub fn forward(&self, g: &mut Graph, input: Var) -> Result<Var, NnError> {
        let w = g.param(self.weights);
        let b = g.param(self.bias);
        let z = g.matmul(input, w)?;
        let z = g.add_bias(z, b)?;
        match self.activation {
            Activation::Relu => g.relu(z),
            Activation::None => Ok(z),
        }
    }
}

fn lookup(store: &ParamStore, name: &str) -> Result<ParamId, NnError> {
    store.id(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))
}
