//! Recurrent and affine building blocks shared by every model.

use nerxfer_autograd::{Axis, Graph, GroupKind, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `uniform(±√(6 / (fan_in + fan_out)))`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        group: GroupKind,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}.weight"), glorot(rng, input, output), group)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, output]), group)?,
            input,
            output,
        })
    }

    pub fn attach(store: &ParamStore, name: &str) -> Result<Self> {
        let weight = store.id(&format!("{name}.weight"))?;
        let bias = store.id(&format!("{name}.bias"))?;
        let shape = store.value(weight).shape();
        Ok(Self {
            weight,
            bias,
            input: shape[0],
            output: shape[1],
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w)?;
        Ok(g.add(xw, b)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// Single-direction LSTM with gate layout `[input, forget, output, cell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        group: GroupKind,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_ih: store.add(format!("{name}.w_ih"), glorot(rng, input, 4 * hidden), group)?,
            w_hh: store.add(format!("{name}.w_hh"), glorot(rng, hidden, 4 * hidden), group)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, 4 * hidden]), group)?,
            input,
            hidden,
        })
    }

    pub fn attach(store: &ParamStore, name: &str) -> Result<Self> {
        let w_ih = store.id(&format!("{name}.w_ih"))?;
        let w_hh = store.id(&format!("{name}.w_hh"))?;
        let bias = store.id(&format!("{name}.bias"))?;
        let shape = store.value(w_ih).shape();
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            input: shape[0],
            hidden: shape[1] / 4,
        })
    }

    /// Hidden state after every position, returned in input order. When
    /// `reverse` is set the sequence is consumed back to front.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, x: Var, reverse: bool) -> Result<Vec<Var>> {
        let len = g.value(x).rows();
        let h = self.hidden;
        let w_ih = g.param(store, self.w_ih);
        let w_hh = g.param(store, self.w_hh);
        let bias = g.param(store, self.bias);
        let xw = g.matmul(x, w_ih)?;
        let xw = g.add(xw, bias)?;

        let mut states: Vec<Option<Var>> = vec![None; len];
        let mut prev: Option<(Var, Var)> = None;
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        };
        for t in order {
            let mut z = g.slice(xw, Axis::Rows, t, t + 1)?;
            if let Some((h_prev, _)) = prev {
                let hw = g.matmul(h_prev, w_hh)?;
                z = g.add(z, hw)?;
            }
            let sig = g.slice(z, Axis::Cols, 0, 3 * h)?;
            let sig = g.sigmoid(sig)?;
            let input_gate = g.slice(sig, Axis::Cols, 0, h)?;
            let output_gate = g.slice(sig, Axis::Cols, 2 * h, 3 * h)?;
            let cand = g.slice(z, Axis::Cols, 3 * h, 4 * h)?;
            let cand = g.tanh(cand)?;
            let mut c = g.mul(input_gate, cand)?;
            if let Some((_, c_prev)) = prev {
                let forget_gate = g.slice(sig, Axis::Cols, h, 2 * h)?;
                let kept = g.mul(forget_gate, c_prev)?;
                c = g.add(kept, c)?;
            }
            let act = g.tanh(c)?;
            let h_t = g.mul(output_gate, act)?;
            states[t] = Some(h_t);
            prev = Some((h_t, c));
        }
        Ok(states.into_iter().map(|s| s.expect("every position visited")).collect())
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w_ih, self.w_hh, self.bias]
    }
}

/// Bidirectional LSTM of nominal size `hidden`: each direction has
/// `hidden / 2` units and outputs are concatenated `[forward, backward]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        group: GroupKind,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden < 2 || !hidden.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "`{name}`: bidirectional hidden size must be even and ≥ 2, got {hidden}"
            )));
        }
        Ok(Self {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden / 2, group, rng)?,
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden / 2, group, rng)?,
        })
    }

    pub fn attach(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::attach(store, &format!("{name}.fwd"))?,
            bwd: Lstm::attach(store, &format!("{name}.bwd"))?,
        })
    }

    pub fn input(&self) -> usize {
        self.fwd.input
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    /// Per-position `[forward ; backward]` states, `[L, hidden]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let f = self.fwd.run(g, store, x, false)?;
        let b = self.bwd.run(g, store, x, true)?;
        let rows = f
            .into_iter()
            .zip(b)
            .map(|(f, b)| g.concat(&[f, b], Axis::Cols))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(g.concat(&rows, Axis::Rows)?)
    }

    /// Final forward state joined with the final backward state, `[1, hidden]`.
    pub fn final_state(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let f = self.fwd.run(g, store, x, false)?;
        let b = self.bwd.run(g, store, x, true)?;
        let last = *f.last().expect("non-empty sequence");
        Ok(g.concat(&[last, b[0]], Axis::Cols)?)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.fwd.params();
        p.extend(self.bwd.params());
        p
    }
}

/// Forward-pass mode: evaluation, or training with input dropout.
pub enum Mode<'a> {
    Eval,
    Train {
        dropout: f64,
        rng: &'a mut ChaCha8Rng,
    },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    /// Dropout on a recurrent-layer input; identity in evaluation mode.
    pub fn dropout(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train { dropout, rng } => Ok(g.dropout(x, *dropout, &mut **rng)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bilstm_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let bl = BiLstm::new(&mut store, "enc", 3, 6, GroupKind::Base, &mut rng).unwrap();
        let mut g = Graph::new();
        let x = g.constant(glorot(&mut rng, 4, 3)).unwrap();
        let out = bl.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.value(out).shape(), &[4, 6]);
        let fin = bl.final_state(&mut g, &store, x).unwrap();
        assert_eq!(g.value(fin).shape(), &[1, 6]);
        assert!(BiLstm::new(&mut store, "odd", 3, 5, GroupKind::Base, &mut rng).is_err());
    }

    #[test]
    fn mirrored_input_with_tied_directions_mirrors_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let bl = BiLstm::new(&mut store, "enc", 2, 4, GroupKind::Base, &mut rng).unwrap();
        for (f, b) in bl.fwd.params().into_iter().zip(bl.bwd.params()) {
            let v = store.value(f).clone();
            store.set_value(b, v).unwrap();
        }
        let x = glorot(&mut rng, 5, 2);
        let mut rev = Vec::new();
        for t in (0..5).rev() {
            rev.extend_from_slice(x.row_slice(t));
        }
        let x_rev = Tensor::matrix(5, 2, rev).unwrap();
        let mut g = Graph::new();
        let a = g.constant(x).unwrap();
        let b = g.constant(x_rev).unwrap();
        let ya = bl.forward(&mut g, &store, a).unwrap();
        let yb = bl.forward(&mut g, &store, b).unwrap();
        let (ya, yb) = (g.value(ya).clone(), g.value(yb).clone());
        for t in 0..5 {
            let ra = ya.row_slice(t);
            let rb = yb.row_slice(4 - t);
            for k in 0..2 {
                assert!((ra[k] - rb[k + 2]).abs() < 1e-12);
                assert!((ra[k + 2] - rb[k]).abs() < 1e-12);
            }
        }
    }
}
