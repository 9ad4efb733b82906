//! Linear-chain CRF: path scores, the forward-algorithm partition function
//! and Viterbi decoding.
//!
//! A label path `y` over `L` positions scores
//! `start[y₀] + Σₜ E[t, yₜ] + Σₜ A[yₜ₋₁, yₜ] + stop[y_{L-1}]`.

use nerxfer_autograd::graph::log_sum_exp;
use nerxfer_autograd::{Axis, Graph, GroupKind, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Linear;

/// Plain-value CRF potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfPotentials {
    /// `[Y, Y]`, entry `(i, j)` scores the move `i → j`.
    pub transitions: Tensor,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl CrfPotentials {
    pub fn zeros(num_labels: usize) -> Self {
        Self {
            transitions: Tensor::zeros(&[num_labels, num_labels]),
            start: vec![0.0; num_labels],
            stop: vec![0.0; num_labels],
        }
    }

    pub fn num_labels(&self) -> usize {
        self.start.len()
    }

    fn check(&self, emissions: &Tensor) -> Result<()> {
        let y = self.num_labels();
        if emissions.rank() != 2 || emissions.cols() != y || emissions.rows() == 0 {
            return Err(Error::Dimension(format!(
                "emissions {:?} do not match {y} labels",
                emissions.shape()
            )));
        }
        Ok(())
    }
}

pub fn path_score(emissions: &Tensor, labels: &[usize], pot: &CrfPotentials) -> Result<f64> {
    pot.check(emissions)?;
    if labels.len() != emissions.rows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} positions",
            labels.len(),
            emissions.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= pot.num_labels()) {
        return Err(Error::Dimension(format!(
            "label id {bad} out of range for {} labels",
            pot.num_labels()
        )));
    }
    let mut s = pot.start[labels[0]] + pot.stop[labels[labels.len() - 1]];
    for (t, &y) in labels.iter().enumerate() {
        s += emissions.get(t, y);
        if t > 0 {
            s += pot.transitions.get(labels[t - 1], y);
        }
    }
    Ok(s)
}

/// `log Σ_y exp score(y)` by the forward recursion.
pub fn log_partition(emissions: &Tensor, pot: &CrfPotentials) -> Result<f64> {
    pot.check(emissions)?;
    let ny = pot.num_labels();
    let mut alpha: Vec<f64> = (0..ny).map(|j| pot.start[j] + emissions.get(0, j)).collect();
    for t in 1..emissions.rows() {
        alpha = (0..ny)
            .map(|j| {
                log_sum_exp((0..ny).map(|i| alpha[i] + pot.transitions.get(i, j))) + emissions.get(t, j)
            })
            .collect();
    }
    Ok(log_sum_exp((0..ny).map(|j| alpha[j] + pot.stop[j])))
}

/// Highest-scoring label path. Ties go to the lowest label index, both at
/// every back-pointer and at the final position.
pub fn viterbi_decode(emissions: &Tensor, pot: &CrfPotentials) -> Result<Vec<usize>> {
    pot.check(emissions)?;
    let (len, ny) = (emissions.rows(), pot.num_labels());
    let mut delta: Vec<f64> = (0..ny).map(|j| pot.start[j] + emissions.get(0, j)).collect();
    let mut back = vec![vec![0usize; ny]; len];
    for t in 1..len {
        let mut next = vec![0.0; ny];
        for j in 0..ny {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for (i, d) in delta.iter().enumerate() {
                let s = d + pot.transitions.get(i, j);
                if s > best {
                    best = s;
                    arg = i;
                }
            }
            next[j] = best + emissions.get(t, j);
            back[t][j] = arg;
        }
        delta = next;
    }
    let (mut best, mut last) = (f64::NEG_INFINITY, 0);
    for j in 0..ny {
        let s = delta[j] + pot.stop[j];
        if s > best {
            best = s;
            last = j;
        }
    }
    let mut path = vec![last; len];
    for t in (1..len).rev() {
        path[t - 1] = back[t][path[t]];
    }
    Ok(path)
}

/// Differentiable forward algorithm over graph nodes. `emissions` is `[L, Y]`,
/// `transitions` `[Y, Y]`, `start`/`stop` `[1, Y]`; returns a `[1, 1]` node.
pub fn log_partition_node(g: &mut Graph, emissions: Var, transitions: Var, start: Var, stop: Var) -> Result<Var> {
    let len = g.value(emissions).rows();
    let e0 = g.slice(emissions, Axis::Rows, 0, 1)?;
    let mut alpha = g.add(e0, start)?;
    for t in 1..len {
        let col = g.transpose(alpha)?;
        let scores = g.add(transitions, col)?;
        let reduced = g.log_sum_exp(scores, Axis::Rows)?;
        let et = g.slice(emissions, Axis::Rows, t, t + 1)?;
        alpha = g.add(reduced, et)?;
    }
    let fin = g.add(alpha, stop)?;
    Ok(g.log_sum_exp(fin, Axis::Cols)?)
}

/// Differentiable score of one label path, `[1, 1]`.
pub fn path_score_node(
    g: &mut Graph,
    emissions: Var,
    transitions: Var,
    start: Var,
    stop: Var,
    labels: &[usize],
) -> Result<Var> {
    let (len, ny) = (g.value(emissions).rows(), g.value(emissions).cols());
    if labels.len() != len {
        return Err(Error::Dimension(format!("{} labels for {len} positions", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= ny) {
        return Err(Error::Dimension(format!("label id {bad} out of range for {ny} labels")));
    }
    let mut emit_mask = Tensor::zeros(&[len, ny]);
    let mut trans_counts = Tensor::zeros(&[ny, ny]);
    for (t, &y) in labels.iter().enumerate() {
        emit_mask.set(t, y, 1.0);
        if t > 0 {
            let c = trans_counts.get(labels[t - 1], y);
            trans_counts.set(labels[t - 1], y, c + 1.0);
        }
    }
    let emit_mask = g.constant(emit_mask)?;
    let trans_counts = g.constant(trans_counts)?;
    let e = g.mul(emissions, emit_mask)?;
    let e = g.sum(e)?;
    let a = g.mul(transitions, trans_counts)?;
    let a = g.sum(a)?;
    let s0 = g.pick(start, 0, labels[0])?;
    let s1 = g.pick(stop, 0, labels[len - 1])?;
    let total = g.add(e, a)?;
    let total = g.add(total, s0)?;
    Ok(g.add(total, s1)?)
}

/// The output layer: an affine emission map followed by CRF potentials.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfLayer {
    pub emission: Linear,
    pub transitions: ParamId,
    pub start: ParamId,
    pub stop: ParamId,
}

impl CrfLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        num_labels: usize,
        group: GroupKind,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            emission: Linear::new(store, &format!("{name}.emission"), input, num_labels, group, rng)?,
            transitions: store.add(
                format!("{name}.transitions"),
                Tensor::zeros(&[num_labels, num_labels]),
                group,
            )?,
            start: store.add(format!("{name}.start"), Tensor::zeros(&[1, num_labels]), group)?,
            stop: store.add(format!("{name}.stop"), Tensor::zeros(&[1, num_labels]), group)?,
        })
    }

    pub fn attach(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            emission: Linear::attach(store, &format!("{name}.emission"))?,
            transitions: store.id(&format!("{name}.transitions"))?,
            start: store.id(&format!("{name}.start"))?,
            stop: store.id(&format!("{name}.stop"))?,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.emission.output
    }

    pub fn emissions(&self, g: &mut Graph, store: &ParamStore, hidden: Var) -> Result<Var> {
        self.emission.forward(g, store, hidden)
    }

    pub fn neg_log_likelihood(&self, g: &mut Graph, store: &ParamStore, emissions: Var, gold: &[usize]) -> Result<Var> {
        let a = g.param(store, self.transitions);
        let s = g.param(store, self.start);
        let e = g.param(store, self.stop);
        let log_z = log_partition_node(g, emissions, a, s, e)?;
        let score = path_score_node(g, emissions, a, s, e, gold)?;
        Ok(g.sub(log_z, score)?)
    }

    pub fn potentials(&self, store: &ParamStore) -> CrfPotentials {
        CrfPotentials {
            transitions: store.value(self.transitions).clone(),
            start: store.value(self.start).data().to_vec(),
            stop: store.value(self.stop).data().to_vec(),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.emission.params();
        p.extend([self.transitions, self.start, self.stop]);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emissions(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn single_step_is_log_sum_exp() {
        let (a, b) = (0.3, -1.2);
        let z = log_partition(&emissions(1, 2, vec![a, b]), &CrfPotentials::zeros(2)).unwrap();
        assert!((z - (a.exp() + b.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_potentials_give_l_log_y() {
        let z = log_partition(&Tensor::zeros(&[5, 3]), &CrfPotentials::zeros(3)).unwrap();
        assert!((z - 5.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn viterbi_factorized_and_ties() {
        let e = emissions(3, 3, vec![0., 2., 1., 5., 0., 0., 0., 0., 0.5]);
        assert_eq!(viterbi_decode(&e, &CrfPotentials::zeros(3)).unwrap(), vec![1, 0, 2]);
        assert_eq!(
            viterbi_decode(&Tensor::zeros(&[4, 3]), &CrfPotentials::zeros(3)).unwrap(),
            vec![0; 4]
        );
    }

    #[test]
    fn graph_and_plain_agree() {
        let e = emissions(3, 2, vec![0.1, -0.4, 0.7, 0.2, -0.3, 0.9]);
        let mut pot = CrfPotentials::zeros(2);
        pot.transitions = emissions(2, 2, vec![0.5, -0.5, 0.25, 0.0]);
        pot.start = vec![0.1, 0.2];
        pot.stop = vec![-0.3, 0.4];
        let mut g = Graph::new();
        let ev = g.constant(e.clone()).unwrap();
        let a = g.constant(pot.transitions.clone()).unwrap();
        let s = g.constant(Tensor::row(pot.start.clone())).unwrap();
        let t = g.constant(Tensor::row(pot.stop.clone())).unwrap();
        let z = log_partition_node(&mut g, ev, a, s, t).unwrap();
        let sc = path_score_node(&mut g, ev, a, s, t, &[1, 0, 1]).unwrap();
        assert!((g.value(z).data()[0] - log_partition(&e, &pot).unwrap()).abs() < 1e-12);
        assert!((g.value(sc).data()[0] - path_score(&e, &[1, 0, 1], &pot).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn label_length_mismatch_is_an_error() {
        let e = Tensor::zeros(&[2, 2]);
        assert!(path_score(&e, &[0], &CrfPotentials::zeros(2)).is_err());
        let mut g = Graph::new();
        let ev = g.constant(e).unwrap();
        let a = g.constant(Tensor::zeros(&[2, 2])).unwrap();
        let s = g.constant(Tensor::zeros(&[1, 2])).unwrap();
        assert!(path_score_node(&mut g, ev, a, s, s, &[0]).is_err());
    }
}
