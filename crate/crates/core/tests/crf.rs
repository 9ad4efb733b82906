//! CRF inference checked against exhaustive path enumeration.

use nerxfer::autograd::{Graph, Tensor};
use nerxfer::base_model::crf::{log_partition, log_partition_node, path_score, path_score_node, viterbi_decode, CrfPotentials};
use proptest::prelude::*;

fn all_paths(len: usize, labels: usize) -> Vec<Vec<usize>> {
    let mut paths = vec![Vec::new()];
    for _ in 0..len {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                (0..labels).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    paths
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// The best path under the lowest-index tie-break: among maximal paths, the
/// one that is smallest when compared from the last position backwards.
fn brute_force_best(e: &Tensor, pot: &CrfPotentials) -> Vec<usize> {
    let paths = all_paths(e.rows(), pot.num_labels());
    let scores: Vec<f64> = paths.iter().map(|p| path_score(e, p, pot).unwrap()).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    paths
        .into_iter()
        .zip(scores)
        .filter(|(_, s)| *s == best)
        .map(|(p, _)| p)
        .min_by(|a, b| a.iter().rev().cmp(b.iter().rev()))
        .unwrap()
}

fn instance(integer: bool) -> impl Strategy<Value = (Tensor, CrfPotentials)> {
    (1usize..=5, 1usize..=4).prop_flat_map(move |(len, ny)| {
        let value = if integer { (-2i32..=2).prop_map(f64::from).boxed() } else { (-3.0..3.0f64).boxed() };
        (
            prop::collection::vec(value.clone(), len * ny),
            prop::collection::vec(value.clone(), ny * ny),
            prop::collection::vec(value.clone(), ny),
            prop::collection::vec(value, ny),
        )
            .prop_map(move |(e, t, start, stop)| {
                (
                    Tensor::matrix(len, ny, e).unwrap(),
                    CrfPotentials {
                        transitions: Tensor::matrix(ny, ny, t).unwrap(),
                        start,
                        stop,
                    },
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn partition_matches_enumeration((e, pot) in instance(false)) {
        let scores: Vec<f64> = all_paths(e.rows(), pot.num_labels())
            .iter()
            .map(|p| path_score(&e, p, &pot).unwrap())
            .collect();
        let z = log_partition(&e, &pot).unwrap();
        prop_assert!((z - log_sum_exp(&scores)).abs() < 1e-9);
        for s in scores {
            prop_assert!(z >= s - 1e-12);
        }
    }

    #[test]
    fn viterbi_matches_enumeration_with_ties((e, pot) in instance(true)) {
        prop_assert_eq!(viterbi_decode(&e, &pot).unwrap(), brute_force_best(&e, &pot));
    }

    #[test]
    fn viterbi_matches_enumeration((e, pot) in instance(false)) {
        prop_assert_eq!(viterbi_decode(&e, &pot).unwrap(), brute_force_best(&e, &pot));
    }

    #[test]
    fn emission_shift_moves_scores_uniformly((e, pot) in instance(false), step in 0usize..5, kappa in -5.0..5.0f64) {
        let t = step % e.rows();
        let mut shifted = e.clone();
        for y in 0..e.cols() {
            shifted.set(t, y, e.get(t, y) + kappa);
        }
        let z0 = log_partition(&e, &pot).unwrap();
        let z1 = log_partition(&shifted, &pot).unwrap();
        prop_assert!((z1 - z0 - kappa).abs() < 1e-9);
        for p in all_paths(e.rows(), e.cols()).iter().take(20) {
            let d = path_score(&shifted, p, &pot).unwrap() - path_score(&e, p, &pot).unwrap();
            prop_assert!((d - kappa).abs() < 1e-9);
        }
        prop_assert_eq!(viterbi_decode(&e, &pot).unwrap(), viterbi_decode(&shifted, &pot).unwrap());
    }

    #[test]
    fn graph_forward_matches_plain_values((e, pot) in instance(false)) {
        let ny = pot.num_labels();
        let mut g = Graph::new();
        let ev = g.constant(e.clone()).unwrap();
        let tv = g.constant(pot.transitions.clone()).unwrap();
        let sv = g.constant(Tensor::matrix(1, ny, pot.start.clone()).unwrap()).unwrap();
        let fv = g.constant(Tensor::matrix(1, ny, pot.stop.clone()).unwrap()).unwrap();
        let z = log_partition_node(&mut g, ev, tv, sv, fv).unwrap();
        prop_assert!((g.value(z).get(0, 0) - log_partition(&e, &pot).unwrap()).abs() < 1e-10);
        let path: Vec<usize> = (0..e.rows()).map(|t| (t * 7 + 1) % ny).collect();
        let s = path_score_node(&mut g, ev, tv, sv, fv, &path).unwrap();
        prop_assert!((g.value(s).get(0, 0) - path_score(&e, &path, &pot).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn zero_potentials_give_uniform_distribution() {
    for (len, ny) in [(1, 2), (3, 3), (5, 4)] {
        let e = Tensor::zeros(&[len, ny]);
        let pot = CrfPotentials::zeros(ny);
        let z = log_partition(&e, &pot).unwrap();
        assert!((z - len as f64 * (ny as f64).ln()).abs() < 1e-12);
        assert_eq!(viterbi_decode(&e, &pot).unwrap(), vec![0; len]);
    }
}

#[test]
fn confident_gold_path_has_near_zero_loss() {
    let gold = [2usize, 0, 1, 1];
    let mut e = Tensor::zeros(&[4, 3]);
    for (t, &y) in gold.iter().enumerate() {
        e.set(t, y, 1000.0);
    }
    let pot = CrfPotentials::zeros(3);
    let nll = log_partition(&e, &pot).unwrap() - path_score(&e, &gold, &pot).unwrap();
    assert!((0.0..1e-6).contains(&nll));
}

#[test]
fn single_step_partition_is_log_sum_exp() {
    let e = Tensor::matrix(1, 2, vec![0.3, -1.2]).unwrap();
    let z = log_partition(&e, &CrfPotentials::zeros(2)).unwrap();
    assert!((z - (0.3f64.exp() + (-1.2f64).exp()).ln()).abs() < 1e-12);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let e = Tensor::zeros(&[2, 3]);
    assert!(log_partition(&e, &CrfPotentials::zeros(2)).is_err());
    assert!(path_score(&e, &[0, 5], &CrfPotentials::zeros(3)).is_err());
}
