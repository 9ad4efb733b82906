use nerxfer_autograd::gradcheck::check_gradients;
use nerxfer_autograd::{Axis, Graph, GroupKind, ParamStore, Result, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_close(store: &mut ParamStore, f: impl FnMut(&mut Graph, &ParamStore) -> Result<Var>) {
    let report = check_gradients(store, 1e-5, f).unwrap();
    for e in report {
        assert!(e.rel_error < 1e-6, "{} [{}]: {} vs {}", e.name, e.index, e.analytic, e.numeric);
    }
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let a = store.add("a", random(&mut rng, 3, 4), GroupKind::Base).unwrap();
    let b = store.add("b", random(&mut rng, 4, 2), GroupKind::Base).unwrap();
    let row = store.add("row", random(&mut rng, 1, 2), GroupKind::Adapt).unwrap();
    let col = store.add("col", random(&mut rng, 3, 1), GroupKind::Adapt).unwrap();
    let s = store.add("s", random(&mut rng, 1, 1), GroupKind::Adapt).unwrap();
    let table = store.add("table", random(&mut rng, 5, 2), GroupKind::Base).unwrap();
    let mask: Vec<f64> = (0..6).map(|i| if i % 3 == 0 { 0.0 } else { 2.0 }).collect();

    assert_close(&mut store, |g, st| {
        let (av, bv) = (g.param(st, a), g.param(st, b));
        let (rv, cv, sv) = (g.param(st, row), g.param(st, col), g.param(st, s));
        let tv = g.param(st, table);
        let ab = g.matmul(av, bv)?; // [3,2]
        let x = g.add(ab, rv)?;
        let x = g.sub(x, cv)?;
        let x = g.add(x, sv)?;
        let t = g.tanh(x)?;
        let sg = g.sigmoid(ab)?;
        let m = g.mul(t, sg)?;
        let m = g.dropout_with_mask(m, mask.clone())?;
        let rows = g.gather_rows(tv, &[4, 0, 4])?; // [3,2]
        let cat = g.concat(&[m, rows], Axis::Cols)?; // [3,4]
        let cat2 = g.concat(&[cat, av], Axis::Rows)?; // [6,4]
        let sl = g.slice(cat2, Axis::Cols, 1, 3)?; // [6,2]
        let sl = g.slice(sl, Axis::Rows, 2, 5)?; // [3,2]
        let tr = g.transpose(sl)?; // [2,3]
        let l0 = g.log_sum_exp(tr, Axis::Rows)?; // [1,3]
        let l1 = g.log_sum_exp(tr, Axis::Cols)?; // [2,1]
        let p = g.pick(tr, 1, 2)?;
        let s0 = g.sum(l0)?;
        let s1 = g.sum(l1)?;
        let s1 = g.scale(s1, -0.5)?;
        let total = g.add(s0, s1)?;
        g.add(total, p)
    });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn matmul_chain_gradients(seed in 0u64..10_000, m in 1usize..4, k in 1usize..4, n in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let a = store.add("a", random(&mut rng, m, k), GroupKind::Base).unwrap();
        let b = store.add("b", random(&mut rng, k, n), GroupKind::Base).unwrap();
        let report = check_gradients(&mut store, 1e-5, |g, st| {
            let (av, bv) = (g.param(st, a), g.param(st, b));
            let p = g.matmul(av, bv)?;
            let t = g.tanh(p)?;
            let l = g.log_sum_exp(t, Axis::Cols)?;
            g.sum(l)
        }).unwrap();
        for e in report {
            prop_assert!(e.rel_error < 1e-6, "{:?}", e);
        }
    }
}
