use asac::autodiff::{NodeRef, RealArray, Tape};
use proptest::prelude::*;

const H: f64 = 1e-5;

/// Builds a scalar from the given leaves.
type Graph = dyn Fn(&mut Tape, &[NodeRef]) -> NodeRef;

fn evaluate(inputs: &[RealArray], graph: &Graph) -> f64 {
    let mut t = Tape::new();
    let leaves: Vec<NodeRef> = inputs.iter().map(|x| t.param(x.clone())).collect();
    let out = graph(&mut t, &leaves);
    t.value(out).item()
}

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` over
/// every input coordinate.
fn worst_error(inputs: &[RealArray], graph: &Graph) -> f64 {
    let mut t = Tape::new();
    let leaves: Vec<NodeRef> = inputs.iter().map(|x| t.param(x.clone())).collect();
    let out = graph(&mut t, &leaves);
    let grads = t.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(*leaf)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let mut up = inputs.to_vec();
            up[k].data_mut()[i] += H;
            let mut down = inputs.to_vec();
            down[k].data_mut()[i] -= H;
            let numeric = (evaluate(&up, graph) - evaluate(&down, graph)) / (2.0 * H);
            let a = analytic[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

/// Reduce a vector node to a scalar with fixed weights so every output
/// coordinate carries a distinct adjoint.
fn project(t: &mut Tape, x: NodeRef) -> NodeRef {
    let n = t.value(x).len();
    let w = t.constant(
        RealArray::new(
            t.value(x).shape().to_vec(),
            (0..n).map(|i| 0.3 + 0.7 * (i % 3) as f64).collect(),
        )
        .unwrap(),
    );
    let m = t.mul(x, w).unwrap();
    t.sum(m).unwrap()
}

fn vec_in(range: std::ops::Range<f64>, n: usize) -> impl Strategy<Value = RealArray> {
    prop::collection::vec(range, n).prop_map(RealArray::vector)
}

fn unary(op: fn(&mut Tape, NodeRef) -> NodeRef) -> Box<Graph> {
    Box::new(move |t, l| {
        let y = op(t, l[0]);
        project(t, y)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn elementwise_ops_match_finite_differences(x in vec_in(-2.0..2.0, 4)) {
        let ops: [(&str, fn(&mut Tape, NodeRef) -> NodeRef); 5] = [
            ("sigmoid", |t, a| t.sigmoid(a).unwrap()),
            ("tanh", |t, a| t.tanh(a).unwrap()),
            ("negate", |t, a| t.negate(a).unwrap()),
            ("square", |t, a| t.square(a).unwrap()),
            ("softmax", |t, a| t.softmax(a).unwrap()),
        ];
        for (name, op) in ops {
            let e = worst_error(std::slice::from_ref(&x), &*unary(op));
            prop_assert!(e < 1e-4, "{name}: {e}");
        }
    }

    #[test]
    fn log_matches_finite_differences(x in vec_in(0.05..2.0, 4)) {
        let e = worst_error(&[x], &*unary(|t, a| t.log(a).unwrap()));
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn clamp_matches_finite_differences(x in vec_in(-2.0..2.0, 4)) {
        prop_assume!(x.data().iter().all(|v| (v.abs() - 1.0).abs() > 1e-3));
        let e = worst_error(&[x], &*unary(|t, a| t.clamp(a, -1.0, 1.0).unwrap()));
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn binary_ops_match_finite_differences(a in vec_in(-2.0..2.0, 3), b in vec_in(-2.0..2.0, 3)) {
        let add: Box<Graph> = Box::new(|t, l| { let y = t.add(l[0], l[1]).unwrap(); project(t, y) });
        let mul: Box<Graph> = Box::new(|t, l| { let y = t.mul(l[0], l[1]).unwrap(); project(t, y) });
        prop_assert!(worst_error(&[a.clone(), b.clone()], &*add) < 1e-4);
        prop_assert!(worst_error(&[a, b], &*mul) < 1e-4);
    }

    #[test]
    fn matmul_matches_finite_differences(
        m in prop::collection::vec(-2.0..2.0f64, 6),
        v in vec_in(-2.0..2.0, 3),
    ) {
        let m = RealArray::matrix(2, 3, m).unwrap();
        let g: Box<Graph> = Box::new(|t, l| { let y = t.matmul(l[0], l[1]).unwrap(); project(t, y) });
        prop_assert!(worst_error(&[m, v], &*g) < 1e-4);
    }

    #[test]
    fn structural_ops_match_finite_differences(a in vec_in(-2.0..2.0, 3), b in vec_in(-2.0..2.0, 2)) {
        let concat: Box<Graph> = Box::new(|t, l| { let y = t.concat(&[l[0], l[1]]).unwrap(); project(t, y) });
        let slice: Box<Graph> = Box::new(|t, l| { let y = t.slice(l[0], 1, 2).unwrap(); project(t, y) });
        let sum: Box<Graph> = Box::new(|t, l| { let s = t.square(l[0]).unwrap(); t.sum(s).unwrap() });
        prop_assert!(worst_error(&[a.clone(), b], &*concat) < 1e-4);
        prop_assert!(worst_error(std::slice::from_ref(&a), &*slice) < 1e-4);
        prop_assert!(worst_error(&[a], &*sum) < 1e-4);
    }

    #[test]
    fn two_layer_graph_matches_finite_differences(
        w1 in prop::collection::vec(-2.0..2.0f64, 12),
        w2 in prop::collection::vec(-2.0..2.0f64, 8),
        x in vec_in(-2.0..2.0, 3),
    ) {
        let w1 = RealArray::matrix(4, 3, w1).unwrap();
        let w2 = RealArray::matrix(2, 4, w2).unwrap();
        let g: Box<Graph> = Box::new(|t, l| {
            let h = t.matmul(l[0], l[2]).unwrap();
            let h = t.tanh(h).unwrap();
            let o = t.matmul(l[1], h).unwrap();
            let p = t.softmax(o).unwrap();
            let p0 = t.slice(p, 0, 1).unwrap();
            let lp = t.log(p0).unwrap();
            t.sum(lp).unwrap()
        });
        prop_assert!(worst_error(&[w1, w2, x], &*g) < 1e-4);
    }

    #[test]
    fn lstm_cell_matches_finite_differences(
        wi in prop::collection::vec(-2.0..2.0f64, 24),
        wh in prop::collection::vec(-2.0..2.0f64, 16),
        b in vec_in(-2.0..2.0, 8),
        x in vec_in(-2.0..2.0, 3),
        h in vec_in(-2.0..2.0, 2),
        c in vec_in(-2.0..2.0, 2),
    ) {
        let wi = RealArray::matrix(8, 3, wi).unwrap();
        let wh = RealArray::matrix(8, 2, wh).unwrap();
        let g: Box<Graph> = Box::new(|t, l| {
            let y = t.lstm_cell(l[0], l[1], l[2], l[3], l[4], l[5]).unwrap();
            project(t, y)
        });
        let e = worst_error(&[wi, x, wh, h, b, c], &*g);
        prop_assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn lstm_cell_equals_composed_primitives(
        wi in prop::collection::vec(-2.0..2.0f64, 24),
        wh in prop::collection::vec(-2.0..2.0f64, 16),
        b in vec_in(-2.0..2.0, 8),
        x in vec_in(-2.0..2.0, 3),
        h in vec_in(-2.0..2.0, 2),
        c in vec_in(-2.0..2.0, 2),
    ) {
        let mut t = Tape::new();
        let wi = t.constant(RealArray::matrix(8, 3, wi).unwrap());
        let wh = t.constant(RealArray::matrix(8, 2, wh).unwrap());
        let (b, x, h, c) = (t.constant(b), t.constant(x), t.constant(h), t.constant(c));
        let fused = t.lstm_cell(wi, x, wh, h, b, c).unwrap();
        let zx = t.matmul(wi, x).unwrap();
        let zh = t.matmul(wh, h).unwrap();
        let z = t.add(zx, zh).unwrap();
        let z = t.add(z, b).unwrap();
        let gate = |t: &mut Tape, k: usize| t.slice(z, 2 * k, 2).unwrap();
        let (ip, fp, gp, op) = (gate(&mut t, 0), gate(&mut t, 1), gate(&mut t, 2), gate(&mut t, 3));
        let i = t.sigmoid(ip).unwrap();
        let f = t.sigmoid(fp).unwrap();
        let g = t.tanh(gp).unwrap();
        let o = t.sigmoid(op).unwrap();
        let fc = t.mul(f, c).unwrap();
        let ig = t.mul(i, g).unwrap();
        let c_new = t.add(fc, ig).unwrap();
        let tc = t.tanh(c_new).unwrap();
        let h_new = t.mul(o, tc).unwrap();
        let expect: Vec<f64> = [h_new, c_new, i, f, g, o].iter().flat_map(|n| t.value(*n).data().to_vec()).collect();
        for (a, e) in t.value(fused).data().iter().zip(&expect) {
            prop_assert!((a - e).abs() <= 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn backward_is_pure_and_forward_is_deterministic(x in vec_in(-2.0..2.0, 5)) {
        let build = |t: &mut Tape| {
            let a = t.param(x.clone());
            let s = t.sigmoid(a).unwrap();
            let q = t.square(s).unwrap();
            let out = t.sum(q).unwrap();
            (s, out)
        };
        let mut t1 = Tape::new();
        let (s1, o1) = build(&mut t1);
        let before = t1.value(s1).clone();
        t1.backward(o1).unwrap();
        prop_assert_eq!(t1.value(s1), &before);
        let mut t2 = Tape::new();
        let (_, o2) = build(&mut t2);
        prop_assert_eq!(t1.value(o1).item().to_bits(), t2.value(o2).item().to_bits());
    }
}
