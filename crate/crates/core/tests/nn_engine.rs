use sheaf_mapf::nn::{
    read_container, write_container, Adam, AdamConfig, Graph, Layer, NetworkSpec, NnError, ParamSet, SectionGroup,
    Sequential, Tensor, Var,
};
use sheaf_mapf::rng::SeededRng;
use sheaf_mapf::QNetworkF64;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>())
}

#[test]
fn identity_dense_passes_input_through() {
    let mut p = ParamSet::<f64>::new();
    let w = p.add("w", t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
    let b = p.add("b", t(&[3], &[0., 0., 0.]));
    let mut g = Graph::new(&p);
    let x = g.input(t(&[2, 3], &[1., -2., 3., 0.5, 0., 7.]));
    let (wv, bv) = (g.param(w), g.param(b));
    let y = g.matmul(x, wv, false).unwrap();
    let y = g.add_bias(y, bv).unwrap();
    assert_eq!(g.value(y).data(), &[1., -2., 3., 0.5, 0., 7.]);
    // d(sum y)/dx is all ones.
    let grads = g.backward(y, &Tensor::filled(vec![2, 3], 1.0)).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[1.0; 6]);
}

#[test]
fn relu_clamps_negatives() {
    let p = ParamSet::<f64>::new();
    let mut g = Graph::new(&p);
    let x = g.input(t(&[1, 2], &[-1.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 2.0]);
}

#[test]
fn all_ones_convolution_sums_to_nine() {
    let mut p = ParamSet::<f64>::new();
    let k = p.add("k", Tensor::filled(vec![3, 3, 1, 1], 1.0));
    let b = p.add("b", Tensor::zeros(vec![1]));
    let mut g = Graph::new(&p);
    let x = g.input(Tensor::filled(vec![1, 3, 3, 1], 1.0));
    let (kv, bv) = (g.param(k), g.param(b));
    let y = g.conv2d(x, kv, bv, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
    assert_eq!(g.value(y).item(), 9.0);
}

#[test]
fn shape_errors_are_reported() {
    let spec = NetworkSpec {
        input_shape: vec![4],
        layers: vec![Layer::Dense { input: 4, output: 2 }],
    };
    let mut p = ParamSet::<f64>::new();
    let net = Sequential::init(spec, "n", &mut p, &mut SeededRng::new(0)).unwrap();
    let mut g = Graph::new(&p);
    let x = g.input(Tensor::zeros(vec![2, 5]));
    assert!(matches!(net.forward(&mut g, x), Err(NnError::Shape(_))));
    let x = g.input(Tensor::zeros(vec![2, 4]));
    let y = net.forward(&mut g, x).unwrap();
    assert!(g.backward(y, &Tensor::zeros(vec![3, 2])).is_err());
}

/// Builds a scalar loss exercising every op; returns (loss, input var).
fn full_graph<'p>(g: &mut Graph<'p, f64>, p: &'p ParamSet<f64>, x: &Tensor<f64>) -> (Var, Var) {
    let id = |n: &str| p.id(n).unwrap();
    let xv = g.input(x.clone());
    let (k, kb) = (g.param(id("k")), g.param(id("kb")));
    let h = g.conv2d(xv, k, kb, 1, 1).unwrap();
    let h = g.relu(h);
    let (k2, kb2) = (g.param(id("k2")), g.param(id("kb2")));
    let h = g.conv2d(h, k2, kb2, 2, 0).unwrap();
    let h = g.flatten(h).unwrap();
    let (w, b) = (g.param(id("w")), g.param(id("b")));
    let e = g.matmul(h, w, false).unwrap();
    let e = g.add_bias(e, b).unwrap();
    let m = g.param(id("m"));
    let me = g.matmul(e, m, true).unwrap();
    let cat = g.concat_cols(me, e).unwrap();
    let (wa, wv) = (g.param(id("wa")), g.param(id("wv")));
    let a = g.matmul(cat, wa, false).unwrap();
    let v = g.matmul(e, wv, false).unwrap();
    let q = g.dueling(v, a).unwrap();
    let qa = g.gather(q, vec![0, 4, 2, 1]).unwrap();
    let td = g.mse(qa, vec![0.3, -0.2, 1.0, 0.0]).unwrap();
    let sec = g.section_loss(
        me,
        vec![
            SectionGroup { offset: 0, count: 3, edges: vec![(0, 1), (1, 2), (0, 2)] },
            SectionGroup { offset: 3, count: 1, edges: vec![] },
        ],
    )
    .unwrap();
    let sec = g.scale(sec, 0.7);
    (g.add(td, sec).unwrap(), xv)
}

fn full_params(seed: u64) -> ParamSet<f64> {
    let mut rng = SeededRng::new(seed);
    let mut p = ParamSet::new();
    p.add("k", random_tensor(&[3, 3, 2, 3], &mut rng));
    p.add("kb", random_tensor(&[3], &mut rng));
    p.add("k2", random_tensor(&[2, 2, 3, 2], &mut rng));
    p.add("kb2", random_tensor(&[2], &mut rng));
    p.add("w", random_tensor(&[8, 4], &mut rng));
    p.add("b", random_tensor(&[4], &mut rng));
    p.add("m", random_tensor(&[3, 4], &mut rng));
    p.add("wa", random_tensor(&[7, 5], &mut rng));
    p.add("wv", random_tensor(&[4, 1], &mut rng));
    p
}

#[test]
fn every_op_matches_central_differences() {
    for seed in 0..5 {
        let p = full_params(seed);
        let x = random_tensor(&[4, 4, 4, 2], &mut SeededRng::new(100 + seed));
        let mut g = Graph::new(&p);
        let (loss, xv) = full_graph(&mut g, &p, &x);
        let grads = g.backward(loss, &Tensor::scalar(1.0)).unwrap();
        let h = 1e-4;
        let eval = |p: &ParamSet<f64>, x: &Tensor<f64>| {
            let mut g = Graph::new(p);
            let (l, _) = full_graph(&mut g, p, x);
            g.value(l).item()
        };
        let (mut diff, mut scale) = (0.0, 0.0);
        for k in 0..p.len() {
            for e in 0..grads.params()[k].len() {
                let mut q = p.clone();
                q.tensors_mut()[k].data_mut()[e] += h;
                let up = eval(&q, &x);
                q.tensors_mut()[k].data_mut()[e] -= 2.0 * h;
                let down = eval(&q, &x);
                let fd = (up - down) / (2.0 * h);
                let a = grads.params()[k].data()[e];
                diff += (a - fd).powi(2);
                scale += a * a + fd * fd;
            }
        }
        let dx = grads.wrt(xv).unwrap();
        for e in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[e] += h;
            let up = eval(&p, &xp);
            xp.data_mut()[e] -= 2.0 * h;
            let down = eval(&p, &xp);
            let fd = (up - down) / (2.0 * h);
            diff += (dx[e] - fd).powi(2);
            scale += dx[e] * dx[e] + fd * fd;
        }
        let rel = diff.sqrt() / scale.sqrt();
        assert!(rel <= 1e-4, "seed {seed}: relative error {rel:e}");
    }
}

#[test]
fn detach_blocks_gradient() {
    let mut p = ParamSet::<f64>::new();
    let w = p.add("w", t(&[1, 1], &[2.0]));
    let mut g = Graph::new(&p);
    let x = g.input(t(&[1, 1], &[3.0]));
    let wv = g.param(w);
    let y = g.matmul(x, wv, false).unwrap();
    let y = g.detach(y);
    let z = g.scale(y, 5.0);
    let grads = g.backward(z, &t(&[1, 1], &[1.0])).unwrap();
    assert_eq!(grads.params()[0].data(), &[0.0]);
}

#[test]
fn backward_passes_are_additive() {
    let p = full_params(7);
    let xa = random_tensor(&[4, 4, 4, 2], &mut SeededRng::new(1));
    let xb = random_tensor(&[4, 4, 4, 2], &mut SeededRng::new(2));
    let grad_of = |x: &Tensor<f64>| {
        let mut g = Graph::new(&p);
        let (l, _) = full_graph(&mut g, &p, x);
        g.backward(l, &Tensor::scalar(1.0)).unwrap()
    };
    let (ga, gb) = (grad_of(&xa), grad_of(&xb));
    // Sum of the two losses in a single graph.
    let mut g = Graph::new(&p);
    let (la, _) = full_graph(&mut g, &p, &xa);
    let (lb, _) = full_graph(&mut g, &p, &xb);
    let sum = g.add(la, lb).unwrap();
    let gs = g.backward(sum, &Tensor::scalar(1.0)).unwrap();
    let mut acc = ga.clone();
    acc.accumulate(&gb);
    for (x, y) in acc.params().iter().zip(gs.params()) {
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}

#[test]
fn adam_single_step_by_hand() {
    let mut p = ParamSet::<f64>::new();
    let id = p.add("p", Tensor::scalar(0.0));
    let mut g = Graph::new(&p);
    let v = g.param(id);
    let y = g.scale(v, 1.0);
    let grads = g.backward(y, &Tensor::scalar(1.0)).unwrap();
    let mut adam = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &p);
    adam.step(&mut p, &grads);
    // m_hat = 1, v_hat = 1 => step = lr / (1 + eps)
    let expect = -0.1 / (1.0 + 1e-8);
    assert!((p.get(id).item() - expect).abs() < 1e-15);
}

#[test]
fn removing_an_array_names_it() {
    let net = QNetworkF64::new(Default::default(), 0).unwrap();
    let bytes = write_container(&net.metadata(), net.params());
    let mut kept = ParamSet::<f64>::new();
    for (_, name, tensor) in net.params().iter() {
        if name != "value.2.bias" {
            kept.add(name, tensor.clone());
        }
    }
    let tampered = write_container(&net.metadata(), &kept);
    assert!(tampered.len() < bytes.len());
    let file = read_container::<f64>(&tampered).unwrap();
    let err = QNetworkF64::from_params(net.config().clone(), file.params).unwrap_err();
    assert!(err.to_string().contains("value.2.bias"), "{err}");
}

#[test]
fn loading_into_wrong_spec_is_a_shape_error() {
    let net = QNetworkF64::new(Default::default(), 0).unwrap();
    let mut other = net.config().clone();
    other.node_dim = 32;
    let err = QNetworkF64::from_params(other, net.params().clone()).unwrap_err();
    assert!(err.to_string().contains("shape"), "{err}");
}
