use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

#[test]
fn every_primitive_passes_grad_check() {
    let results = primitive_checks(10).unwrap();
    assert_eq!(results.len(), 28);
    for r in results {
        assert!(
            r.max_rel_error <= 1e-6,
            "{}: relative error {:e}",
            r.name,
            r.max_rel_error
        );
    }
}

#[test]
fn composite_softmax_matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
    let err = grad_check(&[x, w], 1e-5, |g, v| {
        let y = g.matmul(v[0], v[1])?;
        let s = g.softmax(y, 0.5);
        let l = g.log(s);
        let m = g.mean_rows(l)?;
        Ok(g.sum(m))
    })
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0, 0.0]));
    let y = g.softmax(x, 1.0);
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(Tensor::vector(vec![1.0, 0.0]));
    let y = g.softmax(x, 1.0);
    let e = std::f64::consts::E;
    assert!((g.value(y).data()[0] - e / (e + 1.0)).abs() < 1e-15);
    assert!((g.value(y).data()[0] - 0.7311).abs() < 1e-4);
    assert!((g.value(y).data()[1] - 0.2689).abs() < 1e-4);
}

#[test]
fn layer_norm_fixed_point() {
    let mut g = Graph::new();
    let v = vec![1.0, -1.0, 1.0, -1.0];
    let x = g.constant(Tensor::vector(v.clone()));
    let one = g.constant(Tensor::full(&[4], 1.0));
    let zero = g.constant(Tensor::zeros(&[4]));
    let y = g.layer_norm(x, Some(one), Some(zero), 0.0).unwrap();
    assert_eq!(g.value(y).data(), &v[..]);
}

#[test]
fn scalar_derivatives_and_accumulation() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 6.0);
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 12.0);
    g.zero_grad();
    assert!(g.grad(x).is_none());

    let mut g = Graph::new();
    let a = g.param(Tensor::scalar(2.0));
    let b = g.param(Tensor::scalar(5.0));
    let y = g.mul(a, b).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(a).unwrap().item(), 5.0);
    assert_eq!(g.grad(b).unwrap().item(), 2.0);
}

#[test]
fn detached_and_constant_inputs_get_no_gradient() {
    let mut g = Graph::new();
    let a = g.param(Tensor::vector(vec![1.0, 2.0]));
    let d = g.detach(a);
    let y = g.mul(a, d).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[1.0, 2.0]);
    assert!(g.grad(d).is_none());
}

#[test]
fn errors_name_shapes() {
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(&[2, 3]));
    let b = g.param(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert!(err.to_string().contains("[2, 3]"), "{err}");
    let c = g.constant(Tensor::zeros(&[2]));
    assert!(matches!(g.add(a, c), Err(Error::Shape { .. })));
    assert!(matches!(g.backward(a), Err(Error::Contract(_))));
}

/// Dense attention with an explicit mask, written out from the definition.
fn masked_attention_oracle(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    allowed: impl Fn(usize, usize) -> bool,
    scale: f64,
) -> Vec<f64> {
    let (n, d) = (q.shape()[0], q.shape()[1]);
    let dv = v.shape()[1];
    let mut out = vec![0.0; n * dv];
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| {
                if allowed(i, j) {
                    scale
                        * (0..d)
                            .map(|c| q.data()[i * d + c] * k.data()[j * d + c])
                            .sum::<f64>()
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..n {
            for c in 0..dv {
                out[i * dv + c] += e[j] / z * v.data()[j * dv + c];
            }
        }
    }
    out
}

#[test]
fn windowed_attention_matches_masked_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 9;
    let q = rand_tensor(&mut rng, &[n, 4], -1.0, 1.0);
    let k = rand_tensor(&mut rng, &[n, 4], -1.0, 1.0);
    let v = rand_tensor(&mut rng, &[n, 3], -1.0, 1.0);
    for half in [0usize, 1, 2, 4, 8, 50] {
        let mut g = Graph::new();
        let (a, b, c) = (
            g.constant(q.clone()),
            g.constant(k.clone()),
            g.constant(v.clone()),
        );
        let y = g.windowed_attention(a, b, c, half, 0.5).unwrap();
        let want = masked_attention_oracle(&q, &k, &v, |i, j| i.abs_diff(j) <= half, 0.5);
        let diff = g
            .value(y)
            .data()
            .iter()
            .zip(&want)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "half {half}: {diff}");
    }
    // half = 0 attends only to itself
    let mut g = Graph::new();
    let (a, b, c) = (
        g.constant(q.clone()),
        g.constant(k.clone()),
        g.constant(v.clone()),
    );
    let y = g.windowed_attention(a, b, c, 0, 1.0).unwrap();
    assert_eq!(g.value(y).data(), v.data());
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_tensor(&mut rng, &[5, 6], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[6, 6], -1.0, 1.0);
        let mut g = Graph::new();
        let (xv, wv) = (g.param(x), g.param(w));
        let h = g.matmul(xv, wv).unwrap();
        let h = g.gelu(h);
        let a = g.windowed_attention(h, h, h, 2, 0.3).unwrap();
        let s = g.sum(a);
        g.backward(s).unwrap();
        (g.value(s).item().to_bits(), g.grad(wv).unwrap().clone())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        vals in prop::collection::vec(-50.0f64..50.0, 12),
        t in 0.05f64..5.0,
    ) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3, 4], vals).unwrap());
        let y = g.softmax(x, t);
        for row in g.value(y).data().chunks(4) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
