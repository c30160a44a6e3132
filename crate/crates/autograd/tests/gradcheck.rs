//! Central finite-difference checks for every recorded op.

use cmc_autograd::{conv3d, Conv3dSpec, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Builds `sum(probe * f(inputs))` and compares analytic input gradients with
/// central differences.
fn check(inputs: Vec<Tensor>, seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        random(g.shape(out), &mut rng)
    };
    let objective = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(&[(out, probe.clone())]);

    let h = 1e-6;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient");
        let mut numeric = vec![0.0; inputs[i].numel()];
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= h;
            numeric[j] = (objective(&plus) - objective(&minus)) / (2.0 * h);
        }
        let diff: f64 =
            analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let scale = analytic.norm().max(numeric.iter().map(|v| v * v).sum::<f64>().sqrt()).max(1e-8);
        assert!(diff / scale < 1e-6, "input {i}: relative error {} (|a|={scale})", diff / scale);
    }
}

#[test]
fn pointwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random(&[2, 3, 4], &mut rng), random(&[2, 3, 4], &mut rng));
    check(vec![a.clone(), b], 10, |g, v| {
        let s = g.add(v[0], v[1]);
        let s = g.gelu(s);
        g.scale(s, -1.7)
    });
    // keep values away from the kink
    let c = a.map(|x| if x.abs() < 0.05 { 0.3 } else { x });
    check(vec![c], 11, |g, v| {
        let r = g.relu(v[0]);
        g.reshape(r, &[4, 6])
    });
}

#[test]
fn linear_pool_and_normalize() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 5], &mut rng);
    let w = random(&[4, 5], &mut rng);
    let b = random(&[4], &mut rng);
    check(vec![x, w, b], 12, |g, v| {
        let y = g.linear(v[0], v[1], Some(v[2]));
        g.l2_normalize_rows(y, 1e-12)
    });
    let grid = random(&[2, 3, 2, 3, 2], &mut rng);
    check(vec![grid], 13, |g, v| g.global_avg_pool(v[0]));
}

#[test]
fn channel_norm_on_grids_and_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 4, 2, 2, 3], &mut rng);
    let gamma = random(&[4], &mut rng);
    let beta = random(&[4], &mut rng);
    check(vec![x, gamma.clone(), beta.clone()], 14, |g, v| g.channel_norm(v[0], v[1], v[2], 1e-5));
    let flat = random(&[3, 4], &mut rng);
    check(vec![flat, gamma, beta], 15, |g, v| g.channel_norm(v[0], v[1], v[2], 1e-5));
}

#[test]
fn conv3d_dense_strided_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[2, 2, 4, 5, 6], &mut rng);
    let w = random(&[3, 2, 3, 2, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let spec = Conv3dSpec::default().with_stride([2, 1, 2]).with_padding([1, 0, 1]);
    check(vec![x, w, b], 16, move |g, v| g.conv3d(v[0], v[1], Some(v[2]), spec));
}

#[test]
fn conv3d_pointwise_and_grouped() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 4, 2, 3, 3], &mut rng);
    let w = random(&[6, 4, 1, 1, 1], &mut rng);
    check(vec![x.clone(), w], 17, |g, v| g.conv3d(v[0], v[1], None, Conv3dSpec::default()));
    let wg = random(&[6, 2, 3, 3, 3], &mut rng);
    let spec = Conv3dSpec::same([3, 3, 3]).with_groups(2);
    check(vec![x, wg], 18, move |g, v| g.conv3d(v[0], v[1], None, spec));
}

#[test]
fn conv3d_depthwise_matches_grouped_path_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[2, 3, 3, 4, 5], &mut rng);
    let w = random(&[3, 1, 3, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    let spec = Conv3dSpec::same([3, 3, 3]).with_groups(3);
    check(vec![x.clone(), w.clone(), b.clone()], 19, move |g, v| g.conv3d(v[0], v[1], Some(v[2]), spec));

    // depthwise fast path vs a per-channel dense convolution
    let fast = conv3d(&x, &w, Some(&b), spec);
    for ch in 0..3 {
        let xs = Tensor::new(
            &[2, 1, 3, 4, 5],
            (0..2).flat_map(|bi| x.row(bi)[ch * 60..(ch + 1) * 60].to_vec()).collect(),
        );
        let ws = Tensor::new(&[1, 1, 3, 3, 3], w.row(ch).to_vec());
        let bs = Tensor::new(&[1], vec![b.data()[ch]]);
        let dense = conv3d(&xs, &ws, Some(&bs), Conv3dSpec::same([3, 3, 3]));
        for bi in 0..2 {
            let lhs = &fast.row(bi)[ch * 60..(ch + 1) * 60];
            for (p, q) in lhs.iter().zip(dense.row(bi)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv3d_depthwise_large_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[1, 2, 3, 3, 4], &mut rng);
    let w = random(&[2, 1, 5, 5, 5], &mut rng);
    let spec = Conv3dSpec::same([5, 5, 5]).with_groups(2);
    check(vec![x, w], 20, move |g, v| g.conv3d(v[0], v[1], None, spec));
}

#[test]
fn multi_head_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let qkv = random(&[2, 12, 5], &mut rng);
    check(vec![qkv], 21, |g, v| g.multi_head_attention(v[0], 2));
}

#[test]
fn shared_parameter_accumulates() {
    let w = Tensor::new(&[1, 2], vec![0.5, -1.0]);
    let x = Tensor::new(&[1, 2], vec![2.0, 3.0]);
    let mut g = Graph::new();
    let xv = g.constant(x);
    let w1 = g.param("w", &w);
    let w2 = g.param("w", &w);
    assert_eq!(w1, w2);
    let a = g.linear(xv, w1, None);
    let b = g.linear(xv, w2, None);
    let s = g.add(a, b);
    let grads = g.backward_scalar(s);
    assert_eq!(grads.get(w1).unwrap().data(), &[4.0, 6.0]);
    let named = grads.named(&g);
    assert_eq!(named.len(), 1);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::new(&[2], vec![1.0, 2.0]));
    let r = g.relu(c);
    assert!(!g.requires_grad(r));
    let grads = g.backward(&[(r, Tensor::ones(&[2]))]);
    assert!(grads.get(c).is_none());
}
