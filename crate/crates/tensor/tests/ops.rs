use catmouse_tensor::gradcheck::{numeric_gradient, relative_error};
use catmouse_tensor::kernels::{compose3, IDENTITY};
use catmouse_tensor::{Homography, Tape, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Builds `f` on a fresh tape with `x` trainable, returns (value, analytic grad).
fn analytic(x: &Tensor<f64>, f: &dyn Fn(&mut Tape<f64>, Var) -> Var) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let root = f(&mut tape, v);
    tape.backward(root).unwrap();
    (tape.value(root).item(), tape.grad(v).unwrap().data().to_vec())
}

fn eval(x: &[f64], shape: &[usize], f: &dyn Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(shape.to_vec(), x.to_vec()).unwrap());
    let root = f(&mut tape, v);
    tape.value(root).item()
}

fn check(x: &Tensor<f64>, f: &dyn Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let (_, g) = analytic(x, f);
    let num = numeric_gradient(x.data(), 1e-5, |p| eval(p, x.shape(), f));
    relative_error(&g, &num)
}

/// Random projection so vector-valued ops reduce to a generic scalar.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(y));
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum(p)
}

#[test]
fn conv_of_ones_sums_window() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(vec![1, 1, 2, 2]));
    let w = tape.constant(Tensor::ones(vec![1, 1, 2, 2]));
    let y = tape.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
    assert_eq!(tape.value(y).data(), &[4.0]);
}

#[test]
fn conv_identity_kernel_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = random(&mut rng, &[2, 3, 5, 4]);
    let mut kernel = Tensor::<f64>::zeros(vec![3, 3, 1, 1]);
    for c in 0..3 {
        kernel.data_mut()[c * 3 + c] = 1.0;
    }
    let mut tape = Tape::new();
    let x = tape.constant(input.clone());
    let w = tape.constant(kernel);
    let y = tape.conv2d(x, w, 1, 0).unwrap();
    assert_eq!(tape.value(y), &input);
}

#[test]
fn conv_shape_errors_are_descriptive() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(vec![1, 2, 4, 4]));
    let w = tape.constant(Tensor::ones(vec![1, 3, 3, 3]));
    let err = tape.conv2d(x, w, 1, 0).unwrap_err();
    assert!(err.to_string().contains("channels"), "{err}");
    let w = tape.constant(Tensor::ones(vec![1, 2, 7, 7]));
    assert!(matches!(tape.conv2d(x, w, 1, 1), Err(TensorError::Shape { .. })));
    let w = tape.constant(Tensor::ones(vec![1, 2, 3, 3]));
    assert!(tape.conv2d(x, w, 0, 1).is_err());
}

#[test]
fn conv_gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = random(&mut rng, &[1, 2, 5, 5]);
        let kernel = random(&mut rng, &[3, 2, 3, 3]);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
            let k = kernel.clone();
            let f_in = move |t: &mut Tape<f64>, x: Var| {
                let w = t.constant(k.clone());
                let y = t.conv2d(x, w, stride, pad).unwrap();
                project(t, y, 99)
            };
            assert!(check(&input, &f_in) < 1e-4);
            let inp = input.clone();
            let f_k = move |t: &mut Tape<f64>, w: Var| {
                let x = t.constant(inp.clone());
                let y = t.conv2d(x, w, stride, pad).unwrap();
                project(t, y, 99)
            };
            assert!(check(&kernel, &f_k) < 1e-4);
        }
    }
}

#[test]
fn sigmoid_of_zero_is_half() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::scalar(0.0));
    let y = tape.sigmoid(x);
    assert_eq!(tape.value(y).item(), 0.5);
}

#[test]
fn sum_gradient_is_ones() {
    let x = Tensor::<f64>::from_fn(vec![2, 3], |i| i as f64);
    let (_, g) = analytic(&x, &|t, v| t.sum(v));
    assert_eq!(g, vec![1.0; 6]);
}

#[test]
fn sum_of_squares_gradient() {
    let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
    let (v, g) = analytic(&x, &|t, v| {
        let sq = t.mul(v, v).unwrap();
        t.sum(sq)
    });
    assert_eq!(v, 5.0);
    assert_eq!(g, vec![2.0, 4.0]);
}

#[test]
fn leaky_relu_values_and_grads() {
    let x = Tensor::new(vec![2], vec![-2.0, 3.0]).unwrap();
    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let y = tape.leaky_relu(v, 0.1);
    assert_eq!(tape.value(y).data(), &[-0.2, 3.0]);
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    let g: Vec<f64> = tape.grad(v).unwrap().data().to_vec();
    assert!((g[0] - 0.1).abs() < 1e-15 && g[1] == 1.0);
    // finite-difference oracle confirms the hand values
    let num = numeric_gradient(x.data(), 1e-5, |p| eval(p, &[2], &|t, v| {
        let y = t.leaky_relu(v, 0.1);
        t.sum(y)
    }));
    assert!((num[0] - 0.1).abs() < 1e-9 && (num[1] - 1.0).abs() < 1e-9);
}

#[test]
fn elementwise_and_reduction_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        // keep leaky_relu inputs away from the kink
        let x = Tensor::from_fn(vec![3, 4], |_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let other = random(&mut rng, &[3, 4]);
        let f = move |t: &mut Tape<f64>, v: Var| {
            let o = t.constant(other.clone());
            let a = t.leaky_relu(v, 0.1);
            let b = t.sigmoid(v);
            let c = t.mul(a, b).unwrap();
            let d = t.add(c, o).unwrap();
            let e = t.sub(d, v).unwrap();
            let f = t.affine(e, 1.7, -0.3);
            let m = t.mean(f);
            let s = t.sum(c);
            t.add(m, s).unwrap()
        };
        assert!(check(&x, &f) < 1e-4);
    }
}

#[test]
fn linear_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = random(&mut rng, &[2, 4]);
        let w = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[3]);
        let (w2, b2) = (w.clone(), b.clone());
        let fx = move |t: &mut Tape<f64>, v: Var| {
            let (w, b) = (t.constant(w2.clone()), t.constant(b2.clone()));
            let y = t.linear(v, w, b).unwrap();
            project(t, y, 5)
        };
        assert!(check(&x, &fx) < 1e-4);
        let (x2, b3) = (x.clone(), b.clone());
        let fw = move |t: &mut Tape<f64>, v: Var| {
            let (x, b) = (t.constant(x2.clone()), t.constant(b3.clone()));
            let y = t.linear(x, v, b).unwrap();
            project(t, y, 5)
        };
        assert!(check(&w, &fw) < 1e-4);
        let fb = move |t: &mut Tape<f64>, v: Var| {
            let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
            let y = t.linear(x, w, v).unwrap();
            project(t, y, 5)
        };
        assert!(check(&b, &fb) < 1e-4);
    }
}

#[test]
fn binary_shape_mismatch_is_error() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::ones(vec![2]));
    let b = tape.constant(Tensor::ones(vec![3]));
    assert!(tape.add(a, b).is_err());
    assert!(tape.mul(a, b).is_err());
    assert!(tape.sub(a, b).is_err());
}

#[test]
fn identity_warp_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random(&mut rng, &[3, 5, 7]);
    let mut tape = Tape::new();
    let x = tape.constant(img.clone());
    let (y, mask) = tape.bilinear_warp(x, &IDENTITY, 5, 7).unwrap();
    assert_eq!(tape.value(y), &img);
    assert!(mask.data().iter().all(|&m| m == 1.0));
}

#[test]
fn translation_warp_shifts_columns() {
    let img = Tensor::<f64>::from_fn(vec![1, 3, 4], |i| i as f64 + 1.0);
    let shift: Homography = [[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut tape = Tape::new();
    let x = tape.constant(img.clone());
    let (y, mask) = tape.bilinear_warp(x, &shift, 3, 4).unwrap();
    let out = tape.value(y).data();
    for r in 0..3 {
        assert_eq!(mask.data()[r * 4], 0.0);
        assert_eq!(out[r * 4], 0.0);
        for c in 1..4 {
            assert_eq!(out[r * 4 + c], img.data()[r * 4 + c - 1]);
            assert_eq!(mask.data()[r * 4 + c], 1.0);
        }
    }
}

fn rotation_about_center(theta: f64, size: f64) -> Homography {
    let c = (size - 1.0) / 2.0;
    let (s, co) = theta.sin_cos();
    let to = [[1.0, 0.0, -c], [0.0, 1.0, -c], [0.0, 0.0, 1.0]];
    let rot = [[co, -s, 0.0], [s, co, 0.0], [0.0, 0.0, 1.0]];
    let back = [[1.0, 0.0, c], [0.0, 1.0, c], [0.0, 0.0, 1.0]];
    compose3(&back, &compose3(&rot, &to))
}

#[test]
fn warp_gradients_match_finite_differences() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let img = random(&mut rng, &[3, 4, 4]);
        let theta = rng.random_range(-0.3..0.3);
        let h = rotation_about_center(theta, 4.0);
        let f = move |t: &mut Tape<f64>, v: Var| {
            let (y, _) = t.bilinear_warp(v, &h, 4, 4).unwrap();
            project(t, y, 7)
        };
        assert!(check(&img, &f) < 1e-3);
    }
}

#[test]
fn singular_warp_is_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::ones(vec![1, 2, 2]));
    let h = [[0.0; 3]; 3];
    assert!(matches!(
        tape.bilinear_warp(x, &h, 2, 2),
        Err(TensorError::SingularHomography { .. })
    ));
}

#[test]
fn total_variation_values() {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::full(vec![3, 4, 4], 0.3));
    let tv = tape.total_variation(c).unwrap();
    assert_eq!(tape.value(tv).item(), 0.0);
    let two = tape.constant(Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap());
    let tv = tape.total_variation(two).unwrap();
    assert_eq!(tape.value(tv).item(), 1.0);
}

#[test]
fn total_variation_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        // distinct values on a coarse lattice keep every pair away from ties
        let mut vals: Vec<f64> = (0..48).map(|i| i as f64 / 48.0).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        let img = Tensor::new(vec![3, 4, 4], vals).unwrap();
        let f = |t: &mut Tape<f64>, v: Var| t.total_variation(v).unwrap();
        assert!(check(&img, &f) < 1e-4);
    }
}

#[test]
fn paste_gather_stack_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let image = random(&mut rng, &[2, 6, 6]);
        let patch = random(&mut rng, &[2, 3, 3]);
        let mask = Tensor::from_fn(vec![3, 3], |_| rng.random_range(0.0..1.0));
        let (y0, x0) = (rng.random_range(-1i64..5) as isize, rng.random_range(-1i64..5) as isize);
        let (img2, m2) = (image.clone(), mask.clone());
        let fp = move |t: &mut Tape<f64>, p: Var| {
            let i = t.constant(img2.clone());
            let o = t.paste(i, p, &m2, y0, x0).unwrap();
            let s = t.stack(&[o, i]).unwrap();
            let g = t.gather(s, vec![0, 7, 13, 40, 71, 3]).unwrap();
            let a = project(t, s, 11);
            let b = t.sum(g);
            t.add(a, b).unwrap()
        };
        assert!(check(&patch, &fp) < 1e-4);
        let fi = move |t: &mut Tape<f64>, i: Var| {
            let p = t.constant(patch.clone());
            let o = t.paste(i, p, &mask, y0, x0).unwrap();
            project(t, o, 12)
        };
        assert!(check(&image, &fi) < 1e-4);
    }
}

#[test]
fn loss_primitive_gradients() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let x = Tensor::from_fn(vec![10], |_| rng.random_range(-2.0..2.0));
        let target: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let weight: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..2.0)).collect();
        let (t2, w2) = (target.clone(), weight.clone());
        let f = move |t: &mut Tape<f64>, v: Var| {
            let a = t.bce_with_logits(v, t2.clone(), w2.clone()).unwrap();
            let b = t.smooth_l1(v, t2.clone(), w2.clone(), 0.25).unwrap();
            let c = t.range_violation(v, 0.0, 1.0);
            let ab = t.add(a, b).unwrap();
            t.add(ab, c).unwrap()
        };
        assert!(check(&x, &f) < 1e-4);
        let f = |t: &mut Tape<f64>, v: Var| {
            let s = t.slice_channels(v, 1, 2).unwrap();
            project(t, s, 1)
        };
        let y = random(&mut rng, &[2, 4, 3]);
        assert!(check(&y, &f) < 1e-4);
        let y = random(&mut rng, &[2, 3, 2, 2]);
        let b = random(&mut rng, &[3]);
        let f = move |t: &mut Tape<f64>, v: Var| {
            let b = t.constant(b.clone());
            let o = t.channel_bias(v, b).unwrap();
            project(t, o, 2)
        };
        assert!(check(&y, &f) < 1e-4);
    }
}

#[test]
fn backward_needs_scalar_root() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::ones(vec![2]));
    let y = tape.scale(x, 2.0);
    assert!(matches!(tape.backward(y), Err(TensorError::NonScalarRoot { .. })));
}

#[test]
fn repeated_backward_accumulates() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
    tape.zero_grad();
    assert!(tape.grad(x).is_none());
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::<f32>::new();
        let x = tape.param(random(&mut rng, &[2, 3, 8, 8]).cast());
        let w = tape.param(random(&mut rng, &[4, 3, 3, 3]).cast());
        let y = tape.conv2d(x, w, 2, 1).unwrap();
        let y = tape.leaky_relu(y, 0.1);
        let s = tape.mean(y);
        tape.backward(s).unwrap();
        (tape.grad(x).unwrap().clone(), tape.grad(w).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn constants_get_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::ones(vec![2]));
    let p = tape.param(Tensor::ones(vec![2]));
    let y = tape.mul(c, p).unwrap();
    let s = tape.sum(y);
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert!(tape.grad(p).is_some());
}

proptest! {
    #[test]
    fn identity_warp_preserves_any_image(
        c in 1usize..4, h in 1usize..7, w in 1usize..7, seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor::<f32>::from_fn(vec![c, h, w], |_| rng.random_range(0.0..1.0));
        let mut tape = Tape::new();
        let x = tape.constant(img.clone());
        let (y, mask) = tape.bilinear_warp(x, &IDENTITY, h, w).unwrap();
        prop_assert_eq!(tape.value(y), &img);
        prop_assert!(mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn paste_preserves_unit_range(
        seed in any::<u64>(), y0 in -3isize..8, x0 in -3isize..8
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = Tensor::<f64>::from_fn(vec![3, 6, 6], |_| rng.random_range(0.0..=1.0));
        let patch = Tensor::<f64>::from_fn(vec![3, 4, 4], |_| rng.random_range(0.0..=1.0));
        let mask = Tensor::<f64>::from_fn(vec![4, 4], |_| rng.random_range(0.0..=1.0));
        let mut tape = Tape::new();
        let (i, p) = (tape.constant(image), tape.constant(patch));
        let o = tape.paste(i, p, &mask, y0, x0).unwrap();
        prop_assert!(tape.value(o).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
