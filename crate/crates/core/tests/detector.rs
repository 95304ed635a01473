use catmouse_core::detector::*;
use catmouse_core::scene::{generate_dataset, BBox, DatasetSpec, Family};
use catmouse_core::training::{train_detector, DetectorTrainConfig};
use catmouse_tensor::gradcheck::{numeric_gradient, relative_error};
use catmouse_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_arch() -> ArchSpec {
    ArchSpec {
        name: "tiny".into(),
        image_size: 32,
        stages: vec![
            Stage { channels: 4, stride: 2 },
            Stage { channels: 4, stride: 2 },
            Stage { channels: 6, stride: 1 },
            Stage { channels: 6, stride: 2 },
        ],
        prior: 12.0,
        leaky_slope: 0.1,
    }
}

fn random_images(b: usize, size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(vec![b, 3, size, size], |_| rng.random::<f32>())
}

#[test]
fn zero_heads_emit_their_bias() {
    let mut model = DetectorModel::init(small_arch(), 1).unwrap();
    let n = 2 * model.arch.stages.len();
    for h in 0..2 {
        model.weights[n + 2 * h] = Tensor::zeros(model.weights[n + 2 * h].shape().to_vec());
    }
    let mut tape = Tape::<f32>::new();
    let w = model.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(vec![1, 3, 32, 32]));
    let raw = model.forward(&mut tape, &w, x).unwrap();
    for head in [Head::OneToOne, Head::OneToMany] {
        let v = raw.head_values(&tape, 0, head);
        assert!(v.logits.iter().all(|&l| l == PRIOR_LOGIT as f64));
        assert!(v.offsets.iter().flatten().all(|&o| o == 0.0));
    }
}

#[test]
fn batch_equals_single_forwards() {
    let model = DetectorModel::init(small_arch(), 2).unwrap();
    let imgs = random_images(3, 32, 5);
    let batched = {
        let mut tape = Tape::<f32>::new();
        let w = model.bind(&mut tape, false);
        let x = tape.constant(imgs.clone());
        let raw = model.forward(&mut tape, &w, x).unwrap();
        (0..3).map(|b| raw.head_values(&tape, b, Head::OneToMany)).collect::<Vec<_>>()
    };
    for (b, expected) in batched.iter().enumerate() {
        let mut tape = Tape::<f32>::new();
        let w = model.bind(&mut tape, false);
        let one = Tensor::new(vec![1, 3, 32, 32], imgs.slice_outer(b).to_vec()).unwrap();
        let x = tape.constant(one);
        let raw = model.forward(&mut tape, &w, x).unwrap();
        let v = raw.head_values(&tape, 0, Head::OneToMany);
        for (a, e) in v.logits.iter().zip(&expected.logits) {
            assert!((a - e).abs() < 1e-5);
        }
    }
}

#[test]
fn wrong_input_size_is_rejected() {
    let model = DetectorModel::init(small_arch(), 2).unwrap();
    let mut tape = Tape::<f32>::new();
    let w = model.bind(&mut tape, false);
    let x = tape.constant(Tensor::zeros(vec![1, 3, 16, 16]));
    assert!(model.forward(&mut tape, &w, x).is_err());
}

#[test]
fn image_gradient_of_logit_sum_matches_finite_differences() {
    let model = DetectorModel::init(small_arch(), 3).unwrap();
    let img = random_images(1, 32, 9).cast::<f64>();
    let f = |x: &[f64]| {
        let mut tape = Tape::<f64>::new();
        let w = model.bind(&mut tape, false);
        let xv = tape.constant(Tensor::new(vec![1, 3, 32, 32], x.to_vec()).unwrap());
        let raw = model.forward(&mut tape, &w, xv).unwrap();
        let s = tape.sum(raw.one_to_one.logits);
        tape.value(s).item()
    };
    let mut tape = Tape::<f64>::new();
    let w = model.bind(&mut tape, false);
    let xv = tape.param(img.clone());
    let raw = model.forward(&mut tape, &w, xv).unwrap();
    let s = tape.sum(raw.one_to_one.logits);
    tape.backward(s).unwrap();
    let analytic = tape.grad(xv).unwrap().clone();
    // probe a fixed random subset of pixels; the full image is 3072 inputs
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let picks: Vec<usize> = (0..48).map(|_| rng.random_range(0..img.len())).collect();
    let base = img.data().to_vec();
    let mut numeric = Vec::new();
    let mut expected = Vec::new();
    for &i in &picks {
        let g = numeric_gradient(&[base[i]], 1e-6, |v| {
            let mut x = base.clone();
            x[i] = v[0];
            f(&x)
        });
        numeric.push(g[0]);
        expected.push(analytic.data()[i]);
    }
    assert!(relative_error(&expected, &numeric) < 1e-3);
}

fn geometry() -> GridGeometry {
    GridGeometry::of(&ArchSpec::base(64))
}

fn values_with(logits: Vec<f64>) -> HeadValues {
    let n = logits.len();
    HeadValues {
        logits,
        offsets: vec![[0.0; 4]; n],
        geometry: geometry(),
    }
}

#[test]
fn decode_examples() {
    assert!(decode(&values_with(vec![-50.0; 64]), 0.25, 30).is_empty());

    let mut l = vec![-50.0; 64];
    l[9] = 0.0;
    let d = decode(&values_with(l), 0.25, 30);
    assert_eq!(d.len(), 1);
    assert_eq!(d[0].score, 0.5);
    // cell 9 = row 1, col 1, centre (12, 12); prior 24
    assert_eq!(d[0].bbox, BBox::new(0.0, 0.0, 24.0, 24.0));

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let l: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
    let d = decode(&values_with(l), 0.0, 30);
    assert_eq!(d.len(), 30);
    assert!(d.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(d.iter().all(|x| x.bbox.x_min >= 0.0 && x.bbox.x_max <= 64.0));
}

#[test]
fn encode_decode_roundtrip() {
    let g = geometry();
    let b = BBox::new(10.0, 12.0, 30.0, 50.0);
    let c = g.nearest_cell(b.center().0, b.center().1);
    let back = g.decode_box(c, g.encode(c, &b));
    assert!((back.x_min - b.x_min).abs() < 1e-9 && (back.y_max - b.y_max).abs() < 1e-9);
}

#[test]
fn tiny_box_falls_back_to_nearest_cell() {
    let g = geometry();
    let b = BBox::new(1.0, 1.0, 2.0, 2.0);
    assert_eq!(g.covered_cells(&b), vec![0]);
}

/// Builds raw predictions from explicit logits and offsets on a tape.
fn raw_from(tape: &mut Tape<f64>, logits: Vec<f64>, offsets: Vec<f64>) -> RawPrediction {
    let g = geometry();
    let b = logits.len() / 64;
    let make = |tape: &mut Tape<f64>| HeadOutput {
        logits: tape.param(Tensor::new(vec![b, 8, 8], logits.clone()).unwrap()),
        offsets: tape.param(Tensor::new(vec![b, 4, 8, 8], offsets.clone()).unwrap()),
    };
    let one_to_one = make(tape);
    let one_to_many = make(tape);
    RawPrediction {
        one_to_one,
        one_to_many,
        geometry: g,
        batch: b,
    }
}

#[test]
fn loss_without_targets_and_saturated_negatives_is_tiny() {
    let mut tape = Tape::new();
    let raw = raw_from(&mut tape, vec![-30.0; 64], vec![0.0; 256]);
    let loss = detector_loss(&mut tape, &raw, &[vec![]]).unwrap();
    assert!(tape.value(loss).item() < 1e-9);
}

#[test]
fn loss_at_constructed_optimum_is_small() {
    let g = geometry();
    let gts = vec![BBox::new(8.0, 8.0, 32.0, 40.0)];
    let a = assign(&g, &gts);
    // both heads need the union of positives; build per head separately
    let mut tape = Tape::new();
    let build = |pos: &[(usize, usize)], tape: &mut Tape<f64>| {
        let mut logits = vec![-30.0; 64];
        let mut off = vec![0.0; 256];
        for &(c, gi) in pos {
            logits[c] = 30.0;
            for (k, e) in g.encode(c, &gts[gi]).iter().enumerate() {
                off[k * 64 + c] = *e;
            }
        }
        HeadOutput {
            logits: tape.param(Tensor::new(vec![1, 8, 8], logits).unwrap()),
            offsets: tape.param(Tensor::new(vec![1, 4, 8, 8], off).unwrap()),
        }
    };
    let raw = RawPrediction {
        one_to_one: build(&a.one_to_one, &mut tape),
        one_to_many: build(&a.one_to_many, &mut tape),
        geometry: g,
        batch: 1,
    };
    let loss = detector_loss(&mut tape, &raw, &[gts]).unwrap();
    assert!(tape.value(loss).item() < 0.01);
}

#[test]
fn loss_is_positive_and_finite_at_init() {
    let spec = DatasetSpec::for_family(Family::DetectorTrain, 4);
    let data = generate_dataset(&spec, 2).unwrap();
    let model = DetectorModel::init(ArchSpec::base(64), 1).unwrap();
    let mut tape = Tape::<f32>::new();
    let w = model.bind(&mut tape, true);
    let imgs: Vec<&Tensor<f32>> = data.scenes.iter().map(|s| &s.image).collect();
    let x = tape.constant(Tensor::stack(&imgs).unwrap());
    let raw = model.forward(&mut tape, &w, x).unwrap();
    let gts: Vec<Vec<BBox>> = data.scenes.iter().map(|s| s.targets.clone()).collect();
    let loss = detector_loss(&mut tape, &raw, &gts).unwrap();
    let v = tape.value(loss).item();
    assert!(v.is_finite() && v > 0.0);
}

#[test]
fn target_logits_whole_image_box_takes_global_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let logits: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
    let max = logits.iter().copied().fold(f64::MIN, f64::max);
    let mut tape = Tape::new();
    let raw = raw_from(&mut tape, logits, vec![0.0; 256]);
    let (v, src) = target_confidence_logits(&mut tape, &raw, &[vec![BBox::new(0.0, 0.0, 64.0, 64.0)]]).unwrap();
    assert_eq!(tape.value(v).data(), &[max, max]);
    assert_eq!(src.len(), 2);
}

#[test]
fn target_logits_count_membership_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut tape = Tape::new();
    let raw = raw_from(&mut tape, logits.clone(), vec![0.0; 256]);
    let boxes = vec![BBox::new(0.0, 0.0, 20.0, 20.0), BBox::new(40.0, 40.0, 60.0, 64.0)];
    let (v, src) = target_confidence_logits(&mut tape, &raw, &[boxes]).unwrap();
    assert_eq!(tape.value(v).len(), 4);
    for (val, s) in tape.value(v).data().iter().zip(&src) {
        assert_eq!(*val, logits[s.cell]);
    }
    let total = tape.sum(v);
    tape.backward(total).unwrap();
    let g = tape.grad(raw.one_to_one.logits).unwrap();
    let hot: Vec<usize> = (0..64).filter(|&i| g.data()[i] != 0.0).collect();
    let mut expected: Vec<usize> = src.iter().filter(|s| s.head == Head::OneToOne).map(|s| s.cell).collect();
    expected.sort();
    assert_eq!(hot, expected);
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let mut model = DetectorModel::init(small_arch(), 4).unwrap();
    model.order = 2;
    model.regime = Some(catmouse_core::Regime::new(true, 3));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.cmld");
    save_checkpoint(&model, &p).unwrap();
    assert_eq!(load_checkpoint(&p).unwrap(), model);
    let mut bytes = encode_checkpoint(&model);
    bytes[0] = b'X';
    assert!(decode_checkpoint(&bytes, &p).is_err());
    let mut bytes = encode_checkpoint(&model);
    bytes.push(0);
    assert!(decode_checkpoint(&bytes, &p).is_err());
    assert!(load_checkpoint(&dir.path().join("missing.cmld")).is_err());
}

#[test]
fn training_is_deterministic_and_learns() {
    let mut spec = DatasetSpec::for_family_sized(Family::DetectorTrain, 32, 1);
    spec.seed = 11;
    let data = generate_dataset(&spec, 16).unwrap();
    let cfg = DetectorTrainConfig {
        epochs: 6,
        batch_size: 8,
        lr: 5e-3,
        ..DetectorTrainConfig::default()
    };
    let (a, curve) = train_detector(small_arch(), &data, &[], 0.0, &cfg, 5).unwrap();
    let (b, _) = train_detector(small_arch(), &data, &[], 0.0, &cfg, 5).unwrap();
    assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
    assert!(curve.last().unwrap() < &curve[0], "{curve:?}");
}

#[test]
fn adversarial_training_needs_a_pool() {
    let data = generate_dataset(&DatasetSpec::for_family_sized(Family::DetectorTrain, 32, 1), 2).unwrap();
    let cfg = DetectorTrainConfig {
        epochs: 1,
        ..DetectorTrainConfig::default()
    };
    assert!(train_detector(small_arch(), &data, &[], 0.25, &cfg, 1).is_err());
    assert!(train_detector(small_arch(), &data, &[], 1.5, &cfg, 1).is_err());
}
