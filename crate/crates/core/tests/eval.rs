#[path = "common/oracle.rs"]
mod oracle;

use catmouse_core::detector::{ArchSpec, Detection, DetectorModel, Stage};
use catmouse_core::eval::*;
use catmouse_core::patch::{grayscale_patch, ApplicationProtocol};
use catmouse_core::scene::{generate_dataset, BBox, DatasetSpec, Family};
use catmouse_core::seed;
use catmouse_core::CoreError;
use catmouse_tensor::Tensor;
use oracle::{oracle_ap, oracle_ap_coco, random_instance};

fn coco(dets: &[Vec<Detection>], gts: &[Vec<BBox>]) -> f64 {
    iou_thresholds().iter().map(|&t| average_precision(dets, gts, t)).sum::<f64>() / 10.0
}

#[test]
fn ap_matches_brute_force_oracle() {
    let mut rng = seed::rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let (dets, gts) = random_instance(&mut rng);
        for t in iou_thresholds() {
            worst = worst.max((average_precision(&dets, &gts, t) - oracle_ap(&dets, &gts, t)).abs());
        }
        worst = worst.max((coco(&dets, &gts) - oracle_ap_coco(&dets, &gts)).abs());
    }
    assert!(worst <= 1e-9, "max |AP − oracle| = {worst}");
}

#[test]
fn ap_hand_example() {
    // scores 0.9 TP, 0.8 FP, 0.7 TP against two ground-truth boxes
    let gts = vec![vec![BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(20.0, 20.0, 30.0, 30.0)]];
    let d = |x: f64, score: f64| Detection {
        bbox: BBox::new(x, x, x + 10.0, x + 10.0),
        score,
    };
    let dets = vec![vec![d(0.0, 0.9), d(50.0, 0.8), d(20.0, 0.7)]];
    let expected = (51.0 * 1.0 + 50.0 * 2.0 / 3.0) / 101.0;
    assert!((average_precision(&dets, &gts, 0.5) - expected).abs() < 1e-12);
}

#[test]
fn ap_ignores_monotone_score_transforms() {
    let mut rng = seed::rng(7);
    for _ in 0..100 {
        let (dets, gts) = random_instance(&mut rng);
        let warped: Vec<Vec<Detection>> = dets
            .iter()
            .map(|d| {
                d.iter()
                    .map(|x| Detection {
                        bbox: x.bbox,
                        score: 0.2 + 0.5 * x.score.powi(3),
                    })
                    .collect()
            })
            .collect();
        assert!((coco(&dets, &gts) - coco(&warped, &gts)).abs() < 1e-12);
    }
}

#[test]
fn top_scoring_false_positive_never_helps() {
    let mut rng = seed::rng(8);
    for _ in 0..200 {
        let (mut dets, gts) = random_instance(&mut rng);
        let before = coco(&dets, &gts);
        dets[0].push(Detection {
            bbox: BBox::new(500.0, 500.0, 510.0, 510.0),
            score: 2.0,
        });
        assert!(coco(&dets, &gts) <= before + 1e-12);
    }
}

fn row(model: usize, patch: usize, index: usize, source: &str, ap: f64) -> LedgerRow {
    LedgerRow {
        run_id: "r".into(),
        model_order: model,
        patch_order: patch,
        patch_index: index,
        source: source.into(),
        resize_factor: 0.5,
        ap,
        per_threshold: vec![ap; 10],
    }
}

fn full_rows(n: usize, v: usize, gray: f64, patched: impl Fn(usize, usize, usize) -> f64) -> Vec<LedgerRow> {
    let mut rows = Vec::new();
    for m in 0..=n {
        rows.push(row(m, 0, 0, "clean", 0.9));
        for l in 0..=10 {
            rows.push(row(m, 0, l, "grayscale", gray));
        }
        for p in 1..=n {
            for i in 0..v {
                rows.push(row(m, p, i, "patch", patched(m, p, i)));
            }
        }
    }
    rows
}

#[test]
fn heatmap_aggregates_deltas() {
    let rows = full_rows(2, 2, 0.8, |m, p, i| 0.8 - 0.1 * p as f64 + 0.05 * m as f64 - 0.02 * i as f64);
    let h = build_heatmap(&rows, 2, 2).unwrap();
    assert_eq!((h.model_orders(), h.patch_orders()), (3, 2));
    assert!((h.cells[0][0] - 0.11).abs() < 1e-12);
    assert!((h.cells[2][1] - 0.11).abs() < 1e-12);
    assert!((h.stds[1][0] - 0.01).abs() < 1e-12);
    assert!((h.col_mu[0] - 0.06).abs() < 1e-12);
    let flat: Vec<f64> = h.cells.iter().flatten().copied().collect();
    assert!((h.mu - mean_std(&flat).0).abs() < 1e-15);
}

#[test]
fn heatmap_reports_missing_cells() {
    let mut rows = full_rows(2, 2, 0.8, |_, _, _| 0.5);
    rows.retain(|r| !(r.model_order == 1 && r.patch_order == 2 && r.patch_index == 1));
    match build_heatmap(&rows, 2, 2) {
        Err(CoreError::MissingCells(s)) => assert!(s.contains("model 1, patch 2, validation 1"), "{s}"),
        other => panic!("expected missing cells, got {other:?}"),
    }
    rows.retain(|r| !(r.model_order == 0 && r.source == "grayscale" && r.patch_index == 3));
    assert!(build_heatmap(&rows, 2, 2).is_err());
}

#[test]
fn all_zero_heatmap() {
    let h = build_heatmap(&full_rows(1, 3, 0.0, |_, _, _| 0.0), 1, 3).unwrap();
    assert!(h.cells.iter().flatten().chain(&h.row_mu).chain(&h.col_mu).all(|&v| v == 0.0));
    assert_eq!(h.mu, 0.0);
}

#[test]
fn ledger_csv_is_stable() {
    let csv = ledger_csv(&[row(0, 1, 2, "patch", 0.25)]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], LEDGER_HEADER);
    assert_eq!(lines[1], "r,0,1,2,patch,0.5,0.25,0.25,0.25,0.25,0.25,0.25,0.25,0.25,0.25,0.25,0.25");
    assert!(csv.ends_with('\n') && !csv.contains('\r'));
}

fn arch() -> ArchSpec {
    ArchSpec {
        name: "tiny".into(),
        image_size: 32,
        stages: vec![
            Stage { channels: 4, stride: 2 },
            Stage { channels: 4, stride: 2 },
            Stage { channels: 4, stride: 1 },
            Stage { channels: 4, stride: 2 },
        ],
        prior: 12.0,
        leaky_slope: 0.1,
    }
}

#[test]
fn image_blind_model_has_flat_grayscale_baseline() {
    let mut model = DetectorModel::init(arch(), 4).unwrap();
    let n = 2 * model.arch.stages.len();
    for h in 0..2 {
        model.weights[n + 2 * h] = Tensor::zeros(model.weights[n + 2 * h].shape().to_vec());
    }
    let data = generate_dataset(&DatasetSpec::for_family_sized(Family::Eval, 32, 3), 12).unwrap();
    let protocol = ApplicationProtocol::eval(0.5, 0.5, 0.5);
    let g = grayscale_baseline(&model, &data, &protocol, 9, &EvalSettings::default()).unwrap();
    assert_eq!(g.levels.len(), 11);
    assert!(g.levels.iter().all(|l| l.ap == g.levels[0].ap));
    assert!(g.std < 1e-12, "std {}", g.std);
}

#[test]
fn evaluation_shares_placements_across_sources() {
    let model = DetectorModel::init(arch(), 5).unwrap();
    let data = generate_dataset(&DatasetSpec::for_family_sized(Family::Eval, 32, 6), 10).unwrap();
    let protocol = ApplicationProtocol::eval(0.5, 0.5, 0.5);
    let s = EvalSettings::default();
    let patch = Tensor::from_fn(vec![3, 8, 8], |i| (i % 7) as f32 / 7.0);
    let a = evaluate_detailed(&model, &data, PatchSource::Patch(&patch), &protocol, 11, &s).unwrap();
    let b = evaluate_detailed(&model, &data, PatchSource::Grayscale(3), &protocol, 11, &s).unwrap();
    assert_eq!(a.decisions, b.decisions);
    let again = evaluate_detailed(&model, &data, PatchSource::Patch(&patch), &protocol, 11, &s).unwrap();
    assert_eq!(a.result, again.result);
    let clean = evaluate(&model, &data, PatchSource::Clean, &protocol, 11, &s).unwrap();
    assert_eq!(clean.source, "clean");
    assert!((0.0..=1.0).contains(&clean.ap));
    let gray = grayscale_patch(3, 8).unwrap();
    let c = evaluate(&model, &data, PatchSource::Patch(&gray), &protocol, 11, &s).unwrap();
    assert_eq!(c.ap, b.result.ap);
}

#[test]
fn evaluation_requires_eval_protocol() {
    let model = DetectorModel::init(arch(), 5).unwrap();
    let data = generate_dataset(&DatasetSpec::for_family_sized(Family::Eval, 32, 6), 2).unwrap();
    let adv = ApplicationProtocol::adv_train(0.5, (0.5, 0.9));
    assert!(evaluate(&model, &data, PatchSource::Clean, &adv, 1, &EvalSettings::default()).is_err());
}
