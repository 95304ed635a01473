//! Brute-force reference for single-class 101-point AP and a generator of
//! random detection problems. Shared by the evaluator tests and the
//! acceptance suite.

#![allow(dead_code)]

use catmouse_core::detector::Detection;
use catmouse_core::scene::BBox;
use rand::Rng;

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let area = |r: &BBox| (r.x_max - r.x_min) * (r.y_max - r.y_min);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// AP at one IoU threshold: greedy matching per image, then for each recall
/// level `r = k/100` the best precision among all cut-offs reaching recall
/// `r`, compared in exact integer arithmetic.
pub fn oracle_ap(dets: &[Vec<Detection>], gts: &[Vec<BBox>], threshold: f64) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let mut scored: Vec<(f64, bool)> = Vec::new();
    for (d, g) in dets.iter().zip(gts) {
        let mut idx: Vec<usize> = (0..d.len()).collect();
        idx.sort_by(|&a, &b| d[b].score.partial_cmp(&d[a].score).unwrap());
        let mut used = vec![false; g.len()];
        for i in idx {
            let mut best = None;
            let mut best_iou = threshold;
            for (j, gt) in g.iter().enumerate() {
                let v = oracle_iou(&d[i].bbox, gt);
                if !used[j] && v >= best_iou && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                    best_iou = v;
                }
            }
            if let Some((j, _)) = best {
                used[j] = true;
            }
            scored.push((d[i].score, best.is_some()));
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    // (tp, rank) at every cut-off
    let cuts: Vec<(usize, usize)> = scored
        .iter()
        .scan(0, |tp, &(_, hit)| {
            *tp += hit as usize;
            Some(*tp)
        })
        .enumerate()
        .map(|(i, tp)| (tp, i + 1))
        .collect();
    let mut total = 0.0;
    for k in 0..=100usize {
        let best = cuts
            .iter()
            .filter(|&&(tp, _)| tp * 100 >= k * n_gt)
            .map(|&(tp, n)| tp as f64 / n as f64)
            .fold(0.0, f64::max);
        total += best;
    }
    total / 101.0
}

/// Mean oracle AP over IoU thresholds 0.50:0.05:0.95.
pub fn oracle_ap_coco(dets: &[Vec<Detection>], gts: &[Vec<BBox>]) -> f64 {
    (0..10).map(|i| oracle_ap(dets, gts, 0.5 + 0.05 * i as f64)).sum::<f64>() / 10.0
}

fn random_box(rng: &mut impl Rng) -> BBox {
    let x = rng.random_range(0.0..50.0);
    let y = rng.random_range(0.0..50.0);
    BBox::new(x, y, x + rng.random_range(4.0..30.0), y + rng.random_range(4.0..30.0))
}

/// Random images with ground truth, jittered true detections (some missed,
/// some duplicated) and spurious boxes, all with distinct uniform scores.
pub fn random_instance(rng: &mut impl Rng) -> (Vec<Vec<Detection>>, Vec<Vec<BBox>>) {
    let images = rng.random_range(1..=5);
    let mut dets = Vec::with_capacity(images);
    let mut gts = Vec::with_capacity(images);
    for _ in 0..images {
        let g: Vec<BBox> = (0..rng.random_range(0..=4)).map(|_| random_box(rng)).collect();
        let mut d = Vec::new();
        for b in &g {
            for _ in 0..rng.random_range(0..=2) {
                let j = rng.random_range(0.0..0.35);
                let (w, h) = (b.width(), b.height());
                d.push(Detection {
                    bbox: BBox::new(
                        b.x_min + w * j * rng.random_range(-1.0..1.0),
                        b.y_min + h * j * rng.random_range(-1.0..1.0),
                        b.x_max + w * j * rng.random_range(-1.0..1.0),
                        b.y_max + h * j * rng.random_range(-1.0..1.0),
                    ),
                    score: rng.random(),
                });
            }
        }
        for _ in 0..rng.random_range(0..=3) {
            d.push(Detection {
                bbox: random_box(rng),
                score: rng.random(),
            });
        }
        dets.push(d);
        gts.push(g);
    }
    (dets, gts)
}
