use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use catmouse_core::config::{GameConfig, Preset};
use catmouse_core::game::*;
use catmouse_core::manifest::{read_manifest, verify_manifest};
use catmouse_core::patch::PatchRole;
use catmouse_core::report::report_run;
use catmouse_core::{CoreError, Regime};

fn tiny(seed: u64) -> GameConfig {
    let mut c = GameConfig::preset(Preset::Desk);
    c.seed = seed;
    c.regime = Regime::new(true, 2);
    c.max_order = 2;
    c.validation = 2;
    c.zoo_size = 1;
    c.data.image_size = 32;
    c.data.detector_train = 24;
    c.data.patch_train = 8;
    c.data.eval = 8;
    c.detector.epochs = 1;
    c.detector.batch_size = 8;
    c.patch.size = 8;
    c.patch.epochs = 2;
    c.patch.decay_every = 1;
    c.patch.batch_size = 4;
    c
}

/// Every file below `dir` except the event log, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                if rel != "events.log" && rel != "manifest.json" {
                    out.insert(rel, fs::read(&p).unwrap());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn finished(outcome: GameOutcome) -> (Box<GameState>, GameResult) {
    match outcome {
        GameOutcome::Finished(s, r) => (s, r),
        GameOutcome::Stopped(n) => panic!("stopped after order {n}"),
    }
}

#[test]
fn game_layout_determinism_and_resume() {
    let c = tiny(5);
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let (state, result) = finished(run_game(&c, &a, RunOptions::default()).unwrap());

    for n in 0..=2 {
        assert!(a.join(format!("order-{n}/model.cmld")).exists());
    }
    for n in 1..=2 {
        for i in 0..2 {
            for stem in ["train", "val"] {
                assert!(a.join(format!("order-{n}/{stem}-{i}.cmpt")).exists());
                assert!(a.join(format!("order-{n}/{stem}-{i}.png")).exists());
            }
        }
    }
    for f in ["config.txt", "state.json", "events.log", "ledger.json", "ledger.csv", "heatmap.json", "manifest.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(state.models.iter().map(|m| m.order).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(state.pools.iter().map(|p| p.members.len()).collect::<Vec<_>>(), vec![2, 4]);
    assert!(state.validation_patches.iter().flatten().all(|p| p.meta.role == PatchRole::Validation));
    // 3 models × (clean + 11 grey + 2 orders × 2 validation patches)
    assert_eq!(state.ledger.len(), 3 * (1 + 11 + 4));
    assert_eq!((result.heatmap.model_orders(), result.heatmap.patch_orders()), (3, 2));
    assert!(result.heatmap.cells.iter().flatten().all(|v| v.is_finite()));
    assert_eq!(result.clean.len(), 3);
    assert!(verify_manifest(&a).unwrap().is_empty());

    // same config, fresh directory: identical artifacts
    let b = root.path().join("b");
    finished(run_game(&c, &b, RunOptions::default()).unwrap());
    assert_eq!(snapshot(&a), snapshot(&b));

    // stop after order 1, then resume
    let r = root.path().join("r");
    match run_game(&c, &r, RunOptions { stop_after: Some(1) }).unwrap() {
        GameOutcome::Stopped(1) => {}
        other => panic!("expected a stop after order 1, got {other:?}"),
    }
    assert!(!r.join("order-2").exists());
    finished(run_game(&c, &r, RunOptions::default()).unwrap());
    assert_eq!(snapshot(&a), snapshot(&r));
    assert!(fs::read_to_string(r.join("events.log")).unwrap().contains("resume after order 1"));
    let (ma, mr) = (read_manifest(&a).unwrap(), read_manifest(&r).unwrap());
    assert_eq!(ma.config_hash, mr.config_hash);
    let paths = |m: &catmouse_core::manifest::RunManifest| {
        m.artifacts
            .iter()
            .filter(|x| x.path != "events.log")
            .map(|x| (x.path.clone(), x.sha256.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(paths(&ma), paths(&mr));

    // a different config cannot resume into the same directory
    let mut other = c.clone();
    other.pi = 0.5;
    match run_game(&other, &r, RunOptions::default()) {
        Err(CoreError::ResumeMismatch { .. }) => {}
        x => panic!("expected a resume mismatch, got {x:?}"),
    }

    // tampering is detected
    fs::write(a.join("order-1/val-0.png"), b"not a png").unwrap();
    assert_eq!(verify_manifest(&a).unwrap(), vec!["order-1/val-0.png".to_string()]);

    // reports and transfer
    let out = report_run(&b).unwrap();
    assert_eq!(out.warnings.len(), 1);
    assert!(b.join("heatmap.svg").exists());
    let t = transfer_for_run(&b, &c).unwrap();
    assert_eq!(t.members.len(), 1);
    assert_eq!(t.bars.len(), 2);
    assert!(t.bars.iter().all(|bar| bar.std_ap == 0.0));
    assert!(b.join("zoo").read_dir().unwrap().count() == 1);
    let again = transfer_for_run(&b, &c).unwrap();
    assert_eq!(t, again);
    let out = report_run(&b).unwrap();
    assert!(out.warnings.is_empty());
    assert!(b.join("transfer.svg").exists());
    assert!(verify_manifest(&b).unwrap().is_empty());
}

#[test]
fn non_successive_pools_hold_only_the_latest_order() {
    let mut c = tiny(6);
    c.regime = Regime::new(false, 1);
    c.validation = 1;
    let dir = tempfile::tempdir().unwrap();
    let (state, _) = finished(run_game(&c, dir.path(), RunOptions::default()).unwrap());
    assert_eq!(state.pools.len(), 2);
    for (n, p) in state.pools.iter().enumerate() {
        assert_eq!(p.members, vec![(n + 1, 0)]);
    }
}
