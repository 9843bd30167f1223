use hom_core::experiment::{
    load_reference, quality_maps, run_reference, run_scan, simulate_reference, ExperimentConfig,
    OutputLayout, ScanPlan, ScanVariable,
};
use hom_core::Error;

fn small(frames: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        frames,
        seed: 91,
        ..Default::default()
    };
    for cam in [&mut c.camera1, &mut c.camera2] {
        cam.width = 64;
        cam.height = 64;
        cam.nu_per_pixel = 0.74;
    }
    c
}

#[test]
fn reference_without_pairs_is_refused() {
    let mut c = small(80);
    c.pairs_per_frame = Some(0.0);
    let run = simulate_reference(&c).unwrap();
    assert!(matches!(
        run.stats.ensure_usable(),
        Err(Error::MissingReference(_))
    ));

    let dir = tempfile::tempdir().unwrap();
    run_reference(&c, dir.path()).unwrap();
    let plan = ScanPlan::default_for(ScanVariable::DeltaT, 20).unwrap();
    assert!(matches!(
        run_scan(&c, &plan, dir.path()),
        Err(Error::MissingReference(_))
    ));
}

#[test]
fn missing_or_foreign_reference() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(60);
    assert!(matches!(
        load_reference(&c, dir.path()),
        Err(Error::MissingReference(_))
    ));
    run_reference(&c, dir.path()).unwrap();
    load_reference(&c, dir.path()).unwrap();
    // more frames change nothing physical
    load_reference(&small(90), dir.path()).unwrap();
    let mut other = c.clone();
    other.joint.sigma_diff_x *= 0.5;
    assert!(matches!(
        load_reference(&other, dir.path()),
        Err(Error::MissingReference(_))
    ));
}

#[test]
fn quadrupling_frames_halves_c0_noise() {
    let a = simulate_reference(&small(100)).unwrap().stats;
    let b = simulate_reference(&small(400)).unwrap().stats;
    let ratio = a.integral_err / b.integral_err;
    assert!((ratio / 2.0 - 1.0).abs() < 0.2, "{ratio}");
}

#[test]
fn peak_width_does_not_depend_on_qe() {
    let mut lo = small(200);
    let mut hi = small(200);
    for cam in [&mut lo.camera1, &mut lo.camera2] {
        cam.qe = 0.2;
    }
    for cam in [&mut hi.camera1, &mut hi.camera2] {
        cam.qe = 0.6;
    }
    let a = simulate_reference(&lo).unwrap().stats.c0;
    let b = simulate_reference(&hi).unwrap().stats.c0;
    for (x, y) in [(a.sigma_x, b.sigma_x), (a.sigma_y, b.sigma_y)] {
        assert!((x / y - 1.0).abs() < 0.15, "{x} vs {y}");
    }
}

#[test]
fn interrupted_scan_resumes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let c = small(40);
    run_reference(&c, dir.path()).unwrap();
    let plan = ScanPlan::new(
        ScanVariable::DeltaT,
        vec![-300.0, -150.0, 0.0, 150.0, 300.0],
        40,
    )
    .unwrap();
    run_scan(&c, &plan, dir.path()).unwrap();
    let scan = OutputLayout::new(dir.path()).scan_dir(ScanVariable::DeltaT);
    let first = std::fs::read(scan.join("curve.csv")).unwrap();
    let points: Vec<_> = std::fs::read_dir(scan.join("points"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(points.len(), 5);
    std::fs::remove_file(&points[2]).unwrap();
    std::fs::remove_file(scan.join("curve.csv")).unwrap();
    run_scan(&c, &plan, dir.path()).unwrap();
    assert_eq!(std::fs::read(scan.join("curve.csv")).unwrap(), first);
}

#[test]
fn quality_maps_need_matching_configs() {
    let vv = small(20);
    let mut hv = vv.clone();
    hv.setting.pol_angle = 90.0;
    hv.seed += 1;
    hv.camera1.qe = 0.3;
    match quality_maps(&hv, &vv) {
        Err(Error::Config(issues)) => {
            let keys: Vec<_> = issues.iter().map(|i| i.key.as_str()).collect();
            assert!(
                keys.contains(&"seed") && keys.contains(&"camera1"),
                "{keys:?}"
            );
        }
        other => panic!("{other:?}"),
    }
}
