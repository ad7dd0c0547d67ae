use edgesynth::edge::CannyParams;
use edgesynth::eval::PALETTE;
use edgesynth_demo::{to_rgba, Demo};

#[test]
fn fusion_tracks_the_thresholds() {
    let mut demo = Demo::new_native(4, 96).unwrap();
    let loose = CannyParams {
        high_quantile: 0.7,
        ..CannyParams::default()
    };
    let strict = CannyParams {
        high_quantile: 0.97,
        ..CannyParams::default()
    };
    demo.fuse_native(loose).unwrap();
    let n_loose = demo.edge_count();
    let fused = demo.fuse_native(strict).unwrap().clone();
    assert!(fused.pixels().iter().all(|v| [0, 128, 255].contains(v)));
    assert!(demo.edge_count() < n_loose);
    let rgba = to_rgba(fused.image());
    assert_eq!(rgba.len(), 96 * 96 * 4);
    assert!(rgba.chunks(4).all(|p| p[0] == p[1] && p[1] == p[2] && p[3] == 255));
}

#[test]
fn shape_transform_is_seeded_and_closed() {
    let mut demo = Demo::new_native(1, 64).unwrap();
    let a = demo.shape_transform_native(9).unwrap();
    let summary = demo.transform_summary();
    let b = demo.shape_transform_native(9).unwrap();
    assert_eq!(a, b);
    assert_eq!(summary, demo.transform_summary());
    assert_eq!((a.width(), a.height()), (64, 64));
    assert!(a.pixels().iter().all(|v| [0, 128, 255].contains(v)));
}

#[test]
fn threshold_scoring() {
    let mut demo = Demo::new_native(2, 64).unwrap();
    let overlay = demo.score_native(160).unwrap();
    assert!(overlay.pixels().chunks(3).all(|p| PALETTE.iter().any(|c| c[..] == *p)));
    let good = demo.scores();
    assert!(good.iou > 0.8, "{good:?}");
    demo.score_native(0).unwrap();
    assert_eq!(demo.scores().iou, 0.0);
    assert!(demo.scores_summary().starts_with("IoU 0.000"));
}
