//! Halo synthesis, removal and blind separation on synthetic scenes.

use halosep_core::radial::{read_sidecar, write_sidecar};
use halosep_core::synth::reference_texture;
use halosep_core::{
    apply_halo, blind_separate, estimate_center, load_image, radial_gradient, remove_halo,
    save_image, synth_halo, HaloModel, HaloParams, ImageF, LightCenter, SeparationConfig, V_FLOOR,
};
use proptest::prelude::*;

fn params(model: HaloModel, sigma: f64, ambient: f64) -> HaloParams {
    HaloParams {
        model,
        sigma,
        ambient,
        beta: 1.0,
    }
}

#[test]
fn radial_gradient_of_a_cone_is_its_slope() {
    let (h, w) = (48, 64);
    let c = LightCenter::new(30.0, 20.0);
    let slope = 0.01;
    let cone = ImageF::from_fn(h, w, 1, |_, y, x| {
        1.0 - slope * (x as f64 - c.x).hypot(y as f64 - c.y)
    })
    .unwrap();
    let g = radial_gradient(&cone, c).unwrap();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let r = (x as f64 - c.x).hypot(y as f64 - c.y);
            if r >= 10.0 {
                let v = g.get(y, x);
                assert!((v + slope).abs() < 0.1 * slope, "({y},{x}) r={r}: {v}");
            }
        }
    }
}

#[test]
fn brightest_spot_locates_the_light() {
    let scene = ImageF::filled(64, 80, 3, 0.6).unwrap();
    let truth = LightCenter::new(50.0, 22.0);
    let halo = synth_halo(64, 80, &params(HaloModel::Gaussian, 15.0, 0.2), truth).unwrap();
    let z = apply_halo(&scene, &halo).unwrap();
    let est = estimate_center(&z, 0.01).unwrap();
    assert!(!est.degenerate);
    assert!(est.center.distance(&truth) < 1.5, "{:?}", est.center);
}

#[test]
fn separation_of_a_lit_flat_scene_recovers_the_halo() {
    let (h, w) = (64, 64);
    let truth = LightCenter::new(28.0, 36.0);
    let halo = synth_halo(h, w, &params(HaloModel::Cosine4, 20.0, 0.3), truth).unwrap();
    let z = apply_halo(&ImageF::filled(h, w, 3, 0.7).unwrap(), &halo).unwrap();
    let sep = blind_separate(&z, truth, &SeparationConfig::default()).unwrap();
    let mae = sep.halo.mean_abs_error(&halo).unwrap();
    assert!(mae < 0.02, "MAE {mae}");

    let profile = sep.profile.expect("non-degenerate input has a profile");
    let levels: Vec<f64> = (0..200).map(|i| profile.eval(i as f64 * 0.25)).collect();
    for pair in levels.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "profile rises: {pair:?}");
    }
}

#[test]
fn images_and_halo_sidecars_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let img = reference_texture(24, 40, 3).unwrap();
    let img_path = dir.path().join("scene.png");
    save_image(&img, &img_path).unwrap();
    let back = load_image(&img_path).unwrap();
    assert!(back.same_shape(&img));
    let worst = img.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 0.5 / 255.0 + 1e-12, "{worst}");

    let p = params(HaloModel::Gaussian, 12.5, 0.25);
    let c = LightCenter::new(17.25, 9.5);
    let side = dir.path().join("halo.txt");
    write_sidecar(&side, &p, c).unwrap();
    let (p2, c2) = read_sidecar(&side).unwrap();
    assert_eq!((p, c), (p2, c2));
    assert_eq!(synth_halo(24, 40, &p, c).unwrap(), synth_halo(24, 40, &p2, c2).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dividing_by_the_true_halo_restores_the_scene(
        seed in 0u64..1000,
        sigma in 4.0f64..30.0,
        ambient in 0.05f64..0.6,
        cx in 0.0f64..40.0,
        cy in 0.0f64..30.0,
        gaussian in any::<bool>(),
    ) {
        let model = if gaussian { HaloModel::Gaussian } else { HaloModel::Cosine4 };
        let scene = reference_texture(30, 40, seed).unwrap();
        let halo = synth_halo(30, 40, &params(model, sigma, ambient), LightCenter::new(cx, cy)).unwrap();
        prop_assert!(halo.values().iter().all(|&v| (V_FLOOR..=1.0).contains(&v)));
        let z = apply_halo(&scene, &halo).unwrap();
        let back = remove_halo(&z, &halo, V_FLOOR).unwrap();
        for (a, b) in scene.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn estimated_halo_stays_in_range(seed in 0u64..1000, ambient in 0.1f64..0.5) {
        let scene = reference_texture(40, 40, seed).unwrap();
        let truth = LightCenter::new(20.0, 18.0);
        let halo = synth_halo(40, 40, &params(HaloModel::Gaussian, 12.0, ambient), truth).unwrap();
        let z = apply_halo(&scene, &halo).unwrap();
        let sep = blind_separate(&z, truth, &SeparationConfig::default()).unwrap();
        prop_assert!(sep.halo.values().iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));
        let out = remove_halo(&z, &sep.halo, SeparationConfig::default().div_floor).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
