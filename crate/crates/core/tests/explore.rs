use std::fs;

use bridge_gan::explore::{
    decode_grid, decode_points, grid_points, montage_dir, screen, screen_dir, GridPoint, GridSpec,
    SampleManifest, ScreenThresholds, Verdict,
};
use bridge_gan::geometry::{render, sample_spec, BridgeSubtype, Canvas};
use bridge_gan::nn::checkpoint::{save, MANIFEST_FILE};
use bridge_gan::nn::{BlockOptions, CheckpointMeta, Network, NetworkConfig, Profile, SeedLineage};
use bridge_gan::GrayImage;
use proptest::prelude::*;

fn reduced_generator(seed: u64) -> Network {
    Network::build(
        NetworkConfig::generator(Profile::Reduced, BlockOptions::default()),
        seed,
    )
    .unwrap()
}

fn meta() -> CheckpointMeta {
    CheckpointMeta {
        step: 0,
        epoch: None,
        seed: SeedLineage {
            global_seed: 1,
            init_seed: 1,
            resumed_from: None,
        },
        train_config: None,
    }
}

#[test]
fn decoding_is_deterministic_and_filenames_are_a_bijection() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("gen");
    save(&ckpt, &reduced_generator(3), meta()).unwrap();
    let spec = GridSpec::new(6, -2.0, 2.0).unwrap();
    let a = decode_grid(&ckpt, &spec, &dir.path().join("a")).unwrap();
    let b = decode_grid(&ckpt, &spec, &dir.path().join("b")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.samples.len(), 36);
    assert_eq!(a, SampleManifest::load(&dir.path().join("a")).unwrap());
    for s in &a.samples {
        let x = fs::read(dir.path().join("a").join(&s.file)).unwrap();
        let y = fs::read(dir.path().join("b").join(&s.file)).unwrap();
        assert_eq!(x, y);
        let p = GridPoint::parse_filename(&s.file).unwrap();
        assert_eq!((p.i, p.j, p.z), (s.i, s.j, s.z));
        assert_eq!(s.index, s.i * 6 + s.j);
    }
    let on_disk = fs::read_dir(dir.path().join("a"))
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "png")
        })
        .count();
    assert_eq!(on_disk, 36);
    assert_eq!((a.width, a.height), (128, 32));
}

#[test]
fn two_by_two_grid_decodes_the_corners() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("gen");
    save(&ckpt, &reduced_generator(4), meta()).unwrap();
    let m = decode_grid(
        &ckpt,
        &GridSpec::new(2, -1.0, 1.0).unwrap(),
        &dir.path().join("out"),
    )
    .unwrap();
    let zs: Vec<_> = m.samples.iter().map(|s| s.z).collect();
    assert_eq!(zs, vec![[-1.0, -1.0], [-1.0, 1.0], [1.0, -1.0], [1.0, 1.0]]);
}

#[test]
fn batched_and_single_decodes_agree_bitwise() {
    let g = reduced_generator(5);
    let pts: Vec<[f32; 2]> = grid_points(&GridSpec::new(7, -10.0, 10.0).unwrap())
        .unwrap()
        .iter()
        .map(|p| p.z)
        .collect();
    let batched = decode_points(&g, &pts).unwrap();
    for (p, img) in pts.iter().zip(&batched) {
        assert_eq!(&bridge_gan::nn::decode(&g, *p).unwrap(), img);
    }
}

#[test]
fn unloadable_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("gen");
    save(&ckpt, &reduced_generator(6), meta()).unwrap();
    fs::write(ckpt.join(MANIFEST_FILE), b"{").unwrap();
    let err = decode_grid(&ckpt, &GridSpec::default(), &dir.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("manifest.json"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn grid_montage_matches_grid_topology() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("gen");
    save(&ckpt, &reduced_generator(7), meta()).unwrap();
    let out = dir.path().join("grid");
    decode_grid(&ckpt, &GridSpec::new(4, -3.0, 3.0).unwrap(), &out).unwrap();
    let m = montage_dir(&out, 4).unwrap();
    assert_eq!((m.width(), m.height()), (4 * 129 + 1, 4 * 33 + 1));
    let entries = screen_dir(&out, None).unwrap();
    assert_eq!(entries.len(), 16);
    assert!(entries.windows(2).all(|w| w[0].filename < w[1].filename));
}

#[test]
fn rendered_bridges_pass_the_screen() {
    let t = ScreenThresholds::default();
    for subtype in BridgeSubtype::ALL {
        for seed in 0..6 {
            let img = render(&sample_spec(subtype, seed), Canvas::default()).unwrap();
            let r = screen(&img, &t);
            assert_eq!(r.verdict, Verdict::Feasible, "{subtype} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn small_canvas_renders_pass_the_scaled_screen() {
    let t = ScreenThresholds::for_width(128);
    for subtype in BridgeSubtype::ALL {
        let img = render(&sample_spec(subtype, 1), Canvas::new(128, 32).unwrap()).unwrap();
        assert_eq!(screen(&img, &t).verdict, Verdict::Feasible, "{subtype}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grid_is_symmetric_under_negation(n in 2usize..80, half in 0.1f64..50.0) {
        let spec = GridSpec::new(n, -half, half).unwrap();
        let pts = grid_points(&spec).unwrap();
        prop_assert_eq!(pts.len(), n * n);
        let mut a: Vec<(u32, u32)> = pts.iter().map(|p| (p.z[0].to_bits(), p.z[1].to_bits())).collect();
        let mut b: Vec<(u32, u32)> = pts.iter().map(|p| ((-p.z[0]).to_bits(), (-p.z[1]).to_bits())).collect();
        // Treat the two zeros alike.
        let norm = |v: &mut Vec<(u32, u32)>| {
            for p in v.iter_mut() {
                let z = |x: u32| if f32::from_bits(x) == 0.0 { 0 } else { x };
                *p = (z(p.0), z(p.1));
            }
            v.sort_unstable();
        };
        norm(&mut a);
        norm(&mut b);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn screen_is_total_and_deterministic(seed in any::<u64>(), density in 0.0f64..1.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pixels = (0..512 * 128).map(|_| if rng.random_bool(density) { rng.random_range(0..=128) } else { 255 }).collect();
        let img = GrayImage::from_pixels(512, 128, pixels).unwrap();
        let t = ScreenThresholds::default();
        let a = screen(&img, &t);
        prop_assert_eq!(&a, &screen(&img, &t));
        let feasible = a.deck_continuous && a.floating_component_count == 0 && a.ground_contact_count >= 2;
        prop_assert_eq!(a.verdict == Verdict::Feasible, feasible);
    }
}
