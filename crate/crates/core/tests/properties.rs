use std::collections::BTreeSet;
use std::path::PathBuf;

use image::{Rgb, RgbImage};
use pad_core::classify::model_file;
use pad_core::classify::{majority_vote_video, platt_fit, svm_train, FrameProbabilitySeries, ModelTarget, SvmModel, SvmParams};
use pad_core::eval::select_threshold_eer;
use pad_core::features::{extract_features, ExtractorConfig};
use pad_core::model::{resolve_protocol, subject_folds, DatasetManifest, DevSource, Label, PropertyKind, ProtocolSpec, SampleRecord, Split};
use pad_core::preprocess::{align_and_crop, AlignGeometry, EyeLandmarks, Frame};
use pad_core::propmaps::illuminant::{illuminant_raster, IlluminantParams};
use pad_core::propmaps::saliency::{geodesic_distances, saliency_cost, solve_saliency};
use pad_core::propmaps::superpixel::{segment_superpixels, Region, SlicParams, SuperpixelGraph};
use pad_core::propmaps::{compute_maps, PropMapParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_image(seed: u64, w: u32, h: u32) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0), rng.gen_range(40.0..200.0)];
    RgbImage::from_fn(w, h, |x, y| {
        let blob = if (x as i64 - w as i64 / 2).pow(2) + (y as i64 - h as i64 / 2).pow(2) < (w as i64 / 4).pow(2) {
            50.0
        } else {
            0.0
        };
        Rgb(base.map(|b| (b + blob + rng.gen_range(-20.0..20.0)).clamp(0.0, 255.0) as u8))
    })
}

fn record(id: &str, subject: &str, label: Label, split: Split, dataset: &str) -> SampleRecord {
    SampleRecord {
        sample_id: id.into(),
        media_path: PathBuf::from("x"),
        label,
        attack_type: (label == Label::Attack).then(|| "print".into()),
        subject_id: subject.into(),
        split,
        dataset_name: dataset.into(),
        landmarks_path: None,
    }
}

fn random_manifest(seed: u64, dataset: &str) -> DatasetManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for split in [Split::Train, Split::Dev, Split::Test] {
        for s in 0..rng.gen_range(2..6) {
            for v in 0..rng.gen_range(1..4) {
                let label = if v % 2 == 0 { Label::Bonafide } else { Label::Attack };
                records.push(record(&format!("{dataset}-{split}-{s}-{v}"), &format!("{split}{s}"), label, split, dataset));
            }
        }
    }
    DatasetManifest {
        dataset_name: dataset.into(),
        records,
        fps_native: None,
    }
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> SuperpixelGraph {
    let regions: Vec<Region> = (0..n)
        .map(|_| Region {
            mean_lab: [rng.gen_range(0.0..100.0), rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)],
            centroid: (0.0, 0.0),
            pixel_count: 1,
            touches_boundary: rng.gen_bool(0.4),
        })
        .collect();
    let mut spatial: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for _ in 0..n {
        spatial.push((rng.gen_range(0..n), rng.gen_range(0..n)));
    }
    SuperpixelGraph::from_parts(regions, &spatial)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn resolved_lists_are_disjoint(seed in any::<u64>(), kfold in any::<bool>()) {
        let m = random_manifest(seed, "a");
        let dev = if kfold { DevSource::Kfold { k: 2 } } else { DevSource::DevSplit };
        let p = resolve_protocol(&ProtocolSpec::intra("a", dev), std::slice::from_ref(&m), seed).unwrap();
        let mut seen = BTreeSet::new();
        for r in p.train.iter().chain(&p.dev).chain(&p.test) {
            prop_assert!(seen.insert(r.sample_id.clone()), "{} listed twice", r.sample_id);
        }
    }

    #[test]
    fn folds_repeat_for_a_seed_and_keep_subjects_together(seed in any::<u64>(), k in 2usize..5) {
        let m = random_manifest(seed ^ 1, "a");
        let train: Vec<SampleRecord> = m.split(Split::Train).into_iter().cloned().collect();
        let subjects = train.iter().map(|r| &r.subject_id).collect::<BTreeSet<_>>().len();
        prop_assume!(subjects >= k);
        let a = subject_folds(&train, k, seed).unwrap();
        prop_assert_eq!(&a, &subject_folds(&train, k, seed).unwrap());
        for (i, r) in train.iter().enumerate() {
            for (j, q) in train.iter().enumerate() {
                if r.subject_id == q.subject_id {
                    prop_assert_eq!(a[i], a[j]);
                }
            }
        }
    }

    #[test]
    fn alignment_twice_keeps_mean_intensity(
        seed in any::<u64>(),
        lx in 40.0f64..90.0, ly in 70.0f64..120.0,
        dist in 50.0f64..110.0, angle in -0.4f64..0.4,
    ) {
        let geom = AlignGeometry::default();
        let img = noise_image(seed, 240, 240);
        let lm = EyeLandmarks { left: (lx, ly), right: (lx + dist * angle.cos(), ly + dist * angle.sin()) };
        let once = align_and_crop(&Frame { pixels: img, timestamp_s: 0.0, index: 0 }, &lm, &geom).unwrap();
        let twice = align_and_crop(&once, &geom.canonical_landmarks(), &geom).unwrap();
        let mean = |i: &RgbImage| i.as_raw().iter().map(|&v| v as f64).sum::<f64>() / i.as_raw().len() as f64;
        prop_assert!((mean(&once.pixels) - mean(&twice.pixels)).abs() <= 1.0);
    }

    #[test]
    fn saliency_solution_beats_perturbations(seed in any::<u64>(), n in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_bg: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let w_fg: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let edges: Vec<(usize, usize, f64)> = (1..n).map(|i| (rng.gen_range(0..i), i, rng.gen_range(0.1..1.1))).collect();
        let s = solve_saliency(&w_bg, &w_fg, &edges).unwrap();
        let base = saliency_cost(&s, &w_bg, &w_fg, &edges);
        for _ in 0..100 {
            let p: Vec<f64> = s.iter().map(|v| v + 1e-3 * rng.gen_range(-1.0..1.0)).collect();
            prop_assert!(base <= saliency_cost(&p, &w_bg, &w_fg, &edges));
        }
    }

    #[test]
    fn geodesics_obey_triangle_inequality(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n);
        let d = geodesic_distances(&g).unwrap();
        for a in 0..n {
            prop_assert_eq!(d[a][a], 0.0);
            for b in 0..n {
                prop_assert!((d[a][b] - d[b][a]).abs() <= 1e-9 * d[a][b].max(1.0));
                for c in 0..n {
                    prop_assert!(d[a][c] <= d[a][b] + d[b][c] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn illuminant_channels_sum_to_one(seed in any::<u64>(), k in 4usize..40) {
        let img = noise_image(seed, 48, 40);
        let g = segment_superpixels(&img, &SlicParams { target_count: k, ..Default::default() }).unwrap();
        let r = illuminant_raster(&img, &g, &IlluminantParams::default());
        for px in r.data.chunks(3) {
            prop_assert!((px.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn svm_dual_is_feasible(seed in any::<u64>(), n in 4usize..40, c in 0.05f64..20.0, rbf in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut y: Vec<f64> = x.iter().map(|r| if r[0] + rng.gen_range(-0.5..0.5) > 0.0 { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let params = if rbf { SvmParams::rbf(None, c) } else { SvmParams::linear(c) };
        let sol = svm_train(&x, &y, &params).unwrap();
        let sum: f64 = sol.dual_coefs.iter().sum();
        prop_assert!(sum.abs() <= 1e-6, "sum of alpha_i y_i = {}", sum);
        for (sv, coef) in sol.support_vectors.iter().zip(&sol.dual_coefs) {
            let i = x.iter().position(|r| r == sv).unwrap();
            let alpha = coef * y[i];
            prop_assert!(alpha >= 0.0 && alpha <= c + 1e-12, "alpha {} outside [0, {}]", alpha, c);
        }
    }

    #[test]
    fn majority_vote_ignores_decision_scale(seed in any::<u64>(), k in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dev: Vec<(f64, bool)> = (0..40)
            .map(|i| {
                let attack = i % 2 == 0;
                (if attack { 1.0 } else { -1.0 } + rng.gen_range(-1.5..1.5), attack)
            })
            .collect();
        let test: Vec<Vec<f64>> = (0..10).map(|_| (0..7).map(|_| rng.gen_range(-2.5..2.5)).collect()).collect();
        let labels = |scale: f64| -> Vec<Label> {
            let platt = platt_fit(&dev.iter().map(|&(d, a)| (scale * d, a)).collect::<Vec<_>>()).unwrap();
            let dev_probs: Vec<(f64, Label)> = dev
                .iter()
                .map(|&(d, a)| (platt.prob(scale * d), if a { Label::Attack } else { Label::Bonafide }))
                .collect();
            let tau = select_threshold_eer(&dev_probs).unwrap();
            test.iter()
                .map(|v| {
                    let series = FrameProbabilitySeries {
                        sample_id: "t".into(),
                        property: PropertyKind::Depth,
                        probs: v.iter().map(|&d| platt.prob(scale * d)).collect(),
                    };
                    majority_vote_video(&series, tau).unwrap()
                })
                .collect()
        };
        prop_assert_eq!(labels(1.0), labels(k));
    }

    #[test]
    fn model_file_round_trip(seed in any::<u64>(), standardize in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..24).map(|_| (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let labels: Vec<Label> = (0..24).map(|i| if i % 2 == 0 { Label::Attack } else { Label::Bonafide }).collect();
        let m = SvmModel::train(&x, &labels, &SvmParams::default(), ModelTarget::Fusion, "id", standardize, seed, "dg").unwrap();
        let back = model_file::decode(&model_file::encode(&m), std::path::Path::new("m.padm")).unwrap();
        for _ in 0..100 {
            let p: Vec<f64> = (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect();
            prop_assert_eq!(m.decision(&p).to_bits(), back.decision(&p).to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn map_estimation_and_features_are_deterministic(seed in any::<u64>()) {
        let frame = Frame { pixels: noise_image(seed, 64, 64), timestamp_s: 0.0, index: 0 };
        let params = PropMapParams::default();
        let a = compute_maps(&frame, "v", &params, true, None).unwrap();
        let b = compute_maps(&frame, "v", &params, true, None).unwrap();
        let cfg = ExtractorConfig::default();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(x.data.data.iter().map(|v| v.to_bits()).eq(y.data.data.iter().map(|v| v.to_bits())));
            let fx = extract_features(x, "v", &cfg).unwrap();
            let fy = extract_features(y, "v", &cfg).unwrap();
            prop_assert!(fx.values.iter().map(|v| v.to_bits()).eq(fy.values.iter().map(|v| v.to_bits())));
        }
    }
}
