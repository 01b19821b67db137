//! Metric oracles and evaluation-report behaviour.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vivid_core::datapipe::{block_downsample, Dataset};
use vivid_core::eval::{
    aggregate_rows, bicubic_upsample, evaluate, psnr, ssim, ssim_with_window, EvalModel,
    SSIM_C1,
};
use vivid_core::face::CropSpec;
use vivid_core::model::ModelState;
use vivid_core::toyface::toy_face;

fn rand_img(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_fn(shape, |_| rng.random_range(0.0..1.0))
}

#[test]
fn psnr_cases_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_img((3, 8, 8), &mut rng);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY, "identical images");

    let zero = Array3::<f64>::zeros((3, 8, 8));
    let one = Array3::<f64>::from_elem((3, 8, 8), 1.0);
    assert!((psnr(&zero, &one).unwrap() - 0.0).abs() < 1e-12, "MSE 1 is 0 dB");

    let b = rand_img((3, 8, 8), &mut rng);
    // Scalar double-loop oracle.
    let mut mse = 0.0;
    for c in 0..3 {
        for y in 0..8 {
            for x in 0..8 {
                mse += (a[[c, y, x]] - b[[c, y, x]]).powi(2);
            }
        }
    }
    mse /= 192.0;
    let want = 10.0 * (1.0 / mse).log10();
    assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-8);
    assert!((psnr(&a, &b).unwrap() - psnr(&b, &a).unwrap()).abs() < 1e-12);

    let c = rand_img((3, 4, 4), &mut rng);
    assert!(psnr(&a, &c).is_err(), "dim mismatch");
}

#[test]
fn psnr_decreases_with_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_img((3, 16, 16), &mut rng);
    let mut prev = f64::INFINITY;
    for amp in [0.01, 0.05, 0.2] {
        let noisy = Array3::from_shape_fn(a.dim(), |ix| {
            (a[ix] + rng.random_range(-amp..amp)).clamp(0.0, 1.0)
        });
        let p = psnr(&a, &noisy).unwrap();
        assert!(p < prev, "monotone in noise amplitude");
        prev = p;
    }
}

#[test]
fn ssim_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_img((3, 16, 16), &mut rng);
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12, "self-similarity");
    let b = rand_img((3, 16, 16), &mut rng);
    let s1 = ssim(&a, &b).unwrap();
    let s2 = ssim(&b, &a).unwrap();
    assert!((s1 - s2).abs() < 1e-12, "symmetric");
    assert!(s1.abs() <= 1.0);

    // Constant images: closed form (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
    let ca = Array3::<f64>::from_elem((3, 16, 16), 0.2);
    let cb = Array3::<f64>::from_elem((3, 16, 16), 0.8);
    let want = (2.0 * 0.2 * 0.8 + SSIM_C1) / (0.2f64.powi(2) + 0.8f64.powi(2) + SSIM_C1);
    let got = ssim(&ca, &cb).unwrap();
    assert!((got - want).abs() < 1e-6, "constant-image closed form: {got} vs {want}");

    // Smaller than the window: rejected.
    let tiny = rand_img((3, 8, 8), &mut rng);
    assert!(ssim(&tiny, &tiny).is_err());
    // A smaller window makes 8x8 evaluable.
    assert!((ssim_with_window(&tiny, &tiny, 7, 1.5).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_matches_scalar_loop_oracle() {
    // Independent implementation: direct per-window statistics.
    fn oracle(a: &Array3<f64>, b: &Array3<f64>, win: usize, sigma: f64) -> f64 {
        let (c, h, w) = a.dim();
        let half = (win - 1) as f64 / 2.0;
        let mut kernel = vec![0.0; win];
        let mut ks = 0.0;
        for (i, k) in kernel.iter_mut().enumerate() {
            *k = (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp();
            ks += *k;
        }
        for k in &mut kernel {
            *k /= ks;
        }
        let c1 = 0.01f64.powi(2);
        let c2 = 0.03f64.powi(2);
        let mut per_channel = 0.0;
        for ch in 0..c {
            let mut acc = 0.0;
            let mut n = 0;
            for y0 in 0..=(h - win) {
                for x0 in 0..=(w - win) {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for dy in 0..win {
                        for dx in 0..win {
                            let wgt = kernel[dy] * kernel[dx];
                            ma += wgt * a[[ch, y0 + dy, x0 + dx]];
                            mb += wgt * b[[ch, y0 + dy, x0 + dx]];
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for dy in 0..win {
                        for dx in 0..win {
                            let wgt = kernel[dy] * kernel[dx];
                            let da = a[[ch, y0 + dy, x0 + dx]];
                            let db = b[[ch, y0 + dy, x0 + dx]];
                            va += wgt * da * da;
                            vb += wgt * db * db;
                            cov += wgt * da * db;
                        }
                    }
                    va -= ma * ma;
                    vb -= mb * mb;
                    cov -= ma * mb;
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    n += 1;
                }
            }
            per_channel += acc / n as f64;
        }
        per_channel / c as f64
    }

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Default window on 16x16, small window on 8x8.
    let a = rand_img((3, 16, 16), &mut rng);
    let b = rand_img((3, 16, 16), &mut rng);
    let got = ssim(&a, &b).unwrap();
    let want = oracle(&a, &b, 11, 1.5);
    assert!((got - want).abs() < 1e-8, "{got} vs {want}");

    let a8 = rand_img((1, 8, 8), &mut rng);
    let b8 = rand_img((1, 8, 8), &mut rng);
    let got = ssim_with_window(&a8, &b8, 7, 1.5).unwrap();
    let want = oracle(&a8, &b8, 7, 1.5);
    assert!((got - want).abs() < 1e-8);
}

#[test]
fn bicubic_shapes_and_reproduces_constants() {
    let c = Array3::<f64>::from_elem((3, 16, 16), 0.42);
    let up = bicubic_upsample(&c, 8);
    assert_eq!(up.dim(), (3, 128, 128));
    for &v in up.iter() {
        assert!((v - 0.42).abs() < 1e-12);
    }
}

#[test]
fn evaluate_identity_stub_and_aggregates() {
    let mut ds = Dataset::<f32>::default();
    for i in 0..6 {
        let (hr, lm) = toy_face::<f32>(200 + i);
        ds.ids.push(format!("{i:03}"));
        ds.pairs.push(vivid_core::datapipe::FacePair {
            lr: block_downsample(&hr, 8),
            hr,
            landmarks: lm,
            pose_tag: if i % 2 == 0 { 15.0 } else { -30.0 },
        });
    }
    let model = ModelState::<f32>::init(1, 7, CropSpec::default());
    let report = evaluate(&EvalModel::IdentityStub(&model), &ds);
    assert_eq!(report.per_image.len(), 6, "row count equals dataset size");
    for row in &report.per_image {
        assert_eq!(row.ssim.unwrap(), 1.0, "stub output equals ground truth");
        assert!(row.psnr_db.unwrap().is_infinite());
        assert_eq!(row.id_dist.unwrap(), 0.0);
    }
    let agg = &report.aggregate;
    assert_eq!(agg.n_psnr_inf, 6);
    assert!(agg.mean_psnr_db.is_none(), "all-infinite rows leave no finite mean");
    assert_eq!(agg.mean_ssim.unwrap(), 1.0);
    assert_eq!(agg.per_pose.len(), 2, "grouped by pose tag");

    // Aggregate means equal recomputed means of the rows.
    let recomputed = aggregate_rows(&report.per_image);
    assert_eq!(recomputed.mean_ssim, agg.mean_ssim);
    assert_eq!(recomputed.per_pose.len(), agg.per_pose.len());

    // Real model: rows are finite, deterministic.
    let r1 = evaluate(&EvalModel::Model(&model), &ds);
    let r2 = evaluate(&EvalModel::Model(&model), &ds);
    for (a, b) in r1.per_image.iter().zip(r2.per_image.iter()) {
        assert_eq!(a.psnr_db, b.psnr_db);
        assert_eq!(a.ssim, b.ssim);
    }
    assert!(r1.aggregate.mean_psnr_db.unwrap().is_finite());

    // CSV serialization of infinities.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    report.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().next().unwrap().starts_with("id,pose_tag,psnr_db,ssim,id_dist"));
    assert!(text.contains(",inf,"), "infinite PSNR serialized as inf");
    report.write_aggregate_json(&dir.path().join("agg.json")).unwrap();
}

#[test]
fn evaluate_empty_dataset_is_empty_report() {
    let ds = Dataset::<f32>::default();
    let model = ModelState::<f32>::init(2, 7, CropSpec::default());
    let report = evaluate(&EvalModel::Model(&model), &ds);
    assert!(report.per_image.is_empty());
    assert!(report.aggregate.mean_ssim.is_none());
}
