use std::time::Instant;
use rand_chacha::rand_core::SeedableRng;
use vivid_core::datapipe::{build_component_set, synth_pair, Dataset, DegradationConfig};
use vivid_core::eval::{bicubic_upsample, psnr};
use vivid_core::face::CropSpec;
use vivid_core::model::infer_one;
use vivid_core::toyface::toy_face;
use vivid_core::trainer::{run_stage, TrainConfig};

fn main() {
    let t0 = Instant::now();
    let deg = DegradationConfig { max_rotation: 35.0, max_shift: 0.10, max_shear: 0.10, ..Default::default() };
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
    let mut ds = Dataset::<f32>::default();
    for i in 0..64 {
        let (hr, lm) = toy_face::<f32>(7000 + i);
        ds.ids.push(format!("{i}"));
        ds.pairs.push(synth_pair(&hr, &lm, &deg, &mut rng).unwrap());
    }
    let comps = build_component_set(&ds.pairs, &CropSpec::default()).0;
    let base = TrainConfig { seed: 5, ..TrainConfig::default() };

    let (ck1, rep1) = run_stage(TrainConfig { stage: 1, steps: 200, batch_size: 4, ..base.clone() }, &ds, &comps, None, None).unwrap();
    let first = rep1.rows.first().unwrap().l_mse_c.unwrap();
    let last = rep1.rows.last().unwrap().l_mse_c.unwrap();
    println!("stage1: mse {first:.5} -> {last:.5} ratio {:.3} ({:.0}s)", last / first, t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let (ck12, _) = run_stage(TrainConfig { stage: 2, steps: 100, batch_size: 4, ..base.clone() }, &ds, &comps, Some(ck1), None).unwrap();
    println!("stage2 done ({:.0}s)", t1.elapsed().as_secs_f64());

    let t2 = Instant::now();
    let (ck3, rep3) = run_stage(TrainConfig { stage: 3, steps: 500, batch_size: 2, ..base.clone() }, &ds, &comps, Some(ck12), None).unwrap();
    println!("stage3: mse_f {:.5} -> {:.5} ({:.0}s)", rep3.rows.first().unwrap().l_mse_f.unwrap(), rep3.rows.last().unwrap().l_mse_f.unwrap(), t2.elapsed().as_secs_f64());

    let mut psnr_fine = 0.0;
    let mut psnr_bi = 0.0;
    for pair in &ds.pairs {
        let out = infer_one(&ck3.model, &pair.lr, Some(&pair.landmarks)).unwrap();
        psnr_fine += psnr(&out.fine_hr, &pair.hr).unwrap();
        psnr_bi += psnr(&bicubic_upsample(&pair.lr, 8), &pair.hr).unwrap();
    }
    psnr_fine /= 64.0;
    psnr_bi /= 64.0;
    println!("fine PSNR {psnr_fine:.3} dB vs bicubic {psnr_bi:.3} dB (margin {:.3}); total {:.0}s", psnr_fine - psnr_bi, t0.elapsed().as_secs_f64());
}
