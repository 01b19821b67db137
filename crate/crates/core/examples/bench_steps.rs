use std::time::Instant;
use rand_chacha::rand_core::SeedableRng;
use vivid_core::datapipe::{build_component_set, synth_pair, Dataset, DegradationConfig};
use vivid_core::face::CropSpec;
use vivid_core::toyface::toy_face;
use vivid_core::trainer::{run_stage, TrainConfig};

fn main() {
    let cfg_d = DegradationConfig { max_rotation: 10.0, max_shift: 0.03, max_shear: 0.03, ..Default::default() };
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
    let mut ds = Dataset::<f32>::default();
    for i in 0..16 {
        let (hr, lm) = toy_face::<f32>(i);
        ds.ids.push(format!("{i}"));
        ds.pairs.push(synth_pair(&hr, &lm, &cfg_d, &mut rng).unwrap());
    }
    let comps = build_component_set(&ds.pairs, &CropSpec::default()).0;
    let base = TrainConfig { batch_size: 4, seed: 3, ..TrainConfig::default() };

    let t = Instant::now();
    let (ck1, _) = run_stage(TrainConfig { stage: 1, steps: 10, ..base.clone() }, &ds, &comps, None, None).unwrap();
    println!("stage1: {:.3} s/step", t.elapsed().as_secs_f64() / 10.0);

    let t = Instant::now();
    let (ck12, _) = run_stage(TrainConfig { stage: 2, steps: 10, ..base.clone() }, &ds, &comps, Some(ck1), None).unwrap();
    println!("stage2: {:.3} s/step", t.elapsed().as_secs_f64() / 10.0);

    let t = Instant::now();
    let _ = run_stage(TrainConfig { stage: 3, steps: 10, ..base.clone() }, &ds, &comps, Some(ck12), None).unwrap();
    println!("stage3: {:.3} s/step", t.elapsed().as_secs_f64() / 10.0);
}
