//! Trainer behaviour: determinism, stage and step isolation, checkpoint
//! round-trips, prerequisites, and report structure.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use vivid_core::datapipe::{build_component_set, synth_pair, ComponentSet, Dataset, DegradationConfig};
use vivid_core::face::CropSpec;
use vivid_core::nets::ParamSet;
use vivid_core::toyface::toy_face;
use vivid_core::trainer::{
    load_checkpoint, run_stage, save_checkpoint, Checkpoint, TrainConfig, TrainLoop, REPORT_COLUMNS,
};

type F = f32;

fn toy_dataset(n: usize, seed: u64) -> Dataset<F> {
    let cfg = DegradationConfig {
        max_rotation: 10.0,
        max_shift: 0.03,
        max_shear: 0.03,
        ..DegradationConfig::default()
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut ds = Dataset::default();
    for i in 0..n {
        let (hr, lm) = toy_face::<F>(seed.wrapping_add(1000 + i as u64));
        let pair = synth_pair(&hr, &lm, &cfg, &mut rng).unwrap();
        ds.ids.push(format!("{i:04}"));
        ds.pairs.push(pair);
    }
    ds
}

fn comps_for(ds: &Dataset<F>) -> ComponentSet<F> {
    build_component_set(&ds.pairs, &CropSpec::default()).0
}

fn base_cfg(stage: u8, steps: u64) -> TrainConfig {
    TrainConfig {
        stage,
        steps,
        batch_size: 2,
        seed: 7,
        ..TrainConfig::default()
    }
}

fn params_of(net: &dyn ParamSet<F>) -> Vec<(String, ndarray::ArrayD<F>)> {
    let mut out = Vec::new();
    net.visit(&mut |name, a| out.push((name, a.clone())));
    out
}

fn assert_params_equal(a: &[(String, ndarray::ArrayD<F>)], b: &[(String, ndarray::ArrayD<F>)], what: &str) {
    assert_eq!(a.len(), b.len());
    for ((na, pa), (nb, pb)) in a.iter().zip(b.iter()) {
        assert_eq!(na, nb);
        assert_eq!(pa, pb, "{what}: parameter {na} changed");
    }
}

fn assert_params_differ(a: &[(String, ndarray::ArrayD<F>)], b: &[(String, ndarray::ArrayD<F>)], what: &str) {
    let any = a
        .iter()
        .zip(b.iter())
        .any(|((_, pa), (_, pb))| pa != pb);
    assert!(any, "{what}: expected at least one parameter to change");
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ds = toy_dataset(4, 1);
    let comps = comps_for(&ds);
    let cfg = base_cfg(1, 2);
    let (ck, _) = run_stage(cfg, &ds, &comps, None, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&ck, &path).unwrap();
    let loaded: Checkpoint<F> = load_checkpoint(&path).unwrap();

    assert_eq!(loaded.step, ck.step);
    assert_eq!(loaded.stages_done, ck.stages_done);
    assert_eq!(loaded.config_hash, ck.config_hash);
    assert_params_equal(&params_of(&ck.model.coarse), &params_of(&loaded.model.coarse), "coarse");
    assert_params_equal(&params_of(&ck.model.touchup), &params_of(&loaded.model.touchup), "touchup");
    assert_params_equal(&params_of(&ck.model.fine), &params_of(&loaded.model.fine), "fine");
    assert_params_equal(
        &params_of(&ck.model.critic_coarse),
        &params_of(&loaded.model.critic_coarse),
        "critic_coarse",
    );
    assert_params_equal(
        &params_of(&ck.model.embedder),
        &params_of(&loaded.model.embedder),
        "embedder",
    );
    // Optimizer state round-trips too.
    let a = &ck.optim["coarse"];
    let b = &loaded.optim["coarse"];
    assert_eq!(a.t, b.t);
    assert_eq!(a.lr, b.lr);
    for (x, y) in a.m.iter().zip(b.m.iter()) {
        assert_eq!(x, y);
    }
    assert_eq!(ck.model.mean_landmarks, loaded.model.mean_landmarks);
}

#[test]
fn corrupt_and_mismatched_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"NOTACKPT").unwrap();
    assert!(load_checkpoint::<F>(&path).is_err());

    // dtype mismatch: f32 checkpoint loaded as f64.
    let ds = toy_dataset(2, 2);
    let comps = comps_for(&ds);
    let (ck, _) = run_stage(base_cfg(1, 1), &ds, &comps, None, None).unwrap();
    let p2 = dir.path().join("f32.ckpt");
    save_checkpoint(&ck, &p2).unwrap();
    let res = load_checkpoint::<f64>(&p2);
    assert!(res.is_err());
    let msg = res.err().unwrap().to_string();
    assert!(msg.contains("dtype"), "useful diagnostics: {msg}");
}

#[test]
fn stage3_prerequisites_enforced() {
    let ds = toy_dataset(4, 3);
    let comps = comps_for(&ds);

    // No init at all.
    let err = run_stage(base_cfg(3, 1), &ds, &comps, None, None).unwrap_err();
    assert!(err.to_string().contains("stage"), "{err}");

    // Stage-2-only lineage (skipped stage 1) fails the prerequisite check.
    let (ck2, _) = run_stage(base_cfg(2, 1), &Dataset::default(), &comps, None, None).unwrap();
    assert!(ck2.has_stage(2) && !ck2.has_stage(1));
    let err = run_stage(base_cfg(3, 1), &ds, &comps, Some(ck2), None).unwrap_err();
    assert!(err.to_string().contains("stage-1"), "{err}");

    // Proper lineage: stage 1 then stage 2 then stage 3.
    let (ck1, _) = run_stage(base_cfg(1, 1), &ds, &comps, None, None).unwrap();
    assert!(ck1.has_stage(1));
    let (ck12, _) = run_stage(base_cfg(2, 1), &ds, &comps, Some(ck1), None).unwrap();
    assert!(ck12.has_stage(1) && ck12.has_stage(2));
    let (ck3, rep) = run_stage(base_cfg(3, 1), &ds, &comps, Some(ck12), None).unwrap();
    assert!(ck3.has_stage(3));
    assert_eq!(rep.rows.len(), 1);
}

#[test]
fn training_is_deterministic_across_runs() {
    let ds = toy_dataset(6, 4);
    let comps = comps_for(&ds);
    let (_, rep1) = run_stage(base_cfg(1, 2), &ds, &comps, None, None).unwrap();
    let (_, rep2) = run_stage(base_cfg(1, 2), &ds, &comps, None, None).unwrap();
    for (a, b) in rep1.rows.iter().zip(rep2.rows.iter()) {
        for (va, vb) in a.values().iter().zip(b.values().iter()) {
            match (va, vb) {
                (Some(x), Some(y)) => {
                    assert!((x - y).abs() < 1e-7, "step {}: {x} vs {y}", a.step)
                }
                (None, None) => {}
                _ => panic!("presence mismatch at step {}", a.step),
            }
        }
    }
}

#[test]
fn stage1_step_leaves_other_nets_bitwise_unchanged() {
    let ds = toy_dataset(4, 5);
    let comps = comps_for(&ds);
    let cfg = base_cfg(1, 1);
    let init = vivid_core::model::ModelState::<F>::init(cfg.seed, cfg.embedder_seed, CropSpec::default());
    let before_touchup = params_of(&init.touchup);
    let before_fine = params_of(&init.fine);
    let before_critic_fine = params_of(&init.critic_fine);
    let before_coarse = params_of(&init.coarse);

    let (ck, _) = run_stage(cfg, &ds, &comps, Some(Checkpoint::fresh(init)), None).unwrap();
    assert_params_equal(&before_touchup, &params_of(&ck.model.touchup), "touchup after stage 1");
    assert_params_equal(&before_fine, &params_of(&ck.model.fine), "fine after stage 1");
    assert_params_equal(
        &before_critic_fine,
        &params_of(&ck.model.critic_fine),
        "critic_fine after stage 1",
    );
    assert_params_differ(&before_coarse, &params_of(&ck.model.coarse), "coarse trains in stage 1");
}

#[test]
fn stage2_step_touches_only_touchup() {
    let ds = toy_dataset(4, 6);
    let comps = comps_for(&ds);
    let (ck1, _) = run_stage(base_cfg(1, 1), &ds, &comps, None, None).unwrap();
    let before_coarse = params_of(&ck1.model.coarse);
    let before_fine = params_of(&ck1.model.fine);
    let before_cc = params_of(&ck1.model.critic_coarse);
    let before_touchup = params_of(&ck1.model.touchup);
    let (ck2, rep) = run_stage(base_cfg(2, 1), &ds, &comps, Some(ck1), None).unwrap();
    assert_params_equal(&before_coarse, &params_of(&ck2.model.coarse), "coarse after stage 2");
    assert_params_equal(&before_fine, &params_of(&ck2.model.fine), "fine after stage 2");
    assert_params_equal(&before_cc, &params_of(&ck2.model.critic_coarse), "critic after stage 2");
    assert_params_differ(&before_touchup, &params_of(&ck2.model.touchup), "touchup trains");
    assert!(rep.rows[0].l_t.is_some());
    assert!(rep.rows[0].l_mse_c.is_none());
}

#[test]
fn critic_and_generator_steps_do_not_cross_update() {
    let ds = toy_dataset(4, 7);
    let comps = comps_for(&ds);
    let cfg = base_cfg(1, 0);
    let mut lp = TrainLoop::new(cfg, &ds, &comps, None).unwrap();
    let batch = lp.next_batch();

    let gen_before = params_of(&lp.model.coarse);
    let critic_before = params_of(&lp.model.critic_coarse);
    lp.critic_step(&batch).unwrap();
    assert_params_equal(&gen_before, &params_of(&lp.model.coarse), "generator after critic step");
    assert_params_differ(&critic_before, &params_of(&lp.model.critic_coarse), "critic updates");

    let critic_mid = params_of(&lp.model.critic_coarse);
    lp.generator_step(&batch).unwrap();
    assert_params_equal(&critic_mid, &params_of(&lp.model.critic_coarse), "critic after generator step");
    assert_params_differ(&gen_before, &params_of(&lp.model.coarse), "generator updates");
}

#[test]
fn stage3_logs_composite_total_matching_formula() {
    let ds = toy_dataset(4, 8);
    let comps = comps_for(&ds);
    let (ck1, _) = run_stage(base_cfg(1, 1), &ds, &comps, None, None).unwrap();
    let (ck12, _) = run_stage(base_cfg(2, 1), &ds, &comps, Some(ck1), None).unwrap();
    let (_, rep) = run_stage(base_cfg(3, 2), &ds, &comps, Some(ck12), None).unwrap();
    let w = vivid_core::losses::LossWeights::default();
    for row in &rep.rows {
        let lc = vivid_core::losses::compose_lc_value(
            row.l_mse_c.unwrap(),
            row.l_sys.unwrap(),
            row.l_id_c.unwrap(),
            row.l_adv_c.unwrap(),
            &w,
        );
        let lf = vivid_core::losses::compose_lf_value(
            row.l_mse_f.unwrap(),
            row.l_id_f.unwrap(),
            row.l_h.unwrap(),
            row.l_adv_f.unwrap(),
            &w,
        );
        let lg = vivid_core::losses::compose_lg_value(lc, row.l_t.unwrap(), lf);
        assert!(
            (row.l_g.unwrap() - lg).abs() < 1e-6,
            "step {}: logged {} vs recomputed {lg}",
            row.step,
            row.l_g.unwrap()
        );
        assert!(row.l_d_coarse.is_some() && row.l_d_fine.is_some());
    }
}

#[test]
fn resume_continues_step_numbering_and_warns_on_config_change() {
    let ds = toy_dataset(4, 9);
    let comps = comps_for(&ds);
    let (ck, rep) = run_stage(base_cfg(1, 2), &ds, &comps, None, None).unwrap();
    assert_eq!(rep.rows.last().unwrap().step, 1);
    assert_eq!(ck.step, 2);
    let (ck2, rep2) = run_stage(base_cfg(1, 2), &ds, &comps, Some(ck), None).unwrap();
    assert_eq!(rep2.rows.first().unwrap().step, 2, "resumes step counter");
    assert_eq!(ck2.step, 4);
}

#[test]
fn report_csv_has_13_columns_and_empty_cells_for_absent_terms() {
    let ds = toy_dataset(4, 10);
    let comps = comps_for(&ds);
    let mut cfg = base_cfg(1, 1);
    cfg.use_id_loss = false;
    let (_, rep) = run_stage(cfg, &ds, &comps, None, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    rep.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert_eq!(header.split(',').count(), 13);
    assert_eq!(header, REPORT_COLUMNS.join(","));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 13);
    let idx = REPORT_COLUMNS.iter().position(|c| *c == "L_id_c").unwrap();
    assert!(row[idx].is_empty(), "disabled loss logs an empty cell");
    let mse_idx = REPORT_COLUMNS.iter().position(|c| *c == "L_mse_c").unwrap();
    assert!(!row[mse_idx].is_empty());
}

#[test]
fn non_finite_loss_detection_names_term() {
    let log = vivid_core::trainer::StepLog {
        step: 3,
        l_mse_c: Some(0.5),
        l_t: Some(f64::NAN),
        ..Default::default()
    };
    assert_eq!(log.non_finite_term(), Some("L_T"));
}
