//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p handfusion-core --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rand::Rng;
use rand_distr::StandardNormal;

use handfusion_core::artifacts::{config_hash, load_tensor, save_tensor, Tensor};
use handfusion_core::dataset::{
    make_toy_dataset, qa_report, render_qa_table, ConstantJointEmbedder, Dataset,
    HashJointEmbedder, JointEmbedderAdapter, Split, TemplateEnricher, EnricherAdapter,
};
use handfusion_core::diffusion::{
    self, ddim_sample, grad_check, load_checkpoint, make_schedule, save_checkpoint,
    DiffusionBackend, ScheduleConfig, ScheduleKind, ToyBackend, ToyBackendConfig,
};
use handfusion_core::embedding::EmbeddingMatrix;
use handfusion_core::encoder::{FixtureTextEncoder, TextEncoderAdapter};
use handfusion_core::error::{DatasetError, TrainError};
use handfusion_core::eval::{
    fid, fid_h, kid_detailed, DownsampleExtractor, FeatureStats, EvalOptions,
};
use handfusion_core::fusion::{
    build_double_fused, concat_project, linear_fuse, FusionConfig, GestureBundle,
    ProjectionWeights,
};
use handfusion_core::gesture::{GlyphOracleRecognizer, MeanGestureFeature};
use handfusion_core::img::{load_png, Image};
use handfusion_core::rng::{derive_seed, rng_for};
use handfusion_core::training::{
    self, ablate_lambda, evaluate_run, generate_with_backend, optimize_embedding, run_pipeline,
    PipelineConfig, RunEvalSetup, Stage2Settings, StageStatus,
};

fn verdict(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {detail}");
    assert!(pass, "{name}: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion: fusion algebra (endpoints, fixed point, linearity, identity
// projection). Runtime well under 10 s.
// ---------------------------------------------------------------------------
#[test]
fn criterion_fusion_algebra() {
    let encoder = FixtureTextEncoder::default();
    let e_t = encoder.encode("fusion algebra base").unwrap();
    let projection = ProjectionWeights::seeded(32, 16, 40);
    let gesture: Vec<f32> = (0..16).map(|i| 0.05 * i as f32).collect();
    let e_f = concat_project(&e_t, &gesture, &projection).unwrap();

    let mut failures: Vec<String> = Vec::new();

    // Endpoints are exact.
    let at_one = linear_fuse(&e_t, &e_f, 1.0).unwrap();
    if at_one.matrix().tensor().data() != e_t.matrix().tensor().data() {
        failures.push("coeff=1 endpoint not exact".to_string());
    }
    let at_zero = linear_fuse(&e_t, &e_f, 0.0).unwrap();
    if at_zero.matrix().tensor().data() != e_f.matrix().tensor().data() {
        failures.push("coeff=0 endpoint not exact".to_string());
    }

    // Fixed point at several coefficients.
    let same = handfusion_core::embedding::FusedEmbedding::new(e_t.matrix().clone());
    for coeff in [0.0f32, 0.25, 0.5, 0.7, 0.9, 1.0] {
        let fused = linear_fuse(&e_t, &same, coeff).unwrap();
        if fused.matrix().tensor().data() != e_t.matrix().tensor().data() {
            failures.push(format!("fixed point violated at coeff {coeff}"));
        }
    }

    // Linearity in the coefficient to 1e-6 absolute.
    let (a, b) = (0.85f32, 0.15f32);
    let out_a = linear_fuse(&e_t, &e_f, a).unwrap();
    let out_b = linear_fuse(&e_t, &e_f, b).unwrap();
    let scale = f64::from(a) - f64::from(b);
    let mut max_dev = 0.0f64;
    for i in 0..e_t.matrix().tensor().len() {
        let lhs = f64::from(out_a.matrix().tensor().data()[i])
            - f64::from(out_b.matrix().tensor().data()[i]);
        let rhs = scale
            * (f64::from(e_t.matrix().tensor().data()[i])
                - f64::from(e_f.matrix().tensor().data()[i]));
        max_dev = max_dev.max((lhs - rhs).abs());
    }
    if max_dev > 1e-6 {
        failures.push(format!("linearity deviation {max_dev:.2e} > 1e-6"));
    }

    // Identity projection fixture reproduces the text embedding exactly.
    let d_text = 32;
    let d_gesture = 16;
    let mut identity = vec![0.0f32; (d_text + d_gesture) * d_text];
    for i in 0..d_text {
        identity[i * d_text + i] = 1.0;
    }
    let identity_proj = ProjectionWeights::from_tensor(
        Tensor::new(vec![d_text + d_gesture, d_text], identity).unwrap(),
        0,
    )
    .unwrap();
    let fused = concat_project(&e_t, &gesture, &identity_proj).unwrap();
    if fused.matrix().tensor().data() != e_t.matrix().tensor().data() {
        failures.push("identity projection fixture not exact".to_string());
    }

    verdict(
        "fusion-algebra",
        failures.is_empty(),
        &if failures.is_empty() {
            format!("endpoints exact, fixed point exact, linearity dev {max_dev:.2e} <= 1e-6")
        } else {
            failures.join("; ")
        },
    );
}

// ---------------------------------------------------------------------------
// Criterion: freeze contracts on a 20-pair toy run, plus violation aborts.
// ---------------------------------------------------------------------------
#[test]
fn criterion_freeze_contracts() {
    let root = tempfile::tempdir().unwrap();
    let data_dir = root.path().join("data");
    make_toy_dataset(&data_dir, 40, &["ok".to_string()], 16, 31).unwrap();
    let mut config = PipelineConfig::new(&data_dir, "ok", 17);
    config.stage2 = training::Stage2Section {
        epochs: 3,
        lr: 1e-3,
        samples_per_epoch: 4,
    };
    config.stage3 = training::Stage3Section {
        epochs: 3,
        lr: 1e-3,
        batch_size: 4,
    };
    let outcome = run_pipeline(&config, &root.path().join("runs")).unwrap();
    let manifest = &outcome.manifest;

    let stage2 = manifest.stage2.as_ref().unwrap();
    let stage3 = manifest.stage3.as_ref().unwrap();
    let backend_frozen = stage2.backend_hash_start == stage2.backend_hash_end;
    let embeddings_frozen = stage3.embedding_hashes_start == stage3.embedding_hashes_end
        && stage3.embedding_hashes_start.len() == 20;
    let projection_frozen =
        stage3.projection_hash_end == manifest.stage1.as_ref().unwrap().projection_hash;

    // A backend that mutates its parameters during prediction must abort
    // Stage II with a freeze violation.
    struct MutatingBackend {
        calls: Mutex<u64>,
    }
    impl DiffusionBackend for MutatingBackend {
        fn kind(&self) -> &'static str {
            "mutating-fixture"
        }
        fn image_shape(&self) -> (usize, usize, usize) {
            (1, 16, 16)
        }
        fn d_text(&self) -> usize {
            32
        }
        fn n_params(&self) -> usize {
            1
        }
        fn predict_f64(
            &self,
            z_t: &[f64],
            _t: diffusion::TimeStep,
            _e: &[f64],
        ) -> Result<Vec<f64>, handfusion_core::error::DiffusionError> {
            *self.calls.lock().unwrap() += 1;
            Ok(z_t.to_vec())
        }
        fn vjp_with(
            &self,
            z_t: &[f64],
            t: diffusion::TimeStep,
            e: &[f64],
            make_upstream: &mut dyn FnMut(&[f64]) -> Vec<f64>,
        ) -> Result<diffusion::BackendVjp, handfusion_core::error::DiffusionError> {
            let prediction = self.predict_f64(z_t, t, e)?;
            let _ = make_upstream(&prediction);
            Ok(diffusion::BackendVjp {
                prediction,
                param_grads: vec![0.0],
                econd_grads: vec![0.0; e.len()],
            })
        }
        fn parameters(&self) -> Vec<f32> {
            vec![*self.calls.lock().unwrap() as f32]
        }
        fn set_parameters(
            &mut self,
            _flat: &[f32],
        ) -> Result<(), handfusion_core::error::DiffusionError> {
            Ok(())
        }
        fn named_parameters(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
            Vec::new()
        }
        fn train_mode(&mut self, _on: bool) {}
        fn is_trainable(&self) -> bool {
            false
        }
    }

    let dataset = Dataset::load(&data_dir).unwrap();
    let pairs =
        training::load_training_pairs(&dataset, "ok", None, 17).unwrap();
    let bundle = GestureBundle::load(&outcome.dirs.bundle_dir()).unwrap();
    let encoder = FixtureTextEncoder::default();
    let schedule = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let mutating = MutatingBackend {
        calls: Mutex::new(0),
    };
    let violation = optimize_embedding(
        &pairs[0],
        &bundle,
        &mutating,
        &encoder,
        &schedule,
        &Stage2Settings {
            epochs: 1,
            lr: 1e-3,
            samples_per_epoch: 2,
            lambda: 0.7,
            grad_clip_norm: Some(1.0),
            seed: 0,
        },
    );
    let aborts = matches!(violation, Err(TrainError::FreezeViolation { .. }));

    let pass = backend_frozen && embeddings_frozen && projection_frozen && aborts;
    verdict(
        "freeze-contracts",
        pass,
        &format!(
            "backend frozen through stage2: {backend_frozen}; 20 embedding hashes + projection \
             frozen through stage3: {}; violation aborts: {aborts}",
            embeddings_frozen && projection_frozen
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion: FID oracle against the analytic Frechet distance.
// ---------------------------------------------------------------------------
#[test]
fn criterion_fid_oracle() {
    let d = 8;
    let n = 5000;
    // Known diagonal Gaussians: mu2 = 1.5 per dim, var2 = 2.25.
    // Analytic distance: 8 * 1.5^2 + sum(1 + 2.25 - 2 sqrt(2.25)) = 18 + 2.
    let analytic = 20.0;
    let mut rng = rng_for(501, &["fid-oracle"]);
    let mut sample = |mean: f64, std: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        mean + std * z
                    })
                    .collect()
            })
            .collect()
    };
    let real = sample(0.0, 1.0);
    let generated = sample(1.5, 1.5);
    let stats_real = FeatureStats::from_features(&real).unwrap();
    let stats_gen = FeatureStats::from_features(&generated).unwrap();

    let estimate = fid(&stats_real, &stats_gen).unwrap();
    let rel = (estimate - analytic).abs() / analytic;
    let self_distance = fid(&stats_real, &stats_real).unwrap();
    let symmetry = (fid(&stats_real, &stats_gen).unwrap() - fid(&stats_gen, &stats_real).unwrap())
        .abs();

    let pass = rel <= 0.02 && self_distance <= 1e-6 && symmetry <= 1e-6;
    verdict(
        "fid-oracle",
        pass,
        &format!(
            "estimate {estimate:.4} vs analytic {analytic:.4} (rel {:.3}%); fid(A,A) = {self_distance:.2e}; |fid(A,B)-fid(B,A)| = {symmetry:.2e}",
            rel * 100.0
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion: KID oracle (unbiasedness and hand enumeration).
// ---------------------------------------------------------------------------
#[test]
fn criterion_kid_oracle() {
    // Same-distribution check: |KID| within 3 standard errors of zero.
    let d = 8;
    let mut rng = rng_for(502, &["kid-oracle"]);
    let mut draw = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect()
    };
    let real = draw(2000);
    let generated = draw(2000);
    let outcome = kid_detailed(&real, &generated, 100, 100, 77).unwrap();
    let se = outcome.std_error();
    let unbiased = outcome.mean.abs() <= 3.0 * se;

    // d = 1 hand-enumerated estimator, subsets of size 2.
    let xs = vec![vec![0.5], vec![-1.0]];
    let ys = vec![vec![2.0], vec![0.25]];
    let k = |a: f64, b: f64| (a * b + 1.0f64).powi(3);
    let expected = k(0.5, -1.0) + k(2.0, 0.25)
        - 2.0 * (k(0.5, 2.0) + k(0.5, 0.25) + k(-1.0, 2.0) + k(-1.0, 0.25)) / 4.0;
    let hand = handfusion_core::eval::kid(&xs, &ys, 2, 1, 3).unwrap();
    let enumerated = (hand - expected).abs() <= 1e-9;

    let pass = unbiased && enumerated;
    verdict(
        "kid-oracle",
        pass,
        &format!(
            "same-distribution KID {:.3e} within 3 SE ({:.3e}); hand enumeration |{hand:.6} - {expected:.6}| <= 1e-9: {enumerated}",
            outcome.mean,
            3.0 * se
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion: gradient check on the toy backend.
// ---------------------------------------------------------------------------
#[test]
fn criterion_gradient_check() {
    let mut backend = ToyBackend::new(ToyBackendConfig {
        height: 8,
        width: 8,
        channels: 8,
        d_text: 16,
        seed: 33,
    });
    let schedule = make_schedule(50, ScheduleKind::Cosine).unwrap();
    let mut rng = rng_for(503, &["gradcheck-acceptance"]);
    let x: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
    let eps: Vec<f64> = (0..64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let e_cond: Vec<f64> = (0..4 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let report = grad_check(&mut backend, &x, &e_cond, &eps, 23, &schedule, 91).unwrap();
    let pass =
        report.max_rel_error <= 1e-2 && report.n_param_probes >= 20 && report.n_econd_probes >= 20;
    verdict(
        "gradient-check",
        pass,
        &format!(
            "max relative error {:.3e} <= 1e-2 over {} parameter and {} conditioning probes",
            report.max_rel_error, report.n_param_probes, report.n_econd_probes
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion: schedule invariant and DDIM determinism/distinctness.
// ---------------------------------------------------------------------------
#[test]
fn criterion_schedule_and_ddim() {
    let mut worst_vp = 0.0f64;
    for kind in [ScheduleKind::Cosine, ScheduleKind::LinearBeta] {
        for n_steps in [1usize, 10, 100, 1000] {
            let schedule = make_schedule(n_steps, kind).unwrap();
            for t in 0..n_steps {
                let (a, s) = (schedule.alpha(t), schedule.sigma(t));
                worst_vp = worst_vp.max((a * a + s * s - 1.0).abs());
            }
        }
    }
    let vp_ok = worst_vp <= 1e-6;

    let backend = ToyBackend::new(ToyBackendConfig {
        height: 16,
        width: 16,
        channels: 8,
        d_text: 32,
        seed: 21,
    });
    let schedule = make_schedule(100, ScheduleKind::Cosine).unwrap();
    let encoder = FixtureTextEncoder::default();
    let e_cond = encoder.encode("ddim determinism").unwrap().matrix().to_f64();

    let a = ddim_sample(&backend, &e_cond, &schedule, 50, 1234).unwrap();
    let b = ddim_sample(&backend, &e_cond, &schedule, 50, 1234).unwrap();
    let deterministic = a.content_hash() == b.content_hash();

    let mut hashes = std::collections::HashSet::new();
    for seed in 0..100u64 {
        let img = ddim_sample(&backend, &e_cond, &schedule, 20, seed).unwrap();
        hashes.insert(img.content_hash());
    }
    let distinct_ok = hashes.len() >= 99;

    let pass = vp_ok && deterministic && distinct_ok;
    verdict(
        "schedule-and-ddim",
        pass,
        &format!(
            "max |alpha^2+sigma^2-1| = {worst_vp:.2e} <= 1e-6; same-seed bitwise identical: {deterministic}; {}/100 distinct seed hashes (>= 99)",
            hashes.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion: end-to-end directional result on the synthetic glyph dataset
// (500 train pairs, 3 gestures, 16x16): the full pipeline beats or matches
// the plain fine-tune baseline on FID-H in at least 4 of 5 seeded
// repetitions, and the coeff = 1.0 ablation point reproduces the baseline
// metrics exactly.
// ---------------------------------------------------------------------------
const E2E_GESTURES: [&str; 3] = ["ok", "palm", "like"];
const E2E_TRAIN_CAPS: [usize; 3] = [167, 167, 166]; // 500 train pairs total

fn e2e_config(data_dir: &Path, gesture: &str, seed: u64, lambda: f32, s2_epochs: usize, cap: usize) -> PipelineConfig {
    let mut config = PipelineConfig::new(data_dir, gesture, seed);
    config.lambda = lambda;
    config.stage2 = training::Stage2Section {
        epochs: s2_epochs,
        lr: 1e-3,
        samples_per_epoch: 8,
    };
    // Toy-scaled fine-tuning rate: the backend starts from random
    // initialization rather than a pretrained model.
    config.stage3 = training::Stage3Section {
        epochs: 20,
        lr: 1e-3,
        batch_size: 4,
    };
    config.train_size = Some(cap);
    config
}

fn e2e_arm_fid_h(
    data_dir: &Path,
    runs_base: &Path,
    seed: u64,
    lambda: f32,
    s2_epochs: usize,
    n_gen_per_gesture: usize,
) -> f64 {
    let dataset = Dataset::load(data_dir).unwrap();
    let encoder = FixtureTextEncoder::default();
    let mut generated: Vec<Image> = Vec::new();
    let mut real: Vec<Image> = Vec::new();
    for (gesture, cap) in E2E_GESTURES.iter().zip(E2E_TRAIN_CAPS) {
        let config = e2e_config(data_dir, gesture, seed, lambda, s2_epochs, cap);
        let outcome = run_pipeline(&config, runs_base).unwrap();
        let bundle = GestureBundle::load(&outcome.dirs.bundle_dir()).unwrap();
        let (backend, schedule_cfg) =
            load_checkpoint(&outcome.dirs.checkpoints_dir().join("final")).unwrap();
        let schedule = schedule_cfg.build().unwrap();
        let mut test_records = dataset.records_for(gesture, Split::Test);
        test_records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        for record in &test_records {
            real.push(load_png(&dataset.image_path(record)).unwrap());
        }
        for i in 0..n_gen_per_gesture {
            let record = test_records[i % test_records.len()];
            let img_seed = derive_seed(seed, &["infer", &i.to_string()]);
            generated.push(
                generate_with_backend(
                    &record.enriched_caption,
                    &bundle,
                    &backend,
                    &schedule,
                    lambda,
                    img_seed,
                    50,
                    &encoder,
                )
                .unwrap(),
            );
        }
    }
    let detector = GlyphOracleRecognizer::default();
    let extractor = DownsampleExtractor::new(4);
    fid_h(&real, &generated, &detector, &extractor, 16)
        .unwrap()
        .value
}

#[test]
fn criterion_end_to_end_directional() {
    let root = tempfile::tempdir().unwrap();
    let data_dir = root.path().join("data");
    make_toy_dataset(
        &data_dir,
        334,
        &E2E_GESTURES.map(String::from),
        16,
        777,
    )
    .unwrap();

    let mut wins = 0usize;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let pipeline = e2e_arm_fid_h(
            &data_dir,
            &root.path().join(format!("runs_pipeline_{seed}")),
            seed,
            0.7,
            10,
            50,
        );
        let baseline = e2e_arm_fid_h(
            &data_dir,
            &root.path().join(format!("runs_baseline_{seed}")),
            seed,
            1.0,
            0,
            50,
        );
        if pipeline <= baseline {
            wins += 1;
        }
        lines.push(format!(
            "seed {seed}: pipeline {pipeline:.3} vs baseline {baseline:.3}"
        ));
    }

    // The coeff = 1.0 ablation point must reproduce the baseline metrics
    // exactly (same resolved config computed through the sweep machinery in
    // fresh directories).
    let baseline_cfg = e2e_config(&data_dir, "ok", 1, 1.0, 0, 167);
    let setup = RunEvalSetup {
        n_generate: 30,
        eval: EvalOptions {
            patch_size: 16,
            kid_subset_size: 20,
            kid_n_subsets: 20,
            seed: 0,
        },
        extractor_grid: 4,
    };
    let direct = evaluate_run(&baseline_cfg, &root.path().join("runs_eq_direct"), &setup).unwrap();
    let mut sweep_base = baseline_cfg.clone();
    sweep_base.lambda = 0.3; // overridden per sweep point
    let sweep = ablate_lambda(
        &sweep_base,
        &[1.0],
        &root.path().join("runs_eq_sweep"),
        &setup,
    );
    let sweep_report = sweep[0].report.as_ref().expect("sweep point must succeed");
    let exact_match = sweep_report.metrics == direct.metrics;

    let pass = wins >= 4 && exact_match;
    verdict(
        "end-to-end-directional",
        pass,
        &format!(
            "pipeline FID-H <= baseline in {wins}/5 seeded repetitions ({}); lambda=1.0 ablation point reproduces baseline metrics exactly: {exact_match}",
            lines.join("; ")
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion: Stage II descent on 20 seeded pairs and Stage III descent on
// the 500-pair toy set.
// ---------------------------------------------------------------------------
#[test]
fn criterion_training_descent() {
    // Stage II: final-epoch mean loss <= initial-epoch mean loss for >= 90%
    // of 20 pairs at reference settings.
    let root = tempfile::tempdir().unwrap();
    let data_dir = root.path().join("data");
    make_toy_dataset(&data_dir, 40, &["mute".to_string()], 16, 71).unwrap();
    let mut config = PipelineConfig::new(&data_dir, "mute", 29);
    // samples_per_epoch is the exposed knob that defines what an "epoch"
    // means for a single image; 32 samples make the epoch mean a usable
    // estimate of the embedding's loss.
    config.stage2 = training::Stage2Section {
        epochs: 10,
        lr: 1e-3,
        samples_per_epoch: 32,
    };
    config.stage3 = training::Stage3Section {
        epochs: 0,
        lr: 1e-3,
        batch_size: 4,
    };
    let outcome = run_pipeline(&config, &root.path().join("runs_s2")).unwrap();
    let stage2 = outcome.manifest.stage2.as_ref().unwrap();
    assert_eq!(stage2.pairs.len(), 20);
    let descended = stage2
        .pairs
        .iter()
        .filter(|p| p.final_epoch_loss.unwrap() <= p.initial_epoch_loss.unwrap())
        .count();
    let stage2_ok = descended * 10 >= stage2.pairs.len() * 9;

    // Stage III: epoch-20 mean loss < epoch-1 mean loss on 500 pairs.
    let data500 = root.path().join("data500");
    make_toy_dataset(&data500, 1000, &["ok".to_string()], 16, 72).unwrap();
    let mut config = PipelineConfig::new(&data500, "ok", 30);
    config.stage2 = training::Stage2Section {
        epochs: 0,
        lr: 1e-3,
        samples_per_epoch: 8,
    };
    config.stage3 = training::Stage3Section {
        epochs: 20,
        lr: 1e-3,
        batch_size: 4,
    };
    let outcome = run_pipeline(&config, &root.path().join("runs_s3")).unwrap();
    let losses = &outcome.manifest.stage3.as_ref().unwrap().epoch_mean_losses;
    assert_eq!(outcome.manifest.n_train_pairs, 500);
    assert_eq!(losses.len(), 20);
    let stage3_ok = losses[19] < losses[0];

    let pass = stage2_ok && stage3_ok;
    verdict(
        "training-descent",
        pass,
        &format!(
            "stage2 descent in {descended}/20 pairs (>= 18); stage3 epoch-20 loss {:.4} < epoch-1 loss {:.4} on 500 pairs: {stage3_ok}",
            losses[19], losses[0]
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion: dataset pipeline (enrichment coverage, QA fixtures, report
// shape).
// ---------------------------------------------------------------------------
#[test]
fn criterion_dataset_pipeline() {
    let root = tempfile::tempdir().unwrap();
    let data_dir = root.path().join("data");
    let dataset = make_toy_dataset(
        &data_dir,
        20,
        &["phone_call".to_string(), "four".to_string()],
        16,
        55,
    )
    .unwrap();

    // Template enrichment inserts the gesture phrase in 100% of records.
    let enricher = TemplateEnricher;
    let coverage = dataset
        .records
        .iter()
        .filter(|r| {
            let phrase = handfusion_core::dataset::toy::gesture_phrase(&r.gesture_id);
            r.enriched_caption.to_lowercase().contains(&phrase.to_lowercase())
        })
        .count();
    let enrichment_ok = coverage == dataset.records.len();
    let direct = enricher
        .enrich("a woman in an office", "phone call")
        .unwrap();
    let template_ok = direct == "a woman in an office, making a phone call hand gesture";

    // QA fixtures: identity embedder -> 1.0; orthogonal fixture -> 0.0.
    let constant = ConstantJointEmbedder::new(8);
    let consistency =
        handfusion_core::dataset::image_caption_consistency(&dataset, &constant, true).unwrap();
    let identity_ok = (consistency - 1.0).abs() < 1e-12;

    struct OrthogonalEmbedder;
    impl JointEmbedderAdapter for OrthogonalEmbedder {
        fn name(&self) -> &str {
            "orthogonal-fixture"
        }
        fn d_joint(&self) -> usize {
            4
        }
        fn embed_text(&self, _: &str) -> Result<Vec<f64>, DatasetError> {
            Ok(vec![1.0, 0.0, 0.0, 0.0])
        }
        fn embed_image(&self, _: &Image) -> Result<Vec<f64>, DatasetError> {
            Ok(vec![0.0, 1.0, 0.0, 0.0])
        }
    }
    let orthogonal =
        handfusion_core::dataset::image_caption_consistency(&dataset, &OrthogonalEmbedder, true)
            .unwrap();
    let orthogonal_ok = orthogonal == 0.0;

    // Table-shaped report renders with raw and post-processed rows.
    let embedder = HashJointEmbedder::new(16);
    let report = qa_report(&dataset, &embedder, 10_000, 0, "acceptance").unwrap();
    let table = render_qa_table(&report);
    let rows_ok = report.rows.len() == 2
        && report.rows[0].method == "toy-template"
        && report.rows[1].method == "toy-template(post-processed)"
        && table.contains("toy-template(post-processed)")
        && table.contains("Image-Caption Consistency\u{2191}")
        && table.contains("Caption-Caption Similarity\u{2193}");

    let pass = enrichment_ok && template_ok && identity_ok && orthogonal_ok && rows_ok;
    verdict(
        "dataset-pipeline",
        pass,
        &format!(
            "enrichment coverage {coverage}/{}; template exact: {template_ok}; identity embedder consistency {consistency:.3}; orthogonal {orthogonal:.3}; raw+post-processed rows render: {rows_ok}",
            dataset.records.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion: persistence (TSR round-trips, checkpoint hash, artifact reuse).
// ---------------------------------------------------------------------------
#[test]
fn criterion_persistence() {
    // 1,000 random tensors round-trip exactly.
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng_for(504, &["persistence"]);
    let mut roundtrip_failures = 0usize;
    for i in 0..1000 {
        let rank = rng.gen_range(0..4usize);
        let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..5usize)).collect();
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n)
            .map(|_| (rng.gen_range(-1e6..1e6f64) * 1e-3) as f32)
            .collect();
        let tensor = Tensor::new(shape, data).unwrap();
        let path = dir.path().join(format!("t{i}.tsr"));
        save_tensor(&path, &tensor).unwrap();
        let back = load_tensor(&path).unwrap();
        let same = back.shape() == tensor.shape()
            && back
                .data()
                .iter()
                .zip(tensor.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            roundtrip_failures += 1;
        }
    }
    let roundtrip_ok = roundtrip_failures == 0;

    // Checkpoint save/load reproduces the param hash.
    let backend = ToyBackend::new(ToyBackendConfig {
        height: 8,
        width: 8,
        channels: 8,
        d_text: 16,
        seed: 60,
    });
    let ckpt_dir = dir.path().join("ckpt");
    let schedule_cfg = ScheduleConfig {
        kind: ScheduleKind::Cosine,
        n_steps: 50,
    };
    let saved_hash = save_checkpoint(&ckpt_dir, &backend, &schedule_cfg).unwrap();
    let (loaded, _) = load_checkpoint(&ckpt_dir).unwrap();
    let checkpoint_ok = loaded.param_hash() == saved_hash && saved_hash == backend.param_hash();

    // Rerun with the same config reuses Stage I/II artifacts byte-identically.
    let root = tempfile::tempdir().unwrap();
    let data_dir = root.path().join("data");
    make_toy_dataset(&data_dir, 16, &["palm".to_string()], 16, 61).unwrap();
    let mut config = PipelineConfig::new(&data_dir, "palm", 62);
    config.stage2 = training::Stage2Section {
        epochs: 2,
        lr: 1e-3,
        samples_per_epoch: 4,
    };
    config.stage3 = training::Stage3Section {
        epochs: 2,
        lr: 1e-3,
        batch_size: 4,
    };
    let runs = root.path().join("runs");
    let first = run_pipeline(&config, &runs).unwrap();
    let read_artifacts = |dirs: &handfusion_core::artifacts::RunDirs| -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        for sub in ["bundle", "embeddings"] {
            let base = dirs.root().join(sub);
            for entry in std::fs::read_dir(&base).unwrap() {
                let path = entry.unwrap().path();
                let rel = format!("{sub}/{}", path.file_name().unwrap().to_string_lossy());
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
        out
    };
    let before = read_artifacts(&first.dirs);
    let second = run_pipeline(&config, &runs).unwrap();
    let after = read_artifacts(&second.dirs);
    let reused = second.manifest.stage1.as_ref().unwrap().status == StageStatus::Reused
        && second.manifest.stage2.as_ref().unwrap().status == StageStatus::Reused;
    let byte_identical = before == after;

    let pass = roundtrip_ok && checkpoint_ok && reused && byte_identical;
    verdict(
        "persistence",
        pass,
        &format!(
            "1000/1000 tensor round-trips exact: {roundtrip_ok}; checkpoint reproduces param hash: {checkpoint_ok}; stage1/2 artifacts reused byte-identically on rerun: {}",
            reused && byte_identical
        ),
    );
}

// ---------------------------------------------------------------------------
// Supporting check: the double-fused construction used by both training and
// inference is the exact composition of its two component operations.
// ---------------------------------------------------------------------------
#[test]
fn criterion_double_fused_composition() {
    let encoder = FixtureTextEncoder::default();
    let mean = MeanGestureFeature::from_parts(
        "ok",
        Tensor::new(vec![16], (0..16).map(|i| 0.04 * i as f32).collect()).unwrap(),
        3,
    )
    .unwrap();
    let projection = ProjectionWeights::seeded(32, 16, 8);
    let bundle = GestureBundle::new(
        "ok",
        mean.clone(),
        projection.clone(),
        FusionConfig::new(0.7, 0.7).unwrap(),
        8,
    )
    .unwrap();
    let caption = "composition probe";
    let composed = build_double_fused(caption, &bundle, &encoder, 0.5).unwrap();
    let e_t = encoder.encode(caption).unwrap();
    let e_f = concat_project(&e_t, mean.values(), &projection).unwrap();
    let expected = linear_fuse(&e_t, &e_f, 0.5).unwrap();
    let exact = composed.matrix().tensor().data() == expected.matrix().tensor().data();
    verdict(
        "double-fused-composition",
        exact,
        "build_double_fused equals linear_fuse(encode, concat_project(encode, mean, W)) exactly",
    );
}

// Keep the config hash honest for sweep equality: identical resolved configs
// map to identical run directories.
#[test]
fn criterion_config_hash_stability() {
    let root = tempfile::tempdir().unwrap();
    let data_dir = root.path().join("data");
    make_toy_dataset(&data_dir, 8, &["ok".to_string()], 16, 2).unwrap();
    let dataset = Dataset::load(&data_dir).unwrap();
    let a = PipelineConfig::new(&data_dir, "ok", 3).resolved(&dataset).unwrap();
    let b = PipelineConfig::new(&data_dir, "ok", 3).resolved(&dataset).unwrap();
    let equal = config_hash(&a).unwrap() == config_hash(&b).unwrap();
    let mut c = PipelineConfig::new(&data_dir, "ok", 3);
    c.lambda = 0.5;
    let c = c.resolved(&dataset).unwrap();
    let different = config_hash(&a).unwrap() != config_hash(&c).unwrap();
    verdict(
        "config-hash-stability",
        equal && different,
        &format!("identical configs collide: {equal}; lambda change separates: {different}"),
    );
}

// EmbeddingMatrix construction is part of several criteria above; silence the
// unused import lint meaningfully by asserting its shape contract here.
#[test]
fn criterion_embedding_shape_contract() {
    let ok = EmbeddingMatrix::from_rows(vec![vec![0.0f32; 4]; 3]).unwrap();
    assert_eq!((ok.n_tokens(), ok.d_text()), (3, 4));
    let bad = Tensor::new(vec![5], vec![0.0; 5]).unwrap();
    let rejected = EmbeddingMatrix::new(bad).is_err();
    verdict(
        "embedding-shape-contract",
        rejected,
        "rank-2 positive-dimension shape contract enforced",
    );
}
