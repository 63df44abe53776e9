//! Command implementations.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use handfusion_core::artifacts::{config_hash, render_metric_table, RunDirs};
use handfusion_core::dataset::{
    build_dataset, make_toy_dataset, qa_report, render_qa_table, BuildOptions,
    CaptionerAdapter, ConstantJointEmbedder, Dataset, EnricherAdapter, HashJointEmbedder,
    JointEmbedderAdapter, RemoteCaptioner, RemoteEnricher, RemoteJointEmbedder,
    TemplateCaptioner, TemplateEnricher,
};
use handfusion_core::diffusion::load_checkpoint;
use handfusion_core::encoder::FixtureTextEncoder;
use handfusion_core::error::ConfigError;
use handfusion_core::eval::{
    evaluate_dirs, DownsampleExtractor, EvalOptions, FeatureExtractorAdapter, IdentityExtractor,
    RemoteExtractor,
};
use handfusion_core::fusion::GestureBundle;
use handfusion_core::gesture::{GestureRecognizerAdapter, GlyphOracleRecognizer, RemoteRecognizer};
use handfusion_core::img::{load_png, save_png};
use handfusion_core::remote::resolve_url;
use handfusion_core::rng::derive_seed;
use handfusion_core::training::{
    self, generate_with_backend, run_pipeline, PipelineConfig, RunEvalSetup, SweepPoint,
};

use crate::lock::RunLock;
use crate::plot::{contact_sheet, render_line_plot};
use crate::{DatasetBuildArgs, DatasetQaArgs, DatasetToyArgs, Env, EvalArgs, InferArgs};

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError::Invalid(msg.into()).into()
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(config_error(format!(
            "{what} directory {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// dataset
// ---------------------------------------------------------------------------

fn make_captioner(kind: &str) -> Result<Box<dyn CaptionerAdapter>> {
    match kind {
        "template" => Ok(Box::new(TemplateCaptioner)),
        "remote" => {
            let url = resolve_url("captioner", None).ok_or_else(|| {
                config_error("remote captioner needs HANDFUSION_ADAPTER_CAPTIONER_URL")
            })?;
            Ok(Box::new(RemoteCaptioner::new(url)))
        }
        other => Err(config_error(format!("unknown captioner {other:?}"))),
    }
}

fn make_enricher(kind: &str) -> Result<Box<dyn EnricherAdapter>> {
    match kind {
        "template" => Ok(Box::new(TemplateEnricher)),
        "remote" => {
            let url = resolve_url("enricher", None).ok_or_else(|| {
                config_error("remote enricher needs HANDFUSION_ADAPTER_ENRICHER_URL")
            })?;
            Ok(Box::new(RemoteEnricher::new(url)))
        }
        other => Err(config_error(format!("unknown enricher {other:?}"))),
    }
}

fn make_embedder(kind: &str, d_joint: usize) -> Result<Box<dyn JointEmbedderAdapter>> {
    match kind {
        "hash" => Ok(Box::new(HashJointEmbedder::new(d_joint))),
        "constant" => Ok(Box::new(ConstantJointEmbedder::new(d_joint))),
        "remote" => {
            let url = resolve_url("embedder", None).ok_or_else(|| {
                config_error("remote embedder needs HANDFUSION_ADAPTER_EMBEDDER_URL")
            })?;
            Ok(Box::new(RemoteJointEmbedder::new(url, d_joint)))
        }
        other => Err(config_error(format!("unknown embedder {other:?}"))),
    }
}

pub fn dataset_build(env: &Env, args: &DatasetBuildArgs) -> Result<()> {
    require_dir(&args.images, "image source")?;
    if args.gestures.is_empty() {
        return Err(config_error("at least one gesture is required"));
    }
    let options = BuildOptions {
        n_train: args.n_train,
        n_test: args.n_test,
        seed: args.dataset_seed,
        ..Default::default()
    };
    if env.dry_run {
        println!(
            "plan: build dataset at {} from {} ({} gestures, {} train + {} test each, captioner {}, enricher {})",
            args.out.display(),
            args.images.display(),
            args.gestures.len(),
            args.n_train,
            args.n_test,
            args.captioner,
            args.enricher
        );
        return Ok(());
    }
    let captioner = make_captioner(&args.captioner)?;
    let enricher = make_enricher(&args.enricher)?;
    let dataset = build_dataset(
        &args.images,
        &args.out,
        &args.gestures,
        captioner.as_ref(),
        enricher.as_ref(),
        &options,
    )?;
    println!(
        "built dataset at {}: {} records, fingerprint {}",
        args.out.display(),
        dataset.records.len(),
        &dataset.fingerprint()?[..12]
    );
    Ok(())
}

pub fn dataset_toy(env: &Env, args: &DatasetToyArgs) -> Result<()> {
    if env.dry_run {
        println!(
            "plan: toy dataset at {} ({} gestures x {} images, {}x{})",
            args.out.display(),
            args.gestures.len(),
            args.n_per_gesture,
            args.image_size,
            args.image_size
        );
        return Ok(());
    }
    let dataset = make_toy_dataset(
        &args.out,
        args.n_per_gesture,
        &args.gestures,
        args.image_size,
        args.dataset_seed,
    )?;
    println!(
        "toy dataset at {}: {} records, fingerprint {}",
        args.out.display(),
        dataset.records.len(),
        &dataset.fingerprint()?[..12]
    );
    Ok(())
}

pub fn dataset_qa(env: &Env, args: &DatasetQaArgs) -> Result<()> {
    require_dir(&args.dataset, "dataset")?;
    if env.dry_run {
        println!(
            "plan: QA metrics over {} with the {} embedder",
            args.dataset.display(),
            args.embedder
        );
        return Ok(());
    }
    let dataset = Dataset::load(&args.dataset)?;
    let embedder = make_embedder(&args.embedder, args.d_joint)?;
    let hash = config_hash(&serde_json::json!({
        "dataset": dataset.fingerprint()?,
        "embedder": args.embedder,
        "d_joint": args.d_joint,
        "max_pairs": args.max_pairs,
    }))?;
    let report = qa_report(&dataset, embedder.as_ref(), args.max_pairs, 0, &hash)?;
    print!("{}", render_qa_table(&report));
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn train_section(env: &Env) -> Result<PipelineConfig> {
    env.file
        .train
        .clone()
        .ok_or_else(|| config_error("config file has no \"train\" section"))
}

pub fn train(env: &Env) -> Result<()> {
    let config = train_section(env)?;
    require_dir(&config.dataset_dir, "dataset")?;
    let dataset = Dataset::load(&config.dataset_dir)?;
    let resolved = config.resolved(&dataset)?;
    let hash = config_hash(&resolved)?;
    let dirs = RunDirs::for_config_hash(&env.runs_base, &hash);

    if env.dry_run {
        println!("plan: run dir {}", dirs.root().display());
        println!("{}", serde_json::to_string_pretty(&resolved)?);
        return Ok(());
    }
    std::fs::create_dir_all(dirs.root())?;
    let _lock = RunLock::acquire(dirs.root())?;
    let outcome = run_pipeline(&config, &env.runs_base)?;
    let manifest = &outcome.manifest;
    println!("run {} complete", outcome.dirs.root().display());
    println!("  train pairs: {}", manifest.n_train_pairs);
    if let Some(s1) = &manifest.stage1 {
        println!(
            "  stage1 [{:?}]: {} source images, d_gesture {}",
            s1.status, s1.n_source_images, s1.d_gesture
        );
    }
    if let Some(s2) = &manifest.stage2 {
        let first = s2.epoch_mean_losses.first().copied().unwrap_or(f64::NAN);
        let last = s2.epoch_mean_losses.last().copied().unwrap_or(f64::NAN);
        println!(
            "  stage2 [{:?}]: {} embeddings, epoch mean loss {first:.4} -> {last:.4}",
            s2.status,
            s2.pairs.len()
        );
    }
    if let Some(s3) = &manifest.stage3 {
        let first = s3.epoch_mean_losses.first().copied().unwrap_or(f64::NAN);
        let last = s3.epoch_mean_losses.last().copied().unwrap_or(f64::NAN);
        println!(
            "  stage3 [{:?}]: epoch mean loss {first:.4} -> {last:.4}, checkpoint {}",
            s3.status,
            s3.checkpoint.display()
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

pub fn infer(env: &Env, args: &InferArgs) -> Result<()> {
    require_dir(&args.run, "run")?;
    let bundle_dir = args.run.join("bundle");
    let checkpoint_dir = args.run.join("checkpoints/final");
    if !checkpoint_dir.join("manifest.json").exists() {
        return Err(config_error(format!(
            "no final checkpoint under {}",
            args.run.display()
        )));
    }
    let bundle = GestureBundle::load(&bundle_dir).map_err(handfusion_core::Error::Fusion)?;
    let (backend, schedule_cfg) =
        load_checkpoint(&checkpoint_dir).map_err(handfusion_core::Error::Diffusion)?;
    let schedule = schedule_cfg
        .build()
        .map_err(handfusion_core::Error::Diffusion)?;
    let steps = args.steps.unwrap_or_else(|| schedule_cfg.n_steps.min(50));
    let mu = args.mu.unwrap_or(bundle.fusion.mu_infer);
    if !(0.0..=1.0).contains(&mu) {
        return Err(config_error(format!("mu {mu} outside [0,1]")));
    }
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| args.run.join("samples/infer"));
    if env.dry_run {
        println!(
            "plan: {} images for prompt {:?} (mu {mu}, steps {steps}, seed {}) -> {}",
            args.count,
            args.prompt,
            args.infer_seed,
            out_dir.display()
        );
        return Ok(());
    }
    let _lock = RunLock::acquire(&out_dir)?;
    let encoder = match &env.file.train {
        Some(train) => train.make_encoder()?,
        None => Box::new(FixtureTextEncoder::default()),
    };
    let mut images = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let seed = derive_seed(args.infer_seed, &["infer", &i.to_string()]);
        let image = generate_with_backend(
            &args.prompt,
            &bundle,
            &backend,
            &schedule,
            mu,
            seed,
            steps,
            encoder.as_ref(),
        )?;
        let path = out_dir.join(format!("sample_{i:04}.png"));
        save_png(&path, &image).map_err(handfusion_core::Error::Tensor)?;
        println!("wrote {} ({})", path.display(), &image.content_hash()[..12]);
        images.push(image);
    }
    let sheet = contact_sheet(&images);
    // The sheet lives in a subdirectory so the sample directory stays a
    // clean input for `eval --gen`.
    let sheet_path = out_dir.join("grid/contact_sheet.png");
    save_png(&sheet_path, &sheet).map_err(handfusion_core::Error::Tensor)?;
    println!("contact sheet at {}", sheet_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn eval(env: &Env, args: &EvalArgs) -> Result<()> {
    require_dir(&args.real, "real image")?;
    require_dir(&args.gen, "generated image")?;
    if env.dry_run {
        println!(
            "plan: evaluate {} against {}",
            args.gen.display(),
            args.real.display()
        );
        return Ok(());
    }
    let options = EvalOptions {
        patch_size: args.patch_size,
        kid_subset_size: args.kid_subset_size,
        kid_n_subsets: args.kid_subsets,
        seed: args.eval_seed,
    };
    let hash = config_hash(&serde_json::json!({
        "real": args.real.display().to_string(),
        "gen": args.gen.display().to_string(),
        "options": &options,
        "detector": &args.detector,
        "extractor": &args.extractor,
        "extractor_grid": args.extractor_grid,
    }))?;
    let detector: Box<dyn GestureRecognizerAdapter> = match args.detector.as_str() {
        "glyph_oracle" => Box::new(GlyphOracleRecognizer::default()),
        "remote" => {
            let url = resolve_url("recognizer", None).ok_or_else(|| {
                config_error("remote detector needs HANDFUSION_ADAPTER_RECOGNIZER_URL")
            })?;
            Box::new(RemoteRecognizer::new(url, args.detector_d_gesture))
        }
        other => return Err(config_error(format!("unknown detector {other:?}"))),
    };
    let extractor: Box<dyn FeatureExtractorAdapter> = match args.extractor.as_str() {
        "downsample" => Box::new(DownsampleExtractor::new(args.extractor_grid)),
        "identity" => Box::new(IdentityExtractor::new(args.identity_size, args.identity_size)),
        "remote" => {
            let url = resolve_url("extractor", None).ok_or_else(|| {
                config_error("remote extractor needs HANDFUSION_ADAPTER_EXTRACTOR_URL")
            })?;
            Box::new(RemoteExtractor::new(url, args.extractor_d_feat))
        }
        other => return Err(config_error(format!("unknown extractor {other:?}"))),
    };
    let report = evaluate_dirs(
        &args.real,
        &args.gen,
        detector.as_ref(),
        extractor.as_ref(),
        &options,
        &hash,
    )?;
    print!(
        "{}",
        render_metric_table(&[("generated".to_string(), &report)])
    );
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

fn sweep_csv(points: &[SweepPoint], parameter_name: &str) -> String {
    let mut csv = format!("{parameter_name},fid,kid,fid_h,kid_h,hand_conf,error\n");
    for point in points {
        let metric = |name: &str| -> String {
            point
                .report
                .as_ref()
                .and_then(|r| r.value(name))
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default()
        };
        // Round away f32 -> f64 promotion artifacts in the parameter column.
        let parameter = (point.parameter * 1e6).round() / 1e6;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            parameter,
            metric("FID"),
            metric("KID"),
            metric("FID-H"),
            metric("KID-H"),
            metric("HAND-CONF"),
            point.error.clone().unwrap_or_default().replace(',', ";"),
        );
    }
    csv
}

fn emit_sweep_outputs(
    points: &[SweepPoint],
    sweep_dir: &Path,
    parameter_name: &str,
) -> Result<()> {
    let n_failed = points.iter().filter(|p| p.error.is_some()).count();
    write_sweep_outputs(points, sweep_dir, parameter_name)?;
    if n_failed > 0 {
        anyhow::bail!("{n_failed} of {} sweep points failed; outputs written to {}", points.len(), sweep_dir.display());
    }
    Ok(())
}

fn write_sweep_outputs(
    points: &[SweepPoint],
    sweep_dir: &Path,
    parameter_name: &str,
) -> Result<()> {
    std::fs::create_dir_all(sweep_dir)?;
    std::fs::write(sweep_dir.join("sweep.csv"), sweep_csv(points, parameter_name))?;
    let curve: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.report.as_ref().and_then(|r| r.value("FID-H")).map(|v| (p.parameter, v)))
        .collect();
    render_line_plot(&sweep_dir.join("fid_h_curve.png"), &curve)?;
    // Per-point sample grids from the persisted samples.
    for point in points {
        let samples_dir = point.run_dir.join("samples");
        if !samples_dir.is_dir() {
            continue;
        }
        let paths = handfusion_core::img::list_pngs(&samples_dir)
            .map_err(handfusion_core::Error::Tensor)?;
        let images: Vec<_> = paths
            .iter()
            .take(16)
            .filter_map(|p| load_png(p).ok())
            .collect();
        if !images.is_empty() {
            let sheet = contact_sheet(&images);
            let name = format!("grid_{}.png", point.parameter);
            save_png(&sweep_dir.join(name), &sheet).map_err(handfusion_core::Error::Tensor)?;
        }
    }
    println!(
        "sweep outputs at {} ({} points, {} failed)",
        sweep_dir.display(),
        points.len(),
        points.iter().filter(|p| p.error.is_some()).count()
    );
    for point in points {
        match (&point.report, &point.error) {
            (Some(report), _) => println!(
                "  {parameter_name} {}: FID-H {}",
                point.parameter,
                report
                    .value("FID-H")
                    .map(|v| format!("{v:.3}"))
                    .unwrap_or_else(|| "-".to_string())
            ),
            (None, Some(err)) => println!("  {parameter_name} {}: failed ({err})", point.parameter),
            (None, None) => {}
        }
    }
    Ok(())
}

fn eval_setup(env: &Env) -> RunEvalSetup {
    env.file.eval.clone().unwrap_or_default()
}

pub fn ablate_lambda_cmd(env: &Env, values: Option<Vec<f32>>) -> Result<()> {
    let base = train_section(env)?;
    require_dir(&base.dataset_dir, "dataset")?;
    let values = values
        .or_else(|| env.file.ablate.as_ref().and_then(|a| a.lambda_values.clone()))
        .unwrap_or_else(|| (1..=9).map(|i| i as f32 / 10.0).collect());
    if env.dry_run {
        println!("plan: lambda sweep over {values:?} under {}", env.runs_base.display());
        return Ok(());
    }
    let _lock = RunLock::acquire(&env.runs_base)?;
    let setup = eval_setup(env);
    let points = training::ablate_lambda(&base, &values, &env.runs_base, &setup);
    emit_sweep_outputs(&points, &env.runs_base.join("sweeps/lambda"), "lambda")
}

pub fn ablate_trainsize_cmd(env: &Env, sizes: Option<Vec<usize>>) -> Result<()> {
    let base = train_section(env)?;
    require_dir(&base.dataset_dir, "dataset")?;
    let sizes = sizes
        .or_else(|| env.file.ablate.as_ref().and_then(|a| a.trainsize_sizes.clone()))
        .unwrap_or_else(|| vec![200, 500, 800, 1000, 1200]);
    if env.dry_run {
        println!("plan: train-size sweep over {sizes:?} under {}", env.runs_base.display());
        return Ok(());
    }
    let _lock = RunLock::acquire(&env.runs_base)?;
    let setup = eval_setup(env);
    let points = training::ablate_trainsize(&base, &sizes, &env.runs_base, &setup);
    emit_sweep_outputs(&points, &env.runs_base.join("sweeps/trainsize"), "train_size")
}
