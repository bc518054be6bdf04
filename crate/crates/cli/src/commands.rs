use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use candle_core::DType;
use ndarray::s;
use rand::seq::SliceRandom;
use scenecast::checkpoint::Checkpoint;
use scenecast::data::{load_recording, make_windows, synth_generate, undersample_standing, write_recording, SceneRecording, StandingDetector};
use scenecast::denoiser::Denoiser;
use scenecast::diffusion::{prepare_training_set, write_loss_csv, Trainer};
use scenecast::inference::{ForecastRequest, Forecaster};
use scenecast::metrics::{evaluate as score, reference_set, root_trajectory, EvalItem, RealismClassifier};
use scenecast::normalize::fit_norm;
use scenecast::rng;

use crate::config::RunConfig;
use crate::forecasts::{load_all, window_dir, write_window, ForecastManifest, GroundTruth};
use crate::plot;

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_CSV: &str = "loss.csv";
pub const FORECAST_DIR: &str = "forecasts";
pub const METRICS: &str = "metrics.json";

pub fn gen_data(config: &RunConfig, out: &Path) -> Result<()> {
    let s = &config.synth;
    for (split, count, salt) in [("train", s.train_recordings, 0u64), ("test", s.test_recordings, 1u64 << 32)] {
        for i in 0..count {
            let rec = synth_generate(&s.scene, rng::mix(config.seed, salt | i as u64))?;
            ensure!(rec.skeleton == config.skeleton, "synthetic skeleton differs from the configured one");
            let dir = out.join(split).join(format!("rec_{i:03}"));
            write_recording(&rec, &dir)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn load_all_recordings(paths: &[impl AsRef<Path>], config: &RunConfig) -> Result<Vec<SceneRecording>> {
    paths
        .iter()
        .map(|p| {
            let rec = load_recording(p.as_ref()).with_context(|| format!("loading {}", p.as_ref().display()))?;
            ensure!(rec.skeleton == config.skeleton, "{} uses a different skeleton", p.as_ref().display());
            Ok(rec)
        })
        .collect()
}

pub fn train(config: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    if config.data.train.is_empty() {
        bail!("no training recordings: set data.train or pass --data");
    }
    let recs = load_all_recordings(&config.data.train, config)?;
    let w = &config.window;
    let mut windows = Vec::new();
    for (i, rec) in recs.iter().enumerate() {
        for mut win in make_windows(rec, w.input_frames, w.total_frames, w.train_stride)? {
            win.recording = i;
            windows.push(win);
        }
    }
    let kept = undersample_standing(
        windows,
        config.train.undersample_fraction,
        config.seed,
        &config.skeleton,
        Some(StandingDetector::default()),
    )?;
    log::info!("{} training windows, {} standing windows dropped", kept.windows.len(), kept.removed);
    let basis = config.basis.build()?;

    let (mut trainer, set) = match resume {
        Some(dir) => {
            let ckpt = Checkpoint::load(dir)?;
            ensure!(ckpt.denoiser == config.model, "checkpoint model differs from the configured model");
            ensure!(ckpt.basis == config.basis, "checkpoint basis differs from the configured basis");
            ensure!(ckpt.input_frames == w.input_frames, "checkpoint input length differs from window.input_frames");
            let set = prepare_training_set(&kept.windows, &basis, &config.skeleton, Some(ckpt.scaler.clone()))?;
            log::info!("resuming from step {}", ckpt.step);
            (ckpt.resume(config.train.clone())?, set)
        }
        None => {
            let set = prepare_training_set(&kept.windows, &basis, &config.skeleton, None)?;
            let model = Denoiser::new(config.model.clone(), DType::F32, true)?;
            (Trainer::new(model, config.train.clone())?, set)
        }
    };
    println!("parameters: {}", trainer.model.count_params());
    log::info!("{} datapoints, training to step {}", set.samples.len(), config.train.steps);

    let ckpt_dir = out.join(CHECKPOINT_DIR);
    let save = |t: &Trainer| -> scenecast::Result<()> {
        Checkpoint::from_trainer(t, &config.skeleton, w.input_frames, &set.scaler, &basis)?.save(&ckpt_dir)?;
        write_loss_csv(&out.join(LOSS_CSV), &t.history)
    };
    let every = config.output.checkpoint_every;
    let log_every = config.output.log_every.max(1);
    let result = trainer.run(&set, |t, r| {
        if r.step % log_every == 0 {
            log::info!("step {} loss {:.5} lr {:.3e}", r.step, r.loss, r.lr);
        }
        if every > 0 && r.step % every == 0 {
            save(t)?;
        }
        Ok(())
    });
    write_loss_csv(&out.join(LOSS_CSV), &trainer.history)?;
    result?;
    save(&trainer)?;
    println!("{}", ckpt_dir.display());
    Ok(())
}

pub fn sample(config: &RunConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    if config.data.test.is_empty() {
        bail!("no input recordings: set data.test or pass --input");
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    ensure!(
        ckpt.basis == config.basis,
        "checkpoint/basis mismatch: checkpoint uses {:?}, config {:?}",
        ckpt.basis,
        config.basis
    );
    let hash = Checkpoint::file_hash(checkpoint)?;
    let forecaster = Forecaster::from_checkpoint(&ckpt, DType::F32)?;
    let (n, total) = (ckpt.input_frames, ckpt.denoiser.frames);
    let stride = config.window.sample_stride;
    let recs = load_all_recordings(&config.data.test, config)?;
    let root = out.join(FORECAST_DIR);
    let mut written = 0usize;
    'outer: for (ri, (path, rec)) in config.data.test.iter().zip(&recs).enumerate() {
        for w in make_windows(rec, n, total, stride)? {
            if config.sample.max_windows > 0 && written == config.sample.max_windows {
                break 'outer;
            }
            let seed = rng::mix(config.seed, ((ri as u64) << 32) | w.start as u64);
            let req = ForecastRequest::from_window(&w, config.sample.samples, seed, config.sample.ablation);
            let result = forecaster.forecast(&req)?;
            let manifest = ForecastManifest {
                seed,
                samples: config.sample.samples,
                ablation: config.sample.ablation,
                checkpoint: checkpoint.to_path_buf(),
                checkpoint_hash: hash.clone(),
                source: path.clone(),
                window_start: w.start,
                input_frames: n,
                total_frames: total,
                stride,
                person_ids: w.person_ids.clone(),
            };
            let dir = window_dir(&root, ri, w.start);
            write_window(&dir, &manifest, &result.samples, &w.scene, &config.skeleton)?;
            log::info!("{}: {} persons, {} samples", dir.display(), w.person_count(), result.samples.len());
            written += 1;
        }
    }
    if written == 0 {
        bail!("input recordings are shorter than one {total}-frame window");
    }
    println!("{}", root.display());
    Ok(())
}

pub fn evaluate(config: &RunConfig, out: &Path, forecasts: &Path, classifier: Option<&Path>, oracle: bool) -> Result<()> {
    let loaded = load_all(forecasts)?;
    let mut gt = GroundTruth::default();
    let windows = loaded.iter().map(|f| gt.window(&f.manifest)).collect::<Result<Vec<_>>>()?;
    let truth: Vec<Vec<_>> = windows.iter().map(|w| vec![w.positions.clone()]).collect();
    let items: Vec<EvalItem<'_>> = windows
        .iter()
        .zip(&loaded)
        .zip(&truth)
        .map(|((w, f), t)| EvalItem {
            window: w,
            samples: if oracle { t } else { &f.samples },
        })
        .collect();
    let clf = classifier.map(RealismClassifier::load).transpose()?;
    let (report, trained) = score(&items, &config.skeleton, clf.as_ref(), &config.eval)?;
    std::fs::create_dir_all(out)?;
    reference_set(&items, &config.skeleton)?.save(&out.join("refset"))?;
    if let Some(c) = trained {
        c.save(&out.join("classifier"))?;
    }
    let json = serde_json::to_string_pretty(&report)? + "\n";
    std::fs::write(out.join(METRICS), &json).context("writing metrics.json")?;
    print!("{json}");
    Ok(())
}

pub fn plot(config: &RunConfig, out: &Path, metrics: &Path, forecasts: &Path) -> Result<()> {
    let text = std::fs::read_to_string(metrics).with_context(|| format!("reading {}", metrics.display()))?;
    let report: serde_json::Value = serde_json::from_str(&text).context("parsing metrics")?;
    let curve = |key: &str| -> Result<Vec<f64>> {
        serde_json::from_value(report.get(key).cloned().with_context(|| format!("metrics lack `{key}`"))?)
            .with_context(|| format!("`{key}` is not a number array"))
    };
    let (pred, truth) = (curve("velocity_curve")?, curve("gt_velocity_curve")?);

    let sk = &config.skeleton;
    let mut paths = Vec::new();
    for f in load_all(forecasts)? {
        let n = f.manifest.input_frames;
        for x in &f.samples {
            for seq in x.outer_iter() {
                let local = fit_norm(seq, n - 1, sk)?.apply(seq);
                let root = root_trajectory(local.slice(s![.., .., n - 1..]), sk);
                paths.push(root.outer_iter().map(|p| (p[0], p[1])).collect::<Vec<_>>());
            }
        }
    }
    if paths.is_empty() {
        bail!("no forecast trajectories to plot");
    }
    paths.shuffle(&mut rng::stream(config.seed, rng::fnv1a(b"plot")));
    paths.truncate(config.plot.trajectories.max(1));
    std::fs::create_dir_all(out)?;
    let traj = out.join("trajectories.svg");
    let vel = out.join("velocity.svg");
    plot::trajectories(&traj, &paths)?;
    plot::velocity(&vel, sk.fps, &pred, &truth)?;
    println!("{}\n{}", traj.display(), vel.display());
    Ok(())
}
