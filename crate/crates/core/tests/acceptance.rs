//! Acceptance criteria A1 to A8, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so the criteria share the
//! expensive benchmark runs and report in a fixed order. Exits nonzero when
//! any criterion fails. Criterion names given as arguments restrict the run
//! to those criteria.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use common::{
    brute_auc, brute_metrics, four_image_batch, grad_check, small_model_config, small_train_data,
    two_block_config, LossKind,
};
use prepnet::data::{generate_synthetic_benchmark, PreprocessConfig, SyntheticDomainSpec};
use prepnet::eval::{
    compare_to_baseline, eval_matrix_command, fmt_pp, pp_delta, round_half_even, EvalCell, EvalMatrix, LoadedRun,
    Preprocessing,
};
use prepnet::metrics::{classification_metrics, confusion_counts, roc_auc, ConfusionCounts, MetricsReport};
use prepnet::model::{load_checkpoint, PrepNet};
use prepnet::nn::Component;
use prepnet::train::{
    checkpoint_path, discriminator_accuracy, flag_artifacts, mean_rec_loss, run_pipeline, run_stage, stage_adversarial,
    ExperimentConfig, RunOptions, RunStatus, Stage, StageEpochs, TrainLog,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", parts.join(", "))
}

fn a1_metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut max_auc_err: f64 = 0.0;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let grid = rng.random_range(2..=20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..=grid) as f64 / grid as f64).collect();
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= 0.5)).collect();
        let oracle = brute_metrics(&labels, &preds);
        let c = confusion_counts(&labels, &preds).map_err(|e| e.to_string())?;
        let rates = classification_metrics(&c).map_err(|e| e.to_string())?;
        if (c.tp, c.fp, c.tn, c.fn_) != (oracle.tp, oracle.fp, oracle.tn, oracle.fn_)
            || rates.ba != oracle.ba_num as f64 / oracle.ba_den as f64
        {
            mismatches += 1;
        }
        let auc = roc_auc(&labels, &scores).map_err(|e| e.to_string())?;
        max_auc_err = max_auc_err.max((auc - brute_auc(&labels, &scores)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && max_auc_err <= 1e-12 && secs < 10.0,
        format!("1000 instances, {mismatches} count/BA mismatches, max AUC error {max_auc_err:e}, {secs:.2}s"),
    )
}

fn a4_gradients() -> Outcome {
    let start = Instant::now();
    let (x, domains, labels) = four_image_batch();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    let mut checked = 0;
    for kind in LossKind::ALL {
        let mut model = PrepNet::<f64>::build(&two_block_config(), 5).map_err(|e| e.to_string())?;
        let r = grad_check(&mut model, kind, &x, &domains, &labels, 1e-4, usize::MAX, 1e-6);
        checked += r.checked;
        worst = worst.max(r.max_rel_err);
        parts.push(format!("{kind:?} {:.1e}", r.max_rel_err));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && secs < 60.0,
        format!("{checked} coordinates, max relative error {} ({secs:.1}s)", parts.join(", ")),
    )
}

fn printed(ba: [[f64; 2]; 2], mode: Preprocessing) -> Result<EvalMatrix, String> {
    let cells = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| EvalCell {
            train_dataset: i,
            test_dataset: j,
            metrics: MetricsReport {
                ba: ba[i][j],
                sensitivity: f64::NAN,
                specificity: f64::NAN,
                auc: f64::NAN,
                counts: ConfusionCounts::default(),
                threshold: 0.5,
            },
            preprocessing: mode,
        })
        .collect();
    let names = vec!["SARS-CoV-2".to_string(), "UCSD COVID-CT".to_string()];
    EvalMatrix::from_cells(cells, names, "vgg19", mode).map_err(|e| e.to_string())
}

fn a5_table_arithmetic() -> Outcome {
    let base = printed([[0.8924, 0.4433], [0.3295, 0.8250]], Preprocessing::Raw)?;
    let ae = printed([[0.8956, 0.4983], [0.49405, 0.8154]], Preprocessing::Autoencoder)?;
    let prep = printed([[0.9007, 0.5157], [0.5545, 0.7800]], Preprocessing::Prepnet)?;
    let within = [base.within_average, ae.within_average, prep.within_average];
    let within_ok = within
        .iter()
        .zip([0.8587, 0.8555, 0.8404])
        .all(|(got, want)| (got - want).abs() <= 5e-4);
    let d_ae = compare_to_baseline(&ae, &base).map_err(|e| e.to_string())?;
    let d_prep = compare_to_baseline(&prep, &base).map_err(|e| e.to_string())?;
    // the printed deltas come from the printed (4-digit) averages
    let r4 = |v: f64| round_half_even(v, 4).parse::<f64>().unwrap();
    let printed_ae = fmt_pp(pp_delta(r4(ae.within_average), r4(base.within_average)));
    let printed_prep = fmt_pp(pp_delta(r4(prep.within_average), r4(base.within_average)));
    let deltas_ok = printed_ae == "-0.32"
        && printed_prep == "-1.83"
        && (d_ae.delta_within_pp - -0.32).abs() <= 0.01
        && (d_prep.delta_within_pp - -1.83).abs() <= 0.01;
    let cross = pp_delta(0.5343, 0.4159);
    let cross_ok = fmt_pp(cross) == "+11.84" && (cross - 11.84).abs() < 1e-9;
    check(
        within_ok && deltas_ok && cross_ok,
        format!(
            "within [{}], deltas {printed_ae} / {printed_prep} pp, cross {} pp",
            within.map(|w| round_half_even(w, 4)).join(", "),
            fmt_pp(cross)
        ),
    )
}

/// Small benchmark and config for the determinism and isolation runs.
fn small_experiment(dir: &Path) -> Result<(ExperimentConfig, String), String> {
    let spec = SyntheticDomainSpec::preset(2, 24, 16, 16);
    generate_synthetic_benchmark(&spec, 8, &dir.join("data")).map_err(|e| e.to_string())?;
    let mut config = ExperimentConfig::synthetic(2, (16, 16));
    config.manifest = dir.join("data").join("manifest.jsonl");
    config.model = small_model_config();
    config.preprocess = PreprocessConfig {
        target_size: (16, 16),
        equalize: false,
        ..Default::default()
    };
    config.train.epochs = StageEpochs {
        ae_pretrain: 3,
        warmup: 2,
        adversarial: 3,
        task: 3,
    };
    config.train.batch_size = 16;
    config.train.seed = 17;
    let raw = serde_json::to_string_pretty(&config).map_err(|e| e.to_string())?;
    Ok((config, raw))
}

fn logged_losses(log: &TrainLog) -> Vec<[u64; 5]> {
    let bits = |l: &prepnet::losses::LossBreakdown| {
        [l.rec, l.pseu, l.covid, l.fool, l.total].map(f64::to_bits)
    };
    log.steps()
        .map(|s| bits(&s.losses))
        .chain(log.epochs().map(|e| bits(&e.train)))
        .collect()
}

fn a6_determinism(tmp: &Path) -> Outcome {
    let (config, raw) = small_experiment(tmp)?;
    let mut runs = Vec::new();
    for name in ["det_a", "det_b"] {
        let dir = tmp.join(name);
        run_pipeline(&config, &raw, &dir, &RunOptions::default()).map_err(|e| e.to_string())?;
        let log = TrainLog::read_jsonl(&dir.join("logs.jsonl")).map_err(|e| e.to_string())?;
        let metrics = std::fs::read(dir.join("metrics/final.json")).map_err(|e| e.to_string())?;
        runs.push((logged_losses(&log), metrics));
    }
    let losses_equal = runs[0].0 == runs[1].0;
    let metrics_equal = runs[0].1 == runs[1].1;
    check(
        losses_equal && metrics_equal && !runs[0].0.is_empty(),
        format!(
            "{} logged loss records bit-identical: {losses_equal}, final.json byte-identical: {metrics_equal}",
            runs[0].0.len()
        ),
    )
}

/// Raw bits of every parameter, grouped by component, straight from the store.
fn raw_bits(model: &PrepNet<f32>) -> BTreeMap<Component, Vec<u32>> {
    Component::ALL
        .iter()
        .map(|&c| {
            let bits = model
                .store
                .ids_of(&[c])
                .iter()
                .flat_map(|&id| model.store.value(id).data().iter().map(|v| v.to_bits()))
                .collect();
            (c, bits)
        })
        .collect()
}

fn hashes(model: &PrepNet<f32>) -> BTreeMap<Component, String> {
    Component::ALL.iter().map(|&c| (c, model.component_hash(c))).collect()
}

fn a7_stage_isolation(tmp: &Path) -> Outcome {
    let mut violations = Vec::new();
    let mut checks = 0;

    // direct: each stage against its trainable set, by hash and by raw bits
    let data = small_train_data(8, 31);
    let mut config = common::short_train_config(2);
    config.early_stop_patience = 0;
    let mut model = PrepNet::<f32>::build(&small_model_config(), 4).map_err(|e| e.to_string())?;
    for stage in Stage::ALL {
        let (h0, b0) = (hashes(&model), raw_bits(&model));
        let (_, audit) = run_stage(&mut model, stage, &data, &config).map_err(|e| e.to_string())?;
        let (h1, b1) = (hashes(&model), raw_bits(&model));
        for c in Component::ALL {
            checks += 1;
            let should = stage.trainable().contains(&c);
            let by_hash = h0[&c] != h1[&c];
            let by_bits = b0[&c] != b1[&c];
            if by_hash != should || by_bits != should || audit.changed.contains(&c) != should {
                violations.push(format!("{stage:?}/{c:?}"));
            }
        }
    }

    // on disk: consecutive checkpoints of the determinism run
    let run = tmp.join("det_a");
    let status = RunStatus::load(&run).map_err(|e| e.to_string())?;
    let (config, _) = ExperimentConfig::load(&run.join("config.json")).map_err(|e| e.to_string())?;
    let mut previous = hashes(&PrepNet::<f32>::build(&config.model, status.seed).map_err(|e| e.to_string())?);
    for (stage, audit) in Stage::ALL.into_iter().zip(&status.stages) {
        let weights = load_checkpoint(&checkpoint_path(&run, stage), &config.model).map_err(|e| e.to_string())?;
        let mut m = PrepNet::<f32>::build(&config.model, status.seed).map_err(|e| e.to_string())?;
        m.load_weights(&weights).map_err(|e| e.to_string())?;
        let current = hashes(&m);
        for c in Component::ALL {
            checks += 1;
            let should = stage.trainable().contains(&c);
            if (previous[&c] != current[&c]) != should || audit.after[&c] != current[&c] {
                violations.push(format!("checkpoint {stage:?}/{c:?}"));
            }
        }
        previous = current;
    }
    check(
        violations.is_empty(),
        format!("{checks} component checks across 4 stages and 4 checkpoints, violations {violations:?}"),
    )
}

fn a8_artifacts() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let normal = Normal::new(0.02, 0.004).unwrap();
    let mut losses: Vec<(String, f64)> = (0..200)
        .map(|i| (format!("s{i:03}"), normal.sample(&mut rng)))
        .collect();
    let n = losses.len() as f64;
    let mu = losses.iter().map(|(_, v)| v).sum::<f64>() / n;
    let sigma = (losses.iter().map(|(_, v)| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
    losses.insert(83, ("planted".into(), mu + 5.0 * sigma));
    let flags = flag_artifacts(&losses, 3.0).map_err(|e| e.to_string())?;
    let flagged: Vec<&str> = flags
        .iter()
        .filter(|f| f.flagged)
        .map(|f| f.sample_id.as_str())
        .collect();
    check(
        flagged == ["planted"],
        format!("201 losses, outlier at mean + 5 sd, flagged {flagged:?}"),
    )
}

const BENCH_SEEDS: [u64; 3] = [0, 1, 2];

struct BenchRun {
    seed: u64,
    raw_within: f64,
    raw_cross: f64,
    prep_within: f64,
    prep_cross: f64,
    disc_warmup: f64,
    disc_adversarial: f64,
    disc_ablation: f64,
    rec_before: f64,
    rec_after: f64,
}

struct Bench {
    runs: Vec<BenchRun>,
    /// Pipeline plus matrix evaluation over all seeds, without the ablation.
    a2_seconds: f64,
}

/// Three seeds of the 2-domain 32×32 benchmark, 200 images per domain and
/// class, trained and evaluated the way `train` and `eval --matrix` do it.
/// The ablation replays the adversarial stage with `w_fool = 0` from the
/// run's warm-up checkpoint.
fn benchmark(tmp: &Path) -> Result<Bench, String> {
    let e = |e: prepnet::Error| e.to_string();
    let mut runs = Vec::new();
    let mut a2_seconds = 0.0;
    for seed in BENCH_SEEDS {
        let start = Instant::now();
        let dir = tmp.join(format!("bench{seed}"));
        let spec = SyntheticDomainSpec::preset(2, 200, 32, 32);
        generate_synthetic_benchmark(&spec, seed, &dir.join("data")).map_err(e)?;
        let mut config = ExperimentConfig::synthetic(2, (32, 32));
        config.train.seed = seed;
        let raw = serde_json::to_string_pretty(&config).map_err(|e| e.to_string())?;
        config.manifest = dir.join("data").join(&config.manifest);
        let run_dir = dir.join("run");
        let out = run_pipeline(&config, &raw, &run_dir, &RunOptions::default()).map_err(e)?;
        let report = eval_matrix_command(&run_dir).map_err(e)?;
        a2_seconds += start.elapsed().as_secs_f64();

        let matrix = |mode| {
            report
                .matrices
                .iter()
                .find(|m| m.preprocessing == mode)
                .ok_or_else(|| format!("no {mode:?} matrix"))
        };
        let (raw_m, prep_m) = (matrix(Preprocessing::Raw)?, matrix(Preprocessing::Prepnet)?);
        let fm = out.final_metrics.ok_or("run has no final metrics")?;

        let loaded = LoadedRun::open(&run_dir).map_err(e)?;
        let mut ablation_config = loaded.config.train.clone();
        ablation_config.loss_weights.w_fool = 0.0;
        let mut model = PrepNet::<f32>::build(&loaded.config.model, seed).map_err(e)?;
        let warm = load_checkpoint(&checkpoint_path(&run_dir, Stage::Warmup), &loaded.config.model).map_err(e)?;
        model.load_weights(&warm).map_err(e)?;
        let rec_before = mean_rec_loss(&model, &loaded.data.test.images).map_err(e)?;
        stage_adversarial(&mut model, &loaded.data.train_data(), &ablation_config).map_err(e)?;
        let recon = model.reconstruct(&loaded.data.test.images).map_err(e)?;
        let disc_ablation = discriminator_accuracy(&model, &recon, &loaded.data.test.dataset_ids).map_err(e)?;

        runs.push(BenchRun {
            seed,
            raw_within: raw_m.within_average,
            raw_cross: raw_m.cross_average,
            prep_within: prep_m.within_average,
            prep_cross: prep_m.cross_average,
            disc_warmup: fm.disc_accuracy_after_warmup.ok_or("no warm-up accuracy")?,
            disc_adversarial: fm.disc_accuracy_after_adversarial.ok_or("no adversarial accuracy")?,
            disc_ablation,
            rec_before,
            rec_after: mean_rec_loss(&loaded.models.prepnet, &loaded.data.test.images).map_err(e)?,
        });
    }
    Ok(Bench { runs, a2_seconds })
}

fn bench(tmp: &Path) -> Result<&'static Bench, String> {
    static BENCH: OnceLock<Result<Bench, String>> = OnceLock::new();
    BENCH.get_or_init(|| benchmark(tmp)).as_ref().map_err(Clone::clone)
}

fn a2_cross_domain(tmp: &Path) -> Outcome {
    let b = bench(tmp)?;
    let of = |f: fn(&BenchRun) -> f64| b.runs.iter().map(f).collect::<Vec<_>>();
    let shift = of(|r| r.raw_within - r.raw_cross);
    let gain = of(|r| r.prep_cross - r.raw_cross);
    let drop = of(|r| r.raw_within - r.prep_within);
    let (m_shift, m_gain, m_drop) = (median(shift.clone()), median(gain.clone()), median(drop.clone()));
    let runs: Vec<String> = b
        .runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: raw {:.3}/{:.3} prepnet {:.3}/{:.3}",
                r.seed, r.raw_within, r.raw_cross, r.prep_within, r.prep_cross
            )
        })
        .collect();
    check(
        m_shift >= 0.15 && m_gain >= 0.10 && m_drop <= 0.05 && b.a2_seconds < 900.0,
        format!(
            "median shift {:+.1} pp, cross gain {:+.1} pp, within drop {:+.1} pp, {:.0}s; within/cross {}",
            100.0 * m_shift,
            100.0 * m_gain,
            100.0 * m_drop,
            b.a2_seconds,
            runs.join("; ")
        ),
    )
}

fn a3_homogenization(tmp: &Path) -> Outcome {
    let b = bench(tmp)?;
    let of = |f: fn(&BenchRun) -> f64| b.runs.iter().map(f).collect::<Vec<_>>();
    let (warm, adv, abl) = (of(|r| r.disc_warmup), of(|r| r.disc_adversarial), of(|r| r.disc_ablation));
    let (m_warm, m_adv, m_abl) = (median(warm.clone()), median(adv.clone()), median(abl.clone()));
    check(
        m_warm >= 0.90 && m_adv <= 0.65 && m_abl >= m_warm - 0.05,
        format!(
            "median held-out discriminator accuracy {m_warm:.3} after warm-up, {m_adv:.3} after adversarial, \
             {m_abl:.3} with w_fool = 0; per seed {} / {} / {}; test rec {} -> {}",
            fmt_list(&warm),
            fmt_list(&adv),
            fmt_list(&abl),
            fmt_list(&of(|r| r.rec_before)),
            fmt_list(&of(|r| r.rec_after)),
        ),
    )
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let path: PathBuf = tmp.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("A1", Box::new(a1_metric_oracle)),
        ("A2", Box::new(|| a2_cross_domain(&path))),
        ("A3", Box::new(|| a3_homogenization(&path))),
        ("A4", Box::new(a4_gradients)),
        ("A5", Box::new(a5_table_arithmetic)),
        ("A6", Box::new(|| a6_determinism(&path))),
        ("A7", Box::new(|| a7_stage_isolation(&path))),
        ("A8", Box::new(a8_artifacts)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: Vec<_> = criteria
        .into_iter()
        .filter(|(name, _)| only.is_empty() || only.iter().any(|o| o == name))
        .collect();
    let mut failed = 0;
    for (name, f) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("{name} PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{name} FAIL  {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
