//! The four commands: run, ablate, export, verify.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use opdlab_core::objectives::SupportRule;
use opdlab_core::trainer::{self, RunLog, TrainError};

use crate::config::ExperimentFile;
use crate::export::export_csv;
use crate::persist::{self, LineWriter};
use crate::CliError;

fn load_experiment(config_path: &Path, out_override: Option<&str>, seed_override: Option<u64>) -> Result<ExperimentFile, CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::Config(format!("read {}: {e}", config_path.display())))?;
    let mut file = ExperimentFile::parse(&text)?;
    if let Some(out) = out_override {
        file.outputs.dir = out.to_string();
    }
    if let Some(seed) = seed_override {
        file.seed = seed;
    }
    Ok(file)
}

fn map_train_error(err: TrainError) -> CliError {
    match err {
        TrainError::Config(msg) => CliError::Config(msg),
        TrainError::NonFinite { step } => CliError::Runtime(format!("non-finite loss or gradient at step {step}")),
        other => CliError::Runtime(other.to_string()),
    }
}

fn execute_run(file: &ExperimentFile, dir: &Path) -> Result<RunLog, CliError> {
    let preset = file.build_preset()?;
    let cfg = file.train_config()?;
    let started = Instant::now();
    let log = trainer::opd_train(&preset, &cfg).map_err(map_train_error)?;
    persist::write_run(dir, &file.echo_toml()?, &log, started.elapsed().as_millis())?;
    run_probes(file, &preset, dir)?;
    if file.outputs.formats.iter().any(|f| f == "csv") {
        export_csv(dir)?;
    }
    Ok(log)
}

#[derive(Serialize)]
struct RewardRecordOut {
    reward: f64,
    correct: bool,
}

fn run_probes(file: &ExperimentFile, preset: &opdlab_core::ScenarioPreset, dir: &Path) -> Result<(), CliError> {
    let Some(probes) = &file.probes else { return Ok(()) };
    let cfg = file.train_config()?;
    if let Some(reward) = &probes.reward_separation {
        let sep = trainer::run_reward_separation(preset, &cfg, reward.num_rollouts).map_err(map_train_error)?;
        let mut lines = LineWriter::create(&dir.join(persist::REWARDS_LOG))?;
        for (reward, correct) in &sep.rewards {
            lines.write_record(&RewardRecordOut { reward: *reward, correct: *correct })?;
        }
        #[derive(Serialize)]
        struct RewardSummaryOut<'a> {
            auroc: Option<f64>,
            histogram: &'a opdlab_core::trainer::RewardHistogram,
        }
        let summary = serde_json::to_string_pretty(&RewardSummaryOut { auroc: sep.auroc, histogram: &sep.histogram })
            .map_err(|e| CliError::Runtime(format!("serialize reward summary: {e}")))?;
        fs::write(dir.join(persist::REWARD_SUMMARY), summary)
            .map_err(|e| CliError::Runtime(format!("write reward summary: {e}")))?;
    }
    if let Some(depth) = &probes.depth {
        let probe = trainer::run_depth_probe(preset, &cfg, &depth.depths, depth.rollouts_per_depth).map_err(map_train_error)?;
        let json = serde_json::to_string_pretty(&probe).map_err(|e| CliError::Runtime(format!("serialize depth probe: {e}")))?;
        fs::write(dir.join(persist::DEPTH_SUMMARY), json)
            .map_err(|e| CliError::Runtime(format!("write depth probe: {e}")))?;
    }
    Ok(())
}

/// `run`: execute one experiment file and persist its artifacts.
pub fn cmd_run(config_path: &Path, out_override: Option<&str>, seed_override: Option<u64>) -> Result<(), CliError> {
    let file = load_experiment(config_path, out_override, seed_override)?;
    let dir = Path::new(&file.outputs.dir).to_path_buf();
    let log = execute_run(&file, &dir)?;
    println!(
        "run complete: scenario {}, {} steps, final accuracy {:.4} (teacher {:.4}), artifacts in {}",
        log.scenario,
        log.snapshots.len(),
        log.final_accuracy(),
        log.teacher_accuracy,
        dir.display()
    );
    Ok(())
}

/// `ablate`: one run per variant plus a combined comparison table.
pub fn cmd_ablate(
    config_path: &Path,
    kind: &str,
    out_override: Option<&str>,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let file = load_experiment(config_path, out_override, seed_override)?;
    let base_dir = Path::new(&file.outputs.dir).to_path_buf();
    let preset = file.build_preset()?;
    let base_cfg = file.train_config()?;

    let variants: Vec<(String, opdlab_core::trainer::TrainConfig)> = match kind {
        "support" => [
            SupportRule::StudentTopK(base_cfg.k),
            SupportRule::OverlapTopK(base_cfg.k),
            SupportRule::NonOverlapTopK(base_cfg.k),
        ]
        .into_iter()
        .map(|rule| (rule.label(), opdlab_core::trainer::TrainConfig { rule, ..base_cfg.clone() }))
        .collect(),
        "ksweep" => {
            let section = file.ablate.clone().unwrap_or(crate::config::AblateSection {
                ks: vec![1, 4, 16],
                include_sampled: true,
            });
            let mut out: Vec<(String, opdlab_core::trainer::TrainConfig)> = section
                .ks
                .iter()
                .map(|&k| {
                    (
                        format!("top{k}"),
                        opdlab_core::trainer::TrainConfig { rule: SupportRule::StudentTopK(k), k, ..base_cfg.clone() },
                    )
                })
                .collect();
            if section.include_sampled {
                out.push((
                    "sampled".into(),
                    opdlab_core::trainer::TrainConfig { rule: SupportRule::SampledToken, ..base_cfg.clone() },
                ));
            }
            out
        }
        other => return Err(CliError::Config(format!("unknown ablation kind `{other}` (expected support|ksweep)"))),
    };

    let mut logs = Vec::new();
    for (label, cfg) in &variants {
        let dir = base_dir.join(label);
        let mut variant_file = file.clone();
        variant_file.train.rule = match cfg.rule {
            SupportRule::FullVocab => "full_vocab".into(),
            SupportRule::SampledToken => "sampled_token".into(),
            SupportRule::StudentTopK(_) => "student_topk".into(),
            SupportRule::OverlapTopK(_) => "overlap_topk".into(),
            SupportRule::NonOverlapTopK(_) => "non_overlap_topk".into(),
        };
        variant_file.train.k = cfg.k;
        let started = Instant::now();
        let log = trainer::opd_train(&preset, cfg).map_err(map_train_error)?;
        persist::write_run(&dir, &variant_file.echo_toml()?, &log, started.elapsed().as_millis())?;
        if file.outputs.formats.iter().any(|f| f == "csv") {
            export_csv(&dir)?;
        }
        logs.push((label.clone(), log));
    }

    write_comparison(&base_dir, &logs)?;
    println!(
        "ablation `{kind}` complete: {} variants in {}",
        logs.len(),
        base_dir.display()
    );
    Ok(())
}

/// Comparison table joined on evaluation step: accuracy and gap recovery
/// per variant, plus the per-step overlap ratio and entropy gap at those
/// steps.
fn write_comparison(dir: &Path, logs: &[(String, RunLog)]) -> Result<(), CliError> {
    let path = dir.join("comparison.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(format!("comparison.csv: {e}")))?;
    let mut header = vec!["step".to_string()];
    for (label, _) in logs {
        header.push(format!("{label}_accuracy"));
        header.push(format!("{label}_gap_recovery"));
        header.push(format!("{label}_overlap_ratio"));
        header.push(format!("{label}_entropy_gap"));
    }
    writer
        .write_record(&header)
        .map_err(|e| CliError::Runtime(format!("comparison.csv: {e}")))?;

    let eval_steps: Vec<usize> = logs[0].1.evals.iter().map(|e| e.step).collect();
    for (row_idx, step) in eval_steps.iter().enumerate() {
        let mut row = vec![step.to_string()];
        for (_, log) in logs {
            let eval = &log.evals[row_idx];
            row.push(format!("{}", eval.accuracy));
            row.push(eval.gap_recovery_rate.map(|g| format!("{g}")).unwrap_or_default());
            // Snapshot at the step preceding the evaluation boundary.
            let snap = if *step == 0 { &log.snapshots[0] } else { &log.snapshots[step - 1] };
            row.push(format!("{}", snap.overlap_ratio));
            row.push(format!("{}", snap.entropy_gap));
        }
        writer
            .write_record(&row)
            .map_err(|e| CliError::Runtime(format!("comparison.csv: {e}")))?;
    }
    writer.flush().map_err(|e| CliError::Runtime(format!("comparison.csv: {e}")))?;

    #[derive(Serialize)]
    struct VariantSummary {
        label: String,
        final_accuracy: f64,
        initial_accuracy: f64,
        overlap_gain: f64,
    }
    let summaries: Vec<VariantSummary> = logs
        .iter()
        .map(|(label, log)| VariantSummary {
            label: label.clone(),
            final_accuracy: log.final_accuracy(),
            initial_accuracy: log.initial_accuracy(),
            overlap_gain: log.snapshots.last().unwrap().overlap_ratio - log.snapshots[0].overlap_ratio,
        })
        .collect();
    let json = serde_json::to_string_pretty(&summaries).map_err(|e| CliError::Runtime(format!("summary: {e}")))?;
    fs::write(dir.join("comparison_summary.json"), json).map_err(|e| CliError::Runtime(format!("summary: {e}")))?;
    Ok(())
}

/// `export`: convert a run directory's logs to CSV.
pub fn cmd_export(run_dir: &Path, format: &str) -> Result<(), CliError> {
    if format != "csv" {
        return Err(CliError::Config(format!("unknown export format `{format}` (expected csv)")));
    }
    let written = export_csv(run_dir)?;
    println!("exported {} file(s) in {}: {}", written.len(), run_dir.display(), written.join(", "));
    Ok(())
}

/// `verify`: run the fast oracle suite; nonzero exit when any check fails.
pub fn cmd_verify() -> Result<(), CliError> {
    let perturb = std::env::var("OPDLAB_VERIFY_PERTURB").is_ok_and(|v| v == "1");
    if perturb {
        println!("note: OPDLAB_VERIFY_PERTURB=1 corrupts one gradient entry on purpose");
    }
    let report = opdlab_core::verify::run_all(perturb);
    for check in &report.checks {
        let verdict = if check.passed { "pass" } else { "FAIL" };
        println!("{verdict}  {}  {}", check.name, check.detail);
    }
    if report.all_passed() {
        println!("verification passed ({} checks)", report.checks.len());
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(CliError::Verify(format!("{} check(s) failed: {}", failed.len(), failed.join(", "))))
    }
}
