//! Plot-ready CSV export of a run directory, one file per metric family.

use std::fs;
use std::path::Path;

use opdlab_core::diagnostics::MetricsSnapshot;
use opdlab_core::trainer::EvalRecord;

use crate::persist::{self, ProfileRecord};
use crate::CliError;

fn opt(value: Option<f64>) -> String {
    value.map(format_f64).unwrap_or_default()
}

/// Shortest representation that parses back to the identical double.
fn format_f64(value: f64) -> String {
    let mut buffer = ryu_format(value);
    if buffer.ends_with(".0") {
        buffer.truncate(buffer.len() - 2);
    }
    buffer
}

fn ryu_format(value: f64) -> String {
    // serde_json uses ryu internally; reuse it for locale-free round-trip
    // formatting without an extra dependency.
    serde_json::to_string(&value).expect("finite f64")
}

pub fn export_csv(run_dir: &Path) -> Result<Vec<String>, CliError> {
    let mut written = Vec::new();

    let steps_path = run_dir.join(persist::STEP_LOG);
    if !steps_path.exists() {
        return Err(CliError::Runtime(format!(
            "{} has no step log ({})",
            run_dir.display(),
            persist::STEP_LOG
        )));
    }
    let snapshots: Vec<MetricsSnapshot> = persist::read_records(&steps_path)?;
    let mut writer = csv::Writer::from_path(run_dir.join("steps.csv"))
        .map_err(|e| CliError::Runtime(format!("steps.csv: {e}")))?;
    writer
        .write_record([
            "step",
            "overlap_ratio",
            "overlap_advantage",
            "entropy_student",
            "entropy_teacher",
            "entropy_gap",
            "overlap_mass_student",
            "overlap_mass_teacher",
            "loss",
            "grad_norm",
            "extreme_adv_prob_diff",
            "skipped_steps",
        ])
        .map_err(|e| CliError::Runtime(format!("steps.csv: {e}")))?;
    for s in &snapshots {
        writer
            .write_record([
                s.step.to_string(),
                format_f64(s.overlap_ratio),
                opt(s.overlap_advantage),
                format_f64(s.entropy_student),
                format_f64(s.entropy_teacher),
                format_f64(s.entropy_gap),
                format_f64(s.overlap_mass_student),
                format_f64(s.overlap_mass_teacher),
                format_f64(s.loss),
                format_f64(s.grad_norm),
                opt(s.extreme_adv_prob_diff),
                s.skipped_steps.to_string(),
            ])
            .map_err(|e| CliError::Runtime(format!("steps.csv: {e}")))?;
    }
    writer.flush().map_err(|e| CliError::Runtime(format!("steps.csv: {e}")))?;
    written.push("steps.csv".into());

    let evals_path = run_dir.join(persist::EVAL_LOG);
    if evals_path.exists() {
        let evals: Vec<EvalRecord> = persist::read_records(&evals_path)?;
        let mut writer = csv::Writer::from_path(run_dir.join("evals.csv"))
            .map_err(|e| CliError::Runtime(format!("evals.csv: {e}")))?;
        writer
            .write_record(["step", "accuracy", "gap_recovery_rate"])
            .map_err(|e| CliError::Runtime(format!("evals.csv: {e}")))?;
        for e in &evals {
            writer
                .write_record([e.step.to_string(), format_f64(e.accuracy), opt(e.gap_recovery_rate)])
                .map_err(|err| CliError::Runtime(format!("evals.csv: {err}")))?;
        }
        writer.flush().map_err(|e| CliError::Runtime(format!("evals.csv: {e}")))?;
        written.push("evals.csv".into());
    }

    let profiles_path = run_dir.join(persist::PROFILE_LOG);
    if profiles_path.exists() {
        let profiles: Vec<ProfileRecord> = persist::read_records(&profiles_path)?;
        let mut writer = csv::Writer::from_path(run_dir.join("profiles.csv"))
            .map_err(|e| CliError::Runtime(format!("profiles.csv: {e}")))?;
        writer
            .write_record(["step", "bin_start", "bin_end", "student_mean_entropy", "teacher_mean_entropy", "count"])
            .map_err(|e| CliError::Runtime(format!("profiles.csv: {e}")))?;
        for profile in &profiles {
            for bin in &profile.bins {
                writer
                    .write_record([
                        profile.step.to_string(),
                        bin.start.to_string(),
                        bin.end.to_string(),
                        format_f64(bin.student_mean_entropy),
                        format_f64(bin.teacher_mean_entropy),
                        bin.count.to_string(),
                    ])
                    .map_err(|e| CliError::Runtime(format!("profiles.csv: {e}")))?;
            }
        }
        writer.flush().map_err(|e| CliError::Runtime(format!("profiles.csv: {e}")))?;
        written.push("profiles.csv".into());
    }

    let rewards_path = run_dir.join(persist::REWARDS_LOG);
    if rewards_path.exists() {
        #[derive(serde::Deserialize)]
        struct RewardRecord {
            reward: f64,
            correct: bool,
        }
        let rewards: Vec<RewardRecord> = persist::read_records(&rewards_path)?;
        let mut writer = csv::Writer::from_path(run_dir.join("rewards.csv"))
            .map_err(|e| CliError::Runtime(format!("rewards.csv: {e}")))?;
        writer
            .write_record(["reward", "correct"])
            .map_err(|e| CliError::Runtime(format!("rewards.csv: {e}")))?;
        for r in &rewards {
            writer
                .write_record([format_f64(r.reward), r.correct.to_string()])
                .map_err(|e| CliError::Runtime(format!("rewards.csv: {e}")))?;
        }
        writer.flush().map_err(|e| CliError::Runtime(format!("rewards.csv: {e}")))?;
        written.push("rewards.csv".into());
    }

    let depth_path = run_dir.join(persist::DEPTH_SUMMARY);
    if depth_path.exists() {
        let text = fs::read_to_string(&depth_path).map_err(|e| CliError::Runtime(format!("read depth probe: {e}")))?;
        let probe: opdlab_core::trainer::DepthProbe =
            serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("parse depth probe: {e}")))?;
        let mut writer = csv::Writer::from_path(run_dir.join("depth_gains.csv"))
            .map_err(|e| CliError::Runtime(format!("depth_gains.csv: {e}")))?;
        writer
            .write_record(["depth", "teacher_accuracy", "student_accuracy", "gain", "used", "skipped"])
            .map_err(|e| CliError::Runtime(format!("depth_gains.csv: {e}")))?;
        for g in &probe.gains {
            writer
                .write_record([
                    g.depth.to_string(),
                    format_f64(g.teacher_accuracy),
                    format_f64(g.student_accuracy),
                    format_f64(g.gain),
                    g.used.to_string(),
                    g.skipped.to_string(),
                ])
                .map_err(|e| CliError::Runtime(format!("depth_gains.csv: {e}")))?;
        }
        writer.flush().map_err(|e| CliError::Runtime(format!("depth_gains.csv: {e}")))?;
        written.push("depth_gains.csv".into());
    }

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_formatting_round_trips_bitwise() {
        for value in [0.1, 1.0 / 3.0, 5e-324, 1e300, -0.0, 2.5, 0.30000000000000004] {
            let text = format_f64(value);
            let parsed: f64 = text.parse().unwrap();
            assert_eq!(parsed.to_bits(), value.to_bits(), "{value} -> {text}");
            assert!(!text.contains(','));
        }
    }
}
