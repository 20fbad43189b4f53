//! Run-directory persistence: line-delimited records, checkpoints, and the
//! run summary.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use opdlab_core::policy::{TabularSoftmaxPolicy, TokenId, Vocabulary};
use opdlab_core::trainer::RunLog;

use crate::CliError;

pub const STEP_LOG: &str = "steps.jsonl";
pub const EVAL_LOG: &str = "evals.jsonl";
pub const PROFILE_LOG: &str = "profiles.jsonl";
pub const CONFIG_ECHO: &str = "config_echo.toml";
pub const POLICY_INIT: &str = "policy_init.json";
pub const POLICY_FINAL: &str = "policy_final.json";
pub const RUN_SUMMARY: &str = "run_summary.json";
pub const REWARDS_LOG: &str = "rewards.jsonl";
pub const REWARD_SUMMARY: &str = "reward_separation.json";
pub const DEPTH_SUMMARY: &str = "depth_probe.json";

/// Versioned, self-describing serialization of a policy table.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub vocab_size: u32,
    pub answer_marker: TokenId,
    pub stop: TokenId,
    pub pad: TokenId,
    pub order: usize,
    pub temperature: f64,
    pub default_logits: Vec<f64>,
    pub rows: Vec<CheckpointRow>,
}

#[derive(Serialize, Deserialize)]
pub struct CheckpointRow {
    pub ctx: Vec<TokenId>,
    pub logits: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_policy(policy: &TabularSoftmaxPolicy) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            vocab_size: policy.vocab().size(),
            answer_marker: policy.vocab().answer_marker(),
            stop: policy.vocab().stop(),
            pad: policy.vocab().pad(),
            order: policy.order(),
            temperature: policy.temperature(),
            default_logits: policy.default_logits().to_vec(),
            rows: policy
                .rows()
                .map(|(ctx, logits)| CheckpointRow { ctx: ctx.window().to_vec(), logits: logits.clone() })
                .collect(),
        }
    }

    pub fn into_policy(self) -> Result<TabularSoftmaxPolicy, CliError> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(CliError::Runtime(format!(
                "checkpoint format version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        let vocab = Vocabulary::new(self.vocab_size, self.answer_marker, self.stop, self.pad)
            .map_err(|e| CliError::Runtime(format!("checkpoint vocabulary: {e}")))?;
        let mut policy = TabularSoftmaxPolicy::new(vocab, self.order, self.temperature);
        policy
            .set_default_logits(self.default_logits)
            .map_err(|e| CliError::Runtime(format!("checkpoint default row: {e}")))?;
        for row in self.rows {
            policy
                .set_row(opdlab_core::Context::new(row.ctx), row.logits)
                .map_err(|e| CliError::Runtime(format!("checkpoint row: {e}")))?;
        }
        Ok(policy)
    }
}

#[derive(Serialize, Deserialize)]
pub struct RunSummary {
    pub status: String,
    pub scenario: String,
    pub steps_completed: usize,
    pub teacher_accuracy: f64,
    pub final_accuracy: f64,
    pub wall_time_ms: u128,
    pub policy_init: String,
    pub policy_final: String,
}

/// Writes one JSON record per line; each line is a single write so a killed
/// process never leaves a truncated record.
pub struct LineWriter {
    file: File,
}

impl LineWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::Runtime(format!("open {}: {e}", path.display())))?;
        Ok(Self { file })
    }

    pub fn write_record<T: Serialize>(&mut self, record: &T) -> Result<(), CliError> {
        let mut line = serde_json::to_string(record).map_err(|e| CliError::Runtime(format!("serialize record: {e}")))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|e| CliError::Runtime(format!("append record: {e}")))?;
        self.file.flush().map_err(|e| CliError::Runtime(format!("flush record: {e}")))?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
pub struct ProfileRecord {
    pub step: usize,
    pub bin_width: usize,
    pub bins: Vec<opdlab_core::diagnostics::PositionBin>,
}

pub fn write_run(dir: &Path, echo: &str, log: &RunLog, wall_time_ms: u128) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("create {}: {e}", dir.display())))?;
    fs::write(dir.join(CONFIG_ECHO), echo).map_err(|e| CliError::Runtime(format!("write config echo: {e}")))?;

    let mut steps = LineWriter::create(&dir.join(STEP_LOG))?;
    for snapshot in &log.snapshots {
        steps.write_record(snapshot)?;
    }
    let mut evals = LineWriter::create(&dir.join(EVAL_LOG))?;
    for record in &log.evals {
        evals.write_record(record)?;
    }
    let mut profiles = LineWriter::create(&dir.join(PROFILE_LOG))?;
    for (step, profile) in &log.profiles {
        profiles.write_record(&ProfileRecord {
            step: *step,
            bin_width: profile.bin_width,
            bins: profile.bins.clone(),
        })?;
    }

    write_checkpoint(&dir.join(POLICY_INIT), &log.initial_policy)?;
    write_checkpoint(&dir.join(POLICY_FINAL), &log.final_policy)?;

    let summary = RunSummary {
        status: "ok".into(),
        scenario: log.scenario.clone(),
        steps_completed: log.snapshots.len(),
        teacher_accuracy: log.teacher_accuracy,
        final_accuracy: log.final_accuracy(),
        wall_time_ms,
        policy_init: POLICY_INIT.into(),
        policy_final: POLICY_FINAL.into(),
    };
    let summary_json =
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(format!("serialize summary: {e}")))?;
    fs::write(dir.join(RUN_SUMMARY), summary_json).map_err(|e| CliError::Runtime(format!("write summary: {e}")))?;
    Ok(())
}

pub fn write_checkpoint(path: &Path, policy: &TabularSoftmaxPolicy) -> Result<(), CliError> {
    let checkpoint = Checkpoint::from_policy(policy);
    let json = serde_json::to_string(&checkpoint).map_err(|e| CliError::Runtime(format!("serialize checkpoint: {e}")))?;
    fs::write(path, json).map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TabularSoftmaxPolicy, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))?;
    let checkpoint: Checkpoint =
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("parse {}: {e}", path.display())))?;
    checkpoint.into_policy()
}

/// Reads a line-delimited record file back into memory.
pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("read {}: {e}", path.display())))?;
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(|e| CliError::Runtime(format!("parse {}: {e}", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use opdlab_core::Context;

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let vocab = Vocabulary::with_reserved_prefix(8).unwrap();
        let mut policy = TabularSoftmaxPolicy::new(vocab, 2, 0.7);
        policy
            .set_row(Context::new(vec![3, 4]), vec![0.1, -0.25, 3.5e-17, 1.0 / 3.0, 2.0, -9.9, 0.0, 7.25])
            .unwrap();
        policy.set_default_logits(vec![0.625; 8]).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        write_checkpoint(&path, &policy).unwrap();
        let restored = read_checkpoint(&path).unwrap();

        assert_eq!(policy.order(), restored.order());
        assert_eq!(policy.temperature(), restored.temperature());
        assert_eq!(policy.default_logits(), restored.default_logits());
        let rows_a: Vec<_> = policy.rows().collect();
        let rows_b: Vec<_> = restored.rows().collect();
        assert_eq!(rows_a.len(), rows_b.len());
        for ((ctx_a, row_a), (ctx_b, row_b)) in rows_a.iter().zip(&rows_b) {
            assert_eq!(ctx_a, ctx_b);
            for (a, b) in row_a.iter().zip(row_b.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        // Re-emitting produces the identical byte stream.
        let text_a = std::fs::read(&path).unwrap();
        write_checkpoint(&path, &restored).unwrap();
        let text_b = std::fs::read(&path).unwrap();
        assert_eq!(text_a, text_b);
    }

    #[test]
    fn future_checkpoint_versions_fail_loudly() {
        let vocab = Vocabulary::with_reserved_prefix(8).unwrap();
        let policy = TabularSoftmaxPolicy::new(vocab, 1, 1.0);
        let mut checkpoint = Checkpoint::from_policy(&policy);
        checkpoint.format_version = 999;
        let err = checkpoint.into_policy().unwrap_err();
        assert!(err.to_string().contains("format version"), "{err}");
    }
}
