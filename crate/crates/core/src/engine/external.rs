//! Multi-language function protocol over subprocesses.
//!
//! Per invocation, inputs are written as header-bearing CSV files (plus a
//! `.schema.json` sidecar each) into a fresh private temp dir. The child
//! finds them through `BPLN_INPUT_<TABLENAME>` (table name uppercased) and,
//! in model mode, writes its output CSV to the path in `BPLN_OUTPUT` along
//! with `BPLN_OUTPUT.schema.json`. Expectation mode instead prints
//! `{"pass": true|false}` on stdout. Exit code 0 is required either way.
//!
//! The full wire contract lives in `docs/function-protocol.md`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::tables::{codec, Relation, Schema};

use super::check::ExternalFunction;
use super::EngineError;

pub const DEFAULT_TIMEOUT_SECS: u64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionMode {
    Expectation,
    Model,
}

#[derive(Debug, Clone)]
pub struct InvokeOptions {
    pub timeout: Duration,
    /// Working directory for the child, usually the project root so the
    /// command can reference sibling files.
    pub workdir: Option<PathBuf>,
}

impl Default for InvokeOptions {
    fn default() -> Self {
        InvokeOptions {
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            workdir: None,
        }
    }
}

#[derive(Debug)]
pub enum FunctionOutcome {
    Pass(bool),
    Table(Relation),
}

fn write_input(dir: &Path, name: &str, rel: &Relation) -> Result<PathBuf, EngineError> {
    let csv_path = dir.join(format!("input_{name}.csv"));
    fs::write(&csv_path, codec::encode_csv_with_header(rel))?;
    let schema_json = serde_json::to_vec(rel.schema())
        .map_err(|e| EngineError::Internal(e.to_string()))?;
    fs::write(dir.join(format!("input_{name}.csv.schema.json")), schema_json)?;
    Ok(csv_path)
}

/// Run an external function over its declared inputs. The temp dir is fresh
/// per invocation and the child sees nothing but the env vars and files
/// written here — the function cannot observe catalog state beyond its
/// inputs.
pub fn invoke_external_function(
    spec: &ExternalFunction,
    inputs: &BTreeMap<String, Relation>,
    mode: FunctionMode,
    opts: &InvokeOptions,
) -> Result<FunctionOutcome, EngineError> {
    if spec.command.is_empty() {
        return Err(EngineError::Protocol("empty command".into()));
    }
    let dir = tempfile::tempdir()?;
    let mut cmd = Command::new(&spec.command[0]);
    cmd.args(&spec.command[1..]);

    for (name, rel) in inputs {
        let path = write_input(dir.path(), name, rel)?;
        cmd.env(
            format!("BPLN_INPUT_{}", name.to_uppercase()),
            path.canonicalize()?,
        );
    }
    let output_path = dir.path().join("output.csv");
    if mode == FunctionMode::Model {
        cmd.env("BPLN_OUTPUT", &output_path);
    }
    if let Some(wd) = &opts.workdir {
        cmd.current_dir(wd);
    } else {
        cmd.current_dir(dir.path());
    }

    let stdout_path = dir.path().join("stdout");
    let stderr_path = dir.path().join("stderr");
    cmd.stdin(Stdio::null());
    cmd.stdout(Stdio::from(File::create(&stdout_path)?));
    cmd.stderr(Stdio::from(File::create(&stderr_path)?));

    let mut child = cmd.spawn().map_err(|e| {
        EngineError::Protocol(format!("cannot spawn '{}': {e}", spec.command[0]))
    })?;
    let started = Instant::now();
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None => {
                if started.elapsed() >= opts.timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(EngineError::Timeout(opts.timeout.as_secs()));
                }
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    };

    if !status.success() {
        let stderr = fs::read_to_string(&stderr_path).unwrap_or_default();
        return Err(EngineError::NonZeroExit {
            code: status.code().unwrap_or(-1),
            stderr: stderr.trim_end().to_string(),
        });
    }

    match mode {
        FunctionMode::Expectation => {
            let stdout = fs::read_to_string(&stdout_path)?;
            let parsed: serde_json::Value = serde_json::from_str(stdout.trim()).map_err(|e| {
                EngineError::Protocol(format!("stdout is not the expected JSON verdict: {e}"))
            })?;
            match parsed.get("pass").and_then(|v| v.as_bool()) {
                Some(b) => Ok(FunctionOutcome::Pass(b)),
                None => Err(EngineError::Protocol(
                    "verdict JSON lacks a boolean \"pass\" field".into(),
                )),
            }
        }
        FunctionMode::Model => {
            let schema_path = dir.path().join("output.csv.schema.json");
            let schema_bytes = fs::read(&schema_path).map_err(|_| {
                EngineError::Protocol("model wrote no output schema (BPLN_OUTPUT.schema.json)".into())
            })?;
            let schema: Schema = serde_json::from_slice(&schema_bytes)
                .map_err(|e| EngineError::Protocol(format!("bad output schema: {e}")))?;
            schema
                .validate()
                .map_err(|e| EngineError::Protocol(format!("bad output schema: {e}")))?;
            let csv_bytes = fs::read(&output_path).map_err(|_| {
                EngineError::Protocol("model wrote no output CSV at BPLN_OUTPUT".into())
            })?;
            let rel = codec::decode_csv_with_header(&schema, &csv_bytes)
                .map_err(|e| EngineError::Protocol(format!("bad output CSV: {e}")))?;
            Ok(FunctionOutcome::Table(rel))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables::{ColumnType, Value};

    fn sample_inputs() -> BTreeMap<String, Relation> {
        let schema = Schema::new(vec![
            ("count", ColumnType::Int64),
            ("label", ColumnType::String),
        ])
        .unwrap();
        let rel = Relation::from_rows(
            schema,
            vec![
                vec![Value::Int(12), Value::Str("a".into())],
                vec![Value::Int(14), Value::Null],
            ],
        )
        .unwrap();
        let mut m = BTreeMap::new();
        m.insert("trips".to_string(), rel);
        m
    }

    fn sh(script: &str) -> ExternalFunction {
        ExternalFunction {
            command: vec!["sh".into(), "-c".into(), script.into()],
            requirements: BTreeMap::new(),
        }
    }

    #[test]
    fn expectation_reads_verdict_from_stdout() {
        let spec = sh("echo '{\"pass\": true}'");
        let out = invoke_external_function(
            &spec,
            &sample_inputs(),
            FunctionMode::Expectation,
            &InvokeOptions::default(),
        )
        .unwrap();
        assert!(matches!(out, FunctionOutcome::Pass(true)));

        let spec = sh("echo '{\"pass\": false}'");
        let out = invoke_external_function(
            &spec,
            &sample_inputs(),
            FunctionMode::Expectation,
            &InvokeOptions::default(),
        )
        .unwrap();
        assert!(matches!(out, FunctionOutcome::Pass(false)));
    }

    #[test]
    fn nonzero_exit_carries_stderr() {
        let spec = sh("echo boom >&2; exit 1");
        let err = invoke_external_function(
            &spec,
            &sample_inputs(),
            FunctionMode::Expectation,
            &InvokeOptions::default(),
        )
        .unwrap_err();
        match err {
            EngineError::NonZeroExit { code, stderr } => {
                assert_eq!(code, 1);
                assert_eq!(stderr, "boom");
            }
            other => panic!("expected NonZeroExit, got {other:?}"),
        }
    }

    #[test]
    fn malformed_verdict_is_a_protocol_error() {
        let spec = sh("echo not-json");
        assert!(matches!(
            invoke_external_function(
                &spec,
                &sample_inputs(),
                FunctionMode::Expectation,
                &InvokeOptions::default(),
            ),
            Err(EngineError::Protocol(_))
        ));
        let spec = sh("echo '{\"ok\": 1}'");
        assert!(matches!(
            invoke_external_function(
                &spec,
                &sample_inputs(),
                FunctionMode::Expectation,
                &InvokeOptions::default(),
            ),
            Err(EngineError::Protocol(_))
        ));
    }

    #[test]
    fn model_roundtrips_input_through_the_wire_format() {
        // Copy the input CSV and schema to the output location verbatim.
        let spec = sh(
            "cp \"$BPLN_INPUT_TRIPS\" \"$BPLN_OUTPUT\" && cp \"$BPLN_INPUT_TRIPS.schema.json\" \"$BPLN_OUTPUT.schema.json\"",
        );
        let inputs = sample_inputs();
        let out = invoke_external_function(
            &spec,
            &inputs,
            FunctionMode::Model,
            &InvokeOptions::default(),
        )
        .unwrap();
        match out {
            FunctionOutcome::Table(rel) => assert_eq!(&rel, inputs.get("trips").unwrap()),
            other => panic!("expected Table, got {other:?}"),
        }
    }

    #[test]
    fn timeout_kills_the_child() {
        let spec = sh("sleep 5");
        let opts = InvokeOptions {
            timeout: Duration::from_millis(100),
            workdir: None,
        };
        let started = Instant::now();
        let err = invoke_external_function(
            &spec,
            &sample_inputs(),
            FunctionMode::Expectation,
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::Timeout(_)));
        assert!(started.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn missing_model_output_is_a_protocol_error() {
        let spec = sh("true");
        assert!(matches!(
            invoke_external_function(
                &spec,
                &sample_inputs(),
                FunctionMode::Model,
                &InvokeOptions::default(),
            ),
            Err(EngineError::Protocol(_))
        ));
    }
}
