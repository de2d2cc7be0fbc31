//! User-defined transforms run as external processes.
//!
//! Wire protocol: input tables go to standard input as CSV blocks separated
//! by a line `---`; params and the seed are passed as `key=value` arguments;
//! the process answers on standard output in the same block format, one block
//! per output slot. A non-zero exit status fails the transform.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::Deserialize;

use crate::model::Table;
use crate::ssvd::Params;

use super::integrate::{group_labels, pair_by_id};
use super::*;

const ENV_ALLOWLIST: [&str; 6] = ["PATH", "HOME", "LANG", "LC_ALL", "TMPDIR", "SYSTEMROOT"];
const STDERR_EXCERPT: usize = 2000;

/// Process cap and wall-clock limit shared by every plugin.
#[derive(Debug)]
pub struct PluginLimits {
    pub timeout: Duration,
    pub max_processes: usize,
    running: Mutex<usize>,
    freed: Condvar,
}

impl PluginLimits {
    pub fn new(timeout: Duration, max_processes: usize) -> Self {
        PluginLimits {
            timeout,
            max_processes: max_processes.max(1),
            running: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.running.lock();
        while *n >= self.max_processes {
            self.freed.wait(&mut n);
        }
        *n += 1;
        Permit(self)
    }
}

impl Default for PluginLimits {
    fn default() -> Self {
        PluginLimits::new(Duration::from_secs(300), 8)
    }
}

struct Permit<'a>(&'a PluginLimits);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.running.lock() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum ArityField {
    Count(usize),
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestParam {
    key: String,
    #[serde(rename = "type")]
    kind: ParamKind,
    #[serde(default)]
    required: bool,
}

/// Contents of a `transforms.d/<id>.yaml` registration file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PluginManifest {
    pub id: String,
    pub exec: PathBuf,
    input_arity: ArityField,
    pub output_arity: usize,
    #[serde(default)]
    params: Vec<ManifestParam>,
    #[serde(default)]
    pub seeded: bool,
    #[serde(default)]
    pub timeout_secs: Option<u64>,
}

impl PluginManifest {
    fn arity(&self) -> Result<Arity, TransformError> {
        match &self.input_arity {
            ArityField::Count(0) => Err(TransformError::Io("input_arity must be at least 1".into())),
            ArityField::Count(n) => Ok(Arity::Exactly(*n)),
            ArityField::Word(w) if w == "variadic" => Ok(Arity::AtLeast(2)),
            ArityField::Word(w) => Err(TransformError::Io(format!("bad input_arity {w:?}"))),
        }
    }
}

pub struct PluginTransform {
    desc: TransformDescriptor,
    exec: PathBuf,
    timeout: Duration,
    limits: Arc<PluginLimits>,
}

impl PluginTransform {
    pub fn new(manifest: PluginManifest, base: &Path, limits: Arc<PluginLimits>) -> Result<Self, TransformError> {
        if manifest.output_arity == 0 {
            return Err(TransformError::Io("output_arity must be at least 1".into()));
        }
        let exec = if manifest.exec.is_absolute() {
            manifest.exec.clone()
        } else {
            base.join(&manifest.exec)
        };
        let mut param_schema: Vec<ParamSpec> = manifest
            .params
            .iter()
            .map(|p| ParamSpec::new(&p.key, p.kind, p.required))
            .collect();
        param_schema.sort_by(|a, b| a.key.cmp(&b.key));
        Ok(PluginTransform {
            desc: TransformDescriptor {
                transform_id: manifest.id.clone(),
                input_arity: manifest.arity()?,
                output_arity: manifest.output_arity,
                param_schema,
                deterministic: true,
                seeded: manifest.seeded,
                granularity: Granularity::ObjectLevel,
                exec: Some(exec.display().to_string()),
            },
            exec,
            timeout: manifest
                .timeout_secs
                .map(Duration::from_secs)
                .unwrap_or(limits.timeout),
            limits,
        })
    }

    fn args(&self, params: &Params, seed: u64) -> Vec<String> {
        let mut args: Vec<String> = params.iter().map(|(k, v)| format!("{k}={}", v.to_arg())).collect();
        if self.desc.seeded {
            args.push(format!("seed={seed}"));
        }
        args
    }

    fn invoke(&self, tables: &[&Table], params: &Params, seed: u64) -> Result<Vec<Table>, TransformError> {
        let _permit = self.limits.acquire();
        let out = run_external(&self.exec, tables, &self.args(params, seed), self.timeout)?;
        if out.len() != self.desc.output_arity {
            return Err(TransformError::ProtocolViolation(format!(
                "expected {} output blocks, got {}",
                self.desc.output_arity,
                out.len()
            )));
        }
        Ok(out)
    }
}

pub fn load_plugin_file(path: &Path, limits: Arc<PluginLimits>) -> Result<PluginTransform, TransformError> {
    let text = std::fs::read_to_string(path).map_err(|e| TransformError::Io(format!("{}: {e}", path.display())))?;
    let manifest: PluginManifest =
        serde_yaml::from_str(&text).map_err(|e| TransformError::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    PluginTransform::new(manifest, base, limits)
}

fn encode_blocks(tables: &[&Table]) -> Vec<u8> {
    let mut buf = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            buf.extend_from_slice(b"---\n");
        }
        buf.extend_from_slice(t.to_csv().as_bytes());
    }
    buf
}

fn decode_blocks(bytes: &[u8]) -> Result<Vec<Table>, TransformError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| TransformError::ProtocolViolation("output is not UTF-8".into()))?;
    if text.is_empty() {
        return Err(TransformError::ProtocolViolation("empty output".into()));
    }
    let mut blocks: Vec<String> = vec![String::new()];
    for line in text.split_inclusive('\n') {
        if line.trim_end_matches(['\n', '\r']) == "---" {
            blocks.push(String::new());
        } else {
            blocks.last_mut().expect("non-empty").push_str(line);
        }
    }
    blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            Table::from_csv(b.as_bytes())
                .map_err(|e| TransformError::ProtocolViolation(format!("block {i}: {e}")))
        })
        .collect()
}

fn excerpt(bytes: &[u8]) -> String {
    let text = String::from_utf8_lossy(bytes);
    let start = text.len().saturating_sub(STDERR_EXCERPT);
    let start = (start..text.len()).find(|&i| text.is_char_boundary(i)).unwrap_or(0);
    text[start..].trim().to_string()
}

/// Runs `exec` once on `tables` and returns its output blocks.
pub fn run_external(
    exec: &Path,
    tables: &[&Table],
    args: &[String],
    timeout: Duration,
) -> Result<Vec<Table>, TransformError> {
    let mut cmd = Command::new(exec);
    cmd.args(args)
        .env_clear()
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    for key in ENV_ALLOWLIST {
        if let Some(v) = std::env::var_os(key) {
            cmd.env(key, v);
        }
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| TransformError::Io(format!("cannot start {}: {e}", exec.display())))?;

    let input = encode_blocks(tables);
    let mut stdin = child.stdin.take().expect("piped");
    let writer = std::thread::spawn(move || {
        // The plugin may exit without reading everything.
        let _ = stdin.write_all(&input);
    });
    let mut stdout = child.stdout.take().expect("piped");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        stdout.read_to_end(&mut buf).map(|_| buf)
    });
    let mut stderr = child.stderr.take().expect("piped");
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let deadline = Instant::now() + timeout;
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(TransformError::Timeout(timeout));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(TransformError::Io(e.to_string())),
        }
    };
    let _ = writer.join();
    let stdout = out_reader
        .join()
        .expect("reader thread")
        .map_err(|e| TransformError::Io(e.to_string()))?;
    let stderr = err_reader.join().expect("reader thread");
    if !status.success() {
        return Err(TransformError::PluginCrashed {
            status: status.to_string(),
            stderr: excerpt(&stderr),
        });
    }
    decode_blocks(&stdout)
}

impl Transform for PluginTransform {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn plan(&self, inputs: &[InputMeta], _params: &Params, _seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let groups = pair_by_id(inputs)?;
        let objects: Vec<PlannedObject> = groups
            .into_iter()
            .map(|group| PlannedObject {
                id: PlannedId::Keep(inputs[0].objects[group[0].ordinal].object_id.clone()),
                labels: group_labels(inputs, &group),
                sources: group,
                segment: None,
                row_count: None,
                schema: None,
            })
            .collect();
        Ok((0..self.desc.output_arity)
            .map(|_| SlotPlan {
                schemas: Vec::new(),
                objects: PlannedObjects::Listed(objects.clone()),
            })
            .collect())
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, params: &Params, seed: u64) -> Result<Table, TransformError> {
        let tables: Vec<&Table> = cx.sources.iter().map(|s| s.table).collect();
        let mut out = self.invoke(&tables, params, seed)?;
        Ok(out.swap_remove(cx.slot))
    }

    fn compute_dataset(
        &self,
        inputs: &[InputPayload<'_>],
        slots: &[SlotPlan],
        params: &Params,
        seed: u64,
    ) -> Result<Vec<Vec<Table>>, TransformError> {
        let groups: Vec<Vec<SourceRef>> = slots[0].objects.iter().map(|p| p.sources).collect();
        let mut results: Vec<Option<Result<Vec<Table>, TransformError>>> = (0..groups.len()).map(|_| None).collect();
        let chunk = self.limits.max_processes.max(1);
        for (ci, batch) in groups.chunks(chunk).enumerate() {
            std::thread::scope(|scope| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|group| {
                        scope.spawn(move || {
                            let tables: Vec<&Table> =
                                group.iter().map(|s| &inputs[s.input].tables[s.ordinal]).collect();
                            self.invoke(&tables, params, seed)
                        })
                    })
                    .collect();
                for (k, h) in handles.into_iter().enumerate() {
                    results[ci * chunk + k] = Some(h.join().expect("plugin worker"));
                }
            });
        }
        let mut per_slot: Vec<Vec<Table>> = (0..slots.len()).map(|_| Vec::with_capacity(groups.len())).collect();
        for r in results {
            for (s, t) in r.expect("every group ran")?.into_iter().enumerate() {
                per_slot[s].push(t);
            }
        }
        Ok(per_slot)
    }
}
