//! Scenario files: a cluster, a workload and a timed script of API calls.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use chpc_api::dispatch::OPS;
use chpc_core::model::{AppKind, ApplicationSpec, EnvironmentImage, NodeSpec};
use chpc_core::platform::Mode;

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Owner used for apps that do not name one.
pub const DEFAULT_OWNER: &str = "user";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: u64,
    /// Warning time between Draining and a walltime Terminating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grace_s: Option<u64>,
    #[serde(default)]
    pub cluster: Vec<NodeSpec>,
    #[serde(default)]
    pub images: Vec<EnvironmentImage>,
    #[serde(default)]
    pub apps: Vec<ScenarioApp>,
    #[serde(default)]
    pub script: Vec<ScriptStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioApp {
    #[serde(default)]
    pub submit_at_s: u64,
    #[serde(default = "default_owner")]
    pub owner: String,
    #[serde(flatten)]
    pub spec: ApplicationSpec,
}

fn default_owner() -> String {
    DEFAULT_OWNER.into()
}

/// One API call issued at `at_s`. Without `tenant` it runs in an operator
/// session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub at_s: u64,
    pub op: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tenant: Option<String>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_owned(),
            source,
        })?;
        let sc = Self::parse(&text, path)?;
        sc.validate()?;
        Ok(sc)
    }

    /// Parses without validating. `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        serde_yaml::from_str(text).map_err(|e| {
            let (line, column) = e
                .location()
                .map(|l| (l.line(), l.column()))
                .unwrap_or((0, 0));
            HarnessError::Parse {
                path: path.to_owned(),
                line,
                column,
                message: e.to_string(),
            }
        })
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("scenarios serialize")
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_s.saturating_mul(1000)
    }

    pub fn validate(&self) -> Result<()> {
        fn bad(field: impl Into<String>, message: impl Into<String>) -> HarnessError {
            HarnessError::validation(field, message)
        }
        if self.schema != SCHEMA_VERSION {
            return Err(bad(
                "schema",
                format!("unsupported version {}", self.schema),
            ));
        }
        if self.duration_s.checked_mul(1000).is_none() {
            return Err(bad("duration_s", "too large"));
        }

        let mut nodes = BTreeSet::new();
        for (i, n) in self.cluster.iter().enumerate() {
            n.validate()
                .map_err(|e| bad(format!("cluster[{i}]"), e.to_string()))?;
            if !nodes.insert(n.node_id.as_str()) {
                return Err(bad(
                    format!("cluster[{i}].node_id"),
                    format!("duplicate {}", n.node_id),
                ));
            }
        }

        let mut images = BTreeSet::new();
        for (i, img) in self.images.iter().enumerate() {
            if !images.insert(img.image_id.as_str()) {
                return Err(bad(
                    format!("images[{i}].image_id"),
                    format!("duplicate {}", img.image_id),
                ));
            }
        }

        let mut apps = BTreeSet::new();
        for (i, a) in self.apps.iter().enumerate() {
            let field = |f: &str| format!("apps[{i}].{f}");
            a.spec
                .validate()
                .map_err(|e| bad(format!("apps[{i}]"), e.to_string()))?;
            if !apps.insert(a.spec.app_id.as_str()) {
                return Err(bad(field("app_id"), format!("duplicate {}", a.spec.app_id)));
            }
            if let Some(img) = &a.spec.image {
                if !images.contains(img.as_str()) {
                    return Err(bad(field("image"), format!("unknown image {img}")));
                }
            }
            if a.submit_at_s > self.duration_s {
                return Err(bad(field("submit_at_s"), "after the end of the scenario"));
            }
            if a.owner.is_empty() {
                return Err(bad(field("owner"), "empty"));
            }
        }

        for (i, s) in self.script.iter().enumerate() {
            let field = |f: &str| format!("script[{i}].{f}");
            if s.op == "hello" || !OPS.contains(&s.op.as_str()) {
                return Err(bad(field("op"), format!("unknown op {}", s.op)));
            }
            if s.at_s > self.duration_s {
                return Err(bad(field("at_s"), "after the end of the scenario"));
            }
            if !(s.payload.is_null() || s.payload.is_object()) {
                return Err(bad(field("payload"), "must be a mapping"));
            }
            if let Some(Value::String(app)) = s.payload.get("app_id") {
                if !apps.contains(app.as_str()) {
                    return Err(bad(field("payload.app_id"), format!("unknown app {app}")));
                }
            }
            if let Some(Value::String(node)) = s.payload.get("node_id") {
                if !nodes.contains(node.as_str()) {
                    return Err(bad(
                        field("payload.node_id"),
                        format!("unknown node {node}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// True when every app is a native batch job.
    pub fn native_only(&self) -> bool {
        self.apps.iter().all(|a| a.spec.kind == AppKind::Native)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema: 1
duration_s: 100
cluster:
  - node_id: n0
    capacity: {cpu_cores: 4, memory_bytes: 1000}
apps:
  - app_id: a
    kind: native
    task_count: 1
    per_task_reservation: {cpu_cores: 2, memory_bytes: 10}
    walltime_limit_s: 50
    trace:
      - {kind: compute, work_amount: 20, demand: {cpu_cores: 2}, emits_state: Running, progress_at_end: 1.0}
script:
  - {at_s: 5, op: status, payload: {app_id: a}}
"#;

    fn parse(text: &str) -> Result<Scenario> {
        Scenario::parse(text, Path::new("t.yaml"))
    }

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let sc = parse(MINIMAL).unwrap();
        sc.validate().unwrap();
        assert_eq!(sc.mode, Mode::Symmetric);
        assert_eq!(sc.apps[0].owner, DEFAULT_OWNER);
        assert_eq!(sc.apps[0].submit_at_s, 0);
        assert_eq!(sc.apps[0].spec.trace.phases[0].work_amount, 20);
        let back = parse(&sc.to_yaml()).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn parse_errors_carry_a_location() {
        let err = parse("schema: 1\nduration_s: [\n").unwrap_err();
        assert!(
            matches!(err, HarnessError::Parse { line, .. } if line >= 2),
            "{err}"
        );
        let err = parse("schema: 1\nduration_s: 5\nbogus: 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn validation_names_the_field() {
        let check = |from: &str, to: &str, field: &str| {
            let sc = parse(&MINIMAL.replace(from, to)).unwrap();
            match sc.validate() {
                Err(HarnessError::Validation { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected validation error on {field}, got {other:?}"),
            }
        };
        check("schema: 1", "schema: 2", "schema");
        check("at_s: 5", "at_s: 500", "script[0].at_s");
        check("app_id: a}", "app_id: zz}", "script[0].payload.app_id");
        check("op: status", "op: launch", "script[0].op");
        check(
            "kind: native",
            "kind: container\n    image: nope",
            "apps[0].image",
        );
        check("kind: native", "kind: container", "apps[0]");
        check(
            "walltime_limit_s: 50",
            "walltime_limit_s: 50\n    submit_at_s: 101",
            "apps[0].submit_at_s",
        );
    }
}
