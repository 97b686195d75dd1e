//! TOML scenario files.

use std::fmt;
use std::path::Path;

use oae_core::harness::{HarnessError, Scenario};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    /// The text is not valid TOML or does not match the schema.
    #[error("{}{message}", At(*line, *column))]
    Parse {
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
    /// The schema matched but a value is out of range.
    #[error("{}{field}: {reason}", At(*line, None))]
    Invalid {
        field: String,
        line: Option<usize>,
        reason: String,
    },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

struct At(Option<usize>, Option<usize>);

impl fmt::Display for At {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            At(Some(l), Some(c)) => write!(f, "line {l}, column {c}: "),
            At(Some(l), None) => write!(f, "line {l}: "),
            _ => Ok(()),
        }
    }
}

/// 1-based line and column of a byte offset.
fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Line holding `table.key` (dotted), or the table header if the key is
/// absent.
fn locate(text: &str, field: &str) -> Option<usize> {
    let (table, key) = match field.rsplit_once('.') {
        Some((t, k)) => (t, k),
        None => ("", field),
    };
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == table {
                header = Some(i + 1);
            }
            continue;
        }
        if current != table {
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            if k.trim().trim_matches('"') == key {
                return Some(i + 1);
            }
        }
    }
    header
}

fn field_of(e: &HarnessError) -> (String, String) {
    match e {
        HarnessError::Invalid { field, reason } => (field.to_string(), reason.clone()),
        HarnessError::Topology(t) => ("topology".into(), t.to_string()),
        HarnessError::Flap(f) => ("flap".into(), f.to_string()),
        HarnessError::Fito(f) => ("fito".into(), f.to_string()),
        HarnessError::Sync(s) => ("sync".into(), s.to_string()),
        HarnessError::NotSweepable(p) => ("sweep".into(), format!("{p} is not sweepable")),
    }
}

/// Parse and validate a scenario.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let s: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => {
                let (l, c) = position(text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        ScenarioError::Parse {
            line,
            column,
            message: e.message().trim().to_string(),
        }
    })?;
    s.validate().map_err(|e| {
        let (field, reason) = field_of(&e);
        ScenarioError::Invalid {
            line: locate(text, &field),
            field,
            reason,
        }
    })?;
    Ok(s)
}

pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_scenario(&text)
}

/// Serialize a scenario back to TOML.
pub fn to_toml(s: &Scenario) -> Result<String, toml::ser::Error> {
    toml::to_string(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "minimal"
seed = 7
horizon = 1000000
link_kind = "ae"

[topology]
kind = "single-link"

[workload]
transfers = 10
interval = 100000
"#;

    #[test]
    fn minimal_loads() {
        let s = load_scenario(MINIMAL).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.workload.transfers, 10);
    }

    #[test]
    fn missing_seed_names_field() {
        let text = MINIMAL.replace("seed = 7\n", "");
        let e = load_scenario(&text).unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
    }

    #[test]
    fn unknown_field_has_position() {
        let text = MINIMAL.replace("interval = 100000", "interval = 100000\nbogus = 1");
        match load_scenario(&text).unwrap_err() {
            ScenarioError::Parse { line, message, .. } => {
                assert_eq!(line, Some(13));
                assert!(message.contains("bogus"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn thin_grid_is_a_range_error() {
        let text = MINIMAL.replace(r#"kind = "single-link""#, "kind = \"grid\"\nrows = 1\ncols = 5");
        match load_scenario(&text).unwrap_err() {
            ScenarioError::Parse { line, message, .. } => {
                assert!(line.is_some());
                assert!(message.contains("2x2") || message.contains("2×2") || message.contains("rows"), "{message}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn range_error_points_at_line() {
        let text = MINIMAL.replace("interval = 100000", "interval = 100000\ndisturbance_probability = 1.5");
        match load_scenario(&text).unwrap_err() {
            ScenarioError::Invalid { field, line, .. } => {
                assert_eq!(field, "workload.disturbance_probability");
                assert_eq!(line, Some(13));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn round_trips() {
        let s = load_scenario(MINIMAL).unwrap();
        let again = load_scenario(&to_toml(&s).unwrap()).unwrap();
        assert_eq!(s, again);
    }
}
