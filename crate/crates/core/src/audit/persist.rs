use serde_json::Value;

use super::{AuditError, AuditState, SCHEMA_VERSION};

/// Pretty-printed JSON document.
pub fn export_state(state: &AuditState) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(state).expect("audit state serializes");
    out.push(b'\n');
    out
}

/// Parse a state document. Unknown fields are ignored and reported back as
/// warnings (one JSON path each).
pub fn import_state(bytes: &[u8]) -> Result<(AuditState, Vec<String>), AuditError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| AuditError::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    match value.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        found => {
            return Err(AuditError::SchemaMismatch {
                expected: SCHEMA_VERSION,
                found,
            })
        }
    }
    let mut warnings = Vec::new();
    let state: AuditState = serde_ignored::deserialize(&value, |path| {
        warnings.push(format!("ignored unknown field {path}"));
    })
    .map_err(|e| AuditError::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    state.config.validate()?;
    Ok((state, warnings))
}

// serde_json reports 1-based line and column; column 0 means end of line.
fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(bytes.len());
        }
        offset += l.len();
    }
    bytes.len()
}
