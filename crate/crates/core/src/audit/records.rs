use std::io;

use serde::{Deserialize, Serialize};

use super::AuditError;

/// Exact header of an interpretation CSV.
pub const CSV_HEADER: [&str; 6] = [
    "audit_id",
    "bundle_id",
    "round",
    "position",
    "contest_id",
    "interpretation",
];

/// Voter intent for one contest on one inspected ballot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpretationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_id: Option<String>,
    pub bundle_id: String,
    pub round: u32,
    pub position: u64,
    pub contest_id: String,
    /// A candidate id, or `"other"` for undervotes, overvotes and write-ins.
    pub interpretation: String,
}

impl InterpretationRecord {
    pub fn key(&self) -> (&str, u64, &str) {
        (&self.bundle_id, self.position, &self.contest_id)
    }
}

pub fn read_interpretations_csv<R: io::Read>(reader: R) -> Result<Vec<InterpretationRecord>, AuditError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| AuditError::Csv(e.to_string()))?
        .clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(AuditError::Csv(format!(
            "expected header {}, found {}",
            CSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e: csv::Error| AuditError::Csv(e.to_string())))
        .collect()
}

pub fn write_interpretations_csv<W: io::Write>(
    writer: W,
    records: &[InterpretationRecord],
) -> Result<(), AuditError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    let err = |e: csv::Error| AuditError::Csv(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.audit_id.as_deref().unwrap_or(""),
            &r.bundle_id,
            &r.round.to_string(),
            &r.position.to_string(),
            &r.contest_id,
            &r.interpretation,
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| AuditError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let recs = vec![InterpretationRecord {
            audit_id: Some("a1".into()),
            bundle_id: "b1".into(),
            round: 0,
            position: 4,
            contest_id: "mayor".into(),
            interpretation: "alice".into(),
        }];
        let mut out = Vec::new();
        write_interpretations_csv(&mut out, &recs).unwrap();
        let text = String::from_utf8(out.clone()).unwrap();
        assert_eq!(
            text,
            "audit_id,bundle_id,round,position,contest_id,interpretation\na1,b1,0,4,mayor,alice\n"
        );
        assert_eq!(read_interpretations_csv(out.as_slice()).unwrap(), recs);
    }

    #[test]
    fn csv_header_is_exact() {
        let bad = "bundle_id,audit_id,round,position,contest_id,interpretation\n";
        assert!(matches!(
            read_interpretations_csv(bad.as_bytes()),
            Err(AuditError::Csv(_))
        ));
        let bad_row = "audit_id,bundle_id,round,position,contest_id,interpretation\na,b,x,1,c,d\n";
        assert!(read_interpretations_csv(bad_row.as_bytes()).is_err());
    }
}
