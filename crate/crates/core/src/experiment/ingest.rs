//! Agent CSV ingestion.
//!
//! The header is `persona_description,demographics,political_standpoint,is_observer`
//! with an optional leading `id` column. Rows are numbered from 1, counting
//! data rows only (the header is row 0).

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

use crate::agent::{Agent, AgentId, PersonaProfile};

pub const REQUIRED_COLUMNS: [&str; 4] = [
    "persona_description",
    "demographics",
    "political_standpoint",
    "is_observer",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("agent file has no data rows")]
    EmptyFile,
    #[error("missing column {column}")]
    MissingColumn { column: String },
    #[error("unexpected column {column} at position {position}")]
    UnexpectedColumn { column: String, position: usize },
    #[error("duplicate column {column}")]
    DuplicateColumn { column: String },
    #[error("row {row}: has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column is_observer: {value:?} is not true or false")]
    MalformedBoolean { row: usize, value: String },
    #[error("row {row}, column {column}: value must not be empty")]
    EmptyField { row: usize, column: String },
    #[error("row {row}, column id: duplicate id {id:?}")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: not valid UTF-8")]
    InvalidUtf8 { row: usize },
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
}

impl IngestError {
    /// Data row the diagnostic points at, when it concerns a row.
    pub fn row(&self) -> Option<usize> {
        match self {
            IngestError::RaggedRow { row, .. }
            | IngestError::MalformedBoolean { row, .. }
            | IngestError::EmptyField { row, .. }
            | IngestError::DuplicateId { row, .. }
            | IngestError::InvalidUtf8 { row }
            | IngestError::Csv { row, .. } => Some(*row),
            _ => None,
        }
    }
}

pub fn load_agents(path: &Path) -> Result<Vec<Agent>, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_agents(&bytes)
}

/// Parses agent CSV bytes into agents in row order. Ids default to
/// `agent-<row>` when there is no `id` column.
pub fn parse_agents(bytes: &[u8]) -> Result<Vec<Agent>, IngestError> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.byte_records();

    let header = match records.next() {
        None => return Err(IngestError::EmptyFile),
        Some(r) => r.map_err(|e| IngestError::Csv {
            row: 0,
            message: e.to_string(),
        })?,
    };
    let header: Vec<String> = header
        .iter()
        .map(|f| String::from_utf8_lossy(f).trim().to_string())
        .collect();
    let has_id = check_header(&header)?;

    let mut agents = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, record) in records.enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| IngestError::Csv {
            row,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(IngestError::RaggedRow {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        let fields: Vec<&str> = record
            .iter()
            .map(std::str::from_utf8)
            .collect::<Result<_, _>>()
            .map_err(|_| IngestError::InvalidUtf8 { row })?;
        let (id, rest) = if has_id {
            (fields[0].trim().to_string(), &fields[1..])
        } else {
            (format!("agent-{row}"), &fields[..])
        };
        if id.is_empty() {
            return Err(IngestError::EmptyField {
                row,
                column: "id".into(),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId { row, id });
        }
        let [persona, demographics, standpoint, observer] = [rest[0], rest[1], rest[2], rest[3]];
        for (column, value) in [
            ("persona_description", persona),
            ("political_standpoint", standpoint),
        ] {
            if value.trim().is_empty() {
                return Err(IngestError::EmptyField {
                    row,
                    column: column.into(),
                });
            }
        }
        let is_observer = parse_bool(observer).ok_or_else(|| IngestError::MalformedBoolean {
            row,
            value: observer.to_string(),
        })?;
        let profile = PersonaProfile::new(persona, demographics, standpoint, is_observer)
            .expect("profile fields checked above");
        let id = AgentId::new(id).expect("id checked above");
        agents.push(Agent::new(id, profile));
    }
    if agents.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    Ok(agents)
}

/// Returns whether the header carries a leading `id` column.
fn check_header(header: &[String]) -> Result<bool, IngestError> {
    let mut seen = BTreeSet::new();
    for column in header {
        if !seen.insert(column.as_str()) {
            return Err(IngestError::DuplicateColumn {
                column: column.clone(),
            });
        }
    }
    for column in REQUIRED_COLUMNS {
        if !seen.contains(column) {
            return Err(IngestError::MissingColumn {
                column: column.into(),
            });
        }
    }
    let has_id = header.first().map(String::as_str) == Some("id");
    let expected = REQUIRED_COLUMNS.iter().copied();
    let actual = header.iter().skip(usize::from(has_id)).map(String::as_str);
    for (position, (want, got)) in expected.zip(actual).enumerate() {
        if want != got {
            return Err(IngestError::UnexpectedColumn {
                column: got.into(),
                position: position + usize::from(has_id),
            });
        }
    }
    if header.len() != REQUIRED_COLUMNS.len() + usize::from(has_id) {
        let position = REQUIRED_COLUMNS.len() + usize::from(has_id);
        return Err(IngestError::UnexpectedColumn {
            column: header[position].clone(),
            position,
        });
    }
    Ok(has_id)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "persona_description,demographics,political_standpoint,is_observer\n";

    #[test]
    fn well_formed_rows_in_order() {
        let text = format!(
            "{HEADER}You are a baker.,You are 30.,You vote Democrat.,false\n\"You are a vet, retired.\",,You vote Republican.,TRUE\n"
        );
        let agents = parse_agents(text.as_bytes()).unwrap();
        assert_eq!(agents.len(), 2);
        assert_eq!(agents[0].id().as_str(), "agent-1");
        assert_eq!(
            agents[1].profile().persona_description(),
            "You are a vet, retired."
        );
        assert!(agents[1].is_observer());
        assert_eq!(agents[1].profile().demographics(), "");
    }

    #[test]
    fn id_column_is_used() {
        let text = format!("id,{HEADER}r1,p,d,s,false\nd1,p,d,s,false\n");
        let agents = parse_agents(text.as_bytes()).unwrap();
        assert_eq!(agents[1].id().as_str(), "d1");
    }

    #[test]
    fn header_only_is_empty() {
        assert_eq!(parse_agents(HEADER.as_bytes()), Err(IngestError::EmptyFile));
        assert_eq!(parse_agents(b""), Err(IngestError::EmptyFile));
    }

    #[test]
    fn malformed_boolean_reports_row() {
        let mut text = HEADER.to_string();
        for i in 1..=6 {
            text.push_str(&format!("p{i},d,s,false\n"));
        }
        text.push_str("p7,d,s,maybe\n");
        assert_eq!(
            parse_agents(text.as_bytes()),
            Err(IngestError::MalformedBoolean {
                row: 7,
                value: "maybe".into()
            })
        );
    }

    #[test]
    fn missing_column_is_named() {
        let text = "persona_description,demographics,is_observer\np,d,false\n";
        assert_eq!(
            parse_agents(text.as_bytes()),
            Err(IngestError::MissingColumn {
                column: "political_standpoint".into()
            })
        );
    }
}
