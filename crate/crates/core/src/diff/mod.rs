//! Differences between generated and expected output, structured for display.

mod layout;
pub mod myers;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layout::{layout, recover_edits, render_ansi, render_plain, Cell, DiffLayout, LayoutMode, Row, RowMarker, Span};
pub use table::{table_diff, table_diff_with, AlignedColumn, CellMarker, HeaderMode, TableComparison, TableDiff, TableOptions, TableRow};

/// One line-level edit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "op", content = "line", rename_all = "lowercase")]
pub enum Edit {
    Keep(String),
    Delete(String),
    Insert(String),
}

/// Ordered edits that turn the generated lines into the expected lines.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditScript {
    pub edits: Vec<Edit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("edit {index} does not match generated line {line}")]
    Mismatch { index: usize, line: usize },
    #[error("script leaves {0} generated lines unconsumed")]
    Unconsumed(usize),
}

impl EditScript {
    /// Number of deletions plus insertions.
    pub fn edit_count(&self) -> usize {
        self.edits
            .iter()
            .filter(|e| !matches!(e, Edit::Keep(_)))
            .count()
    }

    pub fn is_identity(&self) -> bool {
        self.edit_count() == 0
    }

    /// Replays the script on `generated`, yielding the expected side.
    pub fn apply<S: AsRef<str>>(&self, generated: &[S]) -> Result<Vec<String>, ReplayError> {
        let mut out = Vec::new();
        let mut cursor = 0;
        for (index, edit) in self.edits.iter().enumerate() {
            match edit {
                Edit::Keep(line) | Edit::Delete(line) => {
                    if generated.get(cursor).map(AsRef::as_ref) != Some(line.as_str()) {
                        return Err(ReplayError::Mismatch { index, line: cursor });
                    }
                    cursor += 1;
                    if let Edit::Keep(line) = edit {
                        out.push(line.clone());
                    }
                }
                Edit::Insert(line) => out.push(line.clone()),
            }
        }
        if cursor != generated.len() {
            return Err(ReplayError::Unconsumed(generated.len() - cursor));
        }
        Ok(out)
    }
}

/// Minimal line-level edit script from `generated` to `expected`.
pub fn line_diff<S: AsRef<str>>(generated: &[S], expected: &[S]) -> EditScript {
    let old: Vec<&str> = generated.iter().map(AsRef::as_ref).collect();
    let new: Vec<&str> = expected.iter().map(AsRef::as_ref).collect();
    let edits = myers::diff(&old, &new)
        .into_iter()
        .map(|op| match op {
            myers::DiffOp::Keep { old: i, .. } => Edit::Keep(old[i].to_string()),
            myers::DiffOp::Delete { old: i } => Edit::Delete(old[i].to_string()),
            myers::DiffOp::Insert { new: j } => Edit::Insert(new[j].to_string()),
        })
        .collect();
    EditScript { edits }
}

/// Convenience wrapper splitting both texts into lines first.
pub fn text_diff(generated: &str, expected: &str) -> EditScript {
    let g: Vec<&str> = generated.lines().collect();
    let e: Vec<&str> = expected.lines().collect();
    line_diff(&g, &e)
}
