use serde::{Deserialize, Serialize};

use super::myers::{self, DiffOp};
use super::{Edit, EditScript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutMode {
    SideBySide,
    Interleaved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowMarker {
    Unchanged,
    /// Side-by-side only: a deleted line paired with an inserted one.
    Changed,
    Deleted,
    Inserted,
}

/// A run of characters, highlighted when it differs from the paired line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub text: String,
    pub highlighted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub line: String,
    pub spans: Vec<Span>,
}

impl Cell {
    fn plain(line: &str) -> Self {
        Cell {
            line: line.to_string(),
            spans: vec![Span {
                text: line.to_string(),
                highlighted: false,
            }],
        }
    }
}

/// `left` holds the generated line, `right` the expected one. Unchanged rows
/// carry the same line on both sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub marker: RowMarker,
    pub left: Option<Cell>,
    pub right: Option<Cell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLayout {
    pub mode: LayoutMode,
    pub rows: Vec<Row>,
}

// Character-level second pass over a paired deleted/inserted line.
fn highlight_pair(left: &str, right: &str) -> (Cell, Cell) {
    let a: Vec<char> = left.chars().collect();
    let b: Vec<char> = right.chars().collect();
    let mut l: Vec<Span> = Vec::new();
    let mut r: Vec<Span> = Vec::new();
    fn push(spans: &mut Vec<Span>, c: char, highlighted: bool) {
        match spans.last_mut() {
            Some(last) if last.highlighted == highlighted => last.text.push(c),
            _ => spans.push(Span {
                text: c.to_string(),
                highlighted,
            }),
        }
    }
    for op in myers::diff(&a, &b) {
        match op {
            DiffOp::Keep { old, new } => {
                push(&mut l, a[old], false);
                push(&mut r, b[new], false);
            }
            DiffOp::Delete { old } => push(&mut l, a[old], true),
            DiffOp::Insert { new } => push(&mut r, b[new], true),
        }
    }
    (
        Cell {
            line: left.to_string(),
            spans: l,
        },
        Cell {
            line: right.to_string(),
            spans: r,
        },
    )
}

/// Arranges an edit script for display.
///
/// Each maximal run of non-keep edits is a hunk. Side-by-side pairs the i-th
/// deletion of a hunk with its i-th insertion; leftovers get an empty
/// opposite cell. Interleaved lists all deletions of a hunk, then all its
/// insertions.
pub fn layout(script: &EditScript, mode: LayoutMode) -> DiffLayout {
    let mut rows = Vec::new();
    let mut deletes: Vec<&str> = Vec::new();
    let mut inserts: Vec<&str> = Vec::new();

    let flush = |rows: &mut Vec<Row>, deletes: &mut Vec<&str>, inserts: &mut Vec<&str>| {
        let paired = deletes.len().min(inserts.len());
        let mut left_cells: Vec<Cell> = Vec::new();
        let mut right_cells: Vec<Cell> = Vec::new();
        for i in 0..deletes.len().max(inserts.len()) {
            if i < paired {
                let (l, r) = highlight_pair(deletes[i], inserts[i]);
                left_cells.push(l);
                right_cells.push(r);
            } else if i < deletes.len() {
                left_cells.push(Cell::plain(deletes[i]));
            } else {
                right_cells.push(Cell::plain(inserts[i]));
            }
        }
        match mode {
            LayoutMode::SideBySide => {
                let mut lefts = left_cells.into_iter();
                let mut rights = right_cells.into_iter();
                loop {
                    let (l, r) = (lefts.next(), rights.next());
                    let marker = match (&l, &r) {
                        (Some(_), Some(_)) => RowMarker::Changed,
                        (Some(_), None) => RowMarker::Deleted,
                        (None, Some(_)) => RowMarker::Inserted,
                        (None, None) => break,
                    };
                    rows.push(Row {
                        marker,
                        left: l,
                        right: r,
                    });
                }
            }
            LayoutMode::Interleaved => {
                rows.extend(left_cells.into_iter().map(|c| Row {
                    marker: RowMarker::Deleted,
                    left: Some(c),
                    right: None,
                }));
                rows.extend(right_cells.into_iter().map(|c| Row {
                    marker: RowMarker::Inserted,
                    left: None,
                    right: Some(c),
                }));
            }
        }
        deletes.clear();
        inserts.clear();
    };

    for edit in &script.edits {
        match edit {
            Edit::Keep(line) => {
                flush(&mut rows, &mut deletes, &mut inserts);
                rows.push(Row {
                    marker: RowMarker::Unchanged,
                    left: Some(Cell::plain(line)),
                    right: Some(Cell::plain(line)),
                });
            }
            Edit::Delete(line) => deletes.push(line),
            Edit::Insert(line) => inserts.push(line),
        }
    }
    flush(&mut rows, &mut deletes, &mut inserts);
    DiffLayout { mode, rows }
}

/// Rebuilds an edit script from a layout. Within a hunk deletions come
/// before insertions, so the result equals the original script up to the
/// order of edits inside each hunk.
pub fn recover_edits(layout: &DiffLayout) -> EditScript {
    let mut edits = Vec::new();
    let mut deletes = Vec::new();
    let mut inserts = Vec::new();
    for row in &layout.rows {
        if row.marker == RowMarker::Unchanged {
            edits.append(&mut deletes);
            edits.append(&mut inserts);
            if let Some(cell) = &row.left {
                edits.push(Edit::Keep(cell.line.clone()));
            }
            continue;
        }
        if let Some(cell) = &row.left {
            deletes.push(Edit::Delete(cell.line.clone()));
        }
        if let Some(cell) = &row.right {
            inserts.push(Edit::Insert(cell.line.clone()));
        }
    }
    edits.append(&mut deletes);
    edits.append(&mut inserts);
    EditScript { edits }
}

fn prefix(marker: RowMarker, left_side: bool) -> &'static str {
    match (marker, left_side) {
        (RowMarker::Unchanged, _) => "  ",
        (RowMarker::Deleted, _) => "- ",
        (RowMarker::Inserted, _) => "+ ",
        (RowMarker::Changed, true) => "- ",
        (RowMarker::Changed, false) => "+ ",
    }
}

/// Plain text rendering used for `code` messages in feedback documents.
pub fn render_plain(layout: &DiffLayout) -> String {
    render(layout, false)
}

/// Terminal rendering with ANSI colours; highlighted spans are underlined.
pub fn render_ansi(layout: &DiffLayout) -> String {
    render(layout, true)
}

fn paint(cell: &Cell, marker: RowMarker, left_side: bool, ansi: bool) -> String {
    if !ansi || marker == RowMarker::Unchanged {
        return cell.line.clone();
    }
    let colour = if left_side { "\x1b[31m" } else { "\x1b[32m" };
    let mut out = String::from(colour);
    for span in &cell.spans {
        if span.highlighted {
            out.push_str("\x1b[4m");
            out.push_str(&span.text);
            out.push_str("\x1b[24m");
        } else {
            out.push_str(&span.text);
        }
    }
    out.push_str("\x1b[0m");
    out
}

fn render(layout: &DiffLayout, ansi: bool) -> String {
    let mut out = String::new();
    match layout.mode {
        LayoutMode::Interleaved => {
            for row in &layout.rows {
                let (cell, left_side) = match (&row.left, &row.right) {
                    (Some(c), _) => (c, true),
                    (None, Some(c)) => (c, false),
                    (None, None) => continue,
                };
                out.push_str(prefix(row.marker, left_side));
                out.push_str(&paint(cell, row.marker, left_side, ansi));
                out.push('\n');
            }
        }
        LayoutMode::SideBySide => {
            let width = layout
                .rows
                .iter()
                .filter_map(|r| r.left.as_ref())
                .map(|c| c.line.chars().count())
                .max()
                .unwrap_or(0);
            for row in &layout.rows {
                let left = row.left.as_ref();
                let shown = left.map(|c| c.line.chars().count()).unwrap_or(0);
                let prefix_left = if left.is_some() { prefix(row.marker, true) } else { "  " };
                out.push_str(prefix_left);
                if let Some(c) = left {
                    out.push_str(&paint(c, row.marker, true, ansi));
                }
                out.extend(std::iter::repeat_n(' ', width - shown));
                out.push_str(" | ");
                if let Some(c) = &row.right {
                    out.push_str(prefix(row.marker, false));
                    out.push_str(&paint(c, row.marker, false, ansi));
                }
                let trimmed = out.trim_end_matches(' ').len();
                out.truncate(trimmed);
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::line_diff;
    use super::*;

    fn script(edits: Vec<Edit>) -> EditScript {
        EditScript { edits }
    }

    #[test]
    fn empty_script_empty_layout() {
        for mode in [LayoutMode::SideBySide, LayoutMode::Interleaved] {
            assert!(layout(&EditScript::default(), mode).rows.is_empty());
        }
    }

    #[test]
    fn one_delete_one_insert_pairs_into_changed_row() {
        let s = script(vec![Edit::Delete("a".into()), Edit::Insert("b".into())]);
        let l = layout(&s, LayoutMode::SideBySide);
        assert_eq!(l.rows.len(), 1);
        assert_eq!(l.rows[0].marker, RowMarker::Changed);
        assert_eq!(l.rows[0].left.as_ref().unwrap().line, "a");
        assert_eq!(l.rows[0].right.as_ref().unwrap().line, "b");
    }

    #[test]
    fn two_deletes_one_insert() {
        let s = script(vec![
            Edit::Delete("x".into()),
            Edit::Delete("y".into()),
            Edit::Insert("z".into()),
        ]);
        let l = layout(&s, LayoutMode::SideBySide);
        let markers: Vec<_> = l.rows.iter().map(|r| r.marker).collect();
        assert_eq!(markers, vec![RowMarker::Changed, RowMarker::Deleted]);
        assert!(l.rows[1].right.is_none());
        assert_eq!(l.rows[1].left.as_ref().unwrap().line, "y");
    }

    #[test]
    fn interleaved_lists_deletes_before_inserts() {
        let s = line_diff(&["k", "a", "b", "k2"], &["k", "c", "k2"]);
        let l = layout(&s, LayoutMode::Interleaved);
        let markers: Vec<_> = l.rows.iter().map(|r| r.marker).collect();
        assert_eq!(
            markers,
            vec![
                RowMarker::Unchanged,
                RowMarker::Deleted,
                RowMarker::Deleted,
                RowMarker::Inserted,
                RowMarker::Unchanged
            ]
        );
    }

    #[test]
    fn changed_pair_gets_character_highlights() {
        let s = line_diff(&["(1, 1)"], &["[1, 1]"]);
        let l = layout(&s, LayoutMode::SideBySide);
        let left = l.rows[0].left.as_ref().unwrap();
        let highlighted: String = left
            .spans
            .iter()
            .filter(|s| s.highlighted)
            .map(|s| s.text.as_str())
            .collect();
        assert_eq!(highlighted, "()");
    }

    #[test]
    fn plain_rendering() {
        let s = line_diff(&["same", "(1, 1)"], &["same", "[1, 1]"]);
        let inter = render_plain(&layout(&s, LayoutMode::Interleaved));
        assert_eq!(inter, "  same\n- (1, 1)\n+ [1, 1]\n");
        let side = render_plain(&layout(&s, LayoutMode::SideBySide));
        assert_eq!(side, "  same   |   same\n- (1, 1) | + [1, 1]\n");
    }
}
