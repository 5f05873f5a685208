use serde::{Deserialize, Serialize};

use super::{line_diff, text_diff, Edit, EditScript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeaderMode {
    /// A first row is a header iff none of its cells is numeric.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableOptions {
    pub delimiter: u8,
    pub header: HeaderMode,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            delimiter: b',',
            header: HeaderMode::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellMarker {
    Equal,
    Changed,
    InsertedRow,
    DeletedRow,
}

/// Column of the aligned table and where it sits in each input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedColumn {
    pub name: Option<String>,
    pub generated: Option<usize>,
    pub expected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    /// Cells in aligned column order; `None` where a column is absent.
    pub generated: Option<Vec<Option<String>>>,
    pub expected: Option<Vec<Option<String>>>,
    pub markers: Vec<CellMarker>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDiff {
    pub has_header: bool,
    pub columns: Vec<AlignedColumn>,
    pub rows: Vec<TableRow>,
}

impl TableDiff {
    pub fn changed_cells(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| r.markers.iter())
            .filter(|m| **m == CellMarker::Changed)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TableComparison {
    Table(TableDiff),
    /// One side did not parse as a table; plain line diff instead.
    Lines { script: EditScript, reason: String },
}

fn parse(text: &str, delimiter: u8) -> Result<Vec<Vec<String>>, csv::Error> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .from_reader(text.as_bytes());
    reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect()
}

fn is_numeric(cell: &str) -> bool {
    let cell = cell.trim();
    cell.bytes().any(|b| b.is_ascii_digit()) && cell.parse::<f64>().is_ok()
}

fn looks_like_header(row: &[String]) -> bool {
    !row.is_empty() && !row.iter().any(|c| is_numeric(c))
}

pub fn table_diff(generated: &str, expected: &str) -> TableComparison {
    table_diff_with(generated, expected, &TableOptions::default())
}

/// Cell-level comparison of two delimiter-separated tables.
///
/// Columns are matched by header name when both tables have a header row,
/// otherwise by position. Rows are matched with a line diff over the rows
/// re-serialized in aligned column order.
pub fn table_diff_with(generated: &str, expected: &str, options: &TableOptions) -> TableComparison {
    let (g, e) = match (parse(generated, options.delimiter), parse(expected, options.delimiter)) {
        (Ok(g), Ok(e)) => (g, e),
        (Err(err), _) | (_, Err(err)) => {
            return TableComparison::Lines {
                script: text_diff(generated, expected),
                reason: err.to_string(),
            }
        }
    };

    let has_header = match options.header {
        HeaderMode::Present => !g.is_empty() && !e.is_empty(),
        HeaderMode::Absent => false,
        HeaderMode::Auto => {
            g.first().is_some_and(|r| looks_like_header(r)) && e.first().is_some_and(|r| looks_like_header(r))
        }
    };

    let (g_body, e_body) = if has_header { (&g[1..], &e[1..]) } else { (&g[..], &e[..]) };
    let columns = if has_header {
        align_by_name(&g[0], &e[0])
    } else {
        let width = g.iter().chain(e.iter()).map(Vec::len).max().unwrap_or(0);
        (0..width)
            .map(|i| AlignedColumn {
                name: None,
                generated: Some(i),
                expected: Some(i),
            })
            .collect()
    };

    let project = |row: &[String], pick: fn(&AlignedColumn) -> Option<usize>| -> Vec<Option<String>> {
        columns
            .iter()
            .map(|col| pick(col).and_then(|i| row.get(i).cloned()))
            .collect()
    };
    let g_rows: Vec<Vec<Option<String>>> = g_body.iter().map(|r| project(r, |c| c.generated)).collect();
    let e_rows: Vec<Vec<Option<String>>> = e_body.iter().map(|r| project(r, |c| c.expected)).collect();

    let serialize = |row: &Vec<Option<String>>| -> String {
        row.iter()
            .map(|c| c.as_deref().unwrap_or("\u{0}"))
            .collect::<Vec<_>>()
            .join("\u{1f}")
    };
    let g_keys: Vec<String> = g_rows.iter().map(serialize).collect();
    let e_keys: Vec<String> = e_rows.iter().map(serialize).collect();
    let script = line_diff(&g_keys, &e_keys);

    let mut rows = Vec::new();
    let (mut gi, mut ei) = (0, 0);
    let mut pending_g: Vec<usize> = Vec::new();
    let mut pending_e: Vec<usize> = Vec::new();
    let width = columns.len();

    let flush = |rows: &mut Vec<TableRow>, pg: &mut Vec<usize>, pe: &mut Vec<usize>| {
        for k in 0..pg.len().max(pe.len()) {
            match (pg.get(k), pe.get(k)) {
                (Some(&a), Some(&b)) => {
                    let markers = (0..width)
                        .map(|c| {
                            if g_rows[a][c] == e_rows[b][c] {
                                CellMarker::Equal
                            } else {
                                CellMarker::Changed
                            }
                        })
                        .collect();
                    rows.push(TableRow {
                        generated: Some(g_rows[a].clone()),
                        expected: Some(e_rows[b].clone()),
                        markers,
                    });
                }
                (Some(&a), None) => rows.push(TableRow {
                    generated: Some(g_rows[a].clone()),
                    expected: None,
                    markers: vec![CellMarker::DeletedRow; width],
                }),
                (None, Some(&b)) => rows.push(TableRow {
                    generated: None,
                    expected: Some(e_rows[b].clone()),
                    markers: vec![CellMarker::InsertedRow; width],
                }),
                (None, None) => unreachable!(),
            }
        }
        pg.clear();
        pe.clear();
    };

    for edit in &script.edits {
        match edit {
            Edit::Keep(_) => {
                flush(&mut rows, &mut pending_g, &mut pending_e);
                rows.push(TableRow {
                    generated: Some(g_rows[gi].clone()),
                    expected: Some(e_rows[ei].clone()),
                    markers: vec![CellMarker::Equal; width],
                });
                gi += 1;
                ei += 1;
            }
            Edit::Delete(_) => {
                pending_g.push(gi);
                gi += 1;
            }
            Edit::Insert(_) => {
                pending_e.push(ei);
                ei += 1;
            }
        }
    }
    flush(&mut rows, &mut pending_g, &mut pending_e);

    TableComparison::Table(TableDiff {
        has_header,
        columns,
        rows,
    })
}

fn align_by_name(g_header: &[String], e_header: &[String]) -> Vec<AlignedColumn> {
    let mut used = vec![false; g_header.len()];
    let mut columns: Vec<AlignedColumn> = e_header
        .iter()
        .enumerate()
        .map(|(ei, name)| {
            let gi = g_header
                .iter()
                .enumerate()
                .position(|(gi, g)| !used[gi] && g.trim() == name.trim());
            if let Some(gi) = gi {
                used[gi] = true;
            }
            AlignedColumn {
                name: Some(name.clone()),
                generated: gi,
                expected: Some(ei),
            }
        })
        .collect();
    columns.extend(
        g_header
            .iter()
            .enumerate()
            .filter(|(gi, _)| !used[*gi])
            .map(|(gi, name)| AlignedColumn {
                name: Some(name.clone()),
                generated: Some(gi),
                expected: None,
            }),
    );
    columns
}
