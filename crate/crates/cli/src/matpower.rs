//! Parser for the plain-matrix subset of Matpower case files.
//!
//! Supported constructs: `%` comments, one `function mpc = <name>` header
//! line, and `mpc.<field> = <value>;` statements whose value is a number, a
//! quoted string, or a bracketed numeric matrix (rows separated by `;` or
//! newlines). That covers `mpc.baseMVA`, `mpc.bus`, `mpc.branch`,
//! `mpc.version`, `mpc.gen`, and the other standard tables of a generated
//! case; anything else — indexing, arithmetic, function calls — is rejected
//! as an unsupported construct. Only `baseMVA`, `bus`, and `branch` are
//! consumed.
//!
//! Conversion: the single reference bus (type 3) becomes node 0; the other
//! buses keep their relative order and are renumbered densely from 1.
//! Branch `r`/`x` are already per-unit; bus loads `PD`/`QD` are megawatts
//! and are normalized by `baseMVA`. Branches with status 0 land in the
//! candidate set only; the in-service branches must form a radial tree fed
//! by the reference bus. Zero or negative branch impedance parts are outside
//! the model and rejected.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::CliError;
use crate::formats::{validate, EdgeRecord, GridBundle, GridFileV1, LoadRecord, GRID_FILE_VERSION};

pub fn parse_matpower_case(text: &str, path: &Path) -> Result<(GridFileV1, GridBundle), CliError> {
    let stmts = scan_statements(text, path)?;

    let base_mva = match stmts.get("baseMVA") {
        Some(Value::Scalar(v)) if *v > 0.0 => *v,
        Some(Value::Scalar(v)) => {
            return Err(schema(path, "mpc.baseMVA", format!("must be positive, found {v}")))
        }
        Some(_) => return Err(schema(path, "mpc.baseMVA", "expected a scalar")),
        None => return Err(schema(path, "mpc.baseMVA", "missing")),
    };
    let bus = required_matrix(&stmts, "bus", 4, path)?;
    let branch = required_matrix(&stmts, "branch", 4, path)?;

    // Reference bus -> node 0, all others densely renumbered in id order.
    let mut ids = Vec::new();
    let mut reference = None;
    for (i, row) in bus.iter().enumerate() {
        let id = int_field(row[0], path, &format!("mpc.bus[{i}] bus id"))?;
        if ids.contains(&id) {
            return Err(schema(path, &format!("mpc.bus[{i}]"), format!("duplicate bus {id}")));
        }
        ids.push(id);
        if row[1] == 3.0 {
            if reference.replace(id).is_some() {
                return Err(schema(path, "mpc.bus", "more than one reference bus (type 3)"));
            }
        }
    }
    let reference =
        reference.ok_or_else(|| schema(path, "mpc.bus", "no reference bus (type 3)"))?;
    let mut order: Vec<usize> = ids.iter().copied().filter(|&id| id != reference).collect();
    order.sort_unstable();
    let mut node_of: BTreeMap<usize, usize> = BTreeMap::new();
    node_of.insert(reference, 0);
    for (k, id) in order.iter().enumerate() {
        node_of.insert(*id, k + 1);
    }

    let mut base_loads = vec![LoadRecord { node: 0, p: 0.0, q: 0.0 }; order.len()];
    for (i, row) in bus.iter().enumerate() {
        let id = int_field(row[0], path, &format!("mpc.bus[{i}] bus id"))?;
        let node = node_of[&id];
        if node == 0 {
            continue; // reference bus carries no learner-visible load
        }
        base_loads[node - 1] =
            LoadRecord { node, p: row[2] / base_mva, q: row[3] / base_mva };
    }

    let mut edges = Vec::with_capacity(branch.len());
    for (i, row) in branch.iter().enumerate() {
        let field = format!("mpc.branch[{i}]");
        let f = int_field(row[0], path, &format!("{field} from-bus"))?;
        let t = int_field(row[1], path, &format!("{field} to-bus"))?;
        let (u, v) = match (node_of.get(&f), node_of.get(&t)) {
            (Some(&u), Some(&v)) => (u, v),
            _ => return Err(schema(path, &field, format!("unknown bus in ({f}, {t})"))),
        };
        let operational = if row.len() >= 11 { row[10] != 0.0 } else { true };
        edges.push(EdgeRecord { u, v, r: row[2], x: row[3], operational });
    }

    let file = GridFileV1 {
        version: GRID_FILE_VERSION,
        num_nodes: node_of.len(),
        root: 0,
        edges,
        base_loads,
    };
    let bundle = validate(&file, path)?;
    Ok((file, bundle))
}

enum Value {
    Scalar(f64),
    Text,
    Matrix(Vec<Vec<f64>>),
}

fn schema(path: &Path, field: &str, message: impl Into<String>) -> CliError {
    CliError::Schema {
        path: path.to_path_buf(),
        field: field.to_string(),
        message: message.into(),
    }
}

fn required_matrix<'a>(
    stmts: &'a BTreeMap<String, Value>,
    name: &str,
    min_cols: usize,
    path: &Path,
) -> Result<&'a Vec<Vec<f64>>, CliError> {
    match stmts.get(name) {
        Some(Value::Matrix(rows)) => {
            if rows.is_empty() {
                return Err(schema(path, &format!("mpc.{name}"), "empty matrix"));
            }
            for (i, row) in rows.iter().enumerate() {
                if row.len() < min_cols {
                    return Err(schema(
                        path,
                        &format!("mpc.{name}[{i}]"),
                        format!("needs at least {min_cols} columns, found {}", row.len()),
                    ));
                }
            }
            Ok(rows)
        }
        Some(_) => Err(schema(path, &format!("mpc.{name}"), "expected a matrix")),
        None => Err(schema(path, &format!("mpc.{name}"), "missing")),
    }
}

fn int_field(v: f64, path: &Path, field: &str) -> Result<usize, CliError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(schema(path, field, format!("expected a non-negative integer, found {v}")))
    }
}

/// Tokenize the case text into `name -> value` statements. Comments are
/// blanked in place (offsets — and therefore reported line numbers — match
/// the original text).
fn scan_statements(text: &str, path: &Path) -> Result<BTreeMap<String, Value>, CliError> {
    let stripped: String = text
        .lines()
        .map(|line| match line.find('%') {
            Some(cut) => format!("{}{}\n", &line[..cut], " ".repeat(line.len() - cut)),
            None => format!("{line}\n"),
        })
        .collect();
    let bytes = stripped.as_bytes();
    let line_at = |pos: usize| stripped[..pos.min(stripped.len())].matches('\n').count() + 1;
    let unsupported = |pos: usize, message: &str| CliError::Unsupported {
        path: path.to_path_buf(),
        line: line_at(pos),
        message: message.to_string(),
    };

    let mut stmts = BTreeMap::new();
    let mut pos = 0;
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Ok(stmts);
        }
        let rest = &stripped[pos..];

        if rest.starts_with("function") {
            pos += rest.find('\n').unwrap_or(rest.len());
            continue;
        }
        if !rest.starts_with("mpc.") {
            return Err(unsupported(pos, "statement outside the `mpc.<field> = ...;` subset"));
        }
        pos += 4;
        let name_len = stripped[pos..]
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(stripped.len() - pos);
        if name_len == 0 {
            return Err(unsupported(pos, "missing field name after `mpc.`"));
        }
        let name = stripped[pos..pos + name_len].to_string();
        pos += name_len;

        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() || bytes[pos] != b'=' {
            return Err(unsupported(pos, "expected `=` (indexing and calls are unsupported)"));
        }
        pos += 1;
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(unsupported(pos, "file ends inside a statement"));
        }

        let value = match bytes[pos] {
            b'[' => {
                let close = stripped[pos..]
                    .find(']')
                    .ok_or_else(|| unsupported(pos, "unterminated matrix"))?;
                let body_start = pos + 1;
                let body = &stripped[body_start..pos + close];
                pos += close + 1;
                Value::Matrix(parse_matrix(body, body_start, &unsupported)?)
            }
            b'\'' => {
                let close = stripped[pos + 1..]
                    .find('\'')
                    .ok_or_else(|| unsupported(pos, "unterminated string"))?;
                pos += close + 2;
                Value::Text
            }
            _ => {
                let end = stripped[pos..]
                    .find(';')
                    .ok_or_else(|| unsupported(pos, "statement missing `;`"))?;
                let token = stripped[pos..pos + end].trim();
                let v = token.parse::<f64>().map_err(|_| {
                    unsupported(pos, &format!("`{token}` is not a plain number"))
                })?;
                pos += end;
                Value::Scalar(v)
            }
        };

        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() || bytes[pos] != b';' {
            return Err(unsupported(pos, "statement missing `;`"));
        }
        pos += 1;
        stmts.insert(name, value);
    }
}

fn parse_matrix(
    body: &str,
    body_offset: usize,
    unsupported: &impl Fn(usize, &str) -> CliError,
) -> Result<Vec<Vec<f64>>, CliError> {
    let mut rows = Vec::new();
    let mut offset = 0;
    for segment in body.split(|c| c == ';' || c == '\n') {
        let at = body_offset + offset;
        offset += segment.len() + 1;
        if segment.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for token in segment.split_whitespace() {
            let v = token
                .parse::<f64>()
                .map_err(|_| unsupported(at, &format!("`{token}` is not a plain number")))?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok(rows)
}
