//! Line-delimited dataset files.
//!
//! ```text
//! PNSIS-DS v1 D=<int> C=<int>
//! V=<int> label=<int|none> env=<int|none>
//! <V lines of D features>
//! <V lines of V adjacency entries>
//! [<V lines of V gt_mask entries>]
//! ...
//! ```
//!
//! Reals are written with 17 significant digits so reading back is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const HEADER_MAGIC: &str = "PNSIS-DS v1";

/// Format one real with 17 significant digits.
pub fn fmt_real<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x.as_f64())
}

pub(crate) fn write_row<T: Scalar>(out: &mut String, row: &[T]) {
    for (k, &x) in row.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        out.push_str(&fmt_real(x));
    }
    out.push('\n');
}

fn write_matrix<T: Scalar>(out: &mut String, m: &Matrix<T>) {
    for i in 0..m.rows() {
        write_row(out, m.row(i));
    }
}

fn opt_token<D: std::fmt::Display>(v: Option<D>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// Serialize a dataset. Refuses datasets with invariant violations.
pub fn to_string<T: Scalar>(ds: &Dataset<T>) -> Result<String> {
    if let Some((idx, v)) = ds.validate().into_iter().next() {
        return Err(Error::Argument(format!("graph {idx}: {v}")));
    }
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER_MAGIC} D={} C={}", ds.feature_dim, ds.num_classes);
    for g in &ds.graphs {
        let _ = writeln!(
            out,
            "V={} label={} env={}",
            g.node_count(),
            opt_token(g.label),
            opt_token(g.env_id)
        );
        write_matrix(&mut out, &g.features);
        write_matrix(&mut out, &g.adjacency);
        if let Some(mask) = &g.gt_mask {
            write_matrix(&mut out, mask);
        }
    }
    Ok(out)
}

pub fn write_dataset<T: Scalar>(path: impl AsRef<Path>, ds: &Dataset<T>) -> Result<()> {
    fs::write(path, to_string(ds)?)?;
    Ok(())
}

pub fn read_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    from_str(&fs::read_to_string(path)?)
}

fn key_value<'a>(tok: &'a str, key: &str, line: usize) -> Result<&'a str> {
    tok.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| Error::Parse { line, msg: format!("expected `{key}=`, found `{tok}`") })
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse().map_err(|_| Error::Parse { line, msg: format!("bad integer `{s}`") })
}

fn parse_header(text: &str, line: usize) -> Result<(usize, usize)> {
    let rest = text
        .strip_prefix(HEADER_MAGIC)
        .ok_or_else(|| Error::Parse { line, msg: "missing `PNSIS-DS v1` header".into() })?;
    let toks: Vec<&str> = rest.split_whitespace().collect();
    if toks.len() != 2 {
        return Err(Error::Parse { line, msg: "header needs D= and C=".into() });
    }
    let d = parse_usize(key_value(toks[0], "D", line)?, line)?;
    let c = parse_usize(key_value(toks[1], "C", line)?, line)?;
    Ok((d, c))
}

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        let l = self.lines.get(self.pos).copied()?;
        self.pos += 1;
        Some((self.pos, l))
    }

    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn row<T: Scalar>(&mut self, width: usize, what: &str, rec_line: usize) -> Result<Vec<T>> {
        let (line, text) = self.next().ok_or_else(|| Error::Schema {
            line: rec_line,
            msg: format!("unexpected end of file while reading {what}"),
        })?;
        if text.starts_with("V=") {
            return Err(Error::Schema { line, msg: format!("record ended early while reading {what}") });
        }
        let vals = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| Error::Parse { line, msg: format!("bad real `{t}`") })
            })
            .collect::<Result<Vec<T>>>()?;
        if vals.len() != width {
            return Err(Error::Schema {
                line,
                msg: format!("{what}: expected {width} values, found {}", vals.len()),
            });
        }
        Ok(vals)
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize, what: &str, rec: usize) -> Result<Matrix<T>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.row::<T>(cols, what, rec)?);
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

pub fn from_str<T: Scalar>(text: &str) -> Result<Dataset<T>> {
    let mut lines = Lines { lines: text.lines().collect(), pos: 0 };
    let (line, header) =
        lines.next().ok_or_else(|| Error::Parse { line: 1, msg: "missing `PNSIS-DS v1` header".into() })?;
    let (d, c) = parse_header(header, line)?;
    let mut graphs = Vec::new();
    while let Some((line, rec)) = lines.next() {
        if rec.trim().is_empty() && lines.peek().is_none() {
            break;
        }
        let toks: Vec<&str> = rec.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(Error::Parse { line, msg: format!("bad record header `{rec}`") });
        }
        let v = parse_usize(key_value(toks[0], "V", line)?, line)?;
        let label = match key_value(toks[1], "label", line)? {
            "none" => None,
            s => Some(parse_usize(s, line)?),
        };
        let env_id = match key_value(toks[2], "env", line)? {
            "none" => None,
            s => Some(s.parse::<i64>().map_err(|_| Error::Parse { line, msg: format!("bad env `{s}`") })?),
        };
        let features = lines.matrix(v, d, "features", line)?;
        let adjacency = lines.matrix(v, v, "adjacency", line)?;
        let gt_mask = match lines.peek() {
            Some(next) if !next.starts_with("V=") && !(next.trim().is_empty() && v > 0) => {
                Some(lines.matrix(v, v, "gt_mask", line)?)
            }
            _ => None,
        };
        let g = Graph { adjacency, features, label, env_id, gt_mask };
        if let Some(l) = label {
            if l >= c {
                return Err(Error::Schema { line, msg: format!("label {l} >= C={c}") });
            }
        }
        let report = crate::graph::validate_graph(&g);
        if let Some(viol) = report.violations.first() {
            return Err(Error::Schema { line, msg: viol.to_string() });
        }
        graphs.push(g);
    }
    Ok(Dataset::new(graphs, d, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset<f64> {
        let x = Matrix::from_rows(&[vec![0.1, 1.0 / 3.0], vec![-2.5e-7, 1e300]]);
        let g1 = Graph::from_edges(2, &[(0, 1)], x.clone()).with_label(1);
        let mut g2 = Graph::from_edges(2, &[(0, 1)], x).with_gt_mask(Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
        g2.env_id = Some(-3);
        Dataset::new(vec![g1, g2], 2, 2)
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = sample();
        let back: Dataset<f64> = from_str(&to_string(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn empty_file_is_missing_header() {
        let err = from_str::<f64>("").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let ds = from_str::<f64>("PNSIS-DS v1 D=3 C=2\n").unwrap();
        assert!(ds.is_empty());
        assert_eq!((ds.feature_dim, ds.num_classes), (3, 2));
    }

    #[test]
    fn too_many_feature_rows_is_schema_error() {
        let text = "PNSIS-DS v1 D=1 C=2\nV=2 label=0 env=none\n1\n2\n3\n0 1\n1 0\n";
        let err = from_str::<f64>(text).unwrap_err();
        assert!(matches!(err, Error::Schema { line: 5, .. }), "{err}");
    }

    #[test]
    fn malformed_real_reports_line() {
        let text = "PNSIS-DS v1 D=1 C=2\nV=1 label=0 env=none\nabc\n0\n";
        let err = from_str::<f64>(text).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn writer_refuses_invalid_dataset() {
        let mut ds = sample();
        ds.graphs[0].adjacency[(0, 1)] = 2.0;
        assert!(to_string(&ds).is_err());
    }
}
