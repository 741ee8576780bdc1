//! Text checkpoints of model parameters.
//!
//! ```text
//! PNSIS-CKPT v1 classes=<C> matrices=<M>
//! <path> <rows> <cols>
//! <rows lines of cols reals>
//! ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_row;
use crate::matrix::Matrix;
use crate::model::{ClassifierParams, GcnParams, ModelParams};
use crate::scalar::Scalar;

pub const CKPT_MAGIC: &str = "PNSIS-CKPT v1";

fn dump<T: Scalar>(classes: usize, named: Vec<(String, &Matrix<T>)>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CKPT_MAGIC} classes={classes} matrices={}", named.len());
    for (name, m) in named {
        let _ = writeln!(out, "{name} {} {}", m.rows(), m.cols());
        for i in 0..m.rows() {
            write_row(&mut out, m.row(i));
        }
    }
    out
}

pub fn model_to_string<T: Scalar>(mp: &ModelParams<T>) -> String {
    dump(mp.num_classes, mp.named_matrices())
}

pub fn classifier_to_string<T: Scalar>(cp: &ClassifierParams<T>) -> String {
    dump(cp.num_classes(), cp.named_matrices())
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_all<T: Scalar>(text: &str) -> Result<(usize, BTreeMap<String, Matrix<T>>)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (ln, header) = lines.next().ok_or_else(|| perr(1, "missing checkpoint header"))?;
    let rest = header.strip_prefix(CKPT_MAGIC).ok_or_else(|| perr(ln, "missing `PNSIS-CKPT v1` header"))?;
    let mut classes = None;
    let mut count = None;
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=').ok_or_else(|| perr(ln, format!("bad header token `{tok}`")))?;
        let v: usize = v.parse().map_err(|_| perr(ln, format!("bad integer `{v}`")))?;
        match k {
            "classes" => classes = Some(v),
            "matrices" => count = Some(v),
            _ => return Err(perr(ln, format!("unknown header key `{k}`"))),
        }
    }
    let (classes, count) = classes.zip(count).ok_or_else(|| perr(ln, "header needs classes= and matrices="))?;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let (ln, head) = lines.next().ok_or_else(|| perr(ln, "truncated checkpoint"))?;
        let toks: Vec<&str> = head.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(perr(ln, format!("bad matrix header `{head}`")));
        }
        let rows: usize = toks[1].parse().map_err(|_| perr(ln, "bad row count"))?;
        let cols: usize = toks[2].parse().map_err(|_| perr(ln, "bad column count"))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, row) = lines.next().ok_or_else(|| perr(ln, format!("truncated matrix `{}`", toks[0])))?;
            let vals: Vec<T> = row
                .split_whitespace()
                .map(|t| t.parse::<f64>().map(T::lit).map_err(|_| perr(ln, format!("bad real `{t}`"))))
                .collect::<Result<_>>()?;
            if vals.len() != cols {
                return Err(Error::Schema { line: ln, msg: format!("expected {cols} values, found {}", vals.len()) });
            }
            data.extend(vals);
        }
        if out.insert(toks[0].to_string(), Matrix::from_vec(rows, cols, data)).is_some() {
            return Err(perr(ln, format!("duplicate matrix `{}`", toks[0])));
        }
    }
    Ok((classes, out))
}

fn take(map: &mut BTreeMap<String, Matrix<f64>>, key: &str) -> Result<Matrix<f64>> {
    map.remove(key).ok_or_else(|| Error::Schema { line: 0, msg: format!("missing matrix `{key}`") })
}

fn take_gcn(map: &mut BTreeMap<String, Matrix<f64>>, prefix: &str) -> Result<GcnParams<f64>> {
    let mut p = GcnParams { layer_weights: Vec::new(), layer_biases: Vec::new() };
    while map.contains_key(&format!("{prefix}.w{}", p.layer_weights.len())) {
        let l = p.layer_weights.len();
        p.layer_weights.push(take(map, &format!("{prefix}.w{l}"))?);
        p.layer_biases.push(take(map, &format!("{prefix}.b{l}"))?);
    }
    Ok(p)
}

fn take_classifier(map: &mut BTreeMap<String, Matrix<f64>>, prefix: &str) -> Result<ClassifierParams<f64>> {
    Ok(ClassifierParams {
        gcn: take_gcn(map, &format!("{prefix}.gcn"))?,
        readout: take(map, &format!("{prefix}.readout"))?,
        readout_bias: take(map, &format!("{prefix}.readout_bias"))?,
    })
}

fn finish(map: BTreeMap<String, Matrix<f64>>) -> Result<()> {
    match map.keys().next() {
        Some(k) => Err(Error::Schema { line: 0, msg: format!("unexpected matrix `{k}`") }),
        None => Ok(()),
    }
}

fn cast_gcn<T: Scalar>(p: GcnParams<f64>) -> GcnParams<T> {
    GcnParams {
        layer_weights: p.layer_weights.iter().map(Matrix::cast).collect(),
        layer_biases: p.layer_biases.iter().map(Matrix::cast).collect(),
    }
}

fn cast_classifier<T: Scalar>(p: ClassifierParams<f64>) -> ClassifierParams<T> {
    ClassifierParams { gcn: cast_gcn(p.gcn), readout: p.readout.cast(), readout_bias: p.readout_bias.cast() }
}

pub fn model_from_str<T: Scalar>(text: &str) -> Result<ModelParams<T>> {
    let (classes, mut map) = parse_all::<f64>(text)?;
    let mp = ModelParams {
        extractor_sf: cast_gcn(take_gcn(&mut map, "extractor_sf")?),
        extractor_nc: cast_gcn(take_gcn(&mut map, "extractor_nc")?),
        classifier_sf: cast_classifier(take_classifier(&mut map, "classifier_sf")?),
        classifier_nc: cast_classifier(take_classifier(&mut map, "classifier_nc")?),
        num_classes: classes,
    };
    finish(map)?;
    mp.validate()?;
    Ok(mp)
}

pub fn classifier_from_str<T: Scalar>(text: &str) -> Result<ClassifierParams<T>> {
    let (_, mut map) = parse_all::<f64>(text)?;
    let cp = cast_classifier(take_classifier(&mut map, "classifier")?);
    finish(map)?;
    cp.validate()?;
    Ok(cp)
}

pub fn write_model<T: Scalar>(path: impl AsRef<Path>, mp: &ModelParams<T>) -> Result<()> {
    fs::write(path, model_to_string(mp))?;
    Ok(())
}

pub fn read_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    model_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;

    #[test]
    fn model_round_trip_is_exact() {
        let mp = ModelParams::<f64>::init(&ModelDims::new(4, 3), 5);
        let back: ModelParams<f64> = model_from_str(&model_to_string(&mp)).unwrap();
        assert_eq!(back, mp);
    }

    #[test]
    fn classifier_round_trip_is_exact() {
        let cp = ClassifierParams::<f64>::glorot(&[3, 8, 8], 2, 9);
        let back: ClassifierParams<f64> = classifier_from_str(&classifier_to_string(&cp)).unwrap();
        assert_eq!(back, cp);
    }

    #[test]
    fn f32_round_trip_is_exact() {
        let mp = ModelParams::<f32>::init(&ModelDims::new(2, 2), 1);
        let back: ModelParams<f32> = model_from_str(&model_to_string(&mp)).unwrap();
        assert_eq!(back, mp);
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let mp = ModelParams::<f64>::init(&ModelDims::new(2, 2), 1);
        let text = model_to_string(&mp);
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(model_from_str::<f64>(&cut).is_err());
        assert!(model_from_str::<f64>("garbage").is_err());
    }
}
