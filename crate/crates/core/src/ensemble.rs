//! Unweighted probability averaging across models, plus prediction CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Probability matrices of several models on the same samples.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionSet {
    names: Vec<String>,
    members: Vec<Matrix>,
}

impl PredictionSet {
    pub fn new() -> Self {
        PredictionSet::default()
    }

    /// Adds one member; its shape must match earlier members and every
    /// entry must lie in `[0, 1]`.
    pub fn push(&mut self, name: impl Into<String>, probs: Matrix) -> Result<()> {
        if let Some(first) = self.members.first() {
            if !first.same_shape(&probs) {
                return Err(Error::Contract(format!(
                    "member is {}x{}, ensemble is {}x{}",
                    probs.rows(),
                    probs.cols(),
                    first.rows(),
                    first.cols()
                )));
            }
        }
        if probs.as_slice().iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain("ensemble members must hold probabilities in [0, 1]".into()));
        }
        self.names.push(name.into());
        self.members.push(probs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn members(&self) -> &[Matrix] {
        &self.members
    }
}

/// Elementwise arithmetic mean of the members, accumulated as offsets from
/// the first member so that identical members average to themselves exactly.
pub fn ensemble_average(set: &PredictionSet) -> Result<Matrix> {
    let first = set
        .members
        .first()
        .ok_or_else(|| Error::Contract("cannot average an empty prediction set".into()))?;
    let mut offset = Matrix::zeros(first.rows(), first.cols());
    for m in &set.members[1..] {
        for ((o, v), f) in offset.as_mut_slice().iter_mut().zip(m.as_slice()).zip(first.as_slice()) {
            *o += v - f;
        }
    }
    let k = set.members.len() as f64;
    let mut out = first.clone();
    for (o, d) in out.as_mut_slice().iter_mut().zip(offset.as_slice()) {
        *o = (*o + d / k).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// `id,p0,...,p{C-1}` with shortest round-trip numbers.
pub fn predictions_to_csv(ids: &[String], probs: &Matrix) -> Result<String> {
    if ids.len() != probs.rows() {
        return Err(Error::Shape(format!("{} ids for {} prediction rows", ids.len(), probs.rows())));
    }
    let mut s = String::from("id");
    for k in 0..probs.cols() {
        let _ = write!(s, ",p{k}");
    }
    s.push('\n');
    for (i, id) in ids.iter().enumerate() {
        s.push_str(id);
        for v in probs.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_predictions(path: &Path, ids: &[String], probs: &Matrix) -> Result<()> {
    fs::write(path, predictions_to_csv(ids, probs)?).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let file = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Ingestion(format!("{file}: {e}")))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Ingestion(format!("{file}: {e}")))?
        .clone();
    let c = headers.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("id".to_string()).chain((0..c).map(|k| format!("p{k}"))).collect();
    if c == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Ingestion(format!("{file}: header must be id,p0,...,p{{C-1}}")));
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Ingestion(format!("{file}: {e}")))?;
        ids.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                row: row + 1,
                message: format!("'{field}' is not a number"),
            })?;
            data.push(v);
        }
    }
    let m = Matrix::from_vec(ids.len(), c, data)?;
    Ok((ids, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set_of(ms: &[Matrix]) -> PredictionSet {
        let mut s = PredictionSet::new();
        for (i, m) in ms.iter().enumerate() {
            s.push(format!("m{i}"), m.clone()).unwrap();
        }
        s
    }

    #[test]
    fn averaging_examples() {
        let a = Matrix::from_rows(&[[0.2, 0.9]]).unwrap();
        let b = Matrix::from_rows(&[[0.4, 0.9]]).unwrap();
        let avg = ensemble_average(&set_of(&[a.clone(), b])).unwrap();
        assert!((avg.get(0, 0) - 0.3).abs() < 1e-15);
        assert_eq!(ensemble_average(&set_of(&[a.clone()])).unwrap(), a);
        let third = Matrix::from_rows(&[[0.1, 1.0 / 3.0]]).unwrap();
        assert_eq!(ensemble_average(&set_of(&[third.clone(), third.clone(), third.clone()])).unwrap(), third);
    }

    #[test]
    fn contract_violations() {
        assert!(matches!(ensemble_average(&PredictionSet::new()), Err(Error::Contract(_))));
        let mut s = set_of(&[Matrix::zeros(2, 3)]);
        assert!(matches!(s.push("bad", Matrix::zeros(3, 2)), Err(Error::Contract(_))));
        assert!(s.push("neg", Matrix::filled(2, 3, -0.1)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let ids = vec!["a".to_string(), "b".to_string()];
        let m = Matrix::from_rows(&[[0.1, 1.0 / 3.0], [0.0, 1.0]]).unwrap();
        write_predictions(&path, &ids, &m).unwrap();
        assert!(fs::read_to_string(&path).unwrap().starts_with("id,p0,p1\n"));
        let (ids2, m2) = read_predictions(&path).unwrap();
        assert_eq!(ids2, ids);
        assert_eq!(m2, m);
        fs::write(&path, "id,q0\na,0.5\n").unwrap();
        assert!(read_predictions(&path).is_err());
        fs::write(&path, "id,p0\na,zz\n").unwrap();
        assert!(matches!(read_predictions(&path), Err(Error::Parse { row: 1, .. })));
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_bounded(vals in proptest::collection::vec(0.0f64..=1.0, 12), k in 1usize..4) {
            let ms: Vec<Matrix> = (0..k)
                .map(|j| Matrix::from_vec(2, 2, vals[4 * j..4 * j + 4].to_vec()).unwrap())
                .collect();
            let fwd = ensemble_average(&set_of(&ms)).unwrap();
            let mut rev = ms.clone();
            rev.reverse();
            let bwd = ensemble_average(&set_of(&rev)).unwrap();
            for i in 0..4 {
                let col: Vec<f64> = ms.iter().map(|m| m.as_slice()[i]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((fwd.as_slice()[i] - bwd.as_slice()[i]).abs() < 1e-15);
                prop_assert!(fwd.as_slice()[i] >= lo - 1e-15 && fwd.as_slice()[i] <= hi + 1e-15);
            }
        }
    }
}
