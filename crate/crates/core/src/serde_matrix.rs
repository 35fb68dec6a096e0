//! Serde adapters writing `DMatrix` values as row-major nested arrays.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::Real;

pub fn to_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Build a matrix from rows. A row-less input yields a `0 x 0` matrix.
pub fn from_rows<T: Real>(rows: &[Vec<T>]) -> Result<DMatrix<T>, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn serialize<T: Real, S: Serializer>(m: &DMatrix<T>, s: S) -> Result<S::Ok, S::Error> {
    to_rows(m).serialize(s)
}

pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(d: D) -> Result<DMatrix<T>, D::Error> {
    let rows = Vec::<Vec<T>>::deserialize(d)?;
    from_rows(&rows).map_err(D::Error::custom)
}

pub mod option {
    use super::*;

    pub fn serialize<T: Real, S: Serializer>(
        m: &Option<DMatrix<T>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(
        d: D,
    ) -> Result<Option<DMatrix<T>>, D::Error> {
        match Option::<Vec<Vec<T>>>::deserialize(d)? {
            None => Ok(None),
            Some(rows) => from_rows(&rows).map(Some).map_err(D::Error::custom),
        }
    }
}

pub mod map {
    use super::*;
    use std::collections::BTreeMap;

    pub fn serialize<T: Real, S: Serializer>(
        m: &BTreeMap<String, DMatrix<T>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let rows: BTreeMap<&String, Vec<Vec<T>>> = m.iter().map(|(k, v)| (k, to_rows(v))).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, T: Real, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<String, DMatrix<T>>, D::Error> {
        let raw = BTreeMap::<String, Vec<Vec<T>>>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| from_rows(&v).map(|m| (k, m)).map_err(D::Error::custom))
            .collect()
    }
}
