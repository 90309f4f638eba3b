//! Matrix serialization: headerless row-major CSV and JSON arrays-of-arrays.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back reproduces every bit. Both readers reject ragged rows.

use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::Matrix;

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let ncols = check_rectangular(rows)?;
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn check_rectangular<T>(rows: &[Vec<T>]) -> Result<usize> {
    let Some(first) = rows.first() else {
        return invalid("matrix has no rows");
    };
    let ncols = first.len();
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return invalid(format!(
            "ragged matrix: row {i} has {} entries, row 0 has {ncols}",
            rows[i].len()
        ));
    }
    Ok(ncols)
}

pub fn rows_to_csv<T: Display>(rows: &[Vec<T>]) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn rows_from_csv<T>(text: &str) -> Result<Vec<Vec<T>>>
where
    T: FromStr,
    T::Err: Display,
{
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // The csv reader itself rejects records of unequal length.
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<T>()
                    .map_err(|e| crate::Error::Invalid(format!("row {i}: cannot parse {field:?}: {e}")))
            })
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    check_rectangular(&rows)?;
    Ok(rows)
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    rows_to_csv(&matrix_to_rows(m))
}

pub fn matrix_from_csv(text: &str) -> Result<Matrix> {
    matrix_from_rows(&rows_from_csv::<f64>(text)?)
}

pub fn matrix_to_json(m: &Matrix) -> String {
    serde_json::to_string(&matrix_to_rows(m)).expect("f64 rows always serialize")
}

pub fn matrix_from_json(text: &str) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text)?;
    matrix_from_rows(&rows)
}

/// `#[serde(with = "rows")]` for [`Matrix`] fields.
pub mod rows {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        matrix_from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_rejects_ragged_rows() {
        assert!(matrix_from_csv("1,2\n3\n").is_err());
        assert!(matrix_from_json("[[1,2],[3]]").is_err());
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(matrix_from_csv("1,x\n").is_err());
        assert!(matrix_from_csv("").is_err());
    }

    #[test]
    fn integer_counts_roundtrip() {
        let rows = vec![vec![3u64, 1], vec![2, 4]];
        let text = rows_to_csv(&rows);
        assert_eq!(text, "3,1\n2,4\n");
        assert_eq!(rows_from_csv::<u64>(&text).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn csv_and_json_are_lossless(
            (r, c, vals) in (1usize..6, 1usize..6)
                .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-1e6f64..1e6, r * c)))
        ) {
            let m = Matrix::from_row_slice(r, c, &vals);
            prop_assert_eq!(&matrix_from_csv(&matrix_to_csv(&m)).unwrap(), &m);
            prop_assert_eq!(&matrix_from_json(&matrix_to_json(&m)).unwrap(), &m);
        }
    }
}
