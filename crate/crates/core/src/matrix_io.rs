//! Dense matrices as CSV with a header row of column ids and a leading id column.
//!
//! Values are written with 17 significant digits, so a write/read cycle
//! reproduces every `f64` exactly.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A matrix with labels for its rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_matrix_csv<W: Write>(
    writer: W,
    values: &DMatrix<f64>,
    row_ids: &[String],
    col_ids: &[String],
) -> Result<()> {
    if row_ids.len() != values.nrows() || col_ids.len() != values.ncols() {
        return Err(Error::dims(values.shape(), (row_ids.len(), col_ids.len())));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(col_ids.iter().cloned());
    wtr.write_record(&header)?;
    for (i, id) in row_ids.iter().enumerate() {
        let mut rec = Vec::with_capacity(values.ncols() + 1);
        rec.push(id.clone());
        rec.extend(values.row(i).iter().map(|&v| format_value(v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(reader: R) -> Result<LabeledMatrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(Error::Validation("matrix CSV has an empty header".into()));
    }
    let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut data = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut fields = rec.iter();
        row_ids.push(fields.next().unwrap_or_default().to_string());
        for f in fields {
            data.push(f.parse::<f64>().map_err(|e| {
                Error::Validation(format!("matrix CSV: cannot parse `{f}` as a number: {e}"))
            })?);
        }
    }
    let values = DMatrix::from_row_slice(row_ids.len(), col_ids.len(), &data);
    Ok(LabeledMatrix {
        row_ids,
        col_ids,
        values,
    })
}

/// Serde adapter writing a matrix as a list of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, ser: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows have unequal lengths"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            rows in 1usize..5,
            cols in 1usize..5,
            seed in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, 25),
        ) {
            let m = DMatrix::from_fn(rows, cols, |i, j| seed[i * 5 + j]);
            let mut buf = Vec::new();
            write_matrix_csv(&mut buf, &m, &ids("a", rows), &ids("s", cols)).unwrap();
            let back = read_matrix_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.values, m);
            prop_assert_eq!(back.row_ids, ids("a", rows));
            prop_assert_eq!(back.col_ids, ids("s", cols));
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let text = "id,s0,s1\na0,1.0\n";
        assert!(read_matrix_csv(text.as_bytes()).is_err());
        let text = "id,s0\na0,abc\n";
        assert!(read_matrix_csv(text.as_bytes()).is_err());
    }
}
