//! CSV emission and ingestion for trajectories and sweep tables.
//!
//! Floating-point cells are written with the shortest representation that
//! parses back to the identical bits, so every emitted file round-trips
//! losslessly through [`read_trajectory_csv`]. Trajectory files carry the
//! header `t,<name>_0,…,<name>_{k−1}` with one row per step.

use std::io::{Read, Write};

use thiserror::Error;

use crate::sim::{RealVector, SimError, Trajectory};

/// Errors raised by the CSV layer.
#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed table: {0}")]
    Malformed(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Writes one trajectory with header `t,<name>_0,…`.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    name: &str,
    traj: &Trajectory,
) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..traj.dim()).map(|i| format!("{name}_{i}")));
    w.write_record(&header)?;
    for (t, sample) in traj.iter() {
        let mut row = vec![t.to_string()];
        row.extend(sample.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`]; the signal name
/// is recovered from the header.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<(String, Trajectory), CsvError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.is_empty() || &header[0] != "t" {
        return Err(CsvError::Malformed(
            "first column must be the step index t".into(),
        ));
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(CsvError::Malformed("no signal columns".into()));
    }
    let name = header[1]
        .rsplit_once('_')
        .map(|(base, _)| base.to_string())
        .unwrap_or_else(|| header[1].to_string());

    let mut traj: Option<Trajectory> = None;
    let mut expected_t = 0usize;
    for record in r.records() {
        let record = record?;
        if record.len() != dim + 1 {
            return Err(CsvError::Malformed(format!(
                "row has {} cells, expected {}",
                record.len(),
                dim + 1
            )));
        }
        let t: usize = record[0]
            .parse()
            .map_err(|e| CsvError::Malformed(format!("bad step index {:?}: {e}", &record[0])))?;
        let traj = match traj.as_mut() {
            Some(traj) => {
                if t != expected_t {
                    return Err(CsvError::Malformed(format!(
                        "non-contiguous step index: expected {expected_t}, got {t}"
                    )));
                }
                traj
            }
            None => {
                expected_t = t;
                traj.insert(Trajectory::new(t, dim))
            }
        };
        let mut values = Vec::with_capacity(dim);
        for cell in record.iter().skip(1) {
            values.push(cell.parse::<f64>().map_err(|e| {
                CsvError::Malformed(format!("bad float {cell:?} at step {t}: {e}"))
            })?);
        }
        traj.push(RealVector::from_vec(values))?;
        expected_t += 1;
    }
    let traj = traj.ok_or_else(|| CsvError::Malformed("table has no rows".into()))?;
    Ok((name, traj))
}

/// Writes a generic numeric table: a named integer key column followed by
/// float columns.
pub fn write_table_csv<W: Write>(
    out: W,
    headers: &[&str],
    rows: &[(usize, Vec<f64>)],
) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(headers)?;
    for (key, values) in rows {
        if values.len() + 1 != headers.len() {
            return Err(CsvError::Malformed(format!(
                "row for key {key} has {} values, expected {}",
                values.len(),
                headers.len() - 1
            )));
        }
        let mut row = vec![key.to_string()];
        row.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_traj() -> Trajectory {
        let mut traj = Trajectory::new(0, 2);
        for t in 0..25 {
            let x = (t as f64 * 0.7).sin() / 3.0;
            traj.push(RealVector::from_vec(vec![x, -x * 1.0e-17 + 2.0 / 3.0]))
                .unwrap();
        }
        traj
    }

    #[test]
    fn trajectory_round_trips_bit_exactly() {
        let traj = sample_traj();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, "y", &traj).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,y_0,y_1\n"));
        let (name, back) = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(name, "y");
        assert_eq!(back.len(), traj.len());
        for (t, sample) in traj.iter() {
            let restored = back.get(t).unwrap();
            for i in 0..2 {
                assert_eq!(sample[i].to_bits(), restored[i].to_bits(), "t={t} i={i}");
            }
        }
    }

    #[test]
    fn malformed_tables_are_rejected() {
        assert!(matches!(
            read_trajectory_csv("a,b\n1,2\n".as_bytes()),
            Err(CsvError::Malformed(_))
        ));
        assert!(matches!(
            read_trajectory_csv("t,y_0\n0,1.0\n2,1.0\n".as_bytes()),
            Err(CsvError::Malformed(_))
        ));
        assert!(matches!(
            read_trajectory_csv("t,y_0\n0,huh\n".as_bytes()),
            Err(CsvError::Malformed(_))
        ));
        assert!(matches!(
            read_trajectory_csv("t,y_0\n".as_bytes()),
            Err(CsvError::Malformed(_))
        ));
    }

    #[test]
    fn table_rows_must_match_headers() {
        let mut buf = Vec::new();
        write_table_csv(
            &mut buf,
            &["order", "dev"],
            &[(5, vec![2.5]), (6, vec![2.0])],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "order,dev\n5,2.5\n6,2\n");

        let mut buf = Vec::new();
        assert!(matches!(
            write_table_csv(&mut buf, &["order", "dev"], &[(5, vec![2.5, 1.0])]),
            Err(CsvError::Malformed(_))
        ));
    }
}
