//! Plain-text QP format: a `dims d p` line followed by labelled sections
//! `H` (d rows), `g`, `lb`, `ub`, `G` (p rows), `h`. Values are
//! whitespace-separated; infinities are written `inf` / `-inf`.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::QpProblem;
use crate::error::{Error, Result};

fn write_row<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> Result<()> {
    let line: Vec<String> = values.map(|v| format!("{v:e}")).collect();
    writeln!(w, "{}", line.join(" "))?;
    Ok(())
}

pub(super) fn write<W: Write>(qp: &QpProblem, mut w: W) -> Result<()> {
    writeln!(w, "dims {} {}", qp.dim(), qp.num_ineq())?;
    writeln!(w, "H")?;
    for row in qp.hessian.row_iter() {
        write_row(&mut w, row.iter().copied())?;
    }
    for (label, v) in [("g", &qp.linear), ("lb", &qp.lb), ("ub", &qp.ub)] {
        writeln!(w, "{label}")?;
        write_row(&mut w, v.iter().copied())?;
    }
    writeln!(w, "G")?;
    for row in qp.g_ineq.row_iter() {
        write_row(&mut w, row.iter().copied())?;
    }
    writeln!(w, "h")?;
    write_row(&mut w, qp.h_ineq.iter().copied())?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        loop {
            match self.inner.next() {
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        return Ok(line);
                    }
                }
                None => return Err(Error::Config("unexpected end of QP dump".into())),
            }
        }
    }

    fn expect(&mut self, label: &str) -> Result<()> {
        let line = self.next_line()?;
        if line.trim() != label {
            return Err(Error::Config(format!("expected section {label}, found {line:?}")));
        }
        Ok(())
    }

    fn values(&mut self, count: usize) -> Result<Vec<f64>> {
        if count == 0 {
            // empty rows are written as blank lines, which next_line skips
            return Ok(Vec::new());
        }
        let line = self.next_line()?;
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Config(format!("bad number {t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != count {
            return Err(Error::dim("QP dump row", count, vals.len()));
        }
        Ok(vals)
    }
}

pub(super) fn read<R: BufRead>(r: R) -> Result<QpProblem> {
    let mut lines = Lines { inner: r.lines() };
    let header = lines.next_line()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let (d, p) = match parts.as_slice() {
        ["dims", d, p] => (
            d.parse::<usize>().map_err(|e| Error::Config(e.to_string()))?,
            p.parse::<usize>().map_err(|e| Error::Config(e.to_string()))?,
        ),
        _ => return Err(Error::Config(format!("bad QP dump header {header:?}"))),
    };
    lines.expect("H")?;
    let mut h = Vec::with_capacity(d * d);
    for _ in 0..d {
        h.extend(lines.values(d)?);
    }
    lines.expect("g")?;
    let g = lines.values(d)?;
    lines.expect("lb")?;
    let lb = lines.values(d)?;
    lines.expect("ub")?;
    let ub = lines.values(d)?;
    lines.expect("G")?;
    let mut gm = Vec::with_capacity(p * d);
    for _ in 0..p {
        gm.extend(lines.values(d)?);
    }
    lines.expect("h")?;
    let hv = lines.values(p)?;
    Ok(QpProblem {
        hessian: DMatrix::from_row_slice(d, d, &h),
        linear: DVector::from_vec(g),
        lb: DVector::from_vec(lb),
        ub: DVector::from_vec(ub),
        g_ineq: DMatrix::from_row_slice(p, d, &gm),
        h_ineq: DVector::from_vec(hv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values() {
        let qp = QpProblem {
            hessian: DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0 / 3.0]),
            linear: DVector::from_vec(vec![-1.5, 1e-17]),
            lb: DVector::from_vec(vec![f64::NEG_INFINITY, 0.0]),
            ub: DVector::from_vec(vec![2.976e6, f64::INFINITY]),
            g_ineq: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            h_ineq: DVector::from_vec(vec![0.25]),
        };
        let mut buf = Vec::new();
        qp.write_text(&mut buf).unwrap();
        let back = QpProblem::read_text(buf.as_slice()).unwrap();
        assert_eq!(back, qp);
    }

    #[test]
    fn round_trip_without_inequalities() {
        let qp = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        let mut buf = Vec::new();
        qp.write_text(&mut buf).unwrap();
        assert_eq!(QpProblem::read_text(buf.as_slice()).unwrap(), qp);
    }
}
