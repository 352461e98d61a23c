//! Plain-text dump format for conic programs, for debugging.
//!
//! ```text
//! conic 3 2          # rows cols
//! cone soc 3
//! c 0 1
//! b 1 1
//! A 0 0 -1
//! name 0 t
//! ```
//!
//! `c`, `b` and `A` lines are sparse (`index value` and `row col value`);
//! missing entries are zero. Values are written in shortest round-trip form.

use std::fmt::Write as _;

use super::{ConeProgram, CsrMatrix};
use crate::conic::Cone;
use crate::error::{Error, Result};

pub fn write_program(p: &ConeProgram) -> String {
    let mut out = String::new();
    writeln!(out, "conic {} {}", p.num_rows(), p.num_vars()).unwrap();
    for k in &p.cones {
        let (kind, len) = match *k {
            Cone::Zero(n) => ("zero", n),
            Cone::Nonneg(n) => ("nonneg", n),
            Cone::Soc(n) => ("soc", n),
        };
        writeln!(out, "cone {kind} {len}").unwrap();
    }
    for (j, &v) in p.c.iter().enumerate() {
        if v != 0.0 {
            writeln!(out, "c {j} {v:?}").unwrap();
        }
    }
    for (i, &v) in p.b.iter().enumerate() {
        if v != 0.0 {
            writeln!(out, "b {i} {v:?}").unwrap();
        }
    }
    for (i, j, v) in p.a.triplets() {
        writeln!(out, "A {i} {j} {v:?}").unwrap();
    }
    if let Some(names) = &p.var_names {
        for (j, name) in names.iter().enumerate() {
            writeln!(out, "name {j} {name}").unwrap();
        }
    }
    out
}

pub fn read_program(text: &str) -> Result<ConeProgram> {
    let mut dims: Option<(usize, usize)> = None;
    let mut cones = Vec::new();
    let mut c_entries = Vec::new();
    let mut b_entries = Vec::new();
    let mut triplets = Vec::new();
    let mut names: Vec<(usize, String)> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| Error::Parse(format!("line {}: {msg}: `{raw}`", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |k: usize| -> Result<usize> {
            fields.get(k).ok_or_else(|| err("missing field"))?.parse().map_err(|_| err("bad integer"))
        };
        let val = |k: usize| -> Result<f64> {
            fields.get(k).ok_or_else(|| err("missing field"))?.parse().map_err(|_| err("bad number"))
        };
        match fields[0] {
            "conic" => dims = Some((num(1)?, num(2)?)),
            "cone" => {
                let len = num(2)?;
                cones.push(match fields.get(1).copied() {
                    Some("zero") => Cone::Zero(len),
                    Some("nonneg") => Cone::Nonneg(len),
                    Some("soc") => Cone::Soc(len),
                    _ => return Err(err("unknown cone kind")),
                });
            }
            "c" => c_entries.push((num(1)?, val(2)?)),
            "b" => b_entries.push((num(1)?, val(2)?)),
            "A" => triplets.push((num(1)?, num(2)?, val(3)?)),
            "name" => names.push((num(1)?, fields.get(2).ok_or_else(|| err("missing name"))?.to_string())),
            _ => return Err(err("unknown record")),
        }
    }
    let (m, n) = dims.ok_or_else(|| Error::Parse("missing `conic <rows> <cols>` header".into()))?;
    let mut c = vec![0.0; n];
    for (j, v) in c_entries {
        *c.get_mut(j).ok_or_else(|| Error::Parse(format!("c index {j} out of range")))? = v;
    }
    let mut b = vec![0.0; m];
    for (i, v) in b_entries {
        *b.get_mut(i).ok_or_else(|| Error::Parse(format!("b index {i} out of range")))? = v;
    }
    if let Some(&(i, j, _)) = triplets.iter().find(|&&(i, j, _)| i >= m || j >= n) {
        return Err(Error::Parse(format!("A entry ({i},{j}) out of range")));
    }
    let a = CsrMatrix::from_triplets(m, n, &triplets);
    let mut p = ConeProgram::new(c, a, b, cones)?;
    if !names.is_empty() {
        let mut v = vec![String::new(); n];
        for (j, name) in names {
            *v.get_mut(j).ok_or_else(|| Error::Parse(format!("name index {j} out of range")))? = name;
        }
        p.var_names = Some(v);
        p.validate()?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_and_reload() {
        let a = CsrMatrix::from_triplets(3, 2, &[(0, 0, -1.0), (1, 1, 0.1), (2, 0, 1e-17)]);
        let mut p = ConeProgram::new(vec![1.0, -0.3], a, vec![0.0, 1.0, 2.5], vec![Cone::Zero(1), Cone::Soc(2)]).unwrap();
        p.var_names = Some(vec!["t".into(), "x".into()]);
        let text = write_program(&p);
        assert_eq!(read_program(&text).unwrap(), p);
    }

    #[test]
    fn rejects_unknown_records() {
        assert!(matches!(read_program("conic 1 1\nfoo 1"), Err(Error::Parse(_))));
        assert!(matches!(read_program("cone soc 1"), Err(Error::Parse(_))));
    }
}
