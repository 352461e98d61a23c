//! Feeder files: one JSON document, or a pair of CSV tables
//! (`from,to,r_pu,x_pu` and `bus,p_nom,q_nom`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bus, FeederModel, Line};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct FeederDoc {
    #[serde(default = "one")]
    v0: f64,
    #[serde(default = "one")]
    s_base: f64,
    #[serde(default = "one")]
    v_base: f64,
    buses: Vec<Bus>,
    lines: Vec<Line>,
}

fn one() -> f64 {
    1.0
}

/// Loads a `.json` feeder document, or a directory holding `lines.csv` and
/// `buses.csv`.
pub fn load_feeder(path: impl AsRef<Path>) -> Result<FeederModel> {
    let path = path.as_ref();
    if path.is_dir() {
        load_feeder_csv(path.join("lines.csv"), path.join("buses.csv"))
    } else {
        load_feeder_json(path)
    }
}

pub fn load_feeder_json(path: impl AsRef<Path>) -> Result<FeederModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feeder_json(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_feeder_json(text: &str) -> Result<FeederModel> {
    let doc: FeederDoc = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    FeederModel::new(doc.buses, doc.lines, doc.v0, doc.s_base, doc.v_base)
}

pub fn load_feeder_csv(lines: impl AsRef<Path>, buses: impl AsRef<Path>) -> Result<FeederModel> {
    let lines: Vec<Line> = read_csv(lines.as_ref())?;
    let buses: Vec<Bus> = read_csv(buses.as_ref())?;
    FeederModel::new(buses, lines, 1.0, 1.0, 1.0)
}

pub fn write_feeder_json(f: &FeederModel) -> String {
    let doc = FeederDoc {
        v0: f.v0,
        s_base: f.s_base,
        v_base: f.v_base,
        buses: f.buses.clone(),
        lines: f.lines.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("feeder serializes")
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse(format!("{}: {other:?}", path.display())),
        })?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.json");
        fs::write(
            &p,
            r#"{"buses":[{"bus":0,"p_nom":0,"q_nom":0},{"bus":1,"p_nom":0.1,"q_nom":0.05}],
                "lines":[{"from":0,"to":1,"r_pu":0.01,"x_pu":0.02}]}"#,
        )
        .unwrap();
        let f = load_feeder(&p).unwrap();
        assert_eq!(f.n(), 1);
        fs::write(&p, write_feeder_json(&f)).unwrap();
        assert_eq!(load_feeder(&p).unwrap(), f);
    }

    #[test]
    fn csv_pair() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("lines.csv"), "from,to,r_pu,x_pu\n0,1,0.01,0.02\n1,2,0.02,0.01\n").unwrap();
        fs::write(dir.path().join("buses.csv"), "bus,p_nom,q_nom\n0,0,0\n1,0.1,0.05\n2,0.2,0.1\n").unwrap();
        let f = load_feeder(dir.path()).unwrap();
        assert_eq!(f.n(), 2);
        assert_eq!(f.buses[2].p_nom, 0.2);
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_feeder(dir.path().join("nope.json")), Err(Error::Io { .. })));
        let p = dir.path().join("bad.json");
        fs::write(&p, "{").unwrap();
        assert!(matches!(load_feeder(&p), Err(Error::Parse(_))));
        fs::write(
            &p,
            r#"{"buses":[{"bus":0,"p_nom":0,"q_nom":0},{"bus":1,"p_nom":0,"q_nom":0}],
                "lines":[{"from":0,"to":1,"r_pu":0.01,"x_pu":0.02},{"from":0,"to":1,"r_pu":0.01,"x_pu":0.02}]}"#,
        )
        .unwrap();
        assert!(matches!(load_feeder(&p), Err(Error::Topology(_))));
    }
}
