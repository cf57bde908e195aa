use std::path::Path;

use super::{parse_error, read_file, write_file, IoResult};
use crate::geometry::Vec3;
use crate::losses::CorrespondenceSet;

const CORR_HEADER: [&str; 6] = ["cx", "cy", "cz", "tx", "ty", "tz"];
const FLOW_HEADER: [&str; 6] = ["x", "y", "z", "fx", "fy", "fz"];

fn read_rows(bytes: &[u8], header: &[&str; 6], what: &str) -> IoResult<Vec<(Vec3, Vec3)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_error("line 1", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(parse_error(
            "line 1",
            format!("{what} header must be {}, found {}", header.join(","), found.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_error(format!("line {line}"), e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let v: Vec<f64> = rec
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(format!("line {line}"), format!("bad value {t:?}")))
            })
            .collect::<IoResult<_>>()?;
        if v.len() != 6 {
            return Err(parse_error(format!("line {line}"), format!("expected 6 fields, found {}", v.len())));
        }
        rows.push((Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])));
    }
    Ok(rows)
}

fn rows_to_bytes(header: &[&str; 6], rows: impl Iterator<Item = (Vec3, Vec3)>) -> IoResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| parse_error("csv", e.to_string());
    w.write_record(header).map_err(io)?;
    for (a, b) in rows {
        let rec: Vec<String> = [a.x, a.y, a.z, b.x, b.y, b.z].iter().map(|v| format!("{v:?}")).collect();
        w.write_record(&rec).map_err(io)?;
    }
    w.into_inner().map_err(|e| parse_error("csv", e.to_string()))
}

/// Reads `cx,cy,cz,tx,ty,tz` rows.
pub fn read_correspondences(path: &Path) -> IoResult<CorrespondenceSet> {
    let rows = read_rows(&read_file(path)?, &CORR_HEADER, "correspondence")?;
    CorrespondenceSet::new(rows).map_err(|e| parse_error(path.display().to_string(), e.to_string()))
}

pub fn write_correspondences(path: &Path, corr: &CorrespondenceSet) -> IoResult<()> {
    let bytes = rows_to_bytes(&CORR_HEADER, corr.pairs().map(|(a, b)| (*a, *b)))?;
    write_file(path, &bytes)
}

/// Reads `x,y,z,fx,fy,fz` rows: canonical position and its displacement.
pub fn read_flow(path: &Path) -> IoResult<Vec<(Vec3, Vec3)>> {
    read_rows(&read_file(path)?, &FLOW_HEADER, "flow")
}

pub fn write_flow(path: &Path, positions: &[Vec3], flow: &[Vec3]) -> IoResult<()> {
    let bytes = rows_to_bytes(&FLOW_HEADER, positions.iter().copied().zip(flow.iter().copied()))?;
    write_file(path, &bytes)
}
