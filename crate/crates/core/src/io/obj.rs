use super::{parse_error, IoResult, MeshData};
use crate::geometry::Vec3;

fn resolve(token: &str, count: usize, line: usize) -> IoResult<usize> {
    let loc = || format!("line {line}");
    let i: i64 = token
        .parse()
        .map_err(|_| parse_error(loc(), format!("bad index {token:?}")))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return Err(parse_error(loc(), "index 0 is invalid"));
    };
    if idx < 0 || idx as usize >= count {
        return Err(parse_error(loc(), format!("index {i} out of range ({count} defined)")));
    }
    Ok(idx as usize)
}

/// Parses `v`, `vn` and `f` records; polygons are split into a fan around
/// their first corner. Other records are ignored.
pub fn parse_obj(text: &str) -> IoResult<MeshData> {
    let mut vertices = Vec::new();
    let mut file_normals = Vec::new();
    let mut assigned: Vec<Option<Vec3>> = Vec::new();
    let mut referenced_normals = false;
    let mut faces = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        let Some(tag) = tok.next() else { continue };
        let nums = |tok: std::str::SplitWhitespace| -> IoResult<Vec3> {
            let v: Vec<f64> = tok
                .take(3)
                .map(|t| t.parse().map_err(|_| parse_error(format!("line {line_no}"), format!("bad number {t:?}"))))
                .collect::<IoResult<_>>()?;
            if v.len() < 3 {
                return Err(parse_error(format!("line {line_no}"), "expected 3 coordinates"));
            }
            Ok(Vec3::new(v[0], v[1], v[2]))
        };
        match tag {
            "v" => {
                vertices.push(nums(tok)?);
                assigned.push(None);
            }
            "vn" => file_normals.push(nums(tok)?),
            "f" => {
                let mut corners = Vec::new();
                for t in tok {
                    let mut parts = t.split('/');
                    let vi = resolve(parts.next().unwrap_or(""), vertices.len(), line_no)?;
                    if let Some(n) = parts.nth(1).filter(|s| !s.is_empty()) {
                        let ni = resolve(n, file_normals.len(), line_no)?;
                        referenced_normals = true;
                        assigned[vi].get_or_insert(file_normals[ni]);
                    }
                    corners.push(vi);
                }
                if corners.len() < 3 {
                    return Err(parse_error(format!("line {line_no}"), "face with fewer than 3 corners"));
                }
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let normals = if referenced_normals && assigned.iter().all(|n| n.is_some()) {
        Some(assigned.into_iter().map(|n| n.unwrap()).collect())
    } else if !referenced_normals && !file_normals.is_empty() && file_normals.len() == vertices.len() {
        Some(file_normals)
    } else {
        None
    };
    Ok(MeshData {
        vertices,
        normals,
        faces,
    })
}

pub fn write_obj_string(data: &MeshData) -> String {
    let mut s = String::new();
    for v in &data.vertices {
        s.push_str(&format!("v {:?} {:?} {:?}\n", v.x, v.y, v.z));
    }
    if let Some(n) = &data.normals {
        for v in n {
            s.push_str(&format!("vn {:?} {:?} {:?}\n", v.x, v.y, v.z));
        }
    }
    for f in &data.faces {
        let [a, b, c] = f.map(|i| i + 1);
        if data.normals.is_some() {
            s.push_str(&format!("f {a}//{a} {b}//{b} {c}//{c}\n"));
        } else {
            s.push_str(&format!("f {a} {b} {c}\n"));
        }
    }
    s
}
