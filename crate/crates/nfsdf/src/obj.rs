//! ASCII Wavefront OBJ, vertices and faces only.

use std::fmt::Write as _;
use std::path::Path;

use nfsdf_core::mesh::TriangleMesh;
use nfsdf_core::Vec3;

use crate::{io, Error, Result};

/// Coordinates use the shortest representation that parses back to the same
/// `f64`.
pub fn encode_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn decode_obj(text: &str) -> std::result::Result<TriangleMesh, String> {
    let mut mesh = TriangleMesh::default();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let err = |m: &str| format!("line {}: {m}", ln + 1);
        match it.next() {
            None => {}
            Some(c) if c.starts_with('#') => {}
            Some("v") => {
                let xyz: Vec<f64> = it
                    .map(|t| t.parse::<f64>().map_err(|e| err(&e.to_string())))
                    .collect::<std::result::Result<_, _>>()?;
                let [x, y, z] = xyz[..] else {
                    return Err(err("vertex needs 3 coordinates"));
                };
                mesh.vertices.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| {
                        // accept `v/vt/vn` references, keep the vertex index
                        let v = t.split('/').next().unwrap_or(t);
                        match v.parse::<u32>() {
                            Ok(i) if i >= 1 => Ok(i - 1),
                            _ => Err(err("face index must be a positive integer")),
                        }
                    })
                    .collect::<std::result::Result<_, _>>()?;
                let [a, b, c] = idx[..] else {
                    return Err(err("only triangular faces are supported"));
                };
                mesh.triangles.push([a, b, c]);
            }
            Some(other) => return Err(err(&format!("unsupported statement `{other}`"))),
        }
    }
    mesh.validate().map_err(|e| e.to_string())?;
    Ok(mesh)
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    io::write(path, encode_obj(mesh).as_bytes())
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    decode_obj(&io::read_string(path)?).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nfsdf_core::mesh::{marching_cubes, Grid};

    #[test]
    fn round_trip() {
        let grid = Grid::cube(12, 1.2);
        let mesh = marching_cubes(|p| p.norm() - 0.7 + 1e-3 * p.x.sin(), &grid, 0.0).unwrap();
        let text = encode_obj(&mesh);
        let back = decode_obj(&text).unwrap();
        assert_eq!(back, mesh);
        assert_eq!(encode_obj(&back), text);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_obj("v 0 0\n").is_err());
        assert!(decode_obj("v 0 0 0\nf 1 2 5\n").is_err());
        assert!(decode_obj("v 0 0 0\nf 0 1 1\n").is_err());
        assert!(decode_obj("vn 0 0 1\n").is_err());
        let m = decode_obj("# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }
}
