use std::fmt::Write as _;
use std::path::Path;

use crate::math::Vec3;
use crate::scalar::Real;

use super::{GeometryError, TriMesh};

/// Parses ASCII OBJ text: `v` and `f` records; polygons are fan triangulated.
/// Normals, texture coordinates, groups and material records are ignored.
pub fn parse_obj<T: Real>(text: &str) -> Result<TriMesh<T>, GeometryError> {
    let mut vertices: Vec<Vec3<T>> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let err = |message: String| GeometryError::Parse { line: line_no, message };
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut c = [T::zero(); 3];
                for slot in &mut c {
                    let s = tok.next().ok_or_else(|| err("vertex needs 3 coordinates".into()))?;
                    let x: f64 = s.parse().map_err(|_| err(format!("bad coordinate {s:?}")))?;
                    *slot = T::lit(x);
                }
                vertices.push(Vec3::from_array(c));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for s in tok {
                    let first = s.split('/').next().unwrap_or("");
                    let i: i64 = first.parse().map_err(|_| err(format!("bad face index {s:?}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(err("face index 0 is invalid (OBJ indices are 1-based)".into()));
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(err(format!("face index {i} out of range ({} vertices)", vertices.len())));
                    }
                    idx.push(resolved as u32);
                }
                if idx.len() < 3 {
                    return Err(err("face needs at least 3 vertices".into()));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

pub fn load_obj<T: Real>(path: impl AsRef<Path>) -> Result<TriMesh<T>, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| GeometryError::Io { path: path.display().to_string(), source })?;
    parse_obj(&text)
}

/// OBJ text with LF line endings. Coordinates use the shortest exact decimal form.
pub fn write_obj_string<T: Real>(mesh: &TriMesh<T>) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.triangles.len() * 20);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn write_obj<T: Real>(mesh: &TriMesh<T>, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    let path = path.as_ref();
    std::fs::write(path, write_obj_string(mesh))
        .map_err(|source| GeometryError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> TriMesh<f64> {
        TriMesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn tetrahedron_round_trip() {
        let t = tetrahedron();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tet.obj");
        write_obj(&t, &path).unwrap();
        let back: TriMesh<f64> = load_obj(&path).unwrap();
        assert_eq!(back.triangles, t.triangles);
        assert_eq!(back.vertices, t.vertices);
        assert!(!std::fs::read_to_string(&path).unwrap().contains('\r'));
    }

    #[test]
    fn quad_is_fan_split() {
        let m: TriMesh<f64> = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn zero_index_names_the_line() {
        let e = parse_obj::<f64>("# header\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n").unwrap_err();
        match e {
            GeometryError::Parse { line, message } => {
                assert_eq!(line, 5);
                assert!(message.contains("1-based"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn slash_indices_and_negative_references() {
        let m: TriMesh<f64> = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 -1//1\n").unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }
}
