//! Minimal ASCII OFF mesh parser: `OFF` header, a counts line, vertex
//! lines, then triangular face lines.

use super::DataError;
use std::fs;
use std::path::Path;

/// Triangle mesh with indexed faces.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn load_off(path: &Path) -> Result<Mesh, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    // Strip comments and blanks but remember original line numbers.
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, raw)| (i + 1, raw.split('#').next().unwrap_or("").trim()))
        .filter(|(_, body)| !body.is_empty())
        .collect();

    let mut it = lines.into_iter();
    let (line_no, header) = it.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if header != "OFF" {
        return Err(parse_err(path, line_no, "missing OFF header"));
    }
    let (line_no, counts) = it
        .next()
        .ok_or_else(|| parse_err(path, line_no, "missing counts line"))?;
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|f| f.parse().map_err(|_| parse_err(path, line_no, "bad counts line")))
        .collect::<Result<_, _>>()?;
    if counts.len() < 2 {
        return Err(parse_err(path, line_no, "counts line needs vertices and faces"));
    }
    let (n_vertices, n_faces) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (line_no, body) = it
            .next()
            .ok_or_else(|| parse_err(path, 0, "unexpected end of vertex list"))?;
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(path, line_no, "vertex line needs 3 coordinates"));
        }
        let mut v = [0.0f64; 3];
        for (c, f) in fields.iter().enumerate() {
            v[c] = f
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad coordinate {f:?}")))?;
        }
        vertices.push(v);
    }

    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (line_no, body) = it
            .next()
            .ok_or_else(|| parse_err(path, 0, "unexpected end of face list"))?;
        let fields: Vec<usize> = body
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| parse_err(path, line_no, "bad face index")))
            .collect::<Result<_, _>>()?;
        if fields.len() != 4 || fields[0] != 3 {
            return Err(parse_err(path, line_no, "only triangular faces are supported"));
        }
        let face = [fields[1], fields[2], fields[3]];
        for &v in &face {
            if v >= vertices.len() {
                return Err(DataError::BadFaceIndex {
                    face: faces.len(),
                    vertex: v,
                    vertices: vertices.len(),
                });
            }
        }
        faces.push(face);
    }
    Ok(Mesh { vertices, faces })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        fs::write(file.path(), content).unwrap();
        file
    }

    #[test]
    fn parses_minimal_mesh() {
        let f = write_temp("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        let mesh = load_off(f.path()).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn rejects_missing_header() {
        let f = write_temp("3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        assert!(load_off(f.path()).is_err());
    }

    #[test]
    fn rejects_quad_faces() {
        let f = write_temp("OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n");
        assert!(load_off(f.path()).is_err());
    }

    #[test]
    fn rejects_out_of_range_face_index() {
        let f = write_temp("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n");
        assert!(matches!(
            load_off(f.path()),
            Err(DataError::BadFaceIndex { vertex: 9, .. })
        ));
    }
}
