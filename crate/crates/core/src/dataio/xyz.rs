//! XYZ text format: one point per line, 3 coordinates or 4 fields with
//! a trailing integer label, whitespace separated. `#` starts a comment.

use super::{DataError, PointCloud};
use std::fs;
use std::io::Write;
use std::path::Path;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn load_xyz(path: &Path) -> Result<PointCloud, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut coords = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut labeled: Option<bool> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        let has_label = match fields.len() {
            3 => false,
            4 => true,
            n => {
                return Err(parse_err(
                    path,
                    line_no,
                    format!("expected 3 or 4 fields, found {n}"),
                ))
            }
        };
        match labeled {
            None => labeled = Some(has_label),
            Some(expected) if expected != has_label => {
                return Err(parse_err(
                    path,
                    line_no,
                    "mixed labeled and unlabeled lines",
                ))
            }
            _ => {}
        }
        let mut point = [0.0f64; 3];
        for (c, field) in fields[..3].iter().enumerate() {
            point[c] = field
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad coordinate {field:?}")))?;
        }
        coords.push(point);
        if has_label {
            let label = fields[3]
                .parse()
                .map_err(|_| parse_err(path, line_no, format!("bad label {:?}", fields[3])))?;
            labels.push(label);
        }
    }
    if coords.is_empty() {
        return Err(parse_err(path, 1, "no data lines"));
    }
    let labels = if labeled == Some(true) { Some(labels) } else { None };
    PointCloud::new(coords, labels, None)
}

/// Write with 17 significant digits so coordinates round-trip exactly
/// through [`load_xyz`]. Labels, when present, go in a 4th column.
pub fn save_xyz(path: &Path, cloud: &PointCloud) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = Vec::with_capacity(cloud.len() * 64);
    for (i, p) in cloud.coords.iter().enumerate() {
        write!(out, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]).map_err(io_err)?;
        if let Some(ref labels) = cloud.labels {
            write!(out, " {}", labels[i]).map_err(io_err)?;
        }
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        fs::write(file.path(), content).unwrap();
        file
    }

    #[test]
    fn loads_plain_coordinates_in_order() {
        let f = write_temp("0 0 0\n1 0 0\n");
        let cloud = load_xyz(f.path()).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.coords, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(cloud.labels.is_none());
    }

    #[test]
    fn loads_labels_from_fourth_column() {
        let f = write_temp("0 0 0 2\n1 1 1 5\n");
        let cloud = load_xyz(f.path()).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.labels, Some(vec![2, 5]));
    }

    #[test]
    fn reports_line_number_on_garbage() {
        let f = write_temp("a b c\n");
        match load_xyz(f.path()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_temp("");
        assert!(matches!(load_xyz(f.path()), Err(DataError::Parse { .. })));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let f = write_temp("# header\n\n0 0 0  # origin\n1 2 3\n");
        let cloud = load_xyz(f.path()).unwrap();
        assert_eq!(cloud.coords, vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
    }

    #[test]
    fn mixed_label_presence_is_an_error() {
        let f = write_temp("0 0 0\n1 1 1 4\n");
        match load_xyz(f.path()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn save_then_load_roundtrips_exactly() {
        let mut rng = SplitMix64::new(17);
        let cloud = PointCloud::new(
            (0..40)
                .map(|_| {
                    [
                        rng.uniform(-1.0, 1.0),
                        rng.uniform(-1.0, 1.0) * 1e-7,
                        rng.uniform(-1e6, 1e6),
                    ]
                })
                .collect(),
            Some((0..40).map(|i| i % 3).collect()),
            None,
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_xyz(f.path(), &cloud).unwrap();
        let back = load_xyz(f.path()).unwrap();
        assert_eq!(back.coords, cloud.coords);
        assert_eq!(back.labels, cloud.labels);
    }
}
