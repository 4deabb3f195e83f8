//! Minimal Wavefront OBJ loading: `v` and `f` records, faces triangulated as
//! fans. Enough for the desk-task meshes; everything else is ignored.

use std::path::Path;

use glam::DVec3;
use reverie_core::geometry::TriMesh;

use crate::pipeline::PipelineError;

pub fn load_obj(path: &Path) -> Result<TriMesh, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        PipelineError::Config(format!("cannot read mesh {}: {e}", path.display()))
    })?;
    parse_obj(&text)
        .map_err(|e| PipelineError::Config(format!("bad mesh {}: {e}", path.display())))
}

pub fn parse_obj(text: &str) -> Result<TriMesh, String> {
    let mut vertices: Vec<DVec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut next = || -> Result<f64, String> {
                    parts
                        .next()
                        .ok_or_else(|| format!("line {}: short vertex", ln + 1))?
                        .parse::<f64>()
                        .map_err(|e| format!("line {}: {e}", ln + 1))
                };
                let (x, y, z) = (next()?, next()?, next()?);
                vertices.push(DVec3::new(x, y, z));
            }
            Some("f") => {
                let idx: Result<Vec<u32>, String> = parts
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or(tok);
                        let v: i64 = first
                            .parse()
                            .map_err(|e| format!("line {}: {e}", ln + 1))?;
                        let resolved = if v < 0 {
                            vertices.len() as i64 + v
                        } else {
                            v - 1
                        };
                        if resolved < 0 {
                            return Err(format!("line {}: face index out of range", ln + 1));
                        }
                        Ok(resolved as u32)
                    })
                    .collect();
                let idx = idx?;
                if idx.len() < 3 {
                    return Err(format!("line {}: face needs 3+ vertices", ln + 1));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_quads_and_negative_indices() {
        let text = "\
# comment
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
f 1 2 3 4
f -4 -3 -2
";
        let mesh = parse_obj(text).unwrap();
        assert_eq!(mesh.vertices().len(), 4);
        assert_eq!(mesh.triangles().len(), 3);
    }

    #[test]
    fn rejects_bad_faces() {
        assert!(parse_obj("v 0 0 0\nf 1 2 9\n").is_err());
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nf 1 2\n").is_err());
    }
}
