//! Field serialization.
//!
//! Binary layout (little-endian):
//!   bytes 0..4   magic "HLF1"
//!   u32          mesh dimension
//!   u32          rank (components per entity)
//!   u32          location: 0 = nodal, 1 = per-element
//!   u64          entity count
//!   f64 * count * rank   values, entity-major
//!
//! CSV rows carry the entity coordinates (node position or element
//! centroid) followed by the components, for plotting.

use crate::error::{Error, Result};
use crate::grid::{Field, FieldLoc, Mesh};
use std::io::{Read as _, Write as _};
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 4] = b"HLF1";

pub fn write_field_binary(path: &Path, f: &Field) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + f.values.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(f.mesh.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(f.rank as u32).to_le_bytes());
    let loc: u32 = match f.loc {
        FieldLoc::Nodal => 0,
        FieldLoc::PerElement => 1,
    };
    buf.extend_from_slice(&loc.to_le_bytes());
    buf.extend_from_slice(&(f.entity_count() as u64).to_le_bytes());
    for v in &f.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Read a binary field back onto the given mesh; the header must agree with
/// the mesh's dimension and entity counts.
pub fn read_field_binary(path: &Path, mesh: &Arc<Mesh>) -> Result<Field> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() < 24 || &raw[0..4] != MAGIC {
        return Err(Error::invalid("not a field file (bad magic)"));
    }
    let rd_u32 = |o: usize| u32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as usize;
    let dim = rd_u32(4);
    let rank = rd_u32(8);
    let loc = match rd_u32(12) {
        0 => FieldLoc::Nodal,
        1 => FieldLoc::PerElement,
        other => return Err(Error::invalid(format!("unknown field location tag {other}"))),
    };
    let count = u64::from_le_bytes(raw[16..24].try_into().unwrap()) as usize;
    if dim != mesh.dim {
        return Err(Error::invalid(format!(
            "field dimension {dim} does not match mesh dimension {}",
            mesh.dim
        )));
    }
    let expect = match loc {
        FieldLoc::Nodal => mesh.node_count(),
        FieldLoc::PerElement => mesh.elements.len(),
    };
    if count != expect {
        return Err(Error::invalid(format!(
            "field entity count {count} does not match mesh ({expect})"
        )));
    }
    if raw.len() != 24 + count * rank * 8 {
        return Err(Error::invalid("field payload length mismatch"));
    }
    let mut values = Vec::with_capacity(count * rank);
    for k in 0..count * rank {
        let o = 24 + k * 8;
        values.push(f64::from_le_bytes(raw[o..o + 8].try_into().unwrap()));
    }
    Ok(Field { mesh: Arc::clone(mesh), rank, loc, values })
}

pub fn write_field_csv(path: &Path, f: &Field) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let dim = f.mesh.dim;
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    for c in 0..f.rank {
        header.push(format!("v{c}"));
    }
    w.write_record(&header).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for e in 0..f.entity_count() {
        let pos = match f.loc {
            FieldLoc::Nodal => f.mesh.points[e],
            FieldLoc::PerElement => f.mesh.elements[e].centroid,
        };
        let mut row: Vec<String> = (0..dim).map(|i| format!("{:.17e}", pos[i])).collect();
        for c in 0..f.rank {
            row.push(format!("{:.17e}", f.get(e, c)));
        }
        w.write_record(&row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::Io(std::io::Error::other(e)))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DirichletMesh, DomainShape};

    #[test]
    fn binary_roundtrip() {
        let mesh = Arc::new(
            DirichletMesh::new(DomainShape::Square { center: [0.0, 0.0], half_width: 1.0 }, 8)
                .unwrap()
                .mesh,
        );
        let f = Field::nodal_scalar(&mesh, |p| p[0] * 2.0 - p[1]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        write_field_binary(&path, &f).unwrap();
        let g = read_field_binary(&path, &mesh).unwrap();
        assert_eq!(f.values, g.values);
        assert_eq!(g.loc, FieldLoc::Nodal);
        // CSV writes one row per entity plus a header
        let cpath = dir.path().join("f.csv");
        write_field_csv(&cpath, &f).unwrap();
        let text = std::fs::read_to_string(&cpath).unwrap();
        assert_eq!(text.lines().count(), 1 + mesh.node_count());
    }

    #[test]
    fn mismatched_mesh_rejected() {
        let mesh8 = Arc::new(
            DirichletMesh::new(DomainShape::Square { center: [0.0, 0.0], half_width: 1.0 }, 8)
                .unwrap()
                .mesh,
        );
        let mesh16 = Arc::new(
            DirichletMesh::new(DomainShape::Square { center: [0.0, 0.0], half_width: 1.0 }, 16)
                .unwrap()
                .mesh,
        );
        let f = Field::nodal_scalar(&mesh8, |_| 1.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        write_field_binary(&path, &f).unwrap();
        assert!(read_field_binary(&path, &mesh16).is_err());
    }
}
