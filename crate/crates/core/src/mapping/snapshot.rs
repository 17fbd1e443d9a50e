//! Immutable published map state, the latest-value mailbox that hands it
//! to the controller, and the binary field export.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use nalgebra::Vector3;

use super::library::ObjectEntry;
use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;

#[derive(Clone, Debug)]
pub struct MapSnapshot {
    pub version: u64,
    pub time: f64,
    /// Frozen copy of the object library; empty for map modes without
    /// objects.
    pub objects: Arc<Vec<ObjectEntry>>,
    /// Truncated distance field used by the controller and planner.
    pub edf: Arc<VoxelGrid>,
    pub theta_cutoff: f64,
}

impl MapSnapshot {
    /// Hash over version, time, object ids and consistency, and every field
    /// value; used to check that published snapshots never change.
    pub fn content_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.version.hash(&mut h);
        self.time.to_bits().hash(&mut h);
        for o in self.objects.iter() {
            o.id.hash(&mut h);
            o.params.alpha.to_bits().hash(&mut h);
            o.params.beta.to_bits().hash(&mut h);
            o.submap.occupied.len().hash(&mut h);
        }
        self.edf.dims.hash(&mut h);
        for v in self.edf.origin.iter() {
            v.to_bits().hash(&mut h);
        }
        for v in &self.edf.values {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn object_ids(&self) -> Vec<u32> {
        self.objects.iter().map(|o| o.id).collect()
    }
}

/// Single-slot mailbox: writers replace, readers take a shared handle to the
/// newest snapshot without blocking each other for more than a pointer copy.
#[derive(Debug, Default)]
pub struct SnapshotMailbox {
    slot: Mutex<Option<Arc<MapSnapshot>>>,
}

impl SnapshotMailbox {
    pub fn publish(&self, snapshot: MapSnapshot) -> Arc<MapSnapshot> {
        let arc = Arc::new(snapshot);
        *self.slot.lock().expect("mailbox lock") = Some(arc.clone());
        arc
    }

    pub fn latest(&self) -> Option<Arc<MapSnapshot>> {
        self.slot.lock().expect("mailbox lock").clone()
    }
}

const MAGIC: &[u8; 8] = b"HTMPCEDF";
pub const EXPORT_FORMAT_VERSION: u32 = 1;

/// Writes the field as: magic `HTMPCEDF`, format version (u32), snapshot
/// version (u64), time (f64), dims (3 x u32), origin (3 x f64), voxel size
/// (f64), then `nx*ny*nz` f64 values with x fastest. Little-endian.
pub fn write_field<W: Write>(w: &mut W, snapshot_version: u64, time: f64, grid: &VoxelGrid) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&EXPORT_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&snapshot_version.to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    for d in grid.dims {
        let d = u32::try_from(d).map_err(|_| Error::Format("grid dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in grid.origin.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&grid.voxel_size.to_le_bytes())?;
    let mut buf = Vec::with_capacity(grid.values.len() * 8);
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Header and grid read back by [`read_field`].
#[derive(Clone, Debug, PartialEq)]
pub struct FieldExport {
    pub snapshot_version: u64,
    pub time: f64,
    pub grid: VoxelGrid,
}

pub fn read_field<R: Read>(r: &mut R) -> Result<FieldExport> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a field export".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let fmt = u32::from_le_bytes(b4);
    if fmt != EXPORT_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported export version {fmt}")));
    }
    r.read_exact(&mut b8)?;
    let snapshot_version = u64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let time = f64::from_le_bytes(b8);
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut b4)?;
        *d = u32::from_le_bytes(b4) as usize;
    }
    let mut origin = Vector3::zeros();
    for a in 0..3 {
        r.read_exact(&mut b8)?;
        origin[a] = f64::from_le_bytes(b8);
    }
    r.read_exact(&mut b8)?;
    let voxel_size = f64::from_le_bytes(b8);
    let n = dims
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| Error::Format("grid too large".into()))?;
    let mut raw = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Format("grid too large".into()))?];
    r.read_exact(&mut raw)?;
    let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let grid = VoxelGrid::new(origin, voxel_size, dims, values).map_err(|e| Error::Format(e.to_string()))?;
    Ok(FieldExport { snapshot_version, time, grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn export_round_trip() {
        let g = VoxelGrid::new(Vector3::new(-1.0, 2.0, 0.0), 0.1, [2, 3, 1], vec![0.0, 0.1, 0.2, 0.3, 0.4, 1.5]).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, 7, 3.25, &g).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 8 + 8 + 12 + 24 + 8 + 48);
        let back = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(back, FieldExport { snapshot_version: 7, time: 3.25, grid: g });
        buf[0] = b'X';
        assert!(read_field(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn mailbox_keeps_latest_and_old_handles_stay_valid() {
        let mb = SnapshotMailbox::default();
        assert!(mb.latest().is_none());
        let mk = |v| MapSnapshot {
            version: v,
            time: v as f64,
            objects: Arc::new(Vec::new()),
            edf: Arc::new(VoxelGrid::filled(Vector3::zeros(), 0.1, [2, 2, 2], 1.5)),
            theta_cutoff: 1.5,
        };
        let first = mb.publish(mk(1));
        let h = first.content_hash();
        mb.publish(mk(2));
        assert_eq!(mb.latest().unwrap().version, 2);
        assert_eq!(first.content_hash(), h);
    }
}
