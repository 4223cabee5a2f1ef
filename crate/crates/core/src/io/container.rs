//! The NSLT tensor container: a little-endian binary file holding named
//! tensor slots.
//!
//! Layout:
//! - magic `"NSLT"` (4 bytes), version `u16` = 1, slot count `u16`
//! - slot table: per slot `name_len u8`, name bytes (UTF-8), absolute
//!   record offset `u64`
//! - records: `rank u8`, dims `u32` each, dtype `u8` (0 = f32, 1 = f64),
//!   raw elements row-major.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NSLT";
pub const VERSION: u16 = 1;

/// Element storage width of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

/// One named tensor payload.
#[derive(Debug, Clone)]
pub struct Slot {
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

impl Slot {
    pub fn from_tensor(t: &Tensor, dtype: Dtype) -> Self {
        Slot {
            dims: t.shape().to_vec(),
            dtype,
            data: t.data().to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.dims.clone(), self.data.clone())
    }
}

/// Write named slots to `path`. Slot order is preserved as given.
pub fn write_container(path: &Path, slots: &[(String, Slot)]) -> Result<()> {
    if slots.len() > u16::MAX as usize {
        return Err(Error::Contract("too many slots for container".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(slots.len() as u16).to_le_bytes())?;

    // table size: per slot 1 + name_len + 8
    let table_len: usize = slots.iter().map(|(n, _)| 1 + n.len() + 8).sum();
    let mut offset = (4 + 2 + 2 + table_len) as u64;
    for (name, slot) in slots {
        if name.len() > u8::MAX as usize {
            return Err(Error::Contract(format!("slot name too long: {name}")));
        }
        w.write_all(&[name.len() as u8])?;
        w.write_all(name.as_bytes())?;
        w.write_all(&offset.to_le_bytes())?;
        let elem = match slot.dtype {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        };
        offset += 1 + 4 * slot.dims.len() as u64 + 1 + elem * slot.data.len() as u64;
    }
    for (name, slot) in slots {
        let n: usize = slot.dims.iter().product();
        if n != slot.data.len() {
            return Err(Error::Contract(format!(
                "slot {name}: dims {:?} do not match {} elements",
                slot.dims,
                slot.data.len()
            )));
        }
        w.write_all(&[slot.dims.len() as u8])?;
        for &d in &slot.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&[slot.dtype.code()])?;
        match slot.dtype {
            Dtype::F32 => {
                for &v in &slot.data {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            Dtype::F64 => {
                for &v in &slot.data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("container truncated".into()))?;
    Ok(buf)
}

/// Read every slot of a container, preserving file order.
pub fn read_container(path: &Path) -> Result<Vec<(String, Slot)>> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<4>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, MAGIC
        )));
    }
    let version = u16::from_le_bytes(read_exact::<2>(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version}, expected {VERSION}"
        )));
    }
    let count = u16::from_le_bytes(read_exact::<2>(&mut r)?) as usize;
    let mut table = Vec::with_capacity(count);
    let mut names = BTreeMap::new();
    for _ in 0..count {
        let name_len = read_exact::<1>(&mut r)?[0] as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)
            .map_err(|_| Error::Format("container truncated in slot table".into()))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Format("slot name is not UTF-8".into()))?;
        let offset = u64::from_le_bytes(read_exact::<8>(&mut r)?);
        if names.insert(name.clone(), ()).is_some() {
            return Err(Error::Format(format!("duplicate slot name {name}")));
        }
        table.push((name, offset));
    }
    let mut slots = Vec::with_capacity(count);
    for (name, offset) in table {
        r.seek(SeekFrom::Start(offset))?;
        let rank = read_exact::<1>(&mut r)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize);
        }
        let dtype = Dtype::from_code(read_exact::<1>(&mut r)?[0])?;
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        match dtype {
            Dtype::F32 => {
                for _ in 0..n {
                    data.push(f32::from_le_bytes(read_exact::<4>(&mut r)?) as f64);
                }
            }
            Dtype::F64 => {
                for _ in 0..n {
                    data.push(f64::from_le_bytes(read_exact::<8>(&mut r)?));
                }
            }
        }
        slots.push((name, Slot { dims, dtype, data }));
    }
    Ok(slots)
}

/// Fetch one slot by name.
pub fn find_slot<'a>(slots: &'a [(String, Slot)], name: &str) -> Result<&'a Slot> {
    slots
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, s)| s)
        .ok_or_else(|| Error::Format(format!("container has no slot named {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bitwise_for_f64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nslt");
        let data = vec![0.1, -2.5e-300, f64::MAX, 3.0];
        let slots = vec![
            (
                "fine".to_string(),
                Slot { dims: vec![2, 2], dtype: Dtype::F64, data: data.clone() },
            ),
            (
                "coarse".to_string(),
                Slot { dims: vec![4], dtype: Dtype::F64, data: vec![1.0, 2.0, 3.0, 4.0] },
            ),
        ];
        write_container(&path, &slots).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "fine");
        assert_eq!(back[0].1.data, data);
        assert_eq!(back[1].1.dims, vec![4]);
    }

    #[test]
    fn f32_slots_quantize_to_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nslt");
        let slots = vec![(
            "x".to_string(),
            Slot { dims: vec![1], dtype: Dtype::F32, data: vec![0.1] },
        )];
        write_container(&path, &slots).unwrap();
        let back = read_container(&path).unwrap();
        assert_eq!(back[0].1.data[0], 0.1f32 as f64);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nslt");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_container(&path), Err(Error::Format(_))));
    }

    #[test]
    fn bad_version_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.nslt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&9u16.to_le_bytes());
        bytes.extend_from_slice(&0u16.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_container(&path), Err(Error::Format(_))));
    }
}
