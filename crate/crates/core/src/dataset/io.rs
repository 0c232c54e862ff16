//! `IRPD1` binary container and CSV export.
//!
//! Layout (little-endian): magic, task id u8, parameter grid dims 2×u32 and
//! axis values f64, action axis count u8 and dims u32, repeats u16, grid spec
//! as 5 f64 (height, width, extent, origin y, origin z; channels follow from
//! the task), split labels u8 per cell (255 = unassigned), seed u64, world
//! (mode u8 and 4 f64), template, record count u64, then the records.
//! A record is param u32, action u32, repeat u16, valid u8, track count u8,
//! per track a point count u32 and f32 (t, y, z) triples, then a u8 flag and
//! 9 f32 pairs of final keypoints when set.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ActionGrid, Dataset, ParamGrid, Record, Split, Template};
use crate::action::{Bound, ClothActionBox, Task};
use crate::error::{IrpError, Result};
use crate::params::{WorldMode, WorldVariant};
use crate::raster::GridSpec;

const MAGIC: &[u8; 5] = b"IRPD1";
const UNASSIGNED: u8 = 255;

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.0.write_all(b)?)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }
    fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|_| IrpError::format("dataset file is truncated"))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

fn usize_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| IrpError::contract(format!("{what} {v} does not fit the file format")))
}

impl Dataset {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut o = Out(w);
        o.bytes(MAGIC)?;
        o.u8(self.task.id())?;
        let (n0, n1) = self.params.dims();
        o.u32(usize_u32(n0, "grid size")?)?;
        o.u32(usize_u32(n1, "grid size")?)?;
        for &v in self.params.axis0.iter().chain(&self.params.axis1) {
            o.f64(v)?;
        }
        o.u8(self.actions.dims.len() as u8)?;
        for &d in &self.actions.dims {
            o.u32(usize_u32(d, "action grid size")?)?;
        }
        o.u16(self.repeats as u16)?;
        let s = &self.grid_spec;
        for v in [s.height as f64, s.width as f64, s.extent, s.origin[0], s.origin[1]] {
            o.f64(v)?;
        }
        for p in 0..self.n_params() {
            o.u8(self.split_of(p).map_or(UNASSIGNED, Split::id))?;
        }
        o.u64(self.seed)?;
        let w = &self.world;
        o.u8(match w.mode {
            WorldMode::Training => 0,
            WorldMode::Deployment => 1,
        })?;
        for v in [w.drag_coeff, w.floor_z, w.init_noise_sd, w.embodiment_link] {
            o.f64(v)?;
        }
        match &self.template {
            Template::Rope {
                n_links,
                joint_damping,
            } => {
                o.u32(usize_u32(*n_links, "link count")?)?;
                o.f64(*joint_damping)?;
            }
            Template::Cloth { n_grid, action_box } => {
                o.u32(usize_u32(*n_grid, "cloth grid")?)?;
                for b in [action_box.p2y, action_box.p2z, action_box.p3y, action_box.dur] {
                    o.f64(b.lo)?;
                    o.f64(b.hi)?;
                }
            }
        }
        o.u64(self.records.len() as u64)?;
        for (i, rec) in self.records.iter().enumerate() {
            let (p, a, r) = self.decode_index(i);
            o.u32(p as u32)?;
            o.u32(a as u32)?;
            o.u16(r as u16)?;
            o.u8(rec.valid as u8)?;
            o.u8(rec.tracks.len() as u8)?;
            for tr in &rec.tracks {
                o.u32(usize_u32(tr.len(), "track length")?)?;
                for pt in tr {
                    for &v in pt {
                        o.f32(v)?;
                    }
                }
            }
            match &rec.final_keypoints {
                Some(k) => {
                    o.u8(k.len() as u8)?;
                    for pt in k {
                        o.f32(pt[0])?;
                        o.f32(pt[1])?;
                    }
                }
                None => o.u8(0)?,
            }
        }
        o.0.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Dataset> {
        let mut i = In(r);
        if &i.array::<5>()? != MAGIC {
            return Err(IrpError::format("not an IRPD1 dataset file"));
        }
        let task = Task::from_id(i.u8()?)?;
        let n0 = i.u32()? as usize;
        let n1 = i.u32()? as usize;
        if n0 < 2 || n1 < 2 || n0 * n1 > 1 << 20 {
            return Err(IrpError::format(format!("bad parameter grid {n0}×{n1}")));
        }
        let axis0 = (0..n0).map(|_| i.f64()).collect::<Result<Vec<_>>>()?;
        let axis1 = (0..n1).map(|_| i.f64()).collect::<Result<Vec<_>>>()?;
        let params = ParamGrid { axis0, axis1 };
        let na = i.u8()? as usize;
        if na != task.action_dim() {
            return Err(IrpError::format(format!("{task} dataset with {na} action axes")));
        }
        let dims = (0..na).map(|_| i.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let actions = ActionGrid::new(dims).map_err(|e| IrpError::format(e.to_string()))?;
        let repeats = i.u16()? as usize;
        if repeats == 0 {
            return Err(IrpError::format("dataset with zero repeats"));
        }
        let h = i.f64()?;
        let w = i.f64()?;
        let grid_spec = GridSpec {
            height: h as usize,
            width: w as usize,
            channels: task.n_tracks(),
            extent: i.f64()?,
            origin: [i.f64()?, i.f64()?],
        };
        grid_spec.validate().map_err(|e| IrpError::format(e.to_string()))?;
        let labels = (0..params.len()).map(|_| i.u8()).collect::<Result<Vec<_>>>()?;
        let splits = if labels.iter().all(|&l| l == UNASSIGNED) {
            None
        } else {
            Some(labels.into_iter().map(Split::from_id).collect::<Result<Vec<_>>>()?)
        };
        let seed = i.u64()?;
        let mode = match i.u8()? {
            0 => WorldMode::Training,
            1 => WorldMode::Deployment,
            m => return Err(IrpError::format(format!("unknown world mode {m}"))),
        };
        let world = WorldVariant {
            mode,
            drag_coeff: i.f64()?,
            floor_z: i.f64()?,
            init_noise_sd: i.f64()?,
            embodiment_link: i.f64()?,
        };
        let template = match task {
            Task::Rope => Template::Rope {
                n_links: i.u32()? as usize,
                joint_damping: i.f64()?,
            },
            Task::Cloth => {
                let n_grid = i.u32()? as usize;
                let mut b = [Bound::new(0.0, 1.0); 4];
                for bound in b.iter_mut() {
                    *bound = Bound {
                        lo: i.f64()?,
                        hi: i.f64()?,
                    };
                }
                Template::Cloth {
                    n_grid,
                    action_box: ClothActionBox {
                        p2y: b[0],
                        p2z: b[1],
                        p3y: b[2],
                        dur: b[3],
                    },
                }
            }
        };
        let mut ds = Dataset {
            task,
            grid_spec,
            params,
            actions,
            repeats,
            world,
            template,
            seed,
            records: Vec::new(),
            splits,
        };
        let n = i.u64()? as usize;
        if n != ds.n_records() {
            return Err(IrpError::format(format!(
                "file holds {n} records, header implies {}",
                ds.n_records()
            )));
        }
        ds.records.reserve(n);
        for k in 0..n {
            let key = (i.u32()? as usize, i.u32()? as usize, i.u16()? as usize);
            if key != ds.decode_index(k) {
                return Err(IrpError::format(format!("record {k} is out of order")));
            }
            let valid = i.u8()? != 0;
            let n_tracks = i.u8()? as usize;
            let mut tracks = Vec::with_capacity(n_tracks);
            for _ in 0..n_tracks {
                let len = i.u32()? as usize;
                let mut tr = Vec::with_capacity(len.min(1 << 16));
                for _ in 0..len {
                    tr.push([i.f32()?, i.f32()?, i.f32()?]);
                }
                tracks.push(tr);
            }
            let nk = i.u8()? as usize;
            let final_keypoints = if nk > 0 {
                Some((0..nk).map(|_| Ok([i.f32()?, i.f32()?])).collect::<Result<Vec<_>>>()?)
            } else {
                None
            };
            ds.records.push(Record {
                valid,
                tracks,
                final_keypoints,
            });
        }
        if i.0.read(&mut [0u8])? != 0 {
            return Err(IrpError::format("trailing bytes after the last record"));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| IrpError::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| match e {
            IrpError::Stream(s) => IrpError::io(path, s),
            e => e,
        })
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let f = File::open(path).map_err(|e| IrpError::io(path, e))?;
        Dataset::read_from(BufReader::new(f)).map_err(|e| match e {
            IrpError::Stream(s) => IrpError::io(path, s),
            e => e,
        })
    }

    /// SHA-256 of the serialized dataset, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = HashWriter(Sha256::new());
        self.write_to(&mut h).expect("hashing cannot fail");
        hash_hex(h.0.finalize().as_slice())
    }

    /// Flat CSV, one row per trajectory sample.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| IrpError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let mut go = || -> std::io::Result<()> {
            writeln!(w, "param_idx,action_idx,repeat,valid,track,t,y,z")?;
            for (i, rec) in self.records.iter().enumerate() {
                let (p, a, r) = self.decode_index(i);
                for (c, tr) in rec.tracks.iter().enumerate() {
                    for pt in tr {
                        writeln!(w, "{p},{a},{r},{},{c},{},{},{}", rec.valid as u8, pt[0], pt[1], pt[2])?;
                    }
                }
                if let Some(k) = &rec.final_keypoints {
                    for (c, pt) in k.iter().enumerate() {
                        writeln!(w, "{p},{a},{r},{},final{c},,{},{}", rec.valid as u8, pt[0], pt[1])?;
                    }
                }
            }
            w.flush()
        };
        go().map_err(|e| IrpError::io(path, e))
    }
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub fn hash_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a byte string, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hash_hex(Sha256::digest(bytes).as_slice())
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| IrpError::io(path, e))?;
    let mut h = HashWriter(Sha256::new());
    std::io::copy(&mut f, &mut h).map_err(|e| IrpError::io(path, e))?;
    Ok(hash_hex(h.0.finalize().as_slice()))
}
