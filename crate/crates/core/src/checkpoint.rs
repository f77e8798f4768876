//! Versioned binary checkpoints: model config, parameters, optimizer
//! moments, recipe position, and an optional elastic-penalty snapshot.
//! All numbers little-endian; f64 values roundtrip bit-exactly. Files are
//! written atomically and a version mismatch refuses to load anything.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::{Component, ParameterSnapshot, ParameterStore, Value};
use crate::train::{AdamSlot, AdamState};

const MAGIC: &[u8; 4] = b"MCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecipePosition {
    /// Stage about to run (stages already completed have lower indices).
    pub stage_index: u32,
    /// Next step within that stage.
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub store: ParameterStore,
    pub adam: Option<AdamState>,
    pub position: Option<RecipePosition>,
    pub snapshot: Option<ParameterSnapshot>,
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = crate::audio::temp_path(path)?;
    {
        let mut w = BufWriter::new(std::fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_config(&mut w, &ckpt.config)?;

        w.write_all(&(ckpt.store.len() as u32).to_le_bytes())?;
        for p in ckpt.store.iter() {
            write_str(&mut w, &p.name)?;
            w.write_all(&[p.component.code()])?;
            let dims = p.value.dims();
            w.write_all(&[dims.len() as u8])?;
            for d in &dims {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            write_f64s(&mut w, p.value.as_slice())?;
        }

        match &ckpt.adam {
            Some(adam) => {
                w.write_all(&[1])?;
                w.write_all(&adam.step.to_le_bytes())?;
                w.write_all(&(adam.slots.len() as u32).to_le_bytes())?;
                for slot in &adam.slots {
                    write_str(&mut w, &slot.name)?;
                    w.write_all(&(slot.m.len() as u32).to_le_bytes())?;
                    write_f64s(&mut w, &slot.m)?;
                    write_f64s(&mut w, &slot.v)?;
                }
            }
            None => w.write_all(&[0])?,
        }

        match &ckpt.position {
            Some(pos) => {
                w.write_all(&[1])?;
                w.write_all(&pos.stage_index.to_le_bytes())?;
                w.write_all(&pos.step.to_le_bytes())?;
            }
            None => w.write_all(&[0])?,
        }

        match &ckpt.snapshot {
            Some(snap) => {
                w.write_all(&[1])?;
                w.write_all(&(snap.entries().len() as u32).to_le_bytes())?;
                for (name, values) in snap.entries() {
                    write_str(&mut w, name)?;
                    w.write_all(&(values.len() as u32).to_le_bytes())?;
                    write_f64s(&mut w, values)?;
                }
            }
            None => w.write_all(&[0])?,
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = Reader {
        inner: BufReader::new(std::fs::File::open(path)?),
        path: path.display().to_string(),
    };
    let mut magic = [0u8; 4];
    r.exact(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(r.corrupt("not a checkpoint file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Version { found: version, expected: VERSION });
    }
    let config = read_config(&mut r)?;

    let n_params = r.u32("param count")? as usize;
    let mut store = ParameterStore::new();
    for _ in 0..n_params {
        let name = r.string("param name")?;
        let component = Component::from_code(r.u8("component")?)
            .map_err(|_| r.corrupt("bad component tag"))?;
        let ndim = r.u8("ndim")?;
        let value = match ndim {
            1 => {
                let n = r.u32("dim")? as usize;
                Value::Vector(Array1::from_vec(r.f64s(n, "vector data")?))
            }
            2 => {
                let rows = r.u32("rows")? as usize;
                let cols = r.u32("cols")? as usize;
                let data = r.f64s(rows * cols, "matrix data")?;
                Value::Matrix(
                    Array2::from_shape_vec((rows, cols), data)
                        .map_err(|_| r.corrupt("matrix shape"))?,
                )
            }
            _ => return Err(r.corrupt("unsupported tensor rank")),
        };
        store.insert(&name, component, value);
    }

    let adam = if r.u8("adam flag")? == 1 {
        let step = r.u64("adam step")?;
        let n = r.u32("adam slots")? as usize;
        let mut slots = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string("slot name")?;
            let len = r.u32("slot len")? as usize;
            let m = r.f64s(len, "adam m")?;
            let v = r.f64s(len, "adam v")?;
            slots.push(AdamSlot { name, m, v });
        }
        Some(AdamState { step, slots })
    } else {
        None
    };

    let position = if r.u8("position flag")? == 1 {
        Some(RecipePosition { stage_index: r.u32("stage index")?, step: r.u64("stage step")? })
    } else {
        None
    };

    let snapshot = if r.u8("snapshot flag")? == 1 {
        let n = r.u32("snapshot entries")? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string("snapshot name")?;
            let len = r.u32("snapshot len")? as usize;
            entries.push((name, r.f64s(len, "snapshot data")?));
        }
        Some(ParameterSnapshot::from_entries(entries))
    } else {
        None
    };

    Ok(Checkpoint { config, store, adam, position, snapshot })
}

fn write_config(w: &mut impl Write, c: &ModelConfig) -> Result<()> {
    for v in [
        c.enc_layers,
        c.enc_units,
        c.dec_layers,
        c.dec_units,
        c.proj_dim,
        c.joint_units,
        c.vocab_size,
        c.input_dim,
    ] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    Ok(())
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    Ok(ModelConfig {
        enc_layers: r.u32("enc_layers")? as usize,
        enc_units: r.u32("enc_units")? as usize,
        dec_layers: r.u32("dec_layers")? as usize,
        dec_units: r.u32("dec_units")? as usize,
        proj_dim: r.u32("proj_dim")? as usize,
        joint_units: r.u32("joint_units")? as usize,
        vocab_size: r.u32("vocab_size")? as usize,
        input_dim: r.u32("input_dim")? as usize,
    })
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Reader {
    inner: BufReader<std::fs::File>,
    path: String,
}

impl Reader {
    fn corrupt(&self, reason: &str) -> Error {
        Error::CorruptFile { path: self.path.clone(), reason: reason.to_string() }
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| self.corrupt(&format!("truncated reading {what}")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b, what)?;
        Ok(b[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let mut lb = [0u8; 2];
        self.exact(&mut lb, what)?;
        let len = u16::from_le_bytes(lb) as usize;
        let mut buf = vec![0u8; len];
        self.exact(&mut buf, what)?;
        String::from_utf8(buf).map_err(|_| self.corrupt(&format!("bad utf-8 in {what}")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        self.exact(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
