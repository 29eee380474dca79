//! Binary containers for volumes and checkpoints.
//!
//! Volume file (little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `VCNV` |
//! | 4 | version (u32, currently 1) |
//! | 12 | `nx`, `ny`, `nz` (u32 each) |
//! | 4·n | voxels as f32, index `(x·ny + y)·nz + z` |
//!
//! A plain-text sidecar `<file>.prov` lists `source_id: …` and one
//! `step: …` line per preprocessing step.
//!
//! Checkpoint file (little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `VCNC` |
//! | 4 | version (u32, currently 1) |
//! | 4 + s | architecture spec as JSON (u32 length, UTF-8) |
//! | 4 | tensor count (u32) |
//! | … | per tensor: name (u16 length + UTF-8), rank (u8), dims (u32 each), f32 data |
//! | 1 | optimizer flag (0 or 1) |
//! | … | if 1: step `t` (u64), moment count (u32), per moment: length (u32), `m` then `v` as f32 |

use std::path::{Path, PathBuf};

use volcnn_core::nn::{build_model, ArchitectureSpec, Model, StateTensor};
use volcnn_core::train::AdamState;
use volcnn_core::volume::{Dims, Volume3D};
use volcnn_core::SeededRng;

use crate::error::{read, read_string, write_atomic, Error, Result};

const VOLUME_MAGIC: &[u8; 4] = b"VCNV";
const CHECKPOINT_MAGIC: &[u8; 4] = b"VCNC";
const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::parse(self.path, format!("truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::parse(self.path, "length overflow"))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::parse(self.path, e))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::parse(self.path, "bad magic bytes"));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::parse(self.path, format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(Error::parse(self.path, format!("{} trailing bytes", self.bytes.len() - self.at)));
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, data: &[f64]) {
    out.reserve(data.len() * 4);
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Where a volume came from and what was done to it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Provenance {
    pub source_id: String,
    pub steps: Vec<String>,
}

impl Provenance {
    pub fn new(source_id: impl Into<String>) -> Self {
        Self { source_id: source_id.into(), steps: Vec::new() }
    }

    pub fn with_step(mut self, step: impl Into<String>) -> Self {
        self.steps.push(step.into());
        self
    }

    fn render(&self) -> String {
        let mut s = format!("source_id: {}\n", self.source_id);
        for step in &self.steps {
            s.push_str(&format!("step: {step}\n"));
        }
        s
    }

    fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut p = Provenance::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match line.split_once(": ") {
                Some(("source_id", v)) => p.source_id = v.to_string(),
                Some(("step", v)) => p.steps.push(v.to_string()),
                _ => return Err(Error::parse(path, format!("unrecognized provenance line `{line}`"))),
            }
        }
        Ok(p)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".prov");
    PathBuf::from(s)
}

pub fn encode_volume(vol: &Volume3D) -> Vec<u8> {
    let d = vol.dims();
    let mut out = Vec::with_capacity(20 + 4 * d.len());
    out.extend_from_slice(VOLUME_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in d.as_array() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    push_f32s(&mut out, vol.data());
    out
}

pub fn decode_volume(path: &Path, bytes: &[u8]) -> Result<Volume3D> {
    let mut r = Reader { bytes, at: 0, path };
    r.header(VOLUME_MAGIC)?;
    let dims = Dims::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let data = r.f32s(dims.len())?;
    r.finish()?;
    Ok(Volume3D::new(dims, data)?)
}

/// Writes the volume (rounded to f32) and its provenance sidecar.
pub fn write_volume(path: &Path, vol: &Volume3D, prov: &Provenance) -> Result<()> {
    write_atomic(path, &encode_volume(vol))?;
    write_atomic(&sidecar_path(path), prov.render().as_bytes())
}

pub fn read_volume(path: &Path) -> Result<Volume3D> {
    decode_volume(path, &read(path)?)
}

/// Reads the sidecar; a missing sidecar is an error.
pub fn read_provenance(path: &Path) -> Result<Provenance> {
    let side = sidecar_path(path);
    Provenance::parse(&side, &read_string(&side)?)
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ArchitectureSpec,
    pub model: Model,
    pub optimizer: Option<AdamState>,
}

pub fn encode_checkpoint(model: &Model, optimizer: Option<&AdamState>) -> Result<Vec<u8>> {
    let spec = model.spec().ok_or_else(|| Error::Config("only family models can be checkpointed".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(spec).expect("spec serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let state = model.state();
    out.extend_from_slice(&(state.len() as u32).to_le_bytes());
    for t in &state {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        push_f32s(&mut out, &t.data);
    }
    match optimizer {
        None => out.push(0),
        Some(adam) => {
            out.push(1);
            out.extend_from_slice(&adam.t.to_le_bytes());
            out.extend_from_slice(&(adam.m.len() as u32).to_le_bytes());
            for (m, v) in adam.m.iter().zip(&adam.v) {
                out.extend_from_slice(&(m.len() as u32).to_le_bytes());
                push_f32s(&mut out, m);
                push_f32s(&mut out, v);
            }
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, at: 0, path };
    r.header(CHECKPOINT_MAGIC)?;
    let n = r.u32()? as usize;
    let spec: ArchitectureSpec = serde_json::from_slice(r.take(n)?).map_err(|e| Error::parse(path, e))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = r.string(n)?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let data = r.f32s(len.ok_or_else(|| Error::parse(path, "tensor size overflow"))?)?;
        tensors.push(StateTensor { name, shape, data });
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let k = r.u32()? as usize;
            let (mut m, mut v) = (Vec::new(), Vec::new());
            for _ in 0..k {
                let n = r.u32()? as usize;
                m.push(r.f32s(n)?);
                v.push(r.f32s(n)?);
            }
            Some(AdamState { m, v, t })
        }
        f => return Err(Error::parse(path, format!("bad optimizer flag {f}"))),
    };
    r.finish()?;
    let mut model = build_model(&spec, &mut SeededRng::new(0))
        .map_err(|e| Error::CheckpointMismatch(format!("stored spec is invalid: {e}")))?;
    model.load_state(&tensors).map_err(|e| Error::CheckpointMismatch(e.to_string()))?;
    if let Some(adam) = &optimizer {
        let sizes: Vec<usize> = model.params().iter().map(|(_, p)| p.len()).collect();
        let got: Vec<usize> = adam.m.iter().map(Vec::len).collect();
        if sizes != got {
            return Err(Error::CheckpointMismatch(format!("optimizer moments {got:?} for parameters {sizes:?}")));
        }
    }
    Ok(Checkpoint { spec, model, optimizer })
}

pub fn save_checkpoint(path: &Path, model: &Model, optimizer: Option<&AdamState>) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, optimizer)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(path, &read(path)?)
}

/// Loads a checkpoint that must hold the architecture `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ArchitectureSpec) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    if &ck.spec != expected {
        return Err(Error::CheckpointMismatch(format!(
            "{} holds depth {} on {} (filters {}), expected depth {} on {} (filters {})",
            path.display(),
            ck.spec.depth,
            ck.spec.input_dims,
            ck.spec.base_filters,
            expected.depth,
            expected.input_dims,
            expected.base_filters
        )));
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volume_round_trip_and_layout() {
        let vol = Volume3D::from_fn(Dims::new(2, 3, 4), |x, y, z| (x * 100 + y * 10 + z) as f64).unwrap();
        let bytes = encode_volume(&vol);
        assert_eq!(&bytes[..8], b"VCNV\x01\0\0\0");
        assert_eq!(&bytes[8..20], [2, 0, 0, 0, 3, 0, 0, 0, 4, 0, 0, 0]);
        // voxel (0,0,1) is second
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1.0);
        assert_eq!(decode_volume(Path::new("v"), &bytes).unwrap(), vol);
        assert!(matches!(decode_volume(Path::new("v"), &bytes[..30]), Err(Error::Parse { .. })));
    }

    #[test]
    fn provenance_text() {
        let p = Provenance::new("s1").with_step("resize 96x96x73").with_step("normalize standardize");
        assert_eq!(Provenance::parse(Path::new("p"), &p.render()).unwrap(), p);
    }

    #[test]
    fn checkpoint_round_trip() {
        let spec = volcnn_core::nn::gradcheck::tiny_spec(4);
        let mut model = build_model(&spec, &mut SeededRng::new(5)).unwrap();
        model.round_to_f32();
        let adam = AdamState::for_model(&model);
        let bytes = encode_checkpoint(&model, Some(&adam)).unwrap();
        let ck = decode_checkpoint(Path::new("c"), &bytes).unwrap();
        assert_eq!(ck.model, model);
        assert_eq!(ck.optimizer, Some(adam));
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(matches!(decode_checkpoint(Path::new("c"), &corrupt), Err(Error::Parse { .. })));
    }
}
