//! Binary checkpoints for the FM model and the policy network.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic  [u8; 8]   "EARCKPT\0"
//! version u32
//! kind    u32      0 = fm, 1 = policy
//! fm:     n_users n_items n_attrs dim u64, bias u8, then tables users, items, attrs[, item_bias, attr_bias]
//! policy: input hidden actions u64, then the flat parameter vector
//! ```
//!
//! Every table is row-major `f32`. A JSON sidecar (`<file>.json`) carries
//! the training configuration and the id mappings.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use ear_core::action::PolicyNet;
use ear_core::estimation::{FmModel, Table};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const MAGIC: [u8; 8] = *b"EARCKPT\0";
pub const VERSION: u32 = 1;
const KIND_FM: u32 = 0;
const KIND_POLICY: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint {} not found", .0.display())]
    Missing(PathBuf),
    #[error("{}: {source}", file.display())]
    Io { file: PathBuf, source: io::Error },
    #[error("{}: not a checkpoint (bad magic)", .0.display())]
    BadMagic(PathBuf),
    #[error("{}: checkpoint version {found}, this build reads version {VERSION}", file.display())]
    Version { file: PathBuf, found: u32 },
    #[error("{}: expected a {expected} checkpoint", file.display())]
    Kind { file: PathBuf, expected: &'static str },
    #[error("{}: {message}", file.display())]
    Corrupt { file: PathBuf, message: String },
    #[error("{}: sidecar: {source}", file.display())]
    Sidecar { file: PathBuf, source: serde_json::Error },
}

pub type Result<T, E = CheckpointError> = std::result::Result<T, E>;

/// `fm.ckpt` → `fm.ckpt.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { file: path.to_path_buf(), source }
}

fn put_u64(buf: &mut Vec<u8>, x: usize) {
    buf.extend_from_slice(&(x as u64).to_le_bytes());
}

fn put_table(buf: &mut Vec<u8>, values: &[f64]) {
    buf.reserve(values.len() * 4);
    for &x in values {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    file: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Corrupt { file: self.file.to_path_buf(), message: "truncated".into() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.corrupt("dimension overflows usize"))
    }

    fn table(&mut self, rows: usize, dim: usize) -> Result<Table> {
        let n = rows.checked_mul(dim).ok_or_else(|| self.corrupt("table size overflows"))?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.corrupt("table size overflows"))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        Table::from_data(rows, dim, data).map_err(|e| self.corrupt(e))
    }

    fn corrupt(&self, e: impl std::fmt::Display) -> CheckpointError {
        CheckpointError::Corrupt { file: self.file.to_path_buf(), message: e.to_string() }
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.corrupt(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn header(kind: u32) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&kind.to_le_bytes());
    buf
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => CheckpointError::Missing(path.to_path_buf()),
        _ => CheckpointError::Io { file: path.to_path_buf(), source: e },
    })?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(io_err(path))?;
    Ok(bytes)
}

fn open<'a>(path: &'a Path, bytes: &'a [u8], kind: u32) -> Result<Reader<'a>> {
    let mut r = Reader { file: path, bytes, pos: 0 };
    if bytes.len() < 8 || r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic(path.to_path_buf()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version { file: path.to_path_buf(), found: version });
    }
    if r.u32()? != kind {
        let expected = if kind == KIND_FM { "fm" } else { "policy" };
        return Err(CheckpointError::Kind { file: path.to_path_buf(), expected });
    }
    Ok(r)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

pub fn encode_fm(model: &FmModel) -> Vec<u8> {
    let mut buf = header(KIND_FM);
    put_u64(&mut buf, model.n_users());
    put_u64(&mut buf, model.n_items());
    put_u64(&mut buf, model.n_attrs());
    put_u64(&mut buf, model.users().dim());
    let bias = model.item_biases().zip(model.attr_biases());
    buf.push(u8::from(bias.is_some()));
    for t in [model.users(), model.items(), model.attrs()] {
        put_table(&mut buf, t.as_slice());
    }
    if let Some((ib, ab)) = bias {
        put_table(&mut buf, ib.as_slice());
        put_table(&mut buf, ab.as_slice());
    }
    buf
}

pub fn decode_fm(path: &Path, bytes: &[u8]) -> Result<FmModel> {
    let mut r = open(path, bytes, KIND_FM)?;
    let (nu, ni, na, d) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
    let bias = match r.take(1)?[0] {
        0 => false,
        1 => true,
        b => return Err(r.corrupt(format!("bias flag {b}"))),
    };
    let users = r.table(nu, d)?;
    let items = r.table(ni, d)?;
    let attrs = r.table(na, d)?;
    let (ib, ab) = if bias { (Some(r.table(ni, 1)?), Some(r.table(na, 1)?)) } else { (None, None) };
    r.finish()?;
    FmModel::from_tables(users, items, attrs, ib, ab).map_err(|e| r.corrupt(e))
}

pub fn encode_policy(net: &PolicyNet) -> Vec<u8> {
    let mut buf = header(KIND_POLICY);
    put_u64(&mut buf, net.input());
    put_u64(&mut buf, net.hidden());
    put_u64(&mut buf, net.actions());
    put_table(&mut buf, net.params());
    buf
}

pub fn decode_policy(path: &Path, bytes: &[u8]) -> Result<PolicyNet> {
    let mut r = open(path, bytes, KIND_POLICY)?;
    let (input, hidden, actions) = (r.u64()?, r.u64()?, r.u64()?);
    let n = PolicyNet::param_count(input, hidden, actions);
    let params = r.table(n, 1)?.as_slice().to_vec();
    r.finish()?;
    PolicyNet::from_params(input, hidden, actions, params).map_err(|e| r.corrupt(e))
}

/// Rounds every weight through `f32`, matching what a save/load cycle yields.
pub fn quantize_fm(model: &FmModel) -> FmModel {
    decode_fm(Path::new("<memory>"), &encode_fm(model)).expect("encoded checkpoint decodes")
}

pub fn quantize_policy(net: &PolicyNet) -> PolicyNet {
    decode_policy(Path::new("<memory>"), &encode_policy(net)).expect("encoded checkpoint decodes")
}

fn write_sidecar<S: Serialize>(path: &Path, sidecar: &S) -> Result<()> {
    let side = sidecar_path(path);
    let mut text = serde_json::to_string_pretty(sidecar).map_err(|source| CheckpointError::Sidecar { file: side.clone(), source })?;
    text.push('\n');
    write_atomic(&side, text.as_bytes())
}

fn read_sidecar<S: DeserializeOwned>(path: &Path) -> Result<S> {
    let side = sidecar_path(path);
    let bytes = read_file(&side)?;
    serde_json::from_slice(&bytes).map_err(|source| CheckpointError::Sidecar { file: side, source })
}

/// Sidecar envelope; `meta` is whatever the caller records (config, id maps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar<M> {
    pub version: u32,
    pub kind: String,
    pub meta: M,
}

pub fn save_fm<M: Serialize>(path: &Path, model: &FmModel, meta: &M) -> Result<()> {
    write_atomic(path, &encode_fm(model))?;
    write_sidecar(path, &Sidecar { version: VERSION, kind: "fm".into(), meta })
}

pub fn load_fm<M: DeserializeOwned>(path: &Path) -> Result<(FmModel, M)> {
    let model = decode_fm(path, &read_file(path)?)?;
    let side: Sidecar<M> = read_sidecar(path)?;
    check_sidecar(path, &side, "fm")?;
    Ok((model, side.meta))
}

pub fn save_policy<M: Serialize>(path: &Path, net: &PolicyNet, meta: &M) -> Result<()> {
    write_atomic(path, &encode_policy(net))?;
    write_sidecar(path, &Sidecar { version: VERSION, kind: "policy".into(), meta })
}

pub fn load_policy<M: DeserializeOwned>(path: &Path) -> Result<(PolicyNet, M)> {
    let net = decode_policy(path, &read_file(path)?)?;
    let side: Sidecar<M> = read_sidecar(path)?;
    check_sidecar(path, &side, "policy")?;
    Ok((net, side.meta))
}

fn check_sidecar<M>(path: &Path, side: &Sidecar<M>, kind: &'static str) -> Result<()> {
    let file = sidecar_path(path);
    if side.version != VERSION {
        return Err(CheckpointError::Version { file, found: side.version });
    }
    if side.kind != kind {
        return Err(CheckpointError::Kind { file, expected: kind });
    }
    Ok(())
}
