use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::binary::{check_magic, put_f64, put_f64s, put_u32, put_u64, Counting};
use crate::diff::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::surrogate::{CatConfig, Surrogate};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DMLC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Named parameter arrays plus string metadata, tagged with the symbol rate
/// they were trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub symbol_rate: f64,
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(kind: &str, symbol_rate: f64, params: ParamStore) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("kind".to_string(), kind.to_string());
        Self {
            symbol_rate,
            meta,
            params: params.values_only(),
        }
    }

    pub fn kind(&self) -> &str {
        self.meta.get("kind").map_or("", String::as_str)
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("checkpoint has no `{key}` entry")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("checkpoint entry `{key}` = {raw:?} does not parse")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind() != kind {
            return Err(Error::Format(format!(
                "expected a {kind} checkpoint, found `{}`",
                self.kind()
            )));
        }
        Ok(())
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_f64(w, self.symbol_rate)?;
        put_u64(w, self.meta.len() as u64)?;
        put_u64(w, self.params.len() as u64)?;
        for (k, v) in &self.meta {
            put_str(w, k)?;
            put_str(w, v)?;
        }
        for (name, t) in self.params.iter() {
            put_str(w, name)?;
            put_u64(w, t.rows as u64)?;
            put_u64(w, t.cols as u64)?;
            put_f64s(w, &t.data)?;
        }
        Ok(())
    }

    pub fn read(r: impl Read) -> Result<Self> {
        let mut r = Counting::new(r);
        check_magic(&mut r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let symbol_rate = r.f64()?;
        let n_meta = r.u64()?;
        let n_params = r.u64()?;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = get_str(&mut r)?;
            let v = get_str(&mut r)?;
            meta.insert(k, v);
        }
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let name = get_str(&mut r)?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= 1 << 28)
                .ok_or_else(|| Error::Format(format!("implausible shape {rows} x {cols} for `{name}`")))?;
            let data = r.f64s(n)?;
            params.insert(name, Tensor::new(rows, cols, data)?)?;
        }
        r.finish()?;
        Ok(Self {
            symbol_rate,
            meta,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    Ok(w.write_all(s.as_bytes())?)
}

fn get_str<R: Read>(r: &mut Counting<R>) -> Result<String> {
    let n = r.u32()? as usize;
    if n > 1 << 16 {
        return Err(Error::Format(format!("implausible string length {n}")));
    }
    String::from_utf8(r.bytes(n)?).map_err(|_| Error::Format("string is not UTF-8".into()))
}

pub const SURROGATE_KIND: &str = "surrogate";

/// Stores a surrogate with its configuration.
pub fn surrogate_checkpoint(model: &Surrogate, symbol_rate: f64) -> Checkpoint {
    let c = &model.config;
    Checkpoint::new(SURROGATE_KIND, symbol_rate, model.params.clone())
        .with("embed_dim", c.embed_dim)
        .with("heads", c.heads)
        .with("kernel", c.kernel)
        .with("blocks", c.blocks)
        .with("ff_dim", c.ff_dim)
        .with("seq_len", c.seq_len)
        .with("input_kernel", c.input_kernel)
        .with("skip_taps", c.skip_taps)
        .with("skip_quad", c.skip_quad)
        .with("current_center", fmt_exact(c.current_center))
        .with("current_scale", fmt_exact(c.current_scale))
        .with("power_ref", fmt_exact(c.power_ref))
}

/// Surrogate and symbol rate from a checkpoint.
pub fn surrogate_from_checkpoint(ck: &Checkpoint) -> Result<(Surrogate, f64)> {
    ck.expect_kind(SURROGATE_KIND)?;
    let config = CatConfig {
        embed_dim: ck.get("embed_dim")?,
        heads: ck.get("heads")?,
        kernel: ck.get("kernel")?,
        blocks: ck.get("blocks")?,
        ff_dim: ck.get("ff_dim")?,
        seq_len: ck.get("seq_len")?,
        input_kernel: ck.get("input_kernel")?,
        skip_taps: ck.get("skip_taps")?,
        skip_quad: ck.get("skip_quad")?,
        current_center: ck.get("current_center")?,
        current_scale: ck.get("current_scale")?,
        power_ref: ck.get("power_ref")?,
    };
    config.validate()?;
    let reference = Surrogate::init(config.clone(), 0)?;
    for name in reference.params.names() {
        let want = reference.params.get(name).expect("listed").shape();
        match ck.params.get(name) {
            Some(t) if t.shape() == want => {}
            Some(t) => {
                return Err(Error::Format(format!(
                    "`{name}` has shape {:?}, expected {want:?}",
                    t.shape()
                )))
            }
            None => return Err(Error::Format(format!("checkpoint lacks `{name}`"))),
        }
    }
    Ok((
        Surrogate {
            config,
            params: ck.params.clone(),
        },
        ck.symbol_rate,
    ))
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn fmt_exact(v: f64) -> String {
    format!("{v:?}")
}
