//! `CSIW` checkpoint files holding configuration, normalization, parameters,
//! batch-norm running statistics and optionally the Adam state.
//!
//! Layout (little-endian): magic, u32 version, eight u32 config words, f64 a,
//! f64 b, u32 shift, u32 record count, records, u8 Adam flag. A record is u16
//! name length, UTF-8 name, u8 rank, u32 dims, f64 values. The Adam section is
//! u64 step, f64 β₁, β₂, ε, then record count and records for `m` and for `v`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::channel::PreprocState;
use crate::error::{Error, Result};
use crate::model::{BlockStyle, Model, ModelConfig};
use crate::tensor::Tensor;
use crate::training::AdamState;

pub const MAGIC: &[u8; 4] = b"CSIW";
pub const VERSION: u32 = 1;
const RUNNING_MEAN: &str = "running_mean";
const RUNNING_VAR: &str = "running_var";

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn record(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("record name {name} too long")))?;
        self.0.extend_from_slice(&len.to_le_bytes());
        self.0.extend_from_slice(name.as_bytes());
        self.u8(u8::try_from(shape.len()).map_err(|_| Error::Format(format!("rank of {name}")))?);
        for &d in shape {
            self.u32(d)?;
        }
        for &v in values {
            self.f64(v);
        }
        Ok(())
    }
    fn records<'a>(&mut self, items: impl ExactSizeIterator<Item = (&'a str, Vec<usize>, &'a [f64])>) -> Result<()> {
        self.u32(items.len())?;
        for (name, shape, values) in items {
            self.record(name, &shape, values)?;
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn record(&mut self) -> Result<(String, Tensor)> {
        let len = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Format("record name is not UTF-8".into()))?
            .to_string();
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count
            .filter(|&c| c.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| Error::Format(format!("record {name} declares more values than remain")))?;
        let values = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(&shape, values).map_err(|e| Error::Format(format!("record {name}: {e}")))?;
        Ok((name, tensor))
    }
    fn records(&mut self) -> Result<BTreeMap<String, Tensor>> {
        let n = self.u32()?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let (name, t) = self.record()?;
            if out.insert(name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate record {name}")));
            }
        }
        Ok(out)
    }
}

pub fn encode(model: &Model, adam: Option<&AdamState>) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize)?;
    let c = &model.config;
    for v in [
        c.nc_crop,
        c.nt,
        c.codeword_len,
        c.bits as usize,
        c.block_style.code() as usize,
        c.quant_aware as usize,
        c.encoder_resnets,
        c.decoder_resnets,
    ] {
        w.u32(v)?;
    }
    w.f64(model.preproc.a);
    w.f64(model.preproc.b);
    w.u32(model.preproc.shift)?;

    let bn_names: Vec<(String, String)> = model
        .bn
        .keys()
        .map(|k| (format!("{k}.{RUNNING_MEAN}"), format!("{k}.{RUNNING_VAR}")))
        .collect();
    let params = model.params.iter().map(|(n, t)| (n.as_str(), t.shape().to_vec(), t.data()));
    let stats = model.bn.values().zip(&bn_names).flat_map(|(s, (mn, vn))| {
        [
            (mn.as_str(), vec![s.depth()], s.running_mean.as_slice()),
            (vn.as_str(), vec![s.depth()], s.running_var.as_slice()),
        ]
    });
    let all: Vec<_> = params.chain(stats).collect();
    w.records(all.into_iter())?;

    match adam {
        None => w.u8(0),
        Some(a) => {
            w.u8(1);
            w.0.extend_from_slice(&a.t.to_le_bytes());
            w.f64(a.beta1);
            w.f64(a.beta2);
            w.f64(a.eps);
            for moments in [&a.m, &a.v] {
                let items: Vec<_> = moments.iter().map(|(n, v)| (n.as_str(), vec![v.len()], v.as_slice())).collect();
                w.records(items.into_iter())?;
            }
        }
    }
    Ok(w.0)
}

pub fn decode(bytes: &[u8]) -> Result<(Model, Option<AdamState>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let words = (0..8).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let quant_aware = match words[5] {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("quant_aware flag {v}"))),
    };
    let config = ModelConfig {
        nc_crop: words[0],
        nt: words[1],
        codeword_len: words[2],
        bits: u8::try_from(words[3]).map_err(|_| Error::Format(format!("bits {}", words[3])))?,
        block_style: BlockStyle::from_code(words[4] as u32)?,
        quant_aware,
        encoder_resnets: words[6],
        decoder_resnets: words[7],
    };
    let preproc = PreprocState { a: r.f64()?, b: r.f64()?, shift: r.u32()? };
    let mut model = Model::new(config, preproc, 0)?;
    let mut records = r.records()?;

    let names: Vec<String> = model.params.names().cloned().collect();
    for name in names {
        let t = records.remove(&name).ok_or_else(|| Error::Format(format!("missing record {name}")))?;
        let p = model.params.get_mut(&name).unwrap();
        if p.shape() != t.shape() {
            return Err(Error::Format(format!("record {name} has shape {:?}, expected {:?}", t.shape(), p.shape())));
        }
        p.data_mut().copy_from_slice(t.data());
    }
    for (prefix, state) in model.bn.iter_mut() {
        for (suffix, dst) in [(RUNNING_MEAN, &mut state.running_mean), (RUNNING_VAR, &mut state.running_var)] {
            let name = format!("{prefix}.{suffix}");
            let t = records.remove(&name).ok_or_else(|| Error::Format(format!("missing record {name}")))?;
            if t.len() != dst.len() {
                return Err(Error::Format(format!("record {name} has {} values, expected {}", t.len(), dst.len())));
            }
            dst.copy_from_slice(t.data());
        }
    }
    if let Some(extra) = records.keys().next() {
        return Err(Error::Format(format!("unexpected record {extra}")));
    }

    let adam = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
            let mut moments = Vec::new();
            for _ in 0..2 {
                let recs = r.records()?;
                let want: HashSet<&String> = model.params.names().collect();
                if recs.len() != want.len() || !recs.keys().all(|k| want.contains(k)) {
                    return Err(Error::Format("Adam moments do not match parameters".into()));
                }
                let mut map = BTreeMap::new();
                for (name, t) in recs {
                    if t.len() != model.params.get(&name).unwrap().len() {
                        return Err(Error::Format(format!("Adam moment {name} has wrong length")));
                    }
                    map.insert(name, t.into_data());
                }
                moments.push(map);
            }
            let v = moments.pop().unwrap();
            let m = moments.pop().unwrap();
            Some(AdamState { m, v, t, beta1, beta2, eps })
        }
        f => return Err(Error::Format(format!("Adam flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((model, adam))
}

pub fn save(path: &Path, model: &Model, adam: Option<&AdamState>) -> Result<()> {
    std::fs::write(path, encode(model, adam)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, Option<AdamState>)> {
    decode(&std::fs::read(path)?)
}
