//! Binary checkpoint format, little-endian throughout.
//!
//! ```text
//! magic "TOKMOECK" | u32 version | u64 payload length | 32-byte SHA-256 of payload
//! payload:
//!   u64 len, config text (key=value lines)
//!   u8 frozen, 64-byte hex codebook hash
//!   u8 has_rng [32-byte seed, u128 word position, u64 draw count]
//!   u64 epoch, u8 has_best [f64 best]
//!   u64 count, then per tensor: u32 name len, name, u32 rank, u64 extents, f64 data
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::encoder::{EncoderConfig, EncoderState, ParamMap};
use crate::error::{Error, Result};
use crate::kernel::{Tensor, TrainRng};
use crate::model::{Interface, Model, ModelConfig, CODEBOOK};
use crate::vq::Codebook;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TOKMOECK";
const HEADER_LEN: usize = 8 + 4 + 8 + 32;
const MODEL_PREFIX: &str = "model.";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    /// Run configuration echo. Keys must not start with `model.`.
    pub config: Vec<(String, String)>,
    pub rng: Option<TrainRng>,
    pub epoch: u64,
    pub best_val: Option<f64>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            config: Vec::new(),
            rng: None,
            epoch: 0,
            best_val: None,
        }
    }
}

fn model_config_lines(cfg: &ModelConfig) -> Vec<(String, String)> {
    let e = &cfg.encoder;
    let layers: Vec<String> = e.moe_layers.iter().map(|l| l.to_string()).collect();
    [
        ("in_dim", cfg.in_dim.to_string()),
        ("d_q", cfg.d_q.to_string()),
        ("codebook_size", cfg.codebook_size.to_string()),
        ("num_classes", cfg.num_classes.to_string()),
        ("interface", cfg.interface.name().to_string()),
        ("num_layers", e.num_layers.to_string()),
        ("hidden_dim", e.hidden_dim.to_string()),
        ("k", e.k.to_string()),
        ("tau", format!("{:?}", e.tau)),
        ("dropout", format!("{:?}", e.dropout)),
        ("moe_layers", layers.join(",")),
        ("batch_norm", e.batch_norm.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("{MODEL_PREFIX}{k}"), v))
    .collect()
}

fn parse_model_config(lines: &[(String, String)]) -> Result<ModelConfig> {
    let get = |k: &str| -> Result<&str> {
        let full = format!("{MODEL_PREFIX}{k}");
        lines
            .iter()
            .find(|(key, _)| *key == full)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Integrity(format!("config block lacks {full}")))
    };
    fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| Error::Integrity(format!("config value {k}={v} does not parse")))
    }
    let moe = get("moe_layers")?;
    let moe_layers = if moe.is_empty() {
        Vec::new()
    } else {
        moe.split(',').map(|s| num("moe_layers", s)).collect::<Result<_>>()?
    };
    let interface = get("interface")?;
    Ok(ModelConfig {
        encoder: EncoderConfig {
            num_layers: num("num_layers", get("num_layers")?)?,
            hidden_dim: num("hidden_dim", get("hidden_dim")?)?,
            k: num("k", get("k")?)?,
            tau: num("tau", get("tau")?)?,
            dropout: num("dropout", get("dropout")?)?,
            moe_layers,
            batch_norm: num("batch_norm", get("batch_norm")?)?,
        },
        in_dim: num("in_dim", get("in_dim")?)?,
        d_q: num("d_q", get("d_q")?)?,
        codebook_size: num("codebook_size", get("codebook_size")?)?,
        num_classes: num("num_classes", get("num_classes")?)?,
        interface: Interface::parse(interface)
            .ok_or_else(|| Error::Integrity(format!("unknown interface {interface}")))?,
    })
}

fn encode_payload(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut text = String::new();
    for (k, v) in model_config_lines(&ck.model.cfg) {
        text.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in &ck.config {
        if k.starts_with(MODEL_PREFIX) || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Config(format!("config key {k:?} cannot be echoed")));
        }
        text.push_str(&format!("{k}={v}\n"));
    }
    let mut out = Vec::new();
    out.extend((text.len() as u64).to_le_bytes());
    out.extend(text.as_bytes());

    out.push(u8::from(ck.model.codebook.is_frozen()));
    out.extend(ck.model.codebook.content_hash().as_bytes());

    match &ck.rng {
        Some(r) => {
            out.push(1);
            out.extend(r.seed_bytes());
            out.extend(r.word_pos().to_le_bytes());
            out.extend(r.calls().to_le_bytes());
        }
        None => out.push(0),
    }
    out.extend(ck.epoch.to_le_bytes());
    match ck.best_val {
        Some(b) => {
            out.push(1);
            out.extend(b.to_le_bytes());
        }
        None => out.push(0),
    }

    let tensors = ck.model.named_tensors();
    out.extend((tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend((e as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend(x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes via a temporary sibling and a rename, so a failed save leaves no
/// partial file at `path`.
pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let payload = encode_payload(ck)?;
    let mut bytes = Vec::with_capacity(HEADER_LEN + payload.len());
    bytes.extend(MAGIC);
    bytes.extend(CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend((payload.len() as u64).to_le_bytes());
    bytes.extend(Sha256::digest(&payload));
    bytes.extend(payload);

    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Integrity(format!("payload ends early at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Integrity(format!("length {n} out of range")))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Integrity(format!("flag byte {b} is neither 0 nor 1"))),
        }
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Integrity("text is not UTF-8".into()))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::Integrity(format!("file has {} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Integrity("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != len {
        return Err(Error::Integrity(format!(
            "payload is {} bytes, header declares {len}",
            payload.len()
        )));
    }
    if Sha256::digest(payload).as_slice() != &bytes[20..52] {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    decode_payload(payload)
}

fn decode_payload(payload: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: payload, pos: 0 };
    let n = r.len()?;
    let text = r.utf8(n)?;
    let mut lines = Vec::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Integrity(format!("config line {line:?} lacks '='")))?;
        lines.push((k.to_string(), v.to_string()));
    }
    let cfg = parse_model_config(&lines)?;
    let config: Vec<(String, String)> = lines.into_iter().filter(|(k, _)| !k.starts_with(MODEL_PREFIX)).collect();

    let frozen = r.flag()?;
    let hash = r.utf8(64)?.to_string();
    let rng = if r.flag()? {
        let seed: [u8; 32] = r.array()?;
        let word_pos = u128::from_le_bytes(r.array()?);
        let calls = r.u64()?;
        Some(TrainRng::restore(seed, word_pos, calls))
    } else {
        None
    };
    let epoch = r.u64()?;
    let best_val = if r.flag()? { Some(f64::from_le_bytes(r.array()?)) } else { None };

    let count = r.len()?;
    let mut enc = ParamMap::new();
    let mut params = ParamMap::new();
    let mut codes = None;
    for _ in 0..count {
        let nl = r.u32()? as usize;
        let name = r.utf8(nl)?.to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len()?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Integrity(format!("tensor {name} extents overflow")))?;
        let data = r.take(numel)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data)?;
        if name == CODEBOOK {
            codes = Some(t);
        } else if name.starts_with("enc.") {
            enc.insert(name, t);
        } else {
            params.insert(name, t);
        }
    }
    if r.pos != payload.len() {
        return Err(Error::Integrity(format!("{} trailing payload bytes", payload.len() - r.pos)));
    }
    let codes = codes.ok_or_else(|| Error::Integrity("checkpoint has no codebook".into()))?;
    let mut codebook = Codebook::new(codes)?;
    codebook.set_frozen(frozen);
    if codebook.content_hash() != hash {
        return Err(Error::Integrity("stored codebook hash does not match its codes".into()));
    }
    cfg.validate()?;
    let encoder = EncoderState {
        cfg: cfg.encoder.clone(),
        in_dim: cfg.in_dim,
        params: enc,
    };
    encoder.check_shapes()?;
    if codebook.size() != cfg.codebook_size || codebook.dim() != cfg.d_q {
        return Err(Error::dim(format!(
            "codebook is {}×{}, config says {}×{}",
            codebook.size(),
            codebook.dim(),
            cfg.codebook_size,
            cfg.d_q
        )));
    }
    Ok(Checkpoint {
        model: Model { cfg, encoder, params, codebook },
        config,
        rng,
        epoch,
        best_val,
    })
}
