//! Binary checkpoint: `NPNC` magic, a `u32` format version, a `u32` section
//! count, then tagged sections (`[u8; 4]` tag, `u64` byte length, payload).
//! Everything is little-endian. Readers skip sections they do not know.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{NpnError, Result};
use crate::label_space::HistogramStore;
use crate::model::{Dense, MlpNetwork, OptimizerState};
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 4] = b"NPNC";
pub const VERSION: u32 = 1;

const TAG_PARAMS: &[u8; 4] = b"PARM";
const TAG_OPTIMIZER: &[u8; 4] = b"OPTM";
const TAG_HISTOGRAMS: &[u8; 4] = b"HIST";
const TAG_RNG: &[u8; 4] = b"RNGS";
const TAG_LABELS: &[u8; 4] = b"LABL";
const TAG_CONFIG: &[u8; 4] = b"CONF";

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: MlpNetwork,
    pub optimizer: OptimizerState,
    pub histograms: HistogramStore,
    /// Run seed; every stream is derived from it and the epoch index.
    pub seed: u64,
    /// 0-based index of the next epoch to run.
    pub next_epoch: u64,
    pub config: Option<TrainConfig>,
    /// `(noisy, true)` train labels, kept for inspection.
    pub labels: Option<(Vec<u16>, Vec<u16>)>,
}

fn format_err(reason: impl Into<String>) -> NpnError {
    NpnError::Format {
        what: "checkpoint",
        reason: reason.into(),
    }
}

#[derive(Default)]
struct Encoder(Vec<u8>);

impl Encoder {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| format_err("length exceeds u32"))?;
        self.u32(v);
        Ok(())
    }
    fn layers(&mut self, layers: &[Dense]) -> Result<()> {
        self.len(layers.len())?;
        for l in layers {
            self.len(l.fan_in())?;
            self.len(l.fan_out())?;
            l.weights.iter().for_each(|&w| self.f64(w));
            l.bias.iter().for_each(|&b| self.f64(b));
        }
        Ok(())
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(format_err("truncated section"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
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
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn layers(&mut self) -> Result<Vec<Dense>> {
        let count = self.u32()? as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = self.u32()? as usize;
            let cols = self.u32()? as usize;
            if self.buf.len() < (rows * cols + cols) * 8 {
                return Err(format_err("truncated layer"));
            }
            let w = (0..rows * cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            let b = (0..cols).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            layers.push(Dense {
                weights: Array2::from_shape_vec((rows, cols), w).map_err(|e| format_err(e.to_string()))?,
                bias: Array1::from(b),
            });
        }
        Ok(layers)
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut sections: Vec<(&[u8; 4], Vec<u8>)> = Vec::new();

        let mut e = Encoder::default();
        e.layers(self.net.layers())?;
        sections.push((TAG_PARAMS, e.0));

        let mut e = Encoder::default();
        e.f64(self.optimizer.momentum);
        e.u64(self.optimizer.step);
        e.layers(&self.optimizer.velocity)?;
        sections.push((TAG_OPTIMIZER, e.0));

        let mut e = Encoder::default();
        e.len(self.histograms.len())?;
        e.len(self.histograms.classes())?;
        for h in self.histograms.histograms() {
            e.u32(h.epochs_observed());
        }
        for c in self.histograms.class_major_counts() {
            e.u32(c);
        }
        sections.push((TAG_HISTOGRAMS, e.0));

        let mut e = Encoder::default();
        e.u64(self.seed);
        e.u64(self.next_epoch);
        sections.push((TAG_RNG, e.0));

        if let Some((noisy, truth)) = &self.labels {
            let mut e = Encoder::default();
            e.len(noisy.len())?;
            noisy.iter().chain(truth).for_each(|v| e.0.extend_from_slice(&v.to_le_bytes()));
            sections.push((TAG_LABELS, e.0));
        }
        if let Some(cfg) = &self.config {
            sections.push((TAG_CONFIG, serde_json::to_vec(cfg)?));
        }

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (tag, payload) in sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut d = Decoder { buf: bytes };
        if d.take(4).map_err(|_| format_err("missing magic"))? != MAGIC {
            return Err(format_err("bad magic bytes"));
        }
        let version = d.u32()?;
        if version != VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let count = d.u32()?;

        let mut params = None;
        let mut optimizer = None;
        let mut histograms = None;
        let mut rng = None;
        let mut labels = None;
        let mut config = None;
        for _ in 0..count {
            let tag: [u8; 4] = d.take(4)?.try_into().unwrap();
            let len = usize::try_from(d.u64()?).map_err(|_| format_err("section too large"))?;
            let mut s = Decoder { buf: d.take(len)? };
            match &tag {
                TAG_PARAMS => params = Some(s.layers()?),
                TAG_OPTIMIZER => {
                    let momentum = s.f64()?;
                    let step = s.u64()?;
                    optimizer = Some((momentum, step, s.layers()?));
                }
                TAG_HISTOGRAMS => {
                    let n = s.u32()? as usize;
                    let classes = s.u32()? as usize;
                    if s.buf.len() != (n + n * classes) * 4 {
                        return Err(format_err("histogram section length"));
                    }
                    let epochs = (0..n).map(|_| s.u32()).collect::<Result<Vec<_>>>()?;
                    let counts = (0..n * classes).map(|_| s.u32()).collect::<Result<Vec<_>>>()?;
                    histograms = Some(HistogramStore::from_class_major(classes, &epochs, &counts)?);
                }
                TAG_RNG => rng = Some((s.u64()?, s.u64()?)),
                TAG_LABELS => {
                    let n = s.u32()? as usize;
                    let noisy = (0..n).map(|_| s.u16()).collect::<Result<Vec<_>>>()?;
                    let truth = (0..n).map(|_| s.u16()).collect::<Result<Vec<_>>>()?;
                    labels = Some((noisy, truth));
                }
                TAG_CONFIG => config = Some(serde_json::from_slice(s.buf)?),
                _ => {}
            }
        }

        let net = MlpNetwork::from_layers(params.ok_or_else(|| format_err("missing PARM section"))?)?;
        let (momentum, step, velocity) = optimizer.ok_or_else(|| format_err("missing OPTM section"))?;
        let opt = OptimizerState {
            momentum,
            velocity,
            step,
        };
        if opt.velocity.len() != net.layers().len()
            || opt
                .velocity
                .iter()
                .zip(net.layers())
                .any(|(v, l)| v.weights.dim() != l.weights.dim())
        {
            return Err(format_err("optimizer buffers do not match parameters"));
        }
        let (seed, next_epoch) = rng.ok_or_else(|| format_err("missing RNGS section"))?;
        Ok(Checkpoint {
            net,
            optimizer: opt,
            histograms: histograms.ok_or_else(|| format_err("missing HIST section"))?,
            seed,
            next_epoch,
            config,
            labels,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let bytes = self.encode()?;
        w.write_all(&bytes)
            .map_err(|e| NpnError::io("<checkpoint writer>", e))
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| NpnError::io("<checkpoint reader>", e))?;
        Self::decode(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        fs::write(path, bytes).map_err(|e| NpnError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| NpnError::io(path, e))?;
        Self::decode(&bytes)
    }
}
