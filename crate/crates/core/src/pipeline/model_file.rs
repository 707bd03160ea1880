//! Binary model files: magic, version, then little-endian payloads with
//! explicit lengths.

use std::fs;
use std::path::Path;

use crate::codebook::Codebook;
use crate::descriptors::DescriptorChannel;
use crate::error::{Error, Result};
use crate::mkl::{ClassModel, MklModel, SvmParams};

pub const MAGIC: &[u8; 6] = b"CTXMKL";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to classify an image against one label space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub restaurant_id: String,
    /// Class slugs in model order.
    pub classes: Vec<String>,
    /// Channels in kernel order.
    pub channels: Vec<DescriptorChannel>,
    pub codebooks: Vec<Codebook>,
    pub bandwidths: Vec<f64>,
    /// Training histograms, `[channel][sample]`.
    pub histograms: Vec<Vec<Vec<f64>>>,
    pub mkl: MklModel,
    pub config: String,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }
    fn str(&mut self, s: &str) {
        self.len(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Model(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // every element takes at least one byte
        if n > (self.buf.len() - self.pos) as u64 {
            return Err(Error::Model(format!("implausible length {n} at byte {}", self.pos)));
        }
        Ok(n as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Model("invalid UTF-8 string".into()))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Model(format!("invalid flag byte {b}"))),
        }
    }
}

fn channel_from(i: u32) -> Result<DescriptorChannel> {
    DescriptorChannel::from_index(i as usize).ok_or_else(|| Error::Model(format!("unknown channel {i}")))
}

impl ModelFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.str(&self.restaurant_id);
        w.len(self.classes.len());
        self.classes.iter().for_each(|c| w.str(c));
        w.len(self.channels.len());
        self.channels.iter().for_each(|c| w.u32(c.index() as u32));

        w.len(self.codebooks.len());
        for cb in &self.codebooks {
            w.u32(cb.channel.map_or(u32::MAX, |c| c.index() as u32));
            w.len(cb.k);
            w.len(cb.dim);
            w.u64(cb.seed);
            w.f64(cb.inertia);
            w.f64s(&cb.centers);
            w.f64s(&cb.inertia_history);
        }
        w.f64s(&self.bandwidths);
        w.len(self.histograms.len());
        for ch in &self.histograms {
            w.len(ch.len());
            ch.iter().for_each(|h| w.f64s(h));
        }

        let m = &self.mkl;
        w.f64(m.p);
        w.f64(m.params.c);
        w.f64(m.params.kkt_tol);
        w.u64(m.params.max_passes);
        w.f64(m.params.gamma_scale);
        w.len(m.n_classes);
        w.len(m.labels.len());
        m.labels.iter().for_each(|&l| w.len(l));
        w.len(m.classes.len());
        for c in &m.classes {
            w.f64s(&c.alpha);
            w.f64(c.bias);
            w.f64s(&c.beta);
            w.f64(c.objective);
            w.0.push(u8::from(c.converged));
        }
        w.str(&self.config);
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Model("not a model file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let restaurant_id = r.str()?;
        let n = r.len()?;
        let classes = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let n = r.len()?;
        let channels = (0..n).map(|_| channel_from(r.u32()?)).collect::<Result<Vec<_>>>()?;

        let n = r.len()?;
        let mut codebooks = Vec::with_capacity(n);
        for _ in 0..n {
            let ch = r.u32()?;
            let channel = if ch == u32::MAX { None } else { Some(channel_from(ch)?) };
            let k = r.len()?;
            let dim = r.len()?;
            let seed = r.u64()?;
            let inertia = r.f64()?;
            let centers = r.f64s()?;
            if centers.len() != k * dim {
                return Err(Error::Model(format!("codebook has {} values for {k}x{dim}", centers.len())));
            }
            let inertia_history = r.f64s()?;
            codebooks.push(Codebook { channel, k, dim, centers, seed, inertia, inertia_history });
        }
        let bandwidths = r.f64s()?;
        let n = r.len()?;
        let mut histograms = Vec::with_capacity(n);
        for _ in 0..n {
            let m = r.len()?;
            histograms.push((0..m).map(|_| r.f64s()).collect::<Result<Vec<_>>>()?);
        }

        let p = r.f64()?;
        let params = SvmParams {
            c: r.f64()?,
            kkt_tol: r.f64()?,
            max_passes: r.u64()?,
            gamma_scale: r.f64()?,
        };
        let n_classes = r.len()?;
        let n = r.len()?;
        let labels = (0..n).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let n = r.len()?;
        let mut class_models = Vec::with_capacity(n);
        for _ in 0..n {
            class_models.push(ClassModel {
                alpha: r.f64s()?,
                bias: r.f64()?,
                beta: r.f64s()?,
                objective: r.f64()?,
                converged: r.bool()?,
            });
        }
        let config = r.str()?;
        if r.pos != buf.len() {
            return Err(Error::Model(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let mf = ModelFile {
            restaurant_id,
            classes,
            channels,
            codebooks,
            bandwidths,
            histograms,
            mkl: MklModel { p, params, labels, n_classes, classes: class_models },
            config,
        };
        mf.check()?;
        Ok(mf)
    }

    /// Structural consistency between the parts.
    pub fn check(&self) -> Result<()> {
        let k = self.channels.len();
        let n = self.mkl.labels.len();
        let bad = |m: String| Err(Error::Model(m));
        if self.codebooks.len() != k || self.bandwidths.len() != k || self.histograms.len() != k {
            return bad(format!("{k} channels but mismatched codebooks/bandwidths/histograms"));
        }
        if self.classes.len() != self.mkl.n_classes || self.mkl.classes.len() != self.mkl.n_classes {
            return bad("class count mismatch".into());
        }
        for (h, cb) in self.histograms.iter().zip(&self.codebooks) {
            if h.len() != n || h.iter().any(|v| v.len() != cb.k) {
                return bad("training histograms do not match the codebooks".into());
            }
        }
        for c in &self.mkl.classes {
            if c.alpha.len() != n || c.beta.len() != k {
                return bad("class model dimensions do not match".into());
            }
        }
        if self.mkl.labels.iter().any(|&l| l >= self.mkl.n_classes) {
            return bad("training label out of range".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Model(m) => Error::Model(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelFile {
        let cb = Codebook {
            channel: Some(DescriptorChannel::HueHist),
            k: 2,
            dim: 3,
            centers: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            seed: 9,
            inertia: 1.5,
            inertia_history: vec![2.0, 1.5],
        };
        ModelFile {
            restaurant_id: "r0".into(),
            classes: vec!["a".into(), "b".into()],
            channels: vec![DescriptorChannel::HueHist],
            codebooks: vec![cb],
            bandwidths: vec![0.7],
            histograms: vec![vec![vec![1.0, 0.0], vec![0.5, 1.0]]],
            mkl: MklModel {
                p: 2.0,
                params: SvmParams::default(),
                labels: vec![0, 1],
                n_classes: 2,
                classes: vec![
                    ClassModel { alpha: vec![1.0, 1.0], bias: -0.1, beta: vec![1.0], objective: 1.0, converged: true },
                    ClassModel { alpha: vec![1.0, 1.0], bias: 0.1, beta: vec![1.0], objective: 1.0, converged: false },
                ],
            },
            config: "seed = 1\n".into(),
        }
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let b = m.to_bytes();
        assert_eq!(&b[..6], MAGIC);
        assert_eq!(ModelFile::from_bytes(&b).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let mut b = sample().to_bytes();
        b[6] = 9;
        assert!(matches!(ModelFile::from_bytes(&b), Err(Error::Model(m)) if m.contains("version")));
        let b = sample().to_bytes();
        assert!(ModelFile::from_bytes(&b[..b.len() - 3]).is_err());
        assert!(ModelFile::from_bytes(b"CTXMK").is_err());
        let mut b = sample().to_bytes();
        b.push(0);
        assert!(ModelFile::from_bytes(&b).is_err());
    }
}
