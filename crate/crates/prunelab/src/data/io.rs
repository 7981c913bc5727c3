//! Single-file binary dataset export/import.
//!
//! Little-endian: magic `PDAT`, version, generator spec + seed, feature
//! shape, split ranges, normalization statistics, then raw f64 inputs and
//! u32 labels. Round trips are bit-exact.

use std::path::Path;

use super::{DataError, Dataset, DatasetSpec, Normalization, Splits, SyntheticKind};
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"PDAT";
const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.bytes.len() {
            return Err(DataError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, DataError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, DataError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, DataError> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

impl Dataset {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        match self.spec.kind {
            SyntheticKind::GaussianClusters { dim, separation } => {
                out.push(0);
                out.extend_from_slice(&(dim as u32).to_le_bytes());
                out.extend_from_slice(&separation.to_le_bytes());
            }
            SyntheticKind::ConcentricRings => out.push(1),
            SyntheticKind::TexturedPatches8x8 => out.push(2),
        }
        out.extend_from_slice(&(self.spec.n as u64).to_le_bytes());
        out.extend_from_slice(&(self.spec.classes as u32).to_le_bytes());
        out.extend_from_slice(&self.spec.seed.to_le_bytes());
        out.extend_from_slice(&(self.feature_shape.len() as u32).to_le_bytes());
        for &d in &self.feature_shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for r in [&self.splits.train, &self.splits.val, &self.splits.test] {
            out.extend_from_slice(&(r.start as u64).to_le_bytes());
            out.extend_from_slice(&(r.end as u64).to_le_bytes());
        }
        for &m in &self.norm.mean {
            out.extend_from_slice(&m.to_le_bytes());
        }
        for &s in &self.norm.std {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for &v in self.inputs.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| DataError::BadMagic)? != DATASET_MAGIC {
            return Err(DataError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DataError::UnsupportedVersion(version));
        }
        let kind = match r.u8()? {
            0 => SyntheticKind::GaussianClusters { dim: r.u32()? as usize, separation: r.f64()? },
            1 => SyntheticKind::ConcentricRings,
            2 => SyntheticKind::TexturedPatches8x8,
            t => return Err(DataError::Corrupt(format!("generator tag {t}"))),
        };
        let n = r.u64()? as usize;
        let classes = r.u32()? as usize;
        let seed = r.u64()?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > 4 {
            return Err(DataError::Corrupt(format!("feature rank {rank}")));
        }
        let mut feature_shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            feature_shape.push(r.u32()? as usize);
        }
        let features: usize = feature_shape.iter().product();
        if features == 0 || n.checked_mul(features).is_none() {
            return Err(DataError::Corrupt("degenerate dimensions".into()));
        }
        let mut ranges = Vec::with_capacity(3);
        for _ in 0..3 {
            let (start, end) = (r.u64()? as usize, r.u64()? as usize);
            if start > end || end > n {
                return Err(DataError::Corrupt(format!("split {start}..{end} of {n}")));
            }
            ranges.push(start..end);
        }
        let splits = Splits {
            train: ranges[0].clone(),
            val: ranges[1].clone(),
            test: ranges[2].clone(),
        };
        if splits.train.end > splits.val.start || splits.val.end > splits.test.start {
            return Err(DataError::Corrupt("overlapping splits".into()));
        }
        let norm = Normalization { mean: r.f64s(features)?, std: r.f64s(features)? };
        let mut shape = vec![n];
        shape.extend_from_slice(&feature_shape);
        let inputs = Tensor::new(shape, r.f64s(n * features)?)
            .map_err(|e| DataError::Corrupt(e.to_string()))?;
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let l = r.u32()? as usize;
            if l >= classes {
                return Err(DataError::Corrupt(format!("label {l} of {classes} classes")));
            }
            labels.push(l);
        }
        if r.pos != bytes.len() {
            return Err(DataError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Dataset {
            spec: DatasetSpec { kind, n, classes, seed },
            feature_shape,
            inputs,
            labels,
            splits,
            norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
