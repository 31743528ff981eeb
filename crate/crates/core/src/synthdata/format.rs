//! The `QADS` dataset file.
//!
//! Little-endian throughout:
//!
//! ```text
//! "QADS"  u32 version  u32 len + UTF-8 generator config (TOML)
//! u32 set count
//! per set:       u32 class  u8 K
//!   per modality:  u16 p
//!     per sample:    f64 γ  u32 dim  dim × f64
//! ```

use std::io::{Read, Write};

use super::{Dataset, GeneratorConfig};
use crate::binio::{checked_u16, checked_u32, checked_u8, Reader, Writer};
use crate::error::{Error, Result};
use crate::fusion::{MultimodalSampleSet, Sample};

pub const DATASET_MAGIC: &[u8; 4] = b"QADS";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset<W: Write>(out: W, ds: &Dataset) -> Result<()> {
    let config = toml::to_string(&ds.config).map_err(|e| Error::Format(e.to_string()))?;
    let mut w = Writer::new(out);
    w.bytes(DATASET_MAGIC)?;
    w.u32(DATASET_VERSION)?;
    w.text(&config)?;
    w.u32(checked_u32(ds.sets.len(), "set count")?)?;
    for set in &ds.sets {
        w.u32(set.label)?;
        w.u8(checked_u8(set.modalities.len(), "modality count")?)?;
        for samples in &set.modalities {
            w.u16(checked_u16(samples.len(), "samples per modality")?)?;
            for s in samples {
                w.f64(s.gamma)?;
                w.u32(checked_u32(s.values.len(), "sample dimension")?)?;
                for &v in &s.values {
                    w.f64(v)?;
                }
            }
        }
    }
    w.into_inner().flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let mut r = Reader::new(input);
    if &r.exact::<4>()? != DATASET_MAGIC {
        return Err(Error::Format("not a QADS dataset (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported QADS version {version}")));
    }
    let config: GeneratorConfig =
        toml::from_str(&r.text()?).map_err(|e| Error::Format(format!("dataset config: {e}")))?;
    let n = r.u32()? as usize;
    let mut sets = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let label = r.u32()?;
        let k = r.u8()? as usize;
        let mut modalities = Vec::with_capacity(k);
        for _ in 0..k {
            let p = r.u16()? as usize;
            let mut samples = Vec::with_capacity(p);
            for _ in 0..p {
                let gamma = r.f64()?;
                let dim = r.u32()? as usize;
                let values = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                samples.push(Sample { values, gamma });
            }
            modalities.push(samples);
        }
        sets.push(MultimodalSampleSet { label, modalities });
    }
    r.finish()?;
    Ok(Dataset { config, sets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::generate;

    fn tiny() -> Dataset {
        let cfg = GeneratorConfig {
            num_classes: 3,
            train_classes: 2,
            sets_per_class: 2,
            ..GeneratorConfig::default()
        };
        generate(&cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = tiny();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, ds);
        let mut again = Vec::new();
        write_dataset(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &tiny()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_dataset(&bad[..]).is_err());
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(read_dataset(&bad[..]).unwrap_err().to_string().contains("version"));
        assert!(read_dataset(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_dataset(&long[..]).is_err());
    }
}
