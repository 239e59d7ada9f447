//! PADM binary model files.
//!
//! Little-endian throughout:
//!
//! ```text
//! "PADM" u16 version
//! u8 kernel (0 linear, 1 rbf)  f64 gamma  f64 C
//! u8 target (0 depth, 1 illuminant, 2 saliency, 3 fusion, 4 concatenated)
//! u32 dims  u32 n_sv
//! f64 bias  f64 platt_a  f64 platt_b
//! f64 weight_bonafide  f64 weight_attack  u64 seed  f64 tol
//! str extractor_id  str config_digest          (u32 length + UTF-8)
//! u8 standardized, then dims x f64 mean and dims x f64 std when set
//! n_sv x f64 dual coefficients
//! n_sv x dims x f64 support vectors
//! ```

use std::fs;
use std::path::Path;

use super::{Kernel, ModelTarget, Platt, SvmModel};
use crate::cache::write_atomic;
use crate::error::{PadError, Result};
use crate::features::Standardizer;

const MAGIC: &[u8; 4] = b"PADM";
pub const VERSION: u16 = 1;

fn target_tag(t: ModelTarget) -> u8 {
    match t {
        ModelTarget::Depth => 0,
        ModelTarget::Illuminant => 1,
        ModelTarget::Saliency => 2,
        ModelTarget::Fusion => 3,
        ModelTarget::Concatenated => 4,
    }
}

pub fn encode(m: &SvmModel) -> Vec<u8> {
    let mut out = Vec::new();
    let f = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
    let s = |out: &mut Vec<u8>, v: &str| {
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
        out.extend_from_slice(v.as_bytes());
    };
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    match m.kernel {
        Kernel::Linear => {
            out.push(0);
            f(&mut out, 0.0);
        }
        Kernel::Rbf { gamma } => {
            out.push(1);
            f(&mut out, gamma);
        }
    }
    f(&mut out, m.c_param);
    out.push(target_tag(m.target));
    let dims = m.dim();
    out.extend_from_slice(&(dims as u32).to_le_bytes());
    out.extend_from_slice(&(m.support_vectors.len() as u32).to_le_bytes());
    for v in [m.bias, m.platt.a, m.platt.b, m.class_weights[0], m.class_weights[1]] {
        f(&mut out, v);
    }
    out.extend_from_slice(&m.seed.to_le_bytes());
    f(&mut out, m.tol);
    s(&mut out, &m.extractor_id);
    s(&mut out, &m.config_digest);
    match &m.standardizer {
        Some(st) => {
            out.push(1);
            st.mean.iter().chain(&st.std).for_each(|&v| f(&mut out, v));
        }
        None => out.push(0),
    }
    m.dual_coefs.iter().for_each(|&v| f(&mut out, v));
    m.support_vectors.iter().flatten().for_each(|&v| f(&mut out, v));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| PadError::format(self.path, format!("truncated at byte {}", self.pos)))?;
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
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| PadError::format(self.path, "string field is not UTF-8"))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<SvmModel> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(PadError::format(path, "not a PADM model file"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(PadError::format(path, format!("unsupported model version {version}")));
    }
    let ktag = r.u8()?;
    let gamma = r.f64()?;
    let kernel = match ktag {
        0 => Kernel::Linear,
        1 => Kernel::Rbf { gamma },
        t => return Err(PadError::format(path, format!("unknown kernel tag {t}"))),
    };
    let c_param = r.f64()?;
    let target = match r.u8()? {
        0 => ModelTarget::Depth,
        1 => ModelTarget::Illuminant,
        2 => ModelTarget::Saliency,
        3 => ModelTarget::Fusion,
        4 => ModelTarget::Concatenated,
        t => return Err(PadError::format(path, format!("unknown target tag {t}"))),
    };
    let dims = r.u32()? as usize;
    let n_sv = r.u32()? as usize;
    let bias = r.f64()?;
    let platt = Platt { a: r.f64()?, b: r.f64()? };
    let class_weights = [r.f64()?, r.f64()?];
    let seed = r.u64()?;
    let tol = r.f64()?;
    let extractor_id = r.string()?;
    let config_digest = r.string()?;
    let standardizer = match r.u8()? {
        0 => None,
        1 => Some(Standardizer {
            mean: r.f64s(dims)?,
            std: r.f64s(dims)?,
        }),
        t => return Err(PadError::format(path, format!("bad standardize flag {t}"))),
    };
    let expected_rest = n_sv.checked_mul(dims + 1).and_then(|v| v.checked_mul(8));
    if expected_rest != Some(bytes.len() - r.pos) {
        return Err(PadError::format(
            path,
            format!("{n_sv} support vectors of dimension {dims} do not match the file size"),
        ));
    }
    let dual_coefs = r.f64s(n_sv)?;
    let support_vectors = (0..n_sv).map(|_| r.f64s(dims)).collect::<Result<_>>()?;
    Ok(SvmModel {
        kernel,
        support_vectors,
        dual_coefs,
        bias,
        platt,
        c_param,
        class_weights,
        target,
        extractor_id,
        standardizer,
        seed,
        tol,
        config_digest,
    })
}

pub fn save(path: &Path, model: &SvmModel) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load(path: &Path) -> Result<SvmModel> {
    let bytes = fs::read(path).map_err(|e| PadError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::SvmParams;
    use crate::model::Label;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained(standardize: bool) -> SvmModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..40).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<Label> = x.iter().map(|r| Label::from_sign(r[0] + r[1] * r[2])).collect();
        let mut m = SvmModel::train(
            &x,
            &labels,
            &SvmParams::default(),
            ModelTarget::Saliency,
            "fallback-v1",
            standardize,
            11,
            "abc123",
        )
        .unwrap();
        m.platt = Platt { a: -2.5, b: 0.125 };
        m
    }

    #[test]
    fn round_trip_is_exact() {
        for st in [false, true] {
            let m = trained(st);
            let back = decode(&encode(&m), Path::new("m")).unwrap();
            assert_eq!(back, m);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..100 {
                let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
                assert_eq!(m.decision(&x).to_bits(), back.decision(&x).to_bits());
            }
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = encode(&trained(false));
        assert!(decode(&bytes[..bytes.len() - 3], Path::new("m")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, Path::new("m")).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(decode(&v2, Path::new("m")).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("models/saliency.padm");
        let m = trained(true);
        save(&p, &m).unwrap();
        assert_eq!(load(&p).unwrap(), m);
    }
}
