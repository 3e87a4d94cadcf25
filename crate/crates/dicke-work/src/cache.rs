//! Optional on-disk cache of labeled spectra, keyed by the exact parameter
//! bits and decomposition kind. Purely an optimization: loading a cached
//! spectrum is bit-identical to recomputing it, which the runner tests rely
//! on for byte-stable outputs.
//!
//! Format: magic + header (dims, params, decomposition, flags) followed by
//! raw little-endian doubles (energies, then eigenvector columns, real-only
//! when the spectrum is exactly real), sector ids, and charge labels.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::Result;
use crate::model::{ChargeId, DickeParams};
use crate::spectra::{ChargeLabels, LabeledSpectrum};

const MAGIC: &[u8; 8] = b"DKWSPC01";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decomposition {
    Full,
    MSectors,
    ParitySplit,
}

impl Decomposition {
    fn tag(self) -> u8 {
        match self {
            Decomposition::Full => 0,
            Decomposition::MSectors => 1,
            Decomposition::ParitySplit => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumCache {
    dir: PathBuf,
}

impl SpectrumCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        SpectrumCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn file_name(params: &DickeParams, decomposition: Decomposition) -> String {
        format!(
            "spec-n{}-m{}-{:016x}-{:016x}-{:016x}-{:016x}-d{}.bin",
            params.n_spins,
            params.n_max,
            params.omega_boson.to_bits(),
            params.omega_atom.to_bits(),
            params.coupling.to_bits(),
            params.counter_rotating.to_bits(),
            decomposition.tag()
        )
    }

    fn path_for(&self, params: &DickeParams, decomposition: Decomposition) -> PathBuf {
        self.dir.join(Self::file_name(params, decomposition))
    }

    /// Load a cached spectrum; any mismatch or corruption falls back to
    /// recomputation by returning None.
    pub fn load(
        &self,
        params: &DickeParams,
        decomposition: Decomposition,
    ) -> Option<LabeledSpectrum> {
        let path = self.path_for(params, decomposition);
        let bytes = fs::read(path).ok()?;
        parse_spectrum(&bytes)
    }

    pub fn store(
        &self,
        params: &DickeParams,
        decomposition: Decomposition,
        spec: &LabeledSpectrum,
    ) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path_for(params, decomposition);
        let tmp = path.with_extension("bin.tmp");
        {
            let file = fs::File::create(&tmp)?;
            let mut out = io::BufWriter::new(file);
            write_spectrum(&mut out, spec)?;
            out.flush()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

fn write_spectrum(out: &mut impl Write, spec: &LabeledSpectrum) -> io::Result<()> {
    let dim = spec.dim();
    let v = spec.eigenvectors();
    let real = v.iter().all(|z| z.im == 0.0);
    out.write_all(MAGIC)?;
    out.write_all(&[u8::from(!real), spec.charges().len() as u8])?;
    out.write_all(&(dim as u64).to_le_bytes())?;
    for &e in spec.energies() {
        out.write_all(&e.to_le_bytes())?;
    }
    for &s in spec.sector_of() {
        out.write_all(&s.to_le_bytes())?;
    }
    for charge in spec.charges() {
        let id = charge.id.0.as_bytes();
        out.write_all(&(id.len() as u16).to_le_bytes())?;
        out.write_all(id)?;
        for &m in &charge.values {
            out.write_all(&m.to_le_bytes())?;
        }
    }
    for col in 0..dim {
        for row in 0..dim {
            let z = v[(row, col)];
            out.write_all(&z.re.to_le_bytes())?;
            if !real {
                out.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.bytes.len() < n {
            return None;
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Some(head)
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn i64(&mut self) -> Option<i64> {
        Some(i64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn u16(&mut self) -> Option<u16> {
        Some(u16::from_le_bytes(self.take(2)?.try_into().ok()?))
    }
}

fn parse_spectrum(bytes: &[u8]) -> Option<LabeledSpectrum> {
    let mut r = Reader { bytes };
    if r.take(MAGIC.len())? != MAGIC {
        return None;
    }
    let flags = r.take(2)?;
    let complex = flags[0] != 0;
    let n_charges = flags[1] as usize;
    let dim = r.u64()? as usize;

    let mut energies = Vec::with_capacity(dim);
    for _ in 0..dim {
        energies.push(r.f64()?);
    }
    let mut sector_of = Vec::with_capacity(dim);
    for _ in 0..dim {
        sector_of.push(r.i64()?);
    }
    let mut charges = Vec::with_capacity(n_charges);
    for _ in 0..n_charges {
        let id_len = r.u16()? as usize;
        let id = String::from_utf8(r.take(id_len)?.to_vec()).ok()?;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(r.i64()?);
        }
        charges.push(ChargeLabels { id: ChargeId(id), values });
    }
    let mut eigenvectors = Array2::<Complex64>::zeros((dim, dim));
    for col in 0..dim {
        for row in 0..dim {
            let re = r.f64()?;
            let im = if complex { r.f64()? } else { 0.0 };
            eigenvectors[(row, col)] = Complex64::new(re, im);
        }
    }
    if !r.bytes.is_empty() {
        return None;
    }
    Some(LabeledSpectrum::from_parts(
        energies,
        eigenvectors,
        charges,
        sector_of,
    ))
}
