//! Binary persistence of a trained solver.
//!
//! Little-endian layout: magic `FNS1`, `u32 n`, `u8` family tag, four `f64`
//! problem parameters (ξ, θ, ε, κ), `u8` smoother tag followed by its
//! parameters as `f64`, `(n-1)²` complex filter bins as interleaved
//! `(re, im)` pairs, then a `u32`-length-prefixed UTF-8 JSON metadata block.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{FnsError, Result};
use crate::problems::{Family, ProblemSpec};
use crate::smoothers::{ConvKernels, SmootherSpec, CONV_CHANNELS};
use crate::spectral::{FilterBasis, SpectralFilter};
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 4] = b"FNS1";

/// Training provenance stored with the checkpoint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub final_loss: Option<f64>,
    pub epochs: usize,
    pub seed: u64,
    pub config: Option<TrainConfig>,
}

#[derive(Serialize, Deserialize)]
struct MetaDoc {
    basis: FilterBasis,
    #[serde(flatten)]
    meta: TrainingMeta,
}

/// Everything the online solve needs: operator, Φ and ϑ.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub problem: ProblemSpec,
    pub filter: SpectralFilter,
    pub smoother: SmootherSpec,
    pub meta: TrainingMeta,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() < len {
            return Err(FnsError::Format("truncated checkpoint".into()));
        }
        let (head, tail) = self.buf.split_at(len);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn count(&mut self) -> Result<usize> {
        let v = self.f64()?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(FnsError::Format(format!("expected a count, found {v}")));
        }
        Ok(v as usize)
    }
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.filter.n() != self.problem.n {
            return Err(FnsError::ShapeMismatch {
                expected: self.problem.n,
                found: self.filter.n(),
            });
        }
        self.problem.validate()?;
        self.smoother.validate(&self.problem.stencil()?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let p = &self.problem;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(p.n as u32).to_le_bytes());
        out.push(p.family.tag());
        for v in [p.xi, p.theta, p.epsilon, p.kappa] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.smoother.tag());
        let params: Vec<f64> = match &self.smoother {
            SmootherSpec::WeightedJacobi { omega, sweeps } => vec![*omega, *sweeps as f64],
            SmootherSpec::Chebyshev {
                degree,
                alpha,
                lambda_max,
            } => vec![*degree as f64, *alpha, *lambda_max],
            SmootherSpec::LearnedConv(k) => k.to_flat(),
        };
        for v in params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in self.filter.coeffs() {
            out.extend_from_slice(&c.re.to_le_bytes());
            out.extend_from_slice(&c.im.to_le_bytes());
        }
        let doc = MetaDoc {
            basis: self.filter.basis(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&doc).map_err(|e| FnsError::Format(e.to_string()))?;
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != MAGIC {
            return Err(FnsError::Format("not a checkpoint (bad magic)".into()));
        }
        let n = r.u32()? as usize;
        if n < 2 {
            return Err(FnsError::Format(format!("invalid mesh size {n}")));
        }
        let family = Family::from_tag(r.u8()?)?;
        let (xi, theta, epsilon, kappa) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let problem = ProblemSpec {
            family,
            n,
            xi,
            theta,
            epsilon,
            kappa,
        };
        let smoother = match r.u8()? {
            0 => SmootherSpec::WeightedJacobi {
                omega: r.f64()?,
                sweeps: r.count()?,
            },
            1 => SmootherSpec::Chebyshev {
                degree: r.count()?,
                alpha: r.f64()?,
                lambda_max: r.f64()?,
            },
            2 => {
                let flat = (0..2 * CONV_CHANNELS * 9).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                SmootherSpec::learned(ConvKernels::from_flat(&flat)?)
            }
            t => return Err(FnsError::Format(format!("unknown smoother tag {t}"))),
        };
        let bins = (n - 1) * (n - 1);
        let mut coeffs = Vec::with_capacity(bins);
        for _ in 0..bins {
            coeffs.push(Complex64::new(r.f64()?, r.f64()?));
        }
        let len = r.u32()? as usize;
        let doc: MetaDoc = serde_json::from_slice(r.take(len)?).map_err(|e| FnsError::Format(e.to_string()))?;
        if !r.buf.is_empty() {
            return Err(FnsError::Format("trailing bytes after checkpoint".into()));
        }
        let checkpoint = Checkpoint {
            problem,
            filter: SpectralFilter::new(n, doc.basis, coeffs)?,
            smoother,
            meta: doc.meta,
        };
        checkpoint.validate()?;
        Ok(checkpoint)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut file = std::fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let n = 6;
        let coeffs = (0..25).map(|i| Complex64::new(i as f64 * 0.1, -(i as f64))).collect();
        Checkpoint {
            problem: ProblemSpec::anisotropic(1e-3, 0.5, n),
            filter: SpectralFilter::new(n, FilterBasis::Fourier, coeffs).unwrap(),
            smoother: SmootherSpec::learned(ConvKernels::random(0.01, 4)),
            meta: TrainingMeta {
                final_loss: Some(0.25),
                epochs: 3,
                seed: 9,
                config: Some(TrainConfig::default()),
            },
        }
    }

    #[test]
    fn roundtrip_all_smoothers() {
        let mut c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
        c.smoother = SmootherSpec::jacobi(0.8, 5);
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
        c.smoother = SmootherSpec::Chebyshev {
            degree: 10,
            alpha: 3.0,
            lambda_max: 7.9,
        };
        c.meta = TrainingMeta::default();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"FNS1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 6);
        assert_eq!(bytes[8], Family::Anisotropic.tag());
        assert_eq!(f64::from_le_bytes(bytes[9..17].try_into().unwrap()), 1e-3);
        assert_eq!(bytes[41], 2);
        let filter_start = 42 + 144 * 8;
        assert_eq!(f64::from_le_bytes(bytes[filter_start + 16..filter_start + 24].try_into().unwrap()), 0.1);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn mismatched_filter_is_rejected() {
        let mut c = sample();
        c.filter = SpectralFilter::zeros(8, FilterBasis::Fourier);
        assert!(c.to_bytes().is_err());
    }
}
