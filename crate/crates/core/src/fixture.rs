//! Cross-implementation problem fixtures and CSV trace exports.
//!
//! Binary layout (all integers `u64`, all reals `f64`, little-endian):
//!
//! | field            | type          |
//! |------------------|---------------|
//! | magic `b"SBLP"`  | 4 bytes       |
//! | version (= 1)    | `u32`         |
//! | kind (0 SMV, 1 MMV) | `u32`      |
//! | M, N, T, K       | `u64` each    |
//! | sigma2, beta     | `f64` each    |
//! | A                | M·N, row-major |
//! | Y                | T·M, frame-major |
//! | X (ground truth) | T·N, frame-major |
//! | support          | K × `u64`     |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::em_sbl::TraceRow;
use crate::error::{Error, Result};
use crate::matgen::{MmvProblem, SmvProblem};

const MAGIC: &[u8; 4] = b"SBLP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Smv,
    Mmv,
}

/// A problem instance in container form. SMV problems have one frame and
/// `beta = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemFixture {
    pub kind: FixtureKind,
    pub a: DMatrix<f64>,
    pub y: Vec<DVector<f64>>,
    pub x_true: Vec<DVector<f64>>,
    pub sigma2: f64,
    pub beta: f64,
    pub support: Vec<usize>,
}

impl From<&SmvProblem> for ProblemFixture {
    fn from(p: &SmvProblem) -> Self {
        Self {
            kind: FixtureKind::Smv,
            a: p.a.clone(),
            y: vec![p.y.clone()],
            x_true: vec![p.x_true.clone()],
            sigma2: p.sigma2,
            beta: 0.0,
            support: p.support.clone(),
        }
    }
}

impl From<&MmvProblem> for ProblemFixture {
    fn from(p: &MmvProblem) -> Self {
        Self {
            kind: FixtureKind::Mmv,
            a: p.a.clone(),
            y: p.y.clone(),
            x_true: p.x_true.clone(),
            sigma2: p.sigma2,
            beta: p.beta,
            support: p.support.clone(),
        }
    }
}

impl ProblemFixture {
    pub fn into_smv(self) -> Result<SmvProblem> {
        if self.kind != FixtureKind::Smv {
            return Err(Error::Format("fixture holds an MMV problem".into()));
        }
        let mut y = self.y;
        let mut x = self.x_true;
        Ok(SmvProblem {
            a: self.a,
            y: y.remove(0),
            x_true: x.remove(0),
            sigma2: self.sigma2,
            support: self.support,
        })
    }

    /// Convert to an MMV problem; the per-row variances are not stored and
    /// come back as 1 on the support.
    pub fn into_mmv(self) -> Result<MmvProblem> {
        let n = self.a.ncols();
        let mut gamma_true = DVector::zeros(n);
        for &i in &self.support {
            gamma_true[i] = 1.0;
        }
        Ok(MmvProblem {
            a: self.a,
            y: self.y,
            x_true: self.x_true,
            sigma2: self.sigma2,
            beta: self.beta,
            support: self.support,
            gamma_true,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (m, n) = self.a.shape();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let kind: u32 = match self.kind {
            FixtureKind::Smv => 0,
            FixtureKind::Mmv => 1,
        };
        w.write_all(&kind.to_le_bytes())?;
        for v in [m, n, self.y.len(), self.support.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.sigma2.to_le_bytes())?;
        w.write_all(&self.beta.to_le_bytes())?;
        for i in 0..m {
            for j in 0..n {
                w.write_all(&self.a[(i, j)].to_le_bytes())?;
            }
        }
        for v in self.y.iter().chain(&self.x_true) {
            for x in v.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        for &s in &self.support {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = match read_u32(&mut r)? {
            0 => FixtureKind::Smv,
            1 => FixtureKind::Mmv,
            k => return Err(Error::Format(format!("unknown kind {k}"))),
        };
        let m = read_len(&mut r)?;
        let n = read_len(&mut r)?;
        let frames = read_len(&mut r)?;
        let k = read_len(&mut r)?;
        if frames == 0 || (kind == FixtureKind::Smv && frames != 1) || k > n {
            return Err(Error::Format(format!(
                "inconsistent header T={frames}, K={k}, N={n}"
            )));
        }
        let sigma2 = read_f64(&mut r)?;
        let beta = read_f64(&mut r)?;
        let a_rows = read_f64s(&mut r, m * n)?;
        let a = DMatrix::from_row_slice(m, n, &a_rows);
        let y = (0..frames)
            .map(|_| read_f64s(&mut r, m).map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        let x_true = (0..frames)
            .map(|_| read_f64s(&mut r, n).map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        let support = (0..k)
            .map(|_| read_len(&mut r))
            .collect::<Result<Vec<_>>>()?;
        if support.iter().any(|&s| s >= n) {
            return Err(Error::Format("support index out of range".into()));
        }
        Ok(Self {
            kind,
            a,
            y,
            x_true,
            sigma2,
            beta,
            support,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    usize::try_from(u64::from_le_bytes(b))
        .map_err(|_| Error::Format("length overflows usize".into()))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    (0..count).map(|_| read_f64(r)).collect()
}

/// Write an EM trace as CSV with columns `em_iter,chi,nmse,elapsed_seconds`;
/// missing values are left empty.
pub fn write_em_trace_csv<W: Write>(w: W, rows: &[TraceRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["em_iter", "chi", "nmse", "elapsed_seconds"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        out.write_record([
            row.em_iter.to_string(),
            opt(row.chi),
            opt(row.nmse_db),
            row.elapsed_seconds.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Write per-frame NMSE as CSV rows `frame,nmse_db` (frames numbered from 1)
/// followed by an aggregate row `tnmse,<value>`.
pub fn write_frame_nmse_csv<W: Write>(w: W, frame_nmse_db: &[f64], tnmse_db: f64) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["frame", "nmse_db"])?;
    for (t, v) in frame_nmse_db.iter().enumerate() {
        out.write_record([(t + 1).to_string(), v.to_string()])?;
    }
    out.write_record(["tnmse".to_string(), tnmse_db.to_string()])?;
    out.flush()?;
    Ok(())
}
