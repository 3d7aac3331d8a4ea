//! Binary operator cache.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "TFLD" | version u32 | d u64 | modes u64 | n_total_max u64 | fock dim u64
//! | β f64 | λ f64 | grid hash [8] | model hash [8] | count u32
//! count × ( rows u64 | cols u64 | nnz u64 | hermitian u8
//!           | indptr u64×(rows+1) | indices u64×nnz | (re f64, im f64)×nnz )
//! | sha256 of everything above [32]
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fock::{enumerate_basis, BathGrid};
use crate::liouvillian::{assemble, LiouvillianBundle};
use crate::model::ModelSpec;
use crate::operator::{OperatorMatrix, C64};

pub const MAGIC: &[u8; 4] = b"TFLD";
pub const FORMAT_VERSION: u32 = 1;
pub const CACHE_DIR_ENV: &str = "THERMOFIELD_CACHE_DIR";

/// Hash of everything in the spec that enters the operators.
pub fn model_hash(spec: &ModelSpec) -> [u8; 8] {
    let mut h = Sha256::new();
    for e in &spec.atom.energies {
        h.update(e.to_le_bytes());
    }
    h.update(spec.glue_phase().to_le_bytes());
    for c in &spec.couplings {
        for z in c.g.iter() {
            h.update(z.re.to_le_bytes());
            h.update(z.im.to_le_bytes());
        }
        h.update(serde_json::to_vec(&c.ff).unwrap_or_default());
    }
    let d = h.finalize();
    let mut out = [0u8; 8];
    out.copy_from_slice(&d[..8]);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheHeader {
    pub version: u32,
    pub d: u64,
    pub modes: u64,
    pub n_total_max: u64,
    pub fock_dim: u64,
    pub beta: f64,
    pub lambda: f64,
    pub grid_hash: [u8; 8],
    pub model_hash: [u8; 8],
}

impl CacheHeader {
    pub fn of(bundle: &LiouvillianBundle) -> Self {
        Self {
            version: FORMAT_VERSION,
            d: bundle.spec.dim() as u64,
            modes: bundle.grid.len() as u64,
            n_total_max: bundle.basis.n_total_max() as u64,
            fock_dim: bundle.basis.dim() as u64,
            beta: bundle.spec.beta,
            lambda: bundle.spec.lambda,
            grid_hash: bundle.grid.hash(),
            model_hash: model_hash(&bundle.spec),
        }
    }

    /// Equality with `β`, `λ` compared bitwise.
    pub fn matches(&self, other: &CacheHeader) -> bool {
        self.version == other.version
            && self.d == other.d
            && self.modes == other.modes
            && self.n_total_max == other.n_total_max
            && self.fock_dim == other.fock_dim
            && self.beta.to_bits() == other.beta.to_bits()
            && self.lambda.to_bits() == other.lambda.to_bits()
            && self.grid_hash == other.grid_hash
            && self.model_hash == other.model_hash
    }
}

fn operators(b: &LiouvillianBundle) -> [&OperatorMatrix; 5] {
    [&b.l0, &b.i, &b.i_ell, &b.i1, &b.n]
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

pub fn encode(bundle: &LiouvillianBundle) -> Vec<u8> {
    let h = CacheHeader::of(bundle);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&h.version.to_le_bytes());
    for x in [h.d, h.modes, h.n_total_max, h.fock_dim] {
        put_u64(&mut buf, x);
    }
    buf.extend_from_slice(&h.beta.to_le_bytes());
    buf.extend_from_slice(&h.lambda.to_le_bytes());
    buf.extend_from_slice(&h.grid_hash);
    buf.extend_from_slice(&h.model_hash);
    let ops = operators(bundle);
    buf.extend_from_slice(&(ops.len() as u32).to_le_bytes());
    for op in ops {
        put_u64(&mut buf, op.rows() as u64);
        put_u64(&mut buf, op.cols() as u64);
        put_u64(&mut buf, op.nnz() as u64);
        buf.push(op.is_hermitian() as u8);
        for &p in op.indptr() {
            put_u64(&mut buf, p as u64);
        }
        for &c in op.indices() {
            put_u64(&mut buf, c as u64);
        }
        for z in op.values() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CacheCorrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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

    fn hash8(&mut self) -> Result<[u8; 8]> {
        Ok(self.take(8)?.try_into().unwrap())
    }

    fn usize_bounded(&mut self, limit: usize, what: &str) -> Result<usize> {
        let x = self.u64()?;
        if x > limit as u64 {
            return Err(Error::CacheCorrupt(format!("{what} = {x} exceeds the payload")));
        }
        Ok(x as usize)
    }
}

/// Checks magic, version and checksum, then decodes header and operators.
pub fn decode(data: &[u8]) -> Result<(CacheHeader, Vec<OperatorMatrix>)> {
    if data.len() < 4 + 4 + 32 || &data[..4] != MAGIC {
        return Err(Error::CacheCorrupt("missing TFLD magic".into()));
    }
    let version = u32::from_le_bytes(data[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::CacheVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, tail) = data.split_at(data.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != tail {
        return Err(Error::CacheCorrupt(format!(
            "sha256 mismatch: stored {}, computed {}",
            hex(tail),
            hex(digest.as_slice())
        )));
    }
    let mut r = Reader { data: body, pos: 8 };
    let header = CacheHeader {
        version,
        d: r.u64()?,
        modes: r.u64()?,
        n_total_max: r.u64()?,
        fock_dim: r.u64()?,
        beta: r.f64()?,
        lambda: r.f64()?,
        grid_hash: r.hash8()?,
        model_hash: r.hash8()?,
    };
    let count = r.u32()? as usize;
    let limit = body.len();
    let mut ops = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let rows = r.usize_bounded(limit, "rows")?;
        let cols = r.usize_bounded(limit, "cols")?;
        let nnz = r.usize_bounded(limit, "nnz")?;
        let herm = r.take(1)?[0] != 0;
        let indptr = (0..=rows).map(|_| r.u64().map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
        let indices = (0..nnz).map(|_| r.u64().map(|x| x as usize)).collect::<Result<Vec<_>>>()?;
        let values = (0..nnz)
            .map(|_| Ok(C64::new(r.f64()?, r.f64()?)))
            .collect::<Result<Vec<_>>>()?;
        let op = OperatorMatrix::from_csr(rows, cols, indptr, indices, values, herm)
            .map_err(|e| Error::CacheCorrupt(e.to_string()))?;
        ops.push(op);
    }
    if r.pos != body.len() {
        return Err(Error::CacheCorrupt(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok((header, ops))
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

pub fn save(bundle: &LiouvillianBundle, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&encode(bundle))?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads operators for `spec` on `grid`; `Ok(None)` when the header does not
/// match (the caller rebuilds).
pub fn load(path: &Path, spec: &ModelSpec, grid: &BathGrid, n_total_max: usize) -> Result<Option<LiouvillianBundle>> {
    let data = fs::read(path)?;
    let (h, ops) = decode(&data)?;
    let basis = enumerate_basis(grid.len(), n_total_max)?;
    let expect = CacheHeader {
        version: FORMAT_VERSION,
        d: spec.dim() as u64,
        modes: grid.len() as u64,
        n_total_max: n_total_max as u64,
        fock_dim: basis.dim() as u64,
        beta: spec.beta,
        lambda: spec.lambda,
        grid_hash: grid.hash(),
        model_hash: model_hash(spec),
    };
    if !h.matches(&expect) {
        return Ok(None);
    }
    let [l0, i, i_ell, i1, n]: [OperatorMatrix; 5] = ops
        .try_into()
        .map_err(|v: Vec<OperatorMatrix>| Error::CacheCorrupt(format!("expected 5 operators, found {}", v.len())))?;
    let dim = spec.dim() * spec.dim() * basis.dim();
    if [&l0, &i, &i_ell, &i1, &n].iter().any(|o| o.rows() != dim || o.cols() != dim) {
        return Err(Error::CacheCorrupt("operator dimension disagrees with the header".into()));
    }
    Ok(Some(LiouvillianBundle {
        l0,
        i,
        i_ell,
        i1,
        n,
        spec: spec.clone(),
        basis,
        grid: grid.clone(),
    }))
}

/// Whether the bundle came from disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    Rebuilt,
}

impl CacheStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheStatus::Hit => "hit",
            CacheStatus::Miss => "miss",
            CacheStatus::Rebuilt => "rebuilt",
        }
    }
}

pub fn cache_dir(default: &Path) -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| default.to_path_buf())
}

pub fn cache_file(dir: &Path, spec: &ModelSpec, grid: &BathGrid, n_total_max: usize) -> PathBuf {
    let name = format!(
        "{}-{}-n{}-b{:016x}-l{:016x}.tfld",
        hex(&model_hash(spec)),
        hex(&grid.hash()),
        n_total_max,
        spec.beta.to_bits(),
        spec.lambda.to_bits()
    );
    dir.join(name)
}

/// Loads from `dir` when possible, otherwise assembles and stores. A stale,
/// corrupted or old-version file is rebuilt.
pub fn load_or_assemble(dir: &Path, spec: &ModelSpec, grid: &BathGrid, n_total_max: usize) -> Result<(LiouvillianBundle, CacheStatus, PathBuf)> {
    let path = cache_file(dir, spec, grid, n_total_max);
    let mut status = CacheStatus::Miss;
    if path.exists() {
        match load(&path, spec, grid, n_total_max) {
            Ok(Some(b)) => return Ok((b, CacheStatus::Hit, path)),
            Ok(None) | Err(Error::CacheCorrupt(_)) | Err(Error::CacheVersion { .. }) => status = CacheStatus::Rebuilt,
            Err(e) => return Err(e),
        }
    }
    let basis = enumerate_basis(grid.len(), n_total_max)?;
    let b = assemble(spec, &basis, grid)?;
    save(&b, &path)?;
    Ok((b, status, path))
}

fn bit_equal(a: &OperatorMatrix, b: &OperatorMatrix) -> bool {
    a.rows() == b.rows()
        && a.cols() == b.cols()
        && a.indptr() == b.indptr()
        && a.indices() == b.indices()
        && a.is_hermitian() == b.is_hermitian()
        && a.values().len() == b.values().len()
        && a.values().iter().zip(b.values()).all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits())
}

#[derive(Clone, Debug)]
pub struct CacheVerification {
    pub ok: bool,
    pub diagnostic: String,
}

/// Save, reload and compare bit by bit.
pub fn cache_roundtrip(bundle: &LiouvillianBundle, path: &Path) -> Result<CacheVerification> {
    save(bundle, path)?;
    Ok(verify_file(bundle, path))
}

/// Compares the file at `path` against `bundle`.
pub fn verify_file(bundle: &LiouvillianBundle, path: &Path) -> CacheVerification {
    let data = match fs::read(path) {
        Ok(d) => d,
        Err(e) => return CacheVerification { ok: false, diagnostic: e.to_string() },
    };
    match decode(&data) {
        Err(e) => CacheVerification {
            ok: false,
            diagnostic: e.to_string(),
        },
        Ok((h, ops)) => {
            if !h.matches(&CacheHeader::of(bundle)) {
                return CacheVerification {
                    ok: false,
                    diagnostic: "header differs from the bundle".into(),
                };
            }
            let same = ops.len() == 5 && operators(bundle).iter().zip(&ops).all(|(a, b)| bit_equal(a, b));
            CacheVerification {
                ok: same,
                diagnostic: if same { "bit-identical".into() } else { "operator payload differs".into() },
            }
        }
    }
}
