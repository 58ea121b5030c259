use std::io::{Read, Write};

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{encode_dataset, CodingConfig};
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::matrix::Matrix;

const MAGIC: &[u8; 4] = b"LCCS";
const VERSION: u32 = 1;

/// Random masks drawn by one source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMasks {
    pub x: Vec<Matrix<BigUint>>,
    pub y: Vec<Matrix<BigUint>>,
}

/// Everything produced by the data-sharing phase.
///
/// `x[i][j]` is the feature share sent from source `i` to client `j`, and
/// likewise for `y`. Sources and clients are both indexed from 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareSet {
    pub field: FieldParams,
    pub x: Vec<Vec<Matrix<BigUint>>>,
    pub y: Vec<Vec<Matrix<BigUint>>>,
    pub masks: Vec<SourceMasks>,
}

/// The concatenated shares held by one client, with the row span each
/// source occupies.
#[derive(Debug, Clone)]
pub struct ClientShares {
    pub id: usize,
    pub x: Matrix<BigUint>,
    pub y: Matrix<BigUint>,
    pub spans: Vec<std::ops::Range<usize>>,
}

/// Splits `m` rows into `k` contiguous shards.
fn split_shards(m: &Matrix<BigUint>, k: usize) -> Vec<Matrix<BigUint>> {
    let per = m.rows() / k;
    (0..k).map(|s| m.slice_rows(s * per, (s + 1) * per)).collect()
}

impl ShareSet {
    /// Encodes every source's `(features, targets)` pair. Masks for source
    /// `i` come from stream `i` of a ChaCha generator keyed by `mask_seed`.
    pub fn encode(
        cfg: &CodingConfig,
        locals: &[(Matrix<BigUint>, Matrix<BigUint>)],
        mask_seed: u64,
    ) -> Result<Self> {
        let k = cfg.shards();
        let field = cfg.field().clone();
        for (i, (x, y)) in locals.iter().enumerate() {
            if x.rows() != y.rows() {
                return Err(Error::domain(format!("source {i}: feature/target row mismatch")));
            }
            if x.rows() == 0 || x.rows() % k != 0 {
                return Err(Error::domain(format!(
                    "source {i}: {} rows is not a positive multiple of K={k}",
                    x.rows()
                )));
            }
        }
        let encoded: Vec<_> = locals
            .par_iter()
            .enumerate()
            .map(|(i, (x, y))| {
                let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
                rng.set_stream(i as u64);
                let rows = x.rows() / k;
                let mut random = |cols: usize| -> Vec<Matrix<BigUint>> {
                    (0..cfg.privacy())
                        .map(|_| Matrix::from_fn(rows, cols, |_, _| field.random(&mut rng)))
                        .collect()
                };
                let masks = SourceMasks {
                    x: random(x.cols()),
                    y: random(y.cols()),
                };
                let sx = encode_dataset(&field, &split_shards(x, k), &masks.x, cfg.betas(), cfg.alphas())?;
                let sy = encode_dataset(&field, &split_shards(y, k), &masks.y, cfg.betas(), cfg.alphas())?;
                Ok((sx, sy, masks))
            })
            .collect::<Result<_>>()?;
        let mut set = ShareSet {
            field: cfg.field().clone(),
            x: Vec::new(),
            y: Vec::new(),
            masks: Vec::new(),
        };
        for (sx, sy, masks) in encoded {
            set.x.push(sx);
            set.y.push(sy);
            set.masks.push(masks);
        }
        Ok(set)
    }

    pub fn n_sources(&self) -> usize {
        self.x.len()
    }

    pub fn n_clients(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Stacks the shares received by client `j` in source order.
    pub fn client(&self, j: usize) -> Result<ClientShares> {
        let xs: Vec<Matrix<BigUint>> = self.x.iter().map(|s| s[j].clone()).collect();
        let ys: Vec<Matrix<BigUint>> = self.y.iter().map(|s| s[j].clone()).collect();
        let mut spans = Vec::with_capacity(xs.len());
        let mut start = 0;
        for m in &xs {
            spans.push(start..start + m.rows());
            start += m.rows();
        }
        Ok(ClientShares {
            id: j,
            x: Matrix::vstack(&xs)?,
            y: Matrix::vstack(&ys)?,
            spans,
        })
    }
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn put_big<W: Write>(w: &mut W, v: &BigUint) -> Result<()> {
    let bytes = v.to_bytes_le();
    put_u32(w, bytes.len())?;
    w.write_all(&bytes)?;
    Ok(())
}

fn get_big<R: Read>(r: &mut R) -> Result<BigUint> {
    let len = get_u32(r)?;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    Ok(BigUint::from_bytes_le(&bytes))
}

fn put_matrix<W: Write>(w: &mut W, m: &Matrix<BigUint>) -> Result<()> {
    put_u32(w, m.rows())?;
    put_u32(w, m.cols())?;
    m.data().iter().try_for_each(|v| put_big(w, v))
}

fn get_matrix<R: Read>(r: &mut R, field: &FieldParams) -> Result<Matrix<BigUint>> {
    let rows = get_u32(r)?;
    let cols = get_u32(r)?;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let v = get_big(r)?;
        if &v >= field.modulus() {
            return Err(Error::Format("residue not below modulus".into()));
        }
        data.push(v);
    }
    Matrix::from_vec(rows, cols, data)
}

/// Writes the shares (not the masks) as a length-prefixed binary record:
///
/// ```text
/// "LCCS" | u32 version | big modulus | u32 sources | u32 clients |
///   per (source, client): u32 source | u32 client | X matrix | Y matrix
/// matrix := u32 rows | u32 cols | rows*cols big
/// big    := u32 byte length | little-endian magnitude bytes
/// ```
pub fn write_shares<W: Write>(w: &mut W, set: &ShareSet) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    put_big(w, set.field.modulus())?;
    put_u32(w, set.n_sources())?;
    put_u32(w, set.n_clients())?;
    for (i, (xs, ys)) in set.x.iter().zip(&set.y).enumerate() {
        for (j, (x, y)) in xs.iter().zip(ys).enumerate() {
            put_u32(w, i)?;
            put_u32(w, j)?;
            put_matrix(w, x)?;
            put_matrix(w, y)?;
        }
    }
    Ok(())
}

/// Reads a record written by [`write_shares`]. Masks are not part of the
/// record and come back empty.
pub fn read_shares<R: Read>(r: &mut R) -> Result<ShareSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let field = FieldParams::new(get_big(r)?)?;
    let n_sources = get_u32(r)?;
    let n_clients = get_u32(r)?;
    let mut x = vec![Vec::with_capacity(n_clients); n_sources];
    let mut y = vec![Vec::with_capacity(n_clients); n_sources];
    for i in 0..n_sources {
        for j in 0..n_clients {
            let (si, cj) = (get_u32(r)?, get_u32(r)?);
            if (si, cj) != (i, j) {
                return Err(Error::Format(format!("expected record ({i},{j}), found ({si},{cj})")));
            }
            x[i].push(get_matrix(r, &field)?);
            y[i].push(get_matrix(r, &field)?);
        }
    }
    Ok(ShareSet {
        field,
        x,
        y,
        masks: Vec::new(),
    })
}
