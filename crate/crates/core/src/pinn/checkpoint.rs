use std::io::{BufRead, Write};

use num_bigint::{BigInt, Sign};

use super::{PinnArch, PinnModel};
use crate::error::{Error, Result};
use crate::field::FieldParams;

const HEADER: &str = "pinn-checkpoint v1";

/// Writes a text header (format tag, modulus expression, layer widths,
/// parameter count, blank line) followed by one binary record per signed
/// parameter: sign byte (0 = zero, 1 = positive, 2 = negative), u32 byte
/// length, little-endian magnitude.
pub fn write_checkpoint<W: Write>(w: &mut W, model: &PinnModel<FieldParams>) -> Result<()> {
    let field = model.carrier();
    let dims: Vec<String> = model.arch().layer_dims().iter().map(ToString::to_string).collect();
    writeln!(w, "{HEADER}")?;
    writeln!(w, "modulus {}", field.expr())?;
    writeln!(w, "layer_dims {}", dims.join(" "))?;
    writeln!(w, "params {}", model.arch().param_count())?;
    writeln!(w)?;
    for p in model.to_flat() {
        let z = field.to_signed(&p);
        let (sign, mag) = z.to_bytes_le();
        let tag: u8 = match sign {
            Sign::NoSign => 0,
            Sign::Plus => 1,
            Sign::Minus => 2,
        };
        w.write_all(&[tag])?;
        w.write_all(&(mag.len() as u32).to_le_bytes())?;
        w.write_all(&mag)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(r: &mut R) -> Result<PinnModel<FieldParams>> {
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String> {
        line.clear();
        r.read_line(&mut line)?;
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(r)? != HEADER {
        return Err(Error::Format("not a checkpoint".into()));
    }
    let field_line = next_line(r)?;
    let expr = field_line
        .strip_prefix("modulus ")
        .ok_or_else(|| Error::Format("missing modulus line".into()))?;
    let field = FieldParams::parse(expr)?;
    let dims_line = next_line(r)?;
    let dims = dims_line
        .strip_prefix("layer_dims ")
        .ok_or_else(|| Error::Format("missing layer_dims line".into()))?
        .split_whitespace()
        .map(|d| d.parse::<usize>().map_err(|e| Error::Format(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let arch = PinnArch::new(dims)?;
    let count_line = next_line(r)?;
    let count: usize = count_line
        .strip_prefix("params ")
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| Error::Format("missing params line".into()))?;
    if count != arch.param_count() {
        return Err(Error::Format(format!(
            "header claims {count} params, architecture has {}",
            arch.param_count()
        )));
    }
    if !next_line(r)?.is_empty() {
        return Err(Error::Format("expected blank line after header".into()));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let mut head = [0u8; 5];
        r.read_exact(&mut head)?;
        let len = u32::from_le_bytes([head[1], head[2], head[3], head[4]]) as usize;
        let mut mag = vec![0u8; len];
        r.read_exact(&mut mag)?;
        let sign = match head[0] {
            0 => Sign::NoSign,
            1 => Sign::Plus,
            2 => Sign::Minus,
            t => return Err(Error::Format(format!("bad sign tag {t}"))),
        };
        params.push(field.from_signed(&BigInt::from_bytes_le(sign, &mag))?);
    }
    PinnModel::from_flat(arch, field, params)
}
