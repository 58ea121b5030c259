use std::io::Write;

use super::{RoundRecord, Seeds};
use crate::error::Result;

/// Run parameters echoed as `#` comment lines above the CSV table.
#[derive(Debug, Clone)]
pub struct MetricsHeader {
    pub scale_bits: u32,
    pub shift: f64,
    pub seeds: Seeds,
}

/// Writes the header comments, then
/// `t,survivors,skipped,grad_norm,train_loss,test_acc`, one row per round.
pub fn write_metrics<W: Write>(w: W, header: &MetricsHeader, records: &[RoundRecord]) -> Result<()> {
    let mut w = w;
    let s = header.seeds;
    writeln!(w, "# l={} c={}", header.scale_bits, header.shift)?;
    writeln!(
        w,
        "# seeds sampling={} masks={} dropout={} quantization={} init={}",
        s.sampling, s.masks, s.dropout, s.quantization, s.init
    )?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["t", "survivors", "skipped", "grad_norm", "train_loss", "test_acc"])?;
    for r in records {
        csv.write_record([
            r.t.to_string(),
            r.survivors.len().to_string(),
            u8::from(r.skipped).to_string(),
            r.grad_norm.to_string(),
            r.train_loss.to_string(),
            r.test_acc.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
