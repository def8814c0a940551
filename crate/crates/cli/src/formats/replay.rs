//! Recorded velocity predictions: `"RFRV"`, version, then iteration count,
//! batch size and latent length as `u32`, then one `f32` record per
//! (iteration, slot) in iteration-major order.

use std::sync::Mutex;

use fenwarp_core::distill::{cfg_combine, noisy, GuidanceOracle, OracleCall};
use fenwarp_core::{Error, Result as CoreResult};

use super::binary::{Reader, Writer};
use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"RFRV";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub iterations: usize,
    pub batch: usize,
    pub len: usize,
    pub data: Vec<f32>,
}

impl Replay {
    pub fn zeros(iterations: usize, batch: usize, len: usize) -> Replay {
        Replay {
            iterations,
            batch,
            len,
            data: vec![0.0; iterations * batch * len],
        }
    }

    /// Offset of the record for 1-based `iteration` and `slot`.
    pub fn record_start(&self, iteration: usize, slot: usize) -> Option<usize> {
        if iteration == 0 || iteration > self.iterations || slot >= self.batch {
            return None;
        }
        Some(((iteration - 1) * self.batch + slot) * self.len)
    }

    pub fn record(&self, iteration: usize, slot: usize) -> Option<&[f32]> {
        self.record_start(iteration, slot).map(|s| &self.data[s..s + self.len])
    }
}

pub fn encode(r: &Replay) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.len(r.iterations);
    w.len(r.batch);
    w.len(r.len);
    for &v in &r.data {
        w.f32(v);
    }
    w.into_inner()
}

pub fn decode(bytes: &[u8]) -> Result<Replay, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let (iterations, batch, len) = (r.usize()?, r.usize()?, r.usize()?);
    let n = iterations
        .checked_mul(batch)
        .and_then(|v| v.checked_mul(len))
        .ok_or_else(|| FormatError::new("record count overflows"))?;
    if r.remaining() != 4 * n {
        return Err(FormatError::new(format!(
            "header declares {iterations} x {batch} x {len} records ({} bytes) but payload is {} bytes",
            4 * n,
            r.remaining()
        )));
    }
    let data = r.f32s(n)?;
    r.finish()?;
    Ok(Replay {
        iterations,
        batch,
        len,
        data,
    })
}

/// Serves each recorded prediction exactly once, keyed by (iteration, slot).
pub struct ReplayOracle {
    replay: Replay,
    served: Mutex<Vec<bool>>,
}

impl ReplayOracle {
    pub fn new(replay: Replay) -> ReplayOracle {
        let n = replay.iterations * replay.batch;
        ReplayOracle {
            replay,
            served: Mutex::new(vec![false; n]),
        }
    }

    pub fn replay(&self) -> &Replay {
        &self.replay
    }

    /// Checks that the file covers a run of `iterations` steps with `batch`
    /// slots over a latent of length `len`.
    pub fn check_shape(&self, iterations: usize, batch: usize, len: usize) -> Result<(), String> {
        let r = &self.replay;
        if r.len != len {
            return Err(format!("replay latent length {} does not match scene latent length {len}", r.len));
        }
        if r.batch != batch {
            return Err(format!("replay batch {} does not match configured batch {batch}", r.batch));
        }
        if r.iterations < iterations {
            return Err(format!("replay holds {} iterations, run needs {iterations}", r.iterations));
        }
        Ok(())
    }
}

impl GuidanceOracle for ReplayOracle {
    fn velocity(&self, x: &[f64], _tau: f64, call: &OracleCall) -> CoreResult<Vec<f64>> {
        let r = &self.replay;
        if x.len() != r.len {
            return Err(Error::ShapeMismatch {
                expected: r.len,
                found: x.len(),
            });
        }
        let start = r.record_start(call.iteration, call.slot).ok_or_else(|| {
            Error::Oracle(format!(
                "replay exhausted: no record for iteration {} slot {}",
                call.iteration, call.slot
            ))
        })?;
        let key = (call.iteration - 1) * r.batch + call.slot;
        let mut served = self.served.lock().unwrap_or_else(|e| e.into_inner());
        if served[key] {
            return Err(Error::Oracle(format!(
                "replay record for iteration {} slot {} already consumed",
                call.iteration, call.slot
            )));
        }
        served[key] = true;
        Ok(r.data[start..start + r.len].iter().map(|&v| v as f64).collect())
    }
}

/// Wraps an oracle and keeps its guided predictions, rounded to `f32` as
/// they will be stored, so a replay reproduces the recorded run exactly.
pub struct RecordingOracle<'a, O: GuidanceOracle + ?Sized> {
    inner: &'a O,
    replay: Mutex<Replay>,
}

impl<'a, O: GuidanceOracle + ?Sized> RecordingOracle<'a, O> {
    pub fn new(inner: &'a O, iterations: usize, batch: usize, len: usize) -> Self {
        RecordingOracle {
            inner,
            replay: Mutex::new(Replay::zeros(iterations, batch, len)),
        }
    }

    pub fn into_replay(self) -> Replay {
        self.replay.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl<O: GuidanceOracle + ?Sized> GuidanceOracle for RecordingOracle<'_, O> {
    fn velocity(&self, x: &[f64], tau: f64, call: &OracleCall) -> CoreResult<Vec<f64>> {
        self.inner.velocity(x, tau, call)
    }

    fn residual(&self, z: &[f64], tau: f64, eps: &[f64], call: &OracleCall, cfg_scale: f64) -> CoreResult<Vec<f64>> {
        let x = noisy(z, tau, eps)?;
        let mut v = self.inner.velocity(&x, tau, call)?;
        if let Some(u) = self.inner.unconditional(&x, tau, call)? {
            v = cfg_combine(&v, &u, cfg_scale)?;
        }
        let mut rep = self.replay.lock().unwrap_or_else(|e| e.into_inner());
        if v.len() != rep.len {
            return Err(Error::ShapeMismatch {
                expected: rep.len,
                found: v.len(),
            });
        }
        let start = rep
            .record_start(call.iteration, call.slot)
            .ok_or_else(|| Error::Oracle(format!("no room to record iteration {} slot {}", call.iteration, call.slot)))?;
        for (d, s) in rep.data[start..start + v.len()].iter_mut().zip(&v) {
            *d = *s as f32;
        }
        Ok(v.iter()
            .zip(eps)
            .zip(z)
            .map(|((v, e), z)| (*v as f32) as f64 - e + z)
            .collect())
    }
}
