//! Iteration records and the binary replay log.
//!
//! Each completed iteration produces an [`IterationRecord`] holding, per
//! phase, the member seeds, the normalized weights that were applied, the
//! step size, reward statistics, and the parameter digest after the phase's
//! transition. Together with the run's sigma this is enough to re-apply the
//! iteration's float operations bit for bit; see [`crate::es::replay_record`].
//!
//! On disk a record is a little-endian, length-prefixed frame appended to
//! `replay.log`. Wall-clock timings are kept in memory for metrics but are
//! deliberately excluded from the frame so the log stays deterministic.

use std::io::{Read, Write};

use thiserror::Error;

use crate::noise::Seed;
use crate::params::ParamDigest;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("replay log frame is truncated or corrupt")]
    Truncated,
    #[error("replay log frame has invalid contents: {0}")]
    Invalid(String),
}

/// One evaluation-and-update phase of an iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRecord {
    /// Noise seeds of the population members, in member order.
    pub seeds: Vec<Seed>,
    /// Normalized rewards, the weights used in the decomposed update.
    pub weights: Vec<f64>,
    /// Step size applied with these weights at this phase's position in the
    /// update sequence: `-rho` for the probe phase, `alpha` for the update
    /// phase (the probe reversal `+rho` is implied).
    pub step: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub reward_max: f64,
    /// Parameter digest after this phase's transition completed.
    pub digest: ParamDigest,
    /// Measured wall time of the phase in milliseconds. Not serialized.
    pub wall_ms: f64,
}

/// A completed optimizer iteration. Vanilla ES (and the collapsed rho = 0
/// sharpness-aware step) has no probe phase.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub probe: Option<PhaseRecord>,
    pub update: PhaseRecord,
}

impl IterationRecord {
    pub fn post_digest(&self) -> ParamDigest {
        self.update.digest
    }

    /// Logical wire size in bytes of the synchronization content of this
    /// record (seeds, weights, steps, digests), the payload a socket
    /// transport would ship to replicas.
    pub fn sync_payload_len(&self) -> u64 {
        let phase_len = |p: &PhaseRecord| 4 + p.seeds.len() as u64 * 8 + p.weights.len() as u64 * 8 + 8 + 32;
        self.probe.as_ref().map_or(0, &phase_len) + phase_len(&self.update)
    }
}

fn put_phase(out: &mut Vec<u8>, phase: &PhaseRecord) {
    out.extend_from_slice(&(phase.seeds.len() as u32).to_le_bytes());
    for seed in &phase.seeds {
        out.extend_from_slice(&seed.0.to_le_bytes());
    }
    for w in &phase.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&phase.step.to_le_bytes());
    out.extend_from_slice(&phase.reward_mean.to_le_bytes());
    out.extend_from_slice(&phase.reward_std.to_le_bytes());
    out.extend_from_slice(&phase.reward_max.to_le_bytes());
    out.extend_from_slice(&phase.digest.0);
}

struct Frame<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Frame<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RecordError> {
        if self.pos + n > self.bytes.len() {
            return Err(RecordError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, RecordError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, RecordError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, RecordError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, RecordError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn phase(&mut self) -> Result<PhaseRecord, RecordError> {
        let n = self.u32()? as usize;
        if n == 0 {
            return Err(RecordError::Invalid("phase with zero members".into()));
        }
        let mut seeds = Vec::with_capacity(n);
        for _ in 0..n {
            seeds.push(Seed(self.u64()?));
        }
        let mut weights = Vec::with_capacity(n);
        for _ in 0..n {
            weights.push(self.f64()?);
        }
        let step = self.f64()?;
        let reward_mean = self.f64()?;
        let reward_std = self.f64()?;
        let reward_max = self.f64()?;
        let digest = ParamDigest(self.take(32)?.try_into().unwrap());
        Ok(PhaseRecord {
            seeds,
            weights,
            step,
            reward_mean,
            reward_std,
            reward_max,
            digest,
            wall_ms: 0.0,
        })
    }
}

/// Appends one length-prefixed frame.
pub fn write_record(out: &mut impl Write, record: &IterationRecord) -> Result<(), RecordError> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&record.iteration.to_le_bytes());
    payload.push(record.probe.is_some() as u8);
    if let Some(probe) = &record.probe {
        put_phase(&mut payload, probe);
    }
    put_phase(&mut payload, &record.update);
    out.write_all(&(payload.len() as u32).to_le_bytes())?;
    out.write_all(&payload)?;
    Ok(())
}

/// Reads the next frame, or `None` at a clean end of the log. A partial
/// frame (for example from a crashed writer) is reported as truncation.
pub fn read_record(input: &mut impl Read) -> Result<Option<IterationRecord>, RecordError> {
    let mut len_bytes = [0u8; 4];
    match input.read_exact(&mut len_bytes) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len_bytes) as usize;
    let mut payload = vec![0u8; len];
    input
        .read_exact(&mut payload)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => RecordError::Truncated,
            _ => RecordError::Io(e),
        })?;
    let mut frame = Frame {
        bytes: &payload,
        pos: 0,
    };
    let iteration = frame.u64()?;
    let flags = frame.u8()?;
    if flags > 1 {
        return Err(RecordError::Invalid(format!("unknown flags {flags}")));
    }
    let probe = if flags == 1 { Some(frame.phase()?) } else { None };
    let update = frame.phase()?;
    if frame.pos != payload.len() {
        return Err(RecordError::Invalid("trailing bytes in frame".into()));
    }
    Ok(Some(IterationRecord {
        iteration,
        probe,
        update,
    }))
}

/// Reads every frame of a replay log.
pub fn read_all(input: &mut impl Read) -> Result<Vec<IterationRecord>, RecordError> {
    let mut records = Vec::new();
    while let Some(record) = read_record(input)? {
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_phase(step: f64) -> PhaseRecord {
        PhaseRecord {
            seeds: vec![Seed(1), Seed(2), Seed(3)],
            weights: vec![0.5, -1.25, 0.75],
            step,
            reward_mean: 0.125,
            reward_std: 1.5,
            reward_max: 2.0,
            digest: ParamDigest([7u8; 32]),
            wall_ms: 0.0,
        }
    }

    #[test]
    fn frames_round_trip() {
        let records = vec![
            IterationRecord {
                iteration: 0,
                probe: Some(sample_phase(-1e-4)),
                update: sample_phase(2.5e-4),
            },
            IterationRecord {
                iteration: 1,
                probe: None,
                update: sample_phase(2.5e-4),
            },
        ];
        let mut bytes = Vec::new();
        for r in &records {
            write_record(&mut bytes, r).unwrap();
        }
        let parsed = read_all(&mut bytes.as_slice()).unwrap();
        assert_eq!(parsed, records);
    }

    #[test]
    fn partial_frames_are_truncation_errors() {
        let record = IterationRecord {
            iteration: 5,
            probe: None,
            update: sample_phase(0.1),
        };
        let mut bytes = Vec::new();
        write_record(&mut bytes, &record).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(
            read_record(&mut &cut[..]),
            Err(RecordError::Truncated)
        ));
    }

    #[test]
    fn sync_payload_is_population_sized() {
        let record = IterationRecord {
            iteration: 0,
            probe: Some(sample_phase(-0.1)),
            update: sample_phase(0.2),
        };
        // Two phases, each: count + 3 seeds + 3 weights + step + digest.
        let expected = 2 * (4 + 3 * 8 + 3 * 8 + 8 + 32);
        assert_eq!(record.sync_payload_len(), expected);
    }
}
