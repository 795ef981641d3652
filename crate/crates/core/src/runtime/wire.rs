//! Fixed-layout little-endian UDP packets.

use thiserror::Error;

pub const MAGIC: u32 = 0x4832_4446;
pub const VERSION: u16 = 1;
pub const STATE_TYPE: u16 = 1;
pub const ACTION_TYPE: u16 = 2;
pub const STATE_LEN: usize = 32;
pub const ACTION_LEN: usize = 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("packet length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("bad magic {0:#010x}")]
    Magic(u32),
    #[error("unsupported version {0}")]
    Version(u16),
    #[error("packet type {got}, expected {expected}")]
    Type { got: u16, expected: u16 },
    #[error("unknown status code {0}")]
    Status(u8),
}

/// Engine measurements and the current IMEP target, client to server.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatePacket {
    pub seq: u32,
    pub imep: f32,
    pub nox: f32,
    pub soot: f32,
    pub mprr: f32,
    pub reference: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    HeldLastAction = 1,
    Fault = 2,
}

impl TryFrom<u8> for Status {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        match v {
            0 => Ok(Status::Ok),
            1 => Ok(Status::HeldLastAction),
            2 => Ok(Status::Fault),
            other => Err(WireError::Status(other)),
        }
    }
}

/// Plant-space actions answering the state packet with the same `seq`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionPacket {
    pub seq: u32,
    /// `[doi_fuel, p2m, soi_fuel, doi_h2]` in `[0, 1]`.
    pub actions: [f32; 4],
    pub policy_id: u8,
    pub status: Status,
}

fn header(buf: &mut [u8], kind: u16, seq: u32) {
    buf[0..4].copy_from_slice(&MAGIC.to_le_bytes());
    buf[4..6].copy_from_slice(&VERSION.to_le_bytes());
    buf[6..8].copy_from_slice(&kind.to_le_bytes());
    buf[8..12].copy_from_slice(&seq.to_le_bytes());
}

fn check_header(buf: &[u8], expected_len: usize, kind: u16) -> Result<u32, WireError> {
    if buf.len() != expected_len {
        return Err(WireError::Length { got: buf.len(), expected: expected_len });
    }
    let magic = u32::from_le_bytes(buf[0..4].try_into().unwrap());
    if magic != MAGIC {
        return Err(WireError::Magic(magic));
    }
    let version = u16::from_le_bytes(buf[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(WireError::Version(version));
    }
    let got = u16::from_le_bytes(buf[6..8].try_into().unwrap());
    if got != kind {
        return Err(WireError::Type { got, expected: kind });
    }
    Ok(u32::from_le_bytes(buf[8..12].try_into().unwrap()))
}

fn f32_at(buf: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

impl StatePacket {
    pub fn encode(&self) -> [u8; STATE_LEN] {
        let mut b = [0u8; STATE_LEN];
        header(&mut b, STATE_TYPE, self.seq);
        for (k, v) in [self.imep, self.nox, self.soot, self.mprr, self.reference].iter().enumerate() {
            b[12 + 4 * k..16 + 4 * k].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let seq = check_header(buf, STATE_LEN, STATE_TYPE)?;
        Ok(Self {
            seq,
            imep: f32_at(buf, 12),
            nox: f32_at(buf, 16),
            soot: f32_at(buf, 20),
            mprr: f32_at(buf, 24),
            reference: f32_at(buf, 28),
        })
    }
}

impl ActionPacket {
    pub fn encode(&self) -> [u8; ACTION_LEN] {
        let mut b = [0u8; ACTION_LEN];
        header(&mut b, ACTION_TYPE, self.seq);
        for (k, v) in self.actions.iter().enumerate() {
            b[12 + 4 * k..16 + 4 * k].copy_from_slice(&v.to_le_bytes());
        }
        b[28] = self.policy_id;
        b[29] = self.status as u8;
        b
    }

    /// The two trailing pad bytes are not checked.
    pub fn decode(buf: &[u8]) -> Result<Self, WireError> {
        let seq = check_header(buf, ACTION_LEN, ACTION_TYPE)?;
        Ok(Self {
            seq,
            actions: core::array::from_fn(|k| f32_at(buf, 12 + 4 * k)),
            policy_id: buf[28],
            status: Status::try_from(buf[29])?,
        })
    }
}
