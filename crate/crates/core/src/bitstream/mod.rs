//! Stream and frame serialization plus the end-to-end codec.
//!
//! A `.dcmp` container is a [`StreamHeader`] followed by [`FramePacket`]s.
//! All multi-byte integers are little-endian. See `docs/bitstream.md`.

pub mod codec;
mod rc;

pub use codec::{CodecConfig, CodecState, DecodedFrame, EncodedFrame, FrameStats, StreamDecoder, StreamEncoder};

use crate::adwt::BlockTransform;
use crate::error::{Error, Result};
use crate::prediction::Mode;
use crate::projection::ProjectionParams;

pub const MAGIC: [u8; 4] = *b"DCMP";
pub const VERSION: u8 = 1;
/// Header flag: frames were coded under rate control.
pub const FLAG_RATE_CONTROL: u8 = 1;
/// Packet header size: frame index, mode, payload size.
pub const PACKET_HEADER_BYTES: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct StreamHeader {
    pub version: u8,
    pub rate_control: bool,
    pub transform: BlockTransform,
    /// Reference of the log-scale step codes.
    pub q_min: f64,
    pub params: ProjectionParams,
}

impl StreamHeader {
    pub fn new(params: ProjectionParams, transform: BlockTransform, q_min: f64, rate_control: bool) -> Self {
        Self {
            version: VERSION,
            rate_control,
            transform,
            q_min,
            params,
        }
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.push(if self.rate_control { FLAG_RATE_CONTROL } else { 0 });
        out.push(self.transform.code());
        out.extend_from_slice(&self.q_min.to_le_bytes());
        let p = &self.params;
        out.extend_from_slice(&(p.rows as u32).to_le_bytes());
        out.extend_from_slice(&(p.cols as u32).to_le_bytes());
        for v in [p.elevation_min, p.elevation_max, p.range_max] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let table = p.row_elevations.as_deref().unwrap_or(&[]);
        out.extend_from_slice(&(table.len() as u32).to_le_bytes());
        for v in table {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out);
        out
    }

    pub fn read(r: &mut ByteReader) -> Result<Self> {
        if r.take(4)? != MAGIC {
            return Err(Error::corrupt("bad magic"));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::corrupt(format!("unsupported version {version}")));
        }
        let flags = r.u8()?;
        if flags & !FLAG_RATE_CONTROL != 0 {
            return Err(Error::corrupt(format!("unknown header flags {flags:#04x}")));
        }
        let transform = BlockTransform::from_code(r.u8()?).ok_or_else(|| Error::corrupt("unknown transform code"))?;
        let q_min = r.f64()?;
        if !(q_min > 0.0 && q_min.is_finite()) {
            return Err(Error::corrupt("step reference must be positive"));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let elevation_min = r.f64()?;
        let elevation_max = r.f64()?;
        let range_max = r.f64()?;
        let n = r.u32()? as usize;
        let row_elevations = if n == 0 {
            None
        } else {
            if n > r.remaining() / 8 {
                return Err(Error::corrupt("row table exceeds header"));
            }
            Some((0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?)
        };
        let params = ProjectionParams {
            rows,
            cols,
            elevation_min,
            elevation_max,
            range_max,
            row_elevations,
        };
        params
            .validate()
            .map_err(|e| Error::corrupt(format!("header projection: {e}")))?;
        Ok(Self {
            version,
            rate_control: flags & FLAG_RATE_CONTROL != 0,
            transform,
            q_min,
            params,
        })
    }
}

/// One coded frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePacket {
    pub frame_index: u32,
    pub mode: Mode,
    pub payload: Vec<u8>,
}

impl FramePacket {
    pub fn len(&self) -> usize {
        PACKET_HEADER_BYTES + self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.frame_index.to_le_bytes());
        out.push(match self.mode {
            Mode::Intra => 0,
            Mode::Inter => 1,
        });
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len());
        self.write(&mut out);
        out
    }

    pub fn read(r: &mut ByteReader) -> Result<Self> {
        let frame_index = r.u32()?;
        let mode = match r.u8()? {
            0 => Mode::Intra,
            1 => Mode::Inter,
            m => return Err(Error::corrupt(format!("unknown mode flag {m}"))),
        };
        let size = r.u32()? as usize;
        let payload = r.take(size)?.to_vec();
        Ok(Self {
            frame_index,
            mode,
            payload,
        })
    }
}

/// Splits concatenated packets.
pub fn split_packets(bytes: &[u8]) -> Result<Vec<FramePacket>> {
    let mut r = ByteReader::new(bytes);
    let mut out = Vec::new();
    while r.remaining() > 0 {
        out.push(FramePacket::read(&mut r)?);
    }
    Ok(out)
}

pub fn write_container(header: &StreamHeader, packets: &[FramePacket]) -> Vec<u8> {
    let mut out = header.to_bytes();
    for p in packets {
        p.write(&mut out);
    }
    out
}

pub fn read_container(bytes: &[u8]) -> Result<(StreamHeader, Vec<FramePacket>)> {
    let mut r = ByteReader::new(bytes);
    let header = StreamHeader::read(&mut r)?;
    let packets = split_packets(r.rest())?;
    Ok((header, packets))
}

/// Bounds-checked little-endian reader; running out of bytes is
/// `CorruptStream`.
#[derive(Debug)]
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::corrupt(format!("need {n} bytes, {} left", self.remaining())));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }

    /// A `u32` length followed by that many bytes.
    pub fn chunk(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn finish(&self) -> Result<()> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(Error::corrupt(format!("{n} trailing payload bytes"))),
        }
    }
}

pub(crate) fn put_chunk(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}
