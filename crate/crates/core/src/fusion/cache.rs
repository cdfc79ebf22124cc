//! On-disk cache format for probability maps.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "FDAP"
//!      4     4  version (u32 LE)
//!      8     4  height  (u32 LE)
//!     12     4  width   (u32 LE)
//!     16     4  classes (u32 LE)
//!     20     1  normalized flag (0 or 1)
//!     21     1  codec id
//!     22        K planes, each: u64 LE payload length, then the payload
//! ```
//!
//! A decoded plane is `height × width` little-endian f64 values in row-major
//! order. The shuffle codec stores byte lane 0 of every value, then lane 1,
//! and so on before deflating, which groups the slowly varying exponent bytes
//! of smooth score planes together.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::bufread::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use super::ProbMap;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FDAP";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 22;

const IO_CHUNK: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[repr(u8)]
pub enum Codec {
    Raw = 0,
    Deflate = 1,
    #[default]
    ShuffleDeflate = 2,
}

impl Codec {
    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Codec> {
        match id {
            0 => Some(Codec::Raw),
            1 => Some(Codec::Deflate),
            2 => Some(Codec::ShuffleDeflate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbMapHeader {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub normalized: bool,
    pub codec: Codec,
}

impl ProbMapHeader {
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn map_bytes(&self) -> usize {
        super::map_bytes(self.height, self.width, self.classes)
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(&MAGIC);
        buf[4..8].copy_from_slice(&VERSION.to_le_bytes());
        buf[8..12].copy_from_slice(&(self.height as u32).to_le_bytes());
        buf[12..16].copy_from_slice(&(self.width as u32).to_le_bytes());
        buf[16..20].copy_from_slice(&(self.classes as u32).to_le_bytes());
        buf[20] = self.normalized as u8;
        buf[21] = self.codec.id();
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN]) -> Result<Self> {
        if buf[0..4] != MAGIC {
            return Err(Error::format("magic", format!("expected {MAGIC:?}, found {:?}", &buf[0..4])));
        }
        let word = |at: usize| u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as usize;
        let version = word(4) as u32;
        if version != VERSION {
            return Err(Error::format("version", format!("unsupported version {version}, expected {VERSION}")));
        }
        let (height, width, classes) = (word(8), word(12), word(16));
        if height == 0 {
            return Err(Error::format("height", "must be at least 1"));
        }
        if width == 0 {
            return Err(Error::format("width", "must be at least 1"));
        }
        if classes == 0 || classes > 255 {
            return Err(Error::format("classes", format!("{classes} is outside [1, 255]")));
        }
        height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(classes))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format("height", "map size overflows addressable memory"))?;
        let normalized = match buf[20] {
            0 => false,
            1 => true,
            other => return Err(Error::format("normalized", format!("flag byte {other} is not 0 or 1"))),
        };
        let codec = Codec::from_id(buf[21])
            .ok_or_else(|| Error::format("codec", format!("unknown codec id {}", buf[21])))?;
        Ok(ProbMapHeader {
            height,
            width,
            classes,
            normalized,
            codec,
        })
    }
}

fn io_err(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::format("payload", "file is truncated")
    } else {
        Error::format("payload", e.to_string())
    }
}

/// Sequential plane reader; lets callers consume a map one class plane at a
/// time without holding the whole map.
pub struct ProbMapReader<R> {
    header: ProbMapHeader,
    reader: R,
    next_plane: usize,
}

impl ProbMapReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(file))
    }
}

impl<R: BufRead> ProbMapReader<R> {
    pub fn new(mut reader: R) -> Result<Self> {
        let mut buf = [0u8; HEADER_LEN];
        reader.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => Error::format("header", "file shorter than the 22-byte header"),
            _ => Error::format("header", e.to_string()),
        })?;
        Ok(ProbMapReader {
            header: ProbMapHeader::decode(&buf)?,
            reader,
            next_plane: 0,
        })
    }

    pub fn header(&self) -> &ProbMapHeader {
        &self.header
    }

    pub fn planes_remaining(&self) -> usize {
        self.header.classes - self.next_plane
    }

    /// Decodes the next class plane into `dst`, which must hold `height × width`
    /// values. Scores are checked to be finite and nonnegative.
    pub fn read_plane_into(&mut self, dst: &mut [f64]) -> Result<()> {
        let n = self.header.plane_len();
        assert_eq!(dst.len(), n, "destination must hold exactly one plane");
        if self.next_plane >= self.header.classes {
            return Err(Error::format("payload", "all planes already read"));
        }
        let plane = self.next_plane;
        let mut len_buf = [0u8; 8];
        self.reader.read_exact(&mut len_buf).map_err(|_| {
            Error::format("plane length", format!("plane {plane}: length prefix is truncated"))
        })?;
        let payload_len = u64::from_le_bytes(len_buf);
        let raw_len = (n * 8) as u64;

        let mut limited = (&mut self.reader).take(payload_len);
        match self.header.codec {
            Codec::Raw => {
                if payload_len != raw_len {
                    return Err(Error::format(
                        "plane length",
                        format!("plane {plane}: raw payload of {payload_len} bytes, expected {raw_len}"),
                    ));
                }
                read_values(&mut limited, dst).map_err(|e| plane_err(plane, e))?;
            }
            Codec::Deflate => {
                let mut dec = ZlibDecoder::new(limited);
                read_values(&mut dec, dst).map_err(|e| plane_err(plane, e))?;
                expect_end(&mut dec, plane)?;
                limited = dec.into_inner();
            }
            Codec::ShuffleDeflate => {
                let mut dec = ZlibDecoder::new(limited);
                read_shuffled(&mut dec, dst).map_err(|e| plane_err(plane, e))?;
                expect_end(&mut dec, plane)?;
                limited = dec.into_inner();
            }
        }
        if limited.limit() != 0 {
            // Drain so the stream stays aligned, then report the mismatch.
            let left = limited.limit();
            io::copy(&mut limited, &mut io::sink()).ok();
            return Err(Error::format(
                "payload",
                format!("plane {plane}: {left} unused bytes after the compressed stream"),
            ));
        }
        if let Some(i) = dst.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::format(
                "scores",
                format!("plane {plane}: value {} at index {i} is negative or non-finite", dst[i]),
            ));
        }
        self.next_plane += 1;
        Ok(())
    }

    /// Confirms nothing follows the last plane.
    pub fn finish(mut self) -> Result<()> {
        if self.next_plane != self.header.classes {
            return Err(Error::format("payload", "not all planes were read"));
        }
        let mut probe = [0u8; 1];
        match self.reader.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::format("trailer", "unexpected bytes after the last plane")),
            Err(e) => Err(io_err(e)),
        }
    }
}

fn plane_err(plane: usize, e: io::Error) -> Error {
    let detail = if e.kind() == io::ErrorKind::UnexpectedEof {
        "payload is truncated".to_string()
    } else {
        e.to_string()
    };
    Error::format("plane payload", format!("plane {plane}: {detail}"))
}

fn expect_end<R: Read>(dec: &mut R, plane: usize) -> Result<()> {
    let mut probe = [0u8; 1];
    match dec.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::format(
            "plane payload",
            format!("plane {plane}: decompresses to more than one plane"),
        )),
        Err(e) => Err(plane_err(plane, e)),
    }
}

fn read_values<R: Read>(reader: &mut R, dst: &mut [f64]) -> io::Result<()> {
    let mut chunk = vec![0u8; IO_CHUNK];
    for block in dst.chunks_mut(IO_CHUNK / 8) {
        let bytes = &mut chunk[..block.len() * 8];
        reader.read_exact(bytes)?;
        for (v, b) in block.iter_mut().zip(bytes.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().unwrap());
        }
    }
    Ok(())
}

fn read_shuffled<R: Read>(reader: &mut R, dst: &mut [f64]) -> io::Result<()> {
    let n = dst.len();
    dst.fill(0.0);
    let mut chunk = vec![0u8; IO_CHUNK];
    let mut pos = 0;
    let total = n * 8;
    while pos < total {
        let take = IO_CHUNK.min(total - pos);
        reader.read_exact(&mut chunk[..take])?;
        for &b in &chunk[..take] {
            let (lane, i) = (pos / n, pos % n);
            dst[i] = f64::from_bits(dst[i].to_bits() | (u64::from(b) << (8 * lane)));
            pos += 1;
        }
    }
    Ok(())
}

pub fn read_header(path: &Path) -> Result<ProbMapHeader> {
    ProbMapReader::open(path).map(|r| r.header)
}

pub fn load_probmap(path: &Path) -> Result<ProbMap> {
    let mut reader = ProbMapReader::open(path)?;
    let h = reader.header;
    let n = h.plane_len();
    let mut scores = vec![0.0; n * h.classes];
    for plane in scores.chunks_exact_mut(n) {
        reader.read_plane_into(plane)?;
    }
    reader.finish()?;
    ProbMap::new(h.height, h.width, h.classes, scores, h.normalized).map_err(|e| match e {
        Error::Precondition(detail) => Error::format("normalized", detail),
        other => other,
    })
}

/// Writes `map` with the default codec and returns the file size in bytes.
pub fn store_probmap(map: &ProbMap, path: &Path) -> Result<u64> {
    store_probmap_with(map, path, Codec::default())
}

pub fn store_probmap_with(map: &ProbMap, path: &Path, codec: Codec) -> Result<u64> {
    let header = ProbMapHeader {
        height: map.height(),
        width: map.width(),
        classes: map.classes(),
        normalized: map.is_normalized(),
        codec,
    };
    if u32::try_from(map.height()).is_err() || u32::try_from(map.width()).is_err() {
        return Err(Error::Dimension("map dimensions exceed the u32 header fields".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write_err = |e: io::Error| Error::io(path, e);

    out.write_all(&header.encode()).map_err(write_err)?;
    let mut written = HEADER_LEN as u64;
    for k in 0..map.classes() {
        let payload = encode_plane(map.plane(k), codec).map_err(write_err)?;
        out.write_all(&(payload.len() as u64).to_le_bytes()).map_err(write_err)?;
        out.write_all(&payload).map_err(write_err)?;
        written += 8 + payload.len() as u64;
    }
    out.flush().map_err(write_err)?;
    Ok(written)
}

fn encode_plane(plane: &[f64], codec: Codec) -> io::Result<Vec<u8>> {
    let raw = |w: &mut dyn Write| -> io::Result<()> {
        for v in plane {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    match codec {
        Codec::Raw => {
            let mut buf = Vec::with_capacity(plane.len() * 8);
            raw(&mut buf)?;
            Ok(buf)
        }
        Codec::Deflate => {
            let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
            raw(&mut enc)?;
            enc.finish()
        }
        Codec::ShuffleDeflate => {
            let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
            let mut lane_buf = Vec::with_capacity(plane.len());
            for lane in 0..8 {
                lane_buf.clear();
                lane_buf.extend(plane.iter().map(|v| (v.to_bits() >> (8 * lane)) as u8));
                enc.write_all(&lane_buf)?;
            }
            enc.finish()
        }
    }
}
