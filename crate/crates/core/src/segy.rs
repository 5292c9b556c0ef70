//! SEG-Y rev1 reader.
//!
//! Only what is needed to turn a post-stack 3D survey into a [`Volume3D`]:
//! the 3200-byte textual header (kept verbatim), three fields of the binary
//! header, and per-trace inline/crossline numbers. All header fields are
//! big-endian. Samples are 4-byte IBM floats (format 1) or IEEE floats
//! (format 5).

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::volume::{Dims, Volume3D, VolumeError};

pub const TEXT_HEADER_LEN: usize = 3200;
pub const BINARY_HEADER_LEN: usize = 400;
pub const TRACE_HEADER_LEN: usize = 240;
pub const FILE_HEADER_LEN: usize = TEXT_HEADER_LEN + BINARY_HEADER_LEN;

// 0-based offsets into the file
const SAMPLE_INTERVAL_AT: usize = 3216;
const SAMPLES_PER_TRACE_AT: usize = 3220;
const FORMAT_CODE_AT: usize = 3224;
const EXTENDED_HEADERS_AT: usize = 3504;
// 0-based offset into a trace header
const TRACE_SAMPLES_AT: usize = 114;

/// 1-based byte positions of the rev1 inline and crossline fields.
pub const DEFAULT_INLINE_BYTE: usize = 189;
pub const DEFAULT_XLINE_BYTE: usize = 193;

/// Samples above this magnitude are treated as corrupt and zeroed.
pub const ABSURD_AMPLITUDE: f32 = 1e30;

#[derive(Debug, Error)]
pub enum SegyError {
    #[error("truncated stream: {0}")]
    Truncated(String),
    #[error("unsupported data format code {0} (only 1 = IBM float and 5 = IEEE float are read)")]
    UnsupportedFormat(u16),
    #[error("binary header declares zero samples per trace")]
    NoSamples,
    #[error("trace {trace} declares {got} samples, binary header says {expected}")]
    TraceLength { trace: usize, got: u16, expected: u16 },
    #[error("header byte position {0} does not leave room for a 4-byte field in the trace header")]
    BadHeaderByte(usize),
    #[error("file holds no traces")]
    NoTraces,
    #[error("duplicate trace for inline {inline}, crossline {crossline}")]
    DuplicateTrace { inline: i32, crossline: i32 },
    #[error("incomplete grid: {missing} of {total} (inline, crossline) positions have no trace, first missing is {first:?}")]
    IncompleteGrid { missing: usize, total: usize, first: (i32, i32) },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    IbmFloat,
    IeeeFloat,
}

impl SampleFormat {
    pub fn code(&self) -> u16 {
        match self {
            SampleFormat::IbmFloat => 1,
            SampleFormat::IeeeFloat => 5,
        }
    }

    pub fn from_code(code: u16) -> Result<Self, SegyError> {
        match code {
            1 => Ok(SampleFormat::IbmFloat),
            5 => Ok(SampleFormat::IeeeFloat),
            other => Err(SegyError::UnsupportedFormat(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegyBinaryHeader {
    pub samples_per_trace: u16,
    pub sample_interval_us: u16,
    pub data_format_code: u16,
    pub extended_text_headers: u16,
}

impl SegyBinaryHeader {
    pub fn format(&self) -> SampleFormat {
        SampleFormat::from_code(self.data_format_code).expect("validated on parse")
    }

    pub fn trace_len(&self) -> usize {
        TRACE_HEADER_LEN + 4 * self.samples_per_trace as usize
    }

    fn data_start(&self) -> usize {
        FILE_HEADER_LEN + TEXT_HEADER_LEN * self.extended_text_headers as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceHeader {
    pub inline_no: i32,
    pub crossline_no: i32,
    pub num_samples: u16,
}

/// Where inline and crossline numbers live in each trace header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// 1-based byte of the 4-byte inline number.
    pub inline_byte: usize,
    /// 1-based byte of the 4-byte crossline number.
    pub xline_byte: usize,
    /// Zero-fill missing grid positions instead of failing.
    pub fill_missing: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { inline_byte: DEFAULT_INLINE_BYTE, xline_byte: DEFAULT_XLINE_BYTE, fill_missing: false }
    }
}

impl LoadOptions {
    fn check(&self) -> Result<(), SegyError> {
        for b in [self.inline_byte, self.xline_byte] {
            if b == 0 || b + 3 > TRACE_HEADER_LEN {
                return Err(SegyError::BadHeaderByte(b));
            }
        }
        Ok(())
    }
}

/// What happened during a load.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadReport {
    pub trace_count: usize,
    pub inline_range: (i32, i32),
    pub crossline_range: (i32, i32),
    pub samples_per_trace: usize,
    pub sample_interval_us: u16,
    pub format_code: u16,
    pub filled_traces: usize,
    pub zeroed_samples: usize,
}

#[inline]
fn be_u16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

#[inline]
fn be_i32(b: &[u8], at: usize) -> i32 {
    i32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// IBM System/360 single-precision float to IEEE `f32`, rounded to nearest.
pub fn ibm_to_ieee(word: u32) -> f32 {
    let fraction = word & 0x00ff_ffff;
    if fraction == 0 {
        return 0.0;
    }
    let sign = if word >> 31 == 1 { -1.0 } else { 1.0 };
    let exponent = ((word >> 24) & 0x7f) as i32;
    // 16^(e-64) * f / 2^24, exact in f64
    let magnitude = f64::from(fraction) * 2f64.powi(4 * (exponent - 64) - 24);
    (sign * magnitude) as f32
}

/// Nearest IBM float to `v`. Infinities and NaN saturate to the largest
/// IBM magnitude; values below the IBM range flush to zero.
pub fn ieee_to_ibm(v: f32) -> u32 {
    let sign: u32 = if v.is_sign_negative() { 0x8000_0000 } else { 0 };
    let mut mag = f64::from(v).abs();
    if mag == 0.0 {
        return sign;
    }
    if !mag.is_finite() {
        return sign | 0x7fff_ffff;
    }
    let mut exponent: i32 = 64;
    while mag >= 1.0 {
        mag /= 16.0;
        exponent += 1;
    }
    while mag < 1.0 / 16.0 {
        mag *= 16.0;
        exponent -= 1;
    }
    let mut fraction = (mag * 16_777_216.0).round() as u32;
    if fraction == 0x0100_0000 {
        fraction = 0x0010_0000;
        exponent += 1;
    }
    if exponent > 127 {
        return sign | 0x7fff_ffff;
    }
    if exponent < 0 {
        return sign;
    }
    sign | ((exponent as u32) << 24) | fraction
}

fn decode_sample(bytes: [u8; 4], format: SampleFormat) -> f32 {
    let word = u32::from_be_bytes(bytes);
    match format {
        SampleFormat::IbmFloat => ibm_to_ieee(word),
        SampleFormat::IeeeFloat => f32::from_bits(word),
    }
}

fn decode_binary_header(file_header: &[u8]) -> Result<SegyBinaryHeader, SegyError> {
    let h = SegyBinaryHeader {
        samples_per_trace: be_u16(file_header, SAMPLES_PER_TRACE_AT),
        sample_interval_us: be_u16(file_header, SAMPLE_INTERVAL_AT),
        data_format_code: be_u16(file_header, FORMAT_CODE_AT),
        extended_text_headers: be_u16(file_header, EXTENDED_HEADERS_AT),
    };
    SampleFormat::from_code(h.data_format_code)?;
    if h.samples_per_trace == 0 {
        return Err(SegyError::NoSamples);
    }
    Ok(h)
}

fn read_full(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), SegyError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => SegyError::Truncated(what.to_string()),
        _ => SegyError::Io(e),
    })
}

/// Reads the textual header (verbatim EBCDIC/ASCII bytes) and the binary
/// header from the start of a stream.
pub fn parse_headers(stream: &mut impl Read) -> Result<(Vec<u8>, SegyBinaryHeader), SegyError> {
    let mut head = vec![0u8; FILE_HEADER_LEN];
    read_full(stream, &mut head, "file shorter than the 3600-byte header")?;
    let bin = decode_binary_header(&head)?;
    head.truncate(TEXT_HEADER_LEN);
    Ok((head, bin))
}

fn decode_trace_header(h: &[u8], opts: &LoadOptions) -> TraceHeader {
    TraceHeader {
        inline_no: be_i32(h, opts.inline_byte - 1),
        crossline_no: be_i32(h, opts.xline_byte - 1),
        num_samples: be_u16(h, TRACE_SAMPLES_AT),
    }
}

fn check_trace_len(th: &TraceHeader, bin: &SegyBinaryHeader, trace: usize) -> Result<(), SegyError> {
    // a zero count means "use the binary header"
    if th.num_samples != 0 && th.num_samples != bin.samples_per_trace {
        return Err(SegyError::TraceLength { trace, got: th.num_samples, expected: bin.samples_per_trace });
    }
    Ok(())
}

/// Survey grid and where each trace sits in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyGeometry {
    /// Sorted distinct inline numbers (volume y axis).
    pub inlines: Vec<i32>,
    /// Sorted distinct crossline numbers (volume x axis).
    pub crosslines: Vec<i32>,
    /// Byte offset of each trace (header start), keyed by (inline, crossline).
    pub trace_offsets: HashMap<(i32, i32), usize>,
    pub trace_count: usize,
    pub missing: usize,
}

impl SurveyGeometry {
    pub fn inline_range(&self) -> (i32, i32) {
        (self.inlines[0], *self.inlines.last().expect("non-empty"))
    }

    pub fn crossline_range(&self) -> (i32, i32) {
        (self.crosslines[0], *self.crosslines.last().expect("non-empty"))
    }
}

fn build_geometry(
    positions: impl IntoIterator<Item = ((i32, i32), usize)>,
    fill_missing: bool,
) -> Result<SurveyGeometry, SegyError> {
    let mut trace_offsets = HashMap::new();
    let mut il_set = BTreeSet::new();
    let mut xl_set = BTreeSet::new();
    for ((il, xl), off) in positions {
        if trace_offsets.insert((il, xl), off).is_some() {
            return Err(SegyError::DuplicateTrace { inline: il, crossline: xl });
        }
        il_set.insert(il);
        xl_set.insert(xl);
    }
    if trace_offsets.is_empty() {
        return Err(SegyError::NoTraces);
    }
    let inlines: Vec<i32> = il_set.into_iter().collect();
    let crosslines: Vec<i32> = xl_set.into_iter().collect();
    let total = inlines.len() * crosslines.len();
    let missing = total - trace_offsets.len();
    if missing > 0 && !fill_missing {
        let first = inlines
            .iter()
            .flat_map(|&il| crosslines.iter().map(move |&xl| (il, xl)))
            .find(|k| !trace_offsets.contains_key(k))
            .expect("some position is missing");
        return Err(SegyError::IncompleteGrid { missing, total, first });
    }
    let trace_count = trace_offsets.len();
    Ok(SurveyGeometry { inlines, crosslines, trace_offsets, trace_count, missing })
}

/// One pass over the trace headers of an in-memory file.
pub fn scan_geometry(bytes: &[u8], bin: &SegyBinaryHeader, opts: &LoadOptions) -> Result<SurveyGeometry, SegyError> {
    opts.check()?;
    let start = bin.data_start();
    let trace_len = bin.trace_len();
    if bytes.len() < start {
        return Err(SegyError::Truncated("extended textual headers".into()));
    }
    let body = bytes.len() - start;
    if !body.is_multiple_of(trace_len) {
        return Err(SegyError::Truncated(format!(
            "{} trailing bytes after the last complete trace",
            body % trace_len
        )));
    }
    let mut positions = Vec::with_capacity(body / trace_len);
    for (trace, off) in (start..bytes.len()).step_by(trace_len).enumerate() {
        let th = decode_trace_header(&bytes[off..off + TRACE_HEADER_LEN], opts);
        check_trace_len(&th, bin, trace)?;
        positions.push(((th.inline_no, th.crossline_no), off));
    }
    build_geometry(positions, opts.fill_missing)
}

fn finish_volume(
    dims: Dims,
    data: Vec<f32>,
    bin: &SegyBinaryHeader,
    geom: &SurveyGeometry,
    zeroed: usize,
) -> Result<(Volume3D, LoadReport), SegyError> {
    let mut v = Volume3D::new(dims, data)?;
    v.sample_interval_ms = (bin.sample_interval_us > 0).then(|| f32::from(bin.sample_interval_us) / 1000.0);
    v.origin_indices = [i64::from(geom.inlines[0]), i64::from(geom.crosslines[0]), 0];
    let report = LoadReport {
        trace_count: geom.trace_count,
        inline_range: geom.inline_range(),
        crossline_range: geom.crossline_range(),
        samples_per_trace: dims.t,
        sample_interval_us: bin.sample_interval_us,
        format_code: bin.data_format_code,
        filled_traces: geom.missing,
        zeroed_samples: zeroed,
    };
    Ok((v, report))
}

/// Converts one trace's raw samples in place, zeroing non-finite or absurd
/// values. Returns how many were zeroed.
fn decode_trace(raw: &[u8], format: SampleFormat, out: &mut [f32]) -> usize {
    let mut zeroed = 0;
    for (o, c) in out.iter_mut().zip(raw.chunks_exact(4)) {
        let v = decode_sample([c[0], c[1], c[2], c[3]], format);
        if v.is_finite() && v.abs() <= ABSURD_AMPLITUDE {
            *o = v;
        } else {
            *o = 0.0;
            zeroed += 1;
        }
    }
    zeroed
}

/// Parses a complete SEG-Y file held in memory (or memory-mapped).
pub fn load_volume_bytes(bytes: &[u8], opts: &LoadOptions) -> Result<(Volume3D, LoadReport), SegyError> {
    let (_, bin) = parse_headers(&mut &bytes[..])?;
    let geom = scan_geometry(bytes, &bin, opts)?;
    let dims = Dims::new(bin.samples_per_trace as usize, geom.crosslines.len(), geom.inlines.len());
    let format = bin.format();
    let mut data = vec![0.0f32; dims.len()];
    let mut zeroed = 0;
    for (y, il) in geom.inlines.iter().enumerate() {
        for (x, xl) in geom.crosslines.iter().enumerate() {
            if let Some(&off) = geom.trace_offsets.get(&(*il, *xl)) {
                let raw = &bytes[off + TRACE_HEADER_LEN..off + bin.trace_len()];
                let at = dims.index(0, x, y);
                zeroed += decode_trace(raw, format, &mut data[at..at + dims.t]);
            }
        }
    }
    finish_volume(dims, data, &bin, &geom, zeroed)
}

/// Parses a SEG-Y stream sequentially, without seeking.
pub fn load_volume_stream(stream: &mut impl Read, opts: &LoadOptions) -> Result<(Volume3D, LoadReport), SegyError> {
    opts.check()?;
    let (_, bin) = parse_headers(stream)?;
    let mut skip = vec![0u8; TEXT_HEADER_LEN];
    for _ in 0..bin.extended_text_headers {
        read_full(stream, &mut skip, "extended textual headers")?;
    }
    let format = bin.format();
    let ns = bin.samples_per_trace as usize;
    let mut header = [0u8; TRACE_HEADER_LEN];
    let mut raw = vec![0u8; 4 * ns];
    let mut traces: Vec<((i32, i32), Vec<f32>)> = Vec::new();
    let mut zeroed = 0;
    loop {
        // clean EOF only on a trace boundary
        let got = read_up_to(stream, &mut header)?;
        if got == 0 {
            break;
        }
        if got < TRACE_HEADER_LEN {
            return Err(SegyError::Truncated(format!("partial trace header of {got} bytes")));
        }
        let th = decode_trace_header(&header, opts);
        check_trace_len(&th, &bin, traces.len())?;
        read_full(stream, &mut raw, "trace samples")?;
        let mut samples = vec![0.0f32; ns];
        zeroed += decode_trace(&raw, format, &mut samples);
        traces.push(((th.inline_no, th.crossline_no), samples));
    }
    let geom = build_geometry(traces.iter().enumerate().map(|(i, (k, _))| (*k, i)), opts.fill_missing)?;
    let dims = Dims::new(ns, geom.crosslines.len(), geom.inlines.len());
    let il_pos: HashMap<i32, usize> = geom.inlines.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let xl_pos: HashMap<i32, usize> = geom.crosslines.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut data = vec![0.0f32; dims.len()];
    for ((il, xl), samples) in &traces {
        let at = dims.index(0, xl_pos[xl], il_pos[il]);
        data[at..at + ns].copy_from_slice(samples);
    }
    finish_volume(dims, data, &bin, &geom, zeroed)
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> Result<usize, SegyError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

/// Loads a SEG-Y file: T = samples per trace, X = crosslines, Y = inlines.
pub fn load_volume(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<(Volume3D, LoadReport), SegyError> {
    let mut reader = BufReader::new(File::open(path)?);
    load_volume_stream(&mut reader, opts)
}

/// Writes small SEG-Y files. Used to build fixtures for tests and demos;
/// not a general SEG-Y writer.
pub mod fixture {
    use super::*;

    #[derive(Debug, Clone)]
    pub struct FixtureTrace {
        pub inline: i32,
        pub crossline: i32,
        pub samples: Vec<f32>,
        /// Overrides the per-trace sample count field (0 = leave blank).
        pub declared_samples: u16,
    }

    #[derive(Debug, Clone)]
    pub struct Fixture {
        pub format_code: u16,
        pub samples_per_trace: u16,
        pub sample_interval_us: u16,
        pub inline_byte: usize,
        pub xline_byte: usize,
        pub traces: Vec<FixtureTrace>,
    }

    impl Fixture {
        /// Traces for every (inline, crossline) with samples from `f(t, x, y)`,
        /// where x and y are grid positions.
        pub fn grid(
            format: SampleFormat,
            inlines: &[i32],
            crosslines: &[i32],
            samples: usize,
            f: impl Fn(usize, usize, usize) -> f32,
        ) -> Self {
            let mut traces = Vec::new();
            for (y, &il) in inlines.iter().enumerate() {
                for (x, &xl) in crosslines.iter().enumerate() {
                    traces.push(FixtureTrace {
                        inline: il,
                        crossline: xl,
                        samples: (0..samples).map(|t| f(t, x, y)).collect(),
                        declared_samples: samples as u16,
                    });
                }
            }
            Self {
                format_code: format.code(),
                samples_per_trace: samples as u16,
                sample_interval_us: 4000,
                inline_byte: DEFAULT_INLINE_BYTE,
                xline_byte: DEFAULT_XLINE_BYTE,
                traces,
            }
        }

        pub fn to_bytes(&self) -> Vec<u8> {
            let mut out = vec![0x40u8; TEXT_HEADER_LEN]; // EBCDIC blanks
            out[..3].copy_from_slice(&[0xC3, 0xF0, 0xF1]); // "C01"
            let mut bin = [0u8; BINARY_HEADER_LEN];
            let put16 = |b: &mut [u8], at: usize, v: u16| b[at..at + 2].copy_from_slice(&v.to_be_bytes());
            put16(&mut bin, SAMPLE_INTERVAL_AT - TEXT_HEADER_LEN, self.sample_interval_us);
            put16(&mut bin, SAMPLES_PER_TRACE_AT - TEXT_HEADER_LEN, self.samples_per_trace);
            put16(&mut bin, FORMAT_CODE_AT - TEXT_HEADER_LEN, self.format_code);
            put16(&mut bin, 3500 - TEXT_HEADER_LEN, 0x0100); // rev 1
            out.extend_from_slice(&bin);
            for tr in &self.traces {
                let mut h = [0u8; TRACE_HEADER_LEN];
                h[self.inline_byte - 1..self.inline_byte + 3].copy_from_slice(&tr.inline.to_be_bytes());
                h[self.xline_byte - 1..self.xline_byte + 3].copy_from_slice(&tr.crossline.to_be_bytes());
                put16(&mut h, TRACE_SAMPLES_AT, tr.declared_samples);
                out.extend_from_slice(&h);
                for &s in &tr.samples {
                    let word = if self.format_code == 1 { ieee_to_ibm(s) } else { s.to_bits() };
                    out.extend_from_slice(&word.to_be_bytes());
                }
            }
            out
        }
    }
}
