//! Binary containers (frames, LUTs, volumes), CSV curves and grayscale images.
//!
//! All binary formats are little-endian and start with a four-byte magic and
//! a `u32` version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};

use crate::acquisition::CoefficientBand;
use crate::error::{Error, Result};
use crate::fdbf::{DistortionLut, LutParams};
use crate::geometry::Element;
use crate::phantom::ElementRecord;

pub const FRAME_MAGIC: &[u8; 4] = b"VBF1";
pub const LUT_MAGIC: &[u8; 4] = b"VBQ1";
pub const VOLUME_MAGIC: &[u8; 4] = b"VBV1";
pub const VERSION: u32 = 1;

fn format_err(kind: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        reason: reason.into(),
    }
}

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        Ok(self.0.write_all(b)?)
    }
    fn count(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| format_err("container", "count exceeds u32"))?;
        self.u32(v)
    }
}

struct In<R: Read> {
    r: R,
    kind: &'static str,
}

impl<R: Read> In<R> {
    fn fill<const K: usize>(&mut self) -> Result<[u8; K]> {
        let mut b = [0u8; K];
        self.r.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                format_err(self.kind, "truncated file")
            } else {
                Error::Io(e)
            }
        })?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.fill()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.fill()?))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.fill()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.fill()?))
    }
    fn count(&mut self, limit: usize, what: &str) -> Result<usize> {
        let v = self.u32()? as usize;
        if v > limit {
            return Err(format_err(self.kind, format!("{what} = {v} is implausible")));
        }
        Ok(v)
    }
    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m: [u8; 4] = self.fill()?;
        if &m != magic {
            return Err(format_err(self.kind, "bad magic"));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(format_err(self.kind, format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

const LIMIT: usize = 1 << 28;

/// Payload stored in a frame container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    /// Real samples at the full rate, one record per element.
    Samples,
    /// Complex coefficient bands `c[start .. start + ν)` per element.
    Bands { start: usize },
}

/// Metadata of a frame container.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameHeader {
    pub rows: usize,
    pub cols: usize,
    pub elements: Vec<Element>,
    /// Samples per record, or `ν` for band payloads.
    pub record_len: usize,
    pub fs: f64,
    pub period: f64,
    pub theta_x: Vec<f64>,
    pub theta_y: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
    pub payload: PayloadKind,
}

impl FrameHeader {
    pub fn n_angles(&self) -> usize {
        self.theta_x.len() * self.theta_y.len()
    }
}

/// Streaming writer: header first, then one record set per angle in raster order.
pub struct FrameWriter {
    out: Out<BufWriter<File>>,
    header: FrameHeader,
    written: usize,
}

impl FrameWriter {
    pub fn create(path: &Path, header: FrameHeader) -> Result<Self> {
        let mut out = Out(BufWriter::new(File::create(path)?));
        out.bytes(FRAME_MAGIC)?;
        out.u32(VERSION)?;
        let (kind, start) = match header.payload {
            PayloadKind::Samples => (0, 0),
            PayloadKind::Bands { start } => (1, start),
        };
        out.u32(kind)?;
        out.count(header.rows)?;
        out.count(header.cols)?;
        out.count(header.elements.len())?;
        out.count(header.record_len)?;
        out.count(start)?;
        out.f64(header.fs)?;
        out.f64(header.period)?;
        out.f64(header.noise_std)?;
        out.u64(header.seed)?;
        out.count(header.theta_x.len())?;
        out.count(header.theta_y.len())?;
        for v in header.theta_x.iter().chain(&header.theta_y) {
            out.f64(*v)?;
        }
        for e in &header.elements {
            out.count(e.m)?;
            out.count(e.n)?;
        }
        Ok(Self {
            out,
            header,
            written: 0,
        })
    }

    fn check_set(&self, elements: impl Iterator<Item = Element>) -> Result<()> {
        if self.written >= self.header.n_angles() {
            return Err(format_err("frame", "more angles than declared"));
        }
        if !elements.eq(self.header.elements.iter().copied()) {
            return Err(format_err("frame", "records do not match the declared elements"));
        }
        Ok(())
    }

    pub fn write_records(&mut self, records: &[ElementRecord]) -> Result<()> {
        if self.header.payload != PayloadKind::Samples {
            return Err(format_err("frame", "container holds coefficient bands"));
        }
        self.check_set(records.iter().map(|r| r.element))?;
        for r in records {
            if r.samples.len() != self.header.record_len {
                return Err(format_err("frame", "record length differs from header"));
            }
            for &v in &r.samples {
                self.out.f32(v as f32)?;
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn write_bands(&mut self, bands: &[CoefficientBand]) -> Result<()> {
        let PayloadKind::Bands { start } = self.header.payload else {
            return Err(format_err("frame", "container holds samples"));
        };
        self.check_set(bands.iter().map(|b| b.element))?;
        for b in bands {
            if b.start != start || b.nu() != self.header.record_len {
                return Err(format_err("frame", "band range differs from header"));
            }
            for v in &b.values {
                self.out.f32(v.re as f32)?;
                self.out.f32(v.im as f32)?;
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.written != self.header.n_angles() {
            return Err(format_err(
                "frame",
                format!("{} of {} angles written", self.written, self.header.n_angles()),
            ));
        }
        self.out.0.flush()?;
        Ok(())
    }
}

/// Streaming reader matching [`FrameWriter`].
pub struct FrameReader {
    input: In<BufReader<File>>,
    header: FrameHeader,
    read: usize,
}

impl FrameReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut input = In {
            r: BufReader::new(File::open(path)?),
            kind: "frame",
        };
        input.header(FRAME_MAGIC)?;
        let kind = input.u32()?;
        let rows = input.count(LIMIT, "rows")?;
        let cols = input.count(LIMIT, "cols")?;
        let n_rx = input.count(LIMIT, "element count")?;
        let record_len = input.count(LIMIT, "record length")?;
        let start = input.count(LIMIT, "band start")?;
        let fs = input.f64()?;
        let period = input.f64()?;
        let noise_std = input.f64()?;
        let seed = input.u64()?;
        let nx = input.count(LIMIT, "theta_x count")?;
        let ny = input.count(LIMIT, "theta_y count")?;
        let theta_x = input.f64s(nx)?;
        let theta_y = input.f64s(ny)?;
        let mut elements = Vec::with_capacity(n_rx);
        for _ in 0..n_rx {
            let m = input.count(LIMIT, "element row")?;
            let n = input.count(LIMIT, "element col")?;
            if m >= rows || n >= cols {
                return Err(format_err("frame", "element outside the grid"));
            }
            elements.push(Element::new(m, n));
        }
        let payload = match kind {
            0 => PayloadKind::Samples,
            1 => PayloadKind::Bands { start },
            k => return Err(format_err("frame", format!("unknown payload kind {k}"))),
        };
        Ok(Self {
            input,
            header: FrameHeader {
                rows,
                cols,
                elements,
                record_len,
                fs,
                period,
                theta_x,
                theta_y,
                noise_std,
                seed,
                payload,
            },
            read: 0,
        })
    }

    pub fn header(&self) -> &FrameHeader {
        &self.header
    }

    fn next_angle(&mut self) -> Result<()> {
        if self.read >= self.header.n_angles() {
            return Err(format_err("frame", "no more angles"));
        }
        self.read += 1;
        Ok(())
    }

    pub fn read_records(&mut self) -> Result<Vec<ElementRecord>> {
        if self.header.payload != PayloadKind::Samples {
            return Err(format_err("frame", "container holds coefficient bands"));
        }
        self.next_angle()?;
        let noise = (self.header.noise_std > 0.0).then_some(self.header.noise_std);
        let mut out = Vec::with_capacity(self.header.elements.len());
        for i in 0..self.header.elements.len() {
            let samples = (0..self.header.record_len)
                .map(|_| self.input.f32().map(f64::from))
                .collect::<Result<_>>()?;
            out.push(ElementRecord {
                element: self.header.elements[i],
                samples,
                noise_std: noise,
            });
        }
        Ok(out)
    }

    pub fn read_bands(&mut self) -> Result<Vec<CoefficientBand>> {
        let PayloadKind::Bands { start } = self.header.payload else {
            return Err(format_err("frame", "container holds samples"));
        };
        self.next_angle()?;
        let mut out = Vec::with_capacity(self.header.elements.len());
        for i in 0..self.header.elements.len() {
            let values = (0..self.header.record_len)
                .map(|_| Ok(Complex64::new(self.input.f32()? as f64, self.input.f32()? as f64)))
                .collect::<Result<_>>()?;
            out.push(CoefficientBand {
                element: self.header.elements[i],
                start,
                values,
            });
        }
        Ok(out)
    }
}

/// Writes a LUT container.
pub fn write_lut(path: &Path, lut: &DistortionLut) -> Result<()> {
    let mut out = Out(BufWriter::new(File::create(path)?));
    out.bytes(LUT_MAGIC)?;
    out.u32(VERSION)?;
    out.count(lut.params.l1)?;
    out.count(lut.params.l2)?;
    out.count(lut.n_angles)?;
    out.count(lut.n_elements)?;
    out.count(lut.kappa.len())?;
    out.f64(lut.params.oversample)?;
    out.bytes(&lut.hash)?;
    for &k in &lut.kappa {
        out.count(k)?;
    }
    for v in &lut.data {
        out.f32(v.re)?;
        out.f32(v.im)?;
    }
    out.0.flush()?;
    Ok(())
}

/// Reads a LUT container.
pub fn read_lut(path: &Path) -> Result<DistortionLut> {
    let mut input = In {
        r: BufReader::new(File::open(path)?),
        kind: "lut",
    };
    input.header(LUT_MAGIC)?;
    let l1 = input.count(LIMIT, "L1")?;
    let l2 = input.count(LIMIT, "L2")?;
    let n_angles = input.count(LIMIT, "angle count")?;
    let n_elements = input.count(LIMIT, "element count")?;
    let n_k = input.count(LIMIT, "coefficient count")?;
    let oversample = input.f64()?;
    let hash: [u8; 32] = input.fill()?;
    let kappa = (0..n_k).map(|_| input.count(LIMIT, "index")).collect::<Result<Vec<_>>>()?;
    let params = LutParams { l1, l2, oversample };
    let total = n_angles
        .checked_mul(n_elements)
        .and_then(|v| v.checked_mul(n_k))
        .and_then(|v| v.checked_mul(params.width()))
        .ok_or_else(|| format_err("lut", "size overflow"))?;
    let mut data = Vec::with_capacity(total);
    for _ in 0..total {
        data.push(Complex32::new(input.f32()?, input.f32()?));
    }
    let mut probe = [0u8; 1];
    if input.r.read(&mut probe)? != 0 {
        return Err(format_err("lut", "trailing bytes"));
    }
    Ok(DistortionLut {
        params,
        kappa,
        n_angles,
        n_elements,
        hash,
        data,
    })
}

/// Beamformed volume: `nx × ny` beams of `n` samples each.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    pub theta_x: Vec<f64>,
    pub theta_y: Vec<f64>,
    pub n_samples: usize,
    pub fs: f64,
    pub label: String,
    /// Beams in raster order (θx-major), each of `n_samples` values.
    pub voxels: Vec<f32>,
}

pub fn write_volume(path: &Path, v: &VolumeFile) -> Result<()> {
    if v.voxels.len() != v.theta_x.len() * v.theta_y.len() * v.n_samples {
        return Err(format_err("volume", "voxel count does not match dimensions"));
    }
    let mut out = Out(BufWriter::new(File::create(path)?));
    out.bytes(VOLUME_MAGIC)?;
    out.u32(VERSION)?;
    out.count(v.theta_x.len())?;
    out.count(v.theta_y.len())?;
    out.count(v.n_samples)?;
    out.f64(v.fs)?;
    for a in v.theta_x.iter().chain(&v.theta_y) {
        out.f64(*a)?;
    }
    out.count(v.label.len())?;
    out.bytes(v.label.as_bytes())?;
    for &x in &v.voxels {
        out.f32(x)?;
    }
    out.0.flush()?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<VolumeFile> {
    let mut input = In {
        r: BufReader::new(File::open(path)?),
        kind: "volume",
    };
    input.header(VOLUME_MAGIC)?;
    let nx = input.count(LIMIT, "theta_x count")?;
    let ny = input.count(LIMIT, "theta_y count")?;
    let n_samples = input.count(LIMIT, "samples")?;
    let fs = input.f64()?;
    let theta_x = input.f64s(nx)?;
    let theta_y = input.f64s(ny)?;
    let len = input.count(1 << 16, "label length")?;
    let mut label = vec![0u8; len];
    input.r.read_exact(&mut label).map_err(|_| format_err("volume", "truncated file"))?;
    let label = String::from_utf8(label).map_err(|_| format_err("volume", "label is not UTF-8"))?;
    let total = nx * ny * n_samples;
    let voxels = (0..total).map(|_| input.f32()).collect::<Result<_>>()?;
    Ok(VolumeFile {
        theta_x,
        theta_y,
        n_samples,
        fs,
        label,
        voxels,
    })
}

/// Writes columns of equal length as CSV with a header row.
pub fn write_csv(path: &Path, header: &[&str], columns: &[&[f64]]) -> Result<()> {
    let rows = columns.first().map_or(0, |c| c.len());
    if columns.len() != header.len() || columns.iter().any(|c| c.len() != rows) {
        return Err(format_err("csv", "columns must match the header and each other"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err("csv", e.to_string()))?;
    w.write_record(header).map_err(|e| format_err("csv", e.to_string()))?;
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| format!("{}", c[i])))
            .map_err(|e| format_err("csv", e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a row-major image with values in `[0, 1]` as 8-bit grayscale PNG.
pub fn write_png(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height || width == 0 || height == 0 {
        return Err(format_err("png", "pixel count does not match dimensions"));
    }
    let w = u32::try_from(width).map_err(|_| format_err("png", "image too wide"))?;
    let h = u32::try_from(height).map_err(|_| format_err("png", "image too tall"))?;
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w, h);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| format_err("png", e.to_string()))?;
    let data: Vec<u8> = pixels
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer
        .write_image_data(&data)
        .map_err(|e| format_err("png", e.to_string()))?;
    writer.finish().map_err(|e| format_err("png", e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(payload: PayloadKind, len: usize) -> FrameHeader {
        FrameHeader {
            rows: 2,
            cols: 2,
            elements: vec![Element::new(0, 0), Element::new(1, 1)],
            record_len: len,
            fs: 1e6,
            period: len as f64 / 1e6,
            theta_x: vec![-0.1, 0.1],
            theta_y: vec![0.0],
            noise_std: 0.0,
            seed: 7,
            payload,
        }
    }

    #[test]
    fn frame_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.vbf");
        let h = header(PayloadKind::Samples, 4);
        let recs: Vec<ElementRecord> = h
            .elements
            .iter()
            .map(|&e| ElementRecord {
                element: e,
                samples: vec![1.0, -2.0, 0.5, e.m as f64],
                noise_std: None,
            })
            .collect();
        let mut w = FrameWriter::create(&path, h.clone()).unwrap();
        w.write_records(&recs).unwrap();
        assert!(FrameWriter::create(&dir.path().join("g"), h.clone())
            .unwrap()
            .finish()
            .is_err());
        w.write_records(&recs).unwrap();
        w.finish().unwrap();
        let mut r = FrameReader::open(&path).unwrap();
        assert_eq!(r.header(), &h);
        assert_eq!(r.read_records().unwrap(), recs);
        assert_eq!(r.read_records().unwrap(), recs);
        assert!(r.read_records().is_err());
    }

    #[test]
    fn band_frame_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.vbf");
        let h = header(PayloadKind::Bands { start: 3 }, 2);
        let bands: Vec<CoefficientBand> = h
            .elements
            .iter()
            .map(|&e| CoefficientBand {
                element: e,
                start: 3,
                values: vec![Complex64::new(0.5, -1.0), Complex64::new(2.0, 0.25)],
            })
            .collect();
        let mut w = FrameWriter::create(&path, h).unwrap();
        w.write_bands(&bands).unwrap();
        w.write_bands(&bands).unwrap();
        w.finish().unwrap();
        let mut r = FrameReader::open(&path).unwrap();
        assert_eq!(r.read_bands().unwrap(), bands);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"XXXX\x01\x00\x00\x00").unwrap();
        assert!(matches!(FrameReader::open(&path), Err(Error::Format { .. })));
        assert!(matches!(read_lut(&path), Err(Error::Format { .. })));
        assert!(matches!(read_volume(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn volume_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.vbv");
        let v = VolumeFile {
            theta_x: vec![0.0, 0.1],
            theta_y: vec![0.2],
            n_samples: 3,
            fs: 2e6,
            label: "time".into(),
            voxels: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        };
        write_volume(&path, &v).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
    }

    #[test]
    fn png_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        write_png(&dir.path().join("a.png"), 2, 2, &[0.0, 0.5, 1.0, 2.0]).unwrap();
        assert!(write_png(&dir.path().join("b.png"), 3, 2, &[0.0; 4]).is_err());
        let p = dir.path().join("c.csv");
        write_csv(&p, &["x", "y"], &[&[1.0, 2.0], &[3.0, 4.5]]).unwrap();
        assert_eq!(std::fs::read_to_string(p).unwrap(), "x,y\n1,3\n2,4.5\n");
    }
}
