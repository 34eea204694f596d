//! Domain types and on-disk ingestion for both radar modalities.
//!
//! Two sensor families feed the pipeline: a 4D radar producing sparse point
//! scans (position, Doppler velocity, RCS per point) and a spinning radar
//! producing a dense polar power matrix per sweep. Both end up as
//! [`PolarImage`] rasters with RCS encoded in half-dB steps; pixel value 0 is
//! the "no return" sentinel.
//!
//! File formats:
//! - 4D CSV: header `x,y,z,doppler,rcs`, one point per line, decimal notation.
//! - 4D binary: magic `R4DS`, u32 count, then per point 5 little-endian f64.
//! - Spinning binary: magic `RSPN`, u32 range bins, u32 azimuth bins,
//!   f64 range resolution, then range-major little-endian f32 power values.
//! - Polar image: magic `RPBV`, u32 H, u32 W, f64 rho_max, f64 phi,
//!   f64 timestamp, then row-major little-endian f32 pixels.
//! - Manifest: line-delimited JSON records `{path, timestamp, x, y, yaw, sensor}`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FOURD_BINARY_MAGIC: &[u8; 4] = b"R4DS";
pub const SPINNING_MAGIC: &[u8; 4] = b"RSPN";
pub const POLAR_IMAGE_MAGIC: &[u8; 4] = b"RPBV";
pub const FOURD_CSV_HEADER: &str = "x,y,z,doppler,rcs";

/// One 4D-radar return: position in the sensor frame (meters), signed radial
/// Doppler velocity (m/s, positive = receding) and RCS in dBsm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub doppler: f64,
    pub rcs: f64,
}

impl RadarPoint {
    pub fn new(x: f64, y: f64, z: f64, doppler: f64, rcs: f64) -> Result<Self> {
        let p = RadarPoint { x, y, z, doppler, rcs };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("x", self.x),
            ("y", self.y),
            ("z", self.z),
            ("doppler", self.doppler),
            ("rcs", self.rcs),
        ] {
            if !v.is_finite() {
                return Err(Error::Validation(format!("radar point field {name} is not finite")));
            }
        }
        if self.range() <= 0.0 {
            return Err(Error::Validation("radar point has zero range".into()));
        }
        Ok(())
    }

    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn planar_range(&self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    /// Unit direction from the sensor to the point.
    pub fn direction(&self) -> [f64; 3] {
        let r = self.range();
        [self.x / r, self.y / r, self.z / r]
    }
}

/// One 4D-radar frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FourDScan {
    pub timestamp: f64,
    pub points: Vec<RadarPoint>,
}

impl FourDScan {
    pub fn new(timestamp: f64, points: Vec<RadarPoint>) -> Result<Self> {
        if !timestamp.is_finite() {
            return Err(Error::Validation("scan timestamp is not finite".into()));
        }
        for p in &points {
            p.validate()?;
        }
        Ok(FourDScan { timestamp, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Attach the manifest-supplied timestamp to a loaded scan.
    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = t;
        self
    }
}

/// One spinning-radar sweep: dense polar power matrix, range-major.
///
/// Power values are in half-dB steps and stored as f32 so that save/load
/// round-trips bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinningScan {
    pub timestamp: f64,
    pub range_bins: usize,
    pub azimuth_bins: usize,
    pub range_resolution: f64,
    pub power: Vec<f32>,
}

impl SpinningScan {
    pub fn new(
        timestamp: f64,
        range_bins: usize,
        azimuth_bins: usize,
        range_resolution: f64,
        power: Vec<f32>,
    ) -> Result<Self> {
        if range_bins == 0 || azimuth_bins == 0 {
            return Err(Error::Validation("spinning scan has zero-sized axis".into()));
        }
        if !range_resolution.is_finite() || range_resolution <= 0.0 {
            return Err(Error::Validation("spinning scan range resolution must be positive".into()));
        }
        if !timestamp.is_finite() {
            return Err(Error::Validation("scan timestamp is not finite".into()));
        }
        if power.len() != range_bins * azimuth_bins {
            return Err(Error::Shape(format!(
                "spinning scan payload holds {} values, expected {}x{}={}",
                power.len(),
                range_bins,
                azimuth_bins,
                range_bins * azimuth_bins
            )));
        }
        for &v in &power {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation("spinning scan power values must be finite and non-negative".into()));
            }
        }
        Ok(SpinningScan { timestamp, range_bins, azimuth_bins, range_resolution, power })
    }

    pub fn at(&self, r: usize, a: usize) -> f32 {
        self.power[r * self.azimuth_bins + a]
    }

    pub fn with_timestamp(mut self, t: f64) -> Self {
        self.timestamp = t;
        self
    }
}

/// Geometry of a polar BEV raster: `h` range bins out to `rho_max` meters and
/// `w` azimuth bins spanning `phi` radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarGrid {
    pub h: usize,
    pub w: usize,
    pub rho_max: f64,
    pub phi: f64,
}

impl PolarGrid {
    pub fn new(h: usize, w: usize, rho_max: f64, phi: f64) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Validation("polar grid has zero-sized axis".into()));
        }
        if !rho_max.is_finite() || rho_max <= 0.0 {
            return Err(Error::Validation("polar grid rho_max must be positive".into()));
        }
        if !phi.is_finite() || phi <= 0.0 || phi > std::f64::consts::TAU + 1e-12 {
            return Err(Error::Validation("polar grid phi must lie in (0, 2*pi]".into()));
        }
        Ok(PolarGrid { h, w, rho_max, phi })
    }

    /// Azimuth covered by one column.
    pub fn azimuth_per_bin(&self) -> f64 {
        self.phi / self.w as f64
    }
}

/// RCS polar BEV raster shared by both modalities. Pixels hold `2*rcs + c`
/// in half-dB steps; 0 means "no return".
#[derive(Debug, Clone, PartialEq)]
pub struct PolarImage {
    pub grid: PolarGrid,
    pub timestamp: f64,
    pub pixels: Vec<f64>,
}

impl PolarImage {
    pub fn new(grid: PolarGrid, timestamp: f64, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != grid.h * grid.w {
            return Err(Error::Shape(format!(
                "image holds {} pixels, grid is {}x{}",
                pixels.len(),
                grid.h,
                grid.w
            )));
        }
        if !timestamp.is_finite() {
            return Err(Error::Validation("image timestamp is not finite".into()));
        }
        for &p in &pixels {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Validation("image pixels must be finite and non-negative".into()));
            }
        }
        Ok(PolarImage { grid, timestamp, pixels })
    }

    pub fn zeros(grid: PolarGrid, timestamp: f64) -> Self {
        PolarImage { grid, timestamp, pixels: vec![0.0; grid.h * grid.w] }
    }

    pub fn at(&self, r: usize, theta: usize) -> f64 {
        self.pixels[r * self.grid.w + theta]
    }

    pub fn set(&mut self, r: usize, theta: usize, v: f64) {
        self.pixels[r * self.grid.w + theta] = v;
    }

    /// Circularly shift columns right by `s` (column `j` of the output is
    /// column `j - s mod w` of the input). Negative `s` shifts left.
    pub fn shift_columns(&self, s: i64) -> PolarImage {
        let w = self.grid.w as i64;
        let mut out = PolarImage::zeros(self.grid, self.timestamp);
        for r in 0..self.grid.h {
            for j in 0..self.grid.w {
                let src = (j as i64 - s).rem_euclid(w) as usize;
                out.set(r, j, self.at(r, src));
            }
        }
        out
    }

    /// Sum of squared pixel values.
    pub fn energy(&self) -> f64 {
        self.pixels.iter().map(|p| p * p).sum()
    }
}

/// Sensor modality of a manifest entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    FourD,
    Spinning,
    /// An already-projected polar BEV image (intermediate artifact).
    Polar,
}

/// Planar pose: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn planar_distance(&self, other: &Pose2D) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub timestamp: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub sensor: SensorKind,
}

impl ManifestEntry {
    pub fn pose(&self) -> Pose2D {
        Pose2D { x: self.x, y: self.y, yaw: self.yaw }
    }
}

/// Ordered list of scans with poses; drives batch stages and truth labeling.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SequenceManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = SequenceManifest { entries };
        m.validate_poses()?;
        Ok(m)
    }

    fn validate_poses(&self) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            if ![e.timestamp, e.x, e.y, e.yaw].iter().all(|v| v.is_finite()) {
                return Err(Error::Validation(format!("manifest entry {i} has non-finite pose or timestamp")));
            }
        }
        // Timestamps must strictly increase within each sensor stream.
        for kind in [SensorKind::FourD, SensorKind::Spinning, SensorKind::Polar] {
            let mut prev: Option<f64> = None;
            for e in self.entries.iter().filter(|e| e.sensor == kind) {
                if let Some(p) = prev {
                    if e.timestamp <= p {
                        return Err(Error::Validation(format!(
                            "manifest timestamps not strictly increasing for {kind:?} stream (\
                             {p} followed by {})",
                            e.timestamp
                        )));
                    }
                }
                prev = Some(e.timestamp);
            }
        }
        Ok(())
    }

    /// Check that every referenced file exists, resolving relative paths
    /// against `base`.
    pub fn validate_files(&self, base: &Path) -> Result<()> {
        for e in &self.entries {
            let p = resolve_path(base, &e.path);
            if !p.exists() {
                return Err(Error::Validation(format!("manifest references missing file {}", p.display())));
            }
        }
        Ok(())
    }
}

/// Resolve a manifest-relative path.
pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FourDFormat {
    Csv,
    Binary,
}

// ── loaders / savers ────────────────────────────────────────────────────────

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, message: message.into() }
}

pub fn load_fourd_scan(path: &Path, format: FourDFormat) -> Result<FourDScan> {
    match format {
        FourDFormat::Csv => load_fourd_csv(path),
        FourDFormat::Binary => load_fourd_binary(path),
    }
}

/// Scan files carry geometry only; timestamps ride in the manifest. Loaded
/// scans get timestamp 0 until [`FourDScan::with_timestamp`] attaches one.
pub fn load_fourd_csv(path: &Path) -> Result<FourDScan> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file, expected header"))?;
    if header.trim() != FOURD_CSV_HEADER {
        return Err(parse_err(path, 1, format!("expected header `{FOURD_CSV_HEADER}`, got `{header}`")));
    }
    let mut points = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(path, lineno, format!("expected 5 fields, got {}", fields.len())));
        }
        let mut vals = [0.0f64; 5];
        for (i, f) in fields.iter().enumerate() {
            vals[i] = f
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format!("malformed number `{}`", f.trim())))?;
        }
        let p = RadarPoint { x: vals[0], y: vals[1], z: vals[2], doppler: vals[3], rcs: vals[4] };
        p.validate()
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        points.push(p);
    }
    FourDScan::new(0.0, points)
}

pub fn save_fourd_csv(scan: &FourDScan, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(FOURD_CSV_HEADER);
    out.push('\n');
    for p in &scan.points {
        // `{}` prints the shortest decimal that round-trips to the same f64.
        out.push_str(&format!("{},{},{},{},{}\n", p.x, p.y, p.z, p.doppler, p.rcs));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

struct ByteReader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(path: &'a Path, buf: &'a [u8]) -> Self {
        ByteReader { path, buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(parse_err(
                self.path,
                0,
                format!("truncated payload: needed {n} bytes for {what}, {} left", self.buf.len() - self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    /// Guard against allocating for a count field larger than the payload.
    fn check_payload(&self, items: usize, bytes_per_item: usize, what: &str) -> Result<()> {
        let needed = items.checked_mul(bytes_per_item);
        match needed {
            Some(n) if n <= self.remaining() => Ok(()),
            _ => Err(parse_err(
                self.path,
                0,
                format!("truncated payload: {what} declares {items} items, {} bytes left", self.remaining()),
            )),
        }
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let b = self.take(4, what)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(parse_err(
                self.path,
                0,
                format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn load_fourd_binary(path: &Path) -> Result<FourDScan> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = ByteReader::new(path, &buf);
    let magic = r.take(4, "magic")?;
    if magic != FOURD_BINARY_MAGIC {
        return Err(parse_err(path, 0, "bad magic, expected R4DS"));
    }
    let n = r.u32("point count")? as usize;
    r.check_payload(n, 40, "point records")?;
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let mut vals = [0.0f64; 5];
        for v in &mut vals {
            *v = r.f64("point field")?;
        }
        let p = RadarPoint { x: vals[0], y: vals[1], z: vals[2], doppler: vals[3], rcs: vals[4] };
        p.validate()
            .map_err(|e| parse_err(path, 0, format!("point {i}: {e}")))?;
        points.push(p);
    }
    r.expect_end()?;
    FourDScan::new(0.0, points)
}

pub fn save_fourd_binary(scan: &FourDScan, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + scan.points.len() * 40);
    buf.extend_from_slice(FOURD_BINARY_MAGIC);
    buf.extend_from_slice(&(scan.points.len() as u32).to_le_bytes());
    for p in &scan.points {
        for v in [p.x, p.y, p.z, p.doppler, p.rcs] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

pub fn load_spinning_scan(path: &Path) -> Result<SpinningScan> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = ByteReader::new(path, &buf);
    let magic = r.take(4, "magic")?;
    if magic != SPINNING_MAGIC {
        return Err(parse_err(path, 0, "bad magic, expected RSPN"));
    }
    let range_bins = r.u32("range bins")? as usize;
    let azimuth_bins = r.u32("azimuth bins")? as usize;
    let range_resolution = r.f64("range resolution")?;
    let n = range_bins
        .checked_mul(azimuth_bins)
        .ok_or_else(|| parse_err(path, 0, "matrix size overflows"))?;
    r.check_payload(n, 4, "power matrix")?;
    let mut power = Vec::with_capacity(n);
    for _ in 0..n {
        power.push(r.f32("power value")?);
    }
    r.expect_end()?;
    SpinningScan::new(0.0, range_bins, azimuth_bins, range_resolution, power)
        .map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn save_spinning_scan(scan: &SpinningScan, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + scan.power.len() * 4);
    buf.extend_from_slice(SPINNING_MAGIC);
    buf.extend_from_slice(&(scan.range_bins as u32).to_le_bytes());
    buf.extend_from_slice(&(scan.azimuth_bins as u32).to_le_bytes());
    buf.extend_from_slice(&scan.range_resolution.to_le_bytes());
    for v in &scan.power {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &buf)
}

/// Pixels are quantized to f32 on disk; loading yields the f32-exact values.
pub fn load_polar_image(path: &Path) -> Result<PolarImage> {
    let buf = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut r = ByteReader::new(path, &buf);
    let magic = r.take(4, "magic")?;
    if magic != POLAR_IMAGE_MAGIC {
        return Err(parse_err(path, 0, "bad magic, expected RPBV"));
    }
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let rho_max = r.f64("rho_max")?;
    let phi = r.f64("phi")?;
    let timestamp = r.f64("timestamp")?;
    let n = h.checked_mul(w).ok_or_else(|| parse_err(path, 0, "image size overflows"))?;
    r.check_payload(n, 4, "pixel matrix")?;
    let mut pixels = Vec::with_capacity(n);
    for _ in 0..n {
        pixels.push(r.f32("pixel")? as f64);
    }
    r.expect_end()?;
    let grid = PolarGrid::new(h, w, rho_max, phi).map_err(|e| parse_err(path, 0, e.to_string()))?;
    PolarImage::new(grid, timestamp, pixels).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn save_polar_image(img: &PolarImage, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(36 + img.pixels.len() * 4);
    buf.extend_from_slice(POLAR_IMAGE_MAGIC);
    buf.extend_from_slice(&(img.grid.h as u32).to_le_bytes());
    buf.extend_from_slice(&(img.grid.w as u32).to_le_bytes());
    buf.extend_from_slice(&img.grid.rho_max.to_le_bytes());
    buf.extend_from_slice(&img.grid.phi.to_le_bytes());
    buf.extend_from_slice(&img.timestamp.to_le_bytes());
    for &p in &img.pixels {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    write_atomic(path, &buf)
}

pub fn load_manifest(path: &Path) -> Result<SequenceManifest> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(line)
            .map_err(|err| parse_err(path, idx + 1, err.to_string()))?;
        entries.push(e);
    }
    SequenceManifest::new(entries)
}

pub fn save_manifest(manifest: &SequenceManifest, path: &Path) -> Result<()> {
    let mut out = String::new();
    for e in &manifest.entries {
        out.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(bytes).map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Read a whole file; helper for tools that hash artifacts.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| io_err(path, e))?;
    Ok(buf)
}
