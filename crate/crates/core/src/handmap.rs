//! Labeled raster of the palmar hand and boolean masks over it.
//!
//! The bundled map (`assets/handmap_v1.txt`) is 60 x 90 cells at 2 mm per
//! cell, fingertips at the top and wrist at the bottom. Raster coordinates
//! are `(x = column, y = row)`; millimetre coordinates refer to cell centres.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;
use thiserror::Error;

pub const BUNDLED_HANDMAP_V1: &str = include_str!("../assets/handmap_v1.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Background,
    Wrist,
    Palm,
    Thumb,
    Index,
    Middle,
    Ring,
    Little,
}

impl Region {
    pub const ALL: [Region; 8] = [
        Region::Background,
        Region::Wrist,
        Region::Palm,
        Region::Thumb,
        Region::Index,
        Region::Middle,
        Region::Ring,
        Region::Little,
    ];

    pub fn code(self) -> char {
        match self {
            Region::Background => '.',
            Region::Wrist => 'W',
            Region::Palm => 'P',
            Region::Thumb => 'T',
            Region::Index => 'I',
            Region::Middle => 'M',
            Region::Ring => 'R',
            Region::Little => 'L',
        }
    }

    pub fn from_code(c: char) -> Option<Region> {
        Region::ALL.into_iter().find(|r| r.code() == c)
    }

    pub fn is_finger(self) -> bool {
        matches!(
            self,
            Region::Thumb | Region::Index | Region::Middle | Region::Ring | Region::Little
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Background => "background",
            Region::Wrist => "wrist",
            Region::Palm => "palm",
            Region::Thumb => "thumb",
            Region::Index => "index",
            Region::Middle => "middle",
            Region::Ring => "ring",
            Region::Little => "little",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown region {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: u16,
    pub y: u16,
}

impl Cell {
    pub fn new(x: u16, y: u16) -> Self {
        Cell { x, y }
    }
}

/// Point in millimetres on the hand-map plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PointMm {
    pub x: f64,
    pub y: f64,
}

impl PointMm {
    pub fn new(x: f64, y: f64) -> Self {
        PointMm { x, y }
    }

    pub fn distance(self, other: PointMm) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: PointMm, t: f64) -> PointMm {
        PointMm::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

/// Tip and base of a finger's centre line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerAxis {
    pub tip: PointMm,
    pub base: PointMm,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandMapError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("region {0} has no cells")]
    EmptyRegion(Region),
    #[error("mask covers no hand cells")]
    EmptyMask,
    #[error("mask is {got:?} but map is {expected:?}")]
    DimensionMismatch {
        expected: (u16, u16),
        got: (u16, u16),
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandMap {
    version: u32,
    width: u16,
    height: u16,
    scale_mm: f64,
    cells: Vec<Region>,
    fingers: Vec<(Region, FingerAxis)>,
}

impl HandMap {
    /// The versioned map shipped with the crate.
    pub fn bundled() -> &'static HandMap {
        static MAP: OnceLock<HandMap> = OnceLock::new();
        MAP.get_or_init(|| HandMap::parse(BUNDLED_HANDMAP_V1).expect("bundled hand map is valid"))
    }

    pub fn parse(text: &str) -> Result<HandMap, HandMapError> {
        let err = |line: usize, reason: &str| HandMapError::Parse {
            line: line + 1,
            reason: reason.to_string(),
        };
        let mut version = None;
        let mut scale = None;
        let mut size: Option<(u16, u16)> = None;
        let mut fingers = Vec::new();
        let mut rows: Vec<Vec<Region>> = Vec::new();
        let mut in_grid = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if in_grid {
                let row = line
                    .chars()
                    .map(Region::from_code)
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| err(i, "unknown region code"))?;
                rows.push(row);
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let nums: Vec<f64> = parts
                .clone()
                .filter_map(|p| p.parse::<f64>().ok())
                .collect();
            match key {
                "version" => version = nums.first().map(|&v| v as u32),
                "scale_mm" => scale = nums.first().copied(),
                "size" if nums.len() == 2 => size = Some((nums[0] as u16, nums[1] as u16)),
                "finger" => {
                    let name = parts.next().ok_or_else(|| err(i, "finger needs a name"))?;
                    let region: Region = name.parse().map_err(|e: String| err(i, &e))?;
                    if nums.len() != 4 {
                        return Err(err(i, "finger needs tip_x tip_y base_x base_y"));
                    }
                    fingers.push((
                        region,
                        FingerAxis {
                            tip: PointMm::new(nums[0], nums[1]),
                            base: PointMm::new(nums[2], nums[3]),
                        },
                    ));
                }
                "grid" => in_grid = true,
                _ => return Err(err(i, "unknown header key")),
            }
        }
        let (width, height) = size.ok_or_else(|| err(0, "missing size"))?;
        if rows.len() != height as usize || rows.iter().any(|r| r.len() != width as usize) {
            return Err(err(0, "grid does not match declared size"));
        }
        let map = HandMap {
            version: version.ok_or_else(|| err(0, "missing version"))?,
            width,
            height,
            scale_mm: scale.ok_or_else(|| err(0, "missing scale_mm"))?,
            cells: rows.into_iter().flatten().collect(),
            fingers,
        };
        for r in [Region::Thumb, Region::Index] {
            if map.region_cell_count(r) == 0 {
                return Err(HandMapError::EmptyRegion(r));
            }
        }
        Ok(map)
    }

    pub fn version(&self) -> u32 {
        self.version
    }
    pub fn width(&self) -> u16 {
        self.width
    }
    pub fn height(&self) -> u16 {
        self.height
    }
    pub fn scale_mm(&self) -> f64 {
        self.scale_mm
    }
    pub fn dims(&self) -> (u16, u16) {
        (self.width, self.height)
    }

    pub fn region_at(&self, cell: Cell) -> Region {
        if cell.x >= self.width || cell.y >= self.height {
            return Region::Background;
        }
        self.cells[cell.y as usize * self.width as usize + cell.x as usize]
    }

    pub fn cells(&self) -> impl Iterator<Item = (Cell, Region)> + '_ {
        let w = self.width as usize;
        self.cells
            .iter()
            .enumerate()
            .map(move |(i, &r)| (Cell::new((i % w) as u16, (i / w) as u16), r))
    }

    pub fn region_cell_count(&self, region: Region) -> usize {
        self.cells.iter().filter(|&&r| r == region).count()
    }

    pub fn cell_center_mm(&self, cell: Cell) -> PointMm {
        PointMm::new(
            (cell.x as f64 + 0.5) * self.scale_mm,
            (cell.y as f64 + 0.5) * self.scale_mm,
        )
    }

    /// Cell containing a millimetre point, clamped to the raster.
    pub fn cell_at_mm(&self, p: PointMm) -> Cell {
        let cx = (p.x / self.scale_mm).floor().clamp(0.0, (self.width - 1) as f64);
        let cy = (p.y / self.scale_mm).floor().clamp(0.0, (self.height - 1) as f64);
        Cell::new(cx as u16, cy as u16)
    }

    pub fn region_centroid_mm(&self, region: Region) -> Option<PointMm> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (cell, r) in self.cells() {
            if r == region {
                let p = self.cell_center_mm(cell);
                sx += p.x;
                sy += p.y;
                n += 1;
            }
        }
        (n > 0).then(|| PointMm::new(sx / n as f64, sy / n as f64))
    }

    pub fn finger_axis(&self, finger: Region) -> Option<FingerAxis> {
        self.fingers
            .iter()
            .find(|(r, _)| *r == finger)
            .map(|(_, a)| *a)
    }

    /// Mask of every cell carrying `region`.
    pub fn region_mask(&self, region: Region) -> Mask {
        let mut m = Mask::empty(self.width, self.height);
        for (cell, r) in self.cells() {
            if r == region {
                m.set(cell, true);
            }
        }
        m
    }

    /// Set cells of `mask` that carry `region`.
    pub fn count_in_region(&self, mask: &Mask, region: Region) -> Result<usize, HandMapError> {
        self.check_dims(mask)?;
        Ok(mask.iter_set().filter(|&c| self.region_at(c) == region).count())
    }

    /// Percent of the painted hand area (background excluded) inside `region`.
    pub fn in_region_rate(&self, mask: &Mask, region: Region) -> Result<f64, HandMapError> {
        self.check_dims(mask)?;
        let (mut hand, mut inside) = (0usize, 0usize);
        for c in mask.iter_set() {
            let r = self.region_at(c);
            if r != Region::Background {
                hand += 1;
                inside += (r == region) as usize;
            }
        }
        if hand == 0 {
            return Err(HandMapError::EmptyMask);
        }
        Ok(100.0 * inside as f64 / hand as f64)
    }

    pub fn check_dims(&self, mask: &Mask) -> Result<(), HandMapError> {
        if mask.dims() != self.dims() {
            return Err(HandMapError::DimensionMismatch {
                expected: self.dims(),
                got: mask.dims(),
            });
        }
        Ok(())
    }
}

/// Boolean raster. Serialized as alternating run lengths starting with a
/// run of unset cells, in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: u16,
    height: u16,
    bits: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct MaskRepr {
    width: u16,
    height: u16,
    runs: Vec<u32>,
}

impl Serialize for Mask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MaskRepr {
            width: self.width,
            height: self.height,
            runs: self.runs(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = MaskRepr::deserialize(d)?;
        Mask::from_runs(r.width, r.height, &r.runs).map_err(serde::de::Error::custom)
    }
}

impl Mask {
    pub fn empty(width: u16, height: u16) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn dims(&self) -> (u16, u16) {
        (self.width, self.height)
    }

    fn index(&self, cell: Cell) -> Option<usize> {
        (cell.x < self.width && cell.y < self.height)
            .then(|| cell.y as usize * self.width as usize + cell.x as usize)
    }

    pub fn get(&self, cell: Cell) -> bool {
        self.index(cell).is_some_and(|i| self.bits[i])
    }

    pub fn set(&mut self, cell: Cell, value: bool) {
        if let Some(i) = self.index(cell) {
            self.bits[i] = value;
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = Cell> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| Cell::new((i % w) as u16, (i / w) as u16))
    }

    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn runs(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_runs(width: u16, height: u16, runs: &[u32]) -> Result<Self, String> {
        let total = width as usize * height as usize;
        let mut bits = Vec::with_capacity(total);
        let mut value = false;
        for &r in runs {
            bits.extend(std::iter::repeat_n(value, r as usize));
            value = !value;
        }
        if bits.len() != total {
            return Err(format!("runs cover {} cells, expected {total}", bits.len()));
        }
        Ok(Mask { width, height, bits })
    }

    /// Cells of the 4-connected component containing `seed`.
    pub fn component(&self, seed: Cell) -> Mask {
        let mut out = Mask::empty(self.width, self.height);
        if !self.get(seed) {
            return out;
        }
        let mut stack = vec![seed];
        out.set(seed, true);
        while let Some(c) = stack.pop() {
            let mut neighbours = Vec::with_capacity(4);
            if c.x > 0 {
                neighbours.push(Cell::new(c.x - 1, c.y));
            }
            if c.y > 0 {
                neighbours.push(Cell::new(c.x, c.y - 1));
            }
            neighbours.push(Cell::new(c.x + 1, c.y));
            neighbours.push(Cell::new(c.x, c.y + 1));
            for n in neighbours {
                if self.get(n) && !out.get(n) {
                    out.set(n, true);
                    stack.push(n);
                }
            }
        }
        out
    }

    /// Number of 4-connected components.
    pub fn component_count(&self) -> usize {
        let mut seen = Mask::empty(self.width, self.height);
        let mut n = 0;
        for cell in self.iter_set().collect::<Vec<_>>() {
            if !seen.get(cell) {
                let comp = self.component(cell);
                for c in comp.iter_set() {
                    seen.set(c, true);
                }
                n += 1;
            }
        }
        n
    }
}
