//! Boundary distribution maps.
//!
//! A boundary distribution map (BDM) assigns every pixel a Gaussian of its
//! Euclidean distance to the object boundary. The distance comes from an exact
//! two-pass lower-envelope transform computed entirely in integer arithmetic,
//! so squared distances are bit-identical to a brute-force search.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::GrayImage;

use crate::{Error, Result};

/// A 2-D grid of `{0, 1}` labels stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidMask(format!("empty extent {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::InvalidMask(format!(
                "expected {} values for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidMask(format!("value {v} is not 0 or 1")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "mask extent must be non-zero");
        Self { height, width, data: vec![0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                mask.data[r * width + c] = u8::from(f(r, c));
            }
        }
        mask
    }

    /// Thresholds an 8-bit grey image: values `>= 128` become foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_fn(h as usize, w as usize, |r, c| img.get_pixel(c as u32, r as u32)[0] >= 128)
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |c, r| {
            image::Luma([if self.get(r as usize, c as usize) { 255 } else { 0 }])
        })
    }

    /// Loads any image format the `image` crate understands. Colour and 16-bit
    /// inputs are first reduced to 8-bit luma, then thresholded at 128.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_gray(&img.to_luma8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_gray().save(path).map_err(|e| Error::image(path, e))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c] != 0
    }

    pub fn set(&mut self, r: usize, c: usize, on: bool) {
        self.data[r * self.width + c] = u8::from(on);
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |r, c| self.get(r, self.width - 1 - c))
    }
}

/// Which pixels count as "the boundary" of a mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Foreground pixels with a 4-neighbour inside the image that is background.
    #[default]
    Inner,
    /// Inner boundary plus background pixels 4-adjacent to foreground.
    Symmetric,
}

/// Boundary pixels of `mask` under [`BoundaryMode::Inner`]. The image border
/// is not treated as background.
pub fn extract_boundary(mask: &BinaryMask) -> BinaryMask {
    extract_boundary_with(mask, BoundaryMode::Inner)
}

pub fn extract_boundary_with(mask: &BinaryMask, mode: BoundaryMode) -> BinaryMask {
    let (h, w) = (mask.height, mask.width);
    BinaryMask::from_fn(h, w, |r, c| {
        let me = mask.get(r, c);
        if !me && mode == BoundaryMode::Inner {
            return false;
        }
        let differs = |rr: usize, cc: usize| mask.get(rr, cc) != me;
        (r > 0 && differs(r - 1, c))
            || (r + 1 < h && differs(r + 1, c))
            || (c > 0 && differs(r, c - 1))
            || (c + 1 < w && differs(r, c + 1))
    })
}

/// Exact squared distances to the nearest set pixel, plus the row-major index
/// of that pixel.
///
/// When several set pixels are equally close, the one with the smallest
/// row-major index is reported.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureTransform {
    pub height: usize,
    pub width: usize,
    pub sq_dist: Vec<u64>,
    pub nearest: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
enum Bound {
    NegInf,
    At { num: i64, den: i64 },
    PosInf,
}

impl Bound {
    // self <= other
    fn le(self, other: Bound) -> bool {
        match (self, other) {
            (Bound::NegInf, _) | (_, Bound::PosInf) => true,
            (_, Bound::NegInf) | (Bound::PosInf, _) => false,
            (Bound::At { num: a, den: b }, Bound::At { num: c, den: d }) => {
                (a as i128) * (d as i128) <= (c as i128) * (b as i128)
            }
        }
    }

    // self < x for an integer x
    fn lt_int(self, x: i64) -> bool {
        match self {
            Bound::NegInf => true,
            Bound::PosInf => false,
            Bound::At { num, den } => (num as i128) < (x as i128) * (den as i128),
        }
    }
}

/// Row pass then column lower envelope. Returns `None` when `set` is empty.
pub fn feature_transform(set: &BinaryMask) -> Option<FeatureTransform> {
    let (h, w) = (set.height, set.width);
    if set.count_ones() == 0 {
        return None;
    }

    // Row pass: nearest set column within each row (ties go left).
    let mut row_col: Vec<Option<usize>> = vec![None; h * w];
    for r in 0..h {
        let row = &set.data[r * w..(r + 1) * w];
        let mut left = vec![None; w];
        let mut last = None;
        for c in 0..w {
            if row[c] != 0 {
                last = Some(c);
            }
            left[c] = last;
        }
        let mut next = None;
        for c in (0..w).rev() {
            if row[c] != 0 {
                next = Some(c);
            }
            row_col[r * w + c] = match (left[c], next) {
                (Some(l), Some(n)) => Some(if c - l <= n - c { l } else { n }),
                (l, n) => l.or(n),
            };
        }
    }

    let mut sq_dist = vec![0u64; h * w];
    let mut nearest = vec![0usize; h * w];
    let mut rows: Vec<usize> = Vec::with_capacity(h);
    let mut offs: Vec<i64> = Vec::with_capacity(h);
    let mut env: Vec<usize> = Vec::with_capacity(h);
    let mut bounds: Vec<Bound> = Vec::with_capacity(h + 1);

    for c in 0..w {
        rows.clear();
        offs.clear();
        for r in 0..h {
            if let Some(cc) = row_col[r * w + c] {
                let dc = c.abs_diff(cc) as i64;
                rows.push(r);
                offs.push(dc * dc);
            }
        }
        // Every row with a set pixel contributes, so `rows` is non-empty here.
        env.clear();
        bounds.clear();
        env.push(0);
        bounds.push(Bound::NegInf);
        bounds.push(Bound::PosInf);
        for q in 1..rows.len() {
            let rq = rows[q] as i64;
            let fq = offs[q] + rq * rq;
            let s = loop {
                let p = *env.last().expect("envelope is never empty");
                let rp = rows[p] as i64;
                let fp = offs[p] + rp * rp;
                let s = Bound::At { num: fq - fp, den: 2 * (rq - rp) };
                let k = env.len() - 1;
                if k > 0 && s.le(bounds[k]) {
                    env.pop();
                    bounds.pop();
                } else {
                    break s;
                }
            };
            let k = env.len();
            env.push(q);
            bounds[k] = s;
            bounds.push(Bound::PosInf);
        }
        let mut k = 0;
        for r in 0..h {
            while bounds[k + 1].lt_int(r as i64) {
                k += 1;
            }
            let src = env[k];
            let dr = r.abs_diff(rows[src]) as u64;
            let idx = r * w + c;
            sq_dist[idx] = dr * dr + offs[src] as u64;
            let src_row = rows[src];
            let src_col = row_col[src_row * w + c].expect("row has a set pixel");
            nearest[idx] = src_row * w + src_col;
        }
    }

    Some(FeatureTransform { height: h, width: w, sq_dist, nearest })
}

/// Per-pixel Euclidean distance to the nearest boundary pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    pub height: usize,
    pub width: usize,
    /// Distances in pixels; `+inf` everywhere when `has_boundary` is false.
    pub values: Vec<f64>,
    pub has_boundary: bool,
}

impl DistanceField {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }
}

pub fn distance_transform(boundary: &BinaryMask) -> DistanceField {
    let (height, width) = (boundary.height, boundary.width);
    match feature_transform(boundary) {
        Some(ft) => {
            DistanceField { height, width, values: ft.sq_dist.iter().map(|&d| (d as f64).sqrt()).collect(), has_boundary: true }
        }
        None => DistanceField { height, width, values: vec![f64::INFINITY; height * width], has_boundary: false },
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BdmOptions {
    pub sigma: f64,
    /// `true` rescales the peak to 1; `false` keeps the `1/(sqrt(2*pi)*sigma)` density factor.
    pub normalized: bool,
    pub boundary: BoundaryMode,
}

impl Default for BdmOptions {
    fn default() -> Self {
        Self { sigma: 5.0, normalized: true, boundary: BoundaryMode::Inner }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryDistributionMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub sigma: f64,
    pub normalized: bool,
}

/// Peak value of the Gaussian boundary density for `sigma`.
pub fn gaussian_peak(sigma: f64, normalized: bool) -> f64 {
    if normalized {
        1.0
    } else {
        1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
    }
}

pub fn ideal_bdm(mask: &BinaryMask, sigma: f64, normalized: bool) -> Result<BoundaryDistributionMap> {
    ideal_bdm_with(mask, &BdmOptions { sigma, normalized, boundary: BoundaryMode::Inner })
}

pub fn ideal_bdm_with(mask: &BinaryMask, opts: &BdmOptions) -> Result<BoundaryDistributionMap> {
    if !(opts.sigma > 0.0) || !opts.sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive and finite, got {}", opts.sigma)));
    }
    let boundary = extract_boundary_with(mask, opts.boundary);
    let n = mask.height * mask.width;
    let values = match feature_transform(&boundary) {
        None => vec![0.0; n],
        Some(ft) => {
            let peak = gaussian_peak(opts.sigma, opts.normalized);
            let denom = 2.0 * opts.sigma * opts.sigma;
            ft.sq_dist.iter().map(|&d2| peak * (-(d2 as f64) / denom).exp()).collect()
        }
    };
    Ok(BoundaryDistributionMap { height: mask.height, width: mask.width, values, sigma: opts.sigma, normalized: opts.normalized })
}

const RAW_MAGIC: &str = "BDM-F32";

impl BoundaryDistributionMap {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.width + c]
    }

    /// 8-bit preview: values clamped to `[0, 1]` and scaled by 255.
    pub fn to_preview(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |c, r| {
            let v = self.get(r as usize, c as usize).clamp(0.0, 1.0);
            image::Luma([(v * 255.0).round() as u8])
        })
    }

    pub fn save_preview(&self, path: &Path) -> Result<()> {
        self.to_preview().save(path).map_err(|e| Error::image(path, e))
    }

    /// Text header followed by little-endian `f32` values, row-major.
    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 4 * self.values.len());
        write!(
            out,
            "{RAW_MAGIC}\nheight={}\nwidth={}\nsigma={}\nnormalized={}\ndata\n",
            self.height, self.width, self.sigma, self.normalized
        )
        .expect("writing to a Vec cannot fail");
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_raw_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Data(format!("raw BDM: {msg}"));
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not utf-8"))?;
            pos += end + 1;
            Ok(line)
        };
        if next_line()? != RAW_MAGIC {
            return Err(bad("missing magic line"));
        }
        let (mut height, mut width, mut sigma, mut normalized) = (None, None, None, None);
        loop {
            let line = next_line()?;
            if line == "data" {
                break;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| bad("malformed header line"))?;
            match key {
                "height" => height = value.parse::<usize>().ok(),
                "width" => width = value.parse::<usize>().ok(),
                "sigma" => sigma = value.parse::<f64>().ok(),
                "normalized" => normalized = value.parse::<bool>().ok(),
                _ => return Err(bad(&format!("unknown header key `{key}`"))),
            }
        }
        let (height, width, sigma, normalized) = match (height, width, sigma, normalized) {
            (Some(h), Some(w), Some(s), Some(n)) => (h, w, s, n),
            _ => return Err(bad("incomplete header")),
        };
        let body = &bytes[pos..];
        if body.len() != 4 * height * width {
            return Err(bad(&format!("expected {} data bytes, got {}", 4 * height * width, body.len())));
        }
        let values = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        Ok(Self { height, width, values, sigma, normalized })
    }

    pub fn save_raw(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_raw_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_raw_bytes(&bytes)
    }
}
