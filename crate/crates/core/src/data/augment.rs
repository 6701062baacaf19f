use rand::Rng;
use serde::{Deserialize, Serialize};

/// A composition of flips and a quarter-turn rotation applied to a square
/// grid: horizontal flip, then vertical flip, then `rot90` counter-clockwise
/// quarter turns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: u8,
}

impl Transform {
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self { hflip: rng.random_bool(0.5), vflip: rng.random_bool(0.5), rot90: rng.random_range(0..4) }
    }

    pub fn is_identity(&self) -> bool {
        !self.hflip && !self.vflip && self.rot90.is_multiple_of(4)
    }

    /// Source coordinate in an `n x n` grid that lands on `(r, c)`.
    fn source(&self, n: usize, r: usize, c: usize) -> (usize, usize) {
        let last = n - 1;
        // Undo the rotation first: one counter-clockwise turn maps (r, c) from (c, last - r).
        let (mut r, mut c) = (r, c);
        for _ in 0..self.rot90 % 4 {
            (r, c) = (c, last - r);
        }
        if self.vflip {
            r = last - r;
        }
        if self.hflip {
            c = last - c;
        }
        (r, c)
    }

    /// Applies the transform to every `n x n` plane of `data`.
    pub fn apply<T: Copy>(&self, data: &[T], n: usize) -> Vec<T> {
        assert_eq!(data.len() % (n * n), 0, "data is not a stack of {n}x{n} planes");
        if self.is_identity() {
            return data.to_vec();
        }
        let mut out = Vec::with_capacity(data.len());
        for plane in data.chunks(n * n) {
            for r in 0..n {
                for c in 0..n {
                    let (sr, sc) = self.source(n, r, c);
                    out.push(plane[sr * n + sc]);
                }
            }
        }
        out
    }
}

/// Training-time augmentation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentation {
    pub flips: bool,
    pub rotations: bool,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { flips: true, rotations: true }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self { flips: false, rotations: false }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Transform {
        let t = Transform::sample(rng);
        Transform { hflip: self.flips && t.hflip, vflip: self.flips && t.vflip, rot90: if self.rotations { t.rot90 } else { 0 } }
    }
}
