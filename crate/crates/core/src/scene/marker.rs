//! 6×6 fiducial code: a one-cell black border around a 4×4 payload.
//!
//! Payload cells are `true` for white. The four payload corners carry a fixed
//! orientation mark (top-left white, the other three black), so exactly one
//! of the four rotations of a valid payload can be valid. The other twelve
//! cells hold the 10-bit id (LSB first, row-major) and a 2-bit weighted
//! parity over the id bits. Together the orientation mark and the parity form
//! the six check bits.

use serde::{Deserialize, Serialize};

pub const GRID: usize = 6;
pub const PAYLOAD: usize = 4;
pub const MAX_ID: u16 = 1023;

pub type Payload = [[bool; PAYLOAD]; PAYLOAD];
pub type Grid = [[bool; GRID]; GRID];

const CORNERS: [(usize, usize); 4] = [(0, 0), (0, 3), (3, 3), (3, 0)];
const ORIENTATION: [bool; 4] = [true, false, false, false];

fn data_cells() -> impl Iterator<Item = (usize, usize)> {
    (0..PAYLOAD).flat_map(|r| (0..PAYLOAD).map(move |c| (r, c))).filter(|rc| !CORNERS.contains(rc))
}

fn parity(id: u16) -> u8 {
    let s: u32 = (0..10).map(|i| ((id >> i) & 1) as u32 * (i + 1)).sum();
    (s % 4) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiducialMarker {
    pub id: u16,
    pub side_mm: f64,
}

impl FiducialMarker {
    pub fn new(id: u16, side_mm: f64) -> Option<Self> {
        (id <= MAX_ID && side_mm > 0.0).then_some(Self { id, side_mm })
    }

    pub fn payload(&self) -> Payload {
        encode_payload(self.id)
    }

    pub fn grid(&self) -> Grid {
        let p = self.payload();
        let mut g = [[false; GRID]; GRID];
        for r in 0..PAYLOAD {
            for c in 0..PAYLOAD {
                g[r + 1][c + 1] = p[r][c];
            }
        }
        g
    }

    /// White (`true`) or black cell at marker-local `(row, col)`.
    pub fn cell(&self, row: usize, col: usize) -> bool {
        self.grid()[row][col]
    }
}

pub fn encode_payload(id: u16) -> Payload {
    assert!(id <= MAX_ID, "marker id out of range");
    let mut p = [[false; PAYLOAD]; PAYLOAD];
    for (k, (r, c)) in CORNERS.iter().enumerate() {
        p[*r][*c] = ORIENTATION[k];
    }
    let par = parity(id);
    for (i, (r, c)) in data_cells().enumerate() {
        p[r][c] = if i < 10 { (id >> i) & 1 == 1 } else { (par >> (i - 10)) & 1 == 1 };
    }
    p
}

/// Decode a payload seen in canonical orientation.
pub fn decode_payload(p: &Payload) -> Option<u16> {
    for (k, (r, c)) in CORNERS.iter().enumerate() {
        if p[*r][*c] != ORIENTATION[k] {
            return None;
        }
    }
    let mut id = 0u16;
    let mut par = 0u8;
    for (i, (r, c)) in data_cells().enumerate() {
        if p[r][c] {
            if i < 10 {
                id |= 1 << i;
            } else {
                par |= 1 << (i - 10);
            }
        }
    }
    (parity(id) == par).then_some(id)
}

/// Rotate 90° clockwise (as seen with rows going down).
pub fn rotate_cw<const N: usize>(g: &[[bool; N]; N]) -> [[bool; N]; N] {
    let mut out = [[false; N]; N];
    for r in 0..N {
        for c in 0..N {
            out[r][c] = g[N - 1 - c][r];
        }
    }
    out
}

/// Decode an observed payload in any rotation. Returns `(id, k)` where the
/// observed pattern equals the canonical one rotated clockwise `k` times;
/// marker corner `j` is then observed at sampled-grid corner `(j + k) % 4`.
pub fn decode_any_rotation(observed: &Payload) -> Option<(u16, usize)> {
    let mut g = *observed;
    let mut found = None;
    for k in 0..4 {
        // g = observed rotated counter-clockwise k times
        if let Some(id) = decode_payload(&g) {
            if found.is_some() {
                return None;
            }
            found = Some((id, k));
        }
        g = rotate_cw(&rotate_cw(&rotate_cw(&g)));
    }
    found
}
