//! ArUco bit dictionaries.
//!
//! Codes are the 4×4 data cells of each marker, row-major starting at the
//! marker's top-left cell, most significant bit first, `1` = white.

#[derive(Debug)]
pub struct Dictionary {
    pub name: &'static str,
    /// Data cells per side (the printed marker adds a one-cell black border).
    pub bits: usize,
    codes: &'static [u16],
}

/// Matches OpenCV's `DICT_4X4_50` bit for bit.
static ARUCO_4X4_50_CODES: [u16; 50] = [
    0xB532, 0x0F9A, 0x332D, 0x9946, 0x549E, 0x79CD, 0x9E2E, 0xC4F2, 0xFEDA, 0xCF56, //
    0xF991, 0x11A7, 0x0EB7, 0x2A0F, 0x24B1, 0x263E, 0x4665, 0x6600, 0x6C5E, 0x76AF, //
    0x868B, 0xB02B, 0xCCD5, 0xDD82, 0xFE47, 0x9471, 0xACE4, 0xA554, 0x2123, 0x346F, //
    0x4415, 0x57B2, 0x9ECF, 0xF0CB, 0x08AE, 0x0929, 0x1875, 0x04FF, 0x0DF6, 0x1C5A, //
    0x1718, 0x2A28, 0x328C, 0x38B2, 0x24E8, 0x2EEB, 0x2D3F, 0x4B64, 0x502E, 0x5013, //
];

static ARUCO_4X4_50: Dictionary = Dictionary {
    name: Dictionary::ARUCO_4X4_50,
    bits: 4,
    codes: &ARUCO_4X4_50_CODES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictionaryMatch {
    pub id: u16,
    /// Number of clockwise quarter turns applied to the stored code to
    /// reproduce the observed grid.
    pub rotation: u8,
    pub distance: u32,
}

impl Dictionary {
    pub const ARUCO_4X4_50: &'static str = "ARUCO_4X4_50";

    pub fn by_name(name: &str) -> Option<&'static Dictionary> {
        match name.to_ascii_uppercase().as_str() {
            "ARUCO_4X4_50" | "DICT_4X4_50" => Some(&ARUCO_4X4_50),
            _ => None,
        }
    }

    pub fn aruco_4x4_50() -> &'static Dictionary {
        &ARUCO_4X4_50
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, id: u16) -> Option<u16> {
        self.codes.get(id as usize).copied()
    }

    /// Bit grid (true = white) of the data cells.
    pub fn grid(&self, id: u16) -> Option<Vec<Vec<bool>>> {
        let code = self.code(id)?;
        let n = self.bits;
        Some(
            (0..n)
                .map(|r| {
                    (0..n)
                        .map(|c| code >> (n * n - 1 - (r * n + c)) & 1 == 1)
                        .collect()
                })
                .collect(),
        )
    }

    /// Best match of an observed code over all IDs and rotations, if within
    /// `max_distance` bit flips. Ties go to the lowest ID, then rotation.
    pub fn lookup(&self, observed: u16, max_distance: u32) -> Option<DictionaryMatch> {
        let mut best: Option<DictionaryMatch> = None;
        for (id, &code) in self.codes.iter().enumerate() {
            let mut rotated = code;
            for rotation in 0..4u8 {
                let distance = (rotated ^ observed).count_ones();
                if best.is_none_or(|b| distance < b.distance) {
                    best = Some(DictionaryMatch {
                        id: id as u16,
                        rotation,
                        distance,
                    });
                }
                rotated = rotate_cw(rotated, self.bits);
            }
        }
        best.filter(|m| m.distance <= max_distance)
    }
}

/// Rotates an `n×n` row-major bit grid by a quarter turn clockwise.
pub fn rotate_cw(code: u16, n: usize) -> u16 {
    let bit = |r: usize, c: usize| (code >> (n * n - 1 - (r * n + c))) & 1;
    let mut out = 0u16;
    for r in 0..n {
        for c in 0..n {
            // new[r][c] = old[n-1-c][r]
            out |= bit(n - 1 - c, r) << (n * n - 1 - (r * n + c));
        }
    }
    out
}

pub fn hamming(a: u16, b: u16) -> u32 {
    (a ^ b).count_ones()
}
