//! 4x4 grid geometry for region-targeted captioning.

use serde::{Deserialize, Serialize};

pub const GRID_SIZE: u32 = 4;

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn union(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRegion {
    pub row: u32,
    pub col: u32,
    pub pixel_rect: PixelRect,
    pub caption: Option<String>,
}

impl GridRegion {
    pub fn label(&self) -> String {
        format!("({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("image {width}x{height} is smaller than the 4x4 grid")]
pub struct TooSmall {
    pub width: u32,
    pub height: u32,
}

/// Splits `len` into four spans of `len / 4`, with the remainder added to
/// the last one.
fn spans(len: u32) -> [(u32, u32); GRID_SIZE as usize] {
    let base = len / GRID_SIZE;
    std::array::from_fn(|i| {
        let i = i as u32;
        let start = i * base;
        let end = if i == GRID_SIZE - 1 { len } else { start + base };
        (start, end)
    })
}

/// Row-major 4x4 partition of a `width x height` image (row 0 at the top).
pub fn grid_partition(width: u32, height: u32) -> Result<Vec<GridRegion>, TooSmall> {
    if width < GRID_SIZE || height < GRID_SIZE {
        return Err(TooSmall { width, height });
    }
    let xs = spans(width);
    let ys = spans(height);
    let mut out = Vec::with_capacity(16);
    for (row, &(y0, y1)) in ys.iter().enumerate() {
        for (col, &(x0, x1)) in xs.iter().enumerate() {
            out.push(GridRegion {
                row: row as u32,
                col: col as u32,
                pixel_rect: PixelRect { x0, y0, x1, y1 },
                caption: None,
            });
        }
    }
    Ok(out)
}

/// Region addresses the model picked, in reply order, deduplicated, valid
/// ones only, at most three.
///
/// `(r,c)` / `[r,c]` pairs are preferred; when the reply has none, bare
/// integers are read as row-major indices 0..=15.
pub fn parse_selection(reply: &str) -> Vec<(u32, u32)> {
    let pair = regex::Regex::new(r"[\(\[]\s*(\d+)\s*,\s*(\d+)\s*[\)\]]").expect("static regex");
    let mut picked: Vec<(u32, u32)> = Vec::new();
    let mut push = |rc: (u32, u32)| {
        if rc.0 < GRID_SIZE && rc.1 < GRID_SIZE && !picked.contains(&rc) && picked.len() < 3 {
            picked.push(rc);
        }
    };
    let pairs: Vec<(Option<u32>, Option<u32>)> = pair
        .captures_iter(reply)
        .map(|c| (c[1].parse().ok(), c[2].parse().ok()))
        .collect();
    if !pairs.is_empty() {
        for (r, c) in pairs {
            if let (Some(r), Some(c)) = (r, c) {
                push((r, c));
            }
        }
    } else {
        let flat = regex::Regex::new(r"\d+").expect("static regex");
        for m in flat.find_iter(reply) {
            if let Ok(i) = m.as_str().parse::<u32>() {
                if i < GRID_SIZE * GRID_SIZE {
                    push((i / GRID_SIZE, i % GRID_SIZE));
                }
            }
        }
    }
    picked
}

/// The block covering rows 1..=2 and cols 1..=2.
pub fn center_block(regions: &[GridRegion]) -> PixelRect {
    let at = |r: u32, c: u32| regions[(r * GRID_SIZE + c) as usize].pixel_rect;
    at(1, 1).union(&at(2, 2))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Oracle: every pixel belongs to exactly one region.
    fn brute_force_tiles(w: u32, h: u32, regions: &[GridRegion]) -> bool {
        for y in 0..h {
            for x in 0..w {
                let n = regions.iter().filter(|r| r.pixel_rect.contains(x, y)).count();
                if n != 1 {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn divisible_case() {
        let regions = grid_partition(400, 400).unwrap();
        assert_eq!(regions.len(), 16);
        assert!(regions.iter().all(|r| r.pixel_rect.width() == 100 && r.pixel_rect.height() == 100));
        assert_eq!(regions[5].label(), "(1,1)");
        assert_eq!(regions[5].pixel_rect, PixelRect { x0: 100, y0: 100, x1: 200, y1: 200 });
    }

    #[test]
    fn remainder_goes_to_last_row_and_col() {
        let regions = grid_partition(401, 403).unwrap();
        assert_eq!(regions[3].pixel_rect.width(), 101);
        assert_eq!(regions[12].pixel_rect.height(), 103);
        assert_eq!(regions[0].pixel_rect.width(), 100);
        let area: u64 = regions.iter().map(|r| r.pixel_rect.area()).sum();
        assert_eq!(area, 401 * 403);
        assert!(brute_force_tiles(401, 403, &regions));
    }

    #[test]
    fn minimum_size() {
        let regions = grid_partition(4, 4).unwrap();
        assert!(regions.iter().all(|r| r.pixel_rect.area() == 1));
        assert!(brute_force_tiles(4, 4, &regions));
        assert_eq!(grid_partition(3, 100), Err(TooSmall { width: 3, height: 100 }));
    }

    #[test]
    fn selection_parser_corpus() {
        let cases: &[(&str, &[(u32, u32)])] = &[
            ("(1,1)", &[(1, 1)]),
            ("region (1, 2) and (2,2)", &[(1, 2), (2, 2)]),
            ("[0,3]", &[(0, 3)]),
            ("(1,1), (1,1), (2,1)", &[(1, 1), (2, 1)]),
            ("(0,0) (0,1) (0,2) (0,3)", &[(0, 0), (0, 1), (0, 2)]),
            ("[]", &[]),
            ("", &[]),
            ("none of them", &[]),
            ("17", &[]),
            ("[9, 9]", &[]),
            ("(4,0) (1,3)", &[(1, 3)]),
            ("5", &[(1, 1)]),
            ("regions 0 and 15", &[(0, 0), (3, 3)]),
            ("17, 6", &[(1, 2)]),
            ("(9,9) 5", &[]),
        ];
        for (reply, want) in cases {
            assert_eq!(parse_selection(reply), want.to_vec(), "reply {reply:?}");
        }
    }

    #[test]
    fn center_block_rect() {
        let regions = grid_partition(400, 400).unwrap();
        assert_eq!(center_block(&regions), PixelRect { x0: 100, y0: 100, x1: 300, y1: 300 });
    }
}
