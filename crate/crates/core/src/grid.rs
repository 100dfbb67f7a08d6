//! Structured lattice masks.

use std::collections::VecDeque;

/// Solid/fluid flags on an `nx × ny` lattice, row-major with x fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolidMask {
    nx: usize,
    ny: usize,
    cells: Vec<bool>,
}

impl SolidMask {
    pub fn all_fluid(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            cells: vec![false; nx * ny],
        }
    }

    /// Flat channel: rows 0 and `ny - 1` solid.
    pub fn smooth_channel(nx: usize, ny: usize) -> Self {
        let mut mask = Self::all_fluid(nx, ny);
        for i in 0..nx {
            mask.set(i, 0, true);
            mask.set(i, ny - 1, true);
        }
        mask
    }

    pub fn from_cells(nx: usize, ny: usize, cells: Vec<bool>) -> Self {
        assert_eq!(cells.len(), nx * ny, "mask size mismatch");
        Self { nx, ny, cells }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.nx * j
    }

    #[inline]
    pub fn is_solid(&self, i: usize, j: usize) -> bool {
        self.cells[i + self.nx * j]
    }

    #[inline]
    pub fn is_solid_at(&self, n: usize) -> bool {
        self.cells[n]
    }

    pub fn set(&mut self, i: usize, j: usize, solid: bool) {
        let n = self.index(i, j);
        self.cells[n] = solid;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn fluid_count(&self) -> usize {
        self.cells.iter().filter(|s| !**s).count()
    }

    /// Fluid rows of column `i`, bottom to top.
    pub fn fluid_rows(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.ny).filter(move |&j| !self.is_solid(i, j))
    }

    /// Half-way wall heights of column `i`: `(bottom, top)` in lattice units,
    /// measured from the lowest solid run and the highest solid run.
    pub fn wall_heights(&self, i: usize) -> Option<(f64, f64)> {
        let lo = (0..self.ny).find(|&j| !self.is_solid(i, j))?;
        let hi = (0..self.ny).rev().find(|&j| !self.is_solid(i, j))?;
        Some((lo as f64 - 0.5, hi as f64 + 0.5))
    }

    /// True when some solid node lies strictly closer than `radius` to the
    /// point `(x, y)` (lattice units).
    pub fn near_solid(&self, x: f64, y: f64, radius: f64) -> bool {
        let r = radius.ceil() as i64;
        let ci = x.floor() as i64;
        let cj = y.floor() as i64;
        for dj in -r..=r + 1 {
            for di in -r..=r + 1 {
                let i = ci + di;
                let j = cj + dj;
                if i < 0 || j < 0 || i >= self.nx as i64 || j >= self.ny as i64 {
                    continue;
                }
                if self.cells[i as usize + self.nx * j as usize] {
                    let dx = i as f64 - x;
                    let dy = j as f64 - y;
                    if dx * dx + dy * dy < radius * radius {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// True when the fluid nodes form one 4-connected component touching
    /// both the first and the last column.
    pub fn fluid_spans_inlet_to_outlet(&self) -> bool {
        let Some(start) = (0..self.ny).find(|&j| !self.is_solid(0, j)) else {
            return false;
        };
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::new();
        seen[self.index(0, start)] = true;
        queue.push_back((0usize, start));
        let mut reached = 1usize;
        while let Some((i, j)) = queue.pop_front() {
            let mut visit = |a: usize, b: usize, queue: &mut VecDeque<(usize, usize)>| {
                let n = a + self.nx * b;
                if !self.cells[n] && !seen[n] {
                    seen[n] = true;
                    reached += 1;
                    queue.push_back((a, b));
                }
            };
            if i > 0 {
                visit(i - 1, j, &mut queue);
            }
            if i + 1 < self.nx {
                visit(i + 1, j, &mut queue);
            }
            if j > 0 {
                visit(i, j - 1, &mut queue);
            }
            if j + 1 < self.ny {
                visit(i, j + 1, &mut queue);
            }
        }
        let last = self.nx - 1;
        reached == self.fluid_count() && (0..self.ny).any(|j| seen[self.index(last, j)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_channel_walls() {
        let m = SolidMask::smooth_channel(4, 10);
        for i in 0..4 {
            assert!(m.is_solid(i, 0));
            assert!(m.is_solid(i, 9));
            assert!((1..9).all(|j| !m.is_solid(i, j)));
        }
        assert_eq!(m.wall_heights(2), Some((0.5, 8.5)));
        assert!(m.fluid_spans_inlet_to_outlet());
    }

    #[test]
    fn near_solid_radius() {
        let m = SolidMask::smooth_channel(10, 10);
        assert!(m.near_solid(3.0, 0.5, 1.0));
        assert!(!m.near_solid(3.0, 1.0, 1.0));
        assert!(!m.near_solid(3.3, 4.5, 1.0));
    }

    #[test]
    fn disconnected_fluid_detected() {
        let mut m = SolidMask::smooth_channel(6, 6);
        for j in 0..6 {
            m.set(3, j, true);
        }
        assert!(!m.fluid_spans_inlet_to_outlet());
    }
}
