//! Multi-indices of the auxiliary Wigner functions.
//!
//! A multi-index is a vector of `(Kx + 1) + (Ky + 1)` non-negative integers,
//! laid out as `[n_x^0, .., n_x^Kx, n_y^0, .., n_y^Ky]`. Indices are stored in
//! graded lexicographic order so that every depth truncation is a prefix.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::pade::{Axis, PadeSet};

const NONE: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error(
        "hierarchy of {count} auxiliary functions x {cells} cells needs {bytes} bytes, over the {budget}-byte budget; lower n_max, K or the grid size"
    )]
    CapacityExceeded { count: usize, cells: usize, bytes: u128, budget: u128 },
}

#[derive(Clone, Debug)]
pub struct HierarchyIndexSet {
    kx: usize,
    ky: usize,
    nmax: usize,
    width: usize,
    /// Flattened components, `width` per index.
    components: Vec<u32>,
    plus: Vec<u32>,
    minus: Vec<u32>,
}

/// Number of multi-indices with `width` components and total weight at most
/// `nmax`: `C(width + nmax, nmax)`.
pub fn index_count(width: usize, nmax: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 1..=nmax as u128 {
        c = c * (width as u128 + i) / i;
    }
    c
}

impl HierarchyIndexSet {
    pub fn enumerate(kx: usize, ky: usize, nmax: usize) -> Self {
        let width = kx + ky + 2;
        let mut components = Vec::new();
        for depth in 0..=nmax {
            let mut current = vec![0u32; width];
            compositions(&mut current, 0, depth as u32, &mut components);
        }
        let count = components.len() / width;

        let lookup: HashMap<&[u32], u32> = components.chunks_exact(width).enumerate().map(|(i, c)| (c, i as u32)).collect();
        let mut plus = vec![NONE; count * width];
        let mut minus = vec![NONE; count * width];
        let mut probe = vec![0u32; width];
        for id in 0..count {
            let v = &components[id * width..(id + 1) * width];
            for c in 0..width {
                probe.copy_from_slice(v);
                probe[c] += 1;
                if let Some(&p) = lookup.get(probe.as_slice()) {
                    plus[id * width + c] = p;
                }
                if v[c] > 0 {
                    probe[c] -= 2;
                    minus[id * width + c] = lookup[probe.as_slice()];
                }
            }
        }
        Self { kx, ky, nmax, width, components, plus, minus }
    }

    /// Enumerates only after checking that the state fits in `budget_bytes`
    /// of `f64` storage at `cells` grid points per index.
    pub fn enumerate_within(kx: usize, ky: usize, nmax: usize, cells: usize, budget_bytes: u128) -> Result<Self, HierarchyError> {
        let count = index_count(kx + ky + 2, nmax);
        let bytes = count * cells as u128 * 8;
        if bytes > budget_bytes {
            return Err(HierarchyError::CapacityExceeded {
                count: count.min(usize::MAX as u128) as usize,
                cells,
                bytes,
                budget: budget_bytes,
            });
        }
        Ok(Self::enumerate(kx, ky, nmax))
    }

    pub fn len(&self) -> usize {
        self.components.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn kx(&self) -> usize {
        self.kx
    }

    pub fn ky(&self) -> usize {
        self.ky
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    /// Components per multi-index.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn components(&self, id: usize) -> &[u32] {
        &self.components[id * self.width..(id + 1) * self.width]
    }

    pub fn depth(&self, id: usize) -> u32 {
        self.components(id).iter().sum()
    }

    /// Flat component slot of mode `j` on `axis`.
    pub fn slot(&self, axis: Axis, j: usize) -> usize {
        match axis {
            Axis::X => {
                assert!(j <= self.kx, "mode {j} out of range for axis x");
                j
            }
            Axis::Y => {
                assert!(j <= self.ky, "mode {j} out of range for axis y");
                self.kx + 1 + j
            }
        }
    }

    /// Inverse of [`slot`](Self::slot).
    pub fn mode_of_slot(&self, slot: usize) -> (Axis, usize) {
        if slot <= self.kx {
            (Axis::X, slot)
        } else {
            (Axis::Y, slot - self.kx - 1)
        }
    }

    pub fn plus(&self, id: usize, slot: usize) -> Option<usize> {
        decode(self.plus[id * self.width + slot])
    }

    pub fn minus(&self, id: usize, slot: usize) -> Option<usize> {
        decode(self.minus[id * self.width + slot])
    }

    pub fn plus_neighbor(&self, id: usize, axis: Axis, j: usize) -> Option<usize> {
        self.plus(id, self.slot(axis, j))
    }

    pub fn minus_neighbor(&self, id: usize, axis: Axis, j: usize) -> Option<usize> {
        self.minus(id, self.slot(axis, j))
    }

    pub fn find(&self, components: &[u32]) -> Option<usize> {
        // Linear scan; only used by tooling and tests.
        self.components.chunks_exact(self.width).position(|c| c == components)
    }

    /// `Σ_α Σ_j n_α^j ν_j^α` for one index.
    pub fn decay_rate(&self, id: usize, x: &PadeSet, y: &PadeSet) -> f64 {
        let c = self.components(id);
        let rates = x.nu.iter().chain(&y.nu);
        c.iter().zip(rates).map(|(&n, &nu)| n as f64 * nu).sum()
    }

    pub fn decay_rates(&self, x: &PadeSet, y: &PadeSet) -> Vec<f64> {
        assert_eq!(x.nu.len(), self.kx + 1, "x-axis Padé set does not match Kx");
        assert_eq!(y.nu.len(), self.ky + 1, "y-axis Padé set does not match Ky");
        (0..self.len()).map(|id| self.decay_rate(id, x, y)).collect()
    }

    /// Writes `id,c0,..,c{w-1},decay` rows.
    pub fn write_csv<W: Write>(&self, mut out: W, x: &PadeSet, y: &PadeSet) -> std::io::Result<()> {
        write!(out, "id")?;
        for slot in 0..self.width {
            let (axis, j) = self.mode_of_slot(slot);
            write!(out, ",n_{axis}{j}")?;
        }
        writeln!(out, ",decay")?;
        for id in 0..self.len() {
            write!(out, "{id}")?;
            for c in self.components(id) {
                write!(out, ",{c}")?;
            }
            writeln!(out, ",{:e}", self.decay_rate(id, x, y))?;
        }
        Ok(())
    }
}

fn decode(v: u32) -> Option<usize> {
    (v != NONE).then_some(v as usize)
}

/// Appends all compositions of `remaining` into `current[pos..]` in ascending
/// lexicographic order.
fn compositions(current: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<u32>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.extend_from_slice(current);
        current[pos] = 0;
        return;
    }
    for v in 0..=remaining {
        current[pos] = v;
        compositions(current, pos + 1, remaining - v, out);
    }
    current[pos] = 0;
}
