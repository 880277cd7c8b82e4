use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::roi::SparsePointSet;
use crate::sim::Cell;

pub const FEATURES: usize = 4;
pub const KERNEL_VOLUME: usize = 27;
/// Position of the zero offset in [`kernel_offsets`].
pub const CENTER_OFFSET: usize = 13;

/// The 27 offsets of a 3x3x3 kernel, last axis fastest.
pub fn kernel_offsets() -> [[i32; 3]; KERNEL_VOLUME] {
    std::array::from_fn(|k| [k as i32 / 9 - 1, (k as i32 / 3) % 3 - 1, k as i32 % 3 - 1])
}

/// Active sites of one or more frames. Sites are keyed by `(frame, cell)`, so
/// frames packed into one grid never interact.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGrid {
    pub frames: Vec<u32>,
    pub coords: Vec<Cell>,
    /// `[N, C]`
    pub features: Tensor,
}

impl SparseGrid {
    pub fn new(frames: Vec<u32>, coords: Vec<Cell>, features: Tensor) -> Result<Self> {
        let n = coords.len();
        if frames.len() != n || features.shape().len() != 2 || features.shape()[0] != n {
            return Err(Error::Contract(format!(
                "grid with {n} coords, {} frame tags and features {:?}",
                frames.len(),
                features.shape()
            )));
        }
        let mut seen = HashMap::with_capacity(n);
        for (i, (&f, &c)) in frames.iter().zip(&coords).enumerate() {
            if let Some(j) = seen.insert((f, c), i) {
                return Err(Error::Contract(format!("duplicate site {c:?} in frame {f} (points {j} and {i})")));
            }
        }
        Ok(Self {
            frames,
            coords,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.shape()[1]
    }
}

/// One site per point with its normalized features; point `i` becomes site `i`.
pub fn voxelize(set: &SparsePointSet) -> Result<SparseGrid> {
    voxelize_batch(&[set])
}

/// Packs several frames into one grid, frames in order.
pub fn voxelize_batch(sets: &[&SparsePointSet]) -> Result<SparseGrid> {
    let n: usize = sets.iter().map(|s| s.len()).sum();
    let mut frames = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    let mut feats = Vec::with_capacity(n * FEATURES);
    for (fi, s) in sets.iter().enumerate() {
        for p in &s.points {
            frames.push(fi as u32);
            coords.push(p.cell);
            feats.extend_from_slice(&p.features);
        }
    }
    SparseGrid::new(frames, coords, Tensor::from_vec(&[n, FEATURES], feats)?)
}

/// For each kernel offset, `(input site, output site)` pairs with
/// `input = output + offset` both active.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMap {
    pub pairs: Vec<Vec<(u32, u32)>>,
    pub sites: usize,
}

impl KernelMap {
    pub fn build(grid: &SparseGrid) -> Self {
        let index: HashMap<(u32, Cell), u32> = grid
            .frames
            .iter()
            .zip(&grid.coords)
            .enumerate()
            .map(|(i, (&f, &c))| ((f, c), i as u32))
            .collect();
        let mut pairs = vec![Vec::new(); KERNEL_VOLUME];
        for (k, off) in kernel_offsets().iter().enumerate() {
            if k == CENTER_OFFSET {
                pairs[k] = (0..grid.len() as u32).map(|i| (i, i)).collect();
                continue;
            }
            for (out, (&f, &c)) in grid.frames.iter().zip(&grid.coords).enumerate() {
                let mut nb = [0u32; 3];
                let mut valid = true;
                for ax in 0..3 {
                    let v = c[ax] as i64 + off[ax] as i64;
                    if v < 0 {
                        valid = false;
                        break;
                    }
                    nb[ax] = v as u32;
                }
                if !valid {
                    continue;
                }
                if let Some(&inp) = index.get(&(f, nb)) {
                    pairs[k].push((inp, out as u32));
                }
            }
        }
        Self {
            pairs,
            sites: grid.len(),
        }
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roi::RoiPoint;

    fn set(cells: &[Cell]) -> SparsePointSet {
        SparsePointSet {
            points: cells
                .iter()
                .enumerate()
                .map(|(i, &cell)| RoiPoint {
                    cell,
                    seed: 0,
                    distance: 0,
                    intensity: i as f64,
                    features: [i as f64, -(i as f64), 0.5, 0.25],
                    label: None,
                })
                .collect(),
            visited: cells.len(),
        }
    }

    #[test]
    fn offsets_center() {
        assert_eq!(kernel_offsets()[CENTER_OFFSET], [0, 0, 0]);
        assert_eq!(kernel_offsets()[0], [-1, -1, -1]);
        assert_eq!(kernel_offsets()[26], [1, 1, 1]);
    }

    #[test]
    fn identity_voxelization_round_trip() {
        let s = set(&[[1, 2, 3], [0, 0, 0], [4, 4, 4]]);
        let g = voxelize(&s).unwrap();
        assert_eq!(g.len(), 3);
        for (i, p) in s.points.iter().enumerate() {
            assert_eq!(g.coords[i], p.cell);
            assert_eq!(&g.features.data()[i * 4..i * 4 + 4], &p.features);
        }
        assert!(voxelize(&set(&[])).unwrap().is_empty());
    }

    #[test]
    fn duplicates_rejected() {
        let e = voxelize(&set(&[[1, 1, 1], [1, 1, 1]])).unwrap_err();
        assert!(matches!(e, Error::Contract(_)));
        // the same cell in two frames is fine
        let s = set(&[[1, 1, 1]]);
        assert_eq!(voxelize_batch(&[&s, &s]).unwrap().len(), 2);
    }

    #[test]
    fn kernel_map_pairs() {
        let s = set(&[[1, 1, 1], [1, 1, 2], [3, 3, 3]]);
        let km = KernelMap::build(&voxelize(&s).unwrap());
        assert_eq!(km.pairs[CENTER_OFFSET], vec![(0, 0), (1, 1), (2, 2)]);
        // offset (0,0,+1): output 0 reads input 1
        assert_eq!(km.pairs[14], vec![(1, 0)]);
        assert_eq!(km.pairs[12], vec![(0, 1)]);
        assert_eq!(km.pair_count(), 5);
        assert!(km.pair_count() <= KERNEL_VOLUME * km.sites);
        let km2 = KernelMap::build(&voxelize_batch(&[&s, &s]).unwrap());
        assert_eq!(km2.pair_count(), 10);
    }
}
