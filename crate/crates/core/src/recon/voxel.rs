use std::collections::HashMap;

use nalgebra::Vector3;

use crate::dataset::PointCloud;

/// Fixed-point scale for exact, order-independent coordinate sums.
const FIXED_SCALE: f64 = 4_294_967_296.0;

#[derive(Debug, Clone)]
struct Cell {
    sum: [i128; 3],
    color_sum: [u64; 3],
    count: u64,
    first: Vector3<f64>,
    first_color: [u8; 3],
}

/// Accumulates points into voxels and emits one centroid per occupied voxel.
///
/// The result does not depend on insertion order: sums are exact integers and the output is
/// sorted by voxel key. Singleton voxels return their original point unchanged.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    voxel_size: f64,
    cells: HashMap<[i64; 3], Cell>,
    colored: bool,
    inserted: usize,
}

impl VoxelGrid {
    pub fn new(voxel_size: f64) -> Self {
        Self { voxel_size, cells: HashMap::new(), colored: true, inserted: 0 }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn key(&self, p: &Vector3<f64>) -> [i64; 3] {
        [
            (p.x / self.voxel_size).floor() as i64,
            (p.y / self.voxel_size).floor() as i64,
            (p.z / self.voxel_size).floor() as i64,
        ]
    }

    pub fn occupied(&self) -> usize {
        self.cells.len()
    }

    pub fn insert(&mut self, cloud: &PointCloud) {
        if cloud.is_empty() {
            return;
        }
        self.colored &= cloud.colors.is_some();
        self.inserted += cloud.len();
        for (i, p) in cloud.points.iter().enumerate() {
            let c = cloud.colors.as_ref().map_or([0; 3], |c| c[i]);
            let q = [
                (p.x * FIXED_SCALE).round() as i128,
                (p.y * FIXED_SCALE).round() as i128,
                (p.z * FIXED_SCALE).round() as i128,
            ];
            let key = self.key(p);
            let cell = self.cells.entry(key).or_insert(Cell {
                sum: [0; 3],
                color_sum: [0; 3],
                count: 0,
                first: *p,
                first_color: c,
            });
            for a in 0..3 {
                cell.sum[a] += q[a];
                cell.color_sum[a] += u64::from(c[a]);
            }
            cell.count += 1;
        }
    }

    /// Combines two grids built with the same voxel size.
    pub fn merge(mut self, other: VoxelGrid) -> VoxelGrid {
        if other.inserted == 0 {
            return self;
        }
        if self.inserted == 0 {
            return other;
        }
        self.colored &= other.colored;
        self.inserted += other.inserted;
        for (key, cell) in other.cells {
            match self.cells.get_mut(&key) {
                Some(mine) => {
                    for a in 0..3 {
                        mine.sum[a] += cell.sum[a];
                        mine.color_sum[a] += cell.color_sum[a];
                    }
                    mine.count += cell.count;
                }
                None => {
                    self.cells.insert(key, cell);
                }
            }
        }
        self
    }

    pub fn to_cloud(&self) -> PointCloud {
        let mut keys: Vec<&[i64; 3]> = self.cells.keys().collect();
        keys.sort();
        let mut points = Vec::with_capacity(keys.len());
        let mut colors = Vec::with_capacity(keys.len());
        for key in keys {
            let cell = &self.cells[key];
            if cell.count == 1 {
                points.push(cell.first);
                colors.push(cell.first_color);
            } else {
                let n = cell.count as f64;
                points.push(Vector3::new(
                    cell.sum[0] as f64 / n / FIXED_SCALE,
                    cell.sum[1] as f64 / n / FIXED_SCALE,
                    cell.sum[2] as f64 / n / FIXED_SCALE,
                ));
                let avg = |s: u64| ((s + cell.count / 2) / cell.count) as u8;
                colors.push([avg(cell.color_sum[0]), avg(cell.color_sum[1]), avg(cell.color_sum[2])]);
            }
        }
        let colors = (self.colored && self.inserted > 0).then_some(colors);
        PointCloud { points, colors }
    }
}

/// Voxel-centroid downsampling of one cloud.
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> PointCloud {
    let mut grid = VoxelGrid::new(voxel_size);
    grid.insert(cloud);
    grid.to_cloud()
}
