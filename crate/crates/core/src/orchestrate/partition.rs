//! Uniform ground-plane partition of cameras into edges and devices.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};
use crate::scene::{Camera, CameraSet};

/// `P×P` devices under each of `E` edges, written `(PxP)*E`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PartitionSpec {
    pub device_grid: usize,
    pub edge_count: usize,
}

impl PartitionSpec {
    pub fn new(device_grid: usize, edge_count: usize) -> Result<Self> {
        if device_grid == 0 || edge_count == 0 {
            return Err(Error::PartitionSpec(format!("({device_grid}x{device_grid})*{edge_count}")));
        }
        Ok(PartitionSpec { device_grid, edge_count })
    }

    pub fn devices_per_edge(&self) -> usize {
        self.device_grid * self.device_grid
    }

    pub fn device_count(&self) -> usize {
        self.devices_per_edge() * self.edge_count
    }
}

impl fmt::Display for PartitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({p}x{p})*{e}", p = self.device_grid, e = self.edge_count)
    }
}

impl FromStr for PartitionSpec {
    type Err = Error;

    /// Accepts `x`, `X`, `×` or `*` between the two grid sides.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::PartitionSpec(s.to_string());
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let rest = t.strip_prefix('(').ok_or_else(bad)?;
        let (grid, edges) = rest.split_once(")*").ok_or_else(bad)?;
        let (a, b) = grid
            .split_once(['x', 'X', '×', '*'])
            .ok_or_else(bad)?;
        let a: usize = a.parse().map_err(|_| bad())?;
        let b: usize = b.parse().map_err(|_| bad())?;
        let e: usize = edges.parse().map_err(|_| bad())?;
        if a != b {
            return Err(bad());
        }
        PartitionSpec::new(a, e).map_err(|_| bad())
    }
}

/// Factor pair `(rows, cols)` of `e` with `rows ≤ cols` and the smallest difference.
pub fn edge_grid(e: usize) -> (usize, usize) {
    let mut rows = (e as f64).sqrt() as usize;
    while rows > 1 && e % rows != 0 {
        rows -= 1;
    }
    let rows = rows.max(1);
    (rows, e / rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceNode {
    /// `e{j}_d{i}`.
    pub id: String,
    pub edge: usize,
    pub index: usize,
    pub cameras: CameraSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeNode {
    /// `e{j}`.
    pub id: String,
    pub devices: Vec<DeviceNode>,
}

/// Cloud → edges → devices, with each input camera on exactly one device.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub spec: PartitionSpec,
    /// World axes spanning the ground plane.
    pub axes: [usize; 2],
    /// Ground rectangle `[min_a, max_a, min_b, max_b]`.
    pub rect: [f64; 4],
    pub edges: Vec<EdgeNode>,
}

impl Topology {
    pub fn devices(&self) -> impl Iterator<Item = &DeviceNode> {
        self.edges.iter().flat_map(|e| e.devices.iter())
    }

    pub fn device(&self, id: &str) -> Option<&DeviceNode> {
        self.devices().find(|d| d.id == id)
    }

    pub fn camera_count(&self) -> usize {
        self.devices().map(|d| d.cameras.len()).sum()
    }

    /// `device_id camera_id` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!("# spec {}\n", self.spec);
        for d in self.devices() {
            for c in &d.cameras {
                s.push_str(&format!("{} {}\n", d.id, c.id));
            }
        }
        s
    }
}

pub fn device_id(edge: usize, index: usize) -> String {
    format!("e{edge}_d{index}")
}

pub fn edge_id(edge: usize) -> String {
    format!("e{edge}")
}

/// The two longest axes of `extent`, lower index first on ties.
pub fn ground_axes(extent: &Aabb) -> [usize; 2] {
    let s = extent.size();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut axes = [order[0], order[1]];
    axes.sort_unstable();
    axes
}

/// Cell of `c` among `n` equal cells of `[lo, hi]`; a point on a boundary
/// goes to the lower cell and points outside clamp to the ends.
fn cell_of(c: f64, lo: f64, hi: f64, n: usize) -> usize {
    if !(hi > lo) {
        return 0;
    }
    let k = ((c - lo) / (hi - lo) * n as f64).ceil() as i64 - 1;
    k.clamp(0, n as i64 - 1) as usize
}

/// Splits the ground rectangle of `extent` (the camera centers' box when
/// `extent` is empty) into an edge grid, each edge cell into `P×P` device
/// cells, and assigns each camera to the cell holding its projected center.
pub fn partition_cameras(cameras: &CameraSet, spec: PartitionSpec, extent: &Aabb) -> Result<Topology> {
    if cameras.is_empty() {
        return Err(Error::NoCameras("partition input".into()));
    }
    let centers: Vec<Vec3> = cameras.iter().map(Camera::center).collect();
    let bounds = if extent.is_empty() {
        Aabb::from_points(&centers)
    } else {
        *extent
    };
    let axes = ground_axes(&bounds);
    let rect = [bounds.min[axes[0]], bounds.max[axes[0]], bounds.min[axes[1]], bounds.max[axes[1]]];
    let (rows, cols) = edge_grid(spec.edge_count);
    let p = spec.device_grid;
    let (nx, ny) = (cols * p, rows * p);

    let mut edges: Vec<EdgeNode> = (0..spec.edge_count)
        .map(|j| EdgeNode {
            id: edge_id(j),
            devices: (0..p * p)
                .map(|i| DeviceNode {
                    id: device_id(j, i),
                    edge: j,
                    index: i,
                    cameras: CameraSet::default(),
                })
                .collect(),
        })
        .collect();
    for (cam, c) in cameras.iter().zip(&centers) {
        let gx = cell_of(c[axes[0]], rect[0], rect[1], nx);
        let gy = cell_of(c[axes[1]], rect[2], rect[3], ny);
        let edge = (gy / p) * cols + gx / p;
        let dev = (gy % p) * p + gx % p;
        edges[edge].devices[dev].cameras.insert(cam.clone())?;
    }
    if let Some(d) = edges.iter().flat_map(|e| &e.devices).find(|d| d.cameras.is_empty()) {
        return Err(Error::EmptyCell(d.id.clone()));
    }
    Ok(Topology { spec, axes, rect, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_cams(n: usize) -> CameraSet {
        let mut v = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let x = -1.0 + 2.0 * (c as f64 + 0.5) / n as f64;
                let y = -1.0 + 2.0 * (r as f64 + 0.5) / n as f64;
                v.push(Camera::look_at(&format!("c{r}_{c}"), Vec3::new(x, y, 2.0), Vec3::new(x, y, 0.0), Vec3::y(), 50.0, 16, 16));
            }
        }
        CameraSet::new(v).unwrap()
    }

    fn ground() -> Aabb {
        Aabb::new([-1.0, -1.0, 0.0], [1.0, 1.0, 0.3])
    }

    #[test]
    fn parse_and_display() {
        let s: PartitionSpec = "(2x2)*1".parse().unwrap();
        assert_eq!(s, PartitionSpec::new(2, 1).unwrap());
        assert_eq!(s.to_string(), "(2x2)*1");
        assert_eq!("(3*3)*4".parse::<PartitionSpec>().unwrap().device_count(), 36);
        assert_eq!(" ( 1×1 ) * 2 ".parse::<PartitionSpec>().unwrap().edge_count, 2);
        for bad in ["2x2*1", "(2x3)*1", "(0x0)*1", "(2x2)*0", "(axa)*1", "(2x2)"] {
            assert!(matches!(bad.parse::<PartitionSpec>(), Err(Error::PartitionSpec(_))), "{bad}");
        }
    }

    #[test]
    fn edge_grid_is_near_square() {
        assert_eq!(edge_grid(1), (1, 1));
        assert_eq!(edge_grid(4), (2, 2));
        assert_eq!(edge_grid(6), (2, 3));
        assert_eq!(edge_grid(7), (1, 7));
        assert_eq!(edge_grid(12), (3, 4));
    }

    #[test]
    fn single_device_takes_everything() {
        let cams = grid_cams(3);
        let t = partition_cameras(&cams, PartitionSpec::new(1, 1).unwrap(), &ground()).unwrap();
        assert_eq!(t.devices().count(), 1);
        assert_eq!(t.devices().next().unwrap().cameras, cams);
    }

    #[test]
    fn symmetric_grid_splits_evenly() {
        let cams = grid_cams(8);
        let t = partition_cameras(&cams, PartitionSpec::new(2, 1).unwrap(), &ground()).unwrap();
        assert_eq!(t.axes, [0, 1]);
        let counts: Vec<usize> = t.devices().map(|d| d.cameras.len()).collect();
        assert_eq!(counts, vec![16; 4]);
        // Device 0 holds the low-x, low-y quadrant.
        assert!(t.device("e0_d0").unwrap().cameras.iter().all(|c| c.center().x < 0.0 && c.center().y < 0.0));
    }

    #[test]
    fn partition_is_disjoint_and_complete() {
        let cams = grid_cams(6);
        let t = partition_cameras(&cams, PartitionSpec::new(3, 4).unwrap(), &ground());
        // 36 cameras over 36 cells of a 6×6 grid.
        let t = t.unwrap();
        assert_eq!(t.camera_count(), cams.len());
        let mut ids: Vec<&str> = t.devices().flat_map(|d| d.cameras.ids()).collect();
        ids.sort_unstable();
        let mut want = cams.ids();
        want.sort_unstable();
        assert_eq!(ids, want);
    }

    #[test]
    fn boundary_ties_go_to_the_lower_cell() {
        let on_line = Camera::look_at("mid", Vec3::new(0.0, -0.5, 2.0), Vec3::new(0.0, -0.5, 0.0), Vec3::y(), 50.0, 8, 8);
        let cams = CameraSet::new(vec![on_line]).unwrap();
        let spec = PartitionSpec::new(2, 1).unwrap();
        assert!(matches!(partition_cameras(&cams, spec, &ground()), Err(Error::EmptyCell(_))));
        assert_eq!(cell_of(0.0, -1.0, 1.0, 2), 0);
        assert_eq!(cell_of(0.0 + 1e-12, -1.0, 1.0, 2), 1);
        assert_eq!(cell_of(-1.0, -1.0, 1.0, 2), 0);
        assert_eq!(cell_of(1.0, -1.0, 1.0, 2), 1);
        assert_eq!(cell_of(5.0, -1.0, 1.0, 2), 1);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let spec = PartitionSpec::new(1, 1).unwrap();
        assert!(matches!(partition_cameras(&CameraSet::default(), spec, &ground()), Err(Error::NoCameras(_))));
        let cams = grid_cams(1);
        assert!(matches!(partition_cameras(&cams, PartitionSpec::new(2, 1).unwrap(), &ground()), Err(Error::EmptyCell(_))));
    }

    #[test]
    fn edges_follow_the_edge_grid() {
        let cams = grid_cams(4);
        let t = partition_cameras(&cams, PartitionSpec::new(1, 2).unwrap(), &ground()).unwrap();
        // One row of two edges along x.
        assert!(t.edges[0].devices[0].cameras.iter().all(|c| c.center().x < 0.0));
        assert!(t.edges[1].devices[0].cameras.iter().all(|c| c.center().x > 0.0));
    }
}
