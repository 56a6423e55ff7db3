//! Moving-instance masks from a 3D object-motion map.
//!
//! Thresholds the motion map into a binary mask, labels its connected
//! components and splits them into one mask per moving instance.

use serde::{Deserialize, Serialize};

use crate::tensor::{BinaryMask, ComponentLabelMap, Grid, MotionMap};

/// How the per-axis motion test is combined across x, y and z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Every axis must exceed the threshold.
    All,
    /// At least one axis must exceed the threshold.
    #[default]
    Any,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// N, S, E and W neighbors.
    Four,
    /// All eight neighbors.
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Pixel `i` is moving when `|motion(i, d)| > epsilon` for every (`All`) or
/// some (`Any`) axis `d`.
pub fn extract_binary_mask(motion: &MotionMap, epsilon: f32, mode: MaskMode) -> BinaryMask {
    let data = motion
        .pixels()
        .map(|m| {
            let moving = |v: &f32| v.abs() > epsilon;
            let on = match mode {
                MaskMode::All => m.iter().all(moving),
                MaskMode::Any => m.iter().any(moving),
            };
            on as u8
        })
        .collect();
    BinaryMask::new(motion.height(), motion.width(), data).expect("one value per pixel")
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // slot 0 is background and never merged
        Self { parent: vec![0] }
    }

    fn make_set(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grandparent = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grandparent;
            x = grandparent;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling. Components are numbered `1..=M` in the
/// order their first pixel is met in a raster scan; background stays 0.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentLabelMap {
    let (h, w) = (mask.height(), mask.width());
    let mut provisional = vec![0u32; h * w];
    let mut sets = DisjointSet::new();

    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            // already-visited neighbors: W, and NW, N, NE for 8-connectivity
            let mut neighbors = [0u32; 4];
            let mut n = 0;
            let mut visit = |rr: usize, cc: usize| {
                let l = provisional[rr * w + cc];
                if l != 0 {
                    neighbors[n] = l;
                    n += 1;
                }
            };
            if c > 0 {
                visit(r, c - 1);
            }
            if r > 0 {
                visit(r - 1, c);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        visit(r - 1, c - 1);
                    }
                    if c + 1 < w {
                        visit(r - 1, c + 1);
                    }
                }
            }
            let label = match neighbors[..n].iter().min() {
                None => sets.make_set(),
                Some(&min) => {
                    for &other in &neighbors[..n] {
                        sets.union(min, other);
                    }
                    min
                }
            };
            provisional[r * w + c] = label;
        }
    }

    let mut final_id = vec![0u32; sets.parent.len()];
    let mut next = 0;
    for l in provisional.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if final_id[root] == 0 {
            next += 1;
            final_id[root] = next;
        }
        *l = final_id[root];
    }
    ComponentLabelMap::from_raw(Grid::new(h, w, 1, provisional).expect("one label per pixel"))
}

/// One mask per moving instance, in component-id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceMaskSet {
    pub masks: Vec<BinaryMask>,
    /// Component id each mask came from.
    pub component_ids: Vec<u32>,
}

impl InstanceMaskSet {
    /// Number of instances `M`.
    pub fn count(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Extracts every component with at least `min_area` pixels as its own mask.
pub fn split_instances(labels: &ComponentLabelMap, min_area: usize) -> InstanceMaskSet {
    let count = labels.count() as usize;
    let mut areas = vec![0usize; count + 1];
    for &l in labels.data() {
        areas[l as usize] += 1;
    }
    let (h, w) = (labels.height(), labels.width());
    let mut set = InstanceMaskSet::default();
    for id in 1..=count as u32 {
        if areas[id as usize] < min_area {
            continue;
        }
        let data = labels.data().iter().map(|&l| (l == id) as u8).collect();
        set.masks
            .push(BinaryMask::new(h, w, data).expect("one value per pixel"));
        set.component_ids.push(id);
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub epsilon: f32,
    pub mode: MaskMode,
    pub connectivity: Connectivity,
    pub min_area: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            mode: MaskMode::Any,
            connectivity: Connectivity::Eight,
            min_area: 64,
        }
    }
}

/// Threshold, label and split in one go.
pub fn instance_masks(motion: &MotionMap, params: &MaskParams) -> (ComponentLabelMap, InstanceMaskSet) {
    let binary = extract_binary_mask(motion, params.epsilon, params.mode);
    let labels = label_components(&binary, params.connectivity);
    let instances = split_instances(&labels, params.min_area);
    (labels, instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| (b == b'#') as u8))
            .collect();
        BinaryMask::new(h, w, data).unwrap()
    }

    #[test]
    fn threshold_modes() {
        let mut data = vec![0.0f32; 12];
        data[..3].copy_from_slice(&[0.5, 0.0, 0.2]);
        let motion = MotionMap::new(2, 2, data).unwrap();
        assert_eq!(
            extract_binary_mask(&motion, 0.1, MaskMode::Any).data(),
            &[1, 0, 0, 0]
        );
        assert!(extract_binary_mask(&motion, 0.1, MaskMode::All).is_empty());
        assert!(extract_binary_mask(&MotionMap::zeros(3, 3), 0.0, MaskMode::Any).is_empty());
    }

    #[test]
    fn negative_motion_counts() {
        let motion = MotionMap::new(1, 1, vec![0.0, 0.0, -0.3]).unwrap();
        assert_eq!(extract_binary_mask(&motion, 0.1, MaskMode::Any).data(), &[1]);
    }

    #[test]
    fn empty_and_full_masks() {
        let labels = label_components(&BinaryMask::zeros(3, 3), Connectivity::Eight);
        assert_eq!(labels.count(), 0);
        let labels = label_components(&BinaryMask::ones(3, 3), Connectivity::Four);
        assert!(labels.data().iter().all(|&l| l == 1));
    }

    #[test]
    fn diagonal_touch_depends_on_connectivity() {
        let m = mask(&["##..", "##..", "..##", "..##"]);
        assert_eq!(label_components(&m, Connectivity::Eight).count(), 1);
        let four = label_components(&m, Connectivity::Four);
        assert_eq!(four.count(), 2);
        assert_eq!(four.get(0, 0), 1);
        assert_eq!(four.get(3, 3), 2);
    }

    #[test]
    fn raster_first_encounter_order() {
        // a U shape: the right arm is met first on row 0 only after the left arm
        let m = mask(&["#.#.#", "#.#..", "###.."]);
        let l = label_components(&m, Connectivity::Four);
        assert_eq!(l.count(), 2);
        assert_eq!(l.get(0, 0), 1);
        assert_eq!(l.get(0, 2), 1);
        assert_eq!(l.get(0, 4), 2);
    }

    #[test]
    fn min_area_filters_small_components() {
        let mut rows = vec!["..........".to_string(); 12];
        for r in rows.iter_mut().take(10) {
            *r = "##########".into();
        }
        rows[11] = "#.##......".into();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let labels = label_components(&mask(&refs), Connectivity::Four);
        assert_eq!(labels.count(), 3);
        let set = split_instances(&labels, 10);
        assert_eq!(set.count(), 1);
        assert_eq!(set.masks[0].area(), 100);
        assert_eq!(set.component_ids, vec![1]);
    }

    #[test]
    fn zero_min_area_partitions_foreground() {
        let m = mask(&["#..#", "....", "##.#"]);
        let labels = label_components(&m, Connectivity::Eight);
        let set = split_instances(&labels, 0);
        assert_eq!(set.count(), 4);
        let mut union = vec![0u8; 12];
        for inst in &set.masks {
            for (u, &v) in union.iter_mut().zip(inst.data()) {
                assert!(!(*u == 1 && v == 1), "instances overlap");
                *u |= v;
            }
        }
        assert_eq!(union, m.data());
        assert!(split_instances(&label_components(&BinaryMask::zeros(2, 2), Connectivity::Four), 0).is_empty());
    }

    #[test]
    fn connectivity_serde_as_number() {
        let c: Connectivity = serde_json::from_str("4").unwrap();
        assert_eq!(c, Connectivity::Four);
        assert!(serde_json::from_str::<Connectivity>("6").is_err());
        assert_eq!(serde_json::to_string(&Connectivity::Eight).unwrap(), "8");
        let m: MaskMode = serde_json::from_str("\"all\"").unwrap();
        assert_eq!(m, MaskMode::All);
    }
}
