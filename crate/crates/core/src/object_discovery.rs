//! Splits a coarse moving-instance mask into object masks.
//!
//! Features under the instance mask serve as keys; a small grid of them serves
//! as queries. Each query's cosine similarity to every key, min-max normalized
//! and thresholded at `tau`, paints one candidate mask on the feature grid.
//! Candidates are ranked by mean normalized similarity and de-duplicated with
//! mask NMS, then brought back to image resolution and clipped to the
//! instance mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{bilinear_resize, nearest_resize, BinaryMask, FeatureMap};

/// Rows whose normalized spread is below this are treated as constant.
const CONSTANT_ROW_SPREAD: f32 = 1e-6;

/// Feature vectors selected by an instance mask, with their feature-grid
/// positions, in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedFeatures {
    grid_height: usize,
    grid_width: usize,
    dim: usize,
    positions: Vec<(usize, usize)>,
    vectors: Vec<f32>,
}

impl MaskedFeatures {
    /// Builds a selection from explicit `(position, vector)` entries.
    pub fn new(
        grid_height: usize,
        grid_width: usize,
        dim: usize,
        entries: impl IntoIterator<Item = ((usize, usize), Vec<f32>)>,
    ) -> Result<Self> {
        let mut positions = Vec::new();
        let mut vectors = Vec::new();
        for ((r, c), v) in entries {
            if r >= grid_height || c >= grid_width {
                return Err(Error::Shape(format!(
                    "position ({r}, {c}) outside {grid_height}x{grid_width} grid"
                )));
            }
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "feature of length {} in a dim-{dim} selection",
                    v.len()
                )));
            }
            positions.push((r, c));
            vectors.extend(v);
        }
        Ok(Self {
            grid_height,
            grid_width,
            dim,
            positions,
            vectors,
        })
    }

    /// Number of selected entries `E`.
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.grid_height, self.grid_width)
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    /// Paints the given entries onto an empty feature-grid mask.
    pub fn paint(&self, members: impl IntoIterator<Item = usize>) -> BinaryMask {
        let mut data = vec![0u8; self.grid_height * self.grid_width];
        for e in members {
            let (r, c) = self.positions[e];
            data[r * self.grid_width + c] = 1;
        }
        BinaryMask::new(self.grid_height, self.grid_width, data).expect("grid-sized buffer")
    }
}

/// Downsamples `instance_mask` bilinearly to the feature grid, keeps cells
/// at or above 0.5, and collects the non-zero feature vectors there.
pub fn select_masked_features(
    features: &FeatureMap,
    instance_mask: &BinaryMask,
) -> Result<MaskedFeatures> {
    let (hf, wf) = (features.height(), features.width());
    if hf == 0 || wf == 0 || instance_mask.pixel_count() == 0 {
        return Err(Error::EmptySelection {
            height: hf,
            width: wf,
        });
    }
    let coarse = bilinear_resize(&instance_mask.map(|v| v as f32), hf, wf);
    let mut entries = Vec::new();
    for r in 0..hf {
        for c in 0..wf {
            let vector = features.pixel(r, c);
            if coarse.at(r, c, 0) >= 0.5 && vector.iter().any(|&v| v != 0.0) {
                entries.push(((r, c), vector.to_vec()));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptySelection {
            height: hf,
            width: wf,
        });
    }
    MaskedFeatures::new(hf, wf, features.dim(), entries)
}

/// Indices of the selected entries used as queries.
///
/// A `g x g` lattice of cell centers is laid over the bounding box of the
/// selected positions. Each lattice point takes its nearest selected entry
/// (distance measured in cells, `max(|dr| / cell_h, |dc| / cell_w)`) when that
/// entry is within one cell. Duplicates are dropped, first occurrence wins.
pub fn query_indices(selected: &MaskedFeatures, grid: usize) -> Vec<usize> {
    assert!(grid >= 1, "query grid must be at least 1");
    let Some(&(first_r, first_c)) = selected.positions.first() else {
        return Vec::new();
    };
    let (mut r0, mut r1, mut c0, mut c1) = (first_r, first_r, first_c, first_c);
    for &(r, c) in &selected.positions {
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    let cell_h = (r1 - r0 + 1) as f64 / grid as f64;
    let cell_w = (c1 - c0 + 1) as f64 / grid as f64;

    let mut picked: Vec<usize> = Vec::new();
    for i in 0..grid {
        let pr = r0 as f64 + (i as f64 + 0.5) * cell_h - 0.5;
        for j in 0..grid {
            let pc = c0 as f64 + (j as f64 + 0.5) * cell_w - 0.5;
            let key = |&(r, c): &(usize, usize)| {
                let (dr, dc) = (r as f64 - pr, c as f64 - pc);
                let cells = (dr.abs() / cell_h).max(dc.abs() / cell_w);
                (cells, dr * dr + dc * dc)
            };
            let nearest = selected
                .positions
                .iter()
                .enumerate()
                .map(|(e, p)| (key(p), e))
                .min_by(|(a, ea), (b, eb)| {
                    a.0.total_cmp(&b.0)
                        .then(a.1.total_cmp(&b.1))
                        .then(ea.cmp(eb))
                });
            if let Some(((cells, _), e)) = nearest {
                if cells <= 1.0 && !picked.contains(&e) {
                    picked.push(e);
                }
            }
        }
    }
    picked
}

/// Query vectors for [`objectness_scores`]; at most `grid * grid` of them.
pub fn build_queries(selected: &MaskedFeatures, grid: usize) -> Vec<Vec<f32>> {
    query_indices(selected, grid)
        .into_iter()
        .map(|e| selected.vector(e).to_vec())
        .collect()
}

/// `<a, b> / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity of a zero vector".into()));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32)
}

/// Query-key cosine similarities; row `f` belongs to query `f`, column `e`
/// to key `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectnessScoreMap {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl ObjectnessScoreMap {
    pub fn from_rows(rows: Vec<Vec<f32>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged score rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn num_queries(&self) -> usize {
        self.rows
    }

    pub fn num_keys(&self) -> usize {
        self.cols
    }

    pub fn row(&self, query: usize) -> &[f32] {
        &self.data[query * self.cols..(query + 1) * self.cols]
    }

    pub fn get(&self, query: usize, key: usize) -> f32 {
        self.data[query * self.cols + key]
    }
}

pub fn objectness_scores<Q: AsRef<[f32]>>(
    queries: &[Q],
    keys: &MaskedFeatures,
) -> Result<ObjectnessScoreMap> {
    let mut data = Vec::with_capacity(queries.len() * keys.len());
    for q in queries {
        for e in 0..keys.len() {
            data.push(cosine_similarity(q.as_ref(), keys.vector(e))?);
        }
    }
    Ok(ObjectnessScoreMap {
        rows: queries.len(),
        cols: keys.len(),
        data,
    })
}

/// A candidate object mask on the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMask {
    pub mask: BinaryMask,
    /// Mean normalized similarity over member keys, in `[0, 1]`.
    pub score: f32,
}

/// Min-max normalizes each row to `[0, 1]` (near-constant rows become all
/// ones), keeps keys scoring at least `tau`, and scores each mask by the mean
/// normalized similarity of its members.
pub fn masks_from_scores(
    scores: &ObjectnessScoreMap,
    keys: &MaskedFeatures,
    tau: f32,
) -> Vec<ScoredMask> {
    assert_eq!(scores.num_keys(), keys.len(), "score columns must match keys");
    let mut out = Vec::new();
    for f in 0..scores.num_queries() {
        let row = scores.row(f);
        let (lo, hi) = row
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let spread = hi - lo;
        let normalized: Vec<f32> = if spread < CONSTANT_ROW_SPREAD {
            vec![1.0; row.len()]
        } else {
            row.iter().map(|&v| (v - lo) / spread).collect()
        };
        let members: Vec<usize> = (0..row.len()).filter(|&e| normalized[e] >= tau).collect();
        if members.is_empty() {
            continue;
        }
        let score = members.iter().map(|&e| normalized[e] as f64).sum::<f64>() / members.len() as f64;
        out.push(ScoredMask {
            mask: keys.paint(members.iter().copied()),
            score: score as f32,
        });
    }
    out
}

/// Greedy mask NMS. Candidates are visited by descending score (ties: larger
/// area, then input order) and kept when their IoU with every kept mask is
/// below `iou_threshold`.
pub fn rank_and_nms(candidates: Vec<ScoredMask>, iou_threshold: f32) -> Vec<ScoredMask> {
    let areas: Vec<usize> = candidates.iter().map(|c| c.mask.area()).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .score
            .total_cmp(&candidates[a].score)
            .then(areas[b].cmp(&areas[a]))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| candidates[i].mask.iou(&candidates[k].mask) < iou_threshold)
        {
            kept.push(i);
        }
    }
    let mut slots: Vec<Option<ScoredMask>> = candidates.into_iter().map(Some).collect();
    kept.into_iter()
        .map(|i| slots[i].take().expect("each candidate kept once"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryParams {
    /// Threshold on the normalized similarity.
    pub tau: f32,
    /// Query lattice side; at most `query_grid^2` queries.
    pub query_grid: usize,
    pub nms_iou: f32,
}

impl Default for DiscoveryParams {
    fn default() -> Self {
        Self {
            tau: 0.5,
            query_grid: 4,
            nms_iou: 0.5,
        }
    }
}

impl DiscoveryParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Domain(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.query_grid == 0 {
            return Err(Error::Domain("query_grid must be at least 1".into()));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(Error::Domain(format!(
                "nms_iou {} outside (0, 1]",
                self.nms_iou
            )));
        }
        Ok(())
    }
}

/// A discovered object at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub mask: BinaryMask,
    pub score: f32,
    /// Set when no usable features lay under the instance and the instance
    /// mask itself was returned.
    pub fallback: bool,
}

/// Runs discovery for one instance mask.
///
/// When the instance selects no features, or every kept mask vanishes after
/// clipping to the instance, the instance mask itself is returned as the
/// single object. An all-zero instance mask yields no objects.
pub fn discover_objects(
    features: &FeatureMap,
    instance_mask: &BinaryMask,
    params: &DiscoveryParams,
) -> Vec<ObjectMask> {
    if instance_mask.is_empty() {
        return Vec::new();
    }
    let fallback = || {
        vec![ObjectMask {
            mask: instance_mask.clone(),
            score: 1.0,
            fallback: true,
        }]
    };
    let Ok(keys) = select_masked_features(features, instance_mask) else {
        return fallback();
    };
    let queries = build_queries(&keys, params.query_grid);
    let scores = objectness_scores(&queries, &keys).expect("selected features are non-zero");
    let candidates = masks_from_scores(&scores, &keys, params.tau);
    let (h, w) = (instance_mask.height(), instance_mask.width());
    let objects: Vec<ObjectMask> = rank_and_nms(candidates, params.nms_iou)
        .into_iter()
        .filter_map(|c| {
            let full = nearest_resize(&c.mask, h, w)
                .intersect(instance_mask)
                .expect("same size");
            (!full.is_empty()).then_some(ObjectMask {
                mask: full,
                score: c.score,
                fallback: false,
            })
        })
        .collect();
    if objects.is_empty() {
        fallback()
    } else {
        objects
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Grid;

    fn full_grid(h: usize, w: usize, f: impl Fn(usize, usize) -> Vec<f32>) -> MaskedFeatures {
        let entries: Vec<_> = (0..h)
            .flat_map(|r| (0..w).map(move |c| (r, c)))
            .map(|(r, c)| ((r, c), f(r, c)))
            .collect();
        let dim = entries[0].1.len();
        MaskedFeatures::new(h, w, dim, entries).unwrap()
    }

    fn constant_features(h: usize, w: usize, v: &[f32]) -> FeatureMap {
        FeatureMap::from_grid(Grid::from_fn(h, w, v.len(), |_, _, ch| v[ch])).unwrap()
    }

    #[test]
    fn full_mask_selects_everything() {
        let feats = constant_features(4, 4, &[1.0, 2.0]);
        let sel = select_masked_features(&feats, &BinaryMask::ones(8, 8)).unwrap();
        assert_eq!(sel.len(), 16);
    }

    #[test]
    fn empty_mask_is_empty_selection() {
        let feats = constant_features(4, 4, &[1.0, 2.0]);
        let r = select_masked_features(&feats, &BinaryMask::zeros(8, 8));
        assert!(matches!(r, Err(Error::EmptySelection { .. })));
    }

    #[test]
    fn zero_vectors_are_not_selected() {
        let feats = FeatureMap::from_grid(Grid::from_fn(2, 2, 1, |r, c, _| (r + c) as f32)).unwrap();
        let sel = select_masked_features(&feats, &BinaryMask::ones(2, 2)).unwrap();
        assert_eq!(sel.positions(), &[(0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn top_left_quadrant_downsamples_to_four_cells() {
        let feats = constant_features(4, 4, &[1.0]);
        let mask = BinaryMask::from_fn(8, 8, |r, c| r < 4 && c < 4);
        let sel = select_masked_features(&feats, &mask).unwrap();
        assert_eq!(sel.positions(), &[(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn single_query_is_nearest_to_center() {
        let sel = full_grid(3, 3, |r, c| vec![1.0 + r as f32, c as f32]);
        assert_eq!(query_indices(&sel, 1), vec![4]);
        let single = MaskedFeatures::new(5, 5, 1, [((2, 3), vec![1.0])]).unwrap();
        assert_eq!(query_indices(&single, 1), vec![0]);
        assert_eq!(query_indices(&single, 4), vec![0]);
    }

    #[test]
    fn two_by_two_lattice_on_full_grid() {
        let sel = full_grid(4, 4, |r, c| vec![1.0 + r as f32, c as f32]);
        let idx = query_indices(&sel, 2);
        let pos: Vec<_> = idx.iter().map(|&e| sel.positions()[e]).collect();
        assert_eq!(pos, vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        assert_eq!(build_queries(&sel, 2).len(), 4);
    }

    #[test]
    fn query_count_bounded() {
        let sel = full_grid(3, 5, |r, c| vec![1.0 + r as f32, c as f32]);
        for g in 1..8 {
            let q = query_indices(&sel, g);
            assert!(!q.is_empty() && q.len() <= (g * g).min(sel.len()));
        }
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine_similarity(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::Domain(_))));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn single_key_constant_row() {
        let keys = MaskedFeatures::new(2, 2, 2, [((1, 0), vec![0.2, 0.9])]).unwrap();
        let s = objectness_scores(&build_queries(&keys, 3), &keys).unwrap();
        let masks = masks_from_scores(&s, &keys, 0.5);
        assert_eq!(masks.len(), 1);
        assert_eq!(masks[0].score, 1.0);
        assert_eq!(masks[0].mask.data(), &[0, 0, 1, 0]);
    }

    #[test]
    fn normalization_and_membership_arithmetic() {
        let keys = MaskedFeatures::new(1, 3, 1, (0..3).map(|c| ((0, c), vec![1.0]))).unwrap();
        let s = ObjectnessScoreMap::from_rows(vec![vec![1.0, 0.5, 0.0]]).unwrap();
        let masks = masks_from_scores(&s, &keys, 0.5);
        assert_eq!(masks[0].mask.data(), &[1, 1, 0]);
        assert!((masks[0].score - 0.75).abs() < 1e-7);
        // tau = 0 keeps every key
        let all = masks_from_scores(&s, &keys, 0.0);
        assert_eq!(all[0].mask.data(), &[1, 1, 1]);
        assert!((all[0].score - 0.5).abs() < 1e-7);
    }

    #[test]
    fn nms_keeps_best_of_duplicates() {
        let m = BinaryMask::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let other = BinaryMask::new(1, 4, vec![0, 0, 1, 1]).unwrap();
        let c = vec![
            ScoredMask { mask: m.clone(), score: 0.8 },
            ScoredMask { mask: m.clone(), score: 0.9 },
            ScoredMask { mask: other.clone(), score: 0.1 },
        ];
        let kept = rank_and_nms(c, 0.5);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].score, 0.9);
        assert_eq!(kept[1].mask, other);
    }

    #[test]
    fn nms_threshold_one_collapses_identical() {
        let m = BinaryMask::ones(2, 2);
        let c = vec![
            ScoredMask { mask: m.clone(), score: 1.0 },
            ScoredMask { mask: m, score: 1.0 },
        ];
        assert_eq!(rank_and_nms(c, 1.0).len(), 1);
        assert!(rank_and_nms(Vec::new(), 0.5).is_empty());
    }

    #[test]
    fn nms_tie_prefers_larger_area() {
        let small = BinaryMask::new(1, 3, vec![1, 0, 0]).unwrap();
        let big = BinaryMask::new(1, 3, vec![1, 1, 0]).unwrap();
        let kept = rank_and_nms(
            vec![
                ScoredMask { mask: small, score: 0.5 },
                ScoredMask { mask: big.clone(), score: 0.5 },
            ],
            0.4,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].mask, big);
    }

    #[test]
    fn identical_features_give_single_object() {
        let feats = constant_features(4, 6, &[0.3, -0.7, 0.2]);
        let instance = BinaryMask::from_fn(8, 12, |r, c| (2..6).contains(&r) && (2..10).contains(&c));
        let objs = discover_objects(&feats, &instance, &DiscoveryParams::default());
        assert_eq!(objs.len(), 1);
        assert_eq!(objs[0].mask, instance);
        assert!(!objs[0].fallback);
    }

    #[test]
    fn two_feature_clusters_split_one_instance() {
        // left half of the instance carries one vector, right half another
        let feats = FeatureMap::from_grid(Grid::from_fn(4, 8, 3, |_, c, ch| {
            let v = if c < 4 { [1.0, 0.1, 0.0] } else { [0.0, 0.2, 1.0] };
            v[ch]
        }))
        .unwrap();
        let instance = BinaryMask::from_fn(8, 16, |r, c| (2..6).contains(&r) && (2..14).contains(&c));
        let objs = discover_objects(&feats, &instance, &DiscoveryParams::default());
        assert_eq!(objs.len(), 2);
        let left = BinaryMask::from_fn(8, 16, |r, c| (2..6).contains(&r) && (2..8).contains(&c));
        let right = BinaryMask::from_fn(8, 16, |r, c| (2..6).contains(&r) && (8..14).contains(&c));
        assert!(objs.iter().any(|o| o.mask == left));
        assert!(objs.iter().any(|o| o.mask == right));
    }

    #[test]
    fn featureless_instance_falls_back() {
        let feats = FeatureMap::from_grid(Grid::filled(4, 4, 2, 0.0)).unwrap();
        let instance = BinaryMask::from_fn(4, 4, |r, _| r < 2);
        let objs = discover_objects(&feats, &instance, &DiscoveryParams::default());
        assert_eq!(objs.len(), 1);
        assert!(objs[0].fallback);
        assert_eq!(objs[0].mask, instance);
        assert!(discover_objects(&feats, &BinaryMask::zeros(4, 4), &DiscoveryParams::default()).is_empty());
    }

    #[test]
    fn params_validation() {
        assert!(DiscoveryParams::default().validate().is_ok());
        let bad = DiscoveryParams { nms_iou: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DiscoveryParams { tau: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
