//! Counting by segmentation: instance masks are eroded into separated training targets,
//! and predicted maps are binarized, eroded and split into connected components.

use serde::{Deserialize, Serialize};

use crate::error::{GttaError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(GttaError::Shape("mask sides must be positive".into()));
        }
        if cells.len() != height * width {
            return Err(GttaError::Shape(format!("{} cells for a {height}x{width} mask", cells.len())));
        }
        Ok(Self { height, width, cells })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: vec![false; height * width],
        }
    }

    /// Cells strictly above `threshold`.
    pub fn threshold(map: &Tensor, threshold: f64) -> Result<Self> {
        let (h, w) = grid_shape(map)?;
        Self::new(h, w, map.data().iter().map(|&p| p > threshold).collect())
    }

    pub fn from_tensor(map: &Tensor) -> Result<Self> {
        Self::threshold(map, 0.5)
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        Tensor::new(vec![self.height, self.width], data).expect("mask shape is valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.cells[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.cells[r * self.width + c] = v;
    }

    pub fn area(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    pub fn union_with(&mut self, other: &Mask) {
        self.cells.iter_mut().zip(&other.cells).for_each(|(a, &b)| *a |= b);
    }
}

fn grid_shape(map: &Tensor) -> Result<(usize, usize)> {
    match *map.shape() {
        [h, w] => Ok((h, w)),
        [1, h, w] => Ok((h, w)),
        _ => Err(GttaError::Shape(format!("expected an [H, W] map, got {:?}", map.shape()))),
    }
}

/// Binary structuring element anchored at its center.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    height: usize,
    width: usize,
    cells: Vec<bool>,
    iterations: usize,
}

impl StructuringElement {
    pub fn new(height: usize, width: usize, cells: Vec<bool>, iterations: usize) -> Result<Self> {
        if height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(GttaError::Param("structuring element sides must be odd".into()));
        }
        if cells.len() != height * width || !cells.iter().any(|&c| c) {
            return Err(GttaError::Param("structuring element needs a matching nonempty mask".into()));
        }
        if iterations == 0 {
            return Err(GttaError::Param("erosion iterations must be at least 1".into()));
        }
        Ok(Self {
            height,
            width,
            cells,
            iterations,
        })
    }

    /// Full `side x side` square.
    pub fn square(side: usize, iterations: usize) -> Result<Self> {
        Self::new(side, side, vec![true; side * side], iterations)
    }

    /// Plus-shaped element of the given odd side.
    pub fn cross(side: usize, iterations: usize) -> Result<Self> {
        let mid = side / 2;
        let cells = (0..side * side).map(|i| i / side == mid || i % side == mid).collect();
        Self::new(side, side, cells, iterations)
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn offsets(&self) -> Vec<(isize, isize)> {
        let (ch, cw) = ((self.height / 2) as isize, (self.width / 2) as isize);
        (0..self.height * self.width)
            .filter(|&i| self.cells[i])
            .map(|i| ((i / self.width) as isize - ch, (i % self.width) as isize - cw))
            .collect()
    }
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self::square(3, 1).expect("3x3 square is valid")
    }
}

/// Morphological erosion, repeated `e.iterations()` times; outside the grid is background.
pub fn erode(mask: &Mask, e: &StructuringElement) -> Mask {
    let offsets = e.offsets();
    let (h, w) = (mask.height as isize, mask.width as isize);
    let mut cur = mask.clone();
    for _ in 0..e.iterations {
        let mut next = Mask::empty(mask.height, mask.width);
        for r in 0..h {
            for c in 0..w {
                if !cur.get(r as usize, c as usize) {
                    continue;
                }
                let keep = offsets.iter().all(|&(dr, dc)| {
                    let (rr, cc) = (r + dr, c + dc);
                    rr >= 0 && rr < h && cc >= 0 && cc < w && cur.get(rr as usize, cc as usize)
                });
                if keep {
                    next.set(r as usize, c as usize, true);
                }
            }
        }
        cur = next;
    }
    cur
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            _ => Err(GttaError::Param(format!("connectivity must be 4 or 8, got {n}"))),
        }
    }

    fn steps(self) -> &'static [(isize, isize)] {
        match self {
            Self::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Self::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
        }
    }
}

/// Component labels (0 = background, then 1.. in raster order of first pixel) and areas.
pub fn label_components(mask: &Mask, conn: Connectivity) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![0usize; h * w];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask.cells[start] || labels[start] != 0 {
            continue;
        }
        let id = areas.len() + 1;
        labels[start] = id;
        stack.push(start);
        let mut area = 0;
        while let Some(i) = stack.pop() {
            area += 1;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for &(dr, dc) in conn.steps() {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    continue;
                }
                let j = rr as usize * w + cc as usize;
                if mask.cells[j] && labels[j] == 0 {
                    labels[j] = id;
                    stack.push(j);
                }
            }
        }
        areas.push(area);
    }
    (labels, areas)
}

/// Instance ids per pixel, 0 for background and `1..=K` for objects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    height: usize,
    width: usize,
    ids: Vec<usize>,
    count: usize,
}

impl InstanceMap {
    pub fn new(height: usize, width: usize, ids: Vec<usize>) -> Result<Self> {
        if height == 0 || width == 0 || ids.len() != height * width {
            return Err(GttaError::Shape(format!("{} ids for a {height}x{width} instance map", ids.len())));
        }
        let count = ids.iter().copied().max().unwrap_or(0);
        let mut seen = vec![false; count + 1];
        ids.iter().for_each(|&i| seen[i] = true);
        if let Some(missing) = (1..=count).find(|&k| !seen[k]) {
            return Err(GttaError::Data(format!("instance ids are not contiguous: {missing} is missing")));
        }
        Ok(Self {
            height,
            width,
            ids,
            count,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = grid_shape(t)?;
        let ids = t
            .data()
            .iter()
            .map(|&v| {
                if v < 0.0 || v.fract() != 0.0 {
                    Err(GttaError::Data(format!("instance id {v} is not a nonnegative integer")))
                } else {
                    Ok(v as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(h, w, ids)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width], self.ids.iter().map(|&i| i as f64).collect()).expect("valid shape")
    }

    pub fn instance_count(&self) -> usize {
        self.count
    }

    pub fn instance_mask(&self, id: usize) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            cells: self.ids.iter().map(|&i| i == id).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTargets {
    pub mask: Mask,
    /// Ids of instances that eroded to nothing.
    pub vanished: Vec<usize>,
}

/// Erodes each instance separately and unions the results.
pub fn make_training_targets(instances: &InstanceMap, e1: &StructuringElement) -> TrainingTargets {
    let mut mask = Mask::empty(instances.height, instances.width);
    let mut vanished = Vec::new();
    for id in 1..=instances.count {
        let eroded = erode(&instances.instance_mask(id), e1);
        if eroded.area() == 0 {
            vanished.push(id);
        } else {
            mask.union_with(&eroded);
        }
    }
    if !vanished.is_empty() {
        log::warn!("{} instance(s) vanished under erosion: {:?}", vanished.len(), vanished);
    }
    TrainingTargets { mask, vanished }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountConfig {
    pub threshold: f64,
    pub element: StructuringElement,
    pub min_area: usize,
    pub connectivity: Connectivity,
}

impl Default for CountConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            element: StructuringElement::default(),
            min_area: 4,
            connectivity: Connectivity::Eight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountResult {
    pub count: usize,
    pub areas: Vec<usize>,
    pub eroded: Mask,
}

/// Binarize, erode, drop small components and count the rest.
pub fn count(seg_prob: &Tensor, cfg: &CountConfig) -> Result<CountResult> {
    if !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(GttaError::Param("count threshold must be in (0, 1)".into()));
    }
    let eroded = erode(&Mask::threshold(seg_prob, cfg.threshold)?, &cfg.element);
    let (_, areas) = label_components(&eroded, cfg.connectivity);
    let areas: Vec<usize> = areas.into_iter().filter(|&a| a >= cfg.min_area).collect();
    Ok(CountResult {
        count: areas.len(),
        areas,
        eroded,
    })
}

/// Mean absolute error between predicted and true counts.
pub fn evaluate_counting(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(GttaError::Data(format!("{} predictions for {} ground-truth counts", predicted.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(GttaError::Data("no counts to evaluate".into()));
    }
    let total: f64 = predicted.iter().zip(truth).map(|(&p, &t)| (p as f64 - t as f64).abs()).sum();
    Ok(total / truth.len() as f64)
}
