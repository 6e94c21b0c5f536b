//! Heuristic structural plausibility check for a bridge facade image.
//!
//! A pre-filter for human review, not a mechanics solver.

use serde::{Deserialize, Serialize};

use crate::image::{GrayImage, DEFAULT_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScreenThresholds {
    /// Pixels at or below this intensity are structure.
    pub intensity: u8,
    /// Rows at the bottom of the image that count as bearing ground.
    pub bearing_rows: usize,
    /// Minimum column gap between two distinct ground contacts.
    pub contact_separation: usize,
    /// Components smaller than this are speckle and ignored.
    pub min_area: usize,
}

impl Default for ScreenThresholds {
    /// Values for a 512-pixel-wide canvas.
    fn default() -> Self {
        ScreenThresholds {
            intensity: 128,
            bearing_rows: 6,
            contact_separation: 20,
            min_area: 30,
        }
    }
}

impl ScreenThresholds {
    /// Defaults scaled linearly (areas quadratically) with the canvas width.
    pub fn for_width(width: usize) -> Self {
        let d = ScreenThresholds::default();
        let s = width as f64 / DEFAULT_WIDTH as f64;
        let scale = |v: usize| ((v as f64 * s).round() as usize).max(1);
        ScreenThresholds {
            intensity: d.intensity,
            bearing_rows: scale(d.bearing_rows),
            contact_separation: scale(d.contact_separation),
            min_area: ((d.min_area as f64 * s * s).round() as usize).max(1),
        }
    }

    pub fn with_intensity(self, intensity: u8) -> Self {
        ScreenThresholds { intensity, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Feasible,
    Infeasible,
}

/// Pixel statistics behind a verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub thresholds: ScreenThresholds,
    pub structure_pixels: usize,
    pub speckle_components: usize,
    pub speckle_pixels: usize,
    /// Sizes of the retained components, largest first.
    pub component_sizes: Vec<usize>,
    pub deck_component_pixels: Option<usize>,
    pub floating_pixels: usize,
    /// Column ranges `[first, last]` of each ground contact site.
    pub contact_sites: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub deck_continuous: bool,
    pub component_count: usize,
    pub floating_component_count: usize,
    pub ground_contact_count: usize,
    pub verdict: Verdict,
    pub evidence: Evidence,
}

/// Labels 8-connected structure pixels. Returns per-pixel labels (0 = none)
/// and component sizes indexed by `label - 1`.
fn label_components(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; mask.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        let mut size = 0;
        labels[start] = label;
        stack.push(start);
        while let Some(p) = stack.pop() {
            size += 1;
            let (x, y) = ((p % width) as isize, (p / width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let q = ny as usize * width + nx as usize;
                    if mask[q] && labels[q] == 0 {
                        labels[q] = label;
                        stack.push(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Binarizes, labels 8-connected components and checks that
///
/// * one component spans the full width (the deck),
/// * no other non-speckle component exists (nothing floats), and
/// * structure meets the bearing rows at two or more separated sites.
///
/// Total: any image yields a report.
pub fn screen(image: &GrayImage, thresholds: &ScreenThresholds) -> FeasibilityReport {
    let (w, h) = (image.width(), image.height());
    let mask: Vec<bool> = image
        .pixels()
        .iter()
        .map(|&v| v <= thresholds.intensity)
        .collect();
    let structure_pixels = mask.iter().filter(|&&m| m).count();
    let (labels, sizes) = label_components(&mask, w, h);
    let kept = |label: u32| label != 0 && sizes[label as usize - 1] >= thresholds.min_area;

    let speckle: Vec<usize> = sizes
        .iter()
        .copied()
        .filter(|&s| s < thresholds.min_area)
        .collect();
    let mut component_sizes: Vec<usize> = sizes
        .iter()
        .copied()
        .filter(|&s| s >= thresholds.min_area)
        .collect();
    component_sizes.sort_unstable_by(|a, b| b.cmp(a));

    let mut left = vec![false; sizes.len() + 1];
    let mut right = vec![false; sizes.len() + 1];
    if w > 0 {
        for y in 0..h {
            left[labels[y * w] as usize] = true;
            right[labels[y * w + w - 1] as usize] = true;
        }
    }
    let deck = (1..=sizes.len() as u32)
        .filter(|&l| kept(l) && left[l as usize] && right[l as usize])
        .max_by_key(|&l| (sizes[l as usize - 1], std::cmp::Reverse(l)));
    let deck_continuous = deck.is_some();
    let component_count = component_sizes.len();
    let floating_component_count = component_count - usize::from(deck_continuous);
    let deck_pixels = deck.map(|l| sizes[l as usize - 1]);
    let floating_pixels = component_sizes.iter().sum::<usize>() - deck_pixels.unwrap_or(0);

    let mut columns = vec![false; w];
    for y in h.saturating_sub(thresholds.bearing_rows)..h {
        for (x, c) in columns.iter_mut().enumerate() {
            if kept(labels[y * w + x]) {
                *c = true;
            }
        }
    }
    let mut contact_sites: Vec<[usize; 2]> = Vec::new();
    for x in (0..w).filter(|&x| columns[x]) {
        match contact_sites.last_mut() {
            Some(site) if x - site[1] < thresholds.contact_separation => site[1] = x,
            _ => contact_sites.push([x, x]),
        }
    }
    let ground_contact_count = contact_sites.len();

    let feasible = deck_continuous && floating_component_count == 0 && ground_contact_count >= 2;
    FeasibilityReport {
        deck_continuous,
        component_count,
        floating_component_count,
        ground_contact_count,
        verdict: if feasible {
            Verdict::Feasible
        } else {
            Verdict::Infeasible
        },
        evidence: Evidence {
            thresholds: *thresholds,
            structure_pixels,
            speckle_components: speckle.len(),
            speckle_pixels: speckle.iter().sum(),
            component_sizes,
            deck_component_pixels: deck_pixels,
            floating_pixels,
            contact_sites,
        },
    }
}
