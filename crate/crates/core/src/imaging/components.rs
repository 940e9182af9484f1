use super::BinaryMask;

/// 8-connected component labelling of a binary mask.
///
/// Label 0 is background; components are numbered from 1 in raster order of
/// their first pixel.
#[derive(Clone, Debug)]
pub struct Labels {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    /// `areas[l - 1]` is the pixel count of label `l`.
    pub areas: Vec<usize>,
}

impl Labels {
    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.areas.len()
    }

    /// Pixel coordinates of component `label`, in raster order.
    pub fn pixels_of(&self, label: u32) -> Vec<(usize, usize)> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    /// Mask containing only component `label`.
    pub fn mask_of(&self, label: u32) -> BinaryMask {
        BinaryMask::from_raw(
            self.width,
            self.height,
            self.labels.iter().map(|&l| u8::from(l == label && label != 0)).collect(),
        )
        .expect("labels have mask dimensions")
    }
}

pub fn label_components(m: &BinaryMask) -> Labels {
    let (w, h) = m.dims();
    let mut labels = vec![0u32; w * h];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if m.data()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut area = 0;
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if m.data()[j] != 0 && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    Labels {
        width: w,
        height: h,
        labels,
        areas,
    }
}

/// Areas of all 8-connected components, in label order.
pub fn component_areas(m: &BinaryMask) -> Vec<usize> {
    label_components(m).areas
}

/// Zeroes every 8-connected component with fewer than `min_area` pixels.
pub fn connected_components_filter(m: &BinaryMask, min_area: usize) -> BinaryMask {
    let labels = label_components(m);
    let keep: Vec<bool> = labels.areas.iter().map(|&a| a >= min_area).collect();
    BinaryMask::from_raw(
        m.width(),
        m.height(),
        labels
            .labels
            .iter()
            .map(|&l| u8::from(l != 0 && keep[l as usize - 1]))
            .collect(),
    )
    .expect("same dimensions")
}
