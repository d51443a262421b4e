use serde::{Deserialize, Serialize};

use super::BBox;
use crate::imaging::BinaryRaster;

/// Closed outer border of one 8-connected foreground component, as pixel
/// coordinates `(x, y)` in tracing order starting at the top-most, then
/// left-most pixel. Pixels on thin parts may appear more than once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
}

impl Contour {
    pub fn bbox(&self) -> BBox {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y) in &self.points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        BBox { x0, y0, x1, y1 }
    }
}

// Clockwise on screen (y grows downwards), starting east.
const DIRS: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn dir_index(center: (usize, usize), p: (usize, usize)) -> usize {
    let d = (
        p.0 as isize - center.0 as isize,
        p.1 as isize - center.1 as isize,
    );
    DIRS.iter()
        .position(|&q| q == d)
        .expect("neighbour must be 8-adjacent")
}

fn step(p: (usize, usize), dir: usize) -> (usize, usize) {
    let (dx, dy) = DIRS[dir];
    ((p.0 as isize + dx) as usize, (p.1 as isize + dy) as usize)
}

struct Labels {
    stride: usize,
    cells: Vec<i32>,
}

impl Labels {
    #[inline]
    fn at(&self, p: (usize, usize)) -> i32 {
        self.cells[p.1 * self.stride + p.0]
    }

    #[inline]
    fn put(&mut self, p: (usize, usize), v: i32) {
        self.cells[p.1 * self.stride + p.0] = v;
    }
}

/// Follow one border from `start`, entering from the 0-pixel `from`, and
/// relabel its pixels with ±`nbd`. Returns the traced points.
fn follow_border(
    labels: &mut Labels,
    start: (usize, usize),
    from: (usize, usize),
    nbd: i32,
) -> Vec<(usize, usize)> {
    // Clockwise search around the start pixel for any foreground neighbour.
    let first = dir_index(start, from);
    let Some(p1) = (0..8)
        .map(|k| step(start, (first + k) % 8))
        .find(|&q| labels.at(q) != 0)
    else {
        labels.put(start, -nbd);
        return vec![(start.0 - 1, start.1 - 1)];
    };

    let mut points = Vec::new();
    let (mut p2, mut p3) = (p1, start);
    loop {
        // Counter-clockwise search around p3, beginning after p2.
        let base = dir_index(p3, p2);
        let mut east_examined_zero = false;
        let mut p4 = p3;
        for k in 1..=8 {
            let dir = (base + 8 - k) % 8;
            let q = step(p3, dir);
            if labels.at(q) != 0 {
                p4 = q;
                break;
            }
            if dir == 0 {
                east_examined_zero = true;
            }
        }
        if east_examined_zero {
            labels.put(p3, -nbd);
        } else if labels.at(p3) == 1 {
            labels.put(p3, nbd);
        }
        points.push((p3.0 - 1, p3.1 - 1));
        if p4 == start && p3 == p1 {
            break;
        }
        p2 = p3;
        p3 = p4;
    }
    points
}

/// Outer borders of every 8-connected foreground component, one per
/// component, ordered by the raster position of their start pixel.
///
/// Suzuki–Abe border following: hole borders are traced too, so their pixels
/// are never mistaken for new outer borders, but only outer borders are
/// returned. Components nested inside holes of other components still get
/// their own contour.
pub fn find_contours(b: &BinaryRaster) -> Vec<Contour> {
    let (w, h) = (b.width(), b.height());
    let stride = w + 2;
    let mut labels = Labels {
        stride,
        cells: vec![0; stride * (h + 2)],
    };
    for y in 0..h {
        for x in 0..w {
            if b.get(x, y) {
                labels.put((x + 1, y + 1), 1);
            }
        }
    }

    let mut nbd = 1;
    let mut contours = Vec::new();
    for y in 1..=h {
        for x in 1..=w {
            let f = labels.at((x, y));
            if f == 1 && labels.at((x - 1, y)) == 0 {
                nbd += 1;
                let points = follow_border(&mut labels, (x, y), (x - 1, y), nbd);
                contours.push(Contour { points });
            } else if f >= 1 && labels.at((x + 1, y)) == 0 {
                nbd += 1;
                follow_border(&mut labels, (x, y), (x + 1, y), nbd);
            }
        }
    }
    contours
}

/// Count 8-connected foreground components by flood fill.
pub fn connected_components(b: &BinaryRaster) -> usize {
    let (w, h) = (b.width(), b.height());
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..w * h {
        if seen[start] || !b.bits()[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if b.bits()[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}

/// Tight boxes around contours, dropping specks smaller than `min_area` and
/// boxes fully contained in another surviving candidate.
pub fn contour_boxes(contours: &[Contour], min_area: usize) -> Vec<BBox> {
    let boxes: Vec<BBox> = contours
        .iter()
        .map(Contour::bbox)
        .filter(|b| b.area() >= min_area)
        .collect();
    boxes
        .iter()
        .enumerate()
        .filter(|&(i, a)| {
            !boxes.iter().enumerate().any(|(j, b)| {
                // Of two identical boxes the earlier one survives.
                j != i && b.contains(a) && (b != a || j < i)
            })
        })
        .map(|(_, b)| *b)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, on: impl Fn(usize, usize) -> bool) -> BinaryRaster {
        let bits = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| on(x, y))
            .collect();
        BinaryRaster::new(w, h, bits).unwrap()
    }

    fn in_rect(x: usize, y: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> bool {
        (x0..x1).contains(&x) && (y0..y1).contains(&y)
    }

    #[test]
    fn filled_square_border() {
        let b = mask(5, 5, |x, y| in_rect(x, y, 1, 1, 4, 4));
        let cs = find_contours(&b);
        assert_eq!(cs.len(), 1);
        let mut pts = cs[0].points.clone();
        assert_eq!(pts.len(), 8);
        assert_eq!(pts[0], (1, 1));
        pts.sort();
        let mut expected: Vec<_> = (1..4)
            .flat_map(|y| (1..4).map(move |x| (x, y)))
            .filter(|&p| p != (2, 2))
            .collect();
        expected.sort();
        assert_eq!(pts, expected);
    }

    #[test]
    fn two_squares_and_empty() {
        let b = mask(10, 6, |x, y| {
            in_rect(x, y, 1, 1, 4, 4) || in_rect(x, y, 6, 2, 9, 5)
        });
        let cs = find_contours(&b);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].points[0], (1, 1));
        assert_eq!(cs[1].points[0], (6, 2));
        assert!(find_contours(&BinaryRaster::empty(4, 4)).is_empty());
    }

    #[test]
    fn single_pixel_and_touching_edges() {
        let b = mask(3, 3, |x, y| (x, y) == (0, 0) || (x, y) == (2, 2));
        // Diagonal neighbours are not adjacent here, so two components.
        let cs = find_contours(&b);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].points, vec![(0, 0)]);
        assert_eq!(cs[1].points, vec![(2, 2)]);
        let diag = mask(2, 2, |x, y| x == y);
        assert_eq!(find_contours(&diag).len(), 1);
        let full = mask(3, 3, |_, _| true);
        assert_eq!(
            find_contours(&full)[0].bbox(),
            BBox::new(0, 0, 3, 3).unwrap()
        );
    }

    #[test]
    fn ring_with_nested_blob() {
        // A ring whose hole holds a separate blob: two components.
        let b = mask(11, 11, |x, y| {
            (in_rect(x, y, 0, 0, 11, 11) && !in_rect(x, y, 2, 2, 9, 9)) || in_rect(x, y, 4, 4, 7, 7)
        });
        let cs = find_contours(&b);
        assert_eq!(cs.len(), 2);
        assert_eq!(connected_components(&b), 2);
        let boxes = contour_boxes(&cs, 1);
        assert_eq!(boxes, vec![BBox::new(0, 0, 11, 11).unwrap()]);
    }

    #[test]
    fn speck_filter() {
        let b = mask(8, 8, |x, y| in_rect(x, y, 1, 1, 4, 4) || (x, y) == (6, 6));
        let boxes = contour_boxes(&find_contours(&b), 4);
        assert_eq!(boxes, vec![BBox::new(1, 1, 4, 4).unwrap()]);
    }
}
