use serde::{Deserialize, Serialize};

use super::Axis;
use crate::imaging::BinaryRaster;

/// A line in normal form: `x·cosθ + y·sinθ = ρ`, pixel coordinates with the
/// origin at the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Line {
    pub rho: i32,
    /// Degrees in `[0, 180)`.
    pub theta: u32,
    pub votes: u32,
}

impl Line {
    /// Where the line crosses the middle of the image along `axis`: the x
    /// coordinate at mid-height for column separators, the y coordinate at
    /// mid-width for row separators. `None` if the line runs parallel to the
    /// probe.
    pub fn position(&self, axis: Axis, width: usize, height: usize) -> Option<f64> {
        let (sin, cos) = (self.theta as f64).to_radians().sin_cos();
        let rho = self.rho as f64;
        match axis {
            Axis::Columns if cos.abs() > 1e-9 => {
                Some((rho - (height as f64 - 1.0) / 2.0 * sin) / cos)
            }
            Axis::Rows if sin.abs() > 1e-9 => Some((rho - (width as f64 - 1.0) / 2.0 * cos) / sin),
            _ => None,
        }
    }

    /// Whether the line is within 5° of the separator direction for `axis`.
    pub fn is_aligned(&self, axis: Axis) -> bool {
        match axis {
            Axis::Columns => self.theta <= 5 || self.theta >= 175,
            Axis::Rows => (85..=95).contains(&self.theta),
        }
    }
}

/// θ set for column separators: 0° ± 5°.
pub fn column_thetas() -> Vec<u32> {
    (175..180).chain(0..=5).collect()
}

/// θ set for row separators: 90° ± 5°.
pub fn row_thetas() -> Vec<u32> {
    (85..=95).collect()
}

/// Hough accumulator over `theta_set` (1° bins) and 1-px ρ bins.
///
/// Returns every cell with at least `vote_threshold` votes that survives 3×3
/// non-maximum suppression, sorted by votes descending, then `(ρ, θ)`.
/// Only a strictly larger neighbour suppresses a cell: neighbours with equal
/// votes saw the same pixels, and keeping all of them guarantees that a
/// digital line is always reported at its own cell.
pub fn hough_lines(b: &BinaryRaster, theta_set: &[u32], vote_threshold: u32) -> Vec<Line> {
    let mut thetas: Vec<u32> = theta_set.iter().map(|t| t % 180).collect();
    thetas.sort_unstable();
    thetas.dedup();
    if thetas.is_empty() {
        return Vec::new();
    }

    let (w, h) = (b.width(), b.height());
    let rmax = ((w * w + h * h) as f64).sqrt().ceil() as i32 + 1;
    let nrho = (2 * rmax + 1) as usize;
    let trig: Vec<(f64, f64)> = thetas
        .iter()
        .map(|&t| {
            let (s, c) = (t as f64).to_radians().sin_cos();
            (c, s)
        })
        .collect();

    let mut acc = vec![0u32; thetas.len() * nrho];
    for y in 0..h {
        for x in 0..w {
            if !b.get(x, y) {
                continue;
            }
            for (ti, &(c, s)) in trig.iter().enumerate() {
                let rho = (x as f64 * c + y as f64 * s).round() as i32;
                acc[ti * nrho + (rho + rmax) as usize] += 1;
            }
        }
    }

    let key = |ti: usize, ri: usize| (ri as i32 - rmax, thetas[ti]);
    let mut lines = Vec::new();
    for ti in 0..thetas.len() {
        // Only θ values exactly one degree apart are neighbours.
        let theta_neighbours: Vec<usize> = [ti.wrapping_sub(1), ti, ti + 1]
            .into_iter()
            .filter(|&n| n < thetas.len() && thetas[n].abs_diff(thetas[ti]) <= 1)
            .collect();
        for ri in 0..nrho {
            let votes = acc[ti * nrho + ri];
            if votes == 0 || votes < vote_threshold {
                continue;
            }
            let own = key(ti, ri);
            let suppressed = theta_neighbours.iter().any(|&tn| {
                [ri.wrapping_sub(1), ri, ri + 1].into_iter().any(|rn| {
                    if rn >= nrho || (tn == ti && rn == ri) {
                        return false;
                    }
                    acc[tn * nrho + rn] > votes
                })
            });
            if !suppressed {
                lines.push(Line {
                    rho: own.0,
                    theta: own.1,
                    votes,
                });
            }
        }
    }
    lines.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then(a.rho.cmp(&b.rho))
            .then(a.theta.cmp(&b.theta))
    });
    lines
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

    #[test]
    fn vertical_column_line() {
        let b = mask(20, 15, |x, _| x == 10);
        let lines = hough_lines(&b, &[0], 1);
        assert_eq!(
            lines,
            vec![Line {
                rho: 10,
                theta: 0,
                votes: 15
            }]
        );
    }

    #[test]
    fn horizontal_row_line() {
        let b = mask(12, 9, |_, y| y == 5);
        let lines = hough_lines(&b, &[90], 1);
        assert!(lines.contains(&Line {
            rho: 5,
            theta: 90,
            votes: 12
        }));
    }

    #[test]
    fn empty_image_has_no_lines() {
        let b = BinaryRaster::empty(8, 8);
        assert!(hough_lines(&b, &column_thetas(), 1).is_empty());
    }

    #[test]
    fn thick_line_stays_on_band() {
        let b = mask(30, 40, |x, _| x == 10 || x == 11);
        let lines = hough_lines(&b, &column_thetas(), 30);
        assert!(lines.contains(&Line {
            rho: 10,
            theta: 0,
            votes: 40
        }));
        // A two-pixel band also collects full votes at slight tilts; every
        // survivor must still sit on the band.
        for l in &lines {
            let x = l.position(Axis::Columns, 30, 40).unwrap();
            assert!((9.0..=12.0).contains(&x), "{l:?}");
        }
    }

    #[test]
    fn position_of_vertical_and_horizontal_lines() {
        let v = Line {
            rho: 42,
            theta: 0,
            votes: 1,
        };
        assert!((v.position(Axis::Columns, 100, 80).unwrap() - 42.0).abs() < 1e-9);
        let h = Line {
            rho: 17,
            theta: 90,
            votes: 1,
        };
        assert!((h.position(Axis::Rows, 100, 80).unwrap() - 17.0).abs() < 1e-9);
        // θ = 178° gives a negative ρ for a line near x = 50.
        let tilted = Line {
            rho: -50,
            theta: 178,
            votes: 1,
        };
        let x = tilted.position(Axis::Columns, 100, 3).unwrap();
        assert!((x - 50.0).abs() < 0.1, "{x}");
    }
}
