use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayoutError, ReadingOrder, Result};

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(LayoutError::ParseError(format!(
                "degenerate box [{x0}, {y0}, {x1}, {y1}]"
            )));
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && other.x1 <= self.x1 && other.y1 <= self.y1
    }

    pub fn intersection_area(&self, other: &BBox) -> usize {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w * h
    }

    pub fn translate(&self, dx: usize, dy: usize) -> BBox {
        BBox {
            x0: self.x0 + dx,
            y0: self.y0 + dy,
            x1: self.x1 + dx,
            y1: self.y1 + dy,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }

    pub fn within(&self, width: usize, height: usize) -> bool {
        self.x1 <= width && self.y1 <= height
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [self.x0, self.y0, self.x1, self.y1].serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[usize; 4]>::deserialize(d)?;
        BBox::new(x0, y0, x1, y1).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union; `0.0` for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (a.area() + b.area() - inter) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    Contour,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    pub source: DetectionSource,
}

impl Detection {
    pub fn contour(bbox: BBox) -> Self {
        Self {
            bbox,
            score: 1.0,
            source: DetectionSource::Contour,
        }
    }

    pub fn external(bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(LayoutError::ScoreOutOfRange(score));
        }
        Ok(Self {
            bbox,
            score,
            source: DetectionSource::External,
        })
    }
}

#[derive(Deserialize)]
struct RawDetection {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

/// Parse detector output (`[{"box": [x0, y0, x1, y1], "score": s}, ...]`),
/// clipping boxes to a `width × height` image. Boxes left empty by clipping
/// lie entirely outside the image and are skipped.
pub fn parse_detections(json: &str, width: usize, height: usize) -> Result<Vec<Detection>> {
    let raw: Vec<RawDetection> =
        serde_json::from_str(json).map_err(|e| LayoutError::ParseError(e.to_string()))?;
    let mut out = Vec::with_capacity(raw.len());
    for RawDetection { bbox, score } in raw {
        if !(0.0..=1.0).contains(&score) {
            return Err(LayoutError::ScoreOutOfRange(score));
        }
        let [x0, y0, x1, y1] = bbox;
        if !(x0 < x1 && y0 < y1) || bbox.iter().any(|v| !v.is_finite()) {
            return Err(LayoutError::ParseError(format!("degenerate box {bbox:?}")));
        }
        let cx0 = x0.max(0.0).floor() as usize;
        let cy0 = y0.max(0.0).floor() as usize;
        let cx1 = x1.min(width as f64).ceil().max(0.0) as usize;
        let cy1 = y1.min(height as f64).ceil().max(0.0) as usize;
        if cx0 >= cx1 || cy0 >= cy1 {
            continue;
        }
        out.push(Detection::external(
            BBox {
                x0: cx0,
                y0: cy0,
                x1: cx1,
                y1: cy1,
            },
            score,
        )?);
    }
    Ok(out)
}

pub fn import_detections(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
) -> Result<Vec<Detection>> {
    parse_detections(&std::fs::read_to_string(path)?, width, height)
}

/// Sort detections into reading order.
///
/// Boxes whose horizontal extents overlap (transitively) form one column.
/// Columns go right to left for [`ReadingOrder::Rtl`], left to right
/// otherwise; inside a column boxes go top to bottom, and side-by-side boxes
/// on the same line follow the column direction.
pub fn sort_reading_order(dets: &mut Vec<Detection>, order: ReadingOrder) {
    if dets.len() < 2 {
        return;
    }
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by_key(|&i| (dets[i].bbox.x0, dets[i].bbox.x1, dets[i].bbox.y0));
    // Sweep over x to group overlapping intervals.
    let mut column_of = vec![0usize; dets.len()];
    let mut columns: Vec<(usize, usize)> = Vec::new();
    for &i in &idx {
        let b = dets[i].bbox;
        match columns.last_mut() {
            Some(col) if b.x0 < col.1 => col.1 = col.1.max(b.x1),
            _ => columns.push((b.x0, b.x1)),
        }
        column_of[i] = columns.len() - 1;
    }
    let rank = |c: usize| match order {
        ReadingOrder::Rtl => columns.len() - 1 - c,
        ReadingOrder::Ltr => c,
    };
    let mut keyed: Vec<(usize, Detection)> = dets.drain(..).enumerate().collect();
    keyed.sort_by(|(i, a), (j, b)| {
        let horizontal = |d: &Detection| match order {
            ReadingOrder::Rtl => -(d.bbox.x1 as isize),
            ReadingOrder::Ltr => d.bbox.x0 as isize,
        };
        rank(column_of[*i])
            .cmp(&rank(column_of[*j]))
            .then(a.bbox.y0.cmp(&b.bbox.y0))
            .then(horizontal(a).cmp(&horizontal(b)))
            .then(a.bbox.cmp(&b.bbox))
            .then(i.cmp(j))
    });
    dets.extend(keyed.into_iter().map(|(_, d)| d));
}

/// Combine contour boxes with boxes from an external detector.
///
/// Every external detection is kept. A contour detection survives only if
/// its IoU with every external detection is below `iou_thresh`, so contours
/// fill in glyphs the detector missed without duplicating ones it found.
pub fn hybrid_merge(
    contour: &[Detection],
    external: &[Detection],
    iou_thresh: f64,
    order: ReadingOrder,
) -> Vec<Detection> {
    let mut out: Vec<Detection> = external.to_vec();
    out.extend(
        contour
            .iter()
            .filter(|c| external.iter().all(|e| iou(&c.bbox, &e.bbox) < iou_thresh))
            .cloned(),
    );
    sort_reading_order(&mut out, order);
    out
}

/// A ground-truth region from a LabelMe file, reduced to its tight box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMeAnnotation {
    pub image_width: usize,
    pub image_height: usize,
    pub shapes: Vec<LabeledBox>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct RawLabelMe {
    shapes: Vec<RawShape>,
    image_width: usize,
    image_height: usize,
}

#[derive(Deserialize)]
struct RawShape {
    label: String,
    points: Vec<[f64; 2]>,
}

/// Read the subset of a LabelMe document used as segmentation ground truth.
/// Polygons (and two-point rectangles) become tight boxes clipped to the
/// image.
pub fn parse_labelme(json: &str) -> Result<LabelMeAnnotation> {
    let raw: RawLabelMe =
        serde_json::from_str(json).map_err(|e| LayoutError::ParseError(e.to_string()))?;
    let (w, h) = (raw.image_width, raw.image_height);
    let mut shapes = Vec::with_capacity(raw.shapes.len());
    for shape in raw.shapes {
        if shape.points.is_empty() {
            return Err(LayoutError::ParseError(format!(
                "shape {:?} has no points",
                shape.label
            )));
        }
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for [x, y] in shape.points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let bx0 = x0.max(0.0).floor() as usize;
        let by0 = y0.max(0.0).floor() as usize;
        let bx1 = (x1.ceil().max(0.0) as usize).max(bx0 + 1).min(w);
        let by1 = (y1.ceil().max(0.0) as usize).max(by0 + 1).min(h);
        let bbox = BBox::new(bx0, by0, bx1, by1).map_err(|_| {
            LayoutError::ParseError(format!("shape {:?} lies outside the image", shape.label))
        })?;
        shapes.push(LabeledBox {
            label: shape.label,
            bbox,
        });
    }
    Ok(LabelMeAnnotation {
        image_width: w,
        image_height: h,
        shapes,
    })
}

pub fn load_labelme(path: impl AsRef<Path>) -> Result<LabelMeAnnotation> {
    parse_labelme(&std::fs::read_to_string(path)?)
}
