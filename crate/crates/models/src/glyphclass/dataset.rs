use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use hgt_core::gardiner::parse_gardiner;
use hgt_core::imaging::{augment, load_image, AugSpec, Raster};
use hgt_core::synth::glyph_image;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GlyphError, Result};

/// Dense label ↔ id map. Ids follow the sorted label order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassIndex {
    labels: Vec<String>,
}

impl ClassIndex {
    pub fn new<S: AsRef<str>>(labels: impl IntoIterator<Item = S>) -> Self {
        let set: BTreeSet<String> = labels.into_iter().map(|s| s.as_ref().to_string()).collect();
        Self {
            labels: set.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Items with dense class ids. `T` is an image path for on-disk datasets and
/// a [`Raster`] once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphDataset<T = PathBuf> {
    pub items: Vec<(T, usize)>,
    pub class_index: ClassIndex,
}

impl<T> GlyphDataset<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|(_, l)| *l).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("pgm" | "ppm")
    )
}

fn check_code(label: &str, path: &Path) -> Result<()> {
    parse_gardiner(label)
        .map(|_| ())
        .map_err(|e| GlyphError::Dataset {
            path: path.to_path_buf(),
            msg: format!("label {label:?} is not a Gardiner code: {e}"),
        })
}

impl GlyphDataset<PathBuf> {
    /// One sub-directory per Gardiner code, images (`.pgm`/`.ppm`) inside.
    pub fn from_dir(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut by_label: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        for entry in std::fs::read_dir(root)? {
            let path = entry?.path();
            if !path.is_dir() {
                continue;
            }
            let label = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            check_code(&label, &path)?;
            let mut files = Vec::new();
            for f in std::fs::read_dir(&path)? {
                let f = f?.path();
                if f.is_file() && is_image(&f) {
                    files.push(f);
                }
            }
            files.sort();
            by_label.insert(label, files);
        }
        Self::from_groups(by_label)
    }

    /// `path<TAB>code` lines; relative paths resolve against the file's
    /// directory. Blank lines and `#` comments are skipped.
    pub fn from_labels_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        let text = std::fs::read_to_string(path)?;
        let mut by_label: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (file, code) = line.split_once('\t').ok_or_else(|| GlyphError::Dataset {
                path: path.to_path_buf(),
                msg: format!("line {}: expected path<TAB>code", n + 1),
            })?;
            let code = code.trim();
            check_code(code, path)?;
            by_label
                .entry(code.to_string())
                .or_default()
                .push(base.join(file));
        }
        Self::from_groups(by_label)
    }

    fn from_groups(groups: BTreeMap<String, Vec<PathBuf>>) -> Result<Self> {
        if let Some((label, _)) = groups.iter().find(|(_, v)| v.is_empty()) {
            return Err(GlyphError::EmptyClass(label.clone()));
        }
        let class_index = ClassIndex::new(groups.keys());
        let items = groups
            .into_iter()
            .enumerate()
            .flat_map(|(id, (_, paths))| paths.into_iter().map(move |p| (p, id)))
            .collect();
        Ok(Self { items, class_index })
    }

    pub fn load_images(&self) -> Result<GlyphDataset<Raster>> {
        let items = self
            .items
            .iter()
            .map(|(p, l)| Ok((load_image(p)?, *l)))
            .collect::<Result<_>>()?;
        Ok(GlyphDataset {
            items,
            class_index: self.class_index.clone(),
        })
    }
}

/// Split fractions; the default is 60/20/20, stratified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn standard(seed: u64) -> Self {
        Self {
            train: 0.6,
            valid: 0.2,
            test: 0.2,
            seed,
            stratified: true,
        }
    }
}

/// Part sizes for `n` items: floors first, then leftover items go to the
/// largest fractional remainders (ties: train, valid, test).
fn part_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Index partition `(train, valid, test)` for `labels` in `0..num_classes`.
pub fn split_indices(
    labels: &[usize],
    num_classes: usize,
    spec: &SplitSpec,
) -> Result<[Vec<usize>; 3]> {
    let fractions = [spec.train, spec.valid, spec.test];
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(GlyphError::InvalidConfig(format!(
            "split fractions {fractions:?} must lie in [0, 1] and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = if spec.stratified {
        let mut g = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            g[l].push(i);
        }
        if let Some(c) = g.iter().position(Vec::is_empty) {
            return Err(GlyphError::EmptyClass(format!("class id {c}")));
        }
        g
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut parts: [Vec<usize>; 3] = Default::default();
    for mut group in groups {
        group.shuffle(&mut rng);
        let sizes = part_sizes(group.len(), fractions);
        let mut rest = group.as_slice();
        for (part, size) in parts.iter_mut().zip(sizes) {
            let (head, tail) = rest.split_at(size);
            part.extend_from_slice(head);
            rest = tail;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Stratified, seeded split into train, valid and test datasets that share
/// the class index.
pub fn split_dataset<T: Clone>(
    ds: &GlyphDataset<T>,
    spec: &SplitSpec,
) -> Result<(GlyphDataset<T>, GlyphDataset<T>, GlyphDataset<T>)> {
    if let Some(label) = (0..ds.num_classes())
        .find(|&c| !ds.items.iter().any(|(_, l)| *l == c))
        .and_then(|c| ds.class_index.label(c))
    {
        return Err(GlyphError::EmptyClass(label.to_string()));
    }
    let [a, b, c] = split_indices(&ds.labels(), ds.num_classes(), spec)?;
    let pick = |idx: Vec<usize>| GlyphDataset {
        items: idx.into_iter().map(|i| ds.items[i].clone()).collect(),
        class_index: ds.class_index.clone(),
    };
    Ok((pick(a), pick(b), pick(c)))
}

/// `per_class` augmented renderings of each code's synthetic glyph. The
/// first sample of every class is the clean rendering.
pub fn rendered_glyph_set<S: AsRef<str>>(
    codes: &[S],
    per_class: usize,
    glyph_size: usize,
    aug: &AugSpec,
) -> Result<GlyphDataset<Raster>> {
    let class_index = ClassIndex::new(codes.iter().map(|c| c.as_ref()));
    let mut items = Vec::with_capacity(codes.len() * per_class);
    for (id, label) in class_index.labels().iter().enumerate() {
        let clean = glyph_image(label, glyph_size);
        for i in 0..per_class {
            let img = if i == 0 {
                clean.clone()
            } else {
                let seed = aug.seed ^ ((id as u64) << 32) ^ i as u64;
                augment(&clean, &aug.with_seed(seed))?
            };
            items.push((img, id));
        }
    }
    Ok(GlyphDataset { items, class_index })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_sizes() {
        let f = [0.6, 0.2, 0.2];
        assert_eq!(part_sizes(100, f), [60, 20, 20]);
        assert_eq!(part_sizes(5, f), [3, 1, 1]);
        assert_eq!(part_sizes(1, f), [1, 0, 0]);
        assert_eq!(part_sizes(2, f), [1, 1, 0]);
        // 2.4 / 0.8 / 0.8: the two 0.8 remainders win.
        assert_eq!(part_sizes(4, f), [2, 1, 1]);
    }

    #[test]
    fn one_class_of_hundred() {
        let labels = vec![0; 100];
        let [a, b, c] = split_indices(&labels, 1, &SplitSpec::standard(1)).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (60, 20, 20));
    }

    #[test]
    fn empty_class_rejected() {
        let labels = vec![0, 0, 2];
        assert!(matches!(
            split_indices(&labels, 3, &SplitSpec::standard(0)),
            Err(GlyphError::EmptyClass(_))
        ));
    }

    #[test]
    fn bad_fractions_rejected() {
        let mut spec = SplitSpec::standard(0);
        spec.test = 0.3;
        assert!(split_indices(&[0], 1, &spec).is_err());
    }

    #[test]
    fn class_index_is_sorted_and_dense() {
        let ci = ClassIndex::new(["V31", "A1", "M17", "A1"]);
        assert_eq!(ci.labels(), &["A1", "M17", "V31"]);
        assert_eq!(ci.id("M17"), Some(1));
        assert_eq!(ci.id("Z1"), None);
    }
}
