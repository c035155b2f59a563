//! Datasets: CSV loading, min-max normalisation, synthetic generators, and
//! a versioned text format bundling trained models with their preprocessing.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::lipbound::Model;
use crate::rng;

/// Rows of features with one numeric label each. Labels keep their raw
/// values; [`Dataset::binary_labels`] and [`Dataset::class_labels`] convert.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParameter {
                name: "points",
                value: 0.0,
                reason: "need at least one row",
            });
        }
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: points.len(),
                got: labels.len(),
            });
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: d.max(1),
                got: points.iter().map(Vec::len).find(|&l| l != d).unwrap_or(0),
            });
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Maps exactly two distinct label values to `-1` / `+1` in ascending
    /// order of the raw values. Returns the labels and the raw value pair.
    pub fn binary_labels(&self) -> Result<(Vec<f64>, [f64; 2])> {
        let mut values: Vec<f64> = Vec::new();
        for &y in &self.labels {
            if !y.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "labels",
                    value: y,
                    reason: "labels must be finite",
                });
            }
            if !values.iter().any(|&v| v == y) {
                values.push(y);
            }
        }
        if values.len() != 2 {
            return Err(Error::InvalidParameter {
                name: "labels",
                value: values.len() as f64,
                reason: "binary data needs exactly two distinct label values",
            });
        }
        values.sort_by(f64::total_cmp);
        let out = self
            .labels
            .iter()
            .map(|&y| if y == values[0] { -1.0 } else { 1.0 })
            .collect();
        Ok((out, [values[0], values[1]]))
    }

    /// Labels as class indices `0..C`, requiring small nonnegative integers.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.labels.len());
        for &y in &self.labels {
            if y.fract() != 0.0 || !(0.0..=255.0).contains(&y) {
                return Err(Error::InvalidParameter {
                    name: "labels",
                    value: y,
                    reason: "class labels must be small nonnegative integers",
                });
            }
            out.push(y as usize);
        }
        Ok(out)
    }

    /// Rescales every column into `[0, 1]` in place and returns the applied
    /// transform. Constant columns map to `0.5`.
    pub fn normalize(&mut self) -> Normalization {
        let norm = Normalization::fit(&self.points);
        for p in &mut self.points {
            norm.apply(p);
        }
        norm
    }
}

/// Per-column affine map `x -> (x - lo) / (hi - lo)` onto the unit box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Self {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn fit(points: &[Vec<f64>]) -> Self {
        let d = points.first().map_or(0, Vec::len);
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in points {
            for (i, &v) in p.iter().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn apply(&self, x: &mut [f64]) {
        for (v, (a, b)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = if b > a { (*v - a) / (b - a) } else { 0.5 };
        }
    }
}

/// Loads `label, feature, ..., feature` rows. A first line whose fields do
/// not all parse as numbers is treated as a header and skipped.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

fn parse_csv(text: &str) -> Result<Dataset> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut width = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if points.is_empty() && idx == 0 => continue, // header
            Err(_) => {
                return Err(Error::DataFormat {
                    line: line_no,
                    reason: "field is not a number".to_string(),
                })
            }
        };
        if row.len() < 2 {
            return Err(Error::DataFormat {
                line: line_no,
                reason: "need at least one feature and a label".to_string(),
            });
        }
        if width == 0 {
            width = row.len();
        } else if row.len() != width {
            return Err(Error::DataFormat {
                line: line_no,
                reason: format!("expected {width} fields, found {}", row.len()),
            });
        }
        let (label, features) = row.split_at(1);
        points.push(features.to_vec());
        labels.push(label[0]);
    }
    if points.is_empty() {
        return Err(Error::DataFormat {
            line: 0,
            reason: "no data rows".to_string(),
        });
    }
    Dataset::new(points, labels)
}

/// Built-in synthetic tasks, generated inside the unit box. Sizes count
/// points per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum Synthetic {
    /// Isotropic clusters with centres drawn uniformly from `[0.2, 0.8]^d`
    /// and noise of standard deviation `0.07`.
    Blobs {
        per_class: usize,
        classes: usize,
        dim: usize,
    },
    /// Two interleaved half-circles with noise `0.05`, labels `0` and `1`.
    TwoMoons { per_class: usize },
}

pub fn gen_synthetic(spec: &Synthetic, seed: u64) -> Result<Dataset> {
    match *spec {
        Synthetic::Blobs {
            per_class,
            classes,
            dim,
        } => {
            if classes < 2 || dim == 0 || per_class == 0 {
                return Err(Error::InvalidParameter {
                    name: "blobs",
                    value: per_class as f64,
                    reason: "need dim >= 1, classes >= 2 and points in each class",
                });
            }
            let mut r = rng::stream(seed, 0xB10B5);
            let centers: Vec<Vec<f64>> = (0..classes)
                .map(|_| (0..dim).map(|_| r.gen_range(0.2..0.8)).collect())
                .collect();
            let n = per_class * classes;
            let mut points = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % classes;
                let p: Vec<f64> = centers[c]
                    .iter()
                    .map(|&m| (m + 0.07 * standard_normal(&mut r)).clamp(0.0, 1.0))
                    .collect();
                points.push(p);
                labels.push(c as f64);
            }
            Dataset::new(points, labels)
        }
        Synthetic::TwoMoons { per_class } => {
            if per_class == 0 {
                return Err(Error::InvalidParameter {
                    name: "per_class",
                    value: 0.0,
                    reason: "need points in each class",
                });
            }
            let mut r = rng::stream(seed, 0x300);
            let n = 2 * per_class;
            let mut points = Vec::with_capacity(n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let t = std::f64::consts::PI * r.gen::<f64>();
                let (raw_x, raw_y, label) = if i % 2 == 0 {
                    (t.cos(), t.sin(), 0.0)
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin(), 1.0)
                };
                let x = raw_x + 0.05 * standard_normal(&mut r);
                let y = raw_y + 0.05 * standard_normal(&mut r);
                points.push(vec![
                    ((x + 1.0) / 3.0).clamp(0.0, 1.0),
                    ((y + 0.5) / 1.5).clamp(0.0, 1.0),
                ]);
                labels.push(label);
            }
            Dataset::new(points, labels)
        }
    }
}

fn standard_normal<R: Rng>(r: &mut R) -> f64 {
    let u1: f64 = 1.0 - r.gen::<f64>();
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Trained scorers together with the preprocessing needed to apply them to
/// raw inputs: one model for binary tasks, one per class otherwise, and the
/// raw label values each score index stands for.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub models: Vec<Model>,
    pub normalization: Normalization,
    pub class_values: Vec<f64>,
}

const BUNDLE_MAGIC: &str = "lipkit-model v1";

impl ModelBundle {
    pub fn new(
        models: Vec<Model>,
        normalization: Normalization,
        class_values: Vec<f64>,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidParameter {
                name: "models",
                value: 0.0,
                reason: "bundle needs at least one model",
            });
        }
        let d = models[0].dim();
        if models.iter().any(|m| m.dim() != d) || normalization.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "bundle dimensions",
                expected: d,
                got: normalization.dim(),
            });
        }
        Ok(Self {
            models,
            normalization,
            class_values,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        let _ = writeln!(out, "{BUNDLE_MAGIC}");
        let _ = writeln!(out, "normalization {}", self.normalization.dim());
        let _ = writeln!(out, "lo {}", join_floats(&self.normalization.lo));
        let _ = writeln!(out, "hi {}", join_floats(&self.normalization.hi));
        let _ = writeln!(out, "class-values {}", join_floats(&self.class_values));
        let _ = writeln!(out, "models {}", self.models.len());
        for m in &self.models {
            let kernel = serde_json::to_string(&m.kernel)
                .map_err(|e| Error::ModelFormat(e.to_string()))?;
            let _ = writeln!(
                out,
                "model {} {} {}",
                m.anchors.len(),
                m.dim(),
                u8::from(m.mean_scale)
            );
            let _ = writeln!(out, "kernel {kernel}");
            for a in &m.anchors {
                let _ = writeln!(out, "anchor {}", join_floats(a));
            }
            let _ = writeln!(out, "coeffs {}", join_floats(m.coeffs.as_slice()));
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let head = lines.next().unwrap_or("");
        if head.trim() != BUNDLE_MAGIC {
            return Err(Error::ModelFormat(format!(
                "expected header '{BUNDLE_MAGIC}', found '{head}'"
            )));
        }
        let dim = parse_usize(&take_tag(&mut lines, "normalization")?)?;
        let lo = parse_floats(&take_tag(&mut lines, "lo")?, dim)?;
        let hi = parse_floats(&take_tag(&mut lines, "hi")?, dim)?;
        let class_line = take_tag(&mut lines, "class-values")?;
        let class_values = if class_line.is_empty() {
            Vec::new()
        } else {
            parse_floats(&class_line, class_line.split_whitespace().count())?
        };
        let n_models = parse_usize(&take_tag(&mut lines, "models")?)?;
        if n_models == 0 {
            return Err(Error::ModelFormat("bundle lists zero models".to_string()));
        }
        let mut models = Vec::with_capacity(n_models);
        for _ in 0..n_models {
            let meta = take_tag(&mut lines, "model")?;
            let parts: Vec<&str> = meta.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::ModelFormat("malformed model line".to_string()));
            }
            let n_anchors = parse_usize(parts[0])?;
            let d = parse_usize(parts[1])?;
            let mean_scale = parts[2] == "1";
            let kernel: KernelSpec = serde_json::from_str(&take_tag(&mut lines, "kernel")?)
                .map_err(|e| Error::ModelFormat(e.to_string()))?;
            let mut anchors = Vec::with_capacity(n_anchors);
            for _ in 0..n_anchors {
                anchors.push(parse_floats(&take_tag(&mut lines, "anchor")?, d)?);
            }
            let coeffs = parse_floats(&take_tag(&mut lines, "coeffs")?, n_anchors)?;
            models.push(Model::new(
                kernel,
                anchors,
                DVector::from_vec(coeffs),
                mean_scale,
            )?);
        }
        Self::new(models, Normalization { lo, hi }, class_values)
    }

    /// Normalises a raw input and evaluates every model on it.
    pub fn scores(&self, raw: &[f64]) -> Result<Vec<f64>> {
        let mut x = raw.to_vec();
        self.normalization.apply(&mut x);
        self.models.iter().map(|m| m.value(&x)).collect()
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.17e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn take_tag(lines: &mut std::str::Lines, tag: &str) -> Result<String> {
    let line = lines
        .next()
        .ok_or_else(|| Error::ModelFormat(format!("missing '{tag}' line")))?;
    line.strip_prefix(tag)
        .map(|rest| rest.trim().to_string())
        .ok_or_else(|| Error::ModelFormat(format!("expected '{tag}' line, found '{line}'")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::ModelFormat(format!("bad count '{s}'")))
}

fn parse_floats(s: &str, expect: usize) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        s.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|_| Error::ModelFormat(format!("bad float in '{s}'")))?;
    if vals.len() != expect {
        return Err(Error::ModelFormat(format!(
            "expected {expect} values, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::BaseKernel;

    #[test]
    fn csv_parses_with_and_without_header() {
        let with = "label,x1,x2\n1, 0.1, 0.2\n0,0.3,0.4\n";
        let ds = parse_csv(with).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.points[0], vec![0.1, 0.2]);
        assert_eq!(ds.labels, vec![1.0, 0.0]);

        let without = "1,0.1,0.2\n\n0,0.3,0.4\n";
        assert_eq!(parse_csv(without).unwrap(), ds);

        let pair = parse_csv("1,0.0\n-1,1.0\n").unwrap();
        assert_eq!(pair.dim(), 1);
        assert_eq!(pair.labels, vec![1.0, -1.0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        match parse_csv("1,0.1,0.2\n0,bad,0.4\n") {
            Err(Error::DataFormat { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a format error, got {other:?}"),
        }
        match parse_csv("1,0.1,0.2\n0,0.3\n") {
            Err(Error::DataFormat { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a format error, got {other:?}"),
        }
        assert!(parse_csv("header,only\n").is_err());
        assert!(parse_csv("5\n").is_err());
    }

    #[test]
    fn normalization_maps_to_unit_box() {
        let mut ds = Dataset::new(
            vec![vec![2.0, 5.0], vec![4.0, 5.0], vec![3.0, 5.0]],
            vec![0.0, 1.0, 0.0],
        )
        .unwrap();
        let norm = ds.normalize();
        assert_eq!(ds.points[0], vec![0.0, 0.5]);
        assert_eq!(ds.points[1], vec![1.0, 0.5]);
        assert_eq!(ds.points[2], vec![0.5, 0.5]);
        assert_eq!(norm.lo, vec![2.0, 5.0]);
        let mut fresh = vec![3.5, 9.0];
        norm.apply(&mut fresh);
        assert_eq!(fresh, vec![0.75, 0.5]);
    }

    #[test]
    fn binary_labels_map_ascending() {
        let ds = Dataset::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![7.0, 3.0, 7.0],
        )
        .unwrap();
        let (ys, values) = ds.binary_labels().unwrap();
        assert_eq!(ys, vec![1.0, -1.0, 1.0]);
        assert_eq!(values, [3.0, 7.0]);

        let three = Dataset::new(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![0.0, 1.0, 2.0],
        )
        .unwrap();
        assert!(three.binary_labels().is_err());
        assert_eq!(three.class_labels().unwrap(), vec![0, 1, 2]);
        let frac = Dataset::new(vec![vec![0.0]], vec![0.5]).unwrap();
        assert!(frac.class_labels().is_err());
    }

    #[test]
    fn synthetic_tasks_fill_the_unit_box() {
        let spec = Synthetic::Blobs {
            per_class: 10,
            classes: 3,
            dim: 3,
        };
        let blobs = gen_synthetic(&spec, 5).unwrap();
        assert_eq!(blobs.len(), 30);
        assert_eq!(blobs.dim(), 3);
        assert!(blobs
            .points
            .iter()
            .flatten()
            .all(|&v| (0.0..=1.0).contains(&v)));
        let counts = blobs.labels.iter().filter(|&&y| y == 0.0).count();
        assert_eq!(counts, 10);
        assert_eq!(blobs, gen_synthetic(&spec, 5).unwrap());

        let moons = gen_synthetic(&Synthetic::TwoMoons { per_class: 20 }, 9).unwrap();
        assert_eq!(moons.len(), 40);
        assert_eq!(moons.dim(), 2);
        assert!(moons.labels.iter().all(|&y| y == 0.0 || y == 1.0));
        assert!(gen_synthetic(
            &Synthetic::Blobs {
                per_class: 5,
                classes: 1,
                dim: 2
            },
            0
        )
        .is_err());
    }

    #[test]
    fn bundle_round_trips_exactly() {
        let kernel = KernelSpec::Product {
            base: BaseKernel::Gaussian { sigma: 0.37 },
            dim: 2,
        };
        let model = Model::new(
            kernel,
            vec![vec![0.1, 0.9], vec![0.25, 1.0 / 3.0], vec![0.7, 0.2]],
            DVector::from_vec(vec![0.5, -1.25, std::f64::consts::PI]),
            false,
        )
        .unwrap();
        let bundle = ModelBundle::new(
            vec![model],
            Normalization {
                lo: vec![-1.5, 2.0],
                hi: vec![2.5, 7.0],
            },
            vec![3.0, 7.0],
        )
        .unwrap();
        let path = std::env::temp_dir().join(format!("lipkit-bundle-{}", std::process::id()));
        bundle.save(&path).unwrap();
        let back = ModelBundle::load(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(back.models[0].kernel, bundle.models[0].kernel);
        assert_eq!(back.models[0].anchors, bundle.models[0].anchors);
        assert_eq!(back.models[0].coeffs, bundle.models[0].coeffs);
        assert_eq!(back.normalization, bundle.normalization);
        assert_eq!(back.class_values, bundle.class_values);

        let raw = [0.5, 4.0];
        assert!((back.scores(&raw).unwrap()[0] - bundle.scores(&raw).unwrap()[0]).abs() < 1e-12);
    }

    #[test]
    fn bundle_rejects_other_versions() {
        assert!(ModelBundle::from_text("lipkit-model v2\n").is_err());
        assert!(ModelBundle::from_text("").is_err());
        let garbled = format!("{BUNDLE_MAGIC}\nnormalization 1\nlo 0\nhi 1\n");
        assert!(ModelBundle::from_text(&garbled).is_err());
    }
}
