//! Learning data: samples, regressor normalization, tags and the weight
//! indicator ω.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::OutputRange;
use crate::error::{Error, Result};
use crate::model::PwnlModel;
use crate::partition::Hyperrectangle;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Tags {
    pub stationary: bool,
    pub near_stationary: bool,
    pub near_switch: bool,
}

impl Tags {
    pub const STATIONARY: Tags = Tags {
        stationary: true,
        near_stationary: false,
        near_switch: false,
    };

    pub fn is_empty(&self) -> bool {
        !(self.stationary || self.near_stationary || self.near_switch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub z_raw: Vec<f64>,
    pub q: f64,
    pub tags: Tags,
}

impl Sample {
    pub fn new(z_raw: Vec<f64>, q: f64) -> Self {
        Sample {
            z_raw,
            q,
            tags: Tags::default(),
        }
    }

    pub fn stationary(mut self) -> Self {
        self.tags.stationary = true;
        self
    }
}

/// Per-dimension min-max map from raw regressors onto `[0, 1]^{n_z}`.
///
/// A degenerate dimension (`hi == lo`) maps to the constant 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Scaler {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && h >= l)) {
            return Err(Error::Config("scaler needs finite bounds with hi >= lo".into()));
        }
        Ok(Scaler { lo, hi })
    }

    pub fn identity(n_z: usize) -> Self {
        Scaler {
            lo: vec![0.0; n_z],
            hi: vec![1.0; n_z],
        }
    }

    /// Fits per-dimension bounds to the samples.
    pub fn fit(samples: &[Sample], n_z: usize) -> Self {
        let mut lo = vec![f64::INFINITY; n_z];
        let mut hi = vec![f64::NEG_INFINITY; n_z];
        for s in samples {
            for (j, &v) in s.z_raw.iter().enumerate() {
                lo[j] = lo[j].min(v);
                hi[j] = hi[j].max(v);
            }
        }
        for j in 0..n_z {
            if hi[j] == lo[j] {
                log::warn!("regressor dimension {} is constant; it maps to 0.5", j + 1);
            }
        }
        Scaler { lo, hi }
    }

    pub fn n_z(&self) -> usize {
        self.lo.len()
    }

    pub fn degenerate_dims(&self) -> Vec<usize> {
        (0..self.n_z()).filter(|&j| self.hi[j] == self.lo[j]).collect()
    }

    /// Normalizes and clamps into `[0, 1]`.
    pub fn scale_into(&self, z_raw: &[f64], out: &mut [f64]) {
        for j in 0..self.lo.len() {
            let w = self.hi[j] - self.lo[j];
            out[j] = if w > 0.0 {
                ((z_raw[j] - self.lo[j]) / w).clamp(0.0, 1.0)
            } else {
                0.5
            };
        }
    }

    pub fn scale(&self, z_raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.lo.len()];
        self.scale_into(z_raw, &mut out);
        out
    }

    pub fn unscale(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, &v)| {
                let w = self.hi[j] - self.lo[j];
                if w > 0.0 {
                    self.lo[j] + v * w
                } else {
                    self.lo[j]
                }
            })
            .collect()
    }
}

/// Piecewise-constant weight indicator ω over tag-defined subsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightIndicator {
    pub rho_st: f64,
    pub rho_stab: f64,
    pub rho_sw: f64,
}

impl Default for WeightIndicator {
    fn default() -> Self {
        WeightIndicator {
            rho_st: 100.0,
            rho_stab: 10.0,
            rho_sw: 2.0,
        }
    }
}

impl WeightIndicator {
    /// Every sample gets weight 1.
    pub const UNIT: WeightIndicator = WeightIndicator {
        rho_st: 1.0,
        rho_stab: 1.0,
        rho_sw: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho_st", self.rho_st),
            ("rho_stab", self.rho_stab),
            ("rho_sw", self.rho_sw),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Stationary beats near-stationary beats near-switch beats untagged.
    pub fn weight(&self, tags: Tags) -> f64 {
        if tags.stationary {
            self.rho_st
        } else if tags.near_stationary {
            self.rho_stab
        } else if tags.near_switch {
            self.rho_sw
        } else {
            1.0
        }
    }

    pub fn weight_of(&self, s: &Sample) -> f64 {
        self.weight(s.tags)
    }
}

/// Samples with a fixed output range and regressor scaler. The normalized
/// regressors are cached row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    n_z: usize,
    range: OutputRange,
    scaler: Scaler,
    z_norm: Vec<f64>,
}

impl Dataset {
    /// `range` and `scaler` default to the data's own extents.
    pub fn new(
        samples: Vec<Sample>,
        n_z: usize,
        range: Option<OutputRange>,
        scaler: Option<Scaler>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyData("dataset has no samples"));
        }
        if n_z == 0 {
            return Err(Error::Config("n_z must be positive".into()));
        }
        for s in &samples {
            if s.z_raw.len() != n_z {
                return Err(Error::Dimension {
                    expected: n_z,
                    got: s.z_raw.len(),
                });
            }
            if !s.q.is_finite() || s.z_raw.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("samples must be finite".into()));
            }
        }
        let (q_min, q_max) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.q), hi.max(s.q)));
        let range = match range {
            Some(r) => {
                if q_min < r.q_lo || q_max > r.q_hi {
                    return Err(Error::Config(format!(
                        "outputs span [{q_min}, {q_max}], outside the range [{}, {}]",
                        r.q_lo, r.q_hi
                    )));
                }
                r
            }
            None if q_max > q_min => OutputRange::new(q_min, q_max)?,
            None => OutputRange::new(q_min - 0.5, q_max + 0.5)?,
        };
        let scaler = match scaler {
            Some(sc) => {
                if sc.n_z() != n_z {
                    return Err(Error::Dimension {
                        expected: n_z,
                        got: sc.n_z(),
                    });
                }
                sc
            }
            None => Scaler::fit(&samples, n_z),
        };
        let mut z_norm = vec![0.0; samples.len() * n_z];
        for (s, out) in samples.iter().zip(z_norm.chunks_mut(n_z)) {
            scaler.scale_into(&s.z_raw, out);
        }
        Ok(Dataset {
            samples,
            n_z,
            range,
            scaler,
            z_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn range(&self) -> &OutputRange {
        &self.range
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Normalized regressor of sample `k`.
    pub fn z(&self, k: usize) -> &[f64] {
        &self.z_norm[k * self.n_z..(k + 1) * self.n_z]
    }

    pub fn q(&self, k: usize) -> f64 {
        self.samples[k].q
    }

    pub fn tags(&self, k: usize) -> Tags {
        self.samples[k].tags
    }

    pub fn stationary_count(&self) -> usize {
        self.samples.iter().filter(|s| s.tags.stationary).count()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset::new(samples, self.n_z, Some(self.range), Some(self.scaler.clone()))
            .expect("subset of a valid dataset is valid")
    }

    /// Same samples, new output range.
    pub fn with_range(&self, range: OutputRange) -> Result<Dataset> {
        Dataset::new(self.samples.clone(), self.n_z, Some(range), Some(self.scaler.clone()))
    }

    /// Shuffled split into `(train, validation)` with a fixed seed.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let mut idx = self.all_indices();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((self.len() as f64) * train_fraction.clamp(0.0, 1.0)).round() as usize;
        if n_train == 0 || n_train == self.len() {
            return Err(Error::EmptyData("split leaves one side empty"));
        }
        let (a, b) = idx.split_at(n_train);
        let pick = |ix: &[usize]| {
            let mut ix = ix.to_vec();
            ix.sort_unstable();
            self.with_samples(ix.iter().map(|&k| self.samples[k].clone()).collect())
        };
        Ok((pick(a), pick(b)))
    }

    /// Marks sample `k` stationary when the last `run_len` raw-regressor
    /// increments all have ∞-norm at most `threshold`.
    pub fn detect_stationary(&self, threshold: f64, run_len: usize) -> Dataset {
        let mut samples = self.samples.clone();
        let mut run = 0usize;
        for k in 1..samples.len() {
            let step = samples[k]
                .z_raw
                .iter()
                .zip(&samples[k - 1].z_raw)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            run = if step <= threshold { run + 1 } else { 0 };
            if run >= run_len.max(1) {
                samples[k].tags.stationary = true;
            }
        }
        self.with_samples(samples)
    }

    /// Recomputes the near-stationary and near-switch tags.
    ///
    /// A sample is near-stationary when its normalized regressor lies within
    /// ∞-distance `r_stab` of a stationary sample, and near-switch when it lies
    /// within `r_sw` of an interior facet of the cell containing it.
    pub fn tag_neighborhoods(
        &self,
        r_stab: f64,
        r_sw: f64,
        cells: Option<&[Hyperrectangle]>,
    ) -> Dataset {
        let mut samples = self.samples.clone();
        let stationary: Vec<usize> = (0..self.len()).filter(|&k| self.tags(k).stationary).collect();
        for (k, s) in samples.iter_mut().enumerate() {
            s.tags.near_stationary = r_stab > 0.0
                && !s.tags.stationary
                && stationary.iter().any(|&j| inf_dist(self.z(k), self.z(j)) <= r_stab);
            s.tags.near_switch = false;
        }
        if let (Some(cells), true) = (cells, r_sw > 0.0) {
            for (k, s) in samples.iter_mut().enumerate() {
                let z = self.z(k);
                if let Some(rect) = cells.iter().find(|r| r.contains(z)) {
                    s.tags.near_switch = rect.interior_facet_distance(z) <= r_sw;
                }
            }
        }
        self.with_samples(samples)
    }
}

fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Reads the dataset CSV `z1,...,z<n_z>,q,tag`. With `n_z = None` the
/// dimension is taken from the header.
pub fn load_dataset(path: impl AsRef<Path>, n_z: Option<usize>) -> Result<Dataset> {
    load_dataset_with_range(path, n_z, None)
}

pub fn load_dataset_with_range(
    path: impl AsRef<Path>,
    n_z: Option<usize>,
    range: Option<OutputRange>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let parse_err = |row: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = rdr.headers()?.clone();
    let cols = header.len();
    if cols < 3 || &header[cols - 2] != "q" || &header[cols - 1] != "tag" {
        return Err(parse_err(1, "header must be z1,...,zN,q,tag".into()));
    }
    let found = cols - 2;
    if let Some(n) = n_z {
        if n != found {
            return Err(Error::Dimension {
                expected: n,
                got: found,
            });
        }
    }
    for (j, name) in header.iter().take(found).enumerate() {
        if name != format!("z{}", j + 1) {
            return Err(parse_err(1, format!("expected column z{}, found {name:?}", j + 1)));
        }
    }
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if rec.len() != cols {
            return Err(Error::Dimension {
                expected: cols,
                got: rec.len(),
            });
        }
        let num = |j: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[j]
                .trim()
                .parse()
                .map_err(|_| parse_err(row, format!("{name} is not a number: {:?}", &rec[j])))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("{name} is not finite")));
            }
            Ok(v)
        };
        let z_raw = (0..found)
            .map(|j| num(j, &format!("z{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        let q = num(found, "q")?;
        let mut s = Sample::new(z_raw, q);
        match rec[found + 1].trim() {
            "" => {}
            "stationary" => s.tags.stationary = true,
            other => return Err(parse_err(row, format!("unknown tag {other:?}"))),
        }
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(Error::EmptyData("dataset file has no rows"));
    }
    Dataset::new(samples, found, range, None)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=ds.n_z()).map(|j| format!("z{j}")).collect();
    header.push("q".into());
    header.push("tag".into());
    w.write_record(&header)?;
    for s in ds.samples() {
        let mut row: Vec<String> = s.z_raw.iter().map(|v| v.to_string()).collect();
        row.push(s.q.to_string());
        row.push(if s.tags.stationary { "stationary" } else { "" }.into());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Samples `n` regressors uniformly over the normalized domain and labels
/// them with the model output plus uniform noise in `[-noise, noise]`,
/// clipped to the model's output range.
pub fn gen_synthetic(truth: &PwnlModel, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyData("requested zero samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_z = truth.n_z();
    let range = *truth.range();
    let samples = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..n_z).map(|_| rng.gen::<f64>()).collect();
            let z_raw = truth.scaler().unscale(&z);
            let mut q = truth.eval(&z_raw);
            if noise > 0.0 {
                q += rng.gen_range(-noise..=noise);
            }
            Sample::new(z_raw, range.clamp(q))
        })
        .collect();
    Dataset::new(samples, n_z, Some(range), Some(truth.scaler().clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_rows() {
        let f = write_tmp("z1,z2,q,tag\n0,1,0.5,\n1,2,0.7,stationary\n2,0,0.6,\n");
        let ds = load_dataset(f.path(), Some(2)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.stationary_count(), 1);
        assert_eq!(ds.range().q_lo, 0.5);
        assert_eq!(ds.range().q_hi, 0.7);
        assert_eq!(ds.z(1), &[0.5, 1.0]);
    }

    #[test]
    fn parse_error_names_row() {
        let f = write_tmp("z1,q,tag\n0,0.5,\n1,abc,\n");
        match load_dataset(f.path(), None) {
            Err(Error::Parse { row, msg, .. }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("q"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        let f = write_tmp("z1,z2,q,tag\n0,1,0.5,\n");
        assert!(matches!(load_dataset(f.path(), Some(3)), Err(Error::Dimension { .. })));
        let f = write_tmp("z1,z2,q,tag\n0,1,0.5\n");
        assert!(load_dataset(f.path(), Some(2)).is_err());
    }

    #[test]
    fn unknown_tag_rejected() {
        let f = write_tmp("z1,q,tag\n0,0.5,bogus\n");
        assert!(matches!(load_dataset(f.path(), None), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn degenerate_dimension_maps_to_half() {
        let samples = vec![Sample::new(vec![1.0, 3.0], 0.0), Sample::new(vec![2.0, 3.0], 1.0)];
        let ds = Dataset::new(samples, 2, None, None).unwrap();
        assert_eq!(ds.scaler().degenerate_dims(), vec![1]);
        assert_eq!(ds.z(0), &[0.0, 0.5]);
        assert_eq!(ds.z(1), &[1.0, 0.5]);
    }

    #[test]
    fn constant_output_gets_nondegenerate_range() {
        let samples = vec![Sample::new(vec![1.0], 2.0), Sample::new(vec![2.0], 2.0)];
        let ds = Dataset::new(samples, 1, None, None).unwrap();
        assert!(ds.range().span() > 0.0);
    }

    #[test]
    fn range_override_must_contain_data() {
        let samples = vec![Sample::new(vec![1.0], 0.2), Sample::new(vec![2.0], 0.9)];
        let r = OutputRange::new(0.35, 0.7).unwrap();
        assert!(Dataset::new(samples.clone(), 1, Some(r), None).is_err());
        let r = OutputRange::new(0.0, 1.0).unwrap();
        assert_eq!(Dataset::new(samples, 1, Some(r), None).unwrap().range().q_hi, 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let samples = vec![
            Sample::new(vec![0.1, -3.25], 0.123456789).stationary(),
            Sample::new(vec![1.0 / 3.0, 7.0], 0.9),
        ];
        let ds = Dataset::new(samples, 2, None, None).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&ds, f.path()).unwrap();
        let back = load_dataset(f.path(), Some(2)).unwrap();
        assert_eq!(back.samples(), ds.samples());
    }

    #[test]
    fn weight_priority() {
        let w = WeightIndicator::default();
        let mut s = Sample::new(vec![0.0], 0.0);
        assert_eq!(w.weight_of(&s), 1.0);
        s.tags.near_switch = true;
        assert_eq!(w.weight_of(&s), 2.0);
        s.tags.near_stationary = true;
        assert_eq!(w.weight_of(&s), 10.0);
        s.tags.stationary = true;
        assert_eq!(w.weight_of(&s), 100.0);
        let both = Tags {
            stationary: true,
            near_switch: true,
            ..Tags::default()
        };
        assert_eq!(w.weight(both), 100.0);
        assert!(WeightIndicator { rho_sw: 0.0, ..w }.validate().is_err());
    }

    #[test]
    fn neighborhood_tags() {
        let samples = vec![
            Sample::new(vec![0.0, 0.0], 0.0),
            Sample::new(vec![0.5, 0.5], 0.5).stationary(),
            Sample::new(vec![0.51, 0.5], 0.5),
            Sample::new(vec![1.0, 1.0], 1.0),
        ];
        let ds = Dataset::new(samples, 2, None, None).unwrap();

        let none = ds.tag_neighborhoods(0.0, 0.0, None);
        assert!((0..4).all(|k| !none.tags(k).near_stationary && !none.tags(k).near_switch));

        let t = ds.tag_neighborhoods(0.02, 0.01, None);
        assert!(t.tags(2).near_stationary);
        assert!(!t.tags(0).near_stationary && !t.tags(3).near_stationary);
        assert!(!t.tags(1).near_stationary, "stationary samples keep their own tag");
        assert!((0..4).all(|k| !t.tags(k).near_switch));

        let left = Hyperrectangle::new(vec![0.0, 0.0], vec![0.505, 1.0]);
        let right = Hyperrectangle::new(vec![0.505, 0.0], vec![1.0, 1.0]);
        let t = ds.tag_neighborhoods(0.0, 0.01, Some(&[left, right]));
        assert!(t.tags(1).near_switch && t.tags(2).near_switch);
        assert!(!t.tags(0).near_switch && !t.tags(3).near_switch);
    }

    #[test]
    fn stationary_detector() {
        let samples: Vec<Sample> = [0.0, 1.0, 1.0, 1.0, 1.0, 2.0]
            .iter()
            .map(|&v| Sample::new(vec![v], v))
            .collect();
        let ds = Dataset::new(samples, 1, None, None).unwrap().detect_stationary(1e-9, 2);
        let flags: Vec<bool> = (0..ds.len()).map(|k| ds.tags(k).stationary).collect();
        assert_eq!(flags, vec![false, false, false, true, true, false]);
    }

    #[test]
    fn split_is_deterministic_and_complete() {
        let samples: Vec<Sample> = (0..20).map(|k| Sample::new(vec![k as f64], k as f64)).collect();
        let ds = Dataset::new(samples, 1, None, None).unwrap();
        let (a, b) = ds.split(0.75, 4).unwrap();
        let (a2, _) = ds.split(0.75, 4).unwrap();
        assert_eq!(a, a2);
        assert_eq!(a.len() + b.len(), 20);
        assert_eq!(a.range(), ds.range());
    }

    #[test]
    fn scaler_round_trip() {
        let sc = Scaler::new(vec![-2.0, 10.0], vec![3.0, 11.5]).unwrap();
        for z in [[-2.0, 10.0], [0.3, 11.0], [3.0, 11.5]] {
            let back = sc.unscale(&sc.scale(&z));
            for j in 0..2 {
                assert!((back[j] - z[j]).abs() < 1e-12);
            }
        }
    }
}
