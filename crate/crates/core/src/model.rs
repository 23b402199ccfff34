//! The deployable piecewise controller: region lookup, evaluation and the
//! JSON model format.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, MonotoneSubmodel, OutputRange};
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::partition::Hyperrectangle;

pub const MODEL_VERSION: &str = "pwnl-model/v1";
pub const MIMO_VERSION: &str = "pwnl-mimo/v1";

/// Tolerance on the cover check `Σ volume = 1`.
const VOLUME_TOL: f64 = 1e-9;
/// Tolerance on the stored grid monotonicity constraint, relative to ε.
const GRID_TOL: f64 = 1e-6;
/// Cell count from which `locate` goes through the bucket index.
const INDEX_THRESHOLD: usize = 8;
const INDEX_BUCKETS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCell {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub submodel: usize,
}

impl ModelCell {
    pub fn rect(&self) -> Hyperrectangle {
        Hyperrectangle::new(self.lo.clone(), self.hi.clone())
    }

    fn contains(&self, z: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(z).all(|((&lo, &hi), &v)| {
            lo <= v && (v < hi || (hi >= 1.0 && v <= hi))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelMeta {
    pub sigma: Option<f64>,
    /// Raw complexity: region count before merging.
    pub r: usize,
    /// Reduced complexity: distinct submodels.
    pub s: usize,
    pub max_gamma: Option<f64>,
    pub created_by: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    n_z: usize,
    basis: BasisConfig,
    range: OutputRange,
    scaler: Scaler,
    cells: Vec<ModelCell>,
    submodels: Vec<MonotoneSubmodel>,
    #[serde(default)]
    meta: ModelMeta,
}

/// Uniform buckets along one axis; each lists the cells overlapping it.
#[derive(Debug, Clone)]
struct BucketIndex {
    axis: usize,
    buckets: Vec<Vec<usize>>,
}

impl BucketIndex {
    fn build(cells: &[ModelCell], n_z: usize) -> Self {
        // The axis with the most distinct cut positions discriminates best.
        let axis = (0..n_z)
            .max_by_key(|&a| {
                let cuts: BTreeSet<u64> = cells.iter().map(|c| c.lo[a].to_bits()).collect();
                (cuts.len(), std::cmp::Reverse(a))
            })
            .unwrap_or(0);
        let n = INDEX_BUCKETS;
        let mut buckets = vec![Vec::new(); n];
        for (i, c) in cells.iter().enumerate() {
            let first = Self::bucket_of(c.lo[axis], n);
            let last = Self::bucket_of(c.hi[axis], n);
            for b in buckets.iter_mut().take(last + 1).skip(first) {
                b.push(i);
            }
        }
        BucketIndex { axis, buckets }
    }

    fn bucket_of(v: f64, n: usize) -> usize {
        ((v * n as f64).floor() as usize).min(n - 1)
    }

    fn candidates(&self, z: &[f64]) -> &[usize] {
        &self.buckets[Self::bucket_of(z[self.axis], self.buckets.len())]
    }
}

/// Piecewise Wiener approximation of one scalar output.
#[derive(Debug, Clone)]
pub struct PwnlModel {
    cfg: BasisConfig,
    range: OutputRange,
    scaler: Scaler,
    cells: Vec<ModelCell>,
    submodels: Vec<MonotoneSubmodel>,
    meta: ModelMeta,
    index: Option<BucketIndex>,
}

impl PwnlModel {
    /// Assembles and validates a model. Unreferenced submodels are dropped
    /// and the remaining ids renumbered in order of first use.
    pub fn new(
        cfg: BasisConfig,
        range: OutputRange,
        scaler: Scaler,
        cells: Vec<ModelCell>,
        submodels: Vec<MonotoneSubmodel>,
        meta: ModelMeta,
    ) -> Result<Self> {
        let (cells, submodels) = compact(cells, submodels)?;
        let mut m = PwnlModel {
            cfg,
            range,
            scaler,
            cells,
            submodels,
            meta,
            index: None,
        };
        m.meta.s = m.submodels.len();
        if m.meta.r == 0 {
            m.meta.r = m.cells.len();
        }
        m.validate()?;
        m.build_index();
        Ok(m)
    }

    /// A one-cell model over the whole domain.
    pub fn single(
        cfg: BasisConfig,
        range: OutputRange,
        scaler: Scaler,
        submodel: MonotoneSubmodel,
    ) -> Result<Self> {
        let n_z = scaler.n_z();
        let cell = ModelCell {
            lo: vec![0.0; n_z],
            hi: vec![1.0; n_z],
            submodel: 0,
        };
        PwnlModel::new(cfg, range, scaler, vec![cell], vec![submodel], ModelMeta::default())
    }

    fn build_index(&mut self) {
        self.index = (self.cells.len() >= INDEX_THRESHOLD)
            .then(|| BucketIndex::build(&self.cells, self.n_z()));
    }

    pub fn n_z(&self) -> usize {
        self.scaler.n_z()
    }

    pub fn basis(&self) -> &BasisConfig {
        &self.cfg
    }

    pub fn range(&self) -> &OutputRange {
        &self.range
    }

    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }

    pub fn cells(&self) -> &[ModelCell] {
        &self.cells
    }

    pub fn submodels(&self) -> &[MonotoneSubmodel] {
        &self.submodels
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    /// Number of distinct submodels.
    pub fn complexity(&self) -> usize {
        self.submodels.len()
    }

    fn validate(&self) -> Result<()> {
        let n_z = self.n_z();
        if self.cells.is_empty() {
            return Err(Error::Schema("model has no cells".into()));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if c.lo.len() != n_z || c.hi.len() != n_z {
                return Err(Error::Schema(format!("cell {i} has wrong dimension")));
            }
            if !c.rect().is_valid() {
                return Err(Error::Schema(format!("cell {i} is not a box inside the unit cube")));
            }
        }
        for (i, sub) in self.submodels.iter().enumerate() {
            if sub.mu.len() != self.cfg.n_b() || sub.n_z() != n_z {
                return Err(Error::Schema(format!("submodel {i} has wrong dimension")));
            }
            if !sub.satisfies_grid(&self.cfg, GRID_TOL * self.cfg.epsilon()) {
                return Err(Error::Schema(format!(
                    "submodel {i} violates the grid monotonicity constraint"
                )));
            }
            let (g_lo, g_hi) = sub.gamma_bounds();
            if !(g_hi > g_lo) {
                return Err(Error::NotIncreasing { g_lo, g_hi });
            }
        }
        let volume: f64 = self.cells.iter().map(|c| c.rect().volume()).sum();
        if (volume - 1.0).abs() > VOLUME_TOL {
            return Err(Error::Schema(format!("cells cover volume {volume}, expected 1")));
        }
        let rects: Vec<Hyperrectangle> = self.cells.iter().map(ModelCell::rect).collect();
        for i in 0..rects.len() {
            for j in i + 1..rects.len() {
                if rects[i].interiors_overlap(&rects[j]) {
                    return Err(Error::Schema(format!("cells {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }

    /// Cell containing a normalized, in-domain regressor.
    pub fn locate_normalized(&self, z: &[f64]) -> usize {
        let found = match &self.index {
            Some(ix) => ix.candidates(z).iter().copied().find(|&i| self.cells[i].contains(z)),
            None => self.cells.iter().position(|c| c.contains(z)),
        };
        // Only reachable with a NaN component.
        found.unwrap_or(0)
    }

    /// Linear-scan lookup, the reference for the bucket index.
    pub fn locate_linear(&self, z: &[f64]) -> usize {
        self.cells.iter().position(|c| c.contains(z)).unwrap_or(0)
    }

    /// Normalizes `z_raw`, clamping into the unit cube, and returns the
    /// containing cell.
    pub fn locate(&self, z_raw: &[f64]) -> usize {
        self.locate_normalized(&self.scaler.scale(z_raw))
    }

    /// Output for a normalized regressor.
    pub fn eval_normalized(&self, z: &[f64]) -> f64 {
        let sub = &self.submodels[self.cells[self.locate_normalized(z)].submodel];
        sub.predict_unchecked(&self.cfg, z, &self.range)
    }

    /// `F_(i)(Z)` of the cell containing `Z`, saturated to `[q_lo, q_hi]`.
    pub fn eval(&self, z_raw: &[f64]) -> f64 {
        debug_assert_eq!(z_raw.len(), self.n_z());
        let mut buf = [0.0; 32];
        if z_raw.len() <= buf.len() {
            let z = &mut buf[..z_raw.len()];
            self.scaler.scale_into(z_raw, z);
            self.eval_normalized(z)
        } else {
            self.eval_normalized(&self.scaler.scale(z_raw))
        }
    }

    fn to_file(&self) -> ModelFile {
        ModelFile {
            version: MODEL_VERSION.to_string(),
            n_z: self.n_z(),
            basis: self.cfg.clone(),
            range: self.range,
            scaler: self.scaler.clone(),
            cells: self.cells.clone(),
            submodels: self.submodels.clone(),
            meta: self.meta.clone(),
        }
    }

    fn from_file(f: ModelFile) -> Result<Self> {
        if f.scaler.n_z() != f.n_z {
            return Err(Error::Schema(format!(
                "scaler has {} dimensions, n_z is {}",
                f.scaler.n_z(),
                f.n_z
            )));
        }
        let m = PwnlModel {
            cfg: f.basis,
            range: f.range,
            scaler: f.scaler,
            cells: f.cells,
            submodels: f.submodels,
            meta: f.meta,
            index: None,
        };
        let referenced: BTreeSet<usize> = m.cells.iter().map(|c| c.submodel).collect();
        if referenced.iter().any(|&id| id >= m.submodels.len()) {
            return Err(Error::Schema("cell references a missing submodel".into()));
        }
        if referenced.len() != m.submodels.len() {
            return Err(Error::Schema("model lists unreferenced submodels".into()));
        }
        m.validate()?;
        let mut m = m;
        m.build_index();
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = parse_json(s)?;
        check_version(&value, MODEL_VERSION)?;
        let f: ModelFile =
            serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        PwnlModel::from_file(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        PwnlModel::from_json(&std::fs::read_to_string(path)?)
    }
}

fn parse_json(s: &str) -> Result<serde_json::Value> {
    serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))
}

fn check_version(value: &serde_json::Value, expected: &'static str) -> Result<()> {
    match value.get("version").and_then(|v| v.as_str()) {
        Some(v) if v == expected => Ok(()),
        Some(v) => Err(Error::Version {
            found: v.to_string(),
            expected,
        }),
        None => Err(Error::Schema("missing version field".into())),
    }
}

fn compact(
    mut cells: Vec<ModelCell>,
    submodels: Vec<MonotoneSubmodel>,
) -> Result<(Vec<ModelCell>, Vec<MonotoneSubmodel>)> {
    let mut remap: Vec<Option<usize>> = vec![None; submodels.len()];
    let mut kept = Vec::new();
    for c in cells.iter_mut() {
        let old = c.submodel;
        if old >= submodels.len() {
            return Err(Error::Schema(format!("cell references missing submodel {old}")));
        }
        let new = *remap[old].get_or_insert_with(|| {
            kept.push(submodels[old].clone());
            kept.len() - 1
        });
        c.submodel = new;
    }
    Ok((cells, kept))
}

/// Several scalar models over one regressor, evaluated together.
#[derive(Debug, Clone)]
pub struct MimoModel {
    outputs: Vec<(String, PwnlModel)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MimoEntry {
    name: String,
    model: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MimoFile {
    version: String,
    outputs: Vec<MimoEntry>,
}

impl MimoModel {
    pub fn new(outputs: Vec<(String, PwnlModel)>) -> Result<Self> {
        let Some((_, first)) = outputs.first() else {
            return Err(Error::Config("a multi-output model needs at least one output".into()));
        };
        for (name, m) in &outputs[1..] {
            if m.n_z() != first.n_z() {
                return Err(Error::Dimension {
                    expected: first.n_z(),
                    got: m.n_z(),
                });
            }
            if m.scaler() != first.scaler() {
                return Err(Error::Config(format!("output {name:?} uses a different scaler")));
            }
        }
        Ok(MimoModel { outputs })
    }

    pub fn n_z(&self) -> usize {
        self.outputs[0].1.n_z()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.outputs.iter().map(|(n, _)| n.as_str())
    }

    pub fn outputs(&self) -> &[(String, PwnlModel)] {
        &self.outputs
    }

    /// Evaluates every output in declaration order, normalizing `z` once.
    pub fn eval_mimo(&self, z_raw: &[f64]) -> Vec<(String, f64)> {
        let z = self.outputs[0].1.scaler().scale(z_raw);
        self.outputs
            .iter()
            .map(|(n, m)| (n.clone(), m.eval_normalized(&z)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let outputs = self
            .outputs
            .iter()
            .map(|(name, m)| {
                Ok(MimoEntry {
                    name: name.clone(),
                    model: serde_json::to_value(m.to_file())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let f = MimoFile {
            version: MIMO_VERSION.to_string(),
            outputs,
        };
        Ok(serde_json::to_string_pretty(&f)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value = parse_json(s)?;
        check_version(&value, MIMO_VERSION)?;
        let f: MimoFile =
            serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        let outputs = f
            .outputs
            .into_iter()
            .map(|e| {
                check_version(&e.model, MODEL_VERSION)?;
                let mf: ModelFile =
                    serde_json::from_value(e.model).map_err(|e| Error::Schema(e.to_string()))?;
                Ok((e.name, PwnlModel::from_file(mf)?))
            })
            .collect::<Result<Vec<_>>>()?;
        MimoModel::new(outputs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        MimoModel::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sub(l: Vec<f64>) -> MonotoneSubmodel {
        // Γ(η) = η through B₂⁽¹⁾, which satisfies the grid constraint at ε = 1.
        let cfg = cfg();
        let mut mu = vec![0.0; cfg.n_b()];
        mu[cfg.n_m()] = 1.0;
        MonotoneSubmodel::new(mu, l)
    }

    fn cfg() -> BasisConfig {
        BasisConfig::uniform(3, 0.5, 1.0, 20).unwrap()
    }

    fn two_cell() -> PwnlModel {
        let cells = vec![
            ModelCell { lo: vec![0.0, 0.0], hi: vec![0.5, 1.0], submodel: 0 },
            ModelCell { lo: vec![0.5, 0.0], hi: vec![1.0, 1.0], submodel: 1 },
        ];
        PwnlModel::new(
            cfg(),
            OutputRange::new(0.0, 1.0).unwrap(),
            Scaler::new(vec![0.0, 0.0], vec![2.0, 2.0]).unwrap(),
            cells,
            vec![sub(vec![0.5, 0.5]), sub(vec![1.0, 0.0])],
            ModelMeta::default(),
        )
        .unwrap()
    }

    /// A grid of `k × k` cells with alternating submodels.
    fn grid_model(k: usize, rng: &mut ChaCha8Rng) -> PwnlModel {
        let mut cells = Vec::new();
        for a in 0..k {
            for b in 0..k {
                let f = |i: usize| i as f64 / k as f64;
                cells.push(ModelCell {
                    lo: vec![f(a), f(b)],
                    hi: vec![f(a + 1), f(b + 1)],
                    submodel: (a + b) % 3,
                });
            }
        }
        let subs = (0..3).map(|_| sub(vec![rng.gen(), rng.gen()])).collect();
        PwnlModel::new(
            cfg(),
            OutputRange::new(-1.0, 1.0).unwrap(),
            Scaler::identity(2),
            cells,
            subs,
            ModelMeta::default(),
        )
        .unwrap()
    }

    #[test]
    fn single_cell_locates_everything() {
        let m = PwnlModel::single(
            cfg(),
            OutputRange::new(0.0, 1.0).unwrap(),
            Scaler::identity(1),
            sub(vec![1.0]),
        )
        .unwrap();
        for z in [-3.0, 0.0, 0.4, 1.0, 7.0] {
            assert_eq!(m.locate(&[z]), 0);
        }
        assert!((m.eval(&[0.25]) - 0.25).abs() < 1e-12);
        assert_eq!(m.eval(&[9.0]), 1.0);
    }

    #[test]
    fn facet_point_goes_right() {
        let m = two_cell();
        assert_eq!(m.locate(&[1.0, 0.3]), 1);
        assert_eq!(m.locate(&[0.999, 0.3]), 0);
        assert_eq!(m.locate(&[2.0, 2.0]), 1);
    }

    #[test]
    fn bucket_index_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = grid_model(6, &mut rng);
        assert!(m.index.is_some());
        for _ in 0..100_000 {
            let z = [rng.gen::<f64>(), rng.gen::<f64>()];
            assert_eq!(m.locate_normalized(&z), m.locate_linear(&z));
        }
        for z in [[1.0, 1.0], [0.5, 0.5], [0.0, 1.0], [1.0 / 6.0, 2.0 / 6.0]] {
            assert_eq!(m.locate_normalized(&z), m.locate_linear(&z));
        }
    }

    #[test]
    fn eval_is_deterministic_and_saturated() {
        let m = two_cell();
        let q = m.eval(&[0.3, 1.1]);
        for _ in 0..100 {
            assert_eq!(m.eval(&[0.3, 1.1]).to_bits(), q.to_bits());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let q = m.eval(&[rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]);
            assert!((0.0..=1.0).contains(&q));
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = grid_model(4, &mut rng);
        let back = PwnlModel::from_json(&m.to_json().unwrap()).unwrap();
        for _ in 0..10_000 {
            let z = [rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2)];
            assert_eq!(m.eval(&z).to_bits(), back.eval(&z).to_bits());
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(PwnlModel::load(&path).unwrap().cells(), m.cells());
    }

    #[test]
    fn truncated_and_future_files_are_rejected() {
        let json = two_cell().to_json().unwrap();
        assert!(matches!(
            PwnlModel::from_json(&json[..json.len() / 2]),
            Err(Error::Schema(_))
        ));
        let future = json.replace(MODEL_VERSION, "pwnl-model/v2");
        assert!(matches!(PwnlModel::from_json(&future), Err(Error::Version { .. })));
    }

    #[test]
    fn load_rejects_bad_geometry() {
        let json = two_cell().to_json().unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["cells"][0]["hi"][0] = serde_json::json!(0.6);
        assert!(matches!(
            PwnlModel::from_json(&v.to_string()),
            Err(Error::Schema(_))
        ));
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["submodels"][0]["mu"] = serde_json::json!([0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
        assert!(PwnlModel::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn unreferenced_submodels_are_dropped() {
        let cells = vec![ModelCell { lo: vec![0.0], hi: vec![1.0], submodel: 2 }];
        let m = PwnlModel::new(
            cfg(),
            OutputRange::new(0.0, 1.0).unwrap(),
            Scaler::identity(1),
            cells,
            vec![sub(vec![0.1]), sub(vec![0.2]), sub(vec![0.3])],
            ModelMeta::default(),
        )
        .unwrap();
        assert_eq!(m.complexity(), 1);
        assert_eq!(m.meta().s, 1);
        assert_eq!(m.submodels()[0].linear_weights, vec![0.3]);
    }

    #[test]
    fn mimo_composes_outputs() {
        let a = two_cell();
        let mut b = two_cell();
        b.submodels[0].linear_weights = vec![0.1, 0.9];
        let single = MimoModel::new(vec![("u".into(), a.clone())]).unwrap();
        let z = [0.7, 1.3];
        assert_eq!(single.eval_mimo(&z)[0].1, a.eval(&z));
        let mm = MimoModel::new(vec![
            ("u1".into(), a.clone()),
            ("u2".into(), b.clone()),
            ("u3".into(), a.clone()),
        ])
        .unwrap();
        let out = mm.eval_mimo(&z);
        assert_eq!(out.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(), ["u1", "u2", "u3"]);
        assert_eq!(out[1].1, b.eval(&z));
        assert_eq!(out[2].1, a.eval(&z));
        let back = MimoModel::from_json(&mm.to_json().unwrap()).unwrap();
        assert_eq!(back.eval_mimo(&z), out);
    }

    #[test]
    fn mimo_rejects_mismatched_scalers() {
        let a = two_cell();
        let b = PwnlModel::single(
            cfg(),
            OutputRange::new(0.0, 1.0).unwrap(),
            Scaler::identity(2),
            sub(vec![1.0, 0.0]),
        )
        .unwrap();
        assert!(MimoModel::new(vec![("a".into(), a), ("b".into(), b)]).is_err());
    }
}
