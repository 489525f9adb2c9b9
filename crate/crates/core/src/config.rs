//! Run configuration: flat `key = value` text with bracketed sections (TOML subset).

use serde::{Deserialize, Serialize};

use crate::dynamics::{lookup, PolyMap, SystemEntry};
use crate::error::{Error, Result};
use crate::graph_transform::{TransformOptions, TubeOptions};
use crate::linalg::Vector;
use crate::pipeline::{KOptions, KSource, ManifoldOptions};
use crate::projective_lift::FoliationOptions;
use crate::verify::SaddleOptions;
use crate::whitney_surface::ChartOptions;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    /// Dimension of the strong bundle; defaults to the registry value.
    pub d_f: Option<usize>,
    /// User map: per output coordinate, terms `[coef, p_0, …, p_{n−1}]`.
    pub polynomial: Option<Vec<Vec<Vec<f64>>>>,
    /// Optional polynomial inverse in the same format.
    pub inverse: Option<Vec<Vec<Vec<f64>>>>,
    /// Known invariant set for `k.source = "known"` with a user map.
    pub known_set: Option<Vec<Vec<f64>>>,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection { name: "linear3".into(), d_f: None, polynomial: None, inverse: None, known_set: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KKind {
    Known,
    Periodic,
    Attractor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KSection {
    pub source: KKind,
    pub max_period: usize,
    pub settle: usize,
    pub resolution: f64,
    pub cover_steps: usize,
    /// Box for the cover; defaults to the registry working box.
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
}

impl Default for KSection {
    fn default() -> Self {
        KSection { source: KKind::Known, max_period: 7, settle: 30, resolution: 1.0 / 64.0, cover_steps: 6, lo: None, hi: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplittingSection {
    pub iters: usize,
    pub gap_threshold: f64,
}

impl Default for SplittingSection {
    fn default() -> Self {
        SplittingSection { iters: 30, gap_threshold: 1.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub cone_opening: f64,
    pub n0: usize,
    pub r: f64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection { cone_opening: 0.5, n0: 5, r: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectionsSection {
    pub radius: f64,
    pub delta: f64,
    /// Run the graph transform even when a strong connection was found.
    pub force: bool,
}

impl Default for ConnectionsSection {
    fn default() -> Self {
        ConnectionsSection { radius: 0.2, delta: 0.01, force: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub tangency_tolerance: f64,
    /// Invariance band as a fraction of ε(m).
    pub band_fraction: f64,
    pub containment: bool,
    pub robustness_sizes: Vec<f64>,
    pub trials: usize,
    /// Saved graph for the `verify` subcommand; defaults to `<out>/graph.json`.
    pub graph: Option<String>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection { tangency_tolerance: 1e-3, band_fraction: 0.25, containment: false, robustness_sizes: Vec::new(), trials: 1, graph: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaddleSection {
    pub seeds: usize,
    pub length_fraction: f64,
    pub min_angle_deg: f64,
    pub invariance_tolerance: f64,
}

impl Default for SaddleSection {
    fn default() -> Self {
        let d = SaddleOptions::default();
        SaddleSection { seeds: d.seeds, length_fraction: d.length_fraction, min_angle_deg: d.min_angle_deg, invariance_tolerance: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoliateSection {
    pub bunching_n0: usize,
    pub cone_opening: f64,
    /// Leaf half-length as a fraction of the invariance radius.
    pub leaf_fraction: f64,
    /// RK4 step as a fraction of the leaf half-length.
    pub step_fraction: f64,
    pub seeds: usize,
    /// Line-field samples per axis for the CSV export.
    pub field_samples: usize,
    pub invariance_tolerance: f64,
}

impl Default for FoliateSection {
    fn default() -> Self {
        FoliateSection { bunching_n0: 4, cone_opening: 0.2, leaf_fraction: 0.5, step_fraction: 0.04, seeds: 8, field_samples: 21, invariance_tolerance: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothSection {
    pub k: Vec<Vec<f64>>,
    pub l: Vec<Vec<f64>>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub samples: usize,
    pub bump_inner: f64,
    pub bump_outer: f64,
    /// Finest level of the exported dyadic cover of the complement of K.
    pub max_level: u32,
}

impl Default for SmoothSection {
    fn default() -> Self {
        SmoothSection { k: vec![vec![-2.0]], l: vec![vec![2.0]], lo: vec![-3.0], hi: vec![3.0], samples: 601, bump_inner: 0.5, bump_outer: 1.0, max_level: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub system: SystemSection,
    pub k: KSection,
    pub splitting: SplittingSection,
    pub analyze: AnalyzeSection,
    pub connections: ConnectionsSection,
    pub chart: ChartOptions,
    pub tube: TubeOptions,
    pub transform: TransformOptions,
    pub verify: VerifySection,
    pub saddle: SaddleSection,
    pub foliate: FoliateSection,
    pub smooth: SmoothSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 7,
            system: SystemSection::default(),
            k: KSection::default(),
            splitting: SplittingSection::default(),
            analyze: AnalyzeSection::default(),
            connections: ConnectionsSection::default(),
            chart: ChartOptions::default(),
            tube: TubeOptions::default(),
            transform: TransformOptions::default(),
            verify: VerifySection::default(),
            saddle: SaddleSection::default(),
            foliate: FoliateSection::default(),
            smooth: SmoothSection::default(),
        }
    }
}

fn parse_scalar(text: &str) -> toml::Value {
    let wrapped = format!("v = {text}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key"),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `section.key=value` overrides; unknown keys are configuration errors.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            let mut table = &mut root;
            for part in &path[..path.len() - 1] {
                table = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("override '{key}': '{part}' is not a section")))?;
            }
            table.insert(path[path.len() - 1].to_string(), parse_scalar(value.trim()));
        }
        toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Registry entry, or the user polynomial map when one is given.
    pub fn entry(&self) -> Result<SystemEntry> {
        let Some(rows) = &self.system.polynomial else {
            return lookup(&self.system.name).map_err(|_| Error::Config(format!("unknown system '{}'", self.system.name)));
        };
        let dim = rows.len();
        let f = PolyMap::from_rows(dim, rows)?;
        let inv = self.system.inverse.as_ref().map(|r| PolyMap::from_rows(dim, r)).transpose()?;
        let (Some(lo), Some(hi)) = (&self.k.lo, &self.k.hi) else {
            return Err(Error::Config("a polynomial system needs k.lo and k.hi".into()));
        };
        if lo.len() != dim || hi.len() != dim {
            return Err(Error::Config(format!("k.lo/k.hi must have {dim} entries")));
        }
        let known_set = match &self.system.known_set {
            Some(pts) if pts.iter().any(|p| p.len() != dim) => return Err(Error::Config(format!("known_set points must have {dim} entries"))),
            Some(pts) => Some(pts.iter().map(|p| Vector::from_column_slice(p)).collect()),
            None => None,
        };
        Ok(SystemEntry {
            name: self.system.name.clone(),
            map: f.into_map(&self.system.name, inv),
            working_box: lo.iter().cloned().zip(hi.iter().cloned()).collect(),
            strong_dim: self.system.d_f.unwrap_or(1),
            known_set,
            known_answers: Default::default(),
        })
    }

    pub fn d_f(&self, entry: &SystemEntry) -> usize {
        self.system.d_f.unwrap_or(entry.strong_dim)
    }

    pub fn k_options(&self) -> KOptions {
        let source = match self.k.source {
            KKind::Known => KSource::Known,
            KKind::Periodic => KSource::Periodic { max_period: self.k.max_period },
            KKind::Attractor => KSource::Attractor { settle: self.k.settle },
        };
        KOptions { source, resolution: self.k.resolution, cover_steps: self.k.cover_steps, seed: self.seed }
    }

    pub fn manifold_options(&self) -> ManifoldOptions {
        let mut transform = self.transform.clone();
        transform.seed = self.seed;
        ManifoldOptions {
            splitting_iters: self.splitting.iters,
            gap_threshold: self.splitting.gap_threshold,
            chart: self.chart.clone(),
            tube: self.tube.clone(),
            transform,
        }
    }

    pub fn saddle_options(&self) -> SaddleOptions {
        SaddleOptions {
            manifold: self.manifold_options(),
            connection_radius: self.connections.radius,
            connection_delta: self.connections.delta,
            seeds: self.saddle.seeds,
            length_fraction: self.saddle.length_fraction,
            min_angle_deg: self.saddle.min_angle_deg,
        }
    }

    pub fn foliation_options(&self) -> FoliationOptions {
        FoliationOptions {
            manifold: self.manifold_options(),
            bunching_n0: self.foliate.bunching_n0,
            cone_opening: self.foliate.cone_opening,
            leaf_fraction: self.foliate.leaf_fraction,
            step_fraction: self.foliate.step_fraction,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let c = Config::parse("seed = 3\n[system]\nname = \"curved2\"\n[tube]\nspacing = 1e-4\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.system.name, "curved2");
        assert_eq!(c.tube.spacing, 1e-4);
        assert_eq!(c.tube.radius, TubeOptions::default().radius);
        assert_eq!(c.k, KSection::default());
    }

    #[test]
    fn unknown_keys_and_bad_syntax_are_config_errors() {
        assert!(matches!(Config::parse("[tube]\nspaceing = 1"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("[tube\nspacing = 1"), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_set_nested_values() {
        let c = Config::default()
            .with_overrides(&["transform.tol=1e-9".into(), "connections.force=true".into(), "transform.m=0.01".into(), "system.name=curved2".into()])
            .unwrap();
        assert_eq!(c.transform.tol, 1e-9);
        assert!(c.connections.force);
        assert_eq!(c.transform.m, Some(0.01));
        assert_eq!(c.system.name, "curved2");
        assert!(Config::default().with_overrides(&["tube.nope=1".into()]).is_err());
        assert!(Config::default().with_overrides(&["tube.spacing".into()]).is_err());
    }

    #[test]
    fn polynomial_system_from_text() {
        let text = "[system]\nname = \"user\"\npolynomial = [[[2.0, 1, 0]], [[0.5, 0, 1], [1.0, 2, 0]]]\ninverse = [[[0.5, 1, 0]], [[2.0, 0, 1], [-0.5, 2, 0]]]\nknown_set = [[0.0, 0.0]]\n[k]\nlo = [-1.0, -1.0]\nhi = [1.0, 1.0]\n";
        let c = Config::parse(text).unwrap();
        let e = c.entry().unwrap();
        let x = Vector::from_column_slice(&[0.3, -0.2]);
        let y = e.map.apply(&x).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - (-0.1 + 0.09)).abs() < 1e-15);
        let back = e.map.apply_inverse(&y).unwrap();
        assert!((back - x).norm() < 1e-14);
        assert!(Config::parse("[system]\npolynomial = [[[1.0, 1]]]\n").unwrap().entry().is_err());
    }

    #[test]
    fn text_roundtrip() {
        let c = Config::default().with_overrides(&["k.lo=[0.0, -0.6]".into()]).unwrap();
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }
}
