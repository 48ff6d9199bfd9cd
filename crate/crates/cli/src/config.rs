//! Run configuration: a TOML tree with one section per stage. Unknown keys
//! are errors; missing sections fall back to the preset for the problem.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use mmr_core::grid::{Domain, GridHierarchy, NeighborhoodPolicy};
use mmr_core::mmr::{MmrConfig, Thresholds, UpperBounds};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Snl,
    LjSym,
    LjAsym,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Random sensor network; the run seed draws the instance.
    Snl {
        n: usize,
        anchors: usize,
        sigma: f64,
        d_max: f64,
    },
    LjSymmetric {
        n: usize,
        #[serde(default = "one")]
        epsilon: f64,
        #[serde(default = "one")]
        r: f64,
    },
    /// Equilibrium distances drawn from the run seed.
    LjAsymmetric {
        n: usize,
        #[serde(default = "one")]
        epsilon: f64,
    },
    /// 1D cycle with the first and last sensor anchored and every
    /// neighbouring distance observed exactly.
    Cycle { truth: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl ProblemConfig {
    pub fn mmr_preset(&self) -> MmrConfig {
        match self {
            ProblemConfig::Snl { .. } | ProblemConfig::Cycle { .. } => MmrConfig::snl(),
            ProblemConfig::LjSymmetric { .. } => MmrConfig::lj_symmetric(),
            ProblemConfig::LjAsymmetric { .. } => MmrConfig::lj_asymmetric(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            ProblemConfig::Snl { n, .. }
            | ProblemConfig::LjSymmetric { n, .. }
            | ProblemConfig::LjAsymmetric { n, .. } => *n,
            ProblemConfig::Cycle { truth } => truth.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    pub lo: f64,
    pub hi: f64,
    /// Coarsest-level parts per axis; its length sets the dimension.
    pub base: Vec<usize>,
    pub levels: usize,
}

impl HierarchyConfig {
    pub fn domain(&self) -> Result<Domain> {
        Ok(match self.base.len() {
            1 => Domain::interval(self.lo, self.hi)?,
            2 => Domain::square(self.lo, self.hi)?,
            d => bail!("hierarchy.base must have 1 or 2 entries, got {d}"),
        })
    }

    pub fn build(&self) -> Result<GridHierarchy> {
        Ok(GridHierarchy::build_regular(self.domain()?, &self.base, self.levels)?)
    }
}

/// Per-field overrides of the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmrOverrides {
    pub upper: Option<UpperBounds>,
    pub eta: Option<Thresholds>,
    pub min_support: Option<usize>,
    pub refine_iters: Option<usize>,
    pub neighborhood: Option<NeighborhoodPolicy>,
    pub solver_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub cost_cap: Option<f64>,
    pub forbid_above: Option<f64>,
    pub certify_tol: Option<[f64; 2]>,
}

impl MmrOverrides {
    pub fn apply(&self, mut c: MmrConfig) -> MmrConfig {
        macro_rules! take {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    c.$f = v.clone();
                }
            )*};
        }
        take!(upper, eta, min_support, refine_iters, neighborhood, solver_tol, max_iter, cost_cap, forbid_above, certify_tol);
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Noise scale; absent means the data-driven default.
    pub lambda: Option<f64>,
    pub seeds: usize,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            seeds: 5,
            solver_tol: 1e-4,
            max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "mmr")]
    Mmr,
    #[serde(rename = "mmr+refine")]
    MmrRefine,
    #[serde(rename = "sa")]
    Sa,
    #[serde(rename = "local-only")]
    LocalOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mmr => "mmr",
            Method::MmrRefine => "mmr+refine",
            Method::Sa => "sa",
            Method::LocalOnly => "local-only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselinesConfig {
    pub methods: Vec<Method>,
    pub sa_budget: usize,
    /// Reweighting rounds of the localization refiner.
    pub refine_rounds: usize,
}

impl Default for BaselinesConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::MmrRefine, Method::Sa, Method::LocalOnly],
            sa_budget: 20_000,
            refine_rounds: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub trace: bool,
    pub supports: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            trace: true,
            supports: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub seeds: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { seed: 0, seeds: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub hierarchy: HierarchyConfig,
    #[serde(default)]
    pub mmr: MmrOverrides,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub baselines: BaselinesConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn preset(p: Preset) -> Self {
        let (problem, hierarchy) = match p {
            Preset::Snl => (
                ProblemConfig::Snl {
                    n: 10,
                    anchors: 3,
                    sigma: 0.1,
                    d_max: 6.0,
                },
                HierarchyConfig {
                    lo: 0.0,
                    hi: 10.0,
                    base: vec![4, 4],
                    levels: 5,
                },
            ),
            Preset::LjSym => (
                ProblemConfig::LjSymmetric {
                    n: 7,
                    epsilon: 1.0,
                    r: 1.0,
                },
                HierarchyConfig {
                    lo: 0.0,
                    hi: 10.0,
                    base: vec![16, 16],
                    levels: 5,
                },
            ),
            Preset::LjAsym => (
                ProblemConfig::LjAsymmetric { n: 7, epsilon: 1.0 },
                HierarchyConfig {
                    lo: 0.0,
                    hi: 10.0,
                    base: vec![16, 16],
                    levels: 4,
                },
            ),
        };
        Self {
            problem,
            hierarchy,
            mmr: MmrOverrides::default(),
            sampling: SamplingConfig::default(),
            baselines: BaselinesConfig::default(),
            output: OutputConfig::default(),
            run: RunSection::default(),
        }
    }

    pub fn mmr(&self) -> MmrConfig {
        self.mmr.apply(self.problem.mmr_preset())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.problem.n();
        if n < 2 {
            bail!("problem needs at least two particles, got {n}");
        }
        let dim = self.hierarchy.base.len();
        match &self.problem {
            ProblemConfig::Cycle { truth } => {
                if dim != 1 {
                    bail!("cycle problems live on a 1D hierarchy");
                }
                if truth.len() < 3 {
                    bail!("a cycle needs at least three sensors");
                }
            }
            ProblemConfig::Snl { anchors, sigma, .. } => {
                if dim != 2 {
                    bail!("snl problems live on a 2D hierarchy");
                }
                if *anchors > n || !(0.0..=1.0).contains(sigma) {
                    bail!("snl needs anchors <= n and sigma in [0, 1]");
                }
            }
            _ if dim != 2 => bail!("lennard-jones problems live on a 2D hierarchy"),
            _ => {}
        }
        if self.run.seeds == 0 || self.sampling.seeds == 0 {
            bail!("seed counts must be at least 1");
        }
        self.mmr().validate(self.hierarchy.levels)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SNL: &str = r#"
[problem]
kind = "snl"
n = 6
anchors = 3
sigma = 0.1
d_max = 6.0

[hierarchy]
lo = 0.0
hi = 10.0
base = [4, 4]
levels = 3
"#;

    #[test]
    fn minimal_config_gets_preset_defaults() {
        let c = RunConfig::parse(SNL).unwrap();
        assert_eq!(c.mmr(), MmrConfig::snl());
        assert_eq!(c.run, RunSection::default());
        assert_eq!(c.baselines, BaselinesConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["\n[run]\nseedz = 3\n", "\n[mmr]\nmin_suport = 2\n", "\n[output]\nformat = \"x\"\n", "\n[bogus]\n"] {
            assert!(RunConfig::parse(&format!("{SNL}{extra}")).is_err(), "{extra}");
        }
        let bad_problem = SNL.replace("d_max = 6.0", "d_max = 6.0\nradius = 2");
        assert!(RunConfig::parse(&bad_problem).is_err());
    }

    #[test]
    fn overrides_replace_single_fields() {
        let c = RunConfig::parse(&format!("{SNL}\n[mmr]\nmin_support = 5\nupper = {{ levels = [0.5, 1.0] }}\n")).unwrap();
        let m = c.mmr();
        assert_eq!(m.min_support, 5);
        assert_eq!(m.upper, UpperBounds::Levels(vec![0.5, 1.0]));
        assert_eq!(m.refine_iters, MmrConfig::snl().refine_iters);
    }

    #[test]
    fn presets_are_valid_and_round_trip() {
        for p in [Preset::Snl, Preset::LjSym, Preset::LjAsym] {
            let c = RunConfig::preset(p);
            c.validate().unwrap();
            let text = toml::to_string(&c).unwrap();
            assert_eq!(RunConfig::parse(&text).unwrap(), c);
        }
    }

    #[test]
    fn dimension_must_match_problem() {
        let c = SNL.replace("base = [4, 4]", "base = [4]");
        assert!(RunConfig::parse(&c).is_err());
    }
}
