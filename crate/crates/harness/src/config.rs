//! Experiment configuration: TOML file, presets, and their resolution into
//! concrete groups of (game, methods).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seg_core::quadgame::{GameGenConfig, LmaxOverride};
use seg_core::sampling::SchemeSpec;

pub const DEFAULT_RECORD_EVERY: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[value(name = "exp1_us_vs_is", alias = "exp1")]
    Exp1UsVsIs,
    #[value(name = "exp2_sseg_stepsizes", alias = "exp2")]
    Exp2SsegStepsizes,
    #[value(name = "exp3_negative_mu", alias = "exp3")]
    Exp3NegativeMu,
    #[value(name = "exp4_iseg_stepsizes", alias = "exp4")]
    Exp4IsegStepsizes,
    #[value(name = "appx_bnice", alias = "bnice")]
    AppxBnice,
    #[value(name = "custom")]
    Custom,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Exp1UsVsIs => "exp1_us_vs_is",
            Preset::Exp2SsegStepsizes => "exp2_sseg_stepsizes",
            Preset::Exp3NegativeMu => "exp3_negative_mu",
            Preset::Exp4IsegStepsizes => "exp4_iseg_stepsizes",
            Preset::AppxBnice => "appx_bnice",
            Preset::Custom => "custom",
        }
    }

    fn default_iterations(self) -> usize {
        match self {
            Preset::Exp1UsVsIs => 5_000,
            Preset::Exp3NegativeMu => 20_000,
            _ => 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Sseg,
    Iseg,
    Eg,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    Decreasing,
    /// Comparison-only `k^(-1/3)` / `k^(-2/3)` pair.
    DoubleDecay,
}

/// A number, or a named rule evaluated against the game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Value(f64),
    Rule(GammaRule),
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::Rule(GammaRule::Cap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// The method's closed-form cap.
    Cap,
    /// Largest stepsize meeting the per-sample condition.
    RawCap,
    /// `1 / (2 L_max)`, the equal-stepsize baseline.
    HalfInvLmax,
}

fn quarter() -> f64 {
    0.25
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub method: MethodName,
    /// Scheme string such as `us:b=1` (S-SEG only).
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub gamma: GammaSpec,
    #[serde(default = "quarter")]
    pub alpha: f64,
    /// I-SEG batch size.
    #[serde(default = "one_usize")]
    pub batch: usize,
}

impl MethodSpec {
    fn sseg(scheme: &str, schedule: Schedule) -> Self {
        MethodSpec {
            label: None,
            method: MethodName::Sseg,
            scheme: Some(scheme.into()),
            schedule,
            gamma: GammaSpec::default(),
            alpha: 0.25,
            batch: 1,
        }
    }

    fn iseg(batch: usize, schedule: Schedule) -> Self {
        MethodSpec {
            label: None,
            method: MethodName::Iseg,
            scheme: None,
            schedule,
            gamma: GammaSpec::default(),
            alpha: 0.25,
            batch,
        }
    }

    fn labeled(mut self, label: &str) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn scheme_spec(&self) -> Result<SchemeSpec> {
        let s = self.scheme.as_deref().unwrap_or("us:b=1");
        s.parse().with_context(|| format!("scheme '{s}'"))
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let sched = match self.schedule {
            Schedule::Constant => "constant",
            Schedule::Decreasing => "decreasing",
            Schedule::DoubleDecay => "double_decay",
        };
        match self.method {
            MethodName::Sseg => format!("sseg-{}-{sched}", self.scheme.as_deref().unwrap_or("us:b=1").replace([':', '='], "")),
            MethodName::Iseg => format!("iseg-b{}-{sched}", self.batch),
            MethodName::Eg => format!("eg-{sched}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            bail!("alpha must lie in (0, 1], got {}", self.alpha);
        }
        if self.batch == 0 {
            bail!("batch must be >= 1");
        }
        if let GammaSpec::Value(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                bail!("gamma must be positive, got {g}");
            }
        }
        if self.method == MethodName::Sseg {
            self.scheme_spec()?;
        }
        Ok(())
    }
}

/// Generation flags shared by `generate` and the `[generate]` table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub p: Option<usize>,
    pub mu: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    pub mu_b: Option<f64>,
    #[serde(rename = "L_b")]
    pub l_b: Option<f64>,
    pub seed: Option<u64>,
    pub bias_scale: Option<f64>,
    pub lmax: Option<f64>,
    pub lmax_index: Option<usize>,
    pub negative_mu: Option<usize>,
}

impl GenerateArgs {
    pub fn apply(&self, mut cfg: GameGenConfig) -> GameGenConfig {
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.d {
            cfg.d = v;
        }
        if let Some(v) = self.p {
            cfg.p = v;
        }
        if let Some(v) = self.mu {
            cfg.mu_a = v;
            cfg.mu_c = v;
        }
        if let Some(v) = self.l {
            cfg.l_a = v;
            cfg.l_c = v;
        }
        if let Some(v) = self.mu_b {
            cfg.mu_b = v;
        }
        if let Some(v) = self.l_b {
            cfg.l_b = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.bias_scale {
            cfg.bias_scale = v;
        }
        if let Some(l_max) = self.lmax {
            cfg.lmax_override = Some(LmaxOverride {
                index: self.lmax_index.unwrap_or(0),
                l_max,
            });
        }
        if self.negative_mu.is_some() {
            cfg.negative_mu_component = self.negative_mu;
        }
        cfg
    }

    /// Fields set here win over `base`.
    pub fn merged_over(&self, base: &GenerateArgs) -> GenerateArgs {
        GenerateArgs {
            n: self.n.or(base.n),
            d: self.d.or(base.d),
            p: self.p.or(base.p),
            mu: self.mu.or(base.mu),
            l: self.l.or(base.l),
            mu_b: self.mu_b.or(base.mu_b),
            l_b: self.l_b.or(base.l_b),
            seed: self.seed.or(base.seed),
            bias_scale: self.bias_scale.or(base.bias_scale),
            lmax: self.lmax.or(base.lmax),
            lmax_index: self.lmax_index.or(base.lmax_index),
            negative_mu: self.negative_mu.or(base.negative_mu),
        }
    }
}

/// Contents of a `run` config file. Every key mirrors a `run` flag.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<Preset>,
    pub iterations: Option<usize>,
    pub seeds: Option<usize>,
    pub base_seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub desk: Option<bool>,
    pub record_every: Option<usize>,
    pub init_scale: Option<f64>,
    /// Path to a `.qgame` file used instead of generating.
    pub game: Option<PathBuf>,
    pub generate: GenerateArgs,
    #[serde(rename = "method")]
    pub methods: Vec<MethodSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Values set in `flags` win over this file.
    pub fn overridden_by(mut self, flags: FileConfig) -> FileConfig {
        macro_rules! take {
            ($($f:ident),*) => {$(
                if flags.$f.is_some() {
                    self.$f = flags.$f;
                }
            )*};
        }
        take!(preset, iterations, seeds, base_seed, out, jobs, desk, record_every, init_scale, game);
        self.generate = flags.generate.merged_over(&self.generate);
        if !flags.methods.is_empty() {
            self.methods = flags.methods;
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum GameSource {
    Generate(GameGenConfig),
    File(PathBuf),
}

/// One game and the methods run on it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Group {
    pub name: String,
    pub game: GameSource,
    pub methods: Vec<MethodSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub groups: Vec<Group>,
    pub iterations: usize,
    pub seeds: usize,
    pub base_seed: u64,
    pub record_every: Option<usize>,
    /// Standard deviation of the Gaussian initial point.
    pub init_scale: f64,
    pub jobs: Option<usize>,
    pub out: PathBuf,
    pub desk: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            bail!("seeds must be >= 1");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            bail!("init_scale must be positive");
        }
        if self.jobs == Some(0) {
            bail!("jobs must be >= 1");
        }
        if self.groups.is_empty() {
            bail!("no methods configured");
        }
        for g in &self.groups {
            if g.methods.is_empty() {
                bail!("group '{}' has no methods", g.name);
            }
            for m in &g.methods {
                m.validate().with_context(|| format!("method '{}'", m.label()))?;
            }
            if let GameSource::Generate(c) = &g.game {
                c.validate()?;
            }
        }
        Ok(())
    }
}

fn base_game(desk: bool, seed: u64) -> GameGenConfig {
    if desk {
        GameGenConfig::desk(seed)
    } else {
        GameGenConfig {
            seed,
            ..Default::default()
        }
    }
}

/// Resolves a (file + flags) configuration into groups.
pub fn resolve(fc: &FileConfig) -> Result<ExperimentConfig> {
    let preset = fc.preset.unwrap_or(Preset::Custom);
    let desk = fc.desk.unwrap_or(false);
    let base_seed = fc.base_seed.unwrap_or(0);
    let game_seed = fc.generate.seed.unwrap_or(base_seed);
    let game = |tweak: &dyn Fn(&mut GameGenConfig)| -> GameSource {
        if let Some(p) = &fc.game {
            return GameSource::File(p.clone());
        }
        let mut c = fc.generate.apply(base_game(desk, game_seed));
        c.seed = game_seed;
        tweak(&mut c);
        GameSource::Generate(c)
    };
    let single = |name: &str, methods: Vec<MethodSpec>, tweak: &dyn Fn(&mut GameGenConfig)| {
        vec![Group {
            name: name.into(),
            game: game(tweak),
            methods,
        }]
    };
    let user_methods = (!fc.methods.is_empty()).then(|| fc.methods.clone());

    let groups = match preset {
        Preset::Exp1UsVsIs => [2.0, 5.0, 10.0, 20.0]
            .iter()
            .map(|&l_max| Group {
                name: format!("lmax{l_max}"),
                game: game(&|c| {
                    c.lmax_override = Some(LmaxOverride {
                        index: fc.generate.lmax_index.unwrap_or(0),
                        l_max,
                    })
                }),
                methods: user_methods.clone().unwrap_or_else(|| vec![MethodSpec::sseg("us:b=1", Schedule::Constant).labeled("sseg-us"), MethodSpec::sseg("is", Schedule::Constant).labeled("sseg-is")]),
            })
            .collect(),
        Preset::Exp2SsegStepsizes => single(
            "exp2",
            user_methods.clone().unwrap_or_else(|| {
                vec![
                    MethodSpec::sseg("us:b=1", Schedule::Constant).labeled("sseg-us-constant"),
                    MethodSpec::sseg("us:b=1", Schedule::Decreasing).labeled("sseg-us-decreasing"),
                    MethodSpec {
                        gamma: GammaSpec::Rule(GammaRule::HalfInvLmax),
                        alpha: 1.0,
                        ..MethodSpec::sseg("us:b=1", Schedule::Constant)
                    }
                    .labeled("sseg-us-equal-steps"),
                ]
            }),
            &|_| {},
        ),
        Preset::Exp3NegativeMu => single(
            "exp3",
            user_methods.clone().unwrap_or_else(|| vec![MethodSpec::sseg("us:b=1", Schedule::Constant).labeled("sseg-us-constant"), MethodSpec::sseg("us:b=1", Schedule::Decreasing).labeled("sseg-us-decreasing")]),
            &|c| {
                c.negative_mu_component = Some(fc.generate.negative_mu.unwrap_or(0));
            },
        ),
        Preset::Exp4IsegStepsizes => single(
            "exp4",
            user_methods.clone().unwrap_or_else(|| {
                vec![
                    MethodSpec::iseg(1, Schedule::Constant).labeled("iseg-constant"),
                    MethodSpec::iseg(1, Schedule::Decreasing).labeled("iseg-decreasing"),
                    MethodSpec {
                        alpha: 1.0,
                        ..MethodSpec::iseg(1, Schedule::DoubleDecay)
                    }
                    .labeled("iseg-double-decay"),
                ]
            }),
            &|_| {},
        ),
        Preset::AppxBnice => {
            let batches: &[usize] = if desk { &[2, 4] } else { &[5, 10, 20] };
            let methods = user_methods.clone().unwrap_or_else(|| {
                batches
                    .iter()
                    .flat_map(|&b| {
                        [
                            MethodSpec::sseg(&format!("nice:b={b}"), Schedule::Constant).labeled(&format!("sseg-nice-b{b}")),
                            MethodSpec::sseg(&format!("us:b={b}"), Schedule::Constant).labeled(&format!("sseg-us-b{b}")),
                        ]
                    })
                    .collect()
            });
            single("bnice", methods, &|_| {})
        }
        Preset::Custom => {
            let Some(methods) = user_methods.clone() else {
                bail!("the custom preset needs at least one [[method]] entry");
            };
            single("custom", methods, &|_| {})
        }
    };

    let cfg = ExperimentConfig {
        preset,
        groups,
        iterations: fc.iterations.unwrap_or(preset.default_iterations()),
        seeds: fc.seeds.unwrap_or(if desk { 20 } else { 5 }),
        base_seed,
        record_every: fc.record_every.or(Some(DEFAULT_RECORD_EVERY)),
        init_scale: fc.init_scale.unwrap_or(10.0),
        jobs: fc.jobs,
        out: fc.out.clone().unwrap_or_else(|| PathBuf::from("results")),
        desk,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = FileConfig::parse(
            r#"
preset = "exp2_sseg_stepsizes"
iterations = 500
seeds = 3
[generate]
n = 7
mu = 0.2
"#,
        )
        .unwrap();
        let flags = FileConfig {
            seeds: Some(9),
            generate: GenerateArgs {
                n: Some(4),
                ..Default::default()
            },
            ..Default::default()
        };
        let merged = file.overridden_by(flags);
        assert_eq!(merged.iterations, Some(500));
        assert_eq!(merged.seeds, Some(9));
        assert_eq!(merged.generate.n, Some(4));
        assert_eq!(merged.generate.mu, Some(0.2));
        let cfg = resolve(&merged).unwrap();
        let GameSource::Generate(g) = &cfg.groups[0].game else { panic!() };
        assert_eq!((g.n, g.mu_a, g.mu_c), (4, 0.2, 0.2));
        assert_eq!(cfg.groups[0].methods.len(), 3);
    }

    #[test]
    fn method_tables_parse() {
        let file = FileConfig::parse(
            r#"
[[method]]
method = "sseg"
scheme = "nice:b=4"
gamma = 0.05

[[method]]
method = "iseg"
batch = 4
schedule = "decreasing"
gamma = "cap"
"#,
        )
        .unwrap();
        assert_eq!(file.methods[0].gamma, GammaSpec::Value(0.05));
        assert_eq!(file.methods[1].gamma, GammaSpec::Rule(GammaRule::Cap));
        assert_eq!(file.methods[1].alpha, 0.25);
        let cfg = resolve(&file).unwrap();
        assert_eq!(cfg.preset, Preset::Custom);
        assert_eq!(cfg.groups[0].methods[0].label(), "sseg-niceb4-constant");
    }

    #[test]
    fn unknown_keys_and_empty_custom_are_rejected() {
        assert!(FileConfig::parse("bogus = 1").is_err());
        assert!(resolve(&FileConfig::default()).is_err());
        let bad = FileConfig::parse("[[method]]\nmethod = \"sseg\"\nscheme = \"zz\"").unwrap();
        assert!(resolve(&bad).is_err());
    }

    #[test]
    fn exp1_has_four_games_and_eight_series() {
        let cfg = resolve(&FileConfig {
            preset: Some(Preset::Exp1UsVsIs),
            desk: Some(true),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.groups.len(), 4);
        assert_eq!(cfg.groups.iter().map(|g| g.methods.len()).sum::<usize>(), 8);
        assert_eq!(cfg.seeds, 20);
    }
}
