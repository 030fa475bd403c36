//! Run configuration: defaults, scene presets, `key = value` config files,
//! and flag overrides, resolved in that order (flags win).

use std::path::Path;

use hrapr_core::error::{CoreError, Result};
use hrapr_core::synth::SceneSpec;
use hrapr_core::uncertainty::{GatingMode, GatingPolicy};

/// Bundled constants for the two benchmark regimes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Small scenes: search radius 0.2 m, budgets hs10/ls50.
    Indoor,
    /// Large outdoor scenes: search radius 1.5 m, budgets hs30/ls50.
    Outdoor,
}

impl Preset {
    pub fn d_th(&self) -> f64 {
        match self {
            Preset::Indoor => 0.2,
            Preset::Outdoor => 1.5,
        }
    }

    pub fn gamma(&self) -> f64 {
        0.95
    }

    pub fn hs_steps(&self) -> usize {
        match self {
            Preset::Indoor => 10,
            Preset::Outdoor => 30,
        }
    }

    pub fn ls_steps(&self) -> usize {
        50
    }
}

/// Resolved run parameters. Defaults follow the indoor preset.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub d_th: f64,
    pub gamma: f64,
    pub hs_steps: usize,
    pub ls_steps: usize,
    pub mode: GatingMode,
    pub grid: Vec<f64>,
    pub cell_size: Option<f64>,
}

impl RunConfig {
    pub fn policy(&self) -> Result<GatingPolicy> {
        GatingPolicy::new(self.gamma, self.hs_steps, self.ls_steps, self.mode)
    }

    pub fn index(&self) -> hrapr_core::IndexConfig {
        match self.cell_size {
            Some(cell_m) => hrapr_core::IndexConfig::Grid { cell_m },
            None => hrapr_core::IndexConfig::Exhaustive,
        }
    }
}

fn parse_mode(value: &str) -> Result<GatingMode> {
    match value {
        "refine" => Ok(GatingMode::Refine),
        "filter" => Ok(GatingMode::Filter),
        _ => Err(CoreError::InvalidInput(format!(
            "bad mode {value:?}, expected refine or filter"
        ))),
    }
}

pub fn parse_grid(value: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CoreError::InvalidInput(format!("bad grid value {s:?}")))
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(CoreError::InvalidInput("empty threshold grid".into()));
    }
    Ok(grid)
}

/// Parse a `key = value` file into pairs, ignoring blank lines and `#`
/// comments.
pub fn read_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::path(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CoreError::format(
                path,
                "line",
                i as u64 + 1,
                format!("expected `key = value`, got {line:?}"),
            ));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Unresolved overrides shared by most subcommands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonOpts {
    /// Parameter preset bundling search radius, threshold and budgets.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,

    /// `key = value` config file; flags override its entries.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,

    /// Position search radius in meters.
    #[arg(long, value_name = "METERS")]
    pub dth: Option<f64>,

    /// Reliability threshold on the similarity score.
    #[arg(long)]
    pub gamma: Option<f64>,

    /// Refinement budget for reliable (high-similarity) predictions.
    #[arg(long)]
    pub hs: Option<usize>,

    /// Refinement budget for unreliable (low-similarity) predictions.
    #[arg(long)]
    pub ls: Option<usize>,

    /// What to do with unreliable predictions: refine or filter.
    #[arg(long)]
    pub mode: Option<String>,

    /// Ascending comma-separated threshold grid for sweeps.
    #[arg(long)]
    pub grid: Option<String>,

    /// Uniform-grid index cell edge in meters (default: linear scan).
    #[arg(long, value_name = "METERS")]
    pub cell_size: Option<f64>,
}

/// Resolution product: the run parameters plus any scene overrides found in
/// the config file.
pub struct Resolved {
    pub run: RunConfig,
    pub scene: SceneSpec,
}

/// Merge defaults, preset, config file and flags into a final configuration.
pub fn resolve(opts: &CommonOpts) -> Result<Resolved> {
    let preset = opts.preset.unwrap_or(Preset::Indoor);
    let mut d_th = preset.d_th();
    let mut gamma = preset.gamma();
    let mut hs_steps = preset.hs_steps();
    let mut ls_steps = preset.ls_steps();
    let mut mode = GatingMode::Refine;
    let mut grid: Vec<f64> = vec![0.0, 0.5, 0.8, 0.9, 0.95, 0.98];
    let mut cell_size = None;
    let mut scene = SceneSpec::default();

    if let Some(path) = &opts.config {
        for (key, value) in read_kv_file(path)? {
            let parse_f64 = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| CoreError::InvalidInput(format!("bad value {v:?} for `{key}`")))
            };
            let parse_usize = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| CoreError::InvalidInput(format!("bad value {v:?} for `{key}`")))
            };
            match key.as_str() {
                "d_th" => d_th = parse_f64(&value)?,
                "gamma" => gamma = parse_f64(&value)?,
                "hs_steps" => hs_steps = parse_usize(&value)?,
                "ls_steps" => ls_steps = parse_usize(&value)?,
                "mode" => mode = parse_mode(&value)?,
                "grid" => grid = parse_grid(&value)?,
                "cell_size" => cell_size = Some(parse_f64(&value)?),
                _ => {
                    if !scene.apply_kv(&key, &value)? {
                        return Err(CoreError::InvalidInput(format!(
                            "unknown config key `{key}` in {}",
                            path.display()
                        )));
                    }
                }
            }
        }
    }

    if let Some(v) = opts.dth {
        d_th = v;
    }
    if let Some(v) = opts.gamma {
        gamma = v;
    }
    if let Some(v) = opts.hs {
        hs_steps = v;
    }
    if let Some(v) = opts.ls {
        ls_steps = v;
    }
    if let Some(v) = &opts.mode {
        mode = parse_mode(v)?;
    }
    if let Some(v) = &opts.grid {
        grid = parse_grid(v)?;
    }
    if let Some(v) = opts.cell_size {
        cell_size = Some(v);
    }

    if !(d_th.is_finite() && d_th >= 0.0) {
        return Err(CoreError::InvalidInput(format!(
            "search radius must be nonnegative, got {d_th}"
        )));
    }

    Ok(Resolved {
        run: RunConfig {
            d_th,
            gamma,
            hs_steps,
            ls_steps,
            mode,
            grid,
            cell_size,
        },
        scene,
    })
}
