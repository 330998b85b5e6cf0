//! Configuration: CLI flags layered over an optional TOML file, with
//! per-suite defaults filled last. Flags override file values.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Covariance,
    Contraction,
    Bound,
    BiasVariance,
    KSweep,
    Pipeline,
}

impl Suite {
    pub fn parse(name: &str) -> Result<Self, String> {
        match name {
            "covariance" => Ok(Suite::Covariance),
            "contraction" => Ok(Suite::Contraction),
            "bound" => Ok(Suite::Bound),
            "bias-variance" => Ok(Suite::BiasVariance),
            "k-sweep" => Ok(Suite::KSweep),
            "pipeline" => Ok(Suite::Pipeline),
            other => Err(format!(
                "unknown suite '{other}'; expected one of covariance, contraction, bound, bias-variance, k-sweep, pipeline"
            )),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Covariance => "covariance",
            Suite::Contraction => "contraction",
            Suite::Bound => "bound",
            Suite::BiasVariance => "bias-variance",
            Suite::KSweep => "k-sweep",
            Suite::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Affine,
    Nonlinear,
    LinearPipeline,
}

impl Family {
    pub fn parse(name: &str) -> Result<Self, String> {
        match name {
            "affine" => Ok(Family::Affine),
            "nonlinear" => Ok(Family::Nonlinear),
            "linear-pipeline" => Ok(Family::LinearPipeline),
            other => Err(format!(
                "unknown system family '{other}'; expected one of affine, nonlinear, linear-pipeline"
            )),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Affine => "affine",
            Family::Nonlinear => "nonlinear",
            Family::LinearPipeline => "linear-pipeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Parser, Debug)]
#[command(
    name = "condlab",
    about = "Seeded verification suites for test-time conditioning refinement",
    disable_version_flag = true
)]
struct Cli {
    /// Suite to run: covariance | contraction | bound | bias-variance | k-sweep | pipeline
    suite: String,
    /// TOML configuration file; flags override file values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (default 42)
    #[arg(long)]
    seed: Option<u64>,
    /// Output file for the records table
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format: csv | json
    #[arg(long)]
    format: Option<String>,
    /// Aggregation window K
    #[arg(long)]
    k: Option<usize>,
    /// Largest aggregation window for sweeps
    #[arg(long = "k-max")]
    k_max: Option<usize>,
    /// Monte Carlo trial count (paired seed count for the pipeline suite)
    #[arg(long)]
    trials: Option<usize>,
    /// Feature dimension d
    #[arg(long)]
    dim: Option<usize>,
    /// AR(1) correlation of per-frame noise
    #[arg(long, allow_negative_numbers = true)]
    rho: Option<f64>,
    /// Noise variance parameter
    #[arg(long, allow_negative_numbers = true)]
    sigma2: Option<f64>,
    /// Drift rate per frame
    #[arg(long, allow_negative_numbers = true)]
    drift: Option<f64>,
    /// Refinement passes
    #[arg(long)]
    passes: Option<usize>,
    /// SVG line-plot output path
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    trials: Option<usize>,
    k: Option<usize>,
    k_max: Option<usize>,
    horizon: Option<usize>,
    passes: Option<usize>,
    dim: Option<usize>,
    out: Option<PathBuf>,
    format: Option<String>,
    plot: Option<PathBuf>,
    system: Option<FileSystemConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSystemConfig {
    family: Option<String>,
    scale: Option<f64>,
    rho: Option<f64>,
    sigma2: Option<f64>,
    drift: Option<f64>,
    motion_noise: Option<f64>,
    render_dim: Option<usize>,
    motion_dim: Option<usize>,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub suite: Suite,
    pub seed: u64,
    pub dim: usize,
    pub trials: usize,
    pub k: usize,
    pub k_max: usize,
    pub horizon: usize,
    pub passes: usize,
    pub family: Family,
    pub scale: f64,
    pub rho: f64,
    pub sigma2: f64,
    pub drift: f64,
    pub motion_noise: f64,
    pub render_dim: usize,
    pub motion_dim: usize,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub plot: Option<PathBuf>,
}

fn positive(value: usize, field: &str) -> Result<usize, String> {
    if value == 0 {
        return Err(format!("{field} must be >= 1, got 0"));
    }
    Ok(value)
}

/// Resolve the full configuration from the process arguments.
pub fn from_args<I, T>(args: I) -> Result<ExperimentConfig, String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            // Help output is not a usage error.
            print!("{e}");
            std::process::exit(0);
        }
        Err(e) => return Err(e.to_string()),
    };

    let suite = Suite::parse(&cli.suite)?;

    let file: FileConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
            toml::from_str(&text).map_err(|e| format!("invalid config file: {e}"))?
        }
        None => FileConfig::default(),
    };
    let file_system = file.system.unwrap_or_default();

    // Per-suite defaults, applied when neither a flag nor the file decides.
    let default_trials = match suite {
        Suite::Covariance => 50_000,
        Suite::Pipeline => 50,
        _ => 20_000,
    };
    let default_rho = match suite {
        Suite::KSweep => 0.0,
        _ => 0.5,
    };
    let default_drift = match suite {
        Suite::BiasVariance | Suite::KSweep => 0.2,
        Suite::Pipeline => 0.1,
        _ => 0.0,
    };
    let default_passes = match suite {
        Suite::Contraction => 6,
        _ => 1,
    };
    let default_motion_noise = match suite {
        Suite::KSweep => 0.0,
        _ => 0.5,
    };

    let dim = positive(cli.dim.or(file.dim).unwrap_or(8), "dim")?;
    if dim > 64 {
        return Err(format!(
            "dim must lie in [1, 64] (dense desk-scale matrices), got {dim}"
        ));
    }
    let render_dim = file_system.render_dim.unwrap_or(2 * dim);
    if render_dim < dim {
        return Err(format!(
            "render_dim must be >= dim ({dim}), got {render_dim}"
        ));
    }

    let rho = cli.rho.or(file_system.rho).unwrap_or(default_rho);
    if !(0.0..1.0).contains(&rho) {
        return Err(format!("rho must lie in [0, 1), got {rho}"));
    }
    let sigma2 = cli.sigma2.or(file_system.sigma2).unwrap_or(1.0);
    if sigma2 < 0.0 || !sigma2.is_finite() {
        return Err(format!("sigma2 must be finite and >= 0, got {sigma2}"));
    }
    let drift = cli.drift.or(file_system.drift).unwrap_or(default_drift);
    if !drift.is_finite() {
        return Err(format!("drift must be finite, got {drift}"));
    }
    let motion_noise = file_system.motion_noise.unwrap_or(default_motion_noise);
    if motion_noise < 0.0 || !motion_noise.is_finite() {
        return Err(format!(
            "motion_noise must be finite and >= 0, got {motion_noise}"
        ));
    }
    let scale = file_system.scale.unwrap_or(0.5);
    if !scale.is_finite() {
        return Err(format!("scale must be finite, got {scale}"));
    }

    let family = match file_system.family {
        Some(name) => Family::parse(&name)?,
        None => match suite {
            Suite::KSweep | Suite::Pipeline | Suite::BiasVariance => Family::LinearPipeline,
            _ => Family::Affine,
        },
    };
    if suite == Suite::KSweep && family == Family::Nonlinear {
        return Err(
            "the k-sweep suite needs a constant-Jacobian family (affine or linear-pipeline)".into(),
        );
    }
    if suite == Suite::BiasVariance && family == Family::Nonlinear {
        return Err(
            "the bias-variance suite needs a constant-Jacobian family (affine or linear-pipeline)"
                .into(),
        );
    }

    let format = match cli.format.or(file.format).as_deref() {
        None | Some("csv") => OutputFormat::Csv,
        Some("json") => OutputFormat::Json,
        Some(other) => {
            return Err(format!("unknown format '{other}'; expected csv or json"));
        }
    };

    let k = positive(cli.k.or(file.k).unwrap_or(4), "k")?;
    let k_max = positive(cli.k_max.or(file.k_max).unwrap_or(8), "k-max")?;
    let horizon = positive(file.horizon.unwrap_or(40), "horizon")?;
    let passes = positive(
        cli.passes.or(file.passes).unwrap_or(default_passes),
        "passes",
    )?;
    let trials = positive(
        cli.trials.or(file.trials).unwrap_or(default_trials),
        "trials",
    )?;
    if trials < 2 {
        return Err(format!("trials must be >= 2, got {trials}"));
    }
    if suite == Suite::Pipeline && horizon < k {
        return Err(format!(
            "horizon ({horizon}) must be >= the aggregation window k ({k})"
        ));
    }
    let motion_dim = positive(file_system.motion_dim.unwrap_or(4), "motion_dim")?;

    Ok(ExperimentConfig {
        suite,
        seed: cli.seed.or(file.seed).unwrap_or(42),
        dim,
        trials,
        k,
        k_max,
        horizon,
        passes,
        family,
        scale,
        rho,
        sigma2,
        drift,
        motion_noise,
        render_dim,
        motion_dim,
        out: cli.out.or(file.out),
        format,
        plot: cli.plot.or(file.plot),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_per_suite() {
        let cov = from_args(["condlab", "covariance"]).unwrap();
        assert_eq!(cov.dim, 8);
        assert_eq!(cov.trials, 50_000);
        assert_eq!(cov.rho, 0.5);
        assert_eq!(cov.sigma2, 1.0);
        assert_eq!(cov.seed, 42);
        assert_eq!(cov.format, OutputFormat::Csv);

        let sweep = from_args(["condlab", "k-sweep"]).unwrap();
        assert_eq!(sweep.rho, 0.0);
        assert_eq!(sweep.drift, 0.2);
        assert_eq!(sweep.trials, 20_000);
        assert_eq!(sweep.family, Family::LinearPipeline);

        let pipeline = from_args(["condlab", "pipeline"]).unwrap();
        assert_eq!(pipeline.trials, 50);
        assert_eq!(pipeline.drift, 0.1);
        assert_eq!(pipeline.horizon, 40);
    }

    #[test]
    fn out_of_range_values_name_the_field() {
        let err = from_args(["condlab", "covariance", "--rho", "1.2"]).unwrap_err();
        assert!(err.contains("rho") && err.contains("[0, 1)") && err.contains("1.2"));
        let err = from_args(["condlab", "covariance", "--dim", "65"]).unwrap_err();
        assert!(err.contains("dim"));
        let err = from_args(["condlab", "covariance", "--sigma2", "-1"]).unwrap_err();
        assert!(err.contains("sigma2"));
    }

    #[test]
    fn constant_jacobian_suites_reject_the_nonlinear_family() {
        let dir = std::env::temp_dir().join(format!("condlab-config-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("nonlinear.toml");
        std::fs::write(&path, "[system]\nfamily = \"nonlinear\"\n").unwrap();
        let arg = path.to_str().unwrap().to_string();
        assert!(from_args(["condlab", "k-sweep", "--config", &arg]).is_err());
        assert!(from_args(["condlab", "bias-variance", "--config", &arg]).is_err());
        assert!(from_args(["condlab", "bound", "--config", &arg]).is_ok());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let dir = std::env::temp_dir().join(format!("condlab-config-keys-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("typo.toml");
        std::fs::write(&path, "sede = 3\n").unwrap();
        let arg = path.to_str().unwrap().to_string();
        assert!(from_args(["condlab", "covariance", "--config", &arg]).is_err());
        std::fs::remove_file(&path).ok();
    }
}
