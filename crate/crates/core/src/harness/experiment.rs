use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{
    cross_validate, run_gzsl, run_tzsl, run_zsr, search_fusion_weights, CvOutcome, CvPlan, FusionProtocol, FusionSearch,
    RunOptions, ScenarioSpec, Scoring, DEFAULT_LAMBDA_GRID,
};
use crate::data::{assemble_dataset, Dataset, Hyperparams};
use crate::error::{LseError, Result};
use crate::lse::TrainOptions;
use crate::metrics::{EvalReport, Scenario};

/// An experiment file: one dataset, a hyperparameter search and a list of
/// scenarios to report.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths resolve against the config file's directory.
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub scenarios: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fast: bool,
    #[serde(default)]
    pub standardize: bool,
    /// Defaults to the standard lambda grid.
    pub lambda_grid: Option<Vec<f64>>,
    /// Defaults to a geometric ladder up to the seen instance count.
    pub dim_grid: Option<Vec<usize>>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    pub fusion: Option<FusionConfig>,
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub modalities: Vec<String>,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    /// Tune the weights on the unseen test classes instead of held-out seen
    /// classes.
    #[serde(default)]
    pub tune_on_test: bool,
}

fn default_grid_step() -> f64 {
    0.1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| LseError::format(origin, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LseError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn scenario_list(&self) -> Result<Vec<Scenario>> {
        if self.scenarios.is_empty() {
            return Err(LseError::invalid("experiment lists no scenarios"));
        }
        self.scenarios.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub hyper: Hyperparams,
    pub cv: Option<CvOutcome>,
    pub fusion: Option<FusionSearch>,
    pub reports: Vec<EvalReport>,
    /// Path of `summary.csv`.
    pub summary: PathBuf,
}

/// Runs `config`: cross-validation when the grid has more than one cell,
/// then the optional fusion search, then every scenario. Writes one TOML
/// report and one confusion CSV per scenario plus `summary.csv`.
pub fn run_experiment(config: &ExperimentConfig, base: &Path, mut opts: RunOptions) -> Result<ExperimentOutcome> {
    let scenarios = config.scenario_list()?;
    let dataset = assemble_dataset(base.join(&config.manifest))?;
    opts.fast = config.fast;
    opts.train = TrainOptions { standardize: config.standardize, ..opts.train };

    let (hyper, cv) = select_hyperparams(&dataset, config, &opts)?;
    let fusion = match &config.fusion {
        None => None,
        Some(f) => {
            let names: Vec<&str> = f.modalities.iter().map(String::as_str).collect();
            let protocol = if f.tune_on_test {
                FusionProtocol::UnseenTest
            } else {
                FusionProtocol::ClassValidation { seed: config.seed, holdout_fraction: 0.2 }
            };
            let search = search_fusion_weights(&dataset, hyper, &names, f.grid_step, protocol, &opts)?;
            log::info!("fusion weights {:?} (pc accuracy {:.4})", search.best.weights(), search.best_score);
            opts.scoring = Scoring::Fused(search.best.clone());
            Some((search, protocol))
        }
    };

    let out = base.join(&config.output_dir);
    fs::create_dir_all(&out).map_err(|e| LseError::io(&out, e))?;
    let write = |name: &str, text: &str| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| LseError::io(&p, e))
    };
    if let Some(cv) = &cv {
        write("cv.csv", &cv.to_csv())?;
    }
    if let Some((search, _)) = &fusion {
        let mut s = String::from("weights,pc_accuracy\n");
        for (w, score) in &search.table {
            let w: Vec<String> = w.iter().map(f64::to_string).collect();
            s.push_str(&format!("{},{score}\n", w.join(";")));
        }
        write("fusion.csv", &s)?;
    }

    let mut reports = Vec::new();
    let mut summary = format!("{}\n", EvalReport::CSV_HEADER);
    for scenario in scenarios {
        let mut report = match scenario {
            Scenario::Tzsl => run_tzsl(&dataset, hyper, &opts)?,
            Scenario::Zsr => run_zsr(&dataset, hyper, &opts)?,
            s => run_gzsl(&dataset, hyper, &ScenarioSpec::new(s)?, config.seed, &opts)?,
        };
        if let Some(cv) = &cv {
            report.provenance.lambda_grid = cv.table.iter().map(|c| c.lambda).fold(Vec::new(), push_new);
            report.provenance.dim_grid = cv.table.iter().map(|c| c.latent_dim).fold(Vec::new(), push_new);
        }
        if let Some((_, protocol)) = &fusion {
            report.provenance.fusion_protocol = Some(protocol.label().to_string());
        }
        let stem = scenario.tag().to_ascii_lowercase();
        write(&format!("{stem}.toml"), &report.to_toml())?;
        write(&format!("{stem}.confusion.csv"), &report.confusion.to_csv())?;
        summary.push_str(&report.to_csv_row());
        summary.push('\n');
        reports.push(report);
    }
    write("summary.csv", &summary)?;
    Ok(ExperimentOutcome {
        hyper,
        cv,
        fusion: fusion.map(|(s, _)| s),
        reports,
        summary: out.join("summary.csv"),
    })
}

fn push_new<T: PartialEq>(mut v: Vec<T>, x: T) -> Vec<T> {
    if !v.contains(&x) {
        v.push(x);
    }
    v
}

fn select_hyperparams(
    dataset: &Dataset,
    config: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(Hyperparams, Option<CvOutcome>)> {
    let default = CvPlan::default_for(dataset, config.seed)?;
    let plan = CvPlan::new(
        config.folds,
        config.lambda_grid.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec()),
        config.dim_grid.clone().unwrap_or(default.dim_grid),
        config.seed,
    )?;
    if plan.lambda_grid.len() == 1 && plan.dim_grid.len() == 1 {
        return Ok((Hyperparams::new(plan.lambda_grid[0], plan.dim_grid[0])?, None));
    }
    let cv = cross_validate(dataset, &plan, opts)?;
    log::info!(
        "cross-validation picked lambda={} d={} (pc accuracy {:.4})",
        cv.best.lambda(),
        cv.best.latent_dim(),
        cv.best_score
    );
    Ok((cv.best, Some(cv)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_toml(
            "manifest = \"ds\"\noutput_dir = \"out\"\nscenarios = [\"tzsl\", \"U-T\"]\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(c.folds, 5);
        assert_eq!(c.scenario_list().unwrap(), vec![Scenario::Tzsl, Scenario::UnseenTotal]);
        assert!(c.fusion.is_none());
    }

    #[test]
    fn rejects_unknown_keys_and_scenarios() {
        let p = Path::new("x.toml");
        assert!(ExperimentConfig::from_toml("manifest = \"a\"\noutput_dir = \"b\"\nscenarios = []\nbogus = 1\n", p).is_err());
        let c = ExperimentConfig::from_toml("manifest = \"a\"\noutput_dir = \"b\"\nscenarios = [\"x-y\"]\n", p).unwrap();
        assert!(c.scenario_list().is_err());
    }
}
