use std::path::{Path, PathBuf};

use clap::ValueEnum;
use progress_core::data::{load_dataset, record_demonstrations, save_dataset, Dataset};
use progress_core::metrics::{write_csv, MetricRow};
use progress_core::nn::{Checkpoint, ProgressDims};
use progress_core::rl::{
    evaluate_episodes, pretrain_reward, FixedGoal, GoalPolicy, RandomPolicy, ScriptedExpert,
};
use progress_core::rwr::{goal_frame, train_rwr};
use progress_core::{BcPolicy, Error, ProgressModel, QPolicy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{LoadedConfig, RunConfig};
use crate::error::{CliError, CliResult};
use crate::plots;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum PolicyKind {
    /// Q-policy from `train-online`.
    #[default]
    Online,
    /// Behavior-cloning policy from `train-rwr`, aimed at the RWR goal frame.
    Rwr,
    /// The scripted demonstrator.
    Expert,
    /// Uniformly random actions.
    Random,
}

impl PolicyKind {
    fn name(self) -> &'static str {
        match self {
            PolicyKind::Online => "online",
            PolicyKind::Rwr => "rwr",
            PolicyKind::Expert => "expert",
            PolicyKind::Random => "random",
        }
    }
}

/// The loaded configuration and the invocation it belongs to.
pub struct Run {
    pub loaded: LoadedConfig,
    pub command: &'static str,
    pub arguments: Vec<String>,
}

impl Run {
    fn config(&self) -> &RunConfig {
        &self.loaded.config
    }

    /// Writes `<output>.meta.json` with the verbatim config, overrides and the
    /// resolved settings that produced `output`.
    fn write_metadata(&self, output: &Path) -> CliResult<()> {
        #[derive(Serialize)]
        struct Metadata<'a> {
            command: &'a str,
            arguments: &'a [String],
            config_path: Option<&'a Path>,
            config_text: &'a str,
            overrides: &'a [(String, String)],
            resolved_config: String,
        }
        let meta = Metadata {
            command: self.command,
            arguments: &self.arguments,
            config_path: self.loaded.source_path.as_deref(),
            config_text: &self.loaded.source_text,
            overrides: &self.loaded.overrides,
            resolved_config: self.config().to_toml(),
        };
        let mut name = output.as_os_str().to_os_string();
        name.push(".meta.json");
        let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        write_file(Path::new(&name), json.as_bytes())
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    ensure_parent(path)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> CliResult<()> {
    ensure_parent(path)?;
    Ok(checkpoint.save(path)?)
}

fn write_metrics(run: &Run, path: &Path, rows: &[MetricRow], with_weights: bool) -> CliResult<()> {
    ensure_parent(path)?;
    write_csv(path, rows, with_weights)?;
    run.write_metadata(path)
}

fn load_demos(path: &Path, config: &RunConfig) -> CliResult<Dataset> {
    let dataset = load_dataset(path)?;
    if !dataset.is_empty() && dataset.obs_dim() != config.env.obs_dim() {
        return Err(Error::ShapeMismatch {
            expected: config.env.obs_dim(),
            actual: dataset.obs_dim(),
        }
        .into());
    }
    Ok(dataset)
}

fn load_reward_model(path: &Path) -> CliResult<ProgressModel> {
    Ok(ProgressModel::from_checkpoint(&Checkpoint::load(path)?)?)
}

pub fn gen_demos(
    run: &Run,
    noisy: bool,
    count: Option<usize>,
    out: Option<PathBuf>,
) -> CliResult<()> {
    let config = run.config();
    let mut options = if noisy {
        config.noisy_demos.options()
    } else {
        config.demos.clone()
    };
    if let Some(count) = count {
        options.count = count;
    }
    let mut dataset = record_demonstrations(&config.env, &options)?;
    dataset
        .metadata
        .insert("run_config".into(), run.loaded.source_text.clone());
    let path = out.unwrap_or_else(|| {
        if noisy {
            config.paths.noisy_demos.clone()
        } else {
            config.paths.expert_demos.clone()
        }
    });
    ensure_parent(&path)?;
    save_dataset(&dataset, &path)?;
    run.write_metadata(&path)?;
    let successes = dataset.success_count();
    println!(
        "wrote {} trajectories to {} ({successes} success, {} failed)",
        dataset.len(),
        path.display(),
        dataset.len() - successes
    );
    Ok(())
}

pub fn pretrain(run: &Run) -> CliResult<()> {
    let config = run.config();
    let expert = load_demos(&config.paths.expert_demos, config)?;
    let model = ProgressModel::new(ProgressDims::new(config.env.obs_dim()), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (learner, losses) =
        pretrain_reward(&expert, model, &config.online, &config.reward, &mut rng)?;
    save_checkpoint(&learner.model.to_checkpoint(), &config.paths.reward_model)?;
    run.write_metadata(&config.paths.reward_model)?;
    let rows: Vec<MetricRow> = losses
        .iter()
        .enumerate()
        .map(|(k, &loss)| MetricRow {
            step: k as u64 + 1,
            expert_loss: Some(loss),
            ..Default::default()
        })
        .collect();
    write_metrics(
        run,
        &config.paths.out_dir.join("pretrain_metrics.csv"),
        &rows,
        false,
    )?;
    match losses.last() {
        Some(loss) => println!(
            "pretrained for {} steps, final expert loss {loss:.4}",
            losses.len()
        ),
        None => println!("pretrain_steps is 0; saved the untrained model"),
    }
    Ok(())
}

pub fn train_online(run: &Run) -> CliResult<()> {
    let config = run.config();
    let expert = load_demos(&config.paths.expert_demos, config)?;
    let model = load_reward_model(&config.paths.reward_model)?;
    let outcome = progress_core::rl::train_online(
        &config.env,
        &expert,
        model,
        &config.online,
        &config.reward,
    )?;
    save_checkpoint(&outcome.policy.to_checkpoint(), &config.paths.online_policy)?;
    run.write_metadata(&config.paths.online_policy)?;
    let reward_path = config.paths.out_dir.join("online_reward.ckpt");
    save_checkpoint(&outcome.reward_model.to_checkpoint(), &reward_path)?;
    run.write_metadata(&reward_path)?;
    write_metrics(
        run,
        &config.paths.out_dir.join("online_metrics.csv"),
        &outcome.metrics,
        false,
    )?;
    println!(
        "{} episodes, final success rate {}",
        outcome.metrics.len(),
        outcome.final_success_rate
    );
    Ok(())
}

pub fn train_rwr_cmd(run: &Run) -> CliResult<()> {
    let config = run.config();
    let noisy = load_demos(&config.paths.noisy_demos, config)?;
    let model = load_reward_model(&config.paths.reward_model)?;
    let goal = goal_frame(&noisy)?;
    let outcome = train_rwr(&noisy, &model, &goal, &config.rwr, &config.reward)?;
    save_checkpoint(&outcome.policy.to_checkpoint(), &config.paths.rwr_policy)?;
    run.write_metadata(&config.paths.rwr_policy)?;
    write_metrics(
        run,
        &config.paths.out_dir.join("rwr_metrics.csv"),
        &outcome.metrics,
        true,
    )?;
    println!(
        "mean weight success {:.6}, failed {:.6}",
        outcome.mean_weight_success, outcome.mean_weight_failed
    );
    Ok(())
}

pub fn eval(run: &Run, kind: PolicyKind, episodes: Option<usize>) -> CliResult<()> {
    let config = run.config();
    let episodes = episodes.unwrap_or(config.eval.episodes);
    let mut policy: Box<dyn GoalPolicy> = match kind {
        PolicyKind::Online => Box::new(QPolicy::from_checkpoint(&Checkpoint::load(
            &config.paths.online_policy,
        )?)?),
        PolicyKind::Rwr => {
            let policy = BcPolicy::from_checkpoint(&Checkpoint::load(&config.paths.rwr_policy)?)?;
            let goal = goal_frame(&load_demos(&config.paths.noisy_demos, config)?)?;
            Box::new(FixedGoal { policy, goal })
        }
        PolicyKind::Expert => Box::new(ScriptedExpert),
        PolicyKind::Random => Box::new(RandomPolicy::new(config.seed)),
    };
    let results = evaluate_episodes(
        policy.as_mut(),
        &config.env,
        episodes,
        config.eval.first_episode,
    )?;
    let mut csv = String::from("episode,episode_seed,success,steps\n");
    for (k, r) in results.iter().enumerate() {
        csv.push_str(&format!(
            "{k},{},{},{}\n",
            r.episode_seed,
            u8::from(r.success),
            r.steps
        ));
    }
    let path = config
        .paths
        .out_dir
        .join(format!("eval_{}.csv", kind.name()));
    write_file(&path, csv.as_bytes())?;
    run.write_metadata(&path)?;
    let rate = results.iter().filter(|r| r.success).count() as f64 / results.len() as f64;
    println!("success_rate {rate}");
    Ok(())
}

pub fn export_plots(files: &[PathBuf], out_dir: &Path, bin_width: u64) -> CliResult<()> {
    let aggregate = plots::aggregate(files, bin_width)?;
    let stem = files[0]
        .file_stem()
        .map_or_else(|| "metrics".into(), |s| s.to_string_lossy().into_owned());
    let csv_path = out_dir.join(format!("{stem}_aggregate.csv"));
    let json_path = out_dir.join(format!("{stem}_aggregate.json"));
    write_file(&csv_path, aggregate.to_csv().as_bytes())?;
    write_file(&json_path, aggregate.to_json().as_bytes())?;
    println!(
        "aggregated {} files into {} bins: {}",
        files.len(),
        aggregate.bins.len(),
        csv_path.display()
    );
    Ok(())
}
