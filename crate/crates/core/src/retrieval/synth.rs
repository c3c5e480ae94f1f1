//! Automatic iterative assembly from a single component.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{suggest, Assembly, EmbeddingIndex, Models, PlacedPart, Result, SuggestConfig, SuggestMode};
use crate::geometry::Point3;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub max_steps: usize,
    pub mode: SuggestMode,
    pub n_candidates: usize,
    /// Stop once the best candidate's log density falls below this.
    pub min_log_score: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            max_steps: 7,
            mode: SuggestMode::Max,
            n_candidates: 8,
            min_log_score: None,
        }
    }
}

impl SynthConfig {
    fn suggest_config(&self, n: usize) -> SuggestConfig {
        SuggestConfig {
            n_candidates: n,
            mode: self.mode,
            draws: self.n_candidates.max(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub key: String,
    pub position: Point3,
    pub log_score: f64,
    pub mode: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    BelowThreshold,
    /// Every index entry is already placed.
    Exhausted,
    /// The placement network produced a non-finite coordinate.
    NonFinitePlacement,
}

/// Seed part followed by each added part, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed_key: String,
    pub seed_position: Point3,
    pub steps: Vec<TrajectoryStep>,
    pub stop: StopReason,
}

impl Trajectory {
    /// Keys of every added part (the seed excluded).
    pub fn added_keys(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.key.as_str()).collect()
    }
}

/// Grows an assembly from `seed` by repeatedly adding the first suggestion.
pub fn auto_assemble(
    models: &Models,
    index: &EmbeddingIndex,
    seed: PlacedPart,
    cfg: &SynthConfig,
    rng_seed: u64,
) -> Result<Trajectory> {
    let (traj, _) = assemble_with_states(models, index, seed, cfg, rng_seed)?;
    Ok(traj)
}

/// [`auto_assemble`] plus the assembly after every step, seed first.
pub(super) fn assemble_with_states(
    models: &Models,
    index: &EmbeddingIndex,
    seed: PlacedPart,
    cfg: &SynthConfig,
    rng_seed: u64,
) -> Result<(Trajectory, Vec<Assembly>)> {
    if index.is_empty() {
        return Err(super::RetrievalError::EmptyIndex);
    }
    let mut traj = Trajectory {
        seed_key: seed.key(),
        seed_position: seed.position,
        steps: Vec::new(),
        stop: StopReason::MaxSteps,
    };
    let mut asm = Assembly::new(seed, rng_seed);
    let mut states = vec![asm.clone()];
    for step in 0..cfg.max_steps {
        let mut rng = rng_for(rng_seed, &["synth", &step.to_string()]);
        let set = suggest(
            &models.g,
            Some(&models.h),
            index,
            &asm,
            &cfg.suggest_config(1),
            &mut rng,
        )?;
        let Some(best) = set.first() else {
            traj.stop = StopReason::Exhausted;
            break;
        };
        if cfg.min_log_score.is_some_and(|t| best.log_score < t) {
            traj.stop = StopReason::BelowThreshold;
            break;
        }
        let position = best.placement.expect("placement requested");
        if position.iter().any(|v| !v.is_finite()) {
            traj.stop = StopReason::NonFinitePlacement;
            break;
        }
        traj.steps.push(TrajectoryStep {
            key: best.key.clone(),
            position,
            log_score: best.log_score,
            mode: best.mode,
        });
        asm.parts.push(PlacedPart {
            component: index.entry(best.entry).component.clone(),
            position,
        });
        states.push(asm.clone());
    }
    Ok((traj, states))
}

/// A branching synthesis result: each node holds one placed part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub key: String,
    pub position: Point3,
    pub log_score: f64,
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    /// Number of nodes, this one included.
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(TreeNode::size).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(TreeNode::depth).max().unwrap_or(0)
    }
}

/// Branching synthesis: every node expands into its `branch` best (or, in
/// sample mode, randomly drawn) candidates, down to `cfg.max_steps` levels.
pub fn auto_assemble_tree(
    models: &Models,
    index: &EmbeddingIndex,
    seed: PlacedPart,
    cfg: &SynthConfig,
    branch: usize,
    rng_seed: u64,
) -> Result<TreeNode> {
    if index.is_empty() {
        return Err(super::RetrievalError::EmptyIndex);
    }
    let root = TreeNode {
        key: seed.key(),
        position: seed.position,
        log_score: 0.0,
        children: Vec::new(),
    };
    let asm = Assembly::new(seed, rng_seed);
    expand(models, index, asm, root, cfg, branch, rng_seed, "")
}

#[allow(clippy::too_many_arguments)]
fn expand(
    models: &Models,
    index: &EmbeddingIndex,
    asm: Assembly,
    mut node: TreeNode,
    cfg: &SynthConfig,
    branch: usize,
    rng_seed: u64,
    path: &str,
) -> Result<TreeNode> {
    if asm.parts.len() > cfg.max_steps {
        return Ok(node);
    }
    let mut rng = rng_for(rng_seed, &["tree", path]);
    let set = suggest(
        &models.g,
        Some(&models.h),
        index,
        &asm,
        &cfg.suggest_config(branch),
        &mut rng,
    )?;
    for (b, s) in set.items.iter().enumerate() {
        if cfg.min_log_score.is_some_and(|t| s.log_score < t) {
            continue;
        }
        let position = s.placement.expect("placement requested");
        if position.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let mut child_asm = asm.clone();
        child_asm.parts.push(PlacedPart {
            component: index.entry(s.entry).component.clone(),
            position,
        });
        let child = TreeNode {
            key: s.key.clone(),
            position,
            log_score: s.log_score,
            children: Vec::new(),
        };
        let child_path = format!("{path}/{b}");
        node.children.push(expand(
            models,
            index,
            child_asm,
            child,
            cfg,
            branch,
            rng_seed,
            &child_path,
        )?);
    }
    Ok(node)
}

/// Writes `trajectory.json` and one `step_NN.xyz` point dump per state
/// (seed only, then after each addition).
pub fn write_trajectory(
    dir: &Path,
    models: &Models,
    index: &EmbeddingIndex,
    seed: PlacedPart,
    cfg: &SynthConfig,
    rng_seed: u64,
) -> Result<Trajectory> {
    std::fs::create_dir_all(dir)?;
    let (traj, states) = assemble_with_states(models, index, seed, cfg, rng_seed)?;
    let json = serde_json::to_string_pretty(&traj).expect("plain data");
    std::fs::write(dir.join("trajectory.json"), json)?;
    for (i, s) in states.iter().enumerate() {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("step_{i:02}.xyz")))?);
        for (part_index, p) in s.parts.iter().enumerate() {
            for q in p.component.cloud_centered.placed_at(p.position).points() {
                writeln!(f, "{} {} {} {}", q[0], q[1], q[2], part_index)?;
            }
        }
        f.flush()?;
    }
    Ok(traj)
}
