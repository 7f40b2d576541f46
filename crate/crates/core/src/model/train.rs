//! Minibatch training loops over sample sources.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::agent::{agent_train_step, AgentConfig};
use super::checkpoint::LossLog;
use super::eval::{AgentSource, GazeSource};
use super::gaze::{gaze_train_step_in_phase, GazeNetConfig};
use super::params::ParameterSet;
use super::HighLevelCommand;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Seeds batch order and crop offsets.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// Yields batches from reshuffled passes over `0..len`.
struct Batches {
    order: Vec<usize>,
    cursor: usize,
    size: usize,
}

impl Batches {
    fn new(len: usize, size: usize) -> Self {
        Self {
            order: (0..len).collect(),
            cursor: len,
            size: size.min(len),
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> &[usize] {
        if self.cursor + self.size > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += self.size;
        &self.order[self.cursor - self.size..self.cursor]
    }
}

/// Yields batches that cycle through command groups, so every branch gets a
/// comparable share of updates however rare its command is.
struct CommandBatches {
    groups: Vec<Batches>,
    members: Vec<Vec<usize>>,
    turn: usize,
    size: usize,
    batch: Vec<usize>,
}

impl CommandBatches {
    fn new<S: GazeSource + ?Sized>(source: &S, size: usize) -> Self {
        let mut members: Vec<Vec<usize>> = Vec::new();
        for command in HighLevelCommand::ALL {
            let group: Vec<usize> = (0..source.len()).filter(|&i| source.command(i) == command).collect();
            if !group.is_empty() {
                members.push(group);
            }
        }
        Self {
            groups: members.iter().map(|m| Batches::new(m.len(), 1)).collect(),
            members,
            turn: 0,
            size: size.min(source.len()),
            batch: Vec::with_capacity(size),
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> &[usize] {
        self.batch.clear();
        for _ in 0..self.size {
            let g = self.turn % self.groups.len();
            self.turn += 1;
            let i = self.groups[g].next(rng)[0];
            self.batch.push(self.members[g][i]);
        }
        &self.batch
    }
}

/// Trains the gaze net with command-balanced batches; `observe` runs after every step with the step count so far.
pub fn train_gaze<S, F>(
    source: &S,
    params: &mut ParameterSet,
    net: &GazeNetConfig,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<LossLog>
where
    S: GazeSource + ?Sized,
    F: FnMut(usize, &ParameterSet) -> Result<()>,
{
    cfg.validate()?;
    net.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batches = CommandBatches::new(source, cfg.batch_size);
    let mut log = LossLog::default();
    for step in 0..cfg.steps {
        let batch = batches
            .next(&mut rng)
            .iter()
            .map(|&i| source.sample(i))
            .collect::<Result<Vec<_>>>()?;
        let loss = gaze_train_step_in_phase(&batch, params, net, &mut rng, net.phase_at(step))?;
        log.push(step, loss, "train");
        observe(step + 1, params)?;
    }
    Ok(log)
}

/// Trains an agent; `observe` runs after every step with the step count so far.
pub fn train_agent<S, F>(
    source: &S,
    params: &mut ParameterSet,
    agent: &AgentConfig,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<LossLog>
where
    S: AgentSource + ?Sized,
    F: FnMut(usize, &ParameterSet) -> Result<()>,
{
    cfg.validate()?;
    agent.validate()?;
    if source.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batches = Batches::new(source.len(), cfg.batch_size);
    let mut log = LossLog::default();
    for step in 0..cfg.steps {
        let batch = batches
            .next(&mut rng)
            .iter()
            .map(|&i| source.sample(i))
            .collect::<Result<Vec<_>>>()?;
        let loss = agent_train_step(&batch, params, agent)?;
        log.push(step, loss, "train");
        observe(step + 1, params)?;
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Batches::new(10, 5);
        let mut seen: Vec<usize> = b.next(&mut rng).to_vec();
        seen.extend_from_slice(b.next(&mut rng));
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(Batches::new(3, 8).next(&mut rng).len(), 3);
    }

    struct Commands(Vec<HighLevelCommand>);

    impl GazeSource for Commands {
        fn len(&self) -> usize {
            self.0.len()
        }
        fn sample(&self, _: usize) -> Result<super::super::gaze::GazeSample> {
            unreachable!()
        }
        fn label(&self, _: usize) -> crate::episode::ActivityLabel {
            crate::episode::ActivityLabel::Driving
        }
        fn command(&self, index: usize) -> HighLevelCommand {
            self.0[index]
        }
    }

    #[test]
    fn command_batches_share_updates_between_branches() {
        use HighLevelCommand::*;
        let mut commands = vec![Follow; 90];
        commands.extend([Left; 6]);
        commands.extend([Straight; 4]);
        let source = Commands(commands);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut b = CommandBatches::new(&source, 12);
        let mut counts = [0usize; 5];
        for _ in 0..10 {
            for &i in b.next(&mut rng) {
                counts[source.0[i].index()] += 1;
            }
        }
        assert_eq!(
            (counts[Follow.index()], counts[Left.index()], counts[Straight.index()]),
            (40, 40, 40)
        );
        let mut straight = b.members[2].clone();
        straight.sort();
        assert_eq!(straight, vec![96, 97, 98, 99]);
    }
}
