use serde::{Deserialize, Serialize};

use crate::envsuite::{Action, ActionSpace};
use crate::error::{Error, Result};

/// Builds the fixed-length policy input: raw observation, one-hot goal, and
/// the last `window` actions (most recent first). Slots before the start of
/// the episode carry a dedicated "none" flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub observation_dim: usize,
    pub n_goals: usize,
    pub action_space: ActionSpace,
    pub window: usize,
}

impl Encoder {
    pub fn new(observation_dim: usize, n_goals: usize, action_space: ActionSpace, window: usize) -> Self {
        Encoder {
            observation_dim,
            n_goals,
            action_space,
            window,
        }
    }

    fn slot_width(&self) -> usize {
        self.action_space.dim() + 1
    }

    pub fn dim(&self) -> usize {
        self.observation_dim + self.n_goals + self.window * self.slot_width()
    }

    /// Encoding at step `t = history.len()`.
    pub fn encode(&self, observation: &[f64], goal: usize, history: &[Action]) -> Result<Vec<f64>> {
        if observation.len() != self.observation_dim {
            return Err(Error::LengthMismatch(format!(
                "observation of length {}, expected {}",
                observation.len(),
                self.observation_dim
            )));
        }
        if goal >= self.n_goals {
            return Err(Error::Config(format!("goal {goal} outside {} goals", self.n_goals)));
        }
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(observation);
        out.extend((0..self.n_goals).map(|g| if g == goal { 1.0 } else { 0.0 }));
        let width = self.slot_width();
        for lag in 0..self.window {
            let start = out.len();
            out.resize(start + width, 0.0);
            let slot = &mut out[start..];
            match history.len().checked_sub(lag + 1).map(|i| &history[i]) {
                None => slot[width - 1] = 1.0,
                Some(action) => self.write_action(slot, action)?,
            }
        }
        Ok(out)
    }

    fn write_action(&self, slot: &mut [f64], action: &Action) -> Result<()> {
        match (self.action_space, action) {
            (ActionSpace::Discrete(v), Action::Token(t)) => {
                if *t >= v {
                    return Err(Error::OutOfVocabulary { token: *t, vocab: v });
                }
                slot[*t] = 1.0;
            }
            (ActionSpace::Continuous(d), Action::Continuous(a)) if a.len() == d => {
                slot[..d].copy_from_slice(a);
            }
            _ => {
                return Err(Error::ActionMismatch(format!(
                    "{action:?} for action space {:?}",
                    self.action_space
                )))
            }
        }
        Ok(())
    }

    /// Encodings for every step of an episode, rebuilt from its stored
    /// observations. `observations` holds one entry more than `actions`
    /// (the final observation is not used).
    pub fn episode(&self, goal: usize, observations: &[Vec<f64>], actions: &[Action]) -> Result<Vec<Vec<f64>>> {
        if observations.len() != actions.len() + 1 {
            return Err(Error::LengthMismatch(format!(
                "{} observations for {} actions",
                observations.len(),
                actions.len()
            )));
        }
        (0..actions.len())
            .map(|t| self.encode(&observations[t], goal, &actions[..t]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_window() {
        let enc = Encoder::new(2, 3, ActionSpace::Discrete(4), 2);
        assert_eq!(enc.dim(), 2 + 3 + 2 * 5);
        let x = enc.encode(&[0.5, -1.0], 1, &[Action::Token(2), Action::Token(3)]).unwrap();
        assert_eq!(&x[..5], &[0.5, -1.0, 0.0, 1.0, 0.0]);
        assert_eq!(&x[5..10], &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(&x[10..15], &[0.0, 0.0, 1.0, 0.0, 0.0]);
        let start = enc.encode(&[0.0, 0.0], 0, &[]).unwrap();
        assert_eq!(start[5..].iter().sum::<f64>(), 2.0);
        assert_eq!(start[9], 1.0);
        assert_eq!(start[14], 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let enc = Encoder::new(1, 2, ActionSpace::Discrete(2), 1);
        assert!(enc.encode(&[0.0, 0.0], 0, &[]).is_err());
        assert!(enc.encode(&[0.0], 2, &[]).is_err());
        assert!(matches!(
            enc.encode(&[0.0], 0, &[Action::Token(5)]),
            Err(Error::OutOfVocabulary { .. })
        ));
        assert!(enc.episode(0, &[vec![0.0]], &[Action::Token(0)]).is_err());
    }
}
