use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Action, Context, Demonstration, EnvState, Suite, SuiteConfig};
use crate::error::{Error, Result};

/// One demonstration as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub context_id: String,
    pub task_id: usize,
    pub scenario_id: usize,
    pub initial_state: EnvState,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub success: bool,
}

impl From<&Demonstration> for DemoRecord {
    fn from(d: &Demonstration) -> Self {
        DemoRecord {
            context_id: d.context.id.clone(),
            task_id: d.context.task_id,
            scenario_id: d.context.scenario_id,
            initial_state: d.context.state.clone(),
            observations: d.observations.clone(),
            actions: d.actions.clone(),
            success: d.success,
        }
    }
}

impl From<DemoRecord> for Demonstration {
    fn from(r: DemoRecord) -> Self {
        Demonstration {
            context: Context {
                id: r.context_id,
                task_id: r.task_id,
                scenario_id: r.scenario_id,
                state: r.initial_state,
            },
            observations: r.observations,
            actions: r.actions,
            success: r.success,
        }
    }
}

pub fn write_demos(path: &Path, demos: &[Demonstration]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in demos {
        serde_json::to_writer(&mut w, &DemoRecord::from(d))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_demos(path: &Path) -> Result<Vec<Demonstration>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DemoRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Dataset(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if record.observations.len() != record.actions.len() + 1 {
            return Err(Error::Dataset(format!(
                "{}:{}: {} observations for {} actions",
                path.display(),
                n + 1,
                record.observations.len(),
                record.actions.len()
            )));
        }
        out.push(record.into());
    }
    Ok(out)
}

/// Writes the generating configuration; loading it regenerates the same suite.
pub fn save_suite(path: &Path, suite: &Suite) -> Result<()> {
    let text = toml::to_string(&suite.config).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_suite(path: &Path) -> Result<Suite> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: SuiteConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    super::make_suite(&config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsuite::{make_suite, scripted_expert, ExpertConfig, Family, Split};

    #[test]
    fn demos_and_suite_round_trip() {
        let config = SuiteConfig {
            seed: 5,
            n_tasks: 3,
            families: vec![Family::KeyDoor, Family::Reach],
            ..SuiteConfig::default()
        };
        let suite = make_suite(&config).unwrap();
        let demos: Vec<_> = suite
            .contexts_for_scenario(0, Split::Train, 2)
            .unwrap()
            .iter()
            .map(|c| scripted_expert(suite.task_for(c).unwrap(), c, &ExpertConfig::default()).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let demo_path = dir.path().join("demos.jsonl");
        write_demos(&demo_path, &demos).unwrap();
        assert_eq!(read_demos(&demo_path).unwrap(), demos);

        let suite_path = dir.path().join("suite.toml");
        save_suite(&suite_path, &suite).unwrap();
        assert_eq!(load_suite(&suite_path).unwrap(), suite);
    }
}
