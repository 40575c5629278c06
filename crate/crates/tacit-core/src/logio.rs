//! Line-delimited episode logs: one JSON record per line, a meta header
//! first, one tick record per tick, a terminal record last.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulation::{EpisodeLog, Terminal, TickRecord};
use crate::types::{AgentId, State};

/// Externally tagged: each line is {"meta": ...}, {"tick": ...} or
/// {"end": ...}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LogRecord {
    Meta { scenario: String, lambda: f64, seed: u64 },
    Tick(TickRecord),
    End { terminal: Terminal, final_states: BTreeMap<AgentId, State> },
}

pub fn write_episode(log: &EpisodeLog, mut w: impl Write) -> Result<()> {
    let meta = LogRecord::Meta {
        scenario: log.scenario.clone(),
        lambda: log.lambda,
        seed: log.seed,
    };
    serde_json::to_writer(&mut w, &meta)?;
    w.write_all(b"\n")?;
    for tick in &log.ticks {
        serde_json::to_writer(&mut w, &LogRecord::Tick(tick.clone()))?;
        w.write_all(b"\n")?;
    }
    let end = LogRecord::End {
        terminal: log.terminal,
        final_states: log.final_states.clone(),
    };
    serde_json::to_writer(&mut w, &end)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_episode_file(log: &EpisodeLog, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_episode(log, std::io::BufWriter::new(file))
}

pub fn read_episode(r: impl BufRead) -> Result<EpisodeLog> {
    let mut scenario = None;
    let mut ticks = Vec::new();
    let mut end = None;
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogRecord>(&line)? {
            LogRecord::Meta { scenario: s, lambda, seed } => scenario = Some((s, lambda, seed)),
            LogRecord::Tick(t) => ticks.push(t),
            LogRecord::End { terminal, final_states } => end = Some((terminal, final_states)),
        }
    }
    let (scenario, lambda, seed) =
        scenario.ok_or_else(|| Error::invalid_input("log has no meta record"))?;
    let (terminal, final_states) =
        end.ok_or_else(|| Error::invalid_input("log has no terminal record"))?;
    Ok(EpisodeLog { scenario, lambda, seed, ticks, final_states, terminal })
}

pub fn read_episode_file(path: impl AsRef<Path>) -> Result<EpisodeLog> {
    let file = std::fs::File::open(path)?;
    read_episode(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;
    use crate::simulation::run_episode;

    #[test]
    fn episode_log_round_trips_through_jsonl() {
        let mut scenario = builtin::load("free_space").unwrap();
        scenario.termination.t_max = 12;
        let log = run_episode(&scenario, 0.0, 5).unwrap();
        let mut bytes = Vec::new();
        write_episode(&log, &mut bytes).unwrap();
        let back = read_episode(std::io::Cursor::new(&bytes)).unwrap();
        assert_eq!(log, back);
        // Re-serialization is byte stable.
        let mut again = Vec::new();
        write_episode(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }
}
