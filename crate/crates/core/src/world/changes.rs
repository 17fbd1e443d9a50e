use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{BoxObject, WorldState};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// Simulation time in seconds.
    Time(f64),
    /// Fires once the named waypoint (or subtask) has been reached.
    Waypoint(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeAction {
    Remove { id: u32 },
    Insert { object: BoxObject },
    Relocate { id: u32, x: f64, y: f64, #[serde(default)] yaw: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptedChange {
    pub trigger: Trigger,
    pub action: ChangeAction,
}

impl ScriptedChange {
    pub fn at(t: f64, action: ChangeAction) -> Self {
        Self { trigger: Trigger::Time(t), action }
    }
}

fn apply_action(world: &mut WorldState, action: &ChangeAction) -> Result<()> {
    match action {
        ChangeAction::Remove { id } => {
            let before = world.boxes.len();
            world.boxes.retain(|b| b.id != *id);
            if world.boxes.len() == before {
                return Err(Error::Config(format!("remove: unknown box id {id}")));
            }
        }
        ChangeAction::Insert { object } => {
            if !object.is_valid() {
                return Err(Error::Config(format!("insert: invalid box {}", object.id)));
            }
            if world.boxes.iter().any(|b| b.id == object.id) {
                return Err(Error::Config(format!("insert: duplicate box id {}", object.id)));
            }
            world.boxes.push(object.clone());
        }
        ChangeAction::Relocate { id, x, y, yaw } => {
            let b = world
                .boxes
                .iter_mut()
                .find(|b| b.id == *id)
                .ok_or_else(|| Error::Config(format!("relocate: unknown box id {id}")))?;
            b.x = *x;
            b.y = *y;
            b.yaw = *yaw;
        }
    }
    Ok(())
}

/// Checks ordering and id references of a change list against the initial
/// world; dangling ids are configuration errors.
pub fn validate_script(initial: &WorldState, events: &[ScriptedChange]) -> Result<()> {
    let mut world = initial.clone();
    let mut last_time = f64::NEG_INFINITY;
    for (i, ev) in events.iter().enumerate() {
        if let Trigger::Time(t) = ev.trigger {
            if !t.is_finite() || t <= last_time {
                return Err(Error::Config(format!(
                    "change {i}: time triggers must be finite and strictly increasing"
                )));
            }
            last_time = t;
        }
        apply_action(&mut world, &ev.action).map_err(|e| Error::Config(format!("change {i}: {e}")))?;
    }
    Ok(())
}

/// Applies, in order, every event of the longest time-triggered prefix with
/// trigger `<= t`. A waypoint trigger stops the prefix.
pub fn apply_scripted_changes(world: &WorldState, events: &[ScriptedChange], t: f64) -> Result<WorldState> {
    let mut out = world.clone();
    for ev in events {
        match ev.trigger {
            Trigger::Time(te) if te <= t => apply_action(&mut out, &ev.action)?,
            _ => break,
        }
    }
    Ok(out)
}

/// Stateful cursor over a change list; each event fires exactly once.
#[derive(Clone, Debug, Default)]
pub struct ChangeScript {
    events: Vec<ScriptedChange>,
    cursor: usize,
}

impl ChangeScript {
    pub fn new(events: Vec<ScriptedChange>) -> Self {
        Self { events, cursor: 0 }
    }

    pub fn pending(&self) -> usize {
        self.events.len() - self.cursor
    }

    /// Fires all due events in order and returns them.
    pub fn advance(
        &mut self,
        world: &mut WorldState,
        t: f64,
        reached: &BTreeSet<String>,
    ) -> Result<Vec<ScriptedChange>> {
        let mut fired = Vec::new();
        while let Some(ev) = self.events.get(self.cursor) {
            let due = match &ev.trigger {
                Trigger::Time(te) => *te <= t,
                Trigger::Waypoint(name) => reached.contains(name),
            };
            if !due {
                break;
            }
            apply_action(world, &ev.action)?;
            fired.push(ev.clone());
            self.cursor += 1;
        }
        Ok(fired)
    }
}
