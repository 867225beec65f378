//! Scripted provider for offline, bit-reproducible runs.
//!
//! A scenario is an ordered list of `(purpose, response)` entries. Entries
//! with a `key` are matched against the request key (typically a record id)
//! and consumed in order per `(purpose, key)`; entries without one are
//! consumed in order per purpose. Keyed lookup makes responses independent of
//! request interleaving, so annotation can run concurrently against a mock.

use super::{CompletionRequest, Provider, ProviderError, Purpose, RawCompletion, TokenUsage};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Transient,
    Auth,
    Outage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub purpose: Purpose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default)]
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<FailureKind>,
}

impl ScenarioEntry {
    pub fn respond(purpose: Purpose, response: impl Into<String>) -> Self {
        Self {
            purpose,
            key: None,
            response: response.into(),
            fail: None,
        }
    }

    pub fn keyed(purpose: Purpose, key: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            purpose,
            key: Some(key.into()),
            response: response.into(),
            fail: None,
        }
    }

    pub fn failing(purpose: Purpose, key: Option<&str>, fail: FailureKind) -> Self {
        Self {
            purpose,
            key: key.map(str::to_string),
            response: String::new(),
            fail: Some(fail),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// When set, exhausted queues wrap around instead of failing.
    #[serde(default)]
    pub cycle: bool,
    pub entries: Vec<ScenarioEntry>,
}

impl Scenario {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cycle: false,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: ScenarioEntry) -> &mut Self {
        self.entries.push(entry);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path.as_ref())?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

type QueueKey = (Purpose, Option<String>);

struct Cursors {
    queues: HashMap<QueueKey, Vec<usize>>,
    positions: HashMap<QueueKey, usize>,
}

pub struct ScriptedMock {
    name: String,
    scenario: Scenario,
    cursors: Mutex<Cursors>,
}

impl ScriptedMock {
    pub fn new(name: impl Into<String>, scenario: Scenario) -> Self {
        let mut queues: HashMap<QueueKey, Vec<usize>> = HashMap::new();
        for (i, e) in scenario.entries.iter().enumerate() {
            queues.entry((e.purpose, e.key.clone())).or_default().push(i);
        }
        Self {
            name: name.into(),
            scenario,
            cursors: Mutex::new(Cursors {
                queues,
                positions: HashMap::new(),
            }),
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn next_entry(&self, purpose: Purpose, key: Option<&str>) -> Option<&ScenarioEntry> {
        let mut cursors = self.cursors.lock().expect("mock cursor poisoned");
        let keyed = key.map(|k| (purpose, Some(k.to_string())));
        let qk = match keyed {
            Some(k) if cursors.queues.contains_key(&k) => k,
            _ => (purpose, None),
        };
        let queue = cursors.queues.get(&qk)?;
        let len = queue.len();
        let mut pos = cursors.positions.get(&qk).copied().unwrap_or(0);
        if pos >= len {
            if !self.scenario.cycle || len == 0 {
                return None;
            }
            pos = 0;
        }
        let idx = queue[pos];
        cursors.positions.insert(qk, pos + 1);
        Some(&self.scenario.entries[idx])
    }
}

impl Provider for ScriptedMock {
    fn name(&self) -> &str {
        &self.name
    }

    fn model(&self) -> &str {
        "scripted"
    }

    fn send(&self, request: &CompletionRequest) -> Result<RawCompletion, ProviderError> {
        let entry = self.next_entry(request.purpose, request.key.as_deref()).ok_or_else(|| {
            ProviderError::ScenarioExhausted(match &request.key {
                Some(k) => format!("{} key {k:?} in scenario {:?}", request.purpose, self.scenario.name),
                None => format!("{} in scenario {:?}", request.purpose, self.scenario.name),
            })
        })?;
        match entry.fail {
            Some(FailureKind::Transient) => Err(ProviderError::Transient("scripted transient failure".into())),
            Some(FailureKind::Auth) => Err(ProviderError::Auth("scripted credential rejection".into())),
            Some(FailureKind::Outage) => Err(ProviderError::Fatal("scripted provider outage".into())),
            None => Ok(RawCompletion {
                text: entry.response.clone(),
                usage: TokenUsage {
                    prompt_tokens: request.prompt.split_whitespace().count() as u64,
                    completion_tokens: entry.response.split_whitespace().count() as u64,
                },
                latency_ms: 0,
                status: "ok".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(purpose: Purpose, key: Option<&str>) -> CompletionRequest {
        CompletionRequest {
            request_id: "x".into(),
            purpose,
            key: key.map(String::from),
            provider: "mock".into(),
            model: "scripted".into(),
            prompt: "p".into(),
            temperature: 0.0,
            max_output_tokens: 10,
        }
    }

    #[test]
    fn sequential_and_keyed_queues() {
        let mut sc = Scenario::new("s");
        sc.push(ScenarioEntry::respond(Purpose::GenerateTaxonomy, "first"))
            .push(ScenarioEntry::keyed(Purpose::Annotate, "r2", "Leisure"))
            .push(ScenarioEntry::respond(Purpose::GenerateTaxonomy, "second"))
            .push(ScenarioEntry::keyed(Purpose::Annotate, "r1", "Learning"));
        let mock = ScriptedMock::new("m", sc);
        assert_eq!(mock.send(&req(Purpose::Annotate, Some("r1"))).unwrap().text, "Learning");
        assert_eq!(mock.send(&req(Purpose::GenerateTaxonomy, None)).unwrap().text, "first");
        assert_eq!(mock.send(&req(Purpose::Annotate, Some("r2"))).unwrap().text, "Leisure");
        assert_eq!(mock.send(&req(Purpose::GenerateTaxonomy, Some("k"))).unwrap().text, "second");
        assert!(matches!(
            mock.send(&req(Purpose::GenerateTaxonomy, None)),
            Err(ProviderError::ScenarioExhausted(_))
        ));
        assert!(matches!(
            mock.send(&req(Purpose::Annotate, Some("r1"))),
            Err(ProviderError::ScenarioExhausted(_))
        ));
    }

    #[test]
    fn identical_across_fresh_instances() {
        let mut sc = Scenario::new("tableX-taxonomy");
        sc.push(ScenarioEntry::respond(Purpose::GenerateTaxonomy, "{\"categories\": []}"));
        let a = ScriptedMock::new("m", sc.clone()).send(&req(Purpose::GenerateTaxonomy, None)).unwrap();
        let b = ScriptedMock::new("m", sc).send(&req(Purpose::GenerateTaxonomy, None)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cycling_and_failures() {
        let mut sc = Scenario::new("c");
        sc.cycle = true;
        sc.push(ScenarioEntry::failing(Purpose::Annotate, None, FailureKind::Transient))
            .push(ScenarioEntry::respond(Purpose::Annotate, "Learning"));
        let mock = ScriptedMock::new("m", sc.clone());
        for _ in 0..3 {
            assert!(matches!(mock.send(&req(Purpose::Annotate, None)), Err(ProviderError::Transient(_))));
            assert_eq!(mock.send(&req(Purpose::Annotate, None)).unwrap().text, "Learning");
        }
        let back: Scenario = serde_json::from_str(&sc.to_json()).unwrap();
        assert_eq!(back, sc);
    }
}
