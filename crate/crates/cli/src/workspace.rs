//! Store-backed lookups shared by the subcommands and the HTTP API.

use anyhow::{bail, Context as _, Result};
use std::path::Path;
use std::sync::Arc;
use taxoscope_core::annotation::AnnotationRun;
use taxoscope_core::clock::{Clock, FixedClock, SystemClock};
use taxoscope_core::context::Context;
use taxoscope_core::dataset::{Dataset, SplitRole};
use taxoscope_core::generation::{run_key, GenerationRun};
use taxoscope_core::llm::{Gateway, ProviderConfig};
use taxoscope_core::store::{ArtifactKind, RunStore};
use taxoscope_core::taxonomy::{AliasTable, Taxonomy, TaxonomyRef};

/// When set, every timestamp is this value (an empty value means the epoch).
pub const FIXED_CLOCK_ENV: &str = "TAXOSCOPE_FIXED_CLOCK";

pub fn dataset_key(name: &str) -> String {
    format!("dataset/{name}")
}

#[derive(Clone)]
pub struct Workspace {
    pub store: Arc<RunStore>,
    pub clock: Arc<dyn Clock>,
}

impl Workspace {
    pub fn open(root: &Path) -> Result<Self> {
        let store = RunStore::open(root).with_context(|| format!("opening run store at {}", root.display()))?;
        let clock: Arc<dyn Clock> = match std::env::var(FIXED_CLOCK_ENV) {
            Ok(v) if v.is_empty() => Arc::new(FixedClock::epoch()),
            Ok(v) => Arc::new(FixedClock(v)),
            Err(_) => Arc::new(SystemClock),
        };
        Ok(Self {
            store: Arc::new(store),
            clock,
        })
    }

    pub fn ctx(&self) -> Context<'_> {
        Context::new(&self.store, self.clock.as_ref())
    }

    pub fn dataset(&self, name: &str) -> Result<Dataset> {
        self.store
            .get(&dataset_key(name))
            .with_context(|| format!("loading dataset {name:?}"))
    }

    pub fn put_dataset(&self, name: &str, dataset: &Dataset) -> Result<String> {
        let key = dataset_key(name);
        self.store
            .put(ArtifactKind::Dataset, &key, dataset)
            .with_context(|| format!("storing dataset {name:?}"))?;
        Ok(key)
    }

    pub fn taxonomy(&self, r: &TaxonomyRef) -> Result<Taxonomy> {
        self.store
            .get(&r.store_key())
            .with_context(|| format!("loading taxonomy {r}"))
    }

    pub fn annotation_run(&self, id: &str) -> Result<AnnotationRun> {
        AnnotationRun::load(&self.store, id).with_context(|| format!("loading annotation run {id:?}"))
    }

    pub fn annotation_runs(&self, ids: &[String]) -> Result<Vec<AnnotationRun>> {
        ids.iter().map(|id| self.annotation_run(id)).collect()
    }

    pub fn generation_run(&self, id: &str) -> Result<GenerationRun> {
        self.store
            .get(&run_key(id))
            .with_context(|| format!("loading generation run {id:?}"))
    }

    /// Every stored generation run, in manifest order.
    pub fn all_generation_runs(&self) -> Result<Vec<GenerationRun>> {
        self.store
            .list(ArtifactKind::GenerationRun)
            .into_iter()
            .map(|e| self.store.get(&e.key).map_err(Into::into))
            .collect()
    }

    pub fn aliases(&self, key: Option<&str>) -> Result<AliasTable> {
        match key {
            Some(k) => self.store.get(k).with_context(|| format!("loading alias table {k:?}")),
            None => Ok(AliasTable::new()),
        }
    }

    pub fn gateway(&self, provider: &Path) -> Result<Gateway> {
        let text = std::fs::read_to_string(provider)
            .with_context(|| format!("reading provider config {}", provider.display()))?;
        let mut config = ProviderConfig::from_json(&text)?;
        if let taxoscope_core::llm::ProviderKind::ScriptedMock { scenario } = &mut config.kind {
            if scenario.is_relative() {
                if let Some(dir) = provider.parent() {
                    *scenario = dir.join(&*scenario);
                }
            }
        }
        Ok(config.gateway(Some(self.store.clone()))?)
    }
}

/// Record ids of `train`, `test` or `all`.
pub fn slice_ids(dataset: &Dataset, slice: &str) -> Result<Vec<String>> {
    match slice {
        "all" => Ok(dataset.all_ids()),
        other => {
            let role: SplitRole = other.parse().map_err(anyhow::Error::msg)?;
            Ok(dataset.ids_in(role)?)
        }
    }
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(String::from).collect()
}

pub fn require_at_least(ids: &[String], n: usize, flag: &str) -> Result<()> {
    if ids.len() < n {
        bail!("{flag} needs at least {n} comma-separated run ids, got {}", ids.len());
    }
    Ok(())
}
