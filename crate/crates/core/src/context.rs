use crate::clock::Clock;
use crate::store::RunStore;

/// Shared handles threaded through every pipeline step.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub store: &'a RunStore,
    pub clock: &'a dyn Clock,
}

impl<'a> Context<'a> {
    pub fn new(store: &'a RunStore, clock: &'a dyn Clock) -> Self {
        Self { store, clock }
    }
}
