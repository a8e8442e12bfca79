// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::SessionId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Handshaking,
    Live,
    Draining,
    Closed,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("illegal session transition {from:?} -> {to:?}")]
pub struct TransitionError {
    pub from: SessionState,
    pub to: SessionState,
}

/// Monotone connection lifecycle. Each state advances to the next one; a
/// connection rejected during the handshake goes straight to Draining.
#[derive(Debug)]
pub struct SessionLifecycle {
    state: SessionState,
    history: Vec<SessionState>,
}

impl Default for SessionLifecycle {
    fn default() -> Self {
        Self {
            state: SessionState::Handshaking,
            history: vec![SessionState::Handshaking],
        }
    }
}

impl SessionLifecycle {
    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn history(&self) -> &[SessionState] {
        &self.history
    }

    pub fn advance(&mut self, to: SessionState) -> Result<(), TransitionError> {
        use SessionState::*;
        let ok = matches!(
            (self.state, to),
            (Handshaking, Live) | (Handshaking, Draining) | (Live, Draining) | (Draining, Closed)
        );
        if !ok {
            return Err(TransitionError { from: self.state, to });
        }
        self.state = to;
        self.history.push(to);
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("session {0} already has a live connection")]
pub struct DuplicateSession(pub SessionId);

/// Live queue depths a session publishes for `/healthz`.
pub trait DepthProbe: Send + Sync {
    fn depths(&self) -> BTreeMap<String, usize>;
}

#[derive(Default)]
struct Entries {
    live: BTreeMap<SessionId, Option<Arc<dyn DepthProbe>>>,
}

/// Cross-session registry: at most one live connection per session id.
#[derive(Clone, Default)]
pub struct SessionRegistry {
    inner: Arc<Mutex<Entries>>,
}

impl std::fmt::Debug for SessionRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionRegistry").field("live", &self.len()).finish()
    }
}

/// Holds a registry slot; the slot is released on drop.
#[derive(Debug)]
pub struct Registration {
    registry: SessionRegistry,
    id: SessionId,
}

impl Registration {
    pub fn id(&self) -> &SessionId {
        &self.id
    }

    pub fn set_probe(&self, probe: Arc<dyn DepthProbe>) {
        let mut e = self.registry.inner.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(slot) = e.live.get_mut(&self.id) {
            *slot = Some(probe);
        }
    }
}

impl Drop for Registration {
    fn drop(&mut self) {
        let mut e = self.registry.inner.lock().unwrap_or_else(|e| e.into_inner());
        e.live.remove(&self.id);
    }
}

impl SessionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, id: SessionId) -> Result<Registration, DuplicateSession> {
        let mut e = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if e.live.contains_key(&id) {
            return Err(DuplicateSession(id));
        }
        e.live.insert(id.clone(), None);
        Ok(Registration {
            registry: self.clone(),
            id,
        })
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Queue depths of every live session, keyed by session id.
    pub fn depths(&self) -> BTreeMap<String, BTreeMap<String, usize>> {
        let probes: Vec<(SessionId, Option<Arc<dyn DepthProbe>>)> = {
            let e = self.inner.lock().unwrap_or_else(|e| e.into_inner());
            e.live.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
        };
        probes
            .into_iter()
            .map(|(id, p)| (id.to_string(), p.map(|p| p.depths()).unwrap_or_default()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SessionState::*;

    #[test]
    fn lifecycle_is_monotone() {
        let mut s = SessionLifecycle::default();
        assert!(s.advance(Closed).is_err());
        s.advance(Live).unwrap();
        assert!(s.advance(Live).is_err());
        assert!(s.advance(Handshaking).is_err());
        s.advance(Draining).unwrap();
        s.advance(Closed).unwrap();
        assert_eq!(s.history(), &[Handshaking, Live, Draining, Closed]);
        assert!(s.advance(Draining).is_err());
    }

    #[test]
    fn duplicate_ids_rejected_until_released() {
        let reg = SessionRegistry::new();
        let a = reg.register(SessionId::new("x")).unwrap();
        assert_eq!(reg.register(SessionId::new("x")).unwrap_err(), DuplicateSession(SessionId::new("x")));
        let _b = reg.register(SessionId::new("y")).unwrap();
        assert_eq!(reg.len(), 2);
        drop(a);
        assert!(reg.register(SessionId::new("x")).is_ok());
    }

    #[test]
    fn concurrent_registration_admits_exactly_one() {
        let reg = SessionRegistry::new();
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let r = reg.clone();
                std::thread::spawn(move || r.register(SessionId::new("same")).map(std::mem::forget).is_ok())
            })
            .collect();
        let wins = handles.into_iter().map(|h| h.join().unwrap()).filter(|&w| w).count();
        assert_eq!(wins, 1);
    }
}
