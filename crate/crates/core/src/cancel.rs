//! Request cancellation with safe-point checks.
//!
//! Every provider call is bracketed by [`CancelToken::checkpoint`] calls, and
//! publication is preceded by one. A [`FaultPlan`] turns the n-th checkpoint of
//! a request into a cancellation or an injected fault, which is how rollback
//! is exercised at every safe-point.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultAction {
    Cancel,
    Fault,
}

/// Trigger `action` at the checkpoint with zero-based index `at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    pub at: usize,
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Interrupt {
    #[error("cancelled")]
    Cancelled,
    #[error("injected fault at safe-point {index} ({label})")]
    Fault { index: usize, label: String },
}

#[derive(Debug, Default)]
struct Inner {
    cancelled: AtomicBool,
    checkpoints: AtomicUsize,
    plan: Mutex<Option<FaultPlan>>,
}

#[derive(Debug, Clone, Default)]
pub struct CancelToken {
    inner: Arc<Inner>,
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_plan(plan: Option<FaultPlan>) -> Self {
        let token = Self::new();
        *token.inner.plan.lock().unwrap() = plan;
        token
    }

    /// Sets the flag. Idempotent.
    pub fn cancel(&self) {
        self.inner.cancelled.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.inner.cancelled.load(Ordering::SeqCst)
    }

    /// Number of safe-points passed so far.
    pub fn checkpoints(&self) -> usize {
        self.inner.checkpoints.load(Ordering::SeqCst)
    }

    /// A safe-point. Fails if the request was cancelled or the fault plan
    /// targets this checkpoint.
    pub fn checkpoint(&self, label: &str) -> Result<(), Interrupt> {
        let index = self.inner.checkpoints.fetch_add(1, Ordering::SeqCst);
        let planned = {
            let plan = self.inner.plan.lock().unwrap();
            plan.filter(|p| p.at == index).map(|p| p.action)
        };
        match planned {
            Some(FaultAction::Cancel) => self.cancel(),
            Some(FaultAction::Fault) => {
                return Err(Interrupt::Fault {
                    index,
                    label: label.to_string(),
                })
            }
            None => {}
        }
        if self.is_cancelled() {
            tracing::debug!(index, label, "cancellation observed");
            return Err(Interrupt::Cancelled);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_count_and_observe_cancel() {
        let t = CancelToken::new();
        assert!(t.checkpoint("a").is_ok());
        assert!(t.checkpoint("b").is_ok());
        assert_eq!(t.checkpoints(), 2);
        let other = t.clone();
        other.cancel();
        other.cancel();
        assert_eq!(t.checkpoint("c"), Err(Interrupt::Cancelled));
    }

    #[test]
    fn plan_fires_at_exact_index() {
        let t = CancelToken::with_plan(Some(FaultPlan {
            at: 2,
            action: FaultAction::Fault,
        }));
        assert!(t.checkpoint("0").is_ok());
        assert!(t.checkpoint("1").is_ok());
        assert!(matches!(t.checkpoint("2"), Err(Interrupt::Fault { index: 2, .. })));
        assert!(t.checkpoint("3").is_ok());

        let c = CancelToken::with_plan(Some(FaultPlan {
            at: 0,
            action: FaultAction::Cancel,
        }));
        assert_eq!(c.checkpoint("0"), Err(Interrupt::Cancelled));
        assert!(c.is_cancelled());
    }
}
