use std::sync::Arc;

use tokio::sync::watch;
use tokio::task::JoinHandle;

use super::{JobKind, Orchestrator};

/// Transcription and generation workers sharing the orchestrator's queues.
pub struct WorkerPool {
    stop: watch::Sender<bool>,
    handles: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub(super) fn spawn(orchestrator: &Arc<Orchestrator>) -> Self {
        let (stop, _) = watch::channel(false);
        let mut handles = Vec::new();
        let pools = [
            (JobKind::Transcription, orchestrator.config.transcription_workers),
            (JobKind::Generation, orchestrator.config.generation_workers),
        ];
        for (kind, count) in pools {
            for _ in 0..count.max(1) {
                let orch = Arc::clone(orchestrator);
                let stop_rx = stop.subscribe();
                handles.push(tokio::spawn(work(orch, kind, stop_rx)));
            }
        }
        Self { stop, handles }
    }

    pub fn len(&self) -> usize {
        self.handles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.handles.is_empty()
    }

    /// Stops taking new jobs and waits for running ones to finish.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        for h in self.handles {
            if let Err(e) = h.await {
                tracing::error!(error = %e, "worker panicked");
            }
        }
    }
}

async fn work(orch: Arc<Orchestrator>, kind: JobKind, mut stop: watch::Receiver<bool>) {
    let queue = match kind {
        JobKind::Transcription => Arc::clone(&orch.transcription.rx),
        JobKind::Generation => Arc::clone(&orch.generation.rx),
    };
    loop {
        if *stop.borrow() {
            break;
        }
        let next = {
            let mut rx = queue.lock().await;
            tokio::select! {
                biased;
                _ = stop.changed() => None,
                id = rx.recv() => id,
            }
        };
        match next {
            Some(id) => orch.run_job(kind, id).await,
            None => break,
        }
    }
}
