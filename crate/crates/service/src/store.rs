//! In-process session store with an append-only journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::api::{CreateSession, Feedback};
use crate::error::{ApiError, ApiResult};
use crate::session::{Limits, Session};

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEvent {
    pub session: String,
    pub seq: u64,
    pub event: String,
    pub payload: Value,
}

#[derive(Debug)]
struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    fn append(&self, event: &JournalEvent) -> io::Result<()> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(&line)?;
        f.flush()
    }
}

#[derive(Debug)]
struct Entry {
    session: Session,
    /// Sequence number of the next journal event.
    next_seq: u64,
}

#[derive(Debug)]
pub struct Store {
    limits: Limits,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
    journal: Option<Journal>,
}

fn corrupt(line: usize, msg: impl std::fmt::Display) -> io::Error {
    io::Error::new(
        io::ErrorKind::InvalidData,
        format!("journal line {line}: {msg}"),
    )
}

impl Store {
    pub fn in_memory(limits: Limits) -> Self {
        Store {
            limits,
            sessions: RwLock::new(HashMap::new()),
            journal: None,
        }
    }

    /// Opens a journaled store, replaying any events already in `path`.
    pub fn open(limits: Limits, path: &Path) -> io::Result<Self> {
        let mut sessions: HashMap<String, Arc<Mutex<Entry>>> = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let ev: JournalEvent =
                    serde_json::from_str(&line).map_err(|e| corrupt(i + 1, e))?;
                replay(&mut sessions, &limits, ev).map_err(|e| corrupt(i + 1, e))?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Store {
            limits,
            sessions: RwLock::new(sessions),
            journal: Some(Journal {
                path: path.to_path_buf(),
                file: Mutex::new(file),
            }),
        })
    }

    pub fn journal_path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.path.as_path())
    }

    pub fn limits(&self) -> Limits {
        self.limits
    }

    pub fn len(&self) -> usize {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn log(&self, entry: &mut Entry, event: &str, payload: Value) -> ApiResult<()> {
        if let Some(j) = &self.journal {
            j.append(&JournalEvent {
                session: entry.session.id().to_string(),
                seq: entry.next_seq,
                event: event.into(),
                payload,
            })?;
        }
        entry.next_seq += 1;
        Ok(())
    }

    pub fn create(&self, request: CreateSession) -> ApiResult<crate::api::CreateResponse> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let payload = serde_json::to_value(&request).expect("request serializes");
        let session = Session::create(id.clone(), request, &self.limits)?;
        let mut entry = Entry {
            session,
            next_seq: 0,
        };
        self.log(&mut entry, "created", payload)?;
        let out = entry.session.created();
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, Arc::new(Mutex::new(entry)));
        Ok(out)
    }

    fn handle(&self, id: &str) -> ApiResult<Arc<Mutex<Entry>>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    /// Runs `f` with exclusive access to one session.
    pub fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&Session) -> ApiResult<T>,
    ) -> ApiResult<T> {
        let h = self.handle(id)?;
        let entry = h.lock().unwrap_or_else(|e| e.into_inner());
        f(&entry.session)
    }

    pub fn feedback(&self, id: &str, fb: Feedback) -> ApiResult<crate::api::FeedbackResponse> {
        let h = self.handle(id)?;
        let mut entry = h.lock().unwrap_or_else(|e| e.into_inner());
        entry.session.submit(fb.winner, &fb.pair_token)?;
        let payload = serde_json::to_value(&fb).expect("feedback serializes");
        self.log(&mut entry, "feedback", payload)?;
        entry.session.feedback_response()
    }
}

fn replay(
    sessions: &mut HashMap<String, Arc<Mutex<Entry>>>,
    limits: &Limits,
    ev: JournalEvent,
) -> Result<(), String> {
    match ev.event.as_str() {
        "created" => {
            if ev.seq != 0 || sessions.contains_key(&ev.session) {
                return Err(format!("unexpected create for `{}`", ev.session));
            }
            let req: CreateSession =
                serde_json::from_value(ev.payload).map_err(|e| e.to_string())?;
            let session =
                Session::create(ev.session.clone(), req, limits).map_err(|e| e.to_string())?;
            sessions.insert(
                ev.session,
                Arc::new(Mutex::new(Entry {
                    session,
                    next_seq: 1,
                })),
            );
        }
        "feedback" => {
            let h = sessions
                .get(&ev.session)
                .ok_or_else(|| format!("feedback for unknown session `{}`", ev.session))?;
            let mut entry = h.lock().unwrap_or_else(|e| e.into_inner());
            if ev.seq != entry.next_seq {
                return Err(format!("expected seq {}, found {}", entry.next_seq, ev.seq));
            }
            let fb: Feedback = serde_json::from_value(ev.payload).map_err(|e| e.to_string())?;
            entry
                .session
                .submit(fb.winner, &fb.pair_token)
                .map_err(|e| e.to_string())?;
            entry.next_seq += 1;
        }
        other => return Err(format!("unknown event `{other}`")),
    }
    Ok(())
}
