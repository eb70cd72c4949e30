use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use prefalign::pairgen::{PreferencePair, DEFAULT_GAP_THRESHOLD};
use prefalign::pipeline::dataset_io::pairs_to_jsonl;
use prefalign::toymodels::{render_reference, ChannelSpec, SpeechPayload, SpeechSample, ToyDims, Word};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{AnnoError, Result};
use crate::journal::{Entry, Journal};
use crate::model::{AnnotationRecord, AnnotationTask, GroupKey, Judgment, PairSide, TaskKind};
use crate::tasks::create_task_set;

/// A served task returns to the pool when unanswered for this long.
pub const LEASE_MS: u64 = 15 * 60 * 1000;
/// Appends between automatic compactions.
pub const DEFAULT_COMPACT_EVERY: u64 = 10_000;

/// Milliseconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

/// The immutable material a service annotates.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub pairs: Vec<PreferencePair>,
    pub tasks: Vec<AnnotationTask>,
    pub replication: u32,
    /// WER gap at which the automatic preference of a pair counts as defined.
    pub gap_threshold: f64,
    pub channel: ChannelSpec,
    fingerprint: String,
}

impl Catalog {
    pub fn new(
        pairs: Vec<PreferencePair>,
        kinds: &[TaskKind],
        replication: u32,
        seed: u64,
        channel: ChannelSpec,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(AnnoError::Contract("at least one task kind is needed".into()));
        }
        let dims = *channel.dims();
        for (i, p) in pairs.iter().enumerate() {
            p.prompt
                .validate(&dims)
                .map_err(|e| AnnoError::Contract(format!("pair {i}: {e}")))?;
        }
        let tasks = create_task_set(&pairs, kinds, replication, seed)?;
        let mut h = Sha256::new();
        h.update(pairs_to_jsonl(&pairs).as_bytes());
        for k in kinds {
            h.update(k.as_str().as_bytes());
        }
        h.update(replication.to_le_bytes());
        h.update(seed.to_le_bytes());
        let fingerprint = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            pairs,
            tasks,
            replication,
            gap_threshold: DEFAULT_GAP_THRESHOLD,
            channel,
            fingerprint,
        })
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn task(&self, id: u64) -> Result<&AnnotationTask> {
        self.tasks.get(id as usize).ok_or(AnnoError::UnknownTask(id))
    }

    /// Wire form of a task: question, option set, prompt text and sample
    /// payloads in the order shown to the rater.
    pub fn task_view(&self, task: &AnnotationTask, lease_expires: u64) -> Value {
        let pair = &self.pairs[task.pair];
        let dims = self.channel.dims();
        let options: Vec<Value> = task
            .kind
            .options()
            .iter()
            .map(|j| json!({"value": j.as_str(), "label": j.label(task.kind)}))
            .collect();
        let mut samples = serde_json::Map::new();
        match task.side {
            Some(side) => {
                let s = if side == PairSide::Winner { &pair.winner } else { &pair.loser };
                samples.insert("sample".into(), payload_json(s));
            }
            None => {
                let (a, b) = if task.swapped {
                    (&pair.loser, &pair.winner)
                } else {
                    (&pair.winner, &pair.loser)
                };
                samples.insert("a".into(), payload_json(a));
                samples.insert("b".into(), payload_json(b));
            }
        }
        if task.kind == TaskKind::SimilarityAb {
            if let Ok(r) = render_reference(&pair.prompt.text, pair.prompt.speaker, &self.channel, pair.winner.kind()) {
                samples.insert("reference".into(), payload_json(&r));
            }
        }
        json!({
            "task_id": task.id,
            "kind": task.kind.as_str(),
            "question": task.kind.question(),
            "options": options,
            "prompt": {
                "text": pair.prompt.text,
                "display": display_text(&pair.prompt.text, dims),
                "speaker": pair.prompt.speaker,
            },
            "samples": samples,
            "lease_expires": lease_expires,
        })
    }
}

fn payload_json(s: &SpeechSample) -> Value {
    match &s.payload {
        SpeechPayload::Tokens(t) => json!({"kind": "discrete", "tokens": t}),
        SpeechPayload::Frames(f) => json!({"kind": "continuous", "frames": f}),
    }
}

/// `w3 w17 , w4`: word ids with the boundary symbol shown as a comma.
pub fn display_text(text: &[Word], dims: &ToyDims) -> String {
    text.iter()
        .map(|&w| if w == dims.boundary() { ",".to_string() } else { format!("w{w}") })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Body of a submit request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitBody {
    pub task_id: u64,
    pub session_id: String,
    pub judgment: String,
}

/// Decodes a submit body. Unknown judgment strings are reported as illegal
/// judgments rather than malformed bodies.
pub fn parse_submit_body(bytes: &[u8]) -> Result<SubmitBody> {
    serde_json::from_slice(bytes).map_err(|e| AnnoError::BadRequest(e.to_string()))
}

/// A state other readers see without taking the writer lock.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub records: Vec<AnnotationRecord>,
    pub sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupStatus {
    pub kind: TaskKind,
    pub pair: usize,
    pub side: Option<PairSide>,
    pub answers: u32,
    pub quota: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicationStatus {
    pub tasks: usize,
    pub answered: usize,
    pub leased: usize,
    /// Groups whose answers have not reached the replication quota.
    pub under_replicated: Vec<GroupStatus>,
}

#[derive(Debug, Default)]
struct State {
    sessions: Vec<(String, u64)>,
    known: HashSet<String>,
    records: Vec<AnnotationRecord>,
    answered: HashSet<u64>,
    judged: HashSet<(String, GroupKey)>,
    group_answers: HashMap<GroupKey, u32>,
    /// task → (session, expiry)
    leases: HashMap<u64, (String, u64)>,
    /// session → task it holds
    held: HashMap<String, u64>,
}

impl State {
    fn session(&self, id: &str) -> Result<()> {
        if self.known.contains(id) {
            Ok(())
        } else {
            Err(AnnoError::UnknownSession(id.to_string()))
        }
    }

    fn check(&self, catalog: &Catalog, entry: &Entry) -> Result<()> {
        match entry {
            Entry::Open { .. } => Err(AnnoError::Contract("open entry after the first line".into())),
            Entry::Session { id, .. } => {
                if self.known.contains(id) {
                    Err(AnnoError::Contract(format!("session {id} registered twice")))
                } else {
                    Ok(())
                }
            }
            Entry::Lease { task, session, .. } => {
                self.session(session)?;
                catalog.task(*task)?;
                if self.answered.contains(task) {
                    return Err(AnnoError::QuotaReached(*task));
                }
                Ok(())
            }
            Entry::Record(r) => {
                self.session(&r.session)?;
                let task = catalog.task(r.task)?;
                if !task.kind.allows(r.judgment) {
                    return Err(AnnoError::IllegalJudgment {
                        kind: task.kind.as_str(),
                        judgment: r.judgment.as_str().into(),
                    });
                }
                if self.judged.contains(&(r.session.clone(), task.group())) {
                    return Err(AnnoError::Duplicate {
                        task: r.task,
                        session: r.session.clone(),
                    });
                }
                if self.answered.contains(&r.task) {
                    return Err(AnnoError::QuotaReached(r.task));
                }
                Ok(())
            }
        }
    }

    fn commit(&mut self, catalog: &Catalog, entry: Entry) {
        match entry {
            Entry::Open { .. } => {}
            Entry::Session { id, ts } => {
                self.known.insert(id.clone());
                self.sessions.push((id, ts));
            }
            Entry::Lease {
                task,
                session,
                expires,
            } => {
                // A session holds one lease; taking a new one releases the old.
                if let Some(prev) = self.held.remove(&session) {
                    if self.leases.get(&prev).is_some_and(|(s, _)| *s == session) {
                        self.leases.remove(&prev);
                    }
                }
                if let Some((other, _)) = self.leases.remove(&task) {
                    if self.held.get(&other) == Some(&task) {
                        self.held.remove(&other);
                    }
                }
                self.held.insert(session.clone(), task);
                self.leases.insert(task, (session, expires));
            }
            Entry::Record(r) => {
                let group = catalog.tasks[r.task as usize].group();
                self.answered.insert(r.task);
                self.judged.insert((r.session.clone(), group));
                *self.group_answers.entry(group).or_default() += 1;
                if let Some((holder, _)) = self.leases.remove(&r.task) {
                    if self.held.get(&holder) == Some(&r.task) {
                        self.held.remove(&holder);
                    }
                }
                if self.held.get(&r.session) == Some(&r.task) {
                    self.held.remove(&r.session);
                }
                self.records.push(r);
            }
        }
    }

    fn lease_active(&self, task: u64, now: u64) -> Option<&str> {
        self.leases
            .get(&task)
            .filter(|(_, exp)| *exp > now)
            .map(|(s, _)| s.as_str())
    }

    /// Entries that reproduce this state: sessions, live leases, records.
    fn compacted(&self, catalog: &Catalog, now: u64) -> Vec<Entry> {
        let mut out = vec![Entry::Open {
            fingerprint: catalog.fingerprint.clone(),
            tasks: catalog.tasks.len() as u64,
        }];
        out.extend(self.sessions.iter().map(|(id, ts)| Entry::Session { id: id.clone(), ts: *ts }));
        let mut leases: Vec<_> = self
            .leases
            .iter()
            .filter(|(t, (_, exp))| *exp > now && !self.answered.contains(t))
            .map(|(&task, (session, expires))| Entry::Lease {
                task,
                session: session.clone(),
                expires: *expires,
            })
            .collect();
        leases.sort_by_key(|e| match e {
            Entry::Lease { task, .. } => *task,
            _ => 0,
        });
        out.extend(leases);
        out.extend(self.records.iter().cloned().map(Entry::Record));
        out
    }
}

struct Writer {
    journal: Journal,
    state: State,
    appends: u64,
}

/// Annotation store: a single writer serializes every mutation and its
/// journal append; readers take the latest published [`Snapshot`].
pub struct AnnoService {
    catalog: Arc<Catalog>,
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Snapshot>>,
    clock: Clock,
    compact_every: u64,
}

impl AnnoService {
    /// Opens (or starts) the journal at `path` and replays it.
    pub fn open(catalog: Catalog, path: &Path, clock: Clock) -> Result<Self> {
        Self::open_with(catalog, path, clock, DEFAULT_COMPACT_EVERY)
    }

    pub fn open_with(catalog: Catalog, path: &Path, clock: Clock, compact_every: u64) -> Result<Self> {
        let (mut journal, entries) = Journal::open(path)?;
        let mut state = State::default();
        let mut iter = entries.into_iter().enumerate();
        match iter.next() {
            None => journal.append(&Entry::Open {
                fingerprint: catalog.fingerprint.clone(),
                tasks: catalog.tasks.len() as u64,
            })?,
            Some((_, Entry::Open { fingerprint, tasks })) => {
                if fingerprint != catalog.fingerprint || tasks != catalog.tasks.len() as u64 {
                    return Err(AnnoError::Contract(format!(
                        "{} belongs to a different task set",
                        path.display()
                    )));
                }
            }
            Some(_) => {
                return Err(AnnoError::Journal {
                    line: 1,
                    message: "journal does not start with an open entry".into(),
                })
            }
        }
        for (i, e) in iter {
            state.check(&catalog, &e).map_err(|err| AnnoError::Journal {
                line: i + 1,
                message: err.to_string(),
            })?;
            state.commit(&catalog, e);
        }
        let snapshot = Snapshot {
            records: state.records.clone(),
            sessions: state.sessions.len(),
        };
        Ok(Self {
            catalog: Arc::new(catalog),
            writer: Mutex::new(Writer {
                journal,
                state,
                appends: 0,
            }),
            snapshot: RwLock::new(Arc::new(snapshot)),
            clock,
            compact_every: compact_every.max(1),
        })
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn writer(&self) -> std::sync::MutexGuard<'_, Writer> {
        // A panic while holding the lock leaves the state consistent with the
        // journal: entries are checked before they are written and committed
        // after.
        self.writer.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn apply(&self, w: &mut Writer, entry: Entry) -> Result<()> {
        w.state.check(&self.catalog, &entry)?;
        w.journal.append(&entry)?;
        let is_record = matches!(entry, Entry::Record(_));
        w.state.commit(&self.catalog, entry);
        w.appends += 1;
        if is_record {
            let snap = Snapshot {
                records: w.state.records.clone(),
                sessions: w.state.sessions.len(),
            };
            *self.snapshot.write().expect("snapshot lock") = Arc::new(snap);
        }
        if w.appends >= self.compact_every {
            let entries = w.state.compacted(&self.catalog, (self.clock)());
            w.journal.rewrite(&entries)?;
            w.appends = 0;
        }
        Ok(())
    }

    pub fn new_session(&self) -> Result<String> {
        let id = format!("{:032x}", rand::random::<u128>());
        self.register_session(&id)?;
        Ok(id)
    }

    /// Registers a caller-chosen session id.
    pub fn register_session(&self, id: &str) -> Result<()> {
        let mut w = self.writer();
        let ts = (self.clock)();
        self.apply(&mut w, Entry::Session { id: id.to_string(), ts })?;
        let sessions = w.state.sessions.len();
        let mut snap = self.snapshot.write().expect("snapshot lock");
        *snap = Arc::new(Snapshot {
            records: snap.records.clone(),
            sessions,
        });
        Ok(())
    }

    /// Leases an unanswered task to `session`: the task whose group has the
    /// fewest answers, lowest id first. A session holding a live lease gets
    /// the same task back. Returns the task and its lease expiry.
    pub fn next_task(&self, session: &str, kind: Option<TaskKind>) -> Result<Option<(AnnotationTask, u64)>> {
        let mut w = self.writer();
        w.state.session(session)?;
        let now = (self.clock)();
        if let Some(&t) = w.state.held.get(session) {
            let task = &self.catalog.tasks[t as usize];
            if w.state.lease_active(t, now) == Some(session)
                && !w.state.answered.contains(&t)
                && kind.is_none_or(|k| k == task.kind)
            {
                let expires = w.state.leases[&t].1;
                return Ok(Some((task.clone(), expires)));
            }
        }
        let st = &w.state;
        let pick = self
            .catalog
            .tasks
            .iter()
            .filter(|t| kind.is_none_or(|k| k == t.kind))
            .filter(|t| !st.answered.contains(&t.id))
            .filter(|t| st.lease_active(t.id, now).is_none_or(|s| s == session))
            .filter(|t| !st.judged.contains(&(session.to_string(), t.group())))
            .min_by_key(|t| (st.group_answers.get(&t.group()).copied().unwrap_or(0), t.id));
        let Some(task) = pick.cloned() else {
            return Ok(None);
        };
        let expires = now + LEASE_MS;
        self.apply(
            &mut w,
            Entry::Lease {
                task: task.id,
                session: session.to_string(),
                expires,
            },
        )?;
        Ok(Some((task, expires)))
    }

    /// Persists a judgment. The record is on disk before this returns.
    pub fn submit(&self, body: &SubmitBody) -> Result<AnnotationRecord> {
        let task = self.catalog.task(body.task_id)?;
        let judgment = Judgment::parse(&body.judgment)
            .filter(|&j| task.kind.allows(j))
            .ok_or_else(|| AnnoError::IllegalJudgment {
                kind: task.kind.as_str(),
                judgment: body.judgment.clone(),
            })?;
        let mut w = self.writer();
        let record = AnnotationRecord {
            task: body.task_id,
            session: body.session_id.clone(),
            judgment,
            ts: (self.clock)(),
        };
        self.apply(&mut w, Entry::Record(record.clone()))?;
        Ok(record)
    }

    pub fn compact(&self) -> Result<()> {
        let mut w = self.writer();
        let entries = w.state.compacted(&self.catalog, (self.clock)());
        w.journal.rewrite(&entries)?;
        w.appends = 0;
        Ok(())
    }

    /// The journal as stored on disk.
    pub fn export(&self) -> Result<String> {
        let w = self.writer();
        w.journal.read_all()
    }

    pub fn replication_status(&self) -> ReplicationStatus {
        let w = self.writer();
        let now = (self.clock)();
        let st = &w.state;
        let mut groups: Vec<GroupKey> = self.catalog.tasks.iter().map(|t| t.group()).collect();
        groups.sort();
        groups.dedup();
        let under_replicated = groups
            .into_iter()
            .filter_map(|g| {
                let answers = st.group_answers.get(&g).copied().unwrap_or(0);
                (answers < self.catalog.replication).then_some(GroupStatus {
                    kind: g.kind,
                    pair: g.pair,
                    side: g.side,
                    answers,
                    quota: self.catalog.replication,
                })
            })
            .collect();
        ReplicationStatus {
            tasks: self.catalog.tasks.len(),
            answered: st.answered.len(),
            leased: st
                .leases
                .iter()
                .filter(|(t, (_, exp))| *exp > now && !st.answered.contains(t))
                .count(),
            under_replicated,
        }
    }
}
