use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::isa::Word;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Hire,
    Release,
    Dispatch,
    Guard,
    Pending,
    Defer,
    Send,
    Arrive,
    Nack,
    Memory,
    QtStart,
    QtEnd,
    Halt,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub t: u64,
    pub kind: LogKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub core: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub qt: Option<u32>,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<LogEvent>,
}

impl EventLog {
    pub fn push(&mut self, t: u64, kind: LogKind, core: Option<u32>, qt: Option<u32>, detail: serde_json::Value) {
        self.events.push(LogEvent { t, kind, core, qt, detail });
    }

    pub fn of_kind(&self, kind: LogKind) -> impl Iterator<Item = &LogEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("log events serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreTraceRecord {
    pub time: u64,
    pub core: u32,
    pub state: String,
    /// (fragment index, offset)
    pub ip: Option<(usize, usize)>,
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub regs: Option<Vec<Word>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTraceRecord {
    pub send_time: u64,
    pub arrival_time: u64,
    pub kind: String,
    pub src: String,
    pub dst: String,
    pub hops: u32,
}

pub fn message_trace_csv(records: &[MessageTraceRecord]) -> String {
    let mut out = String::from("send_time,arrival_time,kind,src,dst,hops\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.send_time, r.arrival_time, r.kind, r.src, r.dst, r.hops);
    }
    out
}

pub fn core_trace_jsonl(records: &[CoreTraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}
