//! Server-sent telemetry: replays records after `since` (or the
//! `Last-Event-ID` header), then follows the file until the run's summary
//! appears.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::path::PathBuf;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::response::sse::{Event, KeepAlive, Sse};
use futures_util::stream::{self, Stream};
use tuneplan_core::telemetry::{TelemetryRecord, TelemetryTail, SUMMARY_FILE};

use crate::api::{run_file, ApiError, SinceQuery};
use crate::AppState;

struct Follow {
    tail: TelemetryTail,
    queue: VecDeque<TelemetryRecord>,
    since: u64,
    summary: PathBuf,
    poll: Duration,
    finished: bool,
}

fn record_event(r: &TelemetryRecord) -> Event {
    Event::default()
        .event("telemetry")
        .id(r.step.to_string())
        .data(serde_json::to_string(r).expect("record serializes"))
}

impl Follow {
    async fn next(mut self) -> Option<(Result<Event, Infallible>, Self)> {
        loop {
            if let Some(r) = self.queue.pop_front() {
                self.since = r.step;
                return Some((Ok(record_event(&r)), self));
            }
            if self.finished {
                return None;
            }
            // checked before reading so records flushed ahead of the summary are not missed
            let done = self.summary.is_file();
            match self.tail.poll() {
                Ok(records) => {
                    let since = self.since;
                    self.queue.extend(records.into_iter().filter(|r| r.step > since));
                }
                Err(e) => {
                    self.finished = true;
                    return Some((Ok(Event::default().event("error").data(e.to_string())), self));
                }
            }
            if self.queue.is_empty() {
                if done {
                    self.finished = true;
                    return Some((Ok(Event::default().event("end").data("{}")), self));
                }
                tokio::time::sleep(self.poll).await;
            }
        }
    }
}

pub(crate) async fn stream(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let path = run_file(&state, &id)?;
    let last_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok());
    let follow = Follow {
        summary: path.with_file_name(SUMMARY_FILE),
        tail: TelemetryTail::new(&path),
        queue: VecDeque::new(),
        since: last_id.or(q.since).unwrap_or(0),
        poll: state.config.poll_interval,
        finished: false,
    };
    Ok(Sse::new(stream::unfold(follow, Follow::next)).keep_alive(KeepAlive::default()))
}
