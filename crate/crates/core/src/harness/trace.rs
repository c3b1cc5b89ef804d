//! Tab-separated trace lines, hashed as they are produced.
//!
//! ```text
//! #infucb-trace	1
//! P	t	source	bracket	arm	reward	init
//! O	t	arm
//! E	t	kind	bracket	p_hat	arms
//! ```
//!
//! `bracket` is 0 for LUCB pulls, `p_hat` is `-` when absent, `arms` is a
//! comma-separated list. Rewards use the shortest round-trip decimal form.

use std::fmt::Write as _;
use std::io::Write;

use sha2::{Digest, Sha256};

use super::{RoundObserver, RoundView};
use crate::error::Result;

pub const TRACE_HEADER: &str = "#infucb-trace\t1\n";

/// Streams trace lines into a SHA-256 digest and, optionally, a writer.
pub struct TraceHasher<'a> {
    digest: Sha256,
    out: Option<&'a mut dyn Write>,
    line: String,
    error: Option<std::io::Error>,
}

impl<'a> TraceHasher<'a> {
    pub fn new(out: Option<&'a mut dyn Write>) -> Self {
        let mut h = Self { digest: Sha256::new(), out, line: String::with_capacity(128), error: None };
        h.line.push_str(TRACE_HEADER);
        h.flush_line();
        h
    }

    fn flush_line(&mut self) {
        self.digest.update(self.line.as_bytes());
        if let Some(w) = self.out.as_mut() {
            if self.error.is_none() {
                if let Err(e) = w.write_all(self.line.as_bytes()) {
                    self.error = Some(e);
                }
            }
        }
        self.line.clear();
    }

    /// Hex digest of everything written so far.
    pub fn finish(self) -> Result<String> {
        if let Some(e) = self.error {
            return Err(e.into());
        }
        if let Some(w) = self.out {
            w.flush()?;
        }
        Ok(hex::encode(self.digest.finalize()))
    }
}

impl RoundObserver for TraceHasher<'_> {
    fn on_round(&mut self, view: &RoundView<'_>) {
        for (src, p) in view.pulls {
            let _ = writeln!(
                self.line,
                "P\t{}\t{}\t{}\t{}\t{}\t{}",
                view.t,
                src.as_str(),
                p.bracket,
                p.arm,
                p.reward,
                u8::from(p.forced_init)
            );
            self.flush_line();
        }
        match view.output {
            Some(a) => {
                let _ = writeln!(self.line, "O\t{}\t{}", view.t, a);
            }
            None => {
                let _ = writeln!(self.line, "O\t{}\t-", view.t);
            }
        }
        self.flush_line();
        for ev in view.events {
            let _ = write!(self.line, "E\t{}\t{}\t{}\t", ev.t, ev.kind.as_str(), ev.bracket_r);
            match ev.p_hat {
                Some(p) => {
                    let _ = write!(self.line, "{p}\t");
                }
                None => self.line.push_str("-\t"),
            }
            for (i, a) in ev.arms.iter().enumerate() {
                if i > 0 {
                    self.line.push(',');
                }
                let _ = write!(self.line, "{a}");
            }
            self.line.push('\n');
            self.flush_line();
        }
    }
}

/// SHA-256 of a byte stream, as hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::PullRecord;
    use crate::harness::PullSource;
    use crate::recommend::{EventKind, RecommendationEvent};

    #[test]
    fn lines_and_hash_agree() {
        let mut buf = Vec::new();
        let pulls = [(PullSource::Engine, PullRecord { t: 3, bracket: 2, arm: 7, reward: 0.25, forced_init: true })];
        let events = [RecommendationEvent { t: 3, kind: EventKind::FdrAccept, arms: vec![1, 7], bracket_r: 2, p_hat: Some(2) }];
        let hash = {
            let mut h = TraceHasher::new(Some(&mut buf));
            h.on_round(&RoundView { t: 3, pulls: &pulls, output: None, events: &events });
            h.finish().unwrap()
        };
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "#infucb-trace\t1\nP\t3\tengine\t2\t7\t0.25\t1\nO\t3\t-\nE\t3\tfdr_accept\t2\t2\t1,7\n");
        assert_eq!(hash, sha256_hex(&buf));
        let silent = {
            let mut h = TraceHasher::new(None);
            h.on_round(&RoundView { t: 3, pulls: &pulls, output: None, events: &events });
            h.finish().unwrap()
        };
        assert_eq!(silent, hash);
    }
}
