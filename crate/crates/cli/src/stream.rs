//! Line source for `explain`: a file or stdin, optionally tailed.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy)]
pub struct Follow {
    pub poll: Duration,
    /// Stop after this long without new data; `None` tails forever.
    pub idle_timeout: Option<Duration>,
}

pub fn open(path: &Path) -> io::Result<Box<dyn Read + Send>> {
    if path == Path::new("-") {
        Ok(Box::new(io::stdin()))
    } else {
        Ok(Box::new(File::open(path)?))
    }
}

/// Spawns the reader stage. Lines arrive in file order; only complete
/// lines are forwarded while following, so a half-written tick waits for
/// its newline.
pub fn spawn_reader(
    source: Box<dyn Read + Send>,
    follow: Option<Follow>,
) -> Receiver<io::Result<String>> {
    let (tx, rx) = sync_channel(1024);
    thread::spawn(move || {
        let mut reader = BufReader::new(source);
        let mut buf = String::new();
        let mut last_data = Instant::now();
        loop {
            match reader.read_line(&mut buf) {
                Ok(0) => {
                    let Some(f) = follow else { break };
                    if f.idle_timeout.is_some_and(|t| last_data.elapsed() >= t) {
                        break;
                    }
                    thread::sleep(f.poll);
                }
                Ok(_) => {
                    last_data = Instant::now();
                    if !buf.ends_with('\n') && follow.is_some() {
                        continue;
                    }
                    let line = std::mem::take(&mut buf);
                    if tx.send(Ok(line)).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        }
        if !buf.is_empty() {
            let _ = tx.send(Ok(buf));
        }
    });
    rx
}
