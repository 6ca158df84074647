//! Append-only JSONL journal of stamped events.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use shopflow_core::flow::{Event, Stamped};

pub struct Journal {
    path: PathBuf,
    file: File,
    sync: bool,
    next_seq: u64,
}

impl Journal {
    /// Open the journal and return every event in it. A torn final line
    /// (crash mid-write) is cut off; damage anywhere else is an error.
    pub fn open(path: &Path, sync: bool) -> io::Result<(Journal, Vec<Stamped>)> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut events = Vec::new();
        let mut good_len = 0u64;
        if path.exists() {
            let mut reader = BufReader::new(File::open(path)?);
            let mut line = Vec::new();
            let mut lineno = 0;
            loop {
                line.clear();
                let n = reader.read_until(b'\n', &mut line)?;
                if n == 0 {
                    break;
                }
                lineno += 1;
                let complete = line.ends_with(b"\n");
                match serde_json::from_slice::<Stamped>(&line) {
                    Ok(ev) if complete => {
                        events.push(ev);
                        good_len += n as u64;
                    }
                    _ if !complete => break,
                    Ok(_) => unreachable!(),
                    Err(e) => {
                        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("{}:{lineno}: {e}", path.display())));
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
        }
        let next_seq = events.last().map_or(1, |e| e.seq + 1);
        Ok((
            Journal {
                path: path.to_path_buf(),
                file,
                sync,
                next_seq,
            },
            events,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Stamp without writing; `commit` persists it.
    pub fn stamp(&self, at_ms: u64, event: Event) -> Stamped {
        Stamped {
            seq: self.next_seq,
            at_ms,
            event,
        }
    }

    pub fn commit(&mut self, stamped: &Stamped) -> io::Result<()> {
        debug_assert_eq!(stamped.seq, self.next_seq);
        let mut line = serde_json::to_vec(stamped).expect("events serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.next_seq += 1;
        Ok(())
    }
}
