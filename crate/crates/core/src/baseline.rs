// SPDX-License-Identifier: Apache-2.0

//! Serialize-and-copy transport used as the comparison point.
//!
//! Frames travel as length-prefixed records over local stream sockets. The
//! publisher serializes one copy of every frame per subscriber into a staging
//! buffer and hands it to that subscriber's sender thread; subscribers read
//! each record into their own staging buffer, check it, and copy the payload
//! out. Each subscriber has room for one frame in flight: a newer frame
//! replaces an unsent one, which is counted as a drop.
//!
//! Record layout, little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 8 | magic `SIMBASE1` |
//! | 8 | 8 | seq |
//! | 16 | 8 | timestamp_ns |
//! | 24 | 4 | payload length |
//! | 28 | len | payload |
//! | 28+len | 4 | CRC-32C of bytes `0..28+len` |

use std::io::{self, ErrorKind, Read, Write};
use std::net::Shutdown;
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::integrity::checksum;
use crate::region::validate_name;

pub const RECORD_MAGIC: [u8; 8] = *b"SIMBASE1";
pub const RECORD_HEADER_BYTES: usize = 28;
pub const RECORD_TRAILER_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Received {
    pub seq: u64,
    pub timestamp_ns: u64,
    /// Payload bytes copied into the destination.
    pub effective_len: usize,
}

/// Serializes one record into `out`, replacing its contents.
pub fn encode_record(seq: u64, timestamp_ns: u64, payload: &[u8], out: &mut Vec<u8>) -> Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| Error::Parse(format!("payload of {} bytes too large", payload.len())))?;
    out.clear();
    out.reserve(RECORD_HEADER_BYTES + payload.len() + RECORD_TRAILER_BYTES);
    out.extend_from_slice(&RECORD_MAGIC);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&timestamp_ns.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(payload);
    let crc = checksum(out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(())
}

/// Parses one complete record from the front of `bytes`, returning the
/// header fields, the payload, and the record's total length.
pub fn decode_record(bytes: &[u8]) -> Result<(u64, u64, &[u8], usize)> {
    let header: &[u8; RECORD_HEADER_BYTES] = bytes
        .get(..RECORD_HEADER_BYTES)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| Error::Parse("truncated header".into()))?;
    let (seq, timestamp_ns, len) = parse_header(header)?;
    let end = RECORD_HEADER_BYTES + len;
    let total = end + RECORD_TRAILER_BYTES;
    if bytes.len() < total {
        return Err(Error::Parse(format!(
            "truncated record: {} of {total} bytes",
            bytes.len()
        )));
    }
    let stored = u32::from_le_bytes(bytes[end..total].try_into().unwrap());
    let computed = checksum(&bytes[..end]);
    if stored != computed {
        return Err(Error::Integrity {
            seq,
            stored,
            computed,
        });
    }
    Ok((seq, timestamp_ns, &bytes[RECORD_HEADER_BYTES..end], total))
}

fn parse_header(h: &[u8; RECORD_HEADER_BYTES]) -> Result<(u64, u64, usize)> {
    if h[..8] != RECORD_MAGIC {
        return Err(Error::Parse(format!("bad magic {:02x?}", &h[..8])));
    }
    let seq = u64::from_le_bytes(h[8..16].try_into().unwrap());
    let ts = u64::from_le_bytes(h[16..24].try_into().unwrap());
    let len = u32::from_le_bytes(h[24..28].try_into().unwrap()) as usize;
    Ok((seq, ts, len))
}

/// Reads one record from `stream` via `staging` and copies the payload into
/// `dest`. A clean end of stream before the first header byte is
/// [`Error::EndOfStream`]; anything shorter than a full record is a parse
/// error.
pub fn read_record<R: Read>(stream: &mut R, staging: &mut Vec<u8>, dest: &mut [u8]) -> Result<Received> {
    let mut header = [0u8; RECORD_HEADER_BYTES];
    let first = loop {
        match stream.read(&mut header) {
            Ok(n) => break n,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    };
    if first == 0 {
        return Err(Error::EndOfStream);
    }
    read_full(stream, &mut header[first..])?;
    let (seq, timestamp_ns, len) = parse_header(&header)?;
    if len > dest.len() {
        return Err(Error::Parse(format!(
            "record payload of {len} bytes exceeds destination of {}",
            dest.len()
        )));
    }
    staging.clear();
    staging.extend_from_slice(&header);
    staging.resize(RECORD_HEADER_BYTES + len + RECORD_TRAILER_BYTES, 0);
    read_full(stream, &mut staging[RECORD_HEADER_BYTES..])?;
    let (_, _, payload, _) = decode_record(staging)?;
    dest[..len].copy_from_slice(payload);
    Ok(Received {
        seq,
        timestamp_ns,
        effective_len: len,
    })
}

fn read_full<R: Read>(stream: &mut R, buf: &mut [u8]) -> Result<()> {
    stream.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Parse("truncated record".into())
        } else {
            e.into()
        }
    })
}

/// Filesystem path of the socket serving stream `name`.
pub fn socket_path(name: &str) -> Result<PathBuf> {
    validate_name(name)?;
    Ok(std::env::temp_dir().join(format!("simbase{}.sock", name.replace('/', "_"))))
}

#[derive(Default)]
struct Slot {
    pending: Option<Vec<u8>>,
    spare: Vec<Vec<u8>>,
    closed: bool,
    finishing: bool,
}

struct Link {
    shared: Arc<(Mutex<Slot>, Condvar)>,
    sender: Option<JoinHandle<()>>,
}

/// Publishing end: owns the listening socket and one sender per subscriber.
pub struct BaselinePublisher {
    name: String,
    path: PathBuf,
    listener: UnixListener,
    links: Vec<Link>,
    drops: u64,
}

impl BaselinePublisher {
    pub fn bind(name: &str) -> Result<Self> {
        let path = socket_path(name)?;
        match std::fs::remove_file(&path) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::NotFound => {}
            Err(e) => return Err(Error::resource("unlink socket", name, e)),
        }
        let listener = UnixListener::bind(&path).map_err(|e| Error::resource("bind", name, e))?;
        Ok(BaselinePublisher {
            name: name.to_owned(),
            path,
            listener,
            links: Vec::new(),
            drops: 0,
        })
    }

    /// Blocks until `count` more subscribers connect or `timeout` passes.
    pub fn accept_subscribers(&mut self, count: usize, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        self.listener.set_nonblocking(true)?;
        let mut accepted = 0;
        while accepted < count {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    self.add_link(stream);
                    accepted += 1;
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(Error::resource(
                            "accept",
                            &self.name,
                            io::Error::new(
                                ErrorKind::TimedOut,
                                format!("{accepted} of {count} subscribers connected"),
                            ),
                        ));
                    }
                    std::thread::sleep(Duration::from_millis(1));
                }
                Err(e) => return Err(e.into()),
            }
        }
        self.listener.set_nonblocking(false)?;
        Ok(())
    }

    fn add_link(&mut self, stream: UnixStream) {
        let shared = Arc::new((Mutex::new(Slot::default()), Condvar::new()));
        let worker = Arc::clone(&shared);
        let sender = std::thread::spawn(move || send_loop(stream, &worker));
        self.links.push(Link {
            shared,
            sender: Some(sender),
        });
    }

    pub fn subscriber_count(&self) -> usize {
        self.links.len()
    }

    /// Frames that did not reach some subscriber: replaced while still
    /// queued, or addressed to a disconnected subscriber.
    pub fn drops(&self) -> u64 {
        self.drops
    }

    /// Serializes a copy of the frame for every subscriber and queues it.
    pub fn publish(&mut self, seq: u64, timestamp_ns: u64, payload: &[u8]) -> Result<()> {
        if self.links.is_empty() {
            self.drops += 1;
            return Ok(());
        }
        let mut i = 0;
        while i < self.links.len() {
            let (lock, cv) = &*self.links[i].shared;
            let staged = {
                let mut slot = lock.lock().unwrap();
                if slot.closed {
                    None
                } else {
                    Some(slot.spare.pop().unwrap_or_default())
                }
            };
            let Some(mut buf) = staged else {
                self.drops += 1;
                self.remove_link(i);
                continue;
            };
            encode_record(seq, timestamp_ns, payload, &mut buf)?;
            let mut slot = lock.lock().unwrap();
            if slot.closed {
                drop(slot);
                self.drops += 1;
                self.remove_link(i);
                continue;
            }
            if let Some(old) = slot.pending.replace(buf) {
                self.drops += 1;
                slot.spare.push(old);
            }
            cv.notify_one();
            i += 1;
        }
        Ok(())
    }

    fn remove_link(&mut self, i: usize) {
        let mut link = self.links.swap_remove(i);
        if let Some(h) = link.sender.take() {
            let _ = h.join();
        }
    }

    /// Sends whatever is still queued, then closes every connection.
    pub fn finish(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        for link in &self.links {
            let (lock, cv) = &*link.shared;
            lock.lock().unwrap().finishing = true;
            cv.notify_one();
        }
        for mut link in self.links.drain(..) {
            if let Some(h) = link.sender.take() {
                let _ = h.join();
            }
        }
        let _ = std::fs::remove_file(&self.path);
    }
}

impl Drop for BaselinePublisher {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn send_loop(mut stream: UnixStream, shared: &(Mutex<Slot>, Condvar)) {
    let (lock, cv) = shared;
    loop {
        let buf = {
            let mut slot = lock.lock().unwrap();
            loop {
                if let Some(buf) = slot.pending.take() {
                    break buf;
                }
                if slot.finishing {
                    let _ = stream.shutdown(Shutdown::Both);
                    return;
                }
                slot = cv.wait(slot).unwrap();
            }
        };
        let sent = stream.write_all(&buf);
        let mut slot = lock.lock().unwrap();
        slot.spare.push(buf);
        if sent.is_err() {
            slot.closed = true;
            return;
        }
    }
}

/// Receiving end of a baseline stream.
pub struct BaselineSubscriber {
    stream: UnixStream,
    staging: Vec<u8>,
    bad: bool,
}

impl BaselineSubscriber {
    pub fn connect(name: &str) -> Result<Self> {
        let path = socket_path(name)?;
        let stream = UnixStream::connect(&path).map_err(|e| {
            if matches!(e.kind(), ErrorKind::NotFound | ErrorKind::ConnectionRefused) {
                Error::NotFound(name.to_owned())
            } else {
                Error::resource("connect", name, e)
            }
        })?;
        Ok(BaselineSubscriber {
            stream,
            staging: Vec::new(),
            bad: false,
        })
    }

    /// Blocks for the next record and copies its payload into `dest`. After
    /// a malformed record the connection is unusable.
    pub fn receive(&mut self, dest: &mut [u8]) -> Result<Received> {
        if self.bad {
            return Err(Error::Parse("connection marked bad by an earlier error".into()));
        }
        let r = read_record(&mut self.stream, &mut self.staging, dest);
        if matches!(r, Err(Error::Parse(_) | Error::Integrity { .. })) {
            self.bad = true;
            let _ = self.stream.shutdown(Shutdown::Both);
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{gen_image, validate_frame};
    use crate::region::{FrameKind, ImageMeta};
    use std::io::Cursor;

    fn unique(tag: &str) -> String {
        use std::sync::atomic::{AtomicUsize, Ordering};
        static N: AtomicUsize = AtomicUsize::new(0);
        format!("/b_{tag}_{}_{}", std::process::id(), N.fetch_add(1, Ordering::Relaxed))
    }

    fn pair(tag: &str, subscribers: usize) -> (BaselinePublisher, Vec<BaselineSubscriber>) {
        let name = unique(tag);
        let mut publisher = BaselinePublisher::bind(&name).unwrap();
        let subs = (0..subscribers)
            .map(|_| BaselineSubscriber::connect(&name).unwrap())
            .collect();
        publisher
            .accept_subscribers(subscribers, Duration::from_secs(5))
            .unwrap();
        (publisher, subs)
    }

    #[test]
    fn record_layout() {
        let mut out = Vec::new();
        encode_record(7, 99, b"abc", &mut out).unwrap();
        assert_eq!(out.len(), 28 + 3 + 4);
        assert_eq!(&out[..8], b"SIMBASE1");
        assert_eq!(u64::from_le_bytes(out[8..16].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(out[16..24].try_into().unwrap()), 99);
        assert_eq!(u32::from_le_bytes(out[24..28].try_into().unwrap()), 3);
        assert_eq!(&out[28..31], b"abc");
        assert_eq!(
            u32::from_le_bytes(out[31..35].try_into().unwrap()),
            checksum(&out[..31])
        );
        let (seq, ts, payload, total) = decode_record(&out).unwrap();
        assert_eq!((seq, ts, payload, total), (7, 99, &b"abc"[..], 35));
    }

    #[test]
    fn every_truncation_is_a_parse_error() {
        let mut rec = Vec::new();
        encode_record(1, 2, &[5u8; 40], &mut rec).unwrap();
        let mut staging = Vec::new();
        let mut dest = [0u8; 64];
        for cut in 1..rec.len() {
            let mut cur = Cursor::new(&rec[..cut]);
            let err = read_record(&mut cur, &mut staging, &mut dest).unwrap_err();
            assert!(matches!(err, Error::Parse(_)), "cut {cut}: {err}");
            assert!(decode_record(&rec[..cut]).is_err());
        }
        let mut empty = Cursor::new(&[][..]);
        assert!(matches!(
            read_record(&mut empty, &mut staging, &mut dest),
            Err(Error::EndOfStream)
        ));
    }

    #[test]
    fn corrupted_records_fail_crc() {
        let mut rec = Vec::new();
        encode_record(1, 2, &[5u8; 40], &mut rec).unwrap();
        for i in 8..rec.len() {
            let mut bad = rec.clone();
            bad[i] ^= 0x01;
            let mut staging = Vec::new();
            let mut dest = [0u8; 64];
            let err = read_record(&mut Cursor::new(&bad), &mut staging, &mut dest);
            assert!(err.is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn one_subscriber_gets_identical_bytes() {
        let (mut publisher, mut subs) = pair("one", 1);
        let payload: Vec<u8> = (0..100u8).collect();
        publisher.publish(1, 1234, &payload).unwrap();
        let mut dest = vec![0u8; 256];
        let got = subs[0].receive(&mut dest).unwrap();
        assert_eq!(
            got,
            Received {
                seq: 1,
                timestamp_ns: 1234,
                effective_len: 100
            }
        );
        assert_eq!(&dest[..100], &payload[..]);
        publisher.finish();
        assert!(matches!(subs[0].receive(&mut dest), Err(Error::EndOfStream)));
    }

    #[test]
    fn fan_out_to_ten() {
        let (mut publisher, mut subs) = pair("ten", 10);
        assert_eq!(publisher.subscriber_count(), 10);
        publisher.publish(3, 0, &[9u8; 500]).unwrap();
        let mut dest = vec![0u8; 500];
        for s in &mut subs {
            let got = s.receive(&mut dest).unwrap();
            assert_eq!(got.seq, 3);
            assert!(dest.iter().all(|&b| b == 9));
        }
        assert_eq!(publisher.drops(), 0);
    }

    #[test]
    fn camera_frame_round_trip() {
        let meta = ImageMeta::dense(640, 480, 3);
        let frame = gen_image(3, meta);
        let (mut publisher, mut subs) = pair("camera", 1);
        let mut dest = vec![0u8; frame.pixels.len()];
        let reader = std::thread::spawn(move || {
            let got = subs[0].receive(&mut dest).unwrap();
            (got, dest)
        });
        publisher.publish(3, 1, &frame.pixels).unwrap();
        let (got, dest) = reader.join().unwrap();
        assert_eq!(got.effective_len, 921_600);
        assert!(validate_frame(&FrameKind::Image(meta), 3, &dest, 921_600));
    }

    #[test]
    fn zero_length_payload() {
        let (mut publisher, mut subs) = pair("zero", 1);
        publisher.publish(1, 5, &[]).unwrap();
        let mut dest = [0u8; 4];
        assert_eq!(subs[0].receive(&mut dest).unwrap().effective_len, 0);
    }

    #[test]
    fn unloaded_subscriber_gets_everything_in_order() {
        let (mut publisher, mut subs) = pair("order", 1);
        let mut sub = subs.pop().unwrap();
        let reader = std::thread::spawn(move || {
            let mut dest = vec![0u8; 64];
            let mut seqs = Vec::new();
            loop {
                match sub.receive(&mut dest) {
                    Ok(r) => seqs.push(r.seq),
                    Err(Error::EndOfStream) => break seqs,
                    Err(e) => panic!("{e}"),
                }
            }
        });
        for seq in 1..=200 {
            publisher.publish(seq, 0, &[1u8; 64]).unwrap();
            std::thread::sleep(Duration::from_micros(200));
        }
        publisher.finish();
        let seqs = reader.join().unwrap();
        assert_eq!(seqs, (1..=200).collect::<Vec<_>>());
    }

    #[test]
    fn departed_subscribers_count_as_drops() {
        let (mut publisher, subs) = pair("gone", 2);
        drop(subs);
        // the first sends may still land in socket buffers; keep publishing
        // until the broken connections are noticed
        let big = vec![0u8; 1 << 20];
        for seq in 1..=20 {
            publisher.publish(seq, 0, &big).unwrap();
            std::thread::sleep(Duration::from_millis(5));
        }
        assert_eq!(publisher.subscriber_count(), 0);
        let before = publisher.drops();
        assert!(before > 0);
        publisher.publish(21, 0, &big).unwrap();
        assert_eq!(publisher.drops(), before + 1);
    }

    #[test]
    fn bad_connection_stays_bad() {
        let (a, b) = UnixStream::pair().unwrap();
        let mut sub = BaselineSubscriber {
            stream: b,
            staging: Vec::new(),
            bad: false,
        };
        (&a).write_all(b"NOTMAGIC-and-more-bytes-here").unwrap();
        let mut dest = [0u8; 16];
        assert!(matches!(sub.receive(&mut dest), Err(Error::Parse(_))));
        assert!(matches!(sub.receive(&mut dest), Err(Error::Parse(_))));
    }

    #[test]
    fn connect_without_publisher_is_not_found() {
        assert!(matches!(
            BaselineSubscriber::connect(&unique("nobody")),
            Err(Error::NotFound(_))
        ));
    }
}
