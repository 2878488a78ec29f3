// SPDX-License-Identifier: Apache-2.0

//! Cross-process behaviour. The test binary re-runs itself with
//! `SIMSHM_CHILD` set to play the other process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::time::Duration;

use simshm::region::{layout_for_page_size, page_size};
use simshm::{
    attach_region, destroy_region, gen_pointcloud, validate_frame, AccessMode, Error, FrameKind,
    ImageMeta, ReadOutcome, Reader, Writer,
};

const LIDAR: FrameKind = FrameKind::PointCloud { max_points: 2160 };

fn unique(tag: &str) -> String {
    use std::sync::atomic::{AtomicUsize, Ordering};
    static N: AtomicUsize = AtomicUsize::new(0);
    format!("/p_{tag}_{}_{}", std::process::id(), N.fetch_add(1, Ordering::Relaxed))
}

fn probe_line() -> String {
    let kinds = [
        LIDAR,
        FrameKind::PointCloud { max_points: 1 },
        FrameKind::PointCloud { max_points: 115_200 },
        FrameKind::Image(ImageMeta::dense(640, 480, 3)),
        FrameKind::Image(ImageMeta::dense(1920, 1200, 3)),
    ];
    let mut parts: Vec<String> = kinds
        .iter()
        .map(|k| format!("{:?}", layout_for_page_size(k, page_size()).unwrap()))
        .collect();
    let f = gen_pointcloud(7, 2160);
    parts.push(format!("{:08x}", simshm::checksum(f.as_bytes())));
    parts.join("|")
}

#[test]
fn child_entry() {
    let Ok(role) = std::env::var("SIMSHM_CHILD") else {
        return;
    };
    let mut args = role.split(' ');
    let cmd = args.next().unwrap();
    let name = args.next().unwrap_or_default().to_owned();
    let mut out = std::io::stdout();
    match cmd {
        "probe" => println!("CHILD {}", probe_line()),
        "writer42" => {
            let mut w = Writer::init(&name, LIDAR).unwrap();
            for _ in 0..42 {
                let f = gen_pointcloud(w.next_seq(), 100);
                w.write_points(&f.points).unwrap();
            }
            println!("CHILD READY");
            out.flush().unwrap();
            loop {
                std::thread::sleep(Duration::from_secs(1));
            }
        }
        "writer_resume" => {
            let w = Writer::init(&name, LIDAR).unwrap();
            println!("CHILD {}", w.next_seq());
        }
        "reader_hold" => {
            let mut r = Reader::init(&name, LIDAR, u64::MAX).unwrap();
            println!("CHILD READY");
            out.flush().unwrap();
            let mut line = String::new();
            std::io::stdin().read_line(&mut line).unwrap();
            let mut buf = vec![0u8; r.buffer_len()];
            match r.try_read_latest(&mut buf).unwrap() {
                ReadOutcome::Fresh {
                    seq, effective_len, ..
                } => {
                    let ok = validate_frame(&LIDAR, seq, &buf, effective_len as usize);
                    println!("CHILD fresh {seq} {ok}");
                }
                other => println!("CHILD {other:?}"),
            }
            let reattach = Reader::init(&name, LIDAR, u64::MAX);
            println!(
                "CHILD reattach {}",
                matches!(reattach, Err(Error::NotFound(_)))
            );
        }
        other => panic!("unknown child role {other}"),
    }
}

fn spawn(role: &str) -> (Child, Receiver<String>) {
    let mut child = Command::new(std::env::current_exe().unwrap())
        .args(["--exact", "child_entry", "--nocapture", "--test-threads=1"])
        .env("SIMSHM_CHILD", role)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let stdout = BufReader::new(child.stdout.take().unwrap());
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        // libtest may print its own status ahead of ours on the same line.
        for line in stdout.lines().map_while(Result::ok) {
            if let Some(at) = line.find("CHILD ") {
                if tx.send(line[at + 6..].trim_end().to_owned()).is_err() {
                    break;
                }
            }
        }
    });
    (child, rx)
}

fn next_child_line(out: &mut Receiver<String>) -> String {
    out.recv_timeout(Duration::from_secs(20))
        .expect("child exited early or timed out")
}

#[test]
fn layout_and_generators_agree_across_processes() {
    let (mut child, mut out) = spawn("probe");
    assert_eq!(next_child_line(&mut out), probe_line());
    assert!(child.wait().unwrap().success());
}

#[test]
fn killed_writer_resumes_sequence() {
    let name = unique("resume");
    let (mut child, mut out) = spawn(&format!("writer42 {name}"));
    assert_eq!(next_child_line(&mut out), "READY");
    child.kill().unwrap();
    child.wait().unwrap();

    let region = attach_region(&name, AccessMode::ReadOnly).unwrap();
    assert_eq!(region.latest_seq(), 42);
    assert_ne!(region.writer_owner(), 0, "killed writer never released its lock");

    let (mut child, mut out) = spawn(&format!("writer_resume {name}"));
    assert_eq!(next_child_line(&mut out), "43");
    assert!(child.wait().unwrap().success());
    destroy_region(&name).unwrap();
}

#[test]
fn destroy_while_reader_attached() {
    let name = unique("destroy");
    let mut w = Writer::init(&name, LIDAR).unwrap();
    let f = gen_pointcloud(1, 300);
    w.write_points(&f.points).unwrap();

    let (mut child, mut out) = spawn(&format!("reader_hold {name}"));
    assert_eq!(next_child_line(&mut out), "READY");
    destroy_region(&name).unwrap();
    let f = gen_pointcloud(2, 300);
    w.write_points(&f.points).unwrap();
    child.stdin.as_mut().unwrap().write_all(b"go\n").unwrap();
    assert_eq!(next_child_line(&mut out), "fresh 2 true");
    assert_eq!(next_child_line(&mut out), "reattach true");
    assert!(child.wait().unwrap().success());
}

#[test]
fn killed_reader_does_not_disturb_others() {
    let name = unique("killreader");
    let mut w = Writer::init(&name, LIDAR).unwrap();
    let (mut victim, mut out) = spawn(&format!("reader_hold {name}"));
    assert_eq!(next_child_line(&mut out), "READY");
    let mut survivor = Reader::init(&name, LIDAR, u64::MAX).unwrap();
    let mut buf = vec![0u8; survivor.buffer_len()];

    victim.kill().unwrap();
    victim.wait().unwrap();
    for _ in 0..10 {
        let seq = w.next_seq();
        let f = gen_pointcloud(seq, 2160);
        assert_eq!(w.write_points(&f.points).unwrap(), seq);
        assert!(matches!(
            survivor.try_read_latest(&mut buf).unwrap(),
            ReadOutcome::Fresh { seq: s, .. } if s == seq
        ));
    }
    drop(w);
    destroy_region(&name).unwrap();
}
