//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod placeholders;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use logbench::corpus::{Corpus, LogRecord, Provenance};
use logbench::llm_client::request_fingerprint;
use logbench::prompting::{render_prompt, PromptSpec, RenderedPrompt};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay")
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Edit distance by exhaustive search over alignments: at each step match or
/// substitute the heads, delete from `a`, or insert from `b`. The search keeps the
/// cheapest complete alignment and abandons partial ones that cannot beat it. The
/// bound: every character of the longer rest that has no equal counterpart in the
/// shorter rest (by symbol counts) costs at least one edit.
pub fn brute_edit_distance(a: &[u8], b: &[u8]) -> usize {
    fn lower_bound(a: &[u8], b: &[u8]) -> usize {
        let mut ca = [0usize; 256];
        let mut cb = [0usize; 256];
        a.iter().for_each(|&c| ca[c as usize] += 1);
        b.iter().for_each(|&c| cb[c as usize] += 1);
        let shared: usize = a
            .iter()
            .chain(b)
            .map(|&c| c as usize)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .map(|c| ca[c].min(cb[c]))
            .sum();
        a.len().max(b.len()) - shared
    }
    fn go(a: &[u8], b: &[u8], cost: usize, best: &mut usize) {
        if cost + lower_bound(a, b) >= *best {
            return;
        }
        match (a.split_first(), b.split_first()) {
            (None, _) => *best = cost + b.len(),
            (_, None) => *best = cost + a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                go(ra, rb, cost + usize::from(x != y), best);
                go(ra, b, cost + 1, best);
                go(a, rb, cost + 1, best);
            }
        }
    }
    let mut best = a.len().max(b.len()) + 1;
    go(a, b, 0, &mut best);
    best
}

/// LCS by enumerating every subsequence of the shorter string and testing whether
/// it is a subsequence of the longer one.
pub fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let n = short.len();
    let mut best = 0;
    for mask in 0u32..(1 << n) {
        let size = mask.count_ones() as usize;
        if size <= best {
            continue;
        }
        let mut it = long.iter();
        let ok = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .all(|i| it.any(|c| *c == short[i]));
        if ok {
            best = size;
        }
    }
    best
}

fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// Pearson coefficient with every intermediate kept as an exact rational; only the
/// final square root is taken in floating point.
pub fn exact_pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = BigRational::from_integer(BigInt::from(a.len()));
    let xs: Vec<BigRational> = a.iter().map(|&v| rational(v)).collect();
    let ys: Vec<BigRational> = b.iter().map(|&v| rational(v)).collect();
    let mx = xs.iter().fold(BigRational::zero(), |s, v| s + v) / &n;
    let my = ys.iter().fold(BigRational::zero(), |s, v| s + v) / &n;
    let mut sxy = BigRational::zero();
    let mut sxx = BigRational::zero();
    let mut syy = BigRational::zero();
    for (x, y) in xs.iter().zip(&ys) {
        let dx = x - &mx;
        let dy = y - &my;
        sxy += &dx * &dy;
        sxx += &dx * &dx;
        syy += &dy * &dy;
    }
    assert!(!sxx.is_zero() && !syy.is_zero(), "zero variance");
    let r2 = (&sxy * &sxy) / (sxx * syy);
    let r = r2.to_f64().unwrap().sqrt();
    if sxy.is_negative() {
        -r
    } else {
        r
    }
}

/// Corpus with `counts[i].1` generated records for project `counts[i].0`.
pub fn synthetic_corpus(counts: &[(&str, usize)]) -> Corpus {
    let mut records = Vec::new();
    for (project, n) in counts {
        for i in 1..=*n {
            records.push(LogRecord {
                record_id: format!("{project}#{i}"),
                project: project.to_string(),
                content: format!("{project} worker {i} finished task {} in {} ms", i * 7, i * 13 % 997),
                ground_truth: format!("{project} worker <*> finished task <*> in <*> ms"),
            });
        }
    }
    Corpus::from_records(
        records,
        Provenance {
            source: PathBuf::from("synthetic"),
            variant: "synthetic".into(),
        },
    )
    .unwrap()
}

/// Project sizes of the corrected LogHub benchmark.
pub const LOGHUB_COUNTS: [(&str, usize); 16] = [
    ("HDFS", 14),
    ("Hadoop", 114),
    ("Spark", 36),
    ("Zookeeper", 50),
    ("OpenStack", 43),
    ("BGL", 120),
    ("HPC", 46),
    ("Thunderbird", 149),
    ("Windows", 50),
    ("Linux", 118),
    ("Mac", 341),
    ("Android", 158),
    ("HealthApp", 75),
    ("Apache", 6),
    ("OpenSSH", 26),
    ("Proxifier", 8),
];

pub fn render_all(spec: &PromptSpec, corpus: &Corpus) -> Vec<RenderedPrompt> {
    corpus
        .records()
        .iter()
        .map(|r| render_prompt(spec, r).unwrap())
        .collect()
}

/// Writes a replay store answering every prompt; `answer(i)` gives the text.
pub fn write_replay_store(path: &Path, prompts: &[RenderedPrompt], model: &str, answer: impl Fn(usize) -> String) {
    let mut f = std::fs::File::create(path).unwrap();
    for (i, p) in prompts.iter().enumerate() {
        let line = serde_json::json!({
            "request_fingerprint": request_fingerprint(&p.text, model, 0.2),
            "raw_text": answer(i),
        });
        writeln!(f, "{line}").unwrap();
    }
}

#[derive(Debug, Clone)]
pub struct SeenRequest {
    pub head: String,
    pub body: String,
}

/// Minimal HTTP/1.1 server on localhost. `reply(n, request)` returns the status code
/// and body for the n-th request (0-based) and may sleep to simulate latency.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<SeenRequest>>>,
    pub connections: Arc<AtomicUsize>,
    pub in_flight_max: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start<F>(reply: F) -> Self
    where
        F: Fn(usize, &SeenRequest) -> (u16, String) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let connections = Arc::new(AtomicUsize::new(0));
        let in_flight_max = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let counter = Arc::new(AtomicUsize::new(0));
        let reply = Arc::new(reply);
        {
            let (requests, connections, in_flight_max) = (requests.clone(), connections.clone(), in_flight_max.clone());
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    connections.fetch_add(1, Ordering::SeqCst);
                    let (requests, reply, counter, in_flight, in_flight_max) = (
                        requests.clone(),
                        reply.clone(),
                        counter.clone(),
                        in_flight.clone(),
                        in_flight_max.clone(),
                    );
                    thread::spawn(move || {
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        in_flight_max.fetch_max(now, Ordering::SeqCst);
                        serve(stream, &requests, &*reply, &counter);
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                    });
                }
            });
        }
        StubServer {
            url,
            requests,
            connections,
            in_flight_max,
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn serve(
    stream: TcpStream,
    requests: &Mutex<Vec<SeenRequest>>,
    reply: &(dyn Fn(usize, &SeenRequest) -> (u16, String) + Send + Sync),
    counter: &AtomicUsize,
) {
    stream.set_read_timeout(Some(Duration::from_secs(10))).ok();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut head = String::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        if line == "\r\n" {
            break;
        }
        head.push_str(&line);
    }
    let len = head
        .lines()
        .find_map(|l| {
            let (k, v) = l.split_once(':')?;
            k.eq_ignore_ascii_case("content-length")
                .then(|| v.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok();
    let req = SeenRequest {
        head,
        body: String::from_utf8_lossy(&body).into_owned(),
    };
    let n = counter.fetch_add(1, Ordering::SeqCst);
    requests.lock().unwrap().push(req.clone());
    let (status, text) = reply(n, &req);
    let mut stream = stream;
    let response = format!(
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
}

/// Chat-completion reply body carrying `content`.
pub fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

/// Runs the `logbench` binary and returns its output.
pub fn logbench<I, S>(args: I) -> std::process::Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    std::process::Command::new(env!("CARGO_BIN_EXE_logbench"))
        .args(args)
        .output()
        .expect("logbench binary runs")
}

/// Runs `logbench` and panics with its stderr unless it exits 0.
pub fn logbench_ok<I, S>(args: I) -> std::process::Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = logbench(args);
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub const REPLAY_MODELS: [&str; 6] = ["aurora", "basalt", "cobalt", "drift", "ember", "flint"];

/// Queries and scores every (model, mode) of the bundled replay fixture into `out`,
/// then builds the report.
pub fn run_replay_pipeline(out: &Path, models: &[&str]) {
    let f = fixture_dir();
    let corpus = f.join("corpus");
    let manifest = f.join("manifest.toml");
    for model in models {
        let provider = f.join("providers").join(format!("{model}.toml"));
        for mode in ["zero", "few"] {
            let common = [
                "--corpus".as_ref(),
                corpus.as_os_str(),
                "--provider".as_ref(),
                provider.as_os_str(),
                "--mode".as_ref(),
                mode.as_ref(),
                "--out".as_ref(),
                out.as_os_str(),
            ];
            let mut query: Vec<&std::ffi::OsStr> = vec!["query".as_ref(), "--manifest".as_ref(), manifest.as_os_str()];
            query.extend(common);
            logbench_ok(query);
            let mut score: Vec<&std::ffi::OsStr> = vec!["score".as_ref()];
            score.extend(common);
            logbench_ok(score);
        }
    }
    logbench_ok(["report".as_ref(), "--out".as_ref(), out.as_os_str()]);
}

/// Relative path → file bytes for every file under `dir`.
pub fn tree_bytes(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
