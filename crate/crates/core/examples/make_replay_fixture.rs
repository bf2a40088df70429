//! Regenerates the replay fixture under `tests/fixtures/replay`: a 50-message corpus
//! over five projects, and recorded answers of six fictional models for both prompt
//! modes. Every choice comes from a seeded generator, so the output is stable.
//!
//! ```text
//! cargo run -p logbench --example make_replay_fixture [-- <out-dir>]
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use logbench::corpus::{Corpus, LogRecord, Provenance};
use logbench::llm_client::{request_fingerprint, DEFAULT_TEMPERATURE};
use logbench::prompting::{render_prompt, PromptMode, PromptSpec};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const SEED: u64 = 20240412;
/// Record answered by the runaway-repetition response.
const OUTLIER_RECORD: &str = "Linux#3";
const OUTLIER_CONFIG: (&str, PromptMode) = ("aurora", PromptMode::FewShot);
const OUTLIER_REPEATS: usize = 1750;

#[derive(Clone, Copy)]
enum Slot {
    Int(u32, u32),
    Ip,
    Port,
    Block,
    Hex,
    Path,
    User,
    Date,
    Version,
}

fn fill(slot: Slot, rng: &mut ChaCha8Rng) -> String {
    match slot {
        Slot::Int(lo, hi) => rng.random_range(lo..=hi).to_string(),
        Slot::Ip => format!(
            "10.{}.{}.{}",
            rng.random_range(0..=255),
            rng.random_range(0..=255),
            rng.random_range(1..=254)
        ),
        Slot::Port => rng.random_range(1024..=65535).to_string(),
        Slot::Block => format!(
            "blk_{}",
            rng.random_range(1_000_000_000_000_000i64..=9_000_000_000_000_000_000)
        ),
        Slot::Hex => format!("0x{:012x}", rng.random_range(0x1000_0000_0000u64..=0xffff_ffff_ffff)),
        Slot::Path => {
            let dirs = ["user", "root", "tmp", "data", "logs"];
            let files = ["part-00001", "job.jar", "job.xml", "index.html", "sample.txt"];
            format!(
                "/{}/{}/{}",
                dirs.choose(rng).unwrap(),
                dirs.choose(rng).unwrap(),
                files.choose(rng).unwrap()
            )
        }
        Slot::User => ["root", "admin", "test", "guest", "oracle", "ftpuser"]
            .choose(rng)
            .unwrap()
            .to_string(),
        Slot::Date => format!(
            "{} Jul {} {:02}:{:02}:{:02} 2005",
            ["Sun", "Mon", "Tue", "Wed"].choose(rng).unwrap(),
            rng.random_range(1..=28),
            rng.random_range(0..24),
            rng.random_range(0..60),
            rng.random_range(0..60)
        ),
        Slot::Version => format!("2.0.{}", rng.random_range(40..=60)),
    }
}

type ProjectTemplates = (&'static str, Vec<(&'static str, Vec<Slot>)>);

fn templates() -> Vec<ProjectTemplates> {
    use Slot::*;
    vec![
        (
            "HDFS",
            vec![
                ("Receiving block <*> src: /<*>:<*> dest: /<*>:<*>", vec![Block, Ip, Port, Ip, Port]),
                ("PacketResponder <*> for block <*> terminating", vec![Int(0, 2), Block]),
                ("Received block <*> of size <*> from /<*>", vec![Block, Int(1000, 67108864), Ip]),
                ("BLOCK* NameSystem.allocateBlock: <*> <*>", vec![Path, Block]),
                ("Deleting block <*> file <*>", vec![Block, Path]),
                ("Verification succeeded for <*>", vec![Block]),
                ("<*>:Got exception while serving <*> to /<*>", vec![Ip, Block, Ip]),
                ("BLOCK* ask <*>:<*> to delete <*>", vec![Ip, Port, Block]),
                ("writeBlock <*> received exception java.io.IOException: Connection reset by peer", vec![Block]),
                ("Starting thread to transfer block <*> to <*>:<*>", vec![Block, Ip, Port]),
            ],
        ),
        (
            "Zookeeper",
            vec![
                ("Accepted socket connection from /<*>:<*>", vec![Ip, Port]),
                ("Closed socket connection for client /<*>:<*> which had sessionid <*>", vec![Ip, Port, Hex]),
                ("Client attempting to establish new session at /<*>:<*>", vec![Ip, Port]),
                ("Established session <*> with negotiated timeout <*> for client /<*>:<*>", vec![Hex, Int(5000, 40000), Ip, Port]),
                ("Expiring session <*>, timeout of <*>ms exceeded", vec![Hex, Int(5000, 40000)]),
                ("Processed session termination for sessionid: <*>", vec![Hex]),
                ("Connection broken for id <*>, my id = <*>, error =", vec![Int(1, 3), Int(1, 3)]),
                ("Notification time out: <*>", vec![Int(400, 60000)]),
                ("Have smaller server identifier, so dropping the connection: (<*>, <*>)", vec![Int(1, 3), Int(1, 3)]),
                ("Snapshotting: <*>", vec![Hex]),
            ],
        ),
        (
            "Linux",
            vec![
                ("authentication failure; logname= uid=<*> euid=<*> tty=NODEVssh ruser= rhost=<*>", vec![Int(0, 0), Int(0, 0), Ip]),
                ("session opened for user <*> by (uid=<*>)", vec![User, Int(0, 500)]),
                ("session closed for user <*>", vec![User]),
                ("connection from <*> (<*>) at <*>", vec![Ip, Ip, Date]),
                ("ANONYMOUS FTP LOGIN FROM <*>, (anonymous)", vec![Ip]),
                ("Kerberos authentication failed", vec![]),
                ("check pass; user unknown", vec![]),
                ("cupsd startup succeeded", vec![]),
                ("Out of Memory: Killed process <*> (<*>).", vec![Int(100, 32000), User]),
                ("Memory: <*>k/<*>k available", vec![Int(100000, 200000), Int(200000, 300000)]),
            ],
        ),
        (
            "Apache",
            vec![
                ("jk2_init() Found child <*> in scoreboard slot <*>", vec![Int(1000, 32000), Int(6, 10)]),
                ("workerEnv.init() ok <*>", vec![Path]),
                ("mod_jk child workerEnv in error state <*>", vec![Int(6, 10)]),
                ("[client <*>] Directory index forbidden by rule: <*>", vec![Ip, Path]),
                ("jk2_init() Can't find child <*> in scoreboard", vec![Int(1000, 32000)]),
                ("mod_jk child init <*> <*>", vec![Int(1, 2), Int(0, 2)]),
                ("[client <*>] File does not exist: <*>", vec![Ip, Path]),
                ("Apache/<*> configured -- resuming normal operations", vec![Version]),
                ("caught SIGTERM, shutting down", vec![]),
                ("Digest: done", vec![]),
            ],
        ),
        (
            "OpenSSH",
            vec![
                ("Failed password for invalid user <*> from <*> port <*> ssh2", vec![User, Ip, Port]),
                ("Invalid user <*> from <*>", vec![User, Ip]),
                ("pam_unix(sshd:auth): authentication failure; logname= uid=<*> euid=<*> tty=ssh ruser= rhost=<*>", vec![Int(0, 0), Int(0, 0), Ip]),
                ("Received disconnect from <*>: <*>: Bye Bye [preauth]", vec![Ip, Int(11, 11)]),
                ("Connection closed by <*> [preauth]", vec![Ip]),
                ("reverse mapping checking getaddrinfo for <*> [<*>] failed - POSSIBLE BREAK-IN ATTEMPT!", vec![Ip, Ip]),
                ("Accepted password for <*> from <*> port <*> ssh2", vec![User, Ip, Port]),
                ("error: Received disconnect from <*>: <*>: No more user authentication methods available. [preauth]", vec![Ip, Int(3, 3)]),
                ("input_userauth_request: invalid user <*> [preauth]", vec![User]),
                ("PAM <*> more authentication failures; logname= uid=<*> euid=<*> tty=ssh ruser= rhost=<*>", vec![Int(1, 5), Int(0, 0), Int(0, 0), Ip]),
            ],
        ),
    ]
}

struct Message {
    record: LogRecord,
    values: Vec<String>,
}

fn instantiate(template: &str, values: &[String]) -> String {
    let mut out = String::new();
    let mut rest = template;
    let mut it = values.iter();
    while let Some(i) = rest.find("<*>") {
        out.push_str(&rest[..i]);
        out.push_str(it.next().expect("one value per placeholder"));
        rest = &rest[i + 3..];
    }
    out.push_str(rest);
    out
}

fn build_corpus(rng: &mut ChaCha8Rng) -> Vec<Message> {
    let mut out = Vec::new();
    for (project, ts) in templates() {
        for (i, (t, slots)) in ts.into_iter().enumerate() {
            assert_eq!(t.matches("<*>").count(), slots.len(), "{t}");
            let values: Vec<String> = slots.iter().map(|&s| fill(s, rng)).collect();
            out.push(Message {
                record: LogRecord {
                    record_id: format!("{project}#{}", i + 1),
                    project: project.to_string(),
                    content: instantiate(t, &values),
                    ground_truth: t.to_string(),
                },
                values,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
enum Behaviour {
    Exact,
    Styled,
    Chatty,
    Concrete,
    PartialVar,
    OverAbstract,
    Untagged,
    Multi,
    SingleTag,
    Unclosed,
    Empty,
    Echo,
}

const BEHAVIOURS: [Behaviour; 12] = [
    Behaviour::Exact,
    Behaviour::Styled,
    Behaviour::Chatty,
    Behaviour::Concrete,
    Behaviour::PartialVar,
    Behaviour::OverAbstract,
    Behaviour::Untagged,
    Behaviour::Multi,
    Behaviour::SingleTag,
    Behaviour::Unclosed,
    Behaviour::Empty,
    Behaviour::Echo,
];

struct Profile {
    model: &'static str,
    mode: PromptMode,
    /// Weights in `BEHAVIOURS` order.
    weights: [u32; 12],
    /// Placeholder notations used by `Styled` answers.
    styles: &'static [&'static str],
}

fn profiles() -> Vec<Profile> {
    use PromptMode::*;
    //                          Ex  St  Ch  Co  Pa  Ov  Un  Mu  Si  Ucl Em  Echo
    vec![
        Profile {
            model: "aurora",
            mode: ZeroShot,
            weights: [4, 16, 4, 16, 18, 12, 10, 4, 4, 0, 4, 8],
            styles: &["<value>", "{value}", "XXX"],
        },
        Profile {
            model: "aurora",
            mode: FewShot,
            weights: [30, 6, 4, 8, 22, 16, 6, 2, 2, 0, 2, 2],
            styles: &["<>"],
        },
        Profile {
            model: "basalt",
            mode: ZeroShot,
            weights: [4, 20, 6, 12, 18, 12, 8, 4, 4, 0, 4, 8],
            styles: &["<name>", "${name}", "@name@", "{{name}}", "[[name]]"],
        },
        Profile {
            model: "basalt",
            mode: FewShot,
            weights: [26, 8, 6, 8, 20, 16, 6, 2, 2, 2, 2, 2],
            styles: &["<*>", "*"],
        },
        Profile {
            model: "cobalt",
            mode: ZeroShot,
            weights: [8, 24, 4, 10, 18, 12, 8, 4, 2, 2, 4, 4],
            styles: &["{name}", "{}", "${x}"],
        },
        Profile {
            model: "cobalt",
            mode: FewShot,
            weights: [34, 6, 4, 6, 20, 14, 4, 2, 2, 4, 2, 2],
            styles: &["<* *>", "<>"],
        },
        Profile {
            model: "drift",
            mode: ZeroShot,
            weights: [0, 8, 4, 30, 16, 10, 14, 4, 2, 2, 4, 6],
            styles: &["$var", "[value]", "(v)", "%s", "?"],
        },
        Profile {
            model: "drift",
            mode: FewShot,
            weights: [14, 12, 4, 18, 16, 12, 8, 2, 2, 4, 4, 4],
            styles: &["{}", "<*", "*"],
        },
        Profile {
            model: "ember",
            mode: ZeroShot,
            weights: [2, 12, 4, 24, 18, 12, 10, 4, 2, 6, 2, 4],
            styles: &["<<v>>", "#", "&v&", "[^_^]"],
        },
        Profile {
            model: "ember",
            mode: FewShot,
            weights: [22, 10, 4, 12, 18, 14, 6, 2, 2, 6, 2, 2],
            styles: &["...", "<*"],
        },
        Profile {
            model: "flint",
            mode: ZeroShot,
            weights: [0, 10, 4, 24, 14, 12, 12, 4, 2, 2, 6, 10],
            styles: &["___", "XX", "{{{v}}}", "[0-9]"],
        },
        Profile {
            model: "flint",
            mode: FewShot,
            weights: [6, 8, 2, 8, 10, 10, 8, 2, 2, 2, 12, 30],
            styles: &["'v'", "YYYY-MM-DD", "<*VAR*>"],
        },
    ]
}

fn styled(gt: &str, styles: &[&str], rng: &mut ChaCha8Rng) -> String {
    let parts: Vec<&str> = gt.split("<*>").collect();
    let mut out = parts[0].to_string();
    for p in &parts[1..] {
        out.push_str(styles.choose(rng).unwrap());
        out.push_str(p);
    }
    out
}

fn answer(m: &Message, b: Behaviour, profile: &Profile, prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let gt = m.record.ground_truth.as_str();
    let tagged = |s: &str| format!("<TPL>{s}</TPL>");
    match b {
        Behaviour::Exact => tagged(gt),
        Behaviour::Styled => tagged(&styled(gt, profile.styles, rng)),
        Behaviour::Chatty => format!(
            "Sure! The template for this log message is {} Let me know if you need anything else.",
            tagged(&styled(gt, profile.styles, rng))
        ),
        Behaviour::Concrete => tagged(&m.record.content),
        Behaviour::PartialVar => {
            if m.values.is_empty() {
                tagged(&format!("{gt} <*>"))
            } else {
                let k = rng.random_range(0..m.values.len());
                let mut vals: Vec<String> = vec!["<*>".into(); m.values.len()];
                vals[k] = m.values[k].clone();
                tagged(&instantiate(gt, &vals))
            }
        }
        Behaviour::OverAbstract => {
            let words: Vec<&str> = gt.split(' ').collect();
            let candidates: Vec<usize> = (0..words.len())
                .filter(|&i| words[i].chars().all(|c| c.is_ascii_alphabetic()) && words[i].len() > 2)
                .collect();
            match candidates.choose(rng) {
                Some(&i) => {
                    let mut w = words.clone();
                    w[i] = "<*>";
                    tagged(&w.join(" "))
                }
                None => tagged(&format!("<*> {gt}")),
            }
        }
        Behaviour::Untagged => format!("Template: {}", styled(gt, profile.styles, rng)),
        Behaviour::Multi => format!(
            "{}\nor, without placeholders:\n{}",
            tagged(&styled(gt, profile.styles, rng)),
            tagged(&m.record.content)
        ),
        Behaviour::SingleTag => format!("<TPL>{}\nThis is the template.", styled(gt, profile.styles, rng)),
        Behaviour::Unclosed => tagged(&gt.replacen("<*>", "<*", 1)),
        Behaviour::Empty => String::new(),
        Behaviour::Echo => prompt.to_string(),
    }
}

fn write_lines(path: &Path, lines: &[String]) {
    let mut f = fs::File::create(path).unwrap();
    for l in lines {
        writeln!(f, "{l}").unwrap();
    }
}

fn main() {
    let out: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay"));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let messages = build_corpus(&mut rng);

    let corpus = Corpus::from_records(
        messages.iter().map(|m| m.record.clone()).collect(),
        Provenance {
            source: "synthetic".into(),
            variant: "replay-fixture".into(),
        },
    )
    .unwrap();
    let corpus_dir = out.join("corpus");
    let _ = fs::remove_dir_all(&corpus_dir);
    corpus.write_to_dir(&corpus_dir).unwrap();
    let mut manifest = String::from("variant = \"replay-fixture\"\n\n[counts]\n");
    for (p, n) in corpus.counts() {
        manifest.push_str(&format!("{p} = {n}\n"));
    }
    fs::write(out.join("manifest.toml"), manifest).unwrap();

    let few = PromptSpec::default_few_shot();
    let specs = [
        (PromptMode::ZeroShot, few.with_mode(PromptMode::ZeroShot).unwrap()),
        (PromptMode::FewShot, few.clone()),
    ];
    fs::create_dir_all(out.join("stores")).unwrap();
    fs::create_dir_all(out.join("providers")).unwrap();

    let profiles = profiles();
    let models: Vec<&str> = {
        let mut m: Vec<&str> = profiles.iter().map(|p| p.model).collect();
        m.dedup();
        m
    };
    for model in models {
        let model_name = format!("{model}-sim-1");
        let mut lines = Vec::new();
        for profile in profiles.iter().filter(|p| p.model == model) {
            let spec = &specs.iter().find(|(m, _)| *m == profile.mode).unwrap().1;
            let dist = WeightedIndex::new(profile.weights).unwrap();
            let mut prng = ChaCha8Rng::seed_from_u64(SEED ^ fnv1a(&format!("{model}/{}", profile.mode)));
            for m in &messages {
                let prompt = render_prompt(spec, &m.record).unwrap();
                let b = BEHAVIOURS[dist.sample(&mut prng)];
                let mut text = answer(m, b, profile, &prompt.text, &mut prng);
                if (model, profile.mode) == OUTLIER_CONFIG && m.record.record_id == OUTLIER_RECORD {
                    text = format!("<TPL>{}</TPL>", "<*>".repeat(OUTLIER_REPEATS));
                }
                let entry = json!({
                    "request_fingerprint": request_fingerprint(&prompt.text, &model_name, DEFAULT_TEMPERATURE),
                    "record_id": m.record.record_id,
                    "mode": profile.mode,
                    "raw_text": text,
                    "status": "ok",
                });
                lines.push(entry.to_string());
            }
        }
        write_lines(&out.join("stores").join(format!("{model}.jsonl")), &lines);
        fs::write(
            out.join("providers").join(format!("{model}.toml")),
            format!(
                "provider_id = \"{model}\"\nendpoint = \"replay:../stores/{model}.jsonl\"\nmodel_name = \"{model_name}\"\ntemperature = 0.2\nmax_concurrency = 4\n"
            ),
        )
        .unwrap();
    }
    println!(
        "wrote {} messages and {} configurations to {}",
        messages.len(),
        profiles.len(),
        out.display()
    );
}

/// Small stable string hash for per-profile seeds.
fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}
