//! Shared fixtures for the integration tests: a synthetic six-ad corpus
//! with frame directories and subtitles, the matching mock backend table,
//! and helpers for driving the binary and diffing output trees.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use storyverb_core::gateway::{KnowledgeFields, MockFixture};
use storyverb_core::media::{encode_png, Frame};
use storyverb_core::model::sha256_hex;
use storyverb_core::synth;

/// One synthetic advertisement: enough to write its videos.jsonl line,
/// labels.jsonl line, frame directory, and mock responses consistently.
pub struct FixtureAd {
    pub video_id: &'static str,
    pub title: &'static str,
    pub channel: Option<&'static str>,
    pub fps: f64,
    pub n_frames: usize,
    pub cuts: &'static [usize],
    pub seed: u64,
    pub topic: &'static str,
    pub emotions: &'static [&'static str],
    pub actions: &'static [&'static str; 5],
    pub reasons: &'static [&'static str; 5],
    pub subtitles: Option<&'static str>,
}

impl FixtureAd {
    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / self.fps
    }

    pub fn frames(&self) -> Vec<Frame> {
        synth::cut_clip(self.fps, 32, 32, self.n_frames, self.cuts, self.seed)
    }
}

/// With default settings, a short ad's keyframes are exactly its cut
/// frames: cuts score ~113 against the threshold of 50, everything else 0.
pub fn ads() -> Vec<FixtureAd> {
    vec![
        FixtureAd {
            video_id: "ad01",
            title: "Spring Sale Event",
            channel: Some("AcmeSoap"),
            fps: 4.0,
            n_frames: 16,
            cuts: &[5, 11],
            seed: 11,
            topic: "cleaning",
            emotions: &["cheerful", "thrifty"],
            actions: &[
                "Buy Acme bath soap this week.",
                "Stock up on soap before Sunday.",
                "Visit the Acme spring sale.",
                "Grab the half price soap bundles.",
                "Shop the bath aisle at Acme.",
            ],
            reasons: &[
                "Because every bar is half price this week.",
                "Because the spring sale ends on Sunday.",
                "Because the family pack costs less than ever.",
                "Because gentle soap keeps skin healthy.",
                "Because shelves are emptying fast.",
            ],
            subtitles: Some(
                "1\n00:00:00,000 --> 00:00:02,000\nSpring savings arrive at Acme.\n\n2\n00:00:02,000 --> 00:00:04,000\nEvery bar and bottle is half price this week.\n",
            ),
        },
        FixtureAd {
            video_id: "ad02",
            title: "Fresh Picks Delivered",
            channel: Some("GreenGrocer"),
            fps: 4.0,
            n_frames: 16,
            cuts: &[8],
            seed: 22,
            topic: "shopping",
            emotions: &["eager", "loving"],
            actions: &[
                "Order a GreenGrocer produce box.",
                "Subscribe to weekly deliveries.",
                "Pick your first box online.",
                "Try the farm-to-door service.",
                "Add seasonal fruit to your order.",
            ],
            reasons: &[
                "Because the produce arrives within a day of harvest.",
                "Because subscribers save on every box.",
                "Because local farms get a fair price.",
                "Because the first delivery is free.",
                "Because the menu changes with the season.",
            ],
            subtitles: Some(
                "1\n00:00:00,000 --> 00:00:02,500\nPicked this morning, on your doorstep tonight.\n\n2\n00:00:02,500 --> 00:00:04,000\nYour first box ships free.\n",
            ),
        },
        FixtureAd {
            video_id: "ad03",
            title: "Drive The New Line",
            channel: Some("Cityline Motors"),
            fps: 4.0,
            n_frames: 20,
            cuts: &[4, 9, 14],
            seed: 33,
            topic: "cars",
            emotions: &["confident", "amazed"],
            actions: &[
                "Test drive the new Cityline sedan.",
                "Visit the Cityline Motors showroom.",
                "Book a weekend test drive.",
                "Explore the new city sedan line.",
                "Trade in your old car at Cityline.",
            ],
            reasons: &[
                "Because zero percent financing ends this month.",
                "Because the sedan parks itself downtown.",
                "Because the trade-in bonus doubles this week.",
                "Because the new line seats five with room to spare.",
                "Because every sedan ships with five years of service.",
            ],
            subtitles: Some(
                "1\n00:00:00,000 --> 00:00:02,000\nThe new line has arrived.\n\n2\n00:00:02,000 --> 00:00:05,000\nZero percent financing through the end of the month.\n",
            ),
        },
        FixtureAd {
            video_id: "ad04",
            title: "Protect What Matters",
            channel: Some("ShieldCover"),
            fps: 4.0,
            n_frames: 12,
            cuts: &[6],
            seed: 44,
            topic: "financial",
            emotions: &["afraid", "calm"],
            actions: &[
                "Get a ShieldCover quote today.",
                "Insure your home with ShieldCover.",
                "Call a ShieldCover agent.",
                "Review your current coverage.",
                "Switch your policy to ShieldCover.",
            ],
            reasons: &[
                "Because cover starts at nine dollars a month.",
                "Because storms never announce themselves.",
                "Because claims settle within two days.",
                "Because the first month is free.",
                "Because one policy covers the whole family.",
            ],
            subtitles: Some(
                "1\n00:00:00,000 --> 00:00:03,000\nStorms never announce themselves. ShieldCover starts at nine dollars.\n",
            ),
        },
        FixtureAd {
            video_id: "ad05",
            title: "Weekend Getaway Deals",
            channel: None,
            fps: 4.0,
            n_frames: 16,
            cuts: &[3, 12],
            seed: 55,
            topic: "travel",
            emotions: &["amused", "eager"],
            actions: &[
                "Book a weekend getaway by Friday.",
                "Browse the getaway deals online.",
                "Pack for a two night escape.",
                "Reserve a lakeside cabin.",
                "Plan your next city break.",
            ],
            reasons: &[
                "Because every deal expires on Friday.",
                "Because two nights cost less than one elsewhere.",
                "Because the cabins sit right on the water.",
                "Because breakfast is included all weekend.",
                "Because the city lights are an hour away.",
            ],
            subtitles: None,
        },
        FixtureAd {
            video_id: "ad06",
            title: "Campus Tour Special",
            channel: Some("Statewide U"),
            fps: 1.0,
            n_frames: 150,
            cuts: &[50, 100],
            seed: 66,
            topic: "education",
            emotions: &["educated", "inspired"],
            actions: &[
                "Join the Statewide U campus tour.",
                "Apply to Statewide U this fall.",
                "Sign up for the open lecture day.",
                "Meet the faculty on tour day.",
                "Explore the campus labs.",
            ],
            reasons: &[
                "Because applications close at the end of fall.",
                "Because the tour shows every lab and lecture hall.",
                "Because tuition grants cover half the first year.",
                "Because graduates land jobs within six months.",
                "Because the faculty teach every first-year class.",
            ],
            subtitles: Some(
                "1\n00:00:00,000 --> 00:00:50,000\nWalk the quad with a current student.\n\n2\n00:00:50,000 --> 00:01:40,000\nSit in on a first-year lecture and tour the labs.\n\n3\n00:01:40,000 --> 00:02:30,000\nApplications for the fall close soon.\n",
            ),
        },
    ]
}

/// Tasks the end-to-end corpus can run: retrieval needs 29 distractors and
/// five other ads supply only 25, so the two retrieval tasks are exercised
/// separately on constructed pools.
pub const E2E_TASKS: &str = "topic,emotion,emotion_clubbed,action_gen,reason_gen,reason_given_action";

fn brand_entry(company: Option<&str>, product_line: &str, description: &str) -> KnowledgeFields {
    KnowledgeFields {
        company: company.map(str::to_string),
        product_line: Some(product_line.to_string()),
        description: Some(description.to_string()),
    }
}

/// The mock table for the six-ad corpus. Short-ad captions use exact
/// per-frame keys so a keyframe-selection regression fails loudly instead
/// of silently matching a wildcard.
pub fn mock_fixture() -> MockFixture {
    let mut responses = BTreeMap::new();
    let mut add = |key: &str, value: &str| {
        responses.insert(key.to_string(), value.to_string());
    };

    add("caption:ad01/5", "a woman lifts a bar of soap from a wooden shelf");
    add("objects:ad01/5", "soap, shelf, hand");
    add("caption:ad01/11", "bubbles rise over a bright bathroom sink");
    add("objects:ad01/11", "sink, bubbles");
    add("caption:ad02/8", "a courier hands a produce box to a smiling customer");
    add("objects:ad02/8", "box, courier, door");
    add("caption:ad03/4", "a silver sedan turns onto a sunny boulevard");
    add("objects:ad03/4", "sedan, street");
    add("caption:ad03/9", "a dashboard screen shows the car parking itself");
    add("objects:ad03/9", "dashboard, screen");
    add("caption:ad03/14", "a family loads luggage into the open trunk");
    add("objects:ad03/14", "family, luggage, trunk");
    add("caption:ad04/6", "an agent reviews a policy with a young couple");
    add("objects:ad04/6", "agent, couple, table");
    add("caption:ad05/3", "a cabin porch overlooks a calm morning lake");
    add("objects:ad05/3", "cabin, lake, porch");
    add("caption:ad05/12", "friends toast sparkling drinks at a rooftop bar");
    add("objects:ad05/12", "friends, drinks, rooftop");
    add("caption:ad06/*", "students fill a tiered lecture hall");
    add("objects:ad06/*", "students, lecture hall, screens");

    add("ocr:ad01/0", "ACME SPRING SALE");
    add("ocr:ad01/10", "Half price this week!");
    add("ocr:ad02/0", "FRESH PICKS");
    add("ocr:ad02/10", "Delivered daily.");
    add("ocr:ad03/0", "THE NEW LINE");
    add("ocr:ad03/10", "0% financing.");
    add("ocr:ad04/0", "PROTECT WHAT MATTERS");
    add("ocr:ad04/10", "Cover from $9.");
    add("ocr:ad05/0", "WEEKEND GETAWAYS");
    add("ocr:ad05/10", "Book by Friday.");

    add(
        "story:ad01",
        "Acme opens its spring sale in a bright bathroom. A woman lifts a bar of Acme soap from a wooden shelf while bubbles rise over the sink, and the on-screen text promises half price all week. The narrator repeats the offer over every shot, urging families to stock up on bath soap now, because the discount ends on Sunday and the shelves are emptying fast.",
    );
    add(
        "story:ad02",
        "A GreenGrocer courier carries a produce box up a porch at dusk and hands it to a smiling customer. The voiceover explains that everything inside was picked this morning and that the first box ships free. Subscribers, it says, save on every delivery while local farms get a fair price, so viewers are invited to order their first box online tonight.",
    );
    add(
        "story:ad03",
        "A silver Cityline sedan turns onto a sunny boulevard while the narrator introduces the new line. A dashboard screen shows the car parking itself downtown, and a family loads luggage into the open trunk for a weekend away. With zero percent financing ending this month, the ad closes by inviting viewers to book a test drive at the Cityline Motors showroom.",
    );
    add(
        "story:ad04",
        "An insurance agent reviews a policy with a young couple at their kitchen table. The narrator reminds viewers that storms never announce themselves and that ShieldCover protection starts at nine dollars a month, with claims settled in two days. The ad asks homeowners to call for a quote today and switch before the next storm season.",
    );
    add(
        "story:ad05",
        "A cabin porch overlooks a calm morning lake, then the scene jumps to friends toasting sparkling drinks at a rooftop bar. On-screen text lists weekend getaway deals that expire on Friday, with breakfast included and cabins right on the water. Viewers are told to book a two night escape before the deals are gone.",
    );
    add(
        "story:ad06",
        "Students fill a tiered lecture hall as a campus guide walks prospective applicants through a day at Statewide U. The tour moves from the quad to a first-year lecture to the open labs, while the guide explains that tuition grants cover half the first year and that graduates land jobs within six months. The film ends with a reminder that fall applications close soon and an invitation to join the next campus tour.",
    );

    add("task:topic:ad01", "cleaning");
    add("task:topic:ad02", "shopping");
    add("task:topic:ad03", "cars");
    add("task:topic:ad04", "beauty");
    add("task:topic:ad05", "travel");
    add("task:topic:ad06", "education");

    add("task:emotion:ad01", "thrifty");
    add("task:emotion:ad02", "loving");
    add("task:emotion:ad03", "proud");
    add("task:emotion:ad04", "afraid");
    add("task:emotion:ad05", "amused");
    add("task:emotion:ad06", "educated");

    add("task:emotion_clubbed:ad01", "joy");
    add("task:emotion_clubbed:ad02", "trust");
    add("task:emotion_clubbed:ad03", "joy");
    add("task:emotion_clubbed:ad04", "fear");
    add("task:emotion_clubbed:ad05", "anticipation");
    add("task:emotion_clubbed:ad06", "trust");

    add("task:action_gen:ad01", "Buy Acme bath soap while the sale lasts.");
    add("task:action_gen:ad02", "Order your first GreenGrocer produce box online.");
    add("task:action_gen:ad03", "Book a test drive of the new Cityline sedan.");
    add("task:action_gen:ad04", "Call ShieldCover for a quote today.");
    add("task:action_gen:ad05", "Book a weekend getaway before Friday.");
    add("task:action_gen:ad06", "Join the Statewide U campus tour.");

    add("task:reason_gen:ad01", "Because every bar costs half this week.");
    add("task:reason_gen:ad02", "Because the first box is free and the produce is fresh.");
    add("task:reason_gen:ad03", "Because zero percent financing ends this month.");
    add("task:reason_gen:ad04", "Because cover starts at nine dollars a month.");
    add("task:reason_gen:ad05", "Because the deals expire on Friday.");
    add("task:reason_gen:ad06", "Because fall applications close soon.");

    add("task:reason_given_action:ad01", "Because the spring discount ends on Sunday.");
    add("task:reason_given_action:ad02", "Because the produce arrives a day after harvest.");
    add("task:reason_given_action:ad03", "Because the financing offer ends this month.");
    add("task:reason_given_action:ad04", "Because claims settle within two days.");
    add("task:reason_given_action:ad05", "Because every deal expires on Friday.");
    add("task:reason_given_action:ad06", "Because the tour shows every lab and lecture hall.");

    let mut brand = BTreeMap::new();
    brand.insert(
        "AcmeSoap".to_string(),
        brand_entry(Some("Acme"), "bath soap", "family soap maker since 1952"),
    );
    // no company field: the branded instruction falls back to the channel
    brand.insert(
        "GreenGrocer".to_string(),
        brand_entry(None, "produce boxes", "farm-to-door grocery service"),
    );
    brand.insert(
        "Cityline Motors".to_string(),
        brand_entry(Some("Cityline"), "city sedans", "regional car dealership"),
    );
    // ShieldCover is deliberately absent: lookup resolves to empty fields

    MockFixture {
        responses,
        brand,
        llm_by_digest: BTreeMap::new(),
        llm_rules: Vec::new(),
        llm_default: None,
        fail_times: BTreeMap::new(),
    }
}

pub fn write_frames(dir: &Path, frames: &[Frame]) {
    std::fs::create_dir_all(dir).expect("create frames dir");
    for frame in frames {
        let path = dir.join(format!("{:06}.png", frame.index));
        std::fs::write(&path, encode_png(frame)).expect("write frame png");
    }
}

/// Writes the whole fixture tree: config.toml, mock.json, and the video_ads
/// dataset with frame directories and subtitle sidecars.
pub fn build_ads_corpus(root: &Path) {
    let dataset = root.join("video_ads");
    std::fs::create_dir_all(&dataset).expect("create dataset dir");

    let mut videos = String::new();
    let mut labels = String::new();
    for ad in ads() {
        let asset = synth::asset(
            ad.video_id,
            ad.duration_s(),
            ad.fps,
            ad.title,
            ad.channel,
            true,
        );
        videos.push_str(&serde_json::to_string(&asset).expect("asset jsonl"));
        videos.push('\n');
        labels.push_str(
            &serde_json::json!({
                "video_id": ad.video_id,
                "topic": ad.topic,
                "emotions": ad.emotions,
                "actions": ad.actions,
                "reasons": ad.reasons,
            })
            .to_string(),
        );
        labels.push('\n');

        write_frames(&dataset.join(ad.video_id).join("frames"), &ad.frames());
        if let Some(srt) = ad.subtitles {
            std::fs::write(dataset.join(ad.video_id).join("subtitles.srt"), srt)
                .expect("write subtitles");
        }
    }
    std::fs::write(dataset.join("videos.jsonl"), videos).expect("write videos.jsonl");
    std::fs::write(dataset.join("labels.jsonl"), labels).expect("write labels.jsonl");

    let fixture = serde_json::to_string_pretty(&mock_fixture()).expect("mock fixture json");
    std::fs::write(root.join("mock.json"), fixture).expect("write mock.json");

    // dataset root and fixture are deliberately relative: Config::load
    // resolves them against the config file's directory
    let config = "\
[datasets]\n\
video_ads = \"video_ads\"\n\
\n\
[backends.mock]\n\
kind = \"mock\"\n\
fixture = \"mock.json\"\n\
\n\
[stages]\n\
captions = \"mock\"\n\
ocr = \"mock\"\n\
metadata = \"mock\"\n\
story = \"mock\"\n\
tasks = \"mock\"\n";
    std::fs::write(root.join("config.toml"), config).expect("write config.toml");
}

pub fn config_path(root: &Path) -> PathBuf {
    root.join("config.toml")
}

/// Command for the compiled binary with a pinned timestamp so manifests are
/// byte-stable across runs.
pub fn storyverb() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_storyverb"));
    cmd.env("SOURCE_DATE_EPOCH", "1735689600");
    cmd.env("RUST_LOG", "warn");
    cmd
}

pub fn run_ok(cmd: &mut Command) {
    let output = cmd.output().expect("spawn storyverb");
    assert!(
        output.status.success(),
        "command failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
}

/// Relative path -> content digest for every file under `dir`.
pub fn tree_digest(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(cur) = stack.pop() {
        for entry in std::fs::read_dir(&cur).expect("read output dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(dir)
                    .expect("path under root")
                    .display()
                    .to_string();
                let bytes = std::fs::read(&path).expect("read output file");
                out.insert(rel, sha256_hex(&bytes));
            }
        }
    }
    out
}
