use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use phonostudio::audio::{decode_wav, encode_wav, peak_level, Waveform};
use phonostudio::lexicon::toy::{toy_lexicon, toy_spec};
use phonostudio::lexicon::{build_vocabularies, Lexicon, LexiconEntry, Source};
use phonostudio::models::Seq2SeqModel;
use phonostudio::models::{AnyGenome, CnnGenome, Genome};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};
use studio::{parse_prompts, AppState, Session, SessionConfig, Transcriber};
use tempfile::TempDir;

const RATE: u32 = 16_000;

fn tone(seconds: f64, amp: f64, freq: f64) -> Vec<f64> {
    let n = (seconds * RATE as f64).round() as usize;
    (0..n)
        .map(|i| amp * (2.0 * PI * freq * i as f64 / RATE as f64).sin())
        .collect()
}

fn wav(samples: Vec<f64>, rate: u32) -> Vec<u8> {
    encode_wav(&Waveform::new(samples, rate, 16).unwrap(), 16).unwrap()
}

fn lexicon() -> Lexicon {
    let entry = LexiconEntry {
        word: "cat".into(),
        pronunciations: vec![vec!["k".into(), "æ".into(), "t".into()]],
        source: Source::WiktionaryTsv,
    };
    let mut entries = toy_lexicon(60, 8, 3).entries().to_vec();
    entries.push(entry);
    Lexicon::from_entries(toy_spec(), entries)
}

fn transcriber(cfg: &SessionConfig, with_model: bool) -> Transcriber {
    let mut t = Transcriber::new(&cfg.strip_chars);
    if with_model {
        let lex = lexicon();
        let (g, p) = build_vocabularies(&lex).unwrap();
        let genome = AnyGenome::Cnn(CnnGenome::from_gene_indices(&[0; 9]).unwrap());
        let model = Seq2SeqModel::new(genome, g, p, 24, 4).unwrap();
        t.add_language("en", model, Some(&lex));
    }
    t
}

struct Server {
    base: String,
    client: Client,
    dir: TempDir,
}

impl Server {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn put_wav(&self, i: usize, body: Vec<u8>) -> (StatusCode, Value) {
        let r = self
            .client
            .put(self.url(&format!("/api/recordings/{i}")))
            .header("content-type", "audio/wav")
            .body(body)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .client
            .post(self.url(path))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    fn storage(&self) -> &Path {
        self.dir.path()
    }
}

async fn start_with(
    prompts: &str,
    with_model: bool,
    dir: TempDir,
    tweak: impl FnOnce(&mut SessionConfig),
) -> Server {
    let mut cfg = SessionConfig::new(dir.path());
    tweak(&mut cfg);
    let t = transcriber(&cfg, with_model);
    let session = Session::open(cfg, parse_prompts(prompts).unwrap()).unwrap();
    let state = AppState::new(session, t);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(studio::serve(listener, Arc::clone(&state)));
    Server {
        base,
        client: Client::new(),
        dir,
    }
}

async fn start(with_model: bool) -> Server {
    start_with(
        "the cat sat\nCat cat.\nbig dog",
        with_model,
        TempDir::new().unwrap(),
        |_| {},
    )
    .await
}

#[tokio::test]
async fn fresh_session_lists_prompts_without_recordings() {
    let s = start(false).await;
    let (code, prompts) = s.get("/api/prompts").await;
    assert_eq!(code, StatusCode::OK);
    let prompts = prompts.as_array().unwrap();
    assert_eq!(prompts.len(), 3);
    assert!(prompts.iter().all(|p| p["status"] == "none"));
    assert_eq!(prompts[1]["text"], "Cat cat.");
    let (code, summary) = s.get("/api/session").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(summary["prompt_count"], 3);
    assert_eq!(summary["recorded"], 0);
    let (code, body) = s.get("/api/prompts/99").await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
}

#[tokio::test]
async fn upload_meta_matches_stored_file() {
    let s = start(false).await;
    let (code, meta) = s.put_wav(0, wav(tone(2.0, 0.25, 440.0), RATE)).await;
    assert_eq!(code, StatusCode::OK, "{meta}");
    let duration = meta["duration_s"].as_f64().unwrap();
    assert!(
        (duration - 2.0).abs() <= 1.0 / RATE as f64,
        "duration {duration}"
    );
    assert_eq!(meta["file"], "00000.wav");
    assert_eq!(meta["normalized"], true);

    let stored = decode_wav(&std::fs::read(s.storage().join("00000.wav")).unwrap()).unwrap();
    let oracle = peak_level(&stored).unwrap();
    let peak = meta["peak_dbfs"].as_f64().unwrap();
    assert!((peak - -3.0).abs() <= 1e-3, "peak {peak}");
    assert!((peak - oracle).abs() < 1e-12);
    assert_eq!(meta["samples"].as_u64().unwrap() as usize, stored.len());

    let (_, prompt) = s.get("/api/prompts/0").await;
    assert_eq!(prompt["status"], "recorded");
    assert_eq!(s.get("/api/prompts/1").await.1["status"], "none");

    let audio = s
        .client
        .get(s.url("/api/recordings/0/audio"))
        .send()
        .await
        .unwrap();
    assert_eq!(audio.headers()["content-type"], "audio/wav");
    assert_eq!(
        audio.bytes().await.unwrap().to_vec(),
        std::fs::read(s.storage().join("00000.wav")).unwrap()
    );
}

#[tokio::test]
async fn trimming_removes_leading_and_trailing_silence() {
    let s = start(false).await;
    let mut samples = vec![0.0; RATE as usize];
    samples.extend(tone(1.0, 0.5, 300.0));
    samples.extend(vec![0.0; RATE as usize]);
    let (code, meta) = s.put_wav(2, wav(samples, RATE)).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(meta["trimmed"], true);
    let duration = meta["duration_s"].as_f64().unwrap();
    // One second of tone plus a 100 ms guard on each side.
    assert!((duration - 1.2).abs() < 0.011, "duration {duration}");
}

#[tokio::test]
async fn processing_flags_follow_the_config() {
    let s = start_with("one", false, TempDir::new().unwrap(), |c| {
        c.auto_trim = false;
        c.auto_normalize = false;
    })
    .await;
    let mut samples = vec![0.0; 8000];
    samples.extend(tone(0.5, 0.25, 300.0));
    let (_, meta) = s.put_wav(0, wav(samples.clone(), RATE)).await;
    assert_eq!(meta["trimmed"], false);
    assert_eq!(meta["normalized"], false);
    assert_eq!(meta["samples"].as_u64().unwrap() as usize, samples.len());
    let peak = meta["peak_dbfs"].as_f64().unwrap();
    assert!((peak - 20.0 * 0.25f64.log10()).abs() < 1e-3);
}

#[tokio::test]
async fn silent_upload_is_kept_whole_and_spectrogram_sits_at_the_floor() {
    let s = start(false).await;
    let (code, meta) = s.put_wav(0, wav(vec![0.0; 4000], RATE)).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(meta["samples"], 4000);
    assert_eq!(meta["trimmed"], false);
    assert_eq!(meta["normalized"], false);
    assert_eq!(meta["peak_dbfs"], -120.0);
    let (code, spec) = s.get("/api/recordings/0/spectrogram").await;
    assert_eq!(code, StatusCode::OK);
    let floor = 20.0 * 1e-10f64.log10();
    let rows = spec["db"].as_array().unwrap();
    assert!(!rows.is_empty());
    for row in rows {
        assert!(row
            .as_array()
            .unwrap()
            .iter()
            .all(|v| (v.as_f64().unwrap() - floor).abs() < 1e-9));
    }
}

#[tokio::test]
async fn rejected_uploads() {
    let s = start(false).await;
    let (code, body) = s.put_wav(0, wav(tone(0.5, 0.5, 440.0), 44_100)).await;
    assert_eq!(code, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "rate_mismatch");
    assert!(!s.storage().join("00000.wav").exists());

    let (code, body) = s.put_wav(0, b"RIFF....WAVEjunk".to_vec()).await;
    assert_eq!(code, StatusCode::UNSUPPORTED_MEDIA_TYPE, "{body}");

    let r = s
        .client
        .put(s.url("/api/recordings/0"))
        .header("content-type", "text/plain")
        .body(wav(tone(0.5, 0.5, 440.0), RATE))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNSUPPORTED_MEDIA_TYPE);

    assert_eq!(
        s.put_wav(7, wav(tone(0.5, 0.5, 440.0), RATE)).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(s.get("/api/recordings/1").await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        s.get("/api/recordings/1/waveform").await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        s.get("/api/recordings/1/spectrogram").await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        s.post("/api/recordings/1/safe-copy", json!({})).await.0,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn display_data() {
    let s = start(false).await;
    let (_, meta) = s.put_wav(0, wav(tone(1.0, 0.5, 1000.0), RATE)).await;
    let samples = meta["samples"].as_u64().unwrap();

    let (code, w) = s.get("/api/recordings/0/waveform?points=800").await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(w["pairs"].as_array().unwrap().len(), 800);
    assert_eq!(w["samples"], samples);
    for pair in w["pairs"].as_array().unwrap() {
        let (lo, hi) = (pair[0].as_f64().unwrap(), pair[1].as_f64().unwrap());
        assert!(-1.0 <= lo && lo <= hi && hi <= 1.0);
    }
    assert_eq!(
        s.get("/api/recordings/0/waveform").await.1["pairs"]
            .as_array()
            .unwrap()
            .len(),
        800
    );
    assert_eq!(
        s.get("/api/recordings/0/waveform?points=0").await.0,
        StatusCode::BAD_REQUEST
    );

    let (code, spec) = s
        .get("/api/recordings/0/spectrogram?window=256&hop=128")
        .await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(spec["bins"], 129);
    let frames = (samples as usize - 256) / 128 + 1;
    assert_eq!(spec["frames"], frames);
    assert_eq!(spec["db"].as_array().unwrap().len(), frames);
    assert_eq!(spec["db"][0].as_array().unwrap().len(), 129);
    let (_, spec) = s.get("/api/recordings/0/spectrogram").await;
    assert_eq!(spec["bins"], 257);
    assert_eq!(
        s.get("/api/recordings/0/spectrogram?window=300").await.0,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn safe_copies_survive_re_recording() {
    let s = start(false).await;
    s.put_wav(1, wav(tone(1.0, 0.5, 440.0), RATE)).await;
    let first_take = std::fs::read(s.storage().join("00001.wav")).unwrap();

    let (code, a) = s.post("/api/recordings/1/safe-copy", json!({})).await;
    assert_eq!(code, StatusCode::CREATED);
    let (_, b) = s.post("/api/recordings/1/safe-copy", json!({})).await;
    let (fa, fb) = (a["file"].as_str().unwrap(), b["file"].as_str().unwrap());
    assert_ne!(fa, fb);
    assert!(fa.starts_with("00001.safe.") && fa.ends_with(".wav"));
    assert_eq!(s.get("/api/prompts/1").await.1["status"], "safe-copied");

    let (code, meta) = s.put_wav(1, wav(tone(0.5, 0.1, 880.0), RATE)).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(meta["safe_copies"].as_array().unwrap().len(), 2);
    assert_ne!(
        std::fs::read(s.storage().join("00001.wav")).unwrap(),
        first_take
    );
    for f in [fa, fb] {
        assert_eq!(std::fs::read(s.storage().join(f)).unwrap(), first_take);
    }
}

#[tokio::test]
async fn transcription_prefers_the_lexicon_and_falls_back_to_the_model() {
    let s = start(true).await;
    let (code, out) = s
        .post(
            "/api/transcribe",
            json!({"text": "Cat zzqx", "language": "en"}),
        )
        .await;
    assert_eq!(code, StatusCode::OK, "{out}");
    let words = out["words"].as_array().unwrap();
    assert_eq!(words[0]["word"], "cat");
    assert_eq!(words[0]["phonemes"], json!(["k", "æ", "t"]));
    assert_eq!(words[0]["provenance"], "lexicon");
    assert_eq!(words[1]["provenance"], "model");

    let (_, out) = s
        .post(
            "/api/transcribe",
            json!({"text": "Cat cat.", "language": "en"}),
        )
        .await;
    let words = out["words"].as_array().unwrap();
    assert_eq!(words.len(), 2);
    assert_eq!(words[0], words[1]);

    let (_, a) = s
        .post(
            "/api/transcribe",
            json!({"text": "zzqx blorft", "language": "en"}),
        )
        .await;
    let (_, b) = s
        .post(
            "/api/transcribe",
            json!({"text": "zzqx blorft", "language": "en"}),
        )
        .await;
    assert_eq!(a, b);

    let (code, body) = s
        .post("/api/transcribe", json!({"text": "cat", "language": "xx"}))
        .await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
}

#[tokio::test]
async fn transcription_without_models_is_unavailable() {
    let s = start(false).await;
    let (code, body) = s
        .post("/api/transcribe", json!({"text": "cat", "language": "en"}))
        .await;
    assert_eq!(code, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "service_unavailable");
}

#[tokio::test]
async fn transcriptions_and_recordings_persist_across_restarts() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().to_path_buf();
    let prompts = "the cat sat\nCat cat.\nbig dog";
    let s = start_with(prompts, true, dir, |_| {}).await;
    let (code, out) = s
        .post(
            "/api/transcribe",
            json!({"language": "en", "prompt_index": 1}),
        )
        .await;
    assert_eq!(code, StatusCode::OK, "{out}");
    s.put_wav(2, wav(tone(0.5, 0.5, 440.0), RATE)).await;
    let (_, prompt) = s.get("/api/prompts/1").await;
    assert_eq!(
        prompt["phonetic"],
        json!([["k", "æ", "t"], ["k", "æ", "t"]])
    );
    let session_id = s.get("/api/session").await.1["session_id"].clone();

    let manifest: Value =
        serde_json::from_slice(&std::fs::read(path.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["prompts"][1]["phonetic"], prompt["phonetic"]);

    let reopened =
        Session::open(SessionConfig::new(&path), parse_prompts(prompts).unwrap()).unwrap();
    assert_eq!(
        serde_json::to_value(&reopened.session_id).unwrap(),
        session_id
    );
    assert_eq!(
        reopened.prompts[1].phonetic,
        Some(vec![vec!["k".to_string(), "æ".into(), "t".into()]; 2])
    );
    assert!(reopened.recordings.contains_key(&2));
    drop(s);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_uploads_all_land_in_the_manifest() {
    let s = Arc::new(start_with("a\nb\nc\nd\ne\nf", false, TempDir::new().unwrap(), |_| {}).await);
    let tasks: Vec<_> = (0..6)
        .map(|i| {
            let s = Arc::clone(&s);
            tokio::spawn(async move {
                s.put_wav(i, wav(tone(0.2, 0.5, 200.0 + 50.0 * i as f64), RATE))
                    .await
                    .0
            })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(s.storage().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["recordings"].as_array().unwrap().len(), 6);
    assert_eq!(s.get("/api/session").await.1["recorded"], 6);
}
