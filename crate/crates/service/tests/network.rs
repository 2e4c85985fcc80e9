use std::future::IntoFuture;
use std::path::PathBuf;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cogload_core::engine::Phase;
use cogload_replay::{parse_log, replay};
use cogload_service::feedback::FeedbackMessage;
use cogload_service::wire::{ControlReply, IngestReply};
use cogload_service::{router, AppState, ServiceConfig};
use futures_util::{SinkExt, StreamExt};
use http_body_util::BodyExt;
use tokio::net::TcpListener;
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

struct Server {
    app: Router,
    addr: std::net::SocketAddr,
}

async fn start(config: ServiceConfig) -> Server {
    let app = router(AppState::new(config));
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(axum::serve(listener, app.clone()).into_future());
    Server { app, addr }
}

impl Server {
    async fn http(&self, method: &str, uri: &str, body: &str) -> (StatusCode, String) {
        let request = Request::builder()
            .method(method)
            .uri(uri)
            .body(Body::from(body.to_string()))
            .unwrap();
        let response = self.app.clone().oneshot(request).await.unwrap();
        let status = response.status();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        (status, String::from_utf8(bytes.to_vec()).unwrap())
    }

    async fn control(&self, body: &str) -> ControlReply {
        let (_, text) = self.http("POST", "/control", body).await;
        serde_json::from_str(&text).unwrap()
    }

    async fn state(&self) -> FeedbackMessage {
        let (status, text) = self.http("GET", "/state", "").await;
        assert_eq!(status, StatusCode::OK);
        serde_json::from_str(&text).unwrap()
    }

    fn url(&self, path: &str) -> String {
        format!("ws://{}{}", self.addr, path)
    }
}

fn fixture_text(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name);
    std::fs::read_to_string(path).unwrap()
}

async fn next_feedback<S>(ws: &mut S) -> FeedbackMessage
where
    S: StreamExt<Item = Result<Message, tokio_tungstenite::tungstenite::Error>> + Unpin,
{
    loop {
        let message = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .unwrap()
            .unwrap()
            .unwrap();
        if let Message::Text(text) = message {
            return serde_json::from_str(&text).unwrap();
        }
    }
}

#[tokio::test]
async fn streamed_fixture_reaches_the_batch_final_score() {
    let server = start(ServiceConfig::default()).await;
    let text = fixture_text("faces.log");
    let batch = replay(&parse_log(text.as_bytes()).unwrap()).unwrap();

    let (mut feedback, _) = tokio_tungstenite::connect_async(server.url("/feedback"))
        .await
        .unwrap();
    let first = next_feedback(&mut feedback).await;
    assert!(first.snapshot);
    assert_eq!(first.v, 1);

    let (mut ingest, _) = tokio_tungstenite::connect_async(server.url("/ingest"))
        .await
        .unwrap();
    let lines: Vec<&str> = text.lines().collect();
    for line in &lines {
        ingest.send(Message::Text((*line).into())).await.unwrap();
    }
    let mut acks = 0;
    for _ in 0..lines.len() {
        let Message::Text(reply) = ingest.next().await.unwrap().unwrap() else {
            panic!("expected a text reply");
        };
        let reply: serde_json::Value = serde_json::from_str(&reply).unwrap();
        assert_eq!(reply["v"], 1);
        match reply["kind"].as_str().unwrap() {
            "ack" => {
                assert_eq!(reply["seq"], acks);
                acks += 1;
            }
            "session" => assert_eq!(reply["session"], "fixture-faces"),
            other => panic!("unexpected reply {other}: {reply}"),
        }
    }
    assert_eq!(acks as usize, lines.len() - 1);

    let stop = server.control(r#"{"v":1,"command":"stop"}"#).await;
    assert!(stop.ok, "{stop:?}");
    assert_eq!(stop.final_score, batch.report.final_score);

    let ended = loop {
        let m = next_feedback(&mut feedback).await;
        assert!(!m.snapshot);
        if m.phase == Phase::Ended {
            break m;
        }
    };
    assert_eq!(ended.session, "fixture-faces");
    assert_eq!(ended.score, batch.report.final_score);
    assert_eq!(server.state().await.score, batch.report.final_score);

    ingest.send(Message::Text(lines[5].into())).await.unwrap();
    let Message::Text(reply) = ingest.next().await.unwrap().unwrap() else {
        panic!("expected a text reply");
    };
    let reply: IngestReply = serde_json::from_str(&reply).unwrap();
    assert!(serde_json::to_string(&reply)
        .unwrap()
        .contains("session_error"));
}

#[tokio::test]
async fn late_and_malformed_frames_get_reasons() {
    let server = start(ServiceConfig::default()).await;
    let (mut ingest, _) = tokio_tungstenite::connect_async(server.url("/ingest"))
        .await
        .unwrap();
    let mut send = async |line: &str| -> serde_json::Value {
        ingest.send(Message::Text(line.into())).await.unwrap();
        let Message::Text(reply) = ingest.next().await.unwrap().unwrap() else {
            panic!("expected a text reply");
        };
        serde_json::from_str(&reply).unwrap()
    };
    assert_eq!(
        send(r#"{"kind":"noise","t":10.0,"dba":50.0}"#).await["kind"],
        "ack"
    );
    let late = send(r#"{"kind":"noise","t":5.0,"dba":50.0}"#).await;
    assert_eq!(late["kind"], "rejected");
    assert!(late["reason"]
        .as_str()
        .unwrap()
        .contains("100 ms reorder limit"));
    assert_eq!(send(r#"{"kind":"noise","t":"x"}"#).await["kind"], "error");
    assert_eq!(send(r#"{"kind":"imu","t":11.0}"#).await["kind"], "skipped");
}

#[tokio::test]
async fn late_subscriber_gets_a_snapshot_first() {
    let server = start(ServiceConfig {
        broadcast_hz: 50.0,
        ..ServiceConfig::default()
    })
    .await;
    let (mut early, _) = tokio_tungstenite::connect_async(server.url("/feedback"))
        .await
        .unwrap();
    assert!(next_feedback(&mut early).await.snapshot);
    let a = next_feedback(&mut early).await;
    let b = next_feedback(&mut early).await;
    assert!(!a.snapshot && !b.snapshot);
    assert!(b.timestamp >= a.timestamp && b.seq > a.seq);

    let (mut late, _) = tokio_tungstenite::connect_async(server.url("/feedback"))
        .await
        .unwrap();
    let first = next_feedback(&mut late).await;
    assert!(first.snapshot);
    assert!(first.seq >= b.seq);
    assert!(!next_feedback(&mut late).await.snapshot);
}

#[tokio::test]
async fn token_guards_the_api_and_assets_are_served() {
    let assets = std::env::temp_dir().join(format!("cogload-assets-{}", std::process::id()));
    std::fs::create_dir_all(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<html>dashboard</html>").unwrap();
    let server = start(ServiceConfig {
        token: Some("s3cret".into()),
        assets: Some(assets.clone()),
        ..ServiceConfig::default()
    })
    .await;
    assert_eq!(
        server.http("GET", "/state", "").await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        server.http("GET", "/state?token=nope", "").await.0,
        StatusCode::UNAUTHORIZED
    );
    assert_eq!(
        server.http("GET", "/state?token=s3cret", "").await.0,
        StatusCode::OK
    );
    let request = Request::get("/state")
        .header("authorization", "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    assert_eq!(
        server.app.clone().oneshot(request).await.unwrap().status(),
        StatusCode::OK
    );
    let (status, body) = server.http("GET", "/index.html", "").await;
    assert_eq!(
        (status, body.as_str()),
        (StatusCode::OK, "<html>dashboard</html>")
    );
    std::fs::remove_dir_all(assets).ok();
}

#[tokio::test]
async fn simulator_round_trip_through_control() {
    let server = start(ServiceConfig {
        broadcast_hz: 50.0,
        ..ServiceConfig::default()
    })
    .await;
    let bad = server.control(r#"{"command":"sim","gaze":"away"}"#).await;
    assert!(!bad.ok);
    assert!(
        server
            .control(r#"{"command":"sim_start","seed":3,"frame_rate":100}"#)
            .await
            .ok
    );
    for body in [
        r#"{"command":"instruction","event":"next"}"#,
        r#"{"command":"instruction","event":"next"}"#,
        r#"{"command":"instruction","event":"check_back"}"#,
        r#"{"command":"instruction","event":"back","steps":2}"#,
        r#"{"command":"sim","gaze":"W2","self_touch":"right"}"#,
    ] {
        let reply = server.control(body).await;
        assert!(reply.ok, "{body}: {reply:?}");
    }
    let bad = server
        .control(r#"{"command":"sim","proximity":"W9"}"#)
        .await;
    assert!(!bad.ok);

    let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
    let state = loop {
        let s = server.state().await;
        if s.instructions.mistakes == 1 && s.focus.as_deref() == Some("W2") {
            break s;
        }
        assert!(
            tokio::time::Instant::now() < deadline,
            "simulator never got there: {s:?}"
        );
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    assert_eq!(state.instructions.check_backs, 1);
    assert!(state.attention["W2"] > 50.0);
    assert!(server.control(r#"{"command":"sim_stop"}"#).await.ok);
    let stop = server.control(r#"{"command":"stop"}"#).await;
    assert!(stop.ok && stop.final_score.is_some());
}

#[tokio::test]
async fn multi_session_slots_are_independent() {
    let server = start(ServiceConfig {
        multi_session: true,
        ..ServiceConfig::default()
    })
    .await;
    let (_, text) = server
        .http(
            "POST",
            "/control?session=a",
            r#"{"command":"start","session_id":"alpha"}"#,
        )
        .await;
    let reply: ControlReply = serde_json::from_str(&text).unwrap();
    assert_eq!(reply.session, "alpha");
    let (_, text) = server
        .http("POST", "/control?session=b", r#"{"command":"stop"}"#)
        .await;
    assert!(serde_json::from_str::<ControlReply>(&text).unwrap().ok);
    let (_, text) = server
        .http(
            "POST",
            "/control?session=a",
            r#"{"command":"instruction","event":"next"}"#,
        )
        .await;
    let reply: ControlReply = serde_json::from_str(&text).unwrap();
    assert!(reply.ok && reply.seq == Some(0), "{reply:?}");
    let (_, text) = server
        .http(
            "POST",
            "/control?session=b",
            r#"{"command":"instruction","event":"next"}"#,
        )
        .await;
    assert!(!serde_json::from_str::<ControlReply>(&text).unwrap().ok);
}
