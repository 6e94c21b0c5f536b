use std::fs;
use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use bridge_gan::explore::FeasibilityReport;
use bridge_gan::nn::checkpoint::{save, MANIFEST_FILE};
use bridge_gan::nn::{BlockOptions, CheckpointMeta, Network, NetworkConfig, Profile, SeedLineage};
use bridge_gan::GrayImage;
use bridge_gan_service::{
    router, ApiError, AppState, EncodedImage, GridPage, ModelInfo, Registry, ServiceError,
    TagLabel, TagRecord,
};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn write_generator(dir: &Path, profile: Profile, seed: u64, step: u64) {
    let net = Network::build(
        NetworkConfig::generator(profile, BlockOptions::default()),
        seed,
    )
    .unwrap();
    let meta = CheckpointMeta {
        step,
        epoch: None,
        seed: SeedLineage {
            global_seed: seed,
            init_seed: seed,
            resumed_from: None,
        },
        train_config: None,
    };
    save(dir, &net, meta).unwrap();
}

fn models_dir(root: &Path) -> std::path::PathBuf {
    let models = root.join("models");
    write_generator(&models.join("a"), Profile::Reduced, 1, 10);
    write_generator(&models.join("b"), Profile::Reduced, 2, 20);
    models
}

struct Reply {
    status: StatusCode,
    content_type: String,
    body: Vec<u8>,
}

impl Reply {
    fn json<T: serde::de::DeserializeOwned>(&self) -> T {
        serde_json::from_slice(&self.body)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.body)))
    }
}

async fn send(app: &Router, req: Request<Body>) -> Reply {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    Reply {
        status,
        content_type,
        body,
    }
}

async fn get(app: &Router, uri: &str) -> Reply {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    send(app, req).await
}

fn open(models: &Path, tags: &Path) -> (Router, Vec<String>) {
    let (state, _) = AppState::open(models, tags).unwrap();
    let ids = state.registry().ids();
    (router(state), ids)
}

#[tokio::test]
async fn models_have_stable_ids_and_skip_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let models = models_dir(dir.path());
    write_generator(&models.join("broken"), Profile::Reduced, 3, 0);
    fs::write(models.join("broken").join(MANIFEST_FILE), "{}").unwrap();

    let (registry, diagnostics) = Registry::load(&models).unwrap();
    assert_eq!(registry.len(), 2);
    assert_eq!(diagnostics.len(), 1);
    assert!(diagnostics[0].path.ends_with("broken"));

    let (app, ids) = open(&models, &dir.path().join("tags.jsonl"));
    let listed: Vec<ModelInfo> = get(&app, "/api/models").await.json();
    assert_eq!(listed.iter().map(|m| m.id.clone()).collect::<Vec<_>>(), ids);
    assert!(listed
        .iter()
        .all(|m| m.id.len() == 12 && m.canvas.width == 128 && m.canvas.height == 32));
    let mut steps: Vec<u64> = listed.iter().map(|m| m.step).collect();
    steps.sort();
    assert_eq!(steps, vec![10, 20]);

    let (_, again) = open(&models, &dir.path().join("tags.jsonl"));
    assert_eq!(ids, again);
}

#[test]
fn refuses_to_start_without_models() {
    let dir = tempfile::tempdir().unwrap();
    let err = AppState::open(dir.path(), &dir.path().join("tags.jsonl")).unwrap_err();
    assert!(matches!(err, ServiceError::NoModels { .. }));
}

#[tokio::test]
async fn decode_is_deterministic_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let (app, ids) = open(&models_dir(dir.path()), &dir.path().join("tags.jsonl"));
    let body = json!({"model": ids[0], "z": [1.25, -3.5]});
    let a = post(&app, "/api/decode", body.clone()).await;
    let b = post(&app, "/api/decode", body.clone()).await;
    assert_eq!(a.status, StatusCode::OK);
    assert_eq!(a.content_type, "image/png");
    assert_eq!(a.body, b.body);
    let img = GrayImage::from_png(&a.body).unwrap();
    assert_eq!((img.width(), img.height()), (128, 32));

    let tile = get(&app, &format!("/api/tile?model={}&z1=1.25&z2=-3.5", ids[0])).await;
    assert_eq!(tile.body, a.body);

    let other = post(
        &app,
        "/api/decode",
        json!({"model": ids[1], "z": [1.25, -3.5]}),
    )
    .await;
    assert_ne!(other.body, a.body);

    let enc: EncodedImage = post(&app, "/api/decode?format=base64", body).await.json();
    use base64::Engine;
    assert_eq!(
        base64::engine::general_purpose::STANDARD
            .decode(enc.png_base64)
            .unwrap(),
        a.body
    );
    assert_eq!(enc.z, [1.25, -3.5]);

    let unknown = post(&app, "/api/decode", json!({"model": "nope", "z": [0, 0]})).await;
    assert_eq!(unknown.status, StatusCode::NOT_FOUND);
    let err: ApiError = unknown.json();
    assert_eq!(err.error, "unknown_model");
    assert_eq!(err.known_models.unwrap(), ids);

    for bad in [
        json!({"model": ids[0], "z": [0]}),
        json!({"model": ids[0], "z": [0, 1e39]}),
        json!({"model": ids[0]}),
    ] {
        let r = post(&app, "/api/decode", bad).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST);
        r.json::<ApiError>();
    }
    let r = send(
        &app,
        Request::post("/api/decode")
            .header("content-type", "application/json")
            .body(Body::from("{"))
            .unwrap(),
    )
    .await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn canonical_decode_is_a_512_by_128_png() {
    let dir = tempfile::tempdir().unwrap();
    let models = dir.path().join("models");
    write_generator(&models.join("full"), Profile::Canonical, 9, 0);
    let (app, ids) = open(&models, &dir.path().join("tags.jsonl"));
    let r = post(&app, "/api/decode", json!({"model": ids[0], "z": [0, 0]})).await;
    let img = GrayImage::from_png(&r.body).unwrap();
    assert_eq!((img.width(), img.height()), (512, 128));
}

#[tokio::test]
async fn grid_manifest_pages_over_all_tiles() {
    let dir = tempfile::tempdir().unwrap();
    let (app, ids) = open(&models_dir(dir.path()), &dir.path().join("tags.jsonl"));
    let page: GridPage = get(
        &app,
        &format!("/api/grid?model={}&n=50&min=-10&max=10", ids[0]),
    )
    .await
    .json();
    assert_eq!(page.total, 2500);
    assert_eq!(page.tiles.len(), 2500);
    assert_eq!(page.tiles[0].z, [-10.0, -10.0]);
    assert_eq!(page.tiles[2499].z, [10.0, 10.0]);

    let tile = &page.tiles[1234];
    let r = get(&app, &tile.url).await;
    assert_eq!(r.status, StatusCode::OK);
    let direct = post(&app, "/api/decode", json!({"model": ids[0], "z": tile.z})).await;
    assert_eq!(r.body, direct.body);

    let p: GridPage = get(
        &app,
        &format!("/api/grid?model={}&n=10&page=3&page_size=30", ids[0]),
    )
    .await
    .json();
    assert_eq!(
        (p.total, p.tiles.len(), p.tiles[0].i, p.tiles[0].j),
        (100, 10, 9, 0)
    );

    for bad in ["n=1", "min=5&max=5", "page_size=0", "page=99", "n=abc"] {
        let r = get(&app, &format!("/api/grid?model={}&{bad}", ids[0])).await;
        assert_eq!(r.status, StatusCode::BAD_REQUEST, "{bad}");
    }
    assert_eq!(
        get(&app, "/api/grid?model=zzz").await.status,
        StatusCode::NOT_FOUND
    );
}

#[tokio::test]
async fn screen_reports_on_the_decoded_image() {
    let dir = tempfile::tempdir().unwrap();
    let (app, ids) = open(&models_dir(dir.path()), &dir.path().join("tags.jsonl"));
    let r = get(&app, &format!("/api/screen?model={}&z1=0&z2=0", ids[0])).await;
    assert_eq!(r.status, StatusCode::OK);
    let report: FeasibilityReport = r.json();
    let img = GrayImage::from_png(
        &post(&app, "/api/decode", json!({"model": ids[0], "z": [0, 0]}))
            .await
            .body,
    )
    .unwrap();
    let expect =
        bridge_gan::explore::screen(&img, &bridge_gan::explore::ScreenThresholds::for_width(128));
    assert_eq!(report, expect);
    assert_eq!(
        get(&app, &format!("/api/screen?model={}&z1=0", ids[0]))
            .await
            .status,
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn tags_round_trip_replace_and_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let models = models_dir(dir.path());
    let tags = dir.path().join("tags.jsonl");
    let (app, ids) = open(&models, &tags);

    assert!(get(&app, "/api/tags")
        .await
        .json::<Vec<TagRecord>>()
        .is_empty());
    let r = post(
        &app,
        "/api/tags",
        json!({"model": ids[0], "z": [1, 2], "label": "feasible", "note": "arch"}),
    )
    .await;
    assert_eq!(r.status, StatusCode::OK);
    post(
        &app,
        "/api/tags",
        json!({"model": ids[1], "z": [1, 2], "label": "interesting"}),
    )
    .await;
    let listed: Vec<TagRecord> = get(&app, &format!("/api/tags?model={}", ids[0]))
        .await
        .json();
    assert_eq!(listed.len(), 1);
    assert_eq!(
        (listed[0].label, listed[0].note.as_str()),
        (TagLabel::Feasible, "arch")
    );

    post(
        &app,
        "/api/tags",
        json!({"model": ids[0], "z": [1, 2], "label": "infeasible"}),
    )
    .await;
    let all: Vec<TagRecord> = get(&app, "/api/tags").await.json();
    assert_eq!(all.len(), 2);
    assert_eq!(
        all.iter().find(|t| t.model == ids[0]).unwrap().label,
        TagLabel::Infeasible
    );

    for bad in [
        json!({"model": ids[0], "z": [1, 2], "label": "maybe"}),
        json!({"model": ids[0], "z": [1], "label": "feasible"}),
    ] {
        assert_eq!(
            post(&app, "/api/tags", bad).await.status,
            StatusCode::BAD_REQUEST
        );
    }
    let r = post(
        &app,
        "/api/tags",
        json!({"model": "nope", "z": [1, 2], "label": "feasible"}),
    )
    .await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);

    drop(app);
    let (app, _) = open(&models, &tags);
    let after: Vec<TagRecord> = get(&app, "/api/tags").await.json();
    assert_eq!(after, all);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_decodes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let (app, ids) = open(&models_dir(dir.path()), &dir.path().join("tags.jsonl"));
    let body = json!({"model": ids[0], "z": [-7.0, 4.5]});
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let (app, body) = (app.clone(), body.clone());
            tokio::spawn(async move { post(&app, "/api/decode", body).await.body })
        })
        .collect();
    let mut bodies = Vec::new();
    for h in handles {
        bodies.push(h.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
