//! Drives the editing API in-process: creates a session, picks suggestions,
//! undoes one, overrides a placement and exports the assembly document.
//!
//! With MODEL_DIR and DATA_DIR it serves trained models; without them it
//! falls back to untrained networks over a handful of generated shapes.
//!
//! cargo run --release -p partforge-service --example editing_session -- [MODEL_DIR DATA_DIR]

use axum::body::{to_bytes, Body};
use axum::http::Request;
use axum::Router;
use partforge::dataset::corpus::generate_shape;
use partforge::dataset::{prepare_shape, ContactGraph, PrepConfig};
use partforge::nn::{EmbeddingNet, NetConfig, PlacementNet, RetrievalNet};
use partforge::retrieval::Models;
use partforge_service::{router, AppState, Catalog, SessionState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn fallback_catalog() -> anyhow::Result<Catalog> {
    let prep = PrepConfig::default();
    let graphs: Vec<ContactGraph> = (0..6)
        .map(|i| {
            prepare_shape(
                &generate_shape(if i % 2 == 0 { "chair" } else { "table" }, i, 3),
                &prep,
                1,
            )
        })
        .collect::<Result<_, _>>()?;
    let net = NetConfig::compact();
    let models = Models {
        f: EmbeddingNet::new(&net, 1),
        g: RetrievalNet::new(&net, 2),
        h: PlacementNet::new(&net, 3),
    };
    Ok(Catalog::new(models, &graphs.iter().collect::<Vec<_>>())?)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> anyhow::Result<Value> {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = req.body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))?;
    let resp = app.clone().oneshot(req).await?;
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await?;
    let v: Value = serde_json::from_slice(&bytes)?;
    if !status.is_success() {
        anyhow::bail!("{method} {uri}: {status} {v}");
    }
    Ok(v)
}

fn show(st: &SessionState) {
    println!(
        "revision {} ({} placed, undo depth {})",
        st.revision,
        st.placed.len(),
        st.undo_depth
    );
    for s in st.suggestions.iter().take(4) {
        println!("  candidate {:<34} log-score {:9.2}", s.key, s.log_score);
    }
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let catalog = match args.as_slice() {
        [models, data] => Catalog::load(models.as_ref(), data.as_ref())?,
        _ => fallback_catalog()?,
    };
    let app = router(AppState::new(catalog));

    let st: SessionState = serde_json::from_value(
        call(
            &app,
            "POST",
            "/sessions",
            Some(json!({
                "category": "chair",
                "rng_seed": 5,
                "settings": {"mode": "max", "n_candidates": 8, "draws": 8},
            })),
        )
        .await?,
    )?;
    let id = st.session_id.clone();
    println!("session {id}, seed {}", st.placed[0].key);
    show(&st);

    let st: SessionState = serde_json::from_value(
        call(
            &app,
            "POST",
            &format!("/sessions/{id}/choose"),
            Some(json!({"revision": st.revision, "candidate": 0})),
        )
        .await?,
    )?;
    show(&st);

    let st: SessionState = serde_json::from_value(
        call(
            &app,
            "POST",
            &format!("/sessions/{id}/undo"),
            Some(json!({"revision": st.revision})),
        )
        .await?,
    )?;
    println!("after undo:");
    show(&st);

    let p = st.suggestions[1].placement;
    let nudged = [p[0] + 0.05, p[1], p[2]];
    let st: SessionState = serde_json::from_value(
        call(
            &app,
            "POST",
            &format!("/sessions/{id}/override-place"),
            Some(json!({"revision": st.revision, "candidate": 1, "position": nudged})),
        )
        .await?,
    )?;
    println!("after override:");
    show(&st);

    let export = call(&app, "GET", &format!("/sessions/{id}/export"), None).await?;
    println!(
        "exported document:\n{}",
        serde_json::to_string_pretty(&export["document"])?
    );
    Ok(())
}
