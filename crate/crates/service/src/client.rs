//! A blocking client that sends HTTP requests straight into a [`Router`]
//! without opening a socket.

use std::sync::Arc;

use aact_core::workflow::{Answer, DialogueMessage, Transcript};
use axum::body::{Body, Bytes};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::runtime::{Handle, Runtime};
use tower::ServiceExt;

use crate::api::ReflectionBody;
use crate::error::ErrorBody;
use crate::simulate::{Backend, SimulationError};
use crate::store::{CreateSession, Created, StepState};

#[derive(Clone)]
pub struct RouterClient {
    app: Router,
    handle: Handle,
    _runtime: Option<Arc<Runtime>>,
}

impl RouterClient {
    /// A client with its own multi-threaded runtime.
    pub fn new(app: Router) -> std::io::Result<Self> {
        let runtime = Arc::new(tokio::runtime::Builder::new_multi_thread().enable_all().build()?);
        Ok(Self {
            app,
            handle: runtime.handle().clone(),
            _runtime: Some(runtime),
        })
    }

    /// A client running requests on an existing runtime. Calls block, so
    /// they must come from outside that runtime's worker threads.
    pub fn with_handle(app: Router, handle: Handle) -> Self {
        Self {
            app,
            handle,
            _runtime: None,
        }
    }

    /// Sends one request and returns the status and raw body.
    pub fn send(&self, method: Method, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Bytes) {
        let mut request = Request::builder().method(method).uri(uri);
        if body.is_some() {
            request = request.header("content-type", "application/json");
        }
        let request = request
            .body(body.map_or_else(Body::empty, Body::from))
            .expect("request parts are valid");
        let app = self.app.clone();
        self.handle.block_on(async move {
            let response = app.oneshot(request).await.expect("router is infallible");
            let status = response.status();
            let bytes = response
                .into_body()
                .collect()
                .await
                .map(|c| c.to_bytes())
                .unwrap_or_default();
            (status, bytes)
        })
    }

    fn call<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        uri: &str,
        body: Option<&B>,
    ) -> Result<T, SimulationError> {
        let body = body.map(|b| serde_json::to_vec(b).expect("request bodies serialize"));
        let (status, bytes) = self.send(method, uri, body);
        if !status.is_success() {
            let (code, message) = match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(e) => (e.error.code, e.error.message),
                Err(_) => ("unknown".into(), String::from_utf8_lossy(&bytes).into_owned()),
            };
            return Err(SimulationError::Remote {
                status: status.as_u16(),
                code,
                message,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| SimulationError::Remote {
            status: status.as_u16(),
            code: "bad_response".into(),
            message: e.to_string(),
        })
    }
}

impl Backend for RouterClient {
    fn create(&mut self, request: &CreateSession) -> Result<Created, SimulationError> {
        self.call(Method::POST, "/v1/sessions", Some(request))
    }

    fn apply(&mut self, session: &str, answer: &Answer) -> Result<StepState, SimulationError> {
        let base = format!("/v1/sessions/{session}");
        match answer {
            Answer::Initial(state) => self.call(Method::POST, &format!("{base}/initial"), Some(state)),
            Answer::Reflection { reported_confidence } => self.call(
                Method::POST,
                &format!("{base}/reflection"),
                Some(&ReflectionBody {
                    reported_confidence: *reported_confidence,
                }),
            ),
            Answer::Update(request) => self.call(Method::POST, &format!("{base}/update"), Some(request)),
            Answer::Skip => self.call::<(), _>(Method::POST, &format!("{base}/skip"), None),
        }
    }

    fn prompt(&mut self, session: &str) -> Result<Option<DialogueMessage>, SimulationError> {
        match self.call::<(), _>(Method::GET, &format!("/v1/sessions/{session}/prompt"), None) {
            Ok(message) => Ok(Some(message)),
            Err(SimulationError::Remote { code, .. }) if code == "no_prompt" => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn transcript(&mut self, session: &str) -> Result<Transcript, SimulationError> {
        self.call::<(), _>(Method::GET, &format!("/v1/sessions/{session}/transcript"), None)
    }
}
