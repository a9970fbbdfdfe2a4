//! REST routes under `/api`.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Multipart, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use modelhub_core::wire::{LogLines, RegisterWorker, ResultPost, SetObject};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::auth::{parse_header, Principal};
use crate::error::{ApiError, ApiResult};
use crate::service::{NewModel, Service};

pub type AppState = Arc<Service>;

/// JSON body extractor that reports malformed input in the API error shape.
pub struct ApiJson<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Ok(ApiJson(Json::<T>::from_request(req, state).await?.0))
    }
}

pub struct ApiPath<T>(pub T);

impl<T: DeserializeOwned + Send, S: Send + Sync> FromRequestParts<S> for ApiPath<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Ok(ApiPath(Path::<T>::from_request_parts(parts, state).await?.0))
    }
}

pub struct ApiQuery<T>(pub T);

impl<T: DeserializeOwned, S: Send + Sync> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Ok(ApiQuery(Query::<T>::from_request_parts(parts, state).await?.0))
    }
}

impl FromRequestParts<AppState> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let value = parts
            .headers
            .get(header::AUTHORIZATION)
            .ok_or_else(|| ApiError::unauthorized("missing Authorization header"))?
            .to_str()
            .map_err(|_| ApiError::unauthorized("malformed Authorization header"))?;
        let token = parse_header(value).ok_or_else(|| ApiError::unauthorized("expected `Authorization: Token <hex>`"))?;
        state.authenticate(token)
    }
}

pub fn router(state: AppState) -> Router {
    // Multipart framing adds a little on top of the file itself.
    let body_limit = state.config().max_upload_bytes + 64 * 1024;
    let api = Router::new()
        .route("/models/", get(list_models).post(create_model))
        .route("/models/{id}/", get(get_model).delete(delete_model))
        .route("/models/{id}/components/", get(components))
        .route("/models/{id}/recipe/", get(recipe))
        .route("/models/{id}/interface/objects/{name}/", put(set_object))
        .route("/models/{id}/interface/files/{name}/", put(set_file))
        .route("/models/{id}/run/", post(run))
        .route("/models/{id}/status/", get(status))
        .route("/executions/{id}/", get(execution))
        .route("/executions/{id}/log/", get(log).post(post_log))
        .route("/executions/{id}/results/", get(results))
        .route("/executions/{id}/result/", post(post_result))
        .route("/workers/register/", post(register))
        .route("/workers/{id}/jobs/next/", get(next_job))
        .route("/workers/{id}/heartbeat/", post(heartbeat));
    Router::new()
        .nest("/api", api)
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method not allowed")
        })
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct NameFilter {
    name: Option<String>,
}

async fn list_models(
    State(s): State<AppState>,
    p: Principal,
    ApiQuery(q): ApiQuery<NameFilter>,
) -> ApiResult<Response> {
    Ok(Json(s.list_models(&p, q.name.as_deref())?).into_response())
}

fn text_field(bytes: &[u8], field: &str) -> ApiResult<String> {
    String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::bad_request(format!("field {field} is not UTF-8")))
}

async fn create_model(State(s): State<AppState>, p: Principal, mut form: Multipart) -> ApiResult<Response> {
    let mut upload = NewModel::default();
    let mut have_file = false;
    while let Some(field) = form.next_field().await? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "file" => {
                upload.filename = field.file_name().map(str::to_string);
                upload.source = field.bytes().await?.to_vec();
                have_file = true;
            }
            "name" => upload.name = text_field(&field.bytes().await?, "name")?,
            "kernel_tag" => upload.kernel_tag = Some(text_field(&field.bytes().await?, "kernel_tag")?),
            "comment_tag" => upload.comment_tag = Some(text_field(&field.bytes().await?, "comment_tag")?),
            other => return Err(ApiError::bad_request(format!("unexpected form field {other:?}"))),
        }
    }
    if !have_file {
        return Err(ApiError::bad_request("form field `file` is required"));
    }
    if upload.name.is_empty() {
        return Err(ApiError::bad_request("form field `name` is required"));
    }
    let record = s.create_model(&p, upload)?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn get_model(State(s): State<AppState>, p: Principal, ApiPath(id): ApiPath<String>) -> ApiResult<Response> {
    Ok(Json(s.get_model(&p, &id)?).into_response())
}

async fn delete_model(State(s): State<AppState>, p: Principal, ApiPath(id): ApiPath<String>) -> ApiResult<Response> {
    s.delete_model(&p, &id)?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn components(State(s): State<AppState>, p: Principal, ApiPath(id): ApiPath<String>) -> ApiResult<Response> {
    Ok(Json(s.components(&p, &id)?).into_response())
}

async fn recipe(State(s): State<AppState>, p: Principal, ApiPath(id): ApiPath<String>) -> ApiResult<Response> {
    Ok(Json(s.recipe(&p, &id)?).into_response())
}

async fn set_object(
    State(s): State<AppState>,
    p: Principal,
    ApiPath((id, name)): ApiPath<(String, String)>,
    ApiJson(body): ApiJson<SetObject>,
) -> ApiResult<Response> {
    Ok(Json(s.set_interface_object(&p, &id, &name, body.value)?).into_response())
}

async fn set_file(
    State(s): State<AppState>,
    p: Principal,
    ApiPath((id, name)): ApiPath<(String, String)>,
    mut form: Multipart,
) -> ApiResult<Response> {
    while let Some(field) = form.next_field().await? {
        if field.name() == Some("file") {
            let filename = field.file_name().unwrap_or(&name).to_string();
            let bytes = field.bytes().await?;
            return Ok(Json(s.set_interface_file(&p, &id, &name, &filename, &bytes)?).into_response());
        }
    }
    Err(ApiError::bad_request("form field `file` is required"))
}

async fn run(State(s): State<AppState>, p: Principal, ApiPath(id): ApiPath<String>) -> ApiResult<Response> {
    Ok((StatusCode::ACCEPTED, Json(s.run(&p, &id)?)).into_response())
}

async fn status(State(s): State<AppState>, p: Principal, ApiPath(id): ApiPath<String>) -> ApiResult<Response> {
    Ok(Json(s.status(&p, &id)?).into_response())
}

async fn execution(State(s): State<AppState>, p: Principal, ApiPath(id): ApiPath<String>) -> ApiResult<Response> {
    Ok(Json(s.get_execution(&p, &id)?).into_response())
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    #[serde(default)]
    offset: usize,
}

async fn log(
    State(s): State<AppState>,
    p: Principal,
    ApiPath(id): ApiPath<String>,
    ApiQuery(q): ApiQuery<LogQuery>,
) -> ApiResult<Response> {
    Ok(Json(s.log(&p, &id, q.offset)?).into_response())
}

async fn results(State(s): State<AppState>, p: Principal, ApiPath(id): ApiPath<String>) -> ApiResult<Response> {
    Ok(Json(s.results(&p, &id)?).into_response())
}

async fn post_log(
    State(s): State<AppState>,
    p: Principal,
    ApiPath(id): ApiPath<String>,
    ApiJson(body): ApiJson<LogLines>,
) -> ApiResult<Response> {
    s.post_log(&p, &id, &body.lines)?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn post_result(
    State(s): State<AppState>,
    p: Principal,
    ApiPath(id): ApiPath<String>,
    ApiJson(body): ApiJson<ResultPost>,
) -> ApiResult<Response> {
    Ok(Json(s.post_result(&p, &id, body)?).into_response())
}

async fn register(
    State(s): State<AppState>,
    p: Principal,
    ApiJson(body): ApiJson<RegisterWorker>,
) -> ApiResult<Response> {
    Ok((StatusCode::CREATED, Json(s.register_worker(&p, body.kernel_tags)?)).into_response())
}

#[derive(Debug, Deserialize)]
struct WaitQuery {
    /// Seconds to hold the request open while no job is available.
    wait: Option<f64>,
}

async fn next_job(
    State(s): State<AppState>,
    p: Principal,
    ApiPath(id): ApiPath<String>,
    ApiQuery(q): ApiQuery<WaitQuery>,
) -> ApiResult<Response> {
    let wait = match q.wait {
        Some(w) if w.is_finite() && w >= 0.0 => Duration::from_secs_f64(w.min(3600.0)),
        Some(_) => return Err(ApiError::bad_request("wait must be a non-negative number of seconds")),
        None => s.config().max_long_poll,
    };
    Ok(match s.next_job(&p, &id, wait).await? {
        Some(job) => Json(job).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn heartbeat(State(s): State<AppState>, p: Principal, ApiPath(id): ApiPath<String>) -> ApiResult<Response> {
    Ok(Json(s.heartbeat(&p, &id)?).into_response())
}
