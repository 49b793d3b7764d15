//! OpenAPI 3 description generated from the route table.

use serde_json::{json, Map, Value};

use crate::routes::{Access, BodyKind, ROUTES};

fn describe(code: u16) -> &'static str {
    match code {
        200 => "OK",
        201 => "Created",
        202 => "Accepted; poll the returned job or entity",
        401 => "Missing or invalid credentials",
        403 => "Caller lacks the required role",
        404 => "Not found or not visible to the caller",
        409 => "Illegal state transition, archived session or concurrent edit",
        413 => "Upload exceeds the configured limit",
        415 => "Unsupported media type",
        422 => "Request failed validation",
        503 => "A backend is unhealthy",
        507 => "Storage quota exhausted",
        _ => "Error",
    }
}

fn path_params(path: &str) -> Vec<Value> {
    path.split('/')
        .filter_map(|seg| seg.strip_prefix('{').and_then(|s| s.strip_suffix('}')))
        .map(|name| json!({ "name": name, "in": "path", "required": true, "schema": { "type": "string" } }))
        .collect()
}

pub fn document() -> Value {
    let mut paths: Map<String, Value> = Map::new();
    for route in ROUTES {
        let mut responses = Map::new();
        for code in std::iter::once(&route.success).chain(route.errors) {
            responses.insert(code.to_string(), json!({ "description": describe(*code) }));
        }
        responses.insert("500".into(), json!({ "description": "Internal error" }));
        let mut op = json!({
            "summary": route.summary,
            "parameters": path_params(route.path),
            "responses": responses,
            "x-access": route.access,
        });
        if route.access == Access::Public {
            op["security"] = json!([]);
        }
        match route.body {
            BodyKind::Json => {
                op["requestBody"] = json!({
                    "required": route.path != "/sessions",
                    "content": { "application/json": { "schema": { "type": "object" } } },
                });
            }
            BodyKind::Multipart => {
                op["requestBody"] = json!({
                    "required": true,
                    "content": { "multipart/form-data": { "schema": {
                        "type": "object",
                        "required": ["file"],
                        "properties": { "file": { "type": "string", "format": "binary" } },
                    } } },
                });
            }
            BodyKind::None => {}
        }
        if route.path == "/metrics" {
            op["parameters"] = json!([{
                "name": "period", "in": "query", "required": true,
                "schema": { "type": "string", "example": "2025-07" },
            }]);
        }
        let entry = paths.entry(route.path.to_owned()).or_insert_with(|| json!({}));
        entry[route.method.to_ascii_lowercase()] = op;
    }
    json!({
        "openapi": "3.0.3",
        "info": { "title": "scribe", "version": env!("CARGO_PKG_VERSION") },
        "components": { "securitySchemes": { "bearer": { "type": "http", "scheme": "bearer" } } },
        "security": [{ "bearer": [] }],
        "paths": paths,
    })
}
