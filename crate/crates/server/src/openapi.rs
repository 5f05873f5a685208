//! OpenAPI description of the HTTP routes, emitted as `docs/api.yaml`.

use serde_json::{json, Map, Value};

use crate::api::{routes, Guard, RouteInfo};

fn error(description: &str) -> Value {
    json!({
        "description": description,
        "content": {"application/json": {"schema": {"$ref": "#/components/schemas/Error"}}}
    })
}

fn ok_json(description: &str, schema: Value) -> Value {
    json!({"description": description, "content": {"application/json": {"schema": schema}}})
}

fn schema_ref(name: &str) -> Value {
    json!({"$ref": format!("#/components/schemas/{name}")})
}

fn path_param(name: &str, description: &str, ty: &str) -> Value {
    json!({"name": name, "in": "path", "required": true, "description": description, "schema": {"type": ty}})
}

fn query_param(name: &str, description: &str, schema: Value) -> Value {
    json!({"name": name, "in": "query", "required": false, "description": description, "schema": schema})
}

/// Summary, parameters, request body and responses of one route.
fn operation(route: &RouteInfo) -> Value {
    let mut op = match (route.method.as_str(), route.path) {
        ("POST", "/api/submissions") => json!({
            "summary": "Queue a submission for assessment",
            "requestBody": {"required": true, "content": {"application/json": {"schema": schema_ref("SubmissionRequest")}}},
            "responses": {
                "201": {
                    "description": "Queued; poll the Location header",
                    "headers": {"Location": {"schema": {"type": "string"}}},
                    "content": {"application/json": {"schema": schema_ref("SubmissionCreated")}}
                },
                "404": error("Unknown activity, course or series"),
                "413": error("Code exceeds the configured size limit"),
                "422": error("Malformed body, or activity not in the series"),
                "429": error("Per-token submission rate exceeded")
            }
        }),
        ("GET", "/api/submissions/{id}") => json!({
            "summary": "Read a submission and its feedback",
            "description": "Staff-only messages are removed unless the token has the admin scope.",
            "parameters": [path_param("id", "Submission id", "integer")],
            "responses": {
                "200": ok_json("The submission", schema_ref("Submission")),
                "403": error("Submission belongs to another user"),
                "404": error("No such submission")
            }
        }),
        ("GET", "/api/activities") => json!({
            "summary": "List published activities",
            "description": "Restricted activities are listed for admin tokens only.",
            "parameters": [
                query_param("label", "Only activities carrying this label", json!({"type": "string"})),
                query_param("repository", "Only activities from this repository", json!({"type": "string"}))
            ],
            "responses": {"200": ok_json("Activities", json!({"type": "array", "items": schema_ref("Activity")}))}
        }),
        ("GET", "/api/activities/{id}") => json!({
            "summary": "Read one activity",
            "parameters": [path_param("id", "Activity id", "string")],
            "responses": {"200": ok_json("The activity", schema_ref("Activity")), "404": error("No such activity")}
        }),
        ("GET", "/api/courses/{id}") => json!({
            "summary": "Read a course with its series",
            "description": "Hidden series appear for admin tokens or with their series token.",
            "parameters": [
                path_param("id", "Course id", "string"),
                query_param("series_token", "Unlocks a hidden series", json!({"type": "string"}))
            ],
            "responses": {"200": ok_json("The course", schema_ref("Course")), "404": error("No such course")}
        }),
        ("GET", "/api/courses/{id}/export.csv") => json!({
            "summary": "Export submissions as pseudonymized CSV",
            "parameters": [
                path_param("id", "Course id", "string"),
                query_param("series", "Series id", json!({"type": "string"})),
                query_param("user", "User id", json!({"type": "string"})),
                query_param("from", "Submitted at or after", json!({"type": "string", "format": "date-time"})),
                query_param("until", "Submitted before", json!({"type": "string", "format": "date-time"}))
            ],
            "responses": {
                "200": {"description": "RFC 4180 CSV, CRLF line endings", "content": {"text/csv": {"schema": {"type": "string"}}}},
                "404": error("No such course")
            }
        }),
        ("POST", "/webhooks/{repo_id}") => json!({
            "summary": "Repository push notification",
            "description": "The body must be signed with the repository secret as `sha256=<hex HMAC-SHA256>` in X-Hub-Signature-256. Pushes to other branches are acknowledged and ignored.",
            "parameters": [
                path_param("repo_id", "Configured repository id", "string"),
                {"name": "X-Hub-Signature-256", "in": "header", "required": true, "schema": {"type": "string"}}
            ],
            "requestBody": {"required": true, "content": {"application/json": {"schema": {
                "type": "object",
                "properties": {"ref": {"type": "string"}, "after": {"type": "string"}}
            }}}},
            "responses": {
                "202": ok_json("Accepted", json!({
                    "type": "object",
                    "properties": {
                        "repository": {"type": "string"},
                        "sync": {"type": "string", "enum": ["scheduled", "skipped"]}
                    }
                })),
                "400": error("Payload is not a push event"),
                "401": error("Missing or invalid signature"),
                "404": error("Unknown repository")
            }
        }),
        ("GET", "/courses/{id}/calendar.ics") => json!({
            "summary": "Series deadlines as an iCalendar feed",
            "parameters": [path_param("id", "Course id", "string")],
            "responses": {
                "200": {"description": "RFC 5545 calendar", "content": {"text/calendar": {"schema": {"type": "string"}}}},
                "404": error("No such public course")
            }
        }),
        ("GET", "/health") => json!({
            "summary": "Liveness and queue depth",
            "responses": {"200": ok_json("Service is up", schema_ref("Health"))}
        }),
        ("GET", "/metrics") => json!({
            "summary": "Prometheus text exposition",
            "responses": {"200": {"description": "Metrics", "content": {"text/plain": {"schema": {"type": "string"}}}}}
        }),
        (m, p) => panic!("route {m} {p} is not documented"),
    };
    let obj = op.as_object_mut().expect("operation is an object");
    if let Guard::Token(scope) = route.guard {
        obj.insert("security".into(), json!([{"token": [scope.as_str()]}]));
        let responses = obj["responses"].as_object_mut().expect("responses");
        responses.insert("401".into(), error("Missing or unknown token"));
        responses.insert("403".into(), error(&format!("Token lacks the {} scope", scope.as_str())));
    }
    op
}

fn schemas() -> Value {
    let status = json!({"type": "string", "enum": [
        "correct", "wrong", "output-limit-exceeded", "time-limit-exceeded", "memory-limit-exceeded",
        "runtime-error", "compilation-error", "internal-error"
    ]});
    json!({
        "Error": {"type": "object", "required": ["error"], "properties": {"error": {"type": "string"}}},
        "Status": status,
        "Feedback": {"$ref": "../schemas/feedback.schema.json"},
        "SubmissionRequest": {
            "type": "object",
            "additionalProperties": false,
            "required": ["activity_id", "course_id", "series_id", "code"],
            "properties": {
                "activity_id": {"type": "string"},
                "course_id": {"type": "string"},
                "series_id": {"type": "string"},
                "code": {"type": "string"}
            }
        },
        "SubmissionCreated": {
            "type": "object",
            "properties": {"id": {"type": "integer"}, "lifecycle": {"type": "string", "enum": ["queued"]}}
        },
        "Submission": {
            "type": "object",
            "required": ["id", "user_id", "course_id", "series_id", "activity_id", "lifecycle", "attempt_count", "submitted_at", "code"],
            "properties": {
                "id": {"type": "integer"},
                "user_id": {"type": "string"},
                "course_id": {"type": "string"},
                "series_id": {"type": "string"},
                "activity_id": {"type": "string"},
                "lifecycle": {"type": "string", "enum": ["queued", "running", "assessed"]},
                "attempt_count": {"type": "integer"},
                "submitted_at": {"type": "string", "format": "date-time"},
                "started_at": {"type": "string", "format": "date-time"},
                "assessed_at": {"type": "string", "format": "date-time"},
                "result_status": schema_ref("Status"),
                "code": {"type": "string"},
                "feedback": schema_ref("Feedback")
            }
        },
        "Activity": {
            "type": "object",
            "properties": {
                "id": {"type": "string"},
                "name": {"type": "string"},
                "type": {"type": "string", "enum": ["exercise", "reading"]},
                "repository": {"type": "string"},
                "path": {"type": "string"},
                "access": {"type": "string", "enum": ["public", "restricted"]},
                "labels": {"type": "array", "items": {"type": "string"}},
                "programming_language": {"type": "string"},
                "boilerplate": {"type": "string"},
                "descriptions": {
                    "type": "object",
                    "description": "Keyed by natural language",
                    "additionalProperties": {
                        "type": "object",
                        "properties": {
                            "format": {"type": "string", "enum": ["markdown", "html"]},
                            "body": {"type": "string"}
                        }
                    }
                }
            }
        },
        "Course": {
            "type": "object",
            "properties": {
                "id": {"type": "string"},
                "name": {"type": "string"},
                "timezone": {"type": "string"},
                "series": {"type": "array", "items": {
                    "type": "object",
                    "properties": {
                        "id": {"type": "string"},
                        "name": {"type": "string"},
                        "deadline": {"type": ["string", "null"], "format": "date-time"},
                        "visible": {"type": "boolean"},
                        "activities": {"type": "array", "items": schema_ref("Activity")}
                    }
                }}
            }
        },
        "Health": {
            "type": "object",
            "properties": {
                "status": {"type": "string"},
                "queue_depth": {"type": "integer"},
                "running": {"type": "integer"},
                "assessed": {"type": "integer"}
            }
        }
    })
}

pub fn document() -> Value {
    let mut paths = Map::new();
    for route in routes() {
        let item = paths
            .entry(route.path.to_string())
            .or_insert_with(|| json!({}))
            .as_object_mut()
            .expect("path item");
        item.insert(route.method.as_str().to_ascii_lowercase(), operation(&route));
    }
    json!({
        "openapi": "3.1.0",
        "info": {"title": "forge-judge", "version": env!("CARGO_PKG_VERSION")},
        "paths": paths,
        "components": {
            "securitySchemes": {"token": {
                "type": "apiKey",
                "in": "header",
                "name": "Authorization",
                "description": "`Token <id>.<secret>`, where `forge-judge token create` prints `<id>.<secret>`. Scopes: submit, read, admin (admin implies the others)."
            }},
            "schemas": schemas()
        }
    })
}

pub fn yaml() -> String {
    format!(
        "# Generated by `forge-judge openapi`; do not edit.\n{}",
        serde_yaml::to_string(&document()).expect("document serializes")
    )
}
