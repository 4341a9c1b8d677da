//! One JSON-RPC-shaped control plane over every per-kind registry.
//!
//! Methods are `<kind>.<operator>`. `dispatch` is transport-free; [`serve`] mounts it at
//! `POST /rpc` next to `GET /catalogue`.

mod http;

use std::path::PathBuf;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::canonical;
use crate::error::Error;
use crate::hub::ResourceHub;
use crate::record::{EntityKind, RegistrationRecord};
use crate::registry::{ContractTarget, Update};
use crate::version::Version;

pub use http::{serve, RpcClient, ServerHandle};

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jsonrpc: Option<String>,
    #[serde(default)]
    pub id: Value,
    pub method: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
}

impl RpcRequest {
    pub fn new(id: impl Into<Value>, method: impl Into<String>, params: Value) -> Self {
        RpcRequest {
            jsonrpc: Some("2.0".into()),
            id: id.into(),
            method: method.into(),
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl From<&Error> for RpcError {
    fn from(e: &Error) -> Self {
        RpcError {
            code: e.code(),
            message: e.to_string(),
            data: Some(json!({ "kind": e.kind_name() })),
        }
    }
}

/// Exactly one of `result` and `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcResponse {
    pub jsonrpc: String,
    pub id: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RpcError>,
}

impl RpcResponse {
    pub fn ok(id: Value, result: Value) -> Self {
        RpcResponse {
            jsonrpc: "2.0".into(),
            id,
            result: Some(result),
            error: None,
        }
    }

    pub fn err(id: Value, error: RpcError) -> Self {
        RpcResponse {
            jsonrpc: "2.0".into(),
            id,
            result: None,
            error: Some(error),
        }
    }

    fn protocol(id: Value, code: i64, message: impl Into<String>) -> Self {
        Self::err(
            id,
            RpcError {
                code,
                message: message.into(),
                data: None,
            },
        )
    }

    pub fn into_result(self) -> Result<Value, RpcError> {
        match (self.result, self.error) {
            (_, Some(e)) => Err(e),
            (Some(v), None) => Ok(v),
            (None, None) => Ok(Value::Null),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Init,
    Register,
    Unregister,
    Get,
    GetInfo,
    List,
    Retrieve,
    Build,
    Update,
    Copy,
    Restore,
    GetVariables,
    SetVariables,
    Run,
    SaveContract,
    LoadContract,
    History,
    Diff,
    GetState,
}

impl Operator {
    pub const ALL: [Operator; 19] = [
        Operator::Init,
        Operator::Register,
        Operator::Unregister,
        Operator::Get,
        Operator::GetInfo,
        Operator::List,
        Operator::Retrieve,
        Operator::Build,
        Operator::Update,
        Operator::Copy,
        Operator::Restore,
        Operator::GetVariables,
        Operator::SetVariables,
        Operator::Run,
        Operator::SaveContract,
        Operator::LoadContract,
        Operator::History,
        Operator::Diff,
        Operator::GetState,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Operator::Init => "init",
            Operator::Register => "register",
            Operator::Unregister => "unregister",
            Operator::Get => "get",
            Operator::GetInfo => "get_info",
            Operator::List => "list",
            Operator::Retrieve => "retrieve",
            Operator::Build => "build",
            Operator::Update => "update",
            Operator::Copy => "copy",
            Operator::Restore => "restore",
            Operator::GetVariables => "get_variables",
            Operator::SetVariables => "set_variables",
            Operator::Run => "run",
            Operator::SaveContract => "save_contract",
            Operator::LoadContract => "load_contract",
            Operator::History => "history",
            Operator::Diff => "diff",
            Operator::GetState => "get_state",
        }
    }

    /// Why the operator is not served for `kind`, if it is not.
    pub fn excluded_for(self, kind: EntityKind) -> Option<&'static str> {
        match self {
            Operator::Get | Operator::Build => Some("returns a live instance handle; in-process only"),
            Operator::GetState if !matches!(kind, EntityKind::Environment | EntityKind::Memory) => {
                Some("stateless kind")
            }
            _ => None,
        }
    }

    fn params(self) -> Value {
        let s = |fields: &[(&str, &str, bool)]| {
            let required: Vec<&str> = fields.iter().filter(|f| f.2).map(|f| f.0).collect();
            let props: serde_json::Map<String, Value> =
                fields.iter().map(|(n, t, _)| (n.to_string(), json!({ "type": t }))).collect();
            json!({ "type": "object", "properties": props, "required": required })
        };
        match self {
            Operator::Init => s(&[("root", "string", true)]),
            Operator::Register => s(&[("record", "object", true)]),
            Operator::Unregister | Operator::GetInfo | Operator::GetVariables | Operator::History => {
                s(&[("name", "string", true)])
            }
            Operator::Get | Operator::GetState => s(&[("name", "string", true)]),
            Operator::List => s(&[]),
            Operator::Retrieve => s(&[("query", "string", true), ("k", "integer", true)]),
            Operator::Build => s(&[("impl_descriptor", "string", true), ("params", "object", false)]),
            Operator::Update => s(&[("name", "string", true), ("update", "string|object", true)]),
            Operator::Copy => s(&[("name", "string", true), ("new_name", "string", true)]),
            Operator::Restore => s(&[("name", "string", true), ("version", "string", true)]),
            Operator::SetVariables => s(&[("assignments", "array", true)]),
            Operator::Run => s(&[("name", "string", true), ("input", "any", false)]),
            Operator::SaveContract => s(&[("path", "string", true), ("name", "string", false)]),
            Operator::LoadContract => s(&[("path", "string", true)]),
            Operator::Diff => s(&[("name", "string", true), ("a", "string", true), ("b", "string", true)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogueEntry {
    pub method: String,
    pub kind: EntityKind,
    pub operator: String,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedMethod {
    pub method: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalogue {
    pub methods: Vec<CatalogueEntry>,
    pub excluded: Vec<ExcludedMethod>,
}

/// Five kinds × operators, minus the pairs that are not served.
pub fn catalogue() -> Catalogue {
    let mut methods = Vec::new();
    let mut excluded = Vec::new();
    for kind in EntityKind::ALL {
        for op in Operator::ALL {
            let method = format!("{kind}.{}", op.as_str());
            match op.excluded_for(kind) {
                Some(reason) => excluded.push(ExcludedMethod {
                    method,
                    reason: reason.into(),
                }),
                None => methods.push(CatalogueEntry {
                    method,
                    kind,
                    operator: op.as_str().into(),
                    params: op.params(),
                }),
            }
        }
    }
    Catalogue { methods, excluded }
}

fn resolve(method: &str) -> Option<(EntityKind, Operator)> {
    let (kind, op) = method.split_once('.')?;
    let kind = EntityKind::ALL.into_iter().find(|k| k.as_str() == kind)?;
    let op = Operator::ALL.into_iter().find(|o| o.as_str() == op)?;
    op.excluded_for(kind).is_none().then_some((kind, op))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Name {
    name: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InitP {
    root: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegisterP {
    record: RegistrationRecord,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveP {
    query: String,
    k: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UpdateP {
    name: String,
    update: Update,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CopyP {
    name: String,
    new_name: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RestoreP {
    name: String,
    version: Version,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub id: String,
    pub value: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetVariablesP {
    assignments: Vec<Assignment>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunP {
    name: String,
    #[serde(default)]
    input: Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveContractP {
    path: PathBuf,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathP {
    path: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffP {
    name: String,
    a: Version,
    b: Version,
}

enum Failure {
    Params(String),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

fn params<T: DeserializeOwned>(p: &Value) -> Result<T, Failure> {
    let p = if p.is_null() { json!({}) } else { p.clone() };
    serde_json::from_value(p).map_err(|e| Failure::Params(e.to_string()))
}

fn out<T: Serialize>(v: T) -> Result<Value, Failure> {
    Ok(canonical::to_value(&v))
}

/// Routes requests to the registries of one hub.
#[derive(Debug, Clone)]
pub struct Dispatcher {
    hub: Arc<ResourceHub>,
}

impl Dispatcher {
    pub fn new(hub: Arc<ResourceHub>) -> Self {
        Dispatcher { hub }
    }

    pub fn hub(&self) -> &Arc<ResourceHub> {
        &self.hub
    }

    /// Parse a raw body and dispatch it; malformed JSON maps to the parse-error code.
    pub fn dispatch_bytes(&self, body: &[u8]) -> RpcResponse {
        let value: Value = match serde_json::from_slice(body) {
            Ok(v) => v,
            Err(e) => return RpcResponse::protocol(Value::Null, PARSE_ERROR, format!("parse error: {e}")),
        };
        let id = value.get("id").cloned().unwrap_or(Value::Null);
        match serde_json::from_value::<RpcRequest>(value) {
            Ok(req) => self.dispatch(req),
            Err(e) => RpcResponse::protocol(id, INVALID_REQUEST, format!("invalid request: {e}")),
        }
    }

    pub fn dispatch(&self, request: RpcRequest) -> RpcResponse {
        let Some((kind, op)) = resolve(&request.method) else {
            return RpcResponse::protocol(
                request.id,
                METHOD_NOT_FOUND,
                format!("method '{}' is not in the catalogue", request.method),
            );
        };
        match self.call(kind, op, &request.params) {
            Ok(v) => RpcResponse::ok(request.id, v),
            Err(Failure::Params(m)) => RpcResponse::protocol(request.id, INVALID_PARAMS, format!("invalid params: {m}")),
            Err(Failure::Domain(e)) => RpcResponse::err(request.id, RpcError::from(&e)),
        }
    }

    fn call(&self, kind: EntityKind, op: Operator, p: &Value) -> Result<Value, Failure> {
        let reg = self.hub.registry(kind);
        match op {
            Operator::Init => {
                let p: InitP = params(p)?;
                out(reg.init(p.root)?)
            }
            Operator::Register => {
                let p: RegisterP = params(p)?;
                if p.record.kind() != kind {
                    return Err(Failure::Params(format!("record kind {} sent to {kind} registry", p.record.kind())));
                }
                out(reg.register(p.record)?)
            }
            Operator::Unregister => out(reg.unregister(&params::<Name>(p)?.name)?),
            Operator::GetInfo => out(reg.get_info(&params::<Name>(p)?.name)?),
            Operator::List => {
                params::<Empty>(p)?;
                out(reg.list())
            }
            Operator::Retrieve => {
                let p: RetrieveP = params(p)?;
                if p.k == 0 {
                    return Err(Failure::Params("k must be at least 1".into()));
                }
                let hits: Vec<Value> = reg
                    .retrieve(&p.query, p.k)
                    .into_iter()
                    .map(|(name, score)| json!({ "name": name, "score": score }))
                    .collect();
                out(hits)
            }
            Operator::Update => {
                let p: UpdateP = params(p)?;
                out(reg.update(&p.name, p.update)?)
            }
            Operator::Copy => {
                let p: CopyP = params(p)?;
                out(reg.copy(&p.name, &p.new_name)?)
            }
            Operator::Restore => {
                let p: RestoreP = params(p)?;
                out(reg.restore(&p.name, p.version)?)
            }
            Operator::GetVariables => out(self.hub.get_variables(kind, &params::<Name>(p)?.name)?),
            Operator::SetVariables => {
                let p: SetVariablesP = params(p)?;
                let pairs: Vec<(String, String)> = p.assignments.into_iter().map(|a| (a.id, a.value)).collect();
                out(reg.set_variables(&pairs)?)
            }
            Operator::Run => {
                let p: RunP = params(p)?;
                out(self.hub.run(kind, &p.name, p.input, None)?)
            }
            Operator::SaveContract => {
                let p: SaveContractP = params(p)?;
                let target = p.name.map_or(ContractTarget::Kind, ContractTarget::Resource);
                out(reg.save_contract(&target, p.path)?)
            }
            Operator::LoadContract => out(reg.load_contract(params::<PathP>(p)?.path)?),
            Operator::History => out(reg.history(&params::<Name>(p)?.name)?),
            Operator::Diff => {
                let p: DiffP = params(p)?;
                out(reg.diff(&p.name, p.a, p.b)?)
            }
            Operator::GetState => out(reg.get_state(&params::<Name>(p)?.name)?),
            Operator::Get | Operator::Build => unreachable!("excluded from the catalogue"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d() -> Dispatcher {
        Dispatcher::new(Arc::new(ResourceHub::default()))
    }

    #[test]
    fn empty_list_and_unknown_method() {
        let r = d().dispatch(RpcRequest::new(1, "tool.list", Value::Null));
        assert_eq!(canonical::to_string(&r), r#"{"id":1,"jsonrpc":"2.0","result":[]}"#);
        let r = d().dispatch(RpcRequest::new(2, "nope.xyz", Value::Null));
        assert_eq!(r.error.unwrap().code, METHOD_NOT_FOUND);
        let r = d().dispatch(RpcRequest::new(3, "prompt.get_state", json!({"name": "x"})));
        assert_eq!(r.error.unwrap().code, METHOD_NOT_FOUND);
    }

    #[test]
    fn params_and_domain_errors() {
        let dp = d();
        let r = dp.dispatch(RpcRequest::new(1, "prompt.get_info", json!({"nam": "x"})));
        assert_eq!(r.error.unwrap().code, INVALID_PARAMS);
        let r = dp.dispatch(RpcRequest::new(2, "prompt.get_info", json!({"name": "x"})));
        let e = r.error.unwrap();
        assert_eq!(e.code, -32001);
        assert_eq!(e.data.unwrap()["kind"], "NotFound");
        assert_eq!(dp.dispatch_bytes(b"{not json").error.unwrap().code, PARSE_ERROR);
        assert_eq!(dp.dispatch_bytes(b"{\"id\": 4}").error.unwrap().code, INVALID_REQUEST);
    }

    #[test]
    fn register_then_get_info_matches_direct() {
        let dp = d();
        let rec = RegistrationRecord::prompt("solver", "d", "hello");
        let r = dp.dispatch(RpcRequest::new(1, "prompt.register", json!({ "record": rec })));
        assert_eq!(r.result.unwrap(), json!("0.1.0"));
        let r = dp.dispatch(RpcRequest::new(2, "prompt.get_info", json!({"name": "solver"})));
        let direct = dp.hub().registry(EntityKind::Prompt).get_info("solver").unwrap();
        assert_eq!(canonical::to_string(&r.result.unwrap()), canonical::to_string(&direct));
        let r = dp.dispatch(RpcRequest::new(3, "tool.register", json!({ "record": rec })));
        assert_eq!(r.error.unwrap().code, INVALID_PARAMS);
    }

    #[test]
    fn catalogue_covers_kinds() {
        let c = catalogue();
        assert_eq!(c.methods.len() + c.excluded.len(), 5 * Operator::ALL.len());
        assert!(c.methods.iter().any(|m| m.method == "memory.get_state"));
        assert!(c.excluded.iter().any(|m| m.method == "tool.get"));
    }
}
