mod common;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use common::{completion_body, StubServer};
use made_core::gateway::{
    CallLedger, ChatBackend, ChatMessage, ChatRequest, Gateway, GatewayConfig, GatewayError, ModelPrice, PriceTable,
    RetryPolicy,
};

const IN_PRICE: f64 = 0.25e-6;
const OUT_PRICE: f64 = 1.0e-6;

fn gateway(base: &str, ledger: Arc<CallLedger>) -> Gateway {
    let prices = PriceTable::new(BTreeMap::from([(
        "stub-model".to_string(),
        ModelPrice { input: IN_PRICE, output: OUT_PRICE },
    )]))
    .unwrap();
    let cfg = GatewayConfig {
        api_base: base.to_string(),
        api_key: Some("sk-test".into()),
        prices,
        retry: RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(5),
            factor: 2.0,
            budget: Duration::from_secs(10),
        },
        request_timeout: Duration::from_secs(5),
        max_in_flight: 2,
    };
    Gateway::new(cfg).with_sink(ledger)
}

fn request(model: &str, id: &str) -> ChatRequest {
    ChatRequest {
        model: model.into(),
        messages: vec![ChatMessage::user("hello")],
        temperature: 0.0,
        max_tokens: 64,
        request_id: id.into(),
    }
}

#[test]
fn usage_matches_scripted_reply() {
    let stub = StubServer::start(vec![(200, completion_body("hi there", Some((10, 5))))]);
    let ledger = Arc::new(CallLedger::default());
    let gw = gateway(&stub.base, ledger.clone());
    let c = gw.complete(&request("stub-model", "r0")).unwrap();
    assert_eq!(c.text, "hi there");
    assert_eq!(c.attempts, 1);
    assert_eq!(c.usage.input_tokens, 10);
    assert_eq!(c.usage.output_tokens, 5);
    assert_eq!(c.usage.cost, 10.0 * IN_PRICE + 5.0 * OUT_PRICE);
    assert!(c.usage.latency_secs > 0.0);
    let calls = ledger.calls();
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0].usage.as_ref(), Some(&c.usage));
    let seen = stub.requests();
    assert_eq!(seen[0].path, "/v1/chat/completions");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["model"], "stub-model");
}

#[test]
fn rate_limit_then_success_counts_two_attempts() {
    let stub = StubServer::start(vec![
        (429, "{\"error\":\"slow down\"}".into()),
        (200, completion_body("ok", Some((10, 5)))),
    ]);
    let ledger = Arc::new(CallLedger::default());
    let c = gateway(&stub.base, ledger.clone()).complete(&request("stub-model", "r1")).unwrap();
    assert_eq!(c.attempts, 2);
    assert_eq!((c.usage.input_tokens, c.usage.output_tokens), (10, 5));
    assert_eq!(stub.requests().len(), 2);
    let calls = ledger.calls();
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0].attempts, 2);
    assert!(calls[0].error.is_none());
}

#[test]
fn unauthorized_is_not_retried() {
    let stub = StubServer::start(vec![(401, "{}".into()), (200, completion_body("never", Some((1, 1))))]);
    let ledger = Arc::new(CallLedger::default());
    let err = gateway(&stub.base, ledger.clone()).complete(&request("stub-model", "r2")).unwrap_err();
    assert!(matches!(err, GatewayError::Credential));
    assert_eq!(stub.requests().len(), 1);
    let calls = ledger.calls();
    assert_eq!(calls[0].attempts, 1);
    assert!(calls[0].usage.is_none());
    assert!(calls[0].error.is_some());
}

#[test]
fn server_errors_exhaust_attempts() {
    let stub = StubServer::start(vec![(503, "{}".into()); 5]);
    let ledger = Arc::new(CallLedger::default());
    let err = gateway(&stub.base, ledger.clone()).complete(&request("stub-model", "r3")).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 5, .. }), "{err}");
    assert_eq!(stub.requests().len(), 5);
}

#[test]
fn missing_usage_and_unpriced_model_flagged() {
    let stub = StubServer::start(vec![
        (200, completion_body("a", None)),
        (200, completion_body("b", Some((3, 4)))),
    ]);
    let gw = gateway(&stub.base, Arc::new(CallLedger::default()));
    let a = gw.complete(&request("stub-model", "r4")).unwrap();
    assert!(!a.usage.usage_reported);
    assert_eq!((a.usage.input_tokens, a.usage.output_tokens), (0, 0));
    let b = gw.complete(&request("other-model", "r5")).unwrap();
    assert!(!b.usage.priced);
    assert_eq!(b.usage.cost, 0.0);
    assert_eq!(b.usage.input_tokens, 3);
}

#[test]
fn summed_accounting_over_several_calls() {
    let script = vec![
        (200, completion_body("1", Some((10, 5)))),
        (429, "{}".into()),
        (200, completion_body("2", Some((20, 7)))),
        (200, completion_body("3", Some((4, 1)))),
    ];
    let stub = StubServer::start(script);
    let ledger = Arc::new(CallLedger::default());
    let gw = gateway(&stub.base, ledger.clone());
    for i in 0..3 {
        gw.complete(&request("stub-model", &format!("q{i}"))).unwrap();
    }
    let calls = ledger.calls();
    let attempts: Vec<u32> = calls.iter().map(|c| c.attempts).collect();
    assert_eq!(attempts, vec![1, 2, 1]);
    let usages: Vec<_> = calls.iter().map(|c| c.usage.clone().unwrap()).collect();
    let s = made_core::gateway::account(&usages);
    assert_eq!(s.calls, 3);
    assert_eq!(s.total_input_tokens, 34);
    assert_eq!(s.total_output_tokens, 13);
    let expected = (10.0 * IN_PRICE + 5.0 * OUT_PRICE) + (20.0 * IN_PRICE + 7.0 * OUT_PRICE) + (4.0 * IN_PRICE + 1.0 * OUT_PRICE);
    assert!((s.total_cost - expected).abs() < 1e-15);
}
