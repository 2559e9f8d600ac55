use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use crate::gateway::{ChatBackend, ChatRequest, Completion, GatewayError, Usage};

/// Backend fixture that answers from a fixed queue of replies and records
/// every request it receives.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<String>>,
    transcript: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// Loads a JSON array of reply strings.
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::NotConfigured(format!("{}: {e}", path.display())))?;
        let replies: Vec<String> = serde_json::from_str(&raw)
            .map_err(|e| GatewayError::NotConfigured(format!("{}: {e}", path.display())))?;
        Ok(Self::new(replies))
    }

    pub fn transcript(&self) -> Vec<ChatRequest> {
        self.transcript.lock().unwrap().clone()
    }

    /// Every message text sent so far, concatenated.
    pub fn prompt_text(&self) -> String {
        self.transcript()
            .iter()
            .flat_map(|r| r.messages.iter().map(|m| m.content.clone()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        request.validate()?;
        self.transcript.lock().unwrap().push(request.clone());
        let text = self
            .replies
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| GatewayError::Protocol("scripted backend has no replies left".into()))?;
        Ok(Completion {
            text,
            usage: Usage {
                usage_reported: true,
                priced: true,
                ..Usage::default()
            },
            attempts: 1,
        })
    }
}
