//! Versioned model registry: a directory of model files plus an index.
//!
//! Layout: `index.json` lists every descriptor; each model lives in
//! `models/<name>/v<version>.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::Utc;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ForestModel, ModelDescriptor, ModelError, ModelNotification, MlSubscriptionResponse};
use crate::ees::AnalyticsEventId;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid model name {0:?}")]
    BadName(String),
    #[error("unknown model {name} v{version}")]
    UnknownModel { name: String, version: u32 },
    #[error("registry io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt registry file {path}: {reason}")]
    Corrupt { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MlSubscription {
    #[serde(default)]
    pub subscription_id: String,
    pub event_id: AnalyticsEventId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filters: Option<BTreeMap<String, String>>,
    pub notify_uri: String,
}

impl MlSubscription {
    pub fn matches(&self, d: &ModelDescriptor) -> bool {
        d.event_id == self.event_id && filters_match(self.filters.as_ref(), d)
    }
}

fn filters_match(filters: Option<&BTreeMap<String, String>>, d: &ModelDescriptor) -> bool {
    filters.is_none_or(|f| f.iter().all(|(k, v)| d.field(k).as_deref() == Some(v.as_str())))
}

/// A notification to POST to a subscriber once the write lock is released.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelNotice {
    pub notify_uri: String,
    pub body: ModelNotification,
}

#[derive(Default)]
struct State {
    models: BTreeMap<String, BTreeMap<u32, Arc<ForestModel>>>,
    subs: BTreeMap<String, MlSubscription>,
}

pub struct Registry {
    dir: PathBuf,
    state: RwLock<State>,
    public_base: RwLock<String>,
    next_sub: AtomicU64,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !name.starts_with('.')
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

impl Registry {
    /// Opens (or creates) a registry directory and loads every indexed model.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("models"))?;
        let mut state = State::default();
        let index = dir.join("index.json");
        if index.exists() {
            let corrupt = |reason: String| RegistryError::Corrupt { path: index.display().to_string(), reason };
            let list: Vec<ModelDescriptor> =
                serde_json::from_slice(&fs::read(&index)?).map_err(|e| corrupt(e.to_string()))?;
            for d in list {
                let version = d.version.ok_or_else(|| corrupt(format!("{} has no version", d.name)))?;
                let path = Self::model_path(&dir, &d.name, version);
                let model: ForestModel = serde_json::from_slice(&fs::read(&path)?).map_err(|e| RegistryError::Corrupt {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                state.models.entry(d.name.clone()).or_default().insert(version, Arc::new(model));
            }
        }
        Ok(Registry {
            dir,
            state: RwLock::new(state),
            public_base: RwLock::new("http://127.0.0.1".into()),
            next_sub: AtomicU64::new(1),
        })
    }

    fn model_path(dir: &Path, name: &str, version: u32) -> PathBuf {
        dir.join("models").join(name).join(format!("v{version}.json"))
    }

    /// Base URI used when building inference URLs.
    pub fn set_public_base(&self, base: impl Into<String>) {
        *self.public_base.write() = base.into();
    }

    pub fn inference_uri(&self, name: &str, version: u32) -> String {
        format!("{}/models/{name}/{version}:infer", self.public_base.read())
    }

    fn notice(&self, sub: &MlSubscription, m: &ForestModel) -> ModelNotification {
        let version = m.descriptor.version.expect("registered models carry a version");
        ModelNotification {
            subscription_id: sub.subscription_id.clone(),
            model_name: m.descriptor.name.clone(),
            model_version: version,
            inference_uri: self.inference_uri(&m.descriptor.name, version),
            feature_schema: m.descriptor.feature_schema.clone(),
        }
    }

    /// Stores the model under the next version of its name and returns the
    /// notifications due to matching subscribers.
    pub fn register(&self, mut model: ForestModel) -> Result<(ModelDescriptor, Vec<ModelNotice>), RegistryError> {
        model.validate()?;
        if !valid_name(&model.descriptor.name) {
            return Err(RegistryError::BadName(model.descriptor.name));
        }
        let mut state = self.state.write();
        let versions = state.models.entry(model.descriptor.name.clone()).or_default();
        let version = versions.keys().next_back().map_or(1, |v| v + 1);
        model.descriptor.version = Some(version);
        model.descriptor.created_at = Some(Utc::now());

        let path = Self::model_path(&self.dir, &model.descriptor.name, version);
        fs::create_dir_all(path.parent().expect("model path has a parent"))?;
        write_atomic(&path, &model.to_json())?;
        let model = Arc::new(model);
        versions.insert(version, model.clone());

        let index: Vec<&ModelDescriptor> =
            state.models.values().flat_map(|vs| vs.values().map(|m| &m.descriptor)).collect();
        let written = serde_json::to_vec_pretty(&index).expect("index serializes");
        if let Err(e) = write_atomic(&self.dir.join("index.json"), &written) {
            state.models.get_mut(&model.descriptor.name).expect("just inserted").remove(&version);
            let _ = fs::remove_file(&path);
            return Err(e.into());
        }

        let notices = state
            .subs
            .values()
            .filter(|s| s.matches(&model.descriptor))
            .map(|s| ModelNotice { notify_uri: s.notify_uri.clone(), body: self.notice(s, &model) })
            .collect();
        Ok((model.descriptor.clone(), notices))
    }

    /// Latest matching model, preferring the most recently created one.
    fn current_match(&self, state: &State, sub: &MlSubscription) -> Option<Arc<ForestModel>> {
        state
            .models
            .values()
            .filter_map(|vs| vs.values().rev().find(|m| sub.matches(&m.descriptor)))
            .max_by_key(|m| m.descriptor.created_at)
            .cloned()
    }

    pub fn subscribe(&self, mut sub: MlSubscription) -> MlSubscriptionResponse {
        sub.subscription_id = format!("mlsub-{}", self.next_sub.fetch_add(1, Ordering::Relaxed));
        let mut state = self.state.write();
        let current = self.current_match(&state, &sub).map(|m| self.notice(&sub, &m));
        state.subs.insert(sub.subscription_id.clone(), sub.clone());
        MlSubscriptionResponse { subscription_id: sub.subscription_id, current }
    }

    pub fn unsubscribe(&self, id: &str) -> bool {
        self.state.write().subs.remove(id).is_some()
    }

    pub fn subscription_count(&self) -> usize {
        self.state.read().subs.len()
    }

    /// Matching descriptors grouped by name, newest version first.
    pub fn query(&self, event_id: AnalyticsEventId, filters: &BTreeMap<String, String>) -> Vec<ModelDescriptor> {
        let filters = Some(filters).filter(|f| !f.is_empty());
        self.state
            .read()
            .models
            .values()
            .flat_map(|vs| vs.values().rev())
            .map(|m| &m.descriptor)
            .filter(|d| d.event_id == event_id && filters_match(filters, d))
            .cloned()
            .collect()
    }

    pub fn get(&self, name: &str, version: u32) -> Result<Arc<ForestModel>, RegistryError> {
        self.state
            .read()
            .models
            .get(name)
            .and_then(|vs| vs.get(&version))
            .cloned()
            .ok_or_else(|| RegistryError::UnknownModel { name: name.to_string(), version })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlprov::{DecisionTree, ModelDescriptor};

    fn model(name: &str) -> ForestModel {
        ForestModel {
            descriptor: ModelDescriptor {
                name: name.into(),
                version: None,
                event_id: AnalyticsEventId::AbnormalBehaviour,
                feature_schema: vec!["a".into()],
                created_at: None,
                metrics: None,
            },
            num_classes: 2,
            trees: vec![DecisionTree::leaf(0)],
        }
    }

    fn sub(uri: &str) -> MlSubscription {
        MlSubscription {
            subscription_id: String::new(),
            event_id: AnalyticsEventId::AbnormalBehaviour,
            filters: None,
            notify_uri: uri.into(),
        }
    }

    #[test]
    fn versions_increase_and_query_lists_newest_first() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::open(dir.path()).unwrap();
        assert_eq!(reg.register(model("bot-rf")).unwrap().0.version, Some(1));
        assert_eq!(reg.register(model("bot-rf")).unwrap().0.version, Some(2));
        let q = reg.query(AnalyticsEventId::AbnormalBehaviour, &BTreeMap::new());
        assert_eq!(q.iter().map(|d| d.version.unwrap()).collect::<Vec<_>>(), vec![2, 1]);
        let only_v1 = BTreeMap::from([("version".to_string(), "1".to_string())]);
        assert_eq!(reg.query(AnalyticsEventId::AbnormalBehaviour, &only_v1).len(), 1);
    }

    #[test]
    fn subscribers_get_one_notice_per_registration() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::open(dir.path()).unwrap();
        let first = reg.subscribe(sub("http://a/ml"));
        assert!(first.current.is_none());
        reg.subscribe(sub("http://b/ml"));
        let (_, notices) = reg.register(model("bot-rf")).unwrap();
        assert_eq!(notices.len(), 2);
        assert!(notices.iter().all(|n| n.body.inference_uri.ends_with("/models/bot-rf/1:infer")));
        let late = reg.subscribe(sub("http://c/ml"));
        assert_eq!(late.current.unwrap().model_version, 1);
        let mut filtered = sub("http://d/ml");
        filtered.filters = Some(BTreeMap::from([("name".to_string(), "other".to_string())]));
        reg.subscribe(filtered);
        assert_eq!(reg.register(model("bot-rf")).unwrap().1.len(), 3);
    }

    #[test]
    fn reopen_restores_models() {
        let dir = tempfile::tempdir().unwrap();
        {
            let reg = Registry::open(dir.path()).unwrap();
            reg.register(model("bot-rf")).unwrap();
            reg.register(model("bot-rf")).unwrap();
        }
        let reg = Registry::open(dir.path()).unwrap();
        assert_eq!(reg.get("bot-rf", 2).unwrap().descriptor.version, Some(2));
        assert_eq!(reg.register(model("bot-rf")).unwrap().0.version, Some(3));
    }

    #[test]
    fn invalid_models_and_names_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::open(dir.path()).unwrap();
        let mut m = model("../evil");
        assert!(matches!(reg.register(m.clone()), Err(RegistryError::BadName(_))));
        m.descriptor.name = "ok".into();
        m.num_classes = 3;
        assert!(matches!(reg.register(m), Err(RegistryError::Model(_))));
        assert!(matches!(reg.get("ok", 1), Err(RegistryError::UnknownModel { .. })));
    }
}
