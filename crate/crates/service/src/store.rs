//! Append-only JSON-lines key-value log.
//!
//! Each write is appended and `fsync`ed before the in-memory map is
//! updated, so a crash loses at most the write in flight. On open the log
//! is replayed; a torn final line is ignored.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Serialize, Deserialize)]
struct Entry {
    k: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Value>,
}

struct Inner {
    file: Option<File>,
    map: BTreeMap<String, Value>,
}

pub struct KvStore {
    inner: Mutex<Inner>,
}

impl KvStore {
    pub fn memory() -> Self {
        Self {
            inner: Mutex::new(Inner {
                file: None,
                map: BTreeMap::new(),
            }),
        }
    }

    pub fn open(path: &Path) -> io::Result<Self> {
        let mut map = BTreeMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                let Ok(e) = serde_json::from_str::<Entry>(&line) else {
                    tracing::warn!(path = %path.display(), "skipping unreadable log line");
                    continue;
                };
                match e.v {
                    Some(v) => map.insert(e.k, v),
                    None => map.remove(&e.k),
                };
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let torn = std::fs::read(path)?.last().is_some_and(|b| *b != b'\n');
        if torn {
            file.write_all(b"\n")?;
        }
        Ok(Self {
            inner: Mutex::new(Inner {
                file: Some(file),
                map,
            }),
        })
    }

    fn write(&self, key: &str, value: Option<Value>) -> io::Result<()> {
        let mut inner = self.inner.lock();
        if let Some(f) = inner.file.as_mut() {
            let mut line = serde_json::to_vec(&Entry {
                k: key.to_string(),
                v: value.clone(),
            })?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        match value {
            Some(v) => inner.map.insert(key.to_string(), v),
            None => inner.map.remove(key),
        };
        Ok(())
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> io::Result<()> {
        self.write(key, Some(serde_json::to_value(value)?))
    }

    pub fn delete(&self, key: &str) -> io::Result<()> {
        self.write(key, None)
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        let inner = self.inner.lock();
        inner
            .map
            .get(key)
            .and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    /// All decodable entries under `prefix`, in key order.
    pub fn scan<T: DeserializeOwned>(&self, prefix: &str) -> Vec<(String, T)> {
        let inner = self.inner.lock();
        inner
            .map
            .range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .filter_map(|(k, v)| Some((k.clone(), serde_json::from_value(v.clone()).ok()?)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kv.log");
        {
            let kv = KvStore::open(&path).unwrap();
            kv.put("user/a", &1u32).unwrap();
            kv.put("user/b", &2u32).unwrap();
            kv.put("other/c", &3u32).unwrap();
            kv.put("user/a", &10u32).unwrap();
            kv.delete("user/b").unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"k\":\"user/z\",\"v\":").unwrap();
        drop(f);

        let kv = KvStore::open(&path).unwrap();
        kv.put("user/d", &4u32).unwrap();
        drop(kv);
        let kv = KvStore::open(&path).unwrap();
        assert_eq!(kv.get::<u32>("user/d"), Some(4));
        kv.delete("user/d").unwrap();
        assert_eq!(kv.get::<u32>("user/a"), Some(10));
        assert_eq!(kv.get::<u32>("user/b"), None);
        assert_eq!(kv.scan::<u32>("user/"), vec![("user/a".to_string(), 10)]);
        assert_eq!(kv.len(), 2);
    }
}
