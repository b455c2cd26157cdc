use std::path::PathBuf;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use elpasso_core::groups::PublicParams;
use elpasso_core::protocol::enroll::{self, EnrollEphemeral};
use elpasso_core::protocol::{CredentialBundle, Disclosure, UserSecrets};
use elpasso_core::IdpPublicKey;
use elpasso_service::flows::{self, SignOnOptions};
use elpasso_service::Client;
use rand::rngs::OsRng;
use rand::RngCore;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::keystore::{IdpEntry, Keystore, Retired, StoredSecrets};
use crate::IdpLogin;

const POLL: Duration = Duration::from_millis(250);

pub struct Context {
    path: PathBuf,
}

fn now() -> u64 {
    // Test hook: pins the client's notion of time.
    if let Some(t) = std::env::var("ELPASSO_NOW")
        .ok()
        .and_then(|v| v.parse().ok())
    {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn passphrase(confirm: bool) -> Result<String, CliError> {
    if let Ok(p) = std::env::var("ELPASSO_PASSPHRASE") {
        return Ok(p);
    }
    let no_tty =
        |_| CliError::Invalid("no passphrase: set ELPASSO_PASSPHRASE or run interactively".into());
    let p = rpassword::prompt_password("keystore passphrase: ").map_err(no_tty)?;
    if confirm && rpassword::prompt_password("repeat passphrase: ").map_err(no_tty)? != p {
        return Err(CliError::Invalid("passphrases differ".into()));
    }
    Ok(p)
}

fn password(idp: &IdpLogin) -> Result<String, CliError> {
    match &idp.password {
        Some(p) => Ok(p.clone()),
        None => rpassword::prompt_password(format!("password for {} at {}: ", idp.login, idp.idp))
            .map_err(|_| {
                CliError::Invalid("no password: pass --password or set ELPASSO_PASSWORD".into())
            }),
    }
}

fn params() -> Result<PublicParams, CliError> {
    PublicParams::setup(128).map_err(|e| CliError::Other(e.to_string()))
}

fn stored_pk(entry: &IdpEntry) -> Result<IdpPublicKey, CliError> {
    IdpPublicKey::from_bytes(&entry.pk).map_err(|e| CliError::Other(format!("stored IdP key: {e}")))
}

fn secrets_of(entry: &IdpEntry, url: &str) -> Result<UserSecrets, CliError> {
    entry
        .secrets
        .as_ref()
        .ok_or_else(|| {
            CliError::Invalid(format!(
                "no secret for {url}; run fetch-credential or add-device"
            ))
        })?
        .open()
        .map_err(CliError::from)
}

/// Logs in and returns a client carrying the session.
fn session(idp: &IdpLogin, device_id: &str) -> Result<Client, CliError> {
    let pw = password(idp)?;
    let s = Client::new(&idp.idp).login(&idp.login, &pw, device_id)?;
    Ok(Client::new(&idp.idp).with_token(s.token))
}

/// The IdP's current key and name, checked for internal consistency.
fn fetch_key(url: &str) -> Result<(Vec<u8>, IdpPublicKey, String), CliError> {
    let c = Client::new(url);
    let (bytes, pk) = c.fetch_pk()?;
    if !pk.is_consistent() {
        return Err(CliError::Rejected(format!(
            "{url} served an inconsistent public key"
        )));
    }
    let meta = c.idp_meta()?;
    Ok((bytes, pk, meta.name))
}

fn entry_for<'a>(
    ks: &'a mut Keystore,
    idp: &IdpLogin,
) -> Result<Option<&'a mut IdpEntry>, CliError> {
    match ks.data.idps.get_mut(&idp.idp) {
        Some(e) if e.login != idp.login => Err(CliError::Invalid(format!(
            "keystore holds login {:?} for {}",
            e.login, idp.idp
        ))),
        other => Ok(other),
    }
}

fn credential_json(url: &str, b: &CredentialBundle, at: u64) -> Value {
    json!({
        "idp": url,
        "issuer": b.issuer,
        "expiry_day": b.tp,
        "expired": b.is_expired(at),
        "info": b.info.keys().collect::<Vec<_>>(),
    })
}

impl Context {
    pub fn new(path: PathBuf) -> Self {
        Self { path }
    }

    fn open(&self) -> Result<Keystore, CliError> {
        let pass = passphrase(false)?;
        Ok(Keystore::open(&self.path, &pass)?)
    }

    pub fn init(&self, device_id: Option<String>) -> Result<Value, CliError> {
        let device_id = device_id.unwrap_or_else(|| {
            let mut b = [0u8; 6];
            OsRng.fill_bytes(&mut b);
            format!("dev-{}", hex::encode(b))
        });
        if device_id.is_empty() {
            return Err(CliError::Invalid("device id must not be empty".into()));
        }
        let pass = passphrase(true)?;
        let ks = Keystore::create(&self.path, &pass, &device_id)?;
        Ok(json!({"ok": true, "device_id": device_id, "keystore": ks.path()}))
    }

    pub fn fetch_credential(
        &self,
        idp: &IdpLogin,
        info: &[String],
        two_fa: bool,
    ) -> Result<Value, CliError> {
        let mut ks = self.open()?;
        let device_id = ks.data.device_id.clone();
        let existing = entry_for(&mut ks, idp)?.cloned();
        let secrets = match &existing {
            Some(e) if e.secrets.is_some() => secrets_of(e, &idp.idp)?,
            Some(e) if e.pending_enroll.is_some() => {
                return Err(CliError::Invalid(format!(
                    "enrollment with {} is pending; finish add-device first",
                    idp.idp
                )))
            }
            _ => UserSecrets::generate(&mut OsRng),
        };
        let (pk_bytes, pk, name) = fetch_key(&idp.idp)?;
        let client = session(idp, &device_id)?;
        let bundle =
            flows::fetch_credential(&client, &pk, &name, &secrets, info, two_fa, &mut OsRng)?;
        let out = credential_json(&idp.idp, &bundle, now());
        let retired = existing.and_then(|e| e.retired);
        ks.data.idps.insert(
            idp.idp.clone(),
            IdpEntry {
                name,
                login: idp.login.clone(),
                pk: pk_bytes,
                secrets: Some(StoredSecrets::new(&secrets)),
                credential: Some(bundle),
                two_fa,
                retired,
                pending_enroll: None,
            },
        );
        ks.save()?;
        Ok(json!({"ok": true, "credential": out}))
    }

    pub fn signon(
        &self,
        rp: &str,
        idp: Option<&str>,
        disclose: &[String],
        guest: bool,
        two_fa: bool,
    ) -> Result<Value, CliError> {
        let ks = self.open()?;
        let (url, entry) = match idp {
            Some(u) => ks
                .data
                .idps
                .get_key_value(u)
                .ok_or_else(|| CliError::Invalid(format!("no credential from {u}")))?,
            None => {
                let mut held = ks.data.idps.iter().filter(|(_, e)| e.credential.is_some());
                match (held.next(), held.next()) {
                    (Some(one), None) => one,
                    (None, _) => {
                        return Err(CliError::Invalid(
                            "no credential; run fetch-credential".into(),
                        ))
                    }
                    _ => {
                        return Err(CliError::Invalid(
                            "several credentials stored; pass --idp".into(),
                        ))
                    }
                }
            }
        };
        let bundle = entry.credential.as_ref().ok_or_else(|| {
            CliError::Invalid(format!("no credential from {url}; run fetch-credential"))
        })?;

        let disclosures = disclose
            .iter()
            .map(|d| Disclosure::parse(d))
            .collect::<Result<Vec<_>, _>>()?;
        for d in &disclosures {
            let value = bundle.info.get(d.label()).ok_or_else(|| {
                CliError::Invalid(format!(
                    "credential from {} has no attribute {:?}",
                    bundle.issuer,
                    d.label()
                ))
            })?;
            if let Disclosure::Equals(l, want) = d {
                if &value.to_string() != want {
                    return Err(CliError::Invalid(format!("{l} is not {want:?}")));
                }
            }
        }
        let at = now();
        if bundle.is_expired(at) {
            return Err(CliError::Expired {
                issuer: bundle.issuer.clone(),
                day: bundle.tp,
                url: url.clone(),
            });
        }
        if two_fa && !entry.two_fa {
            return Err(CliError::Invalid(format!(
                "credential from {url} does not bind this device; fetch it with --2fa"
            )));
        }
        let secrets = secrets_of(entry, url)?;
        let pk = stored_pk(entry)?;
        let params = params()?;

        let client = Client::new(rp);
        let meta = client.signon_meta()?;
        if !meta.idps.iter().any(|i| i == &bundle.issuer) {
            return Err(CliError::Rejected(format!(
                "{} does not accept credentials from {}",
                meta.domain, bundle.issuer
            )));
        }
        let opts = SignOnOptions { guest, two_fa };
        let req = flows::prepare_signon(
            &meta,
            &params,
            &pk,
            bundle,
            &secrets,
            &disclosures,
            opts,
            at,
            &mut OsRng,
        )?;
        let result = client.signon(&req)?;
        if !result.accepted {
            let reason = result
                .reason
                .map_or("unspecified".to_string(), |r| r.to_string());
            return Err(CliError::Rejected(format!(
                "{} rejected the sign-on: {reason}",
                meta.domain
            )));
        }
        Ok(json!({
            "ok": true,
            "domain": meta.domain,
            "action": result.action,
            "account_id": result.account_id,
            "disclosed": req.disclosed.keys().collect::<Vec<_>>(),
        }))
    }

    pub fn add_device(&self, idp: &IdpLogin, salt: &str, wait: u64) -> Result<Value, CliError> {
        let mut ks = self.open()?;
        let device_id = ks.data.device_id.clone();
        let existing = entry_for(&mut ks, idp)?.cloned();
        if existing.as_ref().is_some_and(|e| e.secrets.is_some()) {
            return Err(CliError::Invalid(format!(
                "this device already holds a secret for {}",
                idp.idp
            )));
        }
        let client = session(idp, &device_id)?;
        let eph = match existing.as_ref().and_then(|e| e.pending_enroll.as_ref()) {
            Some(raw) => EnrollEphemeral::from_secret_bytes(raw)?,
            None => {
                let (pk_bytes, _, name) = fetch_key(&idp.idp)?;
                let (eph, init) = enroll::enroll_init(&device_id, &mut OsRng);
                client.enroll_init(&init)?;
                ks.data.idps.insert(
                    idp.idp.clone(),
                    IdpEntry {
                        name,
                        login: idp.login.clone(),
                        pk: pk_bytes,
                        secrets: None,
                        credential: None,
                        two_fa: false,
                        retired: None,
                        pending_enroll: Some(eph.to_secret_bytes()),
                    },
                );
                ks.save()?;
                eph
            }
        };
        let fp = enroll::fingerprint(eph.public(), salt);
        if wait == 0 {
            eprintln!("fingerprint: {fp}");
        }
        let deadline = Instant::now() + Duration::from_secs(wait);
        loop {
            if let Some(done) = client.enroll_complete(&device_id)? {
                let secrets = enroll::enroll_complete(&eph, &done, salt, &mut OsRng)?;
                let entry = ks
                    .data
                    .idps
                    .get_mut(&idp.idp)
                    .expect("entry inserted above");
                entry.secrets = Some(StoredSecrets::new(&secrets));
                entry.pending_enroll = None;
                ks.save()?;
                return Ok(
                    json!({"ok": true, "status": "enrolled", "device_id": device_id, "idp": idp.idp}),
                );
            }
            if Instant::now() >= deadline {
                return Ok(json!({
                    "ok": true,
                    "status": "pending",
                    "device_id": device_id,
                    "fingerprint": fp,
                    "hint": "approve from an enrolled device, then run add-device again",
                }));
            }
            std::thread::sleep(POLL);
        }
    }

    pub fn approve_device(
        &self,
        idp: &IdpLogin,
        device: &str,
        shown: &str,
        salt: &str,
    ) -> Result<Value, CliError> {
        let mut ks = self.open()?;
        let device_id = ks.data.device_id.clone();
        let entry = entry_for(&mut ks, idp)?
            .cloned()
            .ok_or_else(|| CliError::Invalid(format!("nothing stored for {}", idp.idp)))?;
        let secrets = secrets_of(&entry, &idp.idp)?;
        let client = session(idp, &device_id)?;
        let init = client
            .enroll_pending()?
            .into_iter()
            .find(|i| i.device_id == device)
            .ok_or_else(|| {
                CliError::Rejected(format!("no pending enrollment for device {device:?}"))
            })?;
        let approve = enroll::enroll_approve(&secrets, &init, salt, shown, &mut OsRng)?;
        client.enroll_approve(&approve)?;
        Ok(json!({"ok": true, "approved": device}))
    }

    pub fn rotate(&self, idp: &IdpLogin, rps: &[String]) -> Result<Value, CliError> {
        let mut ks = self.open()?;
        let device_id = ks.data.device_id.clone();
        let entry = entry_for(&mut ks, idp)?
            .cloned()
            .ok_or_else(|| CliError::Invalid(format!("nothing stored for {}", idp.idp)))?;
        let old_secrets = secrets_of(&entry, &idp.idp)?;
        let old = entry
            .credential
            .clone()
            .ok_or_else(|| CliError::Invalid("no credential to rotate from".into()))?;

        let (pk_bytes, pk, name) = fetch_key(&idp.idp)?;
        let client = session(idp, &device_id)?;
        let fresh = UserSecrets::generate(&mut OsRng);
        let labels: Vec<String> = old.info.keys().cloned().collect();
        let bundle = flows::fetch_credential(
            &client,
            &pk,
            &name,
            &fresh,
            &labels,
            entry.two_fa,
            &mut OsRng,
        )?;
        ks.data.idps.insert(
            idp.idp.clone(),
            IdpEntry {
                name,
                pk: pk_bytes,
                secrets: Some(StoredSecrets::new(&fresh)),
                credential: Some(bundle.clone()),
                retired: Some(Retired {
                    secrets: StoredSecrets::new(&old_secrets),
                    credential: old.clone(),
                }),
                ..entry
            },
        );
        ks.save()?;

        let old_pk = stored_pk(ks.data.idps.get(&idp.idp).expect("just inserted")).ok();
        let old_pk = match old_pk {
            Some(k) if k.fingerprint() == pk.fingerprint() => k,
            _ => pk.clone(),
        };
        let params = params()?;
        let at = now();
        let mut results = vec![];
        let mut rejected = vec![];
        for rp in rps {
            let r = flows::rotate(
                &Client::new(rp),
                &params,
                &old_pk,
                (&old, &old_secrets),
                (&bundle, &fresh),
                at,
                &mut OsRng,
            )?;
            if !r.accepted {
                rejected.push(format!(
                    "{rp}: {}",
                    r.reason.map_or("unspecified".into(), |x| x.to_string())
                ));
            }
            results.push(json!({"rp": rp, "accepted": r.accepted, "reason": r.reason, "account_id": r.account_id}));
        }
        if !rejected.is_empty() {
            return Err(CliError::Rejected(format!(
                "new secret stored, but rotation was rejected by {}",
                rejected.join(", ")
            )));
        }
        Ok(
            json!({"ok": true, "credential": credential_json(&idp.idp, &bundle, at), "rotated": results}),
        )
    }

    pub fn report_stolen(&self, idp: &IdpLogin, device: &str) -> Result<Value, CliError> {
        let ks = self.open()?;
        if ks.data.device_id == device {
            return Err(CliError::Invalid(
                "cannot revoke the device running this command".into(),
            ));
        }
        let client = session(idp, &ks.data.device_id)?;
        client.revoke(device)?;
        Ok(json!({"ok": true, "revoked": device, "idp": idp.idp}))
    }

    pub fn status(&self) -> Result<Value, CliError> {
        let ks = self.open()?;
        let at = now();
        let idps: Vec<Value> = ks
            .data
            .idps
            .iter()
            .map(|(url, e)| {
                json!({
                    "idp": url,
                    "name": e.name,
                    "login": e.login,
                    "has_secret": e.secrets.is_some(),
                    "device_bound": e.two_fa,
                    "credential": e.credential.as_ref().map(|b| credential_json(url, b, at)),
                    "pending_enrollment": e.pending_enroll.is_some(),
                    "rotated_from_day": e.retired.as_ref().map(|r| r.credential.tp),
                })
            })
            .collect();
        Ok(json!({"ok": true, "device_id": ks.data.device_id, "keystore": ks.path(), "idps": idps}))
    }
}

/// Plain-text rendering of a command result.
pub fn render(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    let pad = "  ".repeat(depth);
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                if k == "ok" {
                    continue;
                }
                match x {
                    Value::Object(_) => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        write_value(out, x, depth + 1);
                    }
                    Value::Array(items) if items.iter().any(|i| i.is_object()) => {
                        out.push_str(&format!("{pad}{k}:\n"));
                        for i in items {
                            out.push_str(&format!("{pad}  -\n"));
                            write_value(out, i, depth + 2);
                        }
                    }
                    _ => out.push_str(&format!("{pad}{k}: {}\n", scalar(x))),
                }
            }
        }
        other => out.push_str(&format!("{pad}{}\n", scalar(other))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => "-".into(),
        Value::Array(a) => a.iter().map(scalar).collect::<Vec<_>>().join(", "),
        other => other.to_string(),
    }
}
