//! Deterministic mock Android device.
//!
//! [`build_fixture`] produces a seeded synthetic filesystem (~2000 entries,
//! ~20 MiB) shaped like a 2012-era Android tree: `/system`, `/data` with
//! per-app sandboxes and the package registry, `/sdcard` with media, plus
//! symlinks. The same seed and profile always produce the identical tree.
//!
//! [`start_server`] serves a fixture over [`crate::wireproto`] under a
//! [`DevicePolicy`]: non-rooted devices cannot bind ports below 1024 and
//! deny access beneath the configured prefixes.

use std::collections::BTreeMap;
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha1::{Digest, Sha1};
use thiserror::Error;

use crate::fsmeta::{encode_attr, DevicePath, FileAttr, FileKind};
use crate::wireproto::{
    serve_listener, Credentials, DeviceInfo, FileStore, ServerConfig, StoreError,
};

/// Registry files rewritten on every install/uninstall.
pub const PACKAGES_LIST: &str = "/data/system/packages.list";
pub const PACKAGES_XML: &str = "/data/system/packages.xml";

/// The agent package the acquisition story revolves around.
pub const AGENT_PACKAGE: &str = "berserker.android.apps.sshdroidpro";
pub const AGENT_UID: u32 = 10_059;

/// Folders a non-rooted session may not enter.
pub const DEFAULT_DENIED_PREFIXES: [&str; 3] = ["/data/data", "/data/system", "/data/app-private"];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown device profile: {0}")]
    UnknownProfile(String),
    #[error("non-rooted device cannot serve on privileged port {0}")]
    PortPolicy(u16),
    #[error("failed to bind listener: {0}")]
    BindFailed(std::io::Error),
    #[error("package already installed: {0}")]
    DuplicatePackage(String),
    #[error("package not installed: {0}")]
    UnknownPackage(String),
    #[error("no such fixture path: {0}")]
    NoSuchPath(String),
}

/// One of the test devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceProfile {
    pub name: &'static str,
    pub model: &'static str,
    pub android_version: &'static str,
    pub rooted: bool,
    /// Port the agent app announces by default: 22 once rooted, 2222
    /// otherwise.
    pub default_port: u16,
}

pub const PROFILES: [DeviceProfile; 3] = [
    DeviceProfile {
        name: "apollo-2.2-rooted",
        model: "Samsung Apollo GT-I5800",
        android_version: "2.2",
        rooted: true,
        default_port: 22,
    },
    DeviceProfile {
        name: "archos-4.0-rooted",
        model: "Archos 101G9",
        android_version: "4.0.4",
        rooted: true,
        default_port: 22,
    },
    DeviceProfile {
        name: "htc-4.1-nonrooted",
        model: "HTC One X",
        android_version: "4.1.1",
        rooted: false,
        default_port: 2222,
    },
];

impl DeviceProfile {
    pub fn by_name(name: &str) -> Result<&'static DeviceProfile, SimError> {
        PROFILES
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| SimError::UnknownProfile(name.to_string()))
    }
}

/// Access and serving rules for one simulated device.
#[derive(Debug, Clone)]
pub struct DevicePolicy {
    pub rooted: bool,
    /// Port to serve on; 0 binds an ephemeral port (always >= 1024, so it
    /// never violates the non-rooted restriction).
    pub port: u16,
    pub credentials: Credentials,
    /// Active only when `rooted == false`.
    pub denied_prefixes: Vec<DevicePath>,
}

impl DevicePolicy {
    /// Factory credentials, profile default port, stock denied prefixes.
    pub fn for_profile(profile: &DeviceProfile) -> DevicePolicy {
        DevicePolicy {
            rooted: profile.rooted,
            port: profile.default_port,
            credentials: Credentials::factory_default(),
            denied_prefixes: DEFAULT_DENIED_PREFIXES
                .iter()
                .map(|p| DevicePath::parse(p).unwrap())
                .collect(),
        }
    }

    pub fn with_port(mut self, port: u16) -> Self {
        self.port = port;
        self
    }
}

/// `true` = allow. Rooted sessions see everything; non-rooted sessions are
/// denied any path at or below a denied prefix (segment-aligned).
pub fn check_access(policy: &DevicePolicy, path: &DevicePath) -> bool {
    if policy.rooted {
        return true;
    }
    !policy.denied_prefixes.iter().any(|p| path.starts_with(p))
}

/// One fixture entry: attributes plus file content. Directories carry no
/// content; a symlink's "content" is its target string, held in the attr.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureNode {
    pub attr: FileAttr,
    pub content: Vec<u8>,
}

/// The synthetic device filesystem. Immutable once a server is started on
/// it (enforced by `start_server` taking `Arc<FixtureTree>`).
#[derive(Debug, Clone)]
pub struct FixtureTree {
    seed: u64,
    profile: &'static DeviceProfile,
    entries: BTreeMap<String, FixtureNode>,
    packages: BTreeMap<String, u32>,
}

impl FixtureTree {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn profile(&self) -> &'static DeviceProfile {
        self.profile
    }

    /// Identity the simulator reports once authenticated; `port` is the
    /// port the server actually listens on.
    pub fn device_info(&self, port: u16) -> DeviceInfo {
        DeviceInfo {
            model: self.profile.model.to_string(),
            android_version: self.profile.android_version.to_string(),
            rooted: self.profile.rooted,
            port,
        }
    }

    pub fn installed_packages(&self) -> &BTreeMap<String, u32> {
        &self.packages
    }

    pub fn get(&self, path: &str) -> Option<&FixtureNode> {
        self.entries.get(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &FixtureNode)> {
        self.entries.iter()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn file_count(&self) -> usize {
        self.entries
            .values()
            .filter(|n| n.attr.kind == FileKind::File)
            .count()
    }

    pub fn content_bytes(&self) -> u64 {
        self.entries
            .values()
            .filter(|n| n.attr.kind == FileKind::File)
            .map(|n| n.content.len() as u64)
            .sum()
    }

    /// SHA-1 over every (path, attr, content) in sorted order; two trees
    /// with equal digests hold identical data.
    pub fn tree_digest(&self) -> [u8; 20] {
        let mut h = Sha1::new();
        for (path, node) in &self.entries {
            h.update((path.len() as u64).to_be_bytes());
            h.update(path.as_bytes());
            h.update(encode_attr(&node.attr).expect("fixture attrs are valid"));
            h.update((node.content.len() as u64).to_be_bytes());
            h.update(&node.content);
        }
        h.finalize().into()
    }

    // --- direct (policy-free) tree access ---

    pub fn stat(&self, path: &DevicePath) -> Result<FileAttr, StoreError> {
        self.entries
            .get(path.as_str())
            .map(|n| n.attr.clone())
            .ok_or(StoreError::NotFound)
    }

    pub fn list_dir(&self, path: &DevicePath) -> Result<Vec<(String, FileAttr)>, StoreError> {
        let node = self.entries.get(path.as_str()).ok_or(StoreError::NotFound)?;
        if node.attr.kind != FileKind::Dir {
            return Err(StoreError::NotDir);
        }
        let prefix = if path.is_root() {
            "/".to_string()
        } else {
            format!("{}/", path.as_str())
        };
        let mut out = Vec::new();
        for (p, n) in self.entries.range(prefix.clone()..) {
            if !p.starts_with(&prefix) {
                break;
            }
            let rest = &p[prefix.len()..];
            if !rest.is_empty() && !rest.contains('/') {
                out.push((rest.to_string(), n.attr.clone()));
            }
        }
        Ok(out)
    }

    /// File bytes, or the target string for a symlink. Never follows links.
    pub fn read_all(&self, path: &DevicePath) -> Result<Vec<u8>, StoreError> {
        let node = self.entries.get(path.as_str()).ok_or(StoreError::NotFound)?;
        match node.attr.kind {
            FileKind::File => Ok(node.content.clone()),
            FileKind::Symlink => Ok(node
                .attr
                .link_target
                .as_ref()
                .expect("symlink has target")
                .clone()
                .into_bytes()),
            FileKind::Dir => Err(StoreError::IsDir),
        }
    }

    pub fn read_range(&self, path: &DevicePath, offset: u64, len: u32) -> Result<Vec<u8>, StoreError> {
        let content = self.read_all(path)?;
        let start = (offset as usize).min(content.len());
        let end = (offset.saturating_add(len as u64) as usize).min(content.len());
        Ok(content[start..end].to_vec())
    }

    // --- mutation; only meaningful before a server is started ---

    fn now_attr_file(&self, mode: u32, uid: u32, gid: u32, ts: u64, size: u64) -> FileAttr {
        FileAttr::file(mode, uid, gid, ts, 0, size)
    }

    /// Creates missing parent directories with stock attributes.
    fn ensure_parents(&mut self, path: &str, uid: u32, gid: u32, ts: u64) {
        let mut at = String::new();
        for segment in path.split('/').skip(1) {
            let parent_done = at.clone() + "/" + segment;
            if parent_done == path {
                break;
            }
            at = parent_done;
            if !self.entries.contains_key(&at) {
                self.entries.insert(
                    at.clone(),
                    FixtureNode {
                        attr: FileAttr::dir(0o755, uid, gid, ts, 0),
                        content: Vec::new(),
                    },
                );
            }
        }
    }

    pub fn add_dir(&mut self, path: &str, mode: u32, uid: u32, gid: u32, ts: u64) {
        self.ensure_parents(path, uid, gid, ts);
        self.entries.insert(
            path.to_string(),
            FixtureNode {
                attr: FileAttr::dir(mode, uid, gid, ts, 0),
                content: Vec::new(),
            },
        );
    }

    pub fn add_file(&mut self, path: &str, mode: u32, uid: u32, gid: u32, ts: u64, content: Vec<u8>) {
        self.ensure_parents(path, uid, gid, ts);
        let attr = self.now_attr_file(mode, uid, gid, ts, content.len() as u64);
        self.entries.insert(path.to_string(), FixtureNode { attr, content });
    }

    pub fn add_symlink(&mut self, path: &str, target: &str, uid: u32, gid: u32, ts: u64) {
        self.ensure_parents(path, uid, gid, ts);
        self.entries.insert(
            path.to_string(),
            FixtureNode {
                attr: FileAttr::symlink(target, uid, gid, ts, 0),
                content: Vec::new(),
            },
        );
    }

    /// Removes an entry and everything beneath it, returning the removed
    /// paths. Models deletion before acquisition.
    pub fn remove_subtree(&mut self, path: &str) -> Result<Vec<String>, SimError> {
        if !self.entries.contains_key(path) {
            return Err(SimError::NoSuchPath(path.to_string()));
        }
        let prefix = format!("{path}/");
        let doomed: Vec<String> = self
            .entries
            .keys()
            .filter(|p| p.as_str() == path || p.starts_with(&prefix))
            .cloned()
            .collect();
        for p in &doomed {
            self.entries.remove(p);
        }
        Ok(doomed)
    }

    /// Simulated agent install: creates the app sandbox under
    /// `/data/data/<name>` and rewrites the two registry files. Nothing
    /// else changes.
    pub fn install_package(&mut self, name: &str, uid: u32, ts: u64) -> Result<(), SimError> {
        if self.packages.contains_key(name) {
            return Err(SimError::DuplicatePackage(name.to_string()));
        }
        let base = format!("/data/data/{name}");
        let mut rng = ChaCha20Rng::seed_from_u64(splitmix(name, uid));
        self.add_dir(&base, 0o751, uid, uid, ts);
        for sub in ["cache", "databases", "files", "lib", "shared_prefs"] {
            self.add_dir(&format!("{base}/{sub}"), 0o771, uid, uid, ts);
        }
        let short = name.rsplit('.').next().unwrap_or(name);
        let db_len = 4096 + rng.gen_range(0..8192);
        let db = sqlite_blob(&mut rng, db_len);
        self.add_file(&format!("{base}/databases/{short}.db"), 0o660, uid, uid, ts, db);
        let prefs = prefs_xml(&mut rng, name);
        self.add_file(
            &format!("{base}/shared_prefs/{name}_preferences.xml"),
            0o660,
            uid,
            uid,
            ts,
            prefs,
        );
        self.packages.insert(name.to_string(), uid);
        self.rewrite_registry(ts);
        Ok(())
    }

    /// Simulated uninstall: removes the sandbox and rewrites the two
    /// registry files, dropping the package entry.
    pub fn uninstall_package(&mut self, name: &str, ts: u64) -> Result<(), SimError> {
        if self.packages.remove(name).is_none() {
            return Err(SimError::UnknownPackage(name.to_string()));
        }
        let base = format!("/data/data/{name}");
        if self.entries.contains_key(&base) {
            self.remove_subtree(&base)?;
        }
        self.rewrite_registry(ts);
        Ok(())
    }

    fn rewrite_registry(&mut self, ts: u64) {
        let list = packages_list_text(&self.packages);
        let xml = packages_xml_text(&self.packages);
        self.add_file(PACKAGES_LIST, 0o640, 1000, 1000, ts, list.into_bytes());
        self.add_file(PACKAGES_XML, 0o660, 1000, 1000, ts, xml.into_bytes());
    }
}

fn splitmix(name: &str, uid: u32) -> u64 {
    let mut x = uid as u64 ^ 0x9E37_79B9_7F4A_7C15;
    for b in name.bytes() {
        x = (x ^ b as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x ^= x >> 27;
    }
    x
}

fn packages_list_text(packages: &BTreeMap<String, u32>) -> String {
    let mut out = String::new();
    for (name, uid) in packages {
        out.push_str(&format!("{name} {uid} /data/data/{name}\n"));
    }
    out
}

fn packages_xml_text(packages: &BTreeMap<String, u32>) -> String {
    let mut out = String::from("<?xml version='1.0' encoding='utf-8'?>\n<packages>\n");
    for (name, uid) in packages {
        out.push_str(&format!(
            "  <package name=\"{name}\" codePath=\"/data/app/{name}-1.apk\" userId=\"{uid}\" flags=\"0\" />\n"
        ));
    }
    out.push_str("</packages>\n");
    out
}

// --- fixture generation ---

const WORDS: [&str; 32] = [
    "system", "backup", "cache", "media", "signal", "record", "update", "service", "widget",
    "sensor", "battery", "network", "camera", "account", "message", "contact", "profile",
    "storage", "kernel", "daemon", "socket", "packet", "buffer", "thread", "handler", "intent",
    "bundle", "cursor", "schema", "index", "session", "token",
];

const PKG_VENDORS: [&str; 8] = [
    "com.android", "com.google.android", "com.example", "org.droidware", "net.mobilesoft",
    "de.appfabrik", "com.hummingbird", "io.pocketlab",
];

const PKG_APPS: [&str; 24] = [
    "mail", "browser", "maps", "player", "notes", "weather", "gallery", "calculator", "chat",
    "backup", "scanner", "radio", "news", "translate", "keyboard", "launcher", "dialer",
    "calendar", "clock", "camera", "music", "torch", "files", "reader",
];

fn rand_block(rng: &mut ChaCha20Rng, len: usize) -> Vec<u8> {
    let mut out = vec![0u8; len];
    rng.fill(&mut out[..]);
    out
}

/// Low-entropy body: repeated dictionary words, newline-separated.
fn text_block(rng: &mut ChaCha20Rng, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 16);
    while out.len() < len {
        let word = WORDS[rng.gen_range(0..WORDS.len())];
        for _ in 0..rng.gen_range(1..6) {
            out.extend_from_slice(word.as_bytes());
            out.push(b' ');
        }
        out.push(b'\n');
    }
    out.truncate(len);
    out
}

/// Compressible and incompressible regions interleaved.
fn mixed_block(rng: &mut ChaCha20Rng, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let chunk = rng.gen_range(512..4096).min(len - out.len());
        if rng.gen_bool(0.5) {
            out.extend_from_slice(&rand_block(rng, chunk));
        } else {
            out.extend_from_slice(&text_block(rng, chunk));
        }
    }
    out
}

fn sqlite_blob(rng: &mut ChaCha20Rng, len: usize) -> Vec<u8> {
    let mut out = b"SQLite format 3\0".to_vec();
    out.extend_from_slice(&mixed_block(rng, len.saturating_sub(out.len())));
    out
}

fn jpeg_blob(rng: &mut ChaCha20Rng, len: usize) -> Vec<u8> {
    let mut out = vec![0xFF, 0xD8, 0xFF, 0xE0];
    out.extend_from_slice(&rand_block(rng, len.saturating_sub(6)));
    out.extend_from_slice(&[0xFF, 0xD9]);
    out
}

fn zip_blob(rng: &mut ChaCha20Rng, len: usize) -> Vec<u8> {
    let mut out = vec![0x50, 0x4B, 0x03, 0x04];
    out.extend_from_slice(&rand_block(rng, len.saturating_sub(4)));
    out
}

fn prefs_xml(rng: &mut ChaCha20Rng, pkg: &str) -> Vec<u8> {
    let mut out = format!("<?xml version='1.0' encoding='utf-8'?>\n<map package=\"{pkg}\">\n");
    for _ in 0..rng.gen_range(3..12) {
        let key = WORDS[rng.gen_range(0..WORDS.len())];
        out.push_str(&format!(
            "  <boolean name=\"{key}\" value=\"{}\" />\n",
            rng.gen_bool(0.5)
        ));
    }
    out.push_str("</map>\n");
    out.into_bytes()
}

struct Builder {
    rng: ChaCha20Rng,
    tree: FixtureTree,
    base_ts: u64,
}

impl Builder {
    fn ts(&mut self) -> u64 {
        self.base_ts - self.rng.gen_range(0..15_552_000) // up to ~180 days back
    }

    fn nsec(&mut self) -> u32 {
        self.rng.gen_range(0..1_000_000_000)
    }

    fn dir(&mut self, path: &str, mode: u32, uid: u32, gid: u32) {
        let (ts, nsec) = (self.ts(), self.nsec());
        self.tree.entries.insert(
            path.to_string(),
            FixtureNode {
                attr: FileAttr::dir(mode, uid, gid, ts, nsec),
                content: Vec::new(),
            },
        );
    }

    fn file(&mut self, path: &str, mode: u32, uid: u32, gid: u32, content: Vec<u8>) {
        let (ts, nsec) = (self.ts(), self.nsec());
        self.tree.entries.insert(
            path.to_string(),
            FixtureNode {
                attr: FileAttr::file(mode, uid, gid, ts, nsec, content.len() as u64),
                content,
            },
        );
    }

    fn symlink(&mut self, path: &str, target: &str, uid: u32, gid: u32) {
        let (ts, nsec) = (self.ts(), self.nsec());
        self.tree.entries.insert(
            path.to_string(),
            FixtureNode {
                attr: FileAttr::symlink(target, uid, gid, ts, nsec),
                content: Vec::new(),
            },
        );
    }
}

/// Builds the synthetic device tree for `(seed, profile)`. Deterministic:
/// the same pair always yields the same entries, attributes and bytes.
pub fn build_fixture(seed: u64, profile_name: &str) -> Result<FixtureTree, SimError> {
    let profile = DeviceProfile::by_name(profile_name)?;
    // profile influences content (build.prop, base timestamps) but not the
    // broad shape, so every profile carries the paths the tooling expects
    let mut stream_seed = splitmix(profile.name, 0x5EED);
    stream_seed ^= seed.rotate_left(17);
    let base_ts = 1_357_000_000 + splitmix(profile.android_version, 0) % 10_000_000;

    let mut b = Builder {
        rng: ChaCha20Rng::seed_from_u64(stream_seed),
        tree: FixtureTree {
            seed,
            profile,
            entries: BTreeMap::new(),
            packages: BTreeMap::new(),
        },
        base_ts,
    };

    b.dir("/", 0o755, 0, 0);
    build_system(&mut b);
    build_data(&mut b);
    build_sdcard(&mut b);
    build_misc(&mut b);

    // registry files reflect the generated package set
    let ts = b.ts();
    b.tree.rewrite_registry(ts);
    Ok(b.tree)
}

fn build_system(b: &mut Builder) {
    b.dir("/system", 0o755, 0, 0);
    let model = b.tree.profile.model;
    let version = b.tree.profile.android_version;
    let build_prop = format!(
        "ro.product.model={model}\nro.build.version.release={version}\nro.build.type=user\nro.product.locale.language=en\n"
    );
    b.file("/system/build.prop", 0o644, 0, 0, build_prop.into_bytes());

    b.dir("/system/bin", 0o755, 0, 2000);
    for i in 0..65 {
        let name = format!("/system/bin/{}{}", WORDS[i % WORDS.len()], i / WORDS.len());
        let len = b.rng.gen_range(3_000..24_576);
        let body = mixed_block(&mut b.rng, len);
        b.file(&name, 0o755, 0, 2000, body);
    }
    b.symlink("/system/bin/sh", "/system/bin/mksh0", 0, 2000);

    b.dir("/system/etc", 0o755, 0, 0);
    b.file(
        "/system/etc/hosts",
        0o644,
        0,
        0,
        b"127.0.0.1 localhost\n".to_vec(),
    );
    b.dir("/system/etc/permissions", 0o755, 0, 0);
    for i in 0..20 {
        let len = b.rng.gen_range(512..4_096);
        let body = text_block(&mut b.rng, len);
        b.file(
            &format!("/system/etc/permissions/android.hardware.{}{i}.xml", WORDS[i]),
            0o644,
            0,
            0,
            body,
        );
    }

    b.dir("/system/fonts", 0o755, 0, 0);
    for i in 0..14 {
        let len = b.rng.gen_range(20_000..80_000);
        let body = rand_block(&mut b.rng, len);
        b.file(&format!("/system/fonts/Droid{}{i}.ttf", WORDS[i]), 0o644, 0, 0, body);
    }

    b.dir("/system/framework", 0o755, 0, 0);
    for i in 0..22 {
        let len = b.rng.gen_range(10_000..60_000);
        let body = zip_blob(&mut b.rng, len);
        b.file(
            &format!("/system/framework/{}-{i}.jar", WORDS[(i * 3) % WORDS.len()]),
            0o644,
            0,
            0,
            body,
        );
    }

    b.dir("/system/app", 0o755, 0, 0);
    for i in 0..26 {
        let len = b.rng.gen_range(12_000..50_000);
        let body = zip_blob(&mut b.rng, len);
        b.file(
            &format!("/system/app/{}{i}.apk", PKG_APPS[i % PKG_APPS.len()]),
            0o644,
            0,
            0,
            body,
        );
    }

    b.dir("/system/lib", 0o755, 0, 0);
    for i in 0..70 {
        let len = b.rng.gen_range(4_000..24_000);
        let body = rand_block(&mut b.rng, len);
        b.file(
            &format!("/system/lib/lib{}{i}.so", WORDS[(i * 7) % WORDS.len()]),
            0o644,
            0,
            0,
            body,
        );
    }

    b.dir("/system/media", 0o755, 0, 0);
    let len = b.rng.gen_range(150_000..250_000);
    let body = zip_blob(&mut b.rng, len);
    b.file("/system/media/bootanimation.zip", 0o644, 0, 0, body);

    if b.tree.profile.rooted {
        b.dir("/system/xbin", 0o755, 0, 2000);
        let body = rand_block(&mut b.rng, 22_000);
        b.file("/system/xbin/su", 0o6755, 0, 2000, body);
    }
}

fn build_data(b: &mut Builder) {
    b.dir("/data", 0o771, 1000, 1000);
    b.dir("/data/app", 0o771, 1000, 1000);
    b.dir("/data/app-private", 0o771, 1000, 1000);
    b.dir("/data/data", 0o771, 1000, 1000);
    b.dir("/data/system", 0o775, 1000, 1000);
    b.dir("/data/local", 0o771, 2000, 2000);
    b.dir("/data/local/tmp", 0o771, 2000, 2000);
    b.dir("/data/misc", 0o771, 1000, 9998);
    b.dir("/data/misc/wifi", 0o770, 1010, 1010);
    b.dir("/data/anr", 0o775, 1000, 1000);
    b.dir("/data/dalvik-cache", 0o771, 1000, 1000);
    b.dir("/data/tombstones", 0o771, 1000, 1000);

    // deterministic package population, agent first
    let mut names = vec![AGENT_PACKAGE.to_string()];
    let mut next_uid = 10_000u32;
    while names.len() < 100 {
        let vendor = PKG_VENDORS[b.rng.gen_range(0..PKG_VENDORS.len())];
        let app = PKG_APPS[b.rng.gen_range(0..PKG_APPS.len())];
        let candidate = if b.rng.gen_bool(0.3) {
            format!("{vendor}.{app}{}", b.rng.gen_range(2..9))
        } else {
            format!("{vendor}.{app}")
        };
        if !names.contains(&candidate) {
            names.push(candidate);
        }
    }

    for name in names {
        let uid = if name == AGENT_PACKAGE {
            AGENT_UID
        } else {
            next_uid += 1;
            if next_uid == AGENT_UID {
                next_uid += 1;
            }
            next_uid
        };
        b.tree.packages.insert(name.clone(), uid);

        let base = format!("/data/data/{name}");
        b.dir(&base, 0o751, uid, uid);
        for sub in ["cache", "databases", "files", "lib", "shared_prefs"] {
            b.dir(&format!("{base}/{sub}"), 0o771, uid, uid);
        }
        let short = name.rsplit('.').next().unwrap_or(&name);
        let len = b.rng.gen_range(3_000..16_000);
        let body = sqlite_blob(&mut b.rng, len);
        b.file(&format!("{base}/databases/{short}.db"), 0o660, uid, uid, body);
        let body = prefs_xml(&mut b.rng, &name);
        b.file(
            &format!("{base}/shared_prefs/{name}_preferences.xml"),
            0o660,
            uid,
            uid,
            body,
        );
        for i in 0..b.rng.gen_range(0..4u32) {
            let len = b.rng.gen_range(1_000..12_000);
            let body = mixed_block(&mut b.rng, len);
            b.file(&format!("{base}/files/{}{i}.dat", WORDS[(i as usize * 5) % WORDS.len()]), 0o600, uid, uid, body);
        }
        if b.rng.gen_bool(0.4) {
            let len = b.rng.gen_range(2_000..9_000);
            let body = rand_block(&mut b.rng, len);
            b.file(&format!("{base}/cache/tmp{}.bin", uid % 97), 0o600, uid, uid, body);
        }

        // user-installed packages carry an apk and a dalvik-cache image
        if b.rng.gen_bool(0.55) || name == AGENT_PACKAGE {
            let len = b.rng.gen_range(25_000..90_000);
            let body = zip_blob(&mut b.rng, len);
            b.file(&format!("/data/app/{name}-1.apk"), 0o644, 1000, 1000, body);
            let len = b.rng.gen_range(10_000..40_000);
            let body = rand_block(&mut b.rng, len);
            b.file(
                &format!("/data/dalvik-cache/data@app@{name}-1.apk@classes.dex"),
                0o644,
                1000,
                1000,
                body,
            );
        }
    }

    // a couple of forward-locked apps
    for i in 0..2 {
        let len = b.rng.gen_range(25_000..70_000);
        let body = zip_blob(&mut b.rng, len);
        b.file(&format!("/data/app-private/locked{i}.apk"), 0o640, 1000, 1000, body);
    }

    let len = b.rng.gen_range(40_000..120_000);
    let body = text_block(&mut b.rng, len);
    b.file("/data/anr/traces.txt", 0o666, 1000, 1000, body);
    let body = text_block(&mut b.rng, 900);
    b.file("/data/misc/wifi/wpa_supplicant.conf", 0o660, 1010, 1010, body);
    let len = b.rng.gen_range(4_000..12_000);
    let body = rand_block(&mut b.rng, len);
    b.file("/data/system/batterystats.bin", 0o600, 1000, 1000, body);
    let body = rand_block(&mut b.rng, 4096);
    b.file("/data/system/entropy.dat", 0o600, 1000, 1000, body);

    for i in 0..30 {
        let len = b.rng.gen_range(200..6_000);
        let body = mixed_block(&mut b.rng, len);
        b.file(&format!("/data/local/tmp/trace{i}.log"), 0o644, 2000, 2000, body);
    }
    b.file("/data/local/tmp/.lock", 0o600, 2000, 2000, Vec::new());
    b.symlink("/data/local/tmp/etc_link", "/etc", 2000, 2000);
    for i in 0..8 {
        let len = b.rng.gen_range(8_000..40_000);
        let body = text_block(&mut b.rng, len);
        b.file(&format!("/data/tombstones/tombstone_{i:02}"), 0o600, 1000, 1000, body);
    }
}

fn build_sdcard(b: &mut Builder) {
    let (uid, gid) = (1015, 1015);
    b.dir("/sdcard", 0o775, uid, gid);
    b.file("/sdcard/.nomedia", 0o664, uid, gid, Vec::new());

    b.dir("/sdcard/DCIM", 0o775, uid, gid);
    b.dir("/sdcard/DCIM/Camera", 0o775, uid, gid);
    for i in 0..48 {
        let len = b.rng.gen_range(20_000..70_000);
        let body = jpeg_blob(&mut b.rng, len);
        b.file(
            &format!("/sdcard/DCIM/Camera/IMG_2013{:04}.jpg", i + 17),
            0o664,
            uid,
            gid,
            body,
        );
    }
    // the one big incompressible artefact: a 4 MiB clip
    let body = jpeg_blob(&mut b.rng, 4 * 1024 * 1024);
    b.file("/sdcard/DCIM/Camera/VID_20130217.mp4", 0o664, uid, gid, body);

    b.dir("/sdcard/DCIM/.thumbnails", 0o775, uid, gid);
    for i in 0..300 {
        let len = b.rng.gen_range(1_200..4_500);
        let body = jpeg_blob(&mut b.rng, len);
        b.file(
            &format!("/sdcard/DCIM/.thumbnails/{:013}.jpg", 1_361_000_000_000u64 + i * 7_919),
            0o664,
            uid,
            gid,
            body,
        );
    }

    b.dir("/sdcard/Music", 0o775, uid, gid);
    for (i, title) in ["intro", "roadtrip"].iter().enumerate() {
        let len = b.rng.gen_range(500_000..800_000);
        let body = mixed_block(&mut b.rng, len);
        b.file(&format!("/sdcard/Music/{:02}-{title}.mp3", i + 1), 0o664, uid, gid, body);
    }

    b.dir("/sdcard/Ringtones", 0o775, uid, gid);
    for i in 0..6 {
        let len = b.rng.gen_range(30_000..80_000);
        let body = mixed_block(&mut b.rng, len);
        b.file(&format!("/sdcard/Ringtones/tone-{i}.ogg"), 0o664, uid, gid, body);
    }

    b.dir("/sdcard/Download", 0o775, uid, gid);
    for i in 0..24 {
        let len = b.rng.gen_range(2_000..60_000);
        let body = mixed_block(&mut b.rng, len);
        b.file(&format!("/sdcard/Download/attachment-{i}.bin"), 0o664, uid, gid, body);
    }
    let body = text_block(&mut b.rng, 640);
    b.file("/sdcard/Download/readme.txt", 0o664, uid, gid, body);

    b.dir("/sdcard/Documents", 0o775, uid, gid);
    for i in 0..22 {
        let len = b.rng.gen_range(600..12_000);
        let body = text_block(&mut b.rng, len);
        b.file(&format!("/sdcard/Documents/notes-{i}.txt"), 0o664, uid, gid, body);
    }

    b.dir("/sdcard/Pictures", 0o775, uid, gid);
    for i in 0..25 {
        let len = b.rng.gen_range(3_000..15_000);
        let body = jpeg_blob(&mut b.rng, len);
        b.file(&format!("/sdcard/Pictures/wallpaper-{i}.png"), 0o664, uid, gid, body);
    }

    b.dir("/sdcard/Android", 0o775, uid, gid);
    b.dir("/sdcard/Android/data", 0o775, uid, gid);
    let ext_packages: Vec<String> = b
        .tree
        .packages
        .keys()
        .enumerate()
        .filter(|(i, _)| i % 5 == 0)
        .map(|(_, name)| name.clone())
        .collect();
    for name in ext_packages {
        let base = format!("/sdcard/Android/data/{name}");
        b.dir(&base, 0o775, uid, gid);
        b.dir(&format!("{base}/files"), 0o775, uid, gid);
        b.dir(&format!("{base}/cache"), 0o775, uid, gid);
        b.dir(&format!("{base}/cache/images"), 0o775, uid, gid);
        for i in 0..b.rng.gen_range(1..5u32) {
            let len = b.rng.gen_range(1_500..20_000);
            let body = mixed_block(&mut b.rng, len);
            b.file(&format!("{base}/cache/images/img_{i}.dat"), 0o664, uid, gid, body);
        }
        if b.rng.gen_bool(0.5) {
            let len = b.rng.gen_range(500..6_000);
            let body = text_block(&mut b.rng, len);
            b.file(&format!("{base}/files/state.json"), 0o664, uid, gid, body);
        }
    }
}

fn build_misc(b: &mut Builder) {
    b.dir("/cache", 0o770, 1000, 2001);
    for i in 0..4 {
        let len = b.rng.gen_range(900..30_000);
        let body = rand_block(&mut b.rng, len);
        b.file(&format!("/cache/recovery-{i}.tmp"), 0o600, 1000, 2001, body);
    }
    b.dir("/mnt", 0o755, 0, 0);
    b.symlink("/mnt/sdcard", "/sdcard", 0, 0);
    b.symlink("/etc", "/system/etc", 0, 0);
    b.symlink("/vendor", "/system/vendor", 0, 0);
    b.dir("/system/vendor", 0o755, 0, 0);
    let body = rand_block(&mut b.rng, 15_000);
    b.file("/system/vendor/firmware.bin", 0o644, 0, 0, body);
}

// --- serving ---

/// Fixture behind a policy: what a wireproto session is allowed to see.
pub struct PolicyStore {
    tree: Arc<FixtureTree>,
    policy: DevicePolicy,
}

impl PolicyStore {
    pub fn new(tree: Arc<FixtureTree>, policy: DevicePolicy) -> Self {
        PolicyStore { tree, policy }
    }

    fn check(&self, path: &DevicePath) -> Result<(), StoreError> {
        if check_access(&self.policy, path) {
            Ok(())
        } else {
            Err(StoreError::Denied)
        }
    }
}

impl FileStore for PolicyStore {
    fn stat(&self, path: &DevicePath) -> Result<FileAttr, StoreError> {
        self.check(path)?;
        self.tree.stat(path)
    }

    fn list_dir(&self, path: &DevicePath) -> Result<Vec<(String, FileAttr)>, StoreError> {
        self.check(path)?;
        self.tree.list_dir(path)
    }

    fn read_range(&self, path: &DevicePath, offset: u64, len: u32) -> Result<Vec<u8>, StoreError> {
        self.check(path)?;
        self.tree.read_range(path, offset, len)
    }

    fn read_all(&self, path: &DevicePath) -> Result<Vec<u8>, StoreError> {
        self.check(path)?;
        self.tree.read_all(path)
    }
}

/// A running simulator. Dropping the handle stops it.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    /// Signals the accept loop and waits for it to wind down.
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds the policy's port on loopback and serves the fixture. Refuses to
/// start when a non-rooted policy asks for a privileged port (< 1024);
/// `port == 0` requests an ephemeral port and is always policy-clean.
pub fn start_server(policy: DevicePolicy, tree: Arc<FixtureTree>) -> Result<ServerHandle, SimError> {
    if !policy.rooted && policy.port != 0 && policy.port < 1024 {
        return Err(SimError::PortPolicy(policy.port));
    }
    let listener =
        TcpListener::bind(("127.0.0.1", policy.port)).map_err(SimError::BindFailed)?;
    let addr = listener.local_addr().map_err(SimError::BindFailed)?;

    let config = Arc::new(ServerConfig {
        credentials: policy.credentials.clone(),
        device_info: tree.device_info(addr.port()),
    });
    let store = Arc::new(PolicyStore::new(tree, policy));
    let stop = Arc::new(AtomicBool::new(false));
    let stop2 = Arc::clone(&stop);
    let thread = std::thread::spawn(move || {
        let _ = serve_listener(listener, store, config, stop2);
    });
    Ok(ServerHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}
