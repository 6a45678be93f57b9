//! Client/server integration over loopback: session rules, path safety,
//! policy enforcement, and the delta-transfer invariant.

use std::io::Write;
use std::net::TcpStream;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha1::{Digest, Sha1};

use awe_core::deltasync::{apply_delta, build_signatures, literal_bytes, SignatureSet};
use awe_core::devicesim::{
    build_fixture, start_server, DevicePolicy, DeviceProfile, FixtureTree, ServerHandle,
};
use awe_core::footprint::{capture_snapshot, SkipReason};
use awe_core::fsmeta::FileKind;
use awe_core::wireproto::{
    encode_frame, encode_path_request, read_frame, Credentials, Opcode, Session, Status,
    WireError, RESPONSE_BIT,
};

fn apollo_server(seed: u64) -> (Arc<FixtureTree>, ServerHandle) {
    let tree = Arc::new(build_fixture(seed, "apollo-2.2-rooted").unwrap());
    let profile = DeviceProfile::by_name("apollo-2.2-rooted").unwrap();
    let policy = DevicePolicy::for_profile(profile).with_port(0);
    let handle = start_server(policy, Arc::clone(&tree)).unwrap();
    (tree, handle)
}

fn htc_server(seed: u64) -> (Arc<FixtureTree>, ServerHandle) {
    let tree = Arc::new(build_fixture(seed, "htc-4.1-nonrooted").unwrap());
    let profile = DeviceProfile::by_name("htc-4.1-nonrooted").unwrap();
    let policy = DevicePolicy::for_profile(profile).with_port(0);
    let handle = start_server(policy, Arc::clone(&tree)).unwrap();
    (tree, handle)
}

fn connect_authed(handle: &ServerHandle) -> Session {
    let mut session = Session::connect(handle.addr()).unwrap();
    session.handshake(&Credentials::factory_default()).unwrap();
    session
}

#[test]
fn handshake_with_factory_defaults_returns_device_info() {
    let (tree, handle) = apollo_server(42);
    let mut session = Session::connect(handle.addr()).unwrap();
    let info = session.handshake(&Credentials::factory_default()).unwrap();
    assert_eq!(info.model, tree.profile().model);
    assert_eq!(info.android_version, "2.2");
    assert!(info.rooted);
    assert_eq!(info.port, handle.port());
}

#[test]
fn wrong_password_is_auth_fail() {
    let (_tree, handle) = apollo_server(42);
    let mut session = Session::connect(handle.addr()).unwrap();
    let creds = Credentials::new("root", "wrong").unwrap();
    match session.handshake(&creds) {
        Err(WireError::Status(Status::AuthFail)) => {}
        other => panic!("expected AUTH_FAIL, got {other:?}"),
    }
    // the session can retry and succeed
    assert!(session.handshake(&Credentials::factory_default()).is_ok());
}

#[test]
fn operations_before_auth_are_proto_errors() {
    let (_tree, handle) = apollo_server(42);
    let mut session = Session::connect(handle.addr()).unwrap();
    match session.stat("/sdcard") {
        Err(WireError::Status(Status::Proto)) => {}
        other => panic!("expected PROTO, got {other:?}"),
    }
    match session.list_dir("/") {
        Err(WireError::Status(Status::Proto)) => {}
        other => panic!("expected PROTO, got {other:?}"),
    }
}

#[test]
fn stat_basics() {
    let (_tree, handle) = apollo_server(42);
    let mut session = connect_authed(&handle);

    let sdcard = session.stat("/sdcard").unwrap();
    assert_eq!(sdcard.kind, FileKind::Dir);

    match session.stat("/nope") {
        Err(WireError::Status(Status::NotFound)) => {}
        other => panic!("expected NOT_FOUND, got {other:?}"),
    }

    // client refuses traversal before anything reaches the wire
    match session.stat("/data/../etc") {
        Err(WireError::Path(awe_core::fsmeta::PathError::Traversal)) => {}
        other => panic!("expected traversal rejection, got {other:?}"),
    }
}

#[test]
fn server_rejects_traversal_in_raw_frame() {
    let (_tree, handle) = apollo_server(42);
    let mut stream = TcpStream::connect(handle.addr()).unwrap();

    // authenticate manually
    let mut auth = Vec::new();
    auth.extend_from_slice(&(4u16).to_be_bytes());
    auth.extend_from_slice(b"root");
    auth.extend_from_slice(&(5u16).to_be_bytes());
    auth.extend_from_slice(b"admin");
    stream
        .write_all(&encode_frame(Opcode::Auth as u8, 1, &auth).unwrap())
        .unwrap();
    let resp = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(resp.payload[0], Status::Ok as u8);

    // ".." must be caught server-side
    let payload = encode_path_request("/data/../etc");
    stream
        .write_all(&encode_frame(Opcode::Stat as u8, 2, &payload).unwrap())
        .unwrap();
    let resp = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(resp.ftype, Opcode::Stat as u8 | RESPONSE_BIT);
    assert_eq!(resp.payload[0], Status::Traversal as u8);

    // malformed (relative) path is PROTO
    let payload = encode_path_request("sdcard");
    stream
        .write_all(&encode_frame(Opcode::Stat as u8, 3, &payload).unwrap())
        .unwrap();
    let resp = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(resp.payload[0], Status::Proto as u8);

    // unknown opcode is PROTO
    stream
        .write_all(&encode_frame(0x6F, 4, &[]).unwrap())
        .unwrap();
    let resp = read_frame(&mut stream).unwrap().unwrap();
    assert_eq!(resp.payload[0], Status::Proto as u8);
}

#[test]
fn list_dir_is_sorted_and_shallow() {
    let (tree, handle) = apollo_server(42);
    let mut session = connect_authed(&handle);

    let root = session.list_dir("/").unwrap();
    let names: Vec<&str> = root.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"data"));
    assert!(names.contains(&"sdcard"));
    let mut sorted = names.clone();
    sorted.sort_unstable();
    assert_eq!(names, sorted);
    assert!(!names.iter().any(|n| n.contains('/')));

    // matches direct tree access
    let direct = tree
        .list_dir(&awe_core::fsmeta::DevicePath::root())
        .unwrap();
    assert_eq!(root, direct);

    match session.list_dir("/system/build.prop") {
        Err(WireError::Status(Status::NotDir)) => {}
        other => panic!("expected NOT_DIR, got {other:?}"),
    }
    match session.read_chunk("/sdcard", 0, 16) {
        Err(WireError::Status(Status::IsDir)) => {}
        other => panic!("expected IS_DIR, got {other:?}"),
    }
}

#[test]
fn empty_dir_lists_empty() {
    let mut tree = build_fixture(42, "apollo-2.2-rooted").unwrap();
    tree.add_dir("/sdcard/empty", 0o775, 1015, 1015, 1_360_000_000);
    let profile = DeviceProfile::by_name("apollo-2.2-rooted").unwrap();
    let handle = start_server(DevicePolicy::for_profile(profile).with_port(0), Arc::new(tree)).unwrap();
    let mut session = connect_authed(&handle);
    assert!(session.list_dir("/sdcard/empty").unwrap().is_empty());
}

#[test]
fn chunked_reads_concatenate_to_whole_file() {
    let (tree, handle) = apollo_server(7);
    let mut session = connect_authed(&handle);

    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let files: Vec<String> = tree
        .iter()
        .filter(|(_, n)| n.attr.kind == FileKind::File && !n.content.is_empty())
        .map(|(p, _)| p.clone())
        .collect();
    for _ in 0..8 {
        let path = &files[rng.gen_range(0..files.len())];
        let expected = &tree.get(path).unwrap().content;

        let whole = session.read_chunk(path, 0, expected.len() as u32).unwrap();
        assert_eq!(&whole, expected);

        // EOF
        assert!(session
            .read_chunk(path, expected.len() as u64, 100)
            .unwrap()
            .is_empty());

        // random chunking
        let mut stitched = Vec::new();
        while stitched.len() < expected.len() {
            let ask = rng.gen_range(1..=8192u32);
            let chunk = session
                .read_chunk(path, stitched.len() as u64, ask)
                .unwrap();
            assert!(!chunk.is_empty());
            stitched.extend_from_slice(&chunk);
        }
        assert_eq!(&stitched, expected);
    }
}

#[test]
fn symlinks_are_never_followed() {
    let (tree, handle) = apollo_server(42);
    let mut session = connect_authed(&handle);

    let attr = session.stat("/etc").unwrap();
    assert_eq!(attr.kind, FileKind::Symlink);
    assert_eq!(attr.link_target.as_deref(), Some("/system/etc"));

    // reading the link yields the target string, not the target's content
    let data = session.read_chunk("/etc", 0, 1024).unwrap();
    assert_eq!(data, b"/system/etc");

    // a link pointing at /etc from inside the tree behaves the same
    let attr = session.stat("/data/local/tmp/etc_link").unwrap();
    assert_eq!(attr.link_target.as_deref(), Some("/etc"));

    // every path the server serves is a fixture entry; nothing outside
    // the tree root is reachable (the link target may even dangle)
    assert!(tree.contains("/etc"));
}

#[test]
fn delta_reconstructs_for_every_basis_shape() {
    let (tree, handle) = apollo_server(11);
    let mut session = connect_authed(&handle);
    let mut rng = ChaCha20Rng::seed_from_u64(5);

    let files: Vec<String> = tree
        .iter()
        .filter(|(_, n)| n.attr.kind == FileKind::File)
        .map(|(p, _)| p.clone())
        .collect();

    for round in 0..12 {
        let path = &files[rng.gen_range(0..files.len())];
        let remote = &tree.get(path).unwrap().content;

        let basis: Vec<u8> = match round % 3 {
            0 => Vec::new(),                      // no prior data
            1 => remote.clone(),                  // identical copy
            _ => {
                // stale copy: flip a block's worth of bytes
                let mut stale = remote.clone();
                if !stale.is_empty() {
                    let start = rng.gen_range(0..stale.len());
                    let end = (start + 2048).min(stale.len());
                    for b in &mut stale[start..end] {
                        *b ^= 0xA5;
                    }
                }
                stale
            }
        };

        let sigs = if basis.is_empty() {
            SignatureSet::empty(2048).unwrap()
        } else {
            build_signatures(&basis, 2048).unwrap()
        };
        let (ops, announced) = session.request_delta(path, &sigs).unwrap();
        let rebuilt = apply_delta(&basis, &ops, &sigs).unwrap();
        assert_eq!(&rebuilt, remote, "path {path} round {round}");

        let mut h = Sha1::new();
        h.update(remote);
        assert_eq!(announced, <[u8; 20]>::from(h.finalize()));

        if round % 3 == 1 {
            assert_eq!(literal_bytes(&ops), 0, "identity basis sends no literals");
        }
    }
}

#[test]
fn non_rooted_policy_denies_prefixes_on_every_op() {
    let (tree, handle) = htc_server(21);
    let mut session = connect_authed(&handle);

    for path in [
        "/data/data",
        "/data/data/berserker.android.apps.sshdroidpro",
        "/data/system/packages.list",
        "/data/app-private",
    ] {
        match session.stat(path) {
            Err(WireError::Status(Status::Perm)) => {}
            other => panic!("stat {path}: expected PERM, got {other:?}"),
        }
        match session.list_dir(path) {
            Err(WireError::Status(Status::Perm)) => {}
            other => panic!("list {path}: expected PERM, got {other:?}"),
        }
        match session.read_chunk(path, 0, 8) {
            Err(WireError::Status(Status::Perm)) => {}
            other => panic!("read {path}: expected PERM, got {other:?}"),
        }
        let sigs = SignatureSet::empty(2048).unwrap();
        match session.request_delta(path, &sigs) {
            Err(WireError::Status(Status::Perm)) => {}
            other => panic!("delta {path}: expected PERM, got {other:?}"),
        }
    }

    // plus a randomized sweep: anything under a denied prefix answers PERM
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let denied: Vec<String> = tree
        .iter()
        .map(|(p, _)| p.clone())
        .filter(|p| {
            ["/data/data", "/data/system", "/data/app-private"]
                .iter()
                .any(|d| p == d || p.starts_with(&format!("{d}/")))
        })
        .collect();
    for _ in 0..40 {
        let path = &denied[rng.gen_range(0..denied.len())];
        match session.stat(path) {
            Err(WireError::Status(Status::Perm)) => {}
            other => panic!("{path}: expected PERM, got {other:?}"),
        }
    }

    // allowed areas still answer
    assert!(session.stat("/sdcard").is_ok());
    assert!(session.stat("/data").is_ok());
}

#[test]
fn fuzzed_session_leaves_fixture_untouched() {
    let (tree, handle) = apollo_server(17);
    let before = tree.tree_digest();

    let mut rng = ChaCha20Rng::seed_from_u64(1234);
    let mut stream = TcpStream::connect(handle.addr()).unwrap();
    for id in 0..300u32 {
        let ftype = rng.gen_range(0..10u8);
        let len = rng.gen_range(0..64usize);
        let mut payload = vec![0u8; len];
        rng.fill(&mut payload[..]);
        let bytes = encode_frame(ftype, id, &payload).unwrap();
        if stream.write_all(&bytes).is_err() {
            stream = TcpStream::connect(handle.addr()).unwrap();
            continue;
        }
        // DELTA_REQ may answer with several frames; drain what arrives or
        // reconnect if the server dropped us over garbage framing
        match read_frame(&mut stream) {
            Ok(Some(_)) => {}
            _ => stream = TcpStream::connect(handle.addr()).unwrap(),
        }
    }

    // a real session still works afterwards
    let mut session = connect_authed(&handle);
    assert!(session.stat("/sdcard").is_ok());

    assert_eq!(tree.tree_digest(), before);
}

#[test]
fn capture_over_wire_equals_direct_capture() {
    let (tree, handle) = apollo_server(23);
    let mut session = connect_authed(&handle);

    let over_wire = capture_snapshot(&mut session, "/data/app", "wire").unwrap();
    let direct = capture_snapshot(&mut &*tree, "/data/app", "wire").unwrap();
    assert_eq!(over_wire, direct);
    assert!(!over_wire.entries.is_empty());
}

#[test]
fn non_rooted_capture_skips_denied_paths() {
    let (_tree, handle) = htc_server(23);
    let mut session = connect_authed(&handle);

    let snap = capture_snapshot(&mut session, "/data", "limited").unwrap();
    let skipped: Vec<&str> = snap.skipped.iter().map(|(p, _)| p.as_str()).collect();
    assert!(skipped.contains(&"/data/data"));
    assert!(skipped.contains(&"/data/system"));
    assert!(skipped.contains(&"/data/app-private"));
    assert!(snap.skipped.iter().all(|(_, r)| *r == SkipReason::Perm));
    assert!(!snap.entries.keys().any(|p| p.starts_with("/data/data")));
    // accessible parts are present
    assert!(snap.entries.keys().any(|p| p.starts_with("/data/app/")));
}

#[test]
fn concurrent_sessions_share_one_server() {
    let (tree, handle) = apollo_server(31);
    let addr = handle.addr();
    let expected = Arc::new(tree.get("/system/build.prop").unwrap().content.clone());

    let mut workers = Vec::new();
    for _ in 0..8 {
        let expected = Arc::clone(&expected);
        workers.push(std::thread::spawn(move || {
            let mut session = Session::connect(addr).unwrap();
            session.handshake(&Credentials::factory_default()).unwrap();
            for _ in 0..5 {
                let got = session.read_to_end("/system/build.prop").unwrap();
                assert_eq!(got.as_slice(), expected.as_slice());
            }
        }));
    }
    for w in workers {
        w.join().unwrap();
    }
}

#[test]
fn oversize_read_request_is_rejected() {
    let (_tree, handle) = apollo_server(42);
    let mut session = connect_authed(&handle);
    match session.read_chunk("/system/build.prop", 0, u32::MAX) {
        Err(WireError::Oversize) => {}
        other => panic!("expected client-side oversize, got {other:?}"),
    }
}
