//! C ABI over `oscar-core`.
//!
//! Every fallible call returns an [`OscarStatus`]; on failure a message is
//! available from [`oscar_last_error`] on the same thread. Handles are opaque
//! and owned by the caller, who releases them with the matching `_free`
//! function. Strings returned through `char **` must be released with
//! [`oscar_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use oscar_core::config::{KeyValues, RunConfig};
use oscar_core::extraction::{chair, SynonymDictionary};
use oscar_core::mcts::{run_search, SearchTree};
use oscar_core::preference::{best_leaf, extract_pairs, write_records};
use oscar_core::simulator::{SimBackend, SimWorld, ToyPolicy};
use oscar_core::SceneContext;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OscarStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Search = 4,
    Panic = 5,
}

/// A simulator world with its run configuration and current policy.
pub struct OscarWorld {
    config: RunConfig,
    world: Arc<SimWorld>,
    policy: Arc<ToyPolicy>,
}

/// A finished search tree.
pub struct OscarTree {
    tree: SearchTree,
    config: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: OscarStatus, msg: impl Into<String>) -> OscarStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> OscarStatus) -> OscarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(OscarStatus::Panic, "internal panic"),
    }
}

unsafe fn opt_str<'a>(p: *const c_char) -> Result<Option<&'a str>, OscarStatus> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| fail(OscarStatus::InvalidArgument, "string is not valid UTF-8"))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, OscarStatus> {
    opt_str(p)?.ok_or_else(|| fail(OscarStatus::NullArgument, format!("{what} is null")))
}

fn give_string(s: String, out: *mut *mut c_char) -> OscarStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            OscarStatus::Ok
        }
        Err(_) => fail(OscarStatus::InvalidArgument, "result contains a NUL byte"),
    }
}

macro_rules! check_out {
    ($p:expr) => {
        if $p.is_null() {
            return fail(OscarStatus::NullArgument, concat!(stringify!($p), " is null"));
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oscar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn oscar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a world from `key = value` config text (NULL for defaults).
///
/// # Safety
/// `config_text` must be NULL or a NUL-terminated string; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn oscar_world_new(config_text: *const c_char, out: *mut *mut OscarWorld) -> OscarStatus {
    guard(|| {
        check_out!(out);
        *out = ptr::null_mut();
        let text = match opt_str(config_text) {
            Ok(t) => t.unwrap_or(""),
            Err(s) => return s,
        };
        let config = match KeyValues::parse(text).and_then(|kv| RunConfig::from_key_values(&kv)) {
            Ok(c) => c,
            Err(e) => return fail(OscarStatus::Config, e.to_string()),
        };
        let world = match SimWorld::generate(config.world.clone()) {
            Ok(w) => Arc::new(w),
            Err(e) => return fail(OscarStatus::Config, e.to_string()),
        };
        let policy = Arc::new(ToyPolicy::initial(&world, config.search.max_depth, config.world.seed));
        *out = Box::into_raw(Box::new(OscarWorld { config, world, policy }));
        OscarStatus::Ok
    })
}

/// # Safety
/// `world` must be NULL or a handle from [`oscar_world_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oscar_world_free(world: *mut OscarWorld) {
    if !world.is_null() {
        drop(Box::from_raw(world));
    }
}

/// # Safety
/// `world` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oscar_world_scene_count(world: *const OscarWorld, out: *mut usize) -> OscarStatus {
    guard(|| {
        check_out!(world);
        check_out!(out);
        *out = (&*world).world.scenes.len();
        OscarStatus::Ok
    })
}

/// Runs one tree search on `scene` with the world's config.
///
/// # Safety
/// `world` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oscar_search(world: *const OscarWorld, scene: usize, out: *mut *mut OscarTree) -> OscarStatus {
    guard(|| {
        check_out!(world);
        check_out!(out);
        *out = ptr::null_mut();
        let w = &*world;
        let Some(s) = w.world.scenes.get(scene) else {
            return fail(OscarStatus::InvalidArgument, format!("scene {scene} out of range"));
        };
        let backend = SimBackend::new(Arc::clone(&w.world), Arc::clone(&w.policy), w.config.search.seed);
        match run_search(&s.context, &w.config.search, &backend) {
            Ok(tree) => {
                *out = Box::into_raw(Box::new(OscarTree { tree, config: w.config.clone() }));
                OscarStatus::Ok
            }
            Err(e) => fail(OscarStatus::Search, e.to_string()),
        }
    })
}

/// # Safety
/// `tree` must be NULL or a handle from [`oscar_search`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oscar_tree_free(tree: *mut OscarTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// # Safety
/// `tree` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oscar_tree_node_count(tree: *const OscarTree, out: *mut usize) -> OscarStatus {
    guard(|| {
        check_out!(tree);
        check_out!(out);
        *out = (&*tree).tree.nodes.len();
        OscarStatus::Ok
    })
}

/// Full text of the best complete response.
///
/// # Safety
/// `tree` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oscar_tree_best_response(tree: *const OscarTree, out: *mut *mut c_char) -> OscarStatus {
    guard(|| {
        check_out!(tree);
        check_out!(out);
        *out = ptr::null_mut();
        let t = &*tree;
        match best_leaf(&t.tree, t.config.path_score) {
            Some(leaf) => give_string(t.tree.nodes[leaf].text.clone(), out),
            None => fail(OscarStatus::Search, "the tree has no complete response"),
        }
    })
}

/// The tree as JSON.
///
/// # Safety
/// `tree` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oscar_tree_to_json(tree: *const OscarTree, out: *mut *mut c_char) -> OscarStatus {
    guard(|| {
        check_out!(tree);
        check_out!(out);
        give_string((&*tree).tree.to_json(), out)
    })
}

/// Preference pairs extracted from the tree, one JSON record per line.
///
/// # Safety
/// `tree` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oscar_tree_pairs_jsonl(tree: *const OscarTree, iteration: usize, out: *mut *mut c_char) -> OscarStatus {
    guard(|| {
        check_out!(tree);
        check_out!(out);
        let t = &*tree;
        let records: Vec<_> = extract_pairs(&t.tree, t.config.path_score, t.config.search.q_margin)
            .iter()
            .map(|p| p.record(iteration))
            .collect();
        let mut buf = Vec::new();
        write_records(&mut buf, &records).expect("writing to memory");
        give_string(String::from_utf8(buf).expect("JSON is UTF-8"), out)
    })
}

/// CHAIR rates for one caption against a JSON array of ground-truth
/// canonical object names, using the built-in COCO dictionary.
///
/// # Safety
/// `caption` and `gt_objects_json` must be NUL-terminated strings;
/// `chair_s` and `chair_i` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oscar_chair(
    caption: *const c_char,
    gt_objects_json: *const c_char,
    chair_s: *mut f64,
    chair_i: *mut f64,
) -> OscarStatus {
    guard(|| {
        check_out!(chair_s);
        check_out!(chair_i);
        let caption = match req_str(caption, "caption") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let gt = match req_str(gt_objects_json, "gt_objects_json") {
            Ok(g) => g,
            Err(s) => return s,
        };
        let objects: Vec<String> = match serde_json::from_str(gt) {
            Ok(o) => o,
            Err(e) => return fail(OscarStatus::InvalidArgument, format!("gt_objects_json: {e}")),
        };
        let ctx = SceneContext::new("", "", objects);
        let report = chair(&[caption], &[ctx], &SynonymDictionary::coco()).expect("aligned inputs");
        *chair_s = report.chair_s;
        *chair_i = report.chair_i;
        OscarStatus::Ok
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oscar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
