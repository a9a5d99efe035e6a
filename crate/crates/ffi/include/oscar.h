#ifndef OSCAR_H
#define OSCAR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  OSCAR_STATUS_OK = 0,
  OSCAR_STATUS_NULL_ARGUMENT = 1,
  OSCAR_STATUS_INVALID_ARGUMENT = 2,
  OSCAR_STATUS_CONFIG = 3,
  OSCAR_STATUS_SEARCH = 4,
  OSCAR_STATUS_PANIC = 5,
} OscarStatus;

/**
 * A finished search tree.
 */
typedef struct OscarTree OscarTree;

/**
 * A simulator world with its run configuration and current policy.
 */
typedef struct OscarWorld OscarWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *oscar_version(void);

/**
 * Message for the last failed call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *oscar_last_error(void);

/**
 * Builds a world from `key = value` config text (NULL for defaults).
 *
 * # Safety
 * `config_text` must be NULL or a NUL-terminated string; `out` must be
 * writable.
 */
OscarStatus oscar_world_new(const char *config_text, OscarWorld **out);

/**
 * # Safety
 * `world` must be NULL or a handle from [`oscar_world_new`] not yet freed.
 */
void oscar_world_free(OscarWorld *world);

/**
 * # Safety
 * `world` must be a live handle; `out` must be writable.
 */
OscarStatus oscar_world_scene_count(const OscarWorld *world, size_t *out);

/**
 * Runs one tree search on `scene` with the world's config.
 *
 * # Safety
 * `world` must be a live handle; `out` must be writable.
 */
OscarStatus oscar_search(const OscarWorld *world, size_t scene, OscarTree **out);

/**
 * # Safety
 * `tree` must be NULL or a handle from [`oscar_search`] not yet freed.
 */
void oscar_tree_free(OscarTree *tree);

/**
 * # Safety
 * `tree` must be a live handle; `out` must be writable.
 */
OscarStatus oscar_tree_node_count(const OscarTree *tree, size_t *out);

/**
 * Full text of the best complete response.
 *
 * # Safety
 * `tree` must be a live handle; `out` must be writable.
 */
OscarStatus oscar_tree_best_response(const OscarTree *tree, char **out);

/**
 * The tree as JSON.
 *
 * # Safety
 * `tree` must be a live handle; `out` must be writable.
 */
OscarStatus oscar_tree_to_json(const OscarTree *tree, char **out);

/**
 * Preference pairs extracted from the tree, one JSON record per line.
 *
 * # Safety
 * `tree` must be a live handle; `out` must be writable.
 */
OscarStatus oscar_tree_pairs_jsonl(const OscarTree *tree, size_t iteration, char **out);

/**
 * CHAIR rates for one caption against a JSON array of ground-truth
 * canonical object names, using the built-in COCO dictionary.
 *
 * # Safety
 * `caption` and `gt_objects_json` must be NUL-terminated strings;
 * `chair_s` and `chair_i` must be writable.
 */
OscarStatus oscar_chair(const char *caption,
                        const char *gt_objects_json,
                        double *chair_s,
                        double *chair_i);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void oscar_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OSCAR_H */
