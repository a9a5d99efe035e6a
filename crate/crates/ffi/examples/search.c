/* Builds a small world, searches one scene and prints the best response. */
#include <stdio.h>
#include "oscar.h"

int main(void) {
    OscarWorld *world = NULL;
    if (oscar_world_new("scenes = 2\nbudget = 8\n", &world) != OSCAR_STATUS_OK) {
        fprintf(stderr, "world: %s\n", oscar_last_error());
        return 1;
    }
    size_t scenes = 0;
    oscar_world_scene_count(world, &scenes);
    OscarTree *tree = NULL;
    if (oscar_search(world, 1, &tree) != OSCAR_STATUS_OK) {
        fprintf(stderr, "search: %s\n", oscar_last_error());
        oscar_world_free(world);
        return 1;
    }
    size_t nodes = 0;
    oscar_tree_node_count(tree, &nodes);
    char *best = NULL;
    if (oscar_tree_best_response(tree, &best) != OSCAR_STATUS_OK) {
        fprintf(stderr, "best: %s\n", oscar_last_error());
        return 1;
    }
    printf("scenes=%zu nodes=%zu\n%s\n", scenes, nodes, best);
    oscar_string_free(best);
    oscar_tree_free(tree);
    if (oscar_search(world, 99, &tree) != OSCAR_STATUS_INVALID_ARGUMENT || tree != NULL) {
        return 1;
    }
    oscar_world_free(world);
    return 0;
}
