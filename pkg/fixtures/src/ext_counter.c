/* Instrumented fixture: counts initializer/finalizer runs.
 *
 * The constructor bumps a counter and holds a descriptor open on /dev/null;
 * the destructor closes it and, when a sink was registered, bumps the sink.
 * Descriptor-count baselines and the sink let tests observe that exactly one
 * init and one fini ran across load/unload, under every loader backend.
 */
#include <fcntl.h>
#include <unistd.h>

static int init_runs;
static int held = -1;
static int *fini_sink;

__attribute__((constructor)) static void fixture_up(void) {
    init_runs++;
    held = open("/dev/null", O_RDONLY);
}

__attribute__((destructor)) static void fixture_down(void) {
    if (held >= 0) {
        close(held);
        held = -1;
    }
    if (fini_sink)
        (*fini_sink)++;
}

int init_count(void) { return init_runs; }

int held_descriptor(void) { return held; }

void set_fini_sink(int *sink) { fini_sink = sink; }
