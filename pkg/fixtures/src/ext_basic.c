/* Baseline fixture: self-contained except for libc's write().
 *
 * answer()            fixed value, the cross-loader equivalence probe
 * hello()             writes the demo greeting to stdout, returns byte count
 * own_global_address  address of a module global (must land in the image's
 *                     data mapping under any loader)
 * relocated_pointer   same address read back through a pointer global that
 *                     the loader had to relocate
 */
#include <unistd.h>

static int marker = 1234;
static int *marker_ptr = &marker;

int answer(void) { return 42; }

int hello(void) {
    static const char msg[] = "hello from native\n";
    return (int)write(1, msg, sizeof msg - 1);
}

int marker_value(void) { return marker; }

void *own_global_address(void) { return &marker; }

void *relocated_pointer(void) { return marker_ptr; }
