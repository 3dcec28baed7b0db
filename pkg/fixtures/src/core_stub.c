/* Stand-in for the runtime's own core library. Built with soname
 * "core_stub" so dependents record exactly that name. Loads of dependents
 * must resolve these symbols from the already-loaded image, never from disk.
 */
int core_value = 7;

int core_fn(void) { return 99; }
