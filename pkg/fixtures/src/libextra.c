/* A synthetic library that is neither a system library nor the core stub.
 * Exists so ext_bad_dep can record a dependency the audit must flag.
 */
int extra_fn(void) { return 5; }
