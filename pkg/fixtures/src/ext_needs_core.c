/* Depends on core_stub: one imported function (jump-slot binding) and one
 * imported data object (GOT binding). uses_core() == 99 + 7.
 */
extern int core_value;
extern int core_fn(void);

int uses_core(void) { return core_fn() + core_value; }
