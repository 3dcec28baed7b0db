/* Links the non-allowlisted libextra; the call keeps the dependency record
 * alive under --as-needed. The audit must report it as a violation.
 */
extern int extra_fn(void);

int bad_answer(void) { return extra_fn() + 8; }
