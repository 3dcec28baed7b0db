"""The reference module executor: a deliberately tiny directive language.

Source form is line oriented, one directive per line (blank lines and ``#``
comments allowed):

    import <dotted-name>          load another module through the chain
    set <symbol> <literal>        bind a Python literal in the namespace
    call_native <module>.<symbol> import a native module, call the export,
                                  bind its return value under <symbol>

The compiled form is the same directives behind a magic header, each line
length-prefixed. It exists so bundles can carry "bytecode" entries that win
over source entries in the search order, exactly like the real thing.
"""

from __future__ import annotations

import ast
import struct

from .errors import ExecutionError
from .nativeload import invoke_export
from .resolver import LoadContext, ModuleCode, ModuleKind

COMPILED_MAGIC = b"MBDC\x01"


def compile_directives(source: str) -> bytes:
    """Length-prefix serialize directive source into the compiled form."""
    lines = [ln for ln in (raw.strip() for raw in source.splitlines())
             if ln and not ln.startswith("#")]
    out = [COMPILED_MAGIC, struct.pack("<I", len(lines))]
    for line in lines:
        encoded = line.encode("utf-8")
        out.append(struct.pack("<I", len(encoded)))
        out.append(encoded)
    return b"".join(out)


def is_compiled(payload: bytes) -> bool:
    return payload.startswith(COMPILED_MAGIC)


def decode_compiled(payload: bytes) -> list[str]:
    if not is_compiled(payload):
        raise ExecutionError("payload lacks the compiled-directive header")
    pos = len(COMPILED_MAGIC)
    try:
        (count,) = struct.unpack_from("<I", payload, pos)
        pos += 4
        lines = []
        for _ in range(count):
            (length,) = struct.unpack_from("<I", payload, pos)
            pos += 4
            chunk = payload[pos:pos + length]
            if len(chunk) != length:
                raise ExecutionError("truncated compiled directives")
            lines.append(chunk.decode("utf-8"))
            pos += length
        return lines
    except (struct.error, UnicodeDecodeError) as exc:
        raise ExecutionError(f"damaged compiled directives: {exc}") from exc


def _directive_lines(code: ModuleCode) -> list[str]:
    if is_compiled(code.payload):
        return decode_compiled(code.payload)
    if code.kind is ModuleKind.BYTECODE_MODULE or code.origin_path.endswith(".pyc"):
        raise ExecutionError(
            f"{code.origin_path}: bytecode entry lacks the compiled-directive header")
    try:
        text = code.payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ExecutionError(f"{code.origin_path}: not valid UTF-8 source") from exc
    return [ln for ln in (raw.strip() for raw in text.splitlines())
            if ln and not ln.startswith("#")]


def execute_module(code: ModuleCode, ctx: LoadContext) -> dict:
    """Run a directive payload and return the resulting namespace."""
    namespace: dict[str, object] = {}
    for line in _directive_lines(code):
        verb, _, rest = line.partition(" ")
        rest = rest.strip()
        if verb == "import" and rest:
            ctx.import_module(rest)
        elif verb == "set":
            symbol, _, literal = rest.partition(" ")
            if not symbol.isidentifier() or not literal.strip():
                raise ExecutionError(f"{code.fullname}: malformed set directive {line!r}")
            try:
                namespace[symbol] = ast.literal_eval(literal.strip())
            except (ValueError, SyntaxError) as exc:
                raise ExecutionError(
                    f"{code.fullname}: bad literal in {line!r}: {exc}") from exc
        elif verb == "call_native" and rest:
            module_name, _, symbol = rest.rpartition(".")
            if not module_name or not symbol.isidentifier():
                raise ExecutionError(
                    f"{code.fullname}: malformed call_native directive {line!r}")
            record = ctx.import_module(module_name)
            if record.kind is not ModuleKind.NATIVE_EXTENSION:
                raise ExecutionError(
                    f"{code.fullname}: {module_name!r} is not a native extension")
            namespace[symbol] = invoke_export(record.native_handle, symbol)
        else:
            raise ExecutionError(f"{code.fullname}: unknown directive {line!r}")
    return namespace
