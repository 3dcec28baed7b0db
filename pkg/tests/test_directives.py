"""Directive-language executor and its compiled form."""

import pytest

from membundle import directives as dr
from membundle.archive import open_archive
from membundle.bundler import write_archive
from membundle.errors import ExecutionError
from membundle.resolver import (
    ArchiveFinder,
    FinderChain,
    ModuleCode,
    ModuleKind,
    load_module,
)


def run_source(source: str, extra_entries=()):
    entries = [("main.py", source.encode())] + list(extra_entries)
    chain = FinderChain([ArchiveFinder(open_archive(write_archive(entries)))])
    record = load_module(chain, "main", dr.execute_module, _no_native)
    return record.namespace


def _no_native(fullname, payload):
    raise AssertionError("unexpected native load")


class TestSourceForm:
    def test_set_literals(self):
        ns = run_source('set greeting "hi"\nset count 3\nset ratio 1.5\nset flag True\n')
        assert ns == {"greeting": "hi", "count": 3, "ratio": 1.5, "flag": True}

    def test_comments_and_blanks_skipped(self):
        assert run_source("# top comment\n\nset x 1\n   \n") == {"x": 1}

    def test_import_directive_pulls_in_module(self):
        ns = run_source("import helper\nset own 1\n",
                        [("helper.py", b"set h 9\n")])
        assert ns == {"own": 1}

    @pytest.mark.parametrize("line", [
        "frobnicate x",
        "set 1bad 2",
        "set onlyname",
        "set x not-a-literal",
        "call_native noseparator",
        "import",
    ])
    def test_malformed_directives_rejected(self, line):
        with pytest.raises(ExecutionError):
            run_source(line + "\n")

    def test_non_utf8_source_rejected(self):
        code = ModuleCode("m", ModuleKind.SOURCE_MODULE, "m.py", b"\xff\xfe\x00")
        with pytest.raises(ExecutionError):
            dr.execute_module(code, None)


class TestCompiledForm:
    def test_roundtrip(self):
        source = 'set a 1\n# noise\nset b "two"\n'
        blob = dr.compile_directives(source)
        assert dr.is_compiled(blob)
        assert dr.decode_compiled(blob) == ["set a 1", 'set b "two"']

    def test_compiled_payload_executes(self):
        blob = dr.compile_directives("set n 42\n")
        code = ModuleCode("m", ModuleKind.BYTECODE_MODULE, "m.pyc", blob)
        assert dr.execute_module(code, None) == {"n": 42}

    def test_bytecode_without_header_rejected(self):
        code = ModuleCode("m", ModuleKind.BYTECODE_MODULE, "m.pyc", b"set n 1\n")
        with pytest.raises(ExecutionError):
            dr.execute_module(code, None)

    def test_truncated_compiled_payload_rejected(self):
        blob = dr.compile_directives("set n 42\n")[:-3]
        with pytest.raises(ExecutionError):
            dr.decode_compiled(blob)

    def test_empty_source_compiles_to_empty_module(self):
        blob = dr.compile_directives("")
        code = ModuleCode("m", ModuleKind.BYTECODE_MODULE, "m.pyc", blob)
        assert dr.execute_module(code, None) == {}
