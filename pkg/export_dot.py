#!/usr/bin/env python3
"""Export the CFG or SSG of one function in graphviz DOT format"""

from pathlib import Path

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, OptionalValueType, StrType
from pyapputil.logutil import GetLogger, logargs
from pyapputil.exceptutil import InvalidArgumentError

from cfg import FALLBACK, cfg_to_dot, format_selector, get_cfg
from evm import load_bytecode, strip_metadata
from ssg import construct_ssgs, read_ssg, ssg_to_dot
from util import MetadataFile, add_global_args, atomic_write_text, run_command

GRAPH_KINDS = ("ssg", "cfg")

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "input_file" : (StrType(), None),
    "out_file" : (StrType(), None),
    "selector" : (OptionalValueType(StrType()), None),
    "graph" : (StrType(), "ssg"),
    "seed" : (int, 0),
})
def export_dot(input_file,
               out_file,
               selector,
               graph,
               seed):
    """
    Write a DOT file for one function

    Args:
        input_file: (str) A hex file of runtime bytecode, or an .ssg.json file
        out_file:   (str) The DOT file to write
        selector:   (str) The function to export, required for hex input
        graph:      (str) "ssg" or "cfg"
        seed:       (int) Unused, accepted like every command
    """
    localargs = locals()
    log = GetLogger()

    if graph not in GRAPH_KINDS:
        raise InvalidArgumentError(f"graph must be one of {', '.join(GRAPH_KINDS)}")
    input_file = Path(input_file)
    if not input_file.exists():
        raise InvalidArgumentError(f"{input_file} does not exist")

    if input_file.name.endswith(".ssg.json"):
        if graph == "cfg":
            raise InvalidArgumentError("A CFG can only be exported from bytecode")
        dot = ssg_to_dot(read_ssg(input_file))
    else:
        if not selector:
            raise InvalidArgumentError("A selector is required for bytecode input")
        selector = selector if selector == FALLBACK else format_selector(selector)
        code = strip_metadata(load_bytecode(input_file))
        if graph == "cfg":
            dot = cfg_to_dot(get_cfg(code, selector))
        else:
            ssgs = construct_ssgs(code)
            if selector not in ssgs:
                raise InvalidArgumentError(f"{selector} is not a function of {code.origin_id}")
            dot = ssg_to_dot(ssgs[selector])

    atomic_write_text(out_file, dot)
    metadata = MetadataFile(out_file)
    metadata.add("args", localargs)
    metadata.write()

    log.passed(f"Successfully wrote {graph} of {input_file.name} to {out_file}")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Export the CFG or SSG of one function in graphviz DOT format")
    parser.add_argument("-i", "--input", required=True, type=StrType(), dest="input_file", metavar="FILENAME", help="Hex file of runtime bytecode, or an .ssg.json file")
    parser.add_argument("-o", "--out", required=True, type=StrType(), dest="out_file", metavar="FILENAME", help="DOT file to write")
    parser.add_argument("-s", "--selector", type=StrType(), metavar="SELECTOR", help="Function selector like 0x095ea7b3, or 'fallback'")
    parser.add_argument("-g", "--graph", type=StrType(), default="ssg", choices=GRAPH_KINDS, help="Which graph to export")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(export_dot, args)
