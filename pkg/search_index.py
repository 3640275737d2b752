#!/usr/bin/env python3
"""Find the indexed functions most similar to a query function"""

import json
from pathlib import Path

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, OptionalValueType, StrType, PositiveIntegerType
from pyapputil.logutil import GetLogger, logargs
from pyapputil.exceptutil import InvalidArgumentError

from cfg import FALLBACK, format_selector
from embedding import embed_ssg, load_model
from evm import load_bytecode
from ssg import extract_contract, read_ssg
from vector_index import load, search
from util import add_global_args, run_command

OUTPUT_FORMATS = ("text", "json")

def load_query(query_file, selector):
    """
    Get the SSG for a query, either an .ssg.json file or a function of a hex file

    Args:
        query_file: (Path) The query file
        selector:   (str) Function of a hex file, optional when it has one function
    """
    query_file = Path(query_file)
    if not query_file.exists():
        raise InvalidArgumentError(f"{query_file} does not exist")
    if query_file.name.endswith(".ssg.json"):
        return read_ssg(query_file)
    ssgs = extract_contract(load_bytecode(query_file))
    if selector:
        selector = selector if selector == FALLBACK else format_selector(selector)
        if selector not in ssgs:
            raise InvalidArgumentError(f"{selector} is not a function of {query_file.name}")
        return ssgs[selector]
    functions = sorted(sel for sel in ssgs if sel != FALLBACK)
    if len(functions) != 1:
        raise InvalidArgumentError(f"{query_file.name} has {len(functions)} functions, give a selector")
    return ssgs[functions[0]]

def format_results(results, output_format):
    if output_format == "json":
        return json.dumps([{"rank": rank, "origin": origin, "selector": selector, "score": round(score, 4)}
                           for rank, ((origin, selector), score) in enumerate(results, start=1)], indent=2)
    return "\n".join(f"{rank:>3}  {score:.4f}  {origin} {selector}"
                     for rank, ((origin, selector), score) in enumerate(results, start=1))

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "db_file" : (StrType(), None),
    "query_file" : (StrType(), None),
    "model_file" : (StrType(), None),
    "selector" : (OptionalValueType(StrType()), None),
    "top_k" : (PositiveIntegerType(), 10),
    "output_format" : (StrType(), "text"),
    "seed" : (int, 0),
})
def search_index(db_file,
                 query_file,
                 model_file,
                 selector,
                 top_k,
                 output_format,
                 seed):
    """
    Print the top-k most similar indexed functions, best first

    Args:
        db_file:        (str) Index file
        query_file:     (str) An .ssg.json file or a hex file of runtime bytecode
        model_file:     (str) The model the index was built with
        selector:       (str) Function of a hex query
        top_k:          (int) Number of results
        output_format:  (str) "text" or "json"
        seed:           (int) Unused, accepted like every command

    """
    log = GetLogger()

    if output_format not in OUTPUT_FORMATS:
        raise InvalidArgumentError(f"format must be one of {', '.join(OUTPUT_FORMATS)}")
    index = load(db_file)
    model = load_model(model_file)
    query = embed_ssg(load_query(query_file, selector), model)
    results = search(index, query, top_k)

    output = format_results(results, output_format)
    if output:
        print(output)
    log.passed(f"Found {len(results)} matches among {len(index)} functions")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Find the indexed functions most similar to a query function")
    parser.add_argument("-d", "--db", required=True, type=StrType(), dest="db_file", metavar="FILENAME", help="Index file")
    parser.add_argument("-q", "--query", required=True, type=StrType(), dest="query_file", metavar="FILENAME", help="An .ssg.json file or a hex file of runtime bytecode")
    parser.add_argument("-m", "--model", required=True, type=StrType(), dest="model_file", metavar="FILENAME", help="The model the index was built with")
    parser.add_argument("-s", "--selector", type=StrType(), metavar="SELECTOR", help="Function of a hex query, like 0x095ea7b3")
    parser.add_argument("-k", "--top-k", type=PositiveIntegerType(), default=10, metavar="COUNT", help="Number of results")
    parser.add_argument("--format", type=StrType(), default="text", dest="output_format", choices=OUTPUT_FORMATS, help="Output format")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(search_index, args)
