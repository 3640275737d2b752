#!/usr/bin/env python3
"""Embed SSG files and add them to a vector index"""

from pathlib import Path

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, OptionalValueType, StrType
from pyapputil.logutil import GetLogger, logargs
from pyapputil.exceptutil import InvalidArgumentError

from embedding import embed_ssg, load_model
from ssg import read_ssg
from util import MetadataFile, ProgressTracker, add_global_args, find_files, run_command
from vector_index import VectorIndex, export_json, load, persist

SSG_SUFFIXES = (".ssg.json",)

def open_index(db_file, dimension):
    """
    Load an index file, or start an empty index if it does not exist yet

    Args:
        db_file:    (Path) The index file
        dimension:  (int) Vector dimension the index must have
    """
    db_file = Path(db_file)
    if not db_file.exists():
        GetLogger().info(f"Creating new index {db_file} with dimension {dimension}")
        return VectorIndex(dimension)
    index = load(db_file)
    if index.dimension != dimension:
        raise InvalidArgumentError(f"Index {db_file} has dimension {index.dimension}, model has {dimension}")
    return index

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "db_file" : (StrType(), None),
    "model_file" : (StrType(), None),
    "input_path" : (StrType(), None),
    "json_file" : (OptionalValueType(StrType()), None),
    "seed" : (int, 0),
})
def index_add(db_file,
              model_file,
              input_path,
              json_file,
              seed):
    """
    Embed every SSG file and add or replace its entry in the index

    Args:
        db_file:    (str) Index file, created if it does not exist
        model_file: (str) Trained model
        input_path: (str) An .ssg.json file or a directory of them
        json_file:  (str) Also write a JSON dump of the index here
        seed:       (int) Unused, accepted like every command
    """
    localargs = locals()
    log = GetLogger()

    model = load_model(model_file)
    index = open_index(db_file, model.embed_size)
    ssg_files = find_files(input_path, SSG_SUFFIXES)
    progress = ProgressTracker(len(ssg_files), "graphs")
    items = []
    skipped = []
    for count, ssg_file in enumerate(ssg_files, start=1):
        ssg = read_ssg(ssg_file)
        vector = embed_ssg(ssg, model)
        if ssg.degenerate or not vector.any():
            log.warning(f"Skipping {ssg_file.name}: degenerate graph with {ssg.node_count} nodes")
            skipped.append(ssg_file.name)
        else:
            items.append(((ssg.origin_id, ssg.function_selector), vector))
        progress.update(count)

    index.add_many(items)
    persist(index, db_file)
    if json_file:
        export_json(index, json_file)
    metadata = MetadataFile(db_file)
    metadata.add("args", localargs)
    metadata.add("skipped", skipped)
    metadata.write()

    log.passed(f"Successfully added {len(items)} functions to {db_file}, index holds {len(index)}")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Embed SSG files and add them to a vector index")
    parser.add_argument("-d", "--db", required=True, type=StrType(), dest="db_file", metavar="FILENAME", help="Index file, created if it does not exist")
    parser.add_argument("-m", "--model", required=True, type=StrType(), dest="model_file", metavar="FILENAME", help="Trained model file")
    parser.add_argument("-i", "--input", required=True, type=StrType(), dest="input_path", metavar="PATH", help="An .ssg.json file or a directory of them")
    parser.add_argument("--json", type=StrType(), dest="json_file", metavar="FILENAME", help="Also write a JSON dump of the index")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(index_add, args)
