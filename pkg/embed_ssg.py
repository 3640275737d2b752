#!/usr/bin/env python3
"""Embed SSG files with a trained model and write the vectors as CSV"""

from pathlib import Path

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, StrType
from pyapputil.logutil import GetLogger, logargs

from embedding import embed_ssg, load_model
from ssg import read_ssg
from util import MetadataFile, ProgressTracker, add_global_args, find_files, run_command, write_csv

SSG_SUFFIXES = (".ssg.json",)

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "model_file" : (StrType(), None),
    "input_path" : (StrType(), None),
    "out_file" : (StrType(), None),
    "seed" : (int, 0),
})
def embed(model_file,
          input_path,
          out_file,
          seed):
    """
    Write one CSV row per function: origin_id, selector, v0..v(p-1)

    Args:
        model_file: (str) Trained model
        input_path: (str) An .ssg.json file or a directory of them
        out_file:   (str) CSV file to write
        seed:       (int) Unused, accepted like every command
    """
    localargs = locals()
    log = GetLogger()

    model = load_model(model_file)
    ssg_files = find_files(input_path, SSG_SUFFIXES)
    if not ssg_files:
        log.warning(f"No SSG files found in {input_path}")
    progress = ProgressTracker(len(ssg_files), "graphs")
    rows = []
    for count, ssg_file in enumerate(ssg_files, start=1):
        ssg = read_ssg(ssg_file)
        vector = embed_ssg(ssg, model)
        rows.append([ssg.origin_id, ssg.function_selector] + [repr(float(x)) for x in vector])
        progress.update(count)

    write_csv(out_file, ["origin_id", "selector"] + [f"v{idx}" for idx in range(model.embed_size)], rows)
    metadata = MetadataFile(Path(out_file))
    metadata.add("args", localargs)
    metadata.write()

    log.passed(f"Successfully embedded {len(rows)} functions into {out_file}")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Embed SSG files with a trained model and write the vectors as CSV")
    parser.add_argument("-m", "--model", required=True, type=StrType(), dest="model_file", metavar="FILENAME", help="Trained model file")
    parser.add_argument("-i", "--input", required=True, type=StrType(), dest="input_path", metavar="PATH", help="An .ssg.json file or a directory of them")
    parser.add_argument("-o", "--out", required=True, type=StrType(), dest="out_file", metavar="FILENAME", help="CSV file to write")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(embed, args)
