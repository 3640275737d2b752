#!/usr/bin/env python3
"""Split a corpus manifest 70/20/10 into train, validation and test manifests"""

from pathlib import Path

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, StrType
from pyapputil.logutil import GetLogger, logargs

from dataset import read_manifest, split_corpus, write_manifest
from util import MetadataFile, add_global_args, run_command

SPLIT_NAMES = ("train", "val", "test")

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "manifest" : (StrType(), None),
    "out_dir" : (StrType(), None),
    "seed" : (int, 0),
})
def split(manifest,
          out_dir,
          seed):
    """
    Write train.json, val.json and test.json manifests with no source function
    shared between them

    Args:
        manifest:   (str) The corpus manifest to split
        out_dir:    (str) Directory to write the three manifests to
        seed:       (int) Seed for the split random stream
    """
    localargs = locals()
    log = GetLogger()

    entries = read_manifest(manifest, load=False)
    out_dir = Path(out_dir)
    for name, part in zip(SPLIT_NAMES, split_corpus(entries, seed)):
        out_file = out_dir / f"{name}.json"
        write_manifest(out_file, part)
        metadata = MetadataFile(out_file)
        metadata.add("args", localargs)
        metadata.add("classes", sorted({entry.source_function_id for entry in part}))
        metadata.write()
        log.info(f"{name}: {len(part)} entries")

    log.passed(f"Successfully split {manifest} into {out_dir}")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Split a corpus manifest 70/20/10 into train, validation and test manifests")
    parser.add_argument("-m", "--manifest", required=True, type=StrType(), metavar="FILENAME", help="Corpus manifest to split")
    parser.add_argument("-o", "--out", required=True, type=StrType(), dest="out_dir", metavar="DIRNAME", help="Directory to write train.json, val.json and test.json to")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(split, args)
