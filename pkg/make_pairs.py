#!/usr/bin/env python3
"""Sample labeled similar/dissimilar pairs from a corpus manifest"""

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, OptionalValueType, PositiveIntegerType, StrType
from pyapputil.logutil import GetLogger, logargs

from dataset import make_pairs as sample_pairs, read_manifest, write_pairs
from util import MetadataFile, add_global_args, run_command

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "manifest" : (StrType(), None),
    "out_file" : (StrType(), None),
    "positives" : (OptionalValueType(PositiveIntegerType()), None),
    "negatives" : (OptionalValueType(PositiveIntegerType()), None),
    "seed" : (int, 0),
})
def make_pairs(manifest,
               out_file,
               positives,
               negatives,
               seed):
    """
    Write a JSON lines pairs file

    Args:
        manifest:   (str) The corpus manifest
        out_file:   (str) The pairs file to write
        positives:  (int) Number of similar pairs, all of them if not given
        negatives:  (int) Number of dissimilar pairs, as many as positives if not given and available
        seed:       (int) Seed for the pairs random stream
    """
    localargs = locals()
    log = GetLogger()

    entries = read_manifest(manifest, load=False)
    sizes = {}
    for entry in entries:
        sizes[entry.source_function_id] = sizes.get(entry.source_function_id, 0) + 1
    available_positives = sum(size * (size - 1) // 2 for size in sizes.values())
    available_negatives = len(entries) * (len(entries) - 1) // 2 - available_positives
    if positives is None:
        positives = available_positives
    if negatives is None:
        negatives = min(positives, available_negatives)
    pairs = sample_pairs(entries, positives, negatives, seed)
    write_pairs(out_file, pairs)

    metadata = MetadataFile(out_file)
    metadata.add("args", localargs)
    metadata.add("positives", positives)
    metadata.add("negatives", negatives)
    metadata.write()

    log.passed(f"Successfully wrote {positives} similar and {negatives} dissimilar pairs to {out_file}")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Sample labeled similar/dissimilar pairs from a corpus manifest")
    parser.add_argument("-m", "--manifest", required=True, type=StrType(), metavar="FILENAME", help="Corpus manifest to sample from")
    parser.add_argument("-o", "--out", required=True, type=StrType(), dest="out_file", metavar="FILENAME", help="Pairs file to write")
    parser.add_argument("-p", "--positives", type=PositiveIntegerType(), metavar="COUNT", help="Number of similar pairs, defaults to every one available")
    parser.add_argument("-n", "--negatives", type=PositiveIntegerType(), metavar="COUNT", help="Number of dissimilar pairs, defaults to the number of similar pairs")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(make_pairs, args)
