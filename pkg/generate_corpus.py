#!/usr/bin/env python3
"""Generate a synthetic corpus of function variants and extract their SSGs"""

from pathlib import Path

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, StrType, PositiveNonZeroIntegerType
from pyapputil.logutil import GetLogger, logargs
from pyapputil.exceptutil import InvalidArgumentError

from cfg import FALLBACK
from dataset import CorpusEntry, write_manifest
from ssg import extract_contract, ssg_filename, write_ssg
from synth import generate_corpus as generate_contracts
from util import MetadataFile, ProgressTracker, add_global_args, atomic_write_text, run_command

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "out_dir" : (StrType(), None),
    "classes" : (PositiveNonZeroIntegerType(), 20),
    "variants" : (PositiveNonZeroIntegerType(), 4),
    "min_statements" : (PositiveNonZeroIntegerType(), 2),
    "max_statements" : (PositiveNonZeroIntegerType(), 6),
    "seed" : (int, 0),
})
def generate_corpus(out_dir,
                    classes,
                    variants,
                    min_statements,
                    max_statements,
                    seed):
    """
    Write contracts/<origin>.hex, ssg/<origin>_<selector>.ssg.json and a
    manifest.json mapping class/variant ids to the SSG files

    Args:
        out_dir:        (str) Directory to create the corpus in
        classes:        (int) Number of source functions
        variants:       (int) Variants compiled from each function
        min_statements: (int) Fewest statements per function
        max_statements: (int) Most statements per function
        seed:           (int) Seed for the synth random stream
    """
    localargs = locals()
    log = GetLogger()

    if min_statements > max_statements:
        raise InvalidArgumentError("min_statements cannot be larger than max_statements")
    out_dir = Path(out_dir)
    contracts = generate_contracts(classes, variants, seed, min_statements, max_statements)

    log.info(f"Extracting SSGs from {len(contracts)} synthetic contracts")
    progress = ProgressTracker(len(contracts), "contracts")
    entries = []
    for count, contract in enumerate(contracts, start=1):
        atomic_write_text(out_dir / "contracts" / f"{contract.origin_id}.hex", contract.code.code.hex() + "\n")
        ssgs = extract_contract(contract.code)
        # Synthetic contracts have one function besides the reverting fallback
        selector = next((sel for sel in sorted(ssgs) if sel != FALLBACK), FALLBACK)
        ssg_file = out_dir / "ssg" / ssg_filename(contract.origin_id, selector)
        write_ssg(ssg_file, ssgs[selector])
        entries.append(CorpusEntry(contract.class_id, contract.variant_id, ssg_file))
        progress.update(count)

    manifest = out_dir / "manifest.json"
    write_manifest(manifest, entries)
    metadata = MetadataFile(manifest)
    metadata.add("args", localargs)
    metadata.add("variants", {f"{c.class_id}/{c.variant_id}": c.options.tag() for c in contracts})
    metadata.write()

    log.passed(f"Successfully generated {len(entries)} variants of {classes} functions in {out_dir}")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Generate a synthetic corpus of function variants and extract their SSGs")
    parser.add_argument("-o", "--out", required=True, type=StrType(), dest="out_dir", metavar="DIRNAME", help="Directory to create the corpus in")
    parser.add_argument("-c", "--classes", type=PositiveNonZeroIntegerType(), default=20, metavar="COUNT", help="Number of source functions")
    parser.add_argument("-v", "--variants", type=PositiveNonZeroIntegerType(), default=4, metavar="COUNT", help="Variants compiled from each function")
    parser.add_argument("--min-statements", type=PositiveNonZeroIntegerType(), default=2, metavar="COUNT", help="Fewest statements per function")
    parser.add_argument("--max-statements", type=PositiveNonZeroIntegerType(), default=6, metavar="COUNT", help="Most statements per function")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(generate_corpus, args)
