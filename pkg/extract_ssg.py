#!/usr/bin/env python3
"""Extract the Stable-Semantic Graph of every function of runtime bytecode"""

from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, StrType, PositiveNonZeroIntegerType
from pyapputil.logutil import GetLogger, logargs
from pyapputil.exceptutil import ApplicationError

from cfg import VISIT_BUDGET
from evm import UnreadableInput, load_bytecode
from ssg import TAINT_BUDGET, extract_contract, ssg_filename, write_ssg
from util import EXIT_INVALID, EXIT_PARTIAL, EXIT_SUCCESS, MetadataFile, ProgressTracker, add_global_args, find_files, run_command

HEX_SUFFIXES = (".hex", ".bin")

def extract_file(hex_file, out_dir, visit_budget=VISIT_BUDGET, taint_budget=TAINT_BUDGET):
    """
    Extract one contract and write its SSG files

    Args:
        hex_file:       (Path) Hex file of runtime bytecode
        out_dir:        (Path) Directory to write the SSG files to
        visit_budget:   (int) CFG simulation budget per function
        taint_budget:   (int) Taint budget per sink

    Returns:
        (list of written file names, error message or None, True if the file could not be read)
    """
    log = GetLogger()
    try:
        code = load_bytecode(hex_file)
        ssgs = extract_contract(code, visit_budget, taint_budget)
    except UnreadableInput as ex:
        return [], str(ex), True
    except ApplicationError as ex:
        return [], str(ex), False
    written = []
    for selector, ssg in sorted(ssgs.items()):
        for warning in ssg.warnings:
            log.warning(f"{code.origin_id} {selector}: {warning}")
        out_file = Path(out_dir) / ssg_filename(code.origin_id, selector)
        write_ssg(out_file, ssg)
        written.append(out_file.name)
    return written, None, False

def _extract_job(job):
    return extract_file(*job)

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "input_path" : (StrType(), None),
    "out_dir" : (StrType(), None),
    "jobs" : (PositiveNonZeroIntegerType(), 1),
    "visit_budget" : (PositiveNonZeroIntegerType(), VISIT_BUDGET),
    "taint_budget" : (PositiveNonZeroIntegerType(), TAINT_BUDGET),
    "seed" : (int, 0),
})
def extract(input_path,
            out_dir,
            jobs,
            visit_budget,
            taint_budget,
            seed):
    """
    Extract SSG JSON files from one hex file or a directory of them

    Args:
        input_path:     (str) A hex file or a directory of .hex/.bin files
        out_dir:        (str) Directory to write <origin>_<selector>.ssg.json files to
        jobs:           (int) Number of contracts to process in parallel
        visit_budget:   (int) CFG simulation budget per function
        taint_budget:   (int) Taint budget per sink
        seed:           (int) Unused, accepted like every command
    """
    localargs = locals()
    log = GetLogger()

    hex_files = find_files(input_path, HEX_SUFFIXES)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not hex_files:
        log.warning(f"No bytecode files found in {input_path}")

    log.info(f"Extracting SSGs from {len(hex_files)} contracts")
    work = [(hex_file, out_dir, visit_budget, taint_budget) for hex_file in hex_files]
    progress = ProgressTracker(len(work), "contracts")
    results = []
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for count, result in enumerate(pool.map(_extract_job, work), start=1):
                results.append(result)
                progress.update(count)
    else:
        for count, job in enumerate(work, start=1):
            results.append(_extract_job(job))
            progress.update(count)

    written = []
    failed = []
    unreadable = []
    for hex_file, (files, error, cannot_read) in zip(hex_files, results):
        if error:
            log.error(f"Skipping {hex_file}: {error}")
            failed.append(str(hex_file))
        if cannot_read:
            unreadable.append(str(hex_file))
        written.extend(files)

    metadata = MetadataFile(out_dir / "extract")
    metadata.add("args", localargs)
    metadata.add("files", sorted(written))
    metadata.add("failed", failed)
    metadata.write()

    if unreadable:
        log.error(f"Could not read {len(unreadable)} input files")
        return EXIT_INVALID
    if failed:
        log.warning(f"Wrote {len(written)} SSG files, {len(failed)} contracts failed")
        return EXIT_PARTIAL
    log.passed(f"Successfully wrote {len(written)} SSG files to {out_dir}")
    return EXIT_SUCCESS


if __name__ == '__main__':
    parser = ArgumentParser(description="Extract the Stable-Semantic Graph of every function of runtime bytecode. Input must be runtime code, not deployment code.")
    parser.add_argument("-i", "--input", required=True, type=StrType(), dest="input_path", metavar="PATH", help="Hex file of runtime bytecode, or a directory of them")
    parser.add_argument("-o", "--out", required=True, type=StrType(), dest="out_dir", metavar="DIRNAME", help="Directory to write the SSG JSON files to")
    parser.add_argument("--visit-budget", type=PositiveNonZeroIntegerType(), default=VISIT_BUDGET, metavar="COUNT", help="Max (block, stack state) pairs explored per function")
    parser.add_argument("--taint-budget", type=PositiveNonZeroIntegerType(), default=TAINT_BUDGET, metavar="COUNT", help="Max value definitions visited per sink")
    add_global_args(parser, jobs=True)
    args = parser.parse_args_to_dict()

    run_command(extract, args)
