"""Helper functions for the ssg-similarity scripts"""
import csv
import io
import json
import logging
import os
from pathlib import Path
import sys
import tempfile
from time import time

import numpy as np
from pyapputil.logutil import GetLogger
from pyapputil.exceptutil import ApplicationError, InvalidArgumentError

# Exit codes shared by every command
EXIT_SUCCESS = 0
EXIT_PARTIAL = 1
EXIT_INVALID = 2

# Stream ids for the named random sub-generators
RNG_STREAMS = {
    "split": 1,
    "pairs": 2,
    "init": 3,
    "shuffle": 4,
    "synth": 5,
    "gradcheck": 6,
}

def default_json(obj):
    """Default serializer for json.dumps"""
    if hasattr(obj, 'to_json'):
        return obj.to_json()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f'Object of type {obj.__class__.__name__} is not JSON serializable')


class MetadataFile:
    """Sidecar file to hold metadata"""
    def __init__(self, parent_file):
        self.meta = {}
        self.parent_file = Path(parent_file)
        self.meta_file = self.parent_file.with_suffix(self.parent_file.suffix + ".meta")
        self.add("cmdline", " ".join(sys.argv))

    def add(self, key, value):
        self.meta[key] = value

    def write(self):
        # No timestamp here, reruns with the same arguments must produce identical files
        atomic_write_text(self.meta_file, json.dumps(self.meta, default=default_json, indent=2, sort_keys=True))


def named_rng(seed, stream):
    """
    Get a random generator for one named component of the pipeline

    Args:
        seed:   (int) The global seed
        stream: (str) The component name, one of RNG_STREAMS

    Returns:
        A numpy Generator
    """
    if stream not in RNG_STREAMS:
        raise InvalidArgumentError(f"Unknown random stream '{stream}'")
    return np.random.default_rng([int(seed), RNG_STREAMS[stream]])

def atomic_write_bytes(path, data):
    """
    Write a file by writing a temp file in the same directory and renaming it
    into place, so a reader never sees a partial file.

    Args:
        path:   (Path) The file to write
        data:   (bytes) The content
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as output:
            output.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise

def atomic_write_text(path, text):
    """Write a text file atomically"""
    atomic_write_bytes(path, text.encode("utf-8"))


class JsonLogFormatter(logging.Formatter):
    """Format each log record as a single JSON object"""

    def format(self, record):
        return json.dumps({
            "time": self.formatTime(record),
            "level": record.levelname,
            "message": record.getMessage(),
        })

def configure_logging(quiet=False, json_logs=False):
    """
    Apply the global logging flags shared by every command

    Args:
        quiet:      (bool) Only show warnings and errors
        json_logs:  (bool) Emit one JSON object per log record
    """
    log = GetLogger()
    if quiet:
        log.setLevel(logging.WARNING)
    if json_logs:
        handlers = list(log.handlers) or list(logging.getLogger().handlers)
        if not handlers:
            handler = logging.StreamHandler(sys.stderr)
            log.addHandler(handler)
            handlers = [handler]
        for handler in handlers:
            handler.setFormatter(JsonLogFormatter())

def run_command(command, args):
    """
    Run a command function and exit with its exit code. InvalidArgumentError
    maps to EXIT_INVALID and any other ApplicationError to EXIT_PARTIAL. A
    command returns an exit code, or True/False for success/partial failure.

    Args:
        command:    (callable) The command function, returning an exit code
        args:       (dict) Keyword arguments for the command
    """
    log = GetLogger()
    configure_logging(args.pop("quiet", False), args.pop("json_logs", False))
    try:
        retcode = command(**args)
    except InvalidArgumentError as ex:
        log.error(ex)
        retcode = EXIT_INVALID
    except ApplicationError as ex:
        log.error(ex)
        retcode = EXIT_PARTIAL
    except KeyboardInterrupt:
        log.warning("Aborted by user")
        retcode = EXIT_PARTIAL
    if retcode is True or retcode is None:
        retcode = EXIT_SUCCESS
    elif retcode is False:
        retcode = EXIT_PARTIAL
    sys.exit(int(retcode))

def add_global_args(parser, jobs=False):
    """Add the flags every command accepts"""
    parser.add_argument("--seed", type=int, default=0, metavar="INT", help="Seed for all random number generation")
    if jobs:
        parser.add_argument("-j", "--jobs", type=int, default=1, metavar="COUNT", help="Number of contracts to process in parallel")
    parser.add_argument("--quiet", action="store_true", help="Only show warnings and errors")
    parser.add_argument("--json-logs", action="store_true", help="Write log records as JSON objects")


class ProgressTracker:
    """
    Log percent complete and estimated time remaining while working through
    a known number of items
    """
    def __init__(self, total, unit="items", display_pct_interval=10, display_time_interval=180):
        self.log = GetLogger()
        self.unit = unit
        self.total = max(total, 1)
        self.count = 0
        self.start_time = time()
        self.last_pct = 0
        self.last_time = self.start_time
        self.pct_interval = display_pct_interval
        self.time_interval = display_time_interval

    def update(self, newcount, display=True):
        """Record how many items are done, logging when enough has changed"""
        self.count = newcount
        if display:
            self.display()

    def percent_complete(self):
        """Percent of items done, held at 99 until the last one finishes"""
        if self.count >= self.total:
            return 100
        return min(int(self.count * 100 / self.total), 99)

    def seconds_remaining(self):
        if self.count <= 0:
            return 0
        per_item = (time() - self.start_time) / self.count
        return int(per_item * (self.total - self.count))

    def display(self):
        now = time()
        current = self.percent_complete()
        if current == self.last_pct:
            return
        if current == 100:
            self.log.info(f"   100% of {self.total} {self.unit} ({int(now - self.start_time)} sec elapsed)")
            self.last_pct = current
            return
        remaining = self.seconds_remaining()
        if remaining > 0 and (current >= self.last_pct + self.pct_interval or now - self.last_time > self.time_interval):
            self.log.info(f"    {current}% of {self.total} {self.unit} - {remaining} sec remaining")
            self.last_pct = current
            self.last_time = now

def find_files(path, suffixes):
    """
    Expand an input path into a sorted list of files

    Args:
        path:       (str or Path) A file, or a directory to search
        suffixes:   (tuple of str) File name endings to accept in a directory

    Returns:
        A list of Path
    """
    path = Path(path)
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise InvalidArgumentError(f"{path} does not exist")
    return sorted(item for item in path.iterdir() if item.is_file() and item.name.endswith(tuple(suffixes)))

def write_csv(path, header, rows):
    """Write a CSV file atomically"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buffer.getvalue())
