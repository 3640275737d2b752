"""Corpus manifests, class-disjoint splits, labeled pairs and evaluation metrics"""
from dataclasses import dataclass
import json
import os
from itertools import combinations
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata
from pyapputil.logutil import GetLogger
from pyapputil.exceptutil import ApplicationError, InvalidArgumentError

from ssg import read_ssg
from util import atomic_write_text, named_rng

MIN_SPLIT_CLASSES = 10
# Train, validation and test shares in tenths
SPLIT_TENTHS = (7, 2, 1)
MANIFEST_VERSION = 1
# Past this many candidate negative pairs, sample by rejection instead of enumerating
NEGATIVE_ENUMERATION_LIMIT = 200000

class TooFewClasses(InvalidArgumentError):
    """Raised when a corpus has too few source functions to split"""

class InsufficientVariants(InvalidArgumentError):
    """Raised when more pairs are requested than the corpus can supply"""

class SingleClass(InvalidArgumentError):
    """Raised when a metric needs both labels but only one is present"""

class CorpusFormatError(ApplicationError):
    """Raised when a manifest or pairs file is malformed"""


@dataclass
class CorpusEntry:
    """One variant of one source function"""
    source_function_id: str
    variant_id: str
    ssg_path: Path = None
    ssg: object = None

    @property
    def key(self):
        return f"{self.source_function_id}/{self.variant_id}"


class LabeledPair(NamedTuple):
    """Two corpus keys and +1 if they share a source function, -1 otherwise"""
    a: str
    b: str
    y: int

    def to_json(self):
        return {"a": self.a, "b": self.b, "y": self.y}


def _check_unique(entries):
    seen = set()
    for entry in entries:
        if entry.key in seen:
            raise CorpusFormatError(f"Duplicate corpus entry {entry.key}")
        seen.add(entry.key)

def _classes(entries):
    return sorted({entry.source_function_id for entry in entries})

def split_corpus(entries, seed):
    """
    Split a corpus 70/20/10 into train, validation and test sets by source
    function, so no function class appears in two sets. Rounding remainders go
    to the training set.

    Args:
        entries:    (list of CorpusEntry) The corpus
        seed:       (int) Seed for the "split" random stream

    Returns:
        (train, val, test) lists of CorpusEntry
    """
    _check_unique(entries)
    classes = _classes(entries)
    if len(classes) < MIN_SPLIT_CLASSES:
        raise TooFewClasses(f"Need at least {MIN_SPLIT_CLASSES} source functions to split, found {len(classes)}")
    order = named_rng(seed, "split").permutation(len(classes))
    n_val = len(classes) * SPLIT_TENTHS[1] // 10
    n_test = len(classes) * SPLIT_TENTHS[2] // 10
    n_train = len(classes) - n_val - n_test
    shuffled = [classes[idx] for idx in order]
    assignment = {}
    for idx, name in enumerate(shuffled):
        assignment[name] = 0 if idx < n_train else (1 if idx < n_train + n_val else 2)
    splits = ([], [], [])
    for entry in sorted(entries, key=lambda e: e.key):
        splits[assignment[entry.source_function_id]].append(entry)
    GetLogger().debug(f"Split {len(classes)} classes into {n_train}/{n_val}/{n_test}")
    return splits

def make_pairs(entries, n_pos, n_neg, seed):
    """
    Sample labeled pairs without repeating an unordered pair

    Args:
        entries:    (list of CorpusEntry) The corpus
        n_pos:      (int) Number of same-function pairs
        n_neg:      (int) Number of different-function pairs
        seed:       (int) Seed for the "pairs" random stream

    Returns:
        A list of LabeledPair, positives first
    """
    _check_unique(entries)
    keys = sorted(entry.key for entry in entries)
    owner = {entry.key: entry.source_function_id for entry in entries}
    positives = [(a, b) for a, b in combinations(keys, 2) if owner[a] == owner[b]]
    total = len(keys) * (len(keys) - 1) // 2
    negative_count = total - len(positives)
    if n_pos > len(positives):
        raise InsufficientVariants(f"Requested {n_pos} similar pairs but the corpus has {len(positives)}")
    if n_neg > negative_count:
        raise InsufficientVariants(f"Requested {n_neg} dissimilar pairs but the corpus has {negative_count}")

    rng = named_rng(seed, "pairs")
    pairs = [LabeledPair(*positives[idx], 1) for idx in rng.choice(len(positives), size=n_pos, replace=False)] if n_pos else []
    if not n_neg:
        return pairs

    if negative_count <= NEGATIVE_ENUMERATION_LIMIT:
        negatives = [(a, b) for a, b in combinations(keys, 2) if owner[a] != owner[b]]
        pairs += [LabeledPair(*negatives[idx], -1) for idx in rng.choice(len(negatives), size=n_neg, replace=False)]
        return pairs

    chosen = set()
    while len(chosen) < n_neg:
        first, second = rng.integers(0, len(keys), size=2)
        a, b = sorted((keys[first], keys[second]))
        if owner[a] == owner[b] or (a, b) in chosen:
            continue
        chosen.add((a, b))
        pairs.append(LabeledPair(a, b, -1))
    return pairs

def compute_auc(scores, labels):
    """
    Area under the ROC curve from the rank sum of the positive scores. Tied
    scores count half.

    Args:
        scores: (list of float) Score of each pair
        labels: (list of int) +1 or -1 for each pair

    Returns:
        A float in [0, 1]
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise InvalidArgumentError("scores and labels must be the same length")
    positive = labels > 0
    n_pos = int(positive.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both similar and dissimilar pairs")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


class EdgeScore(NamedTuple):
    """Precision, recall and F1 of a predicted edge set"""
    precision: float
    recall: float
    f1: float

def edge_f1(predicted, expected):
    """
    Compare predicted edges with hand-labeled ones

    Args:
        predicted:  (iterable) Predicted edges, any hashable form
        expected:   (iterable) Expected edges in the same form

    Returns:
        An EdgeScore. Two empty sets score 1.0.
    """
    predicted = set(predicted)
    expected = set(expected)
    if not predicted and not expected:
        return EdgeScore(1.0, 1.0, 1.0)
    hits = len(predicted & expected)
    precision = hits / len(predicted) if predicted else 0.0
    recall = hits / len(expected) if expected else 0.0
    f1 = 2 * precision * recall / (precision + recall) if hits else 0.0
    return EdgeScore(precision, recall, f1)


#
# Files
#

def write_manifest(path, entries):
    """
    Write a corpus manifest, storing SSG paths relative to the manifest

    Args:
        path:       (Path) The manifest file
        entries:    (list of CorpusEntry) Entries with ssg_path set
    """
    path = Path(path)
    base = path.parent.resolve()
    items = []
    for entry in sorted(entries, key=lambda e: e.key):
        ssg_path = Path(entry.ssg_path).resolve()
        try:
            stored = Path(os.path.relpath(ssg_path, base)).as_posix()
        except ValueError:
            # No relative path across drives
            stored = ssg_path.as_posix()
        items.append({"class": entry.source_function_id, "variant": entry.variant_id, "ssg": stored})
    atomic_write_text(path, json.dumps({"version": MANIFEST_VERSION, "entries": items}, indent=2, sort_keys=True) + "\n")

def read_manifest(path, load=True):
    """
    Read a corpus manifest

    Args:
        path:   (Path) The manifest file
        load:   (bool) Also load every SSG

    Returns:
        A list of CorpusEntry
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as infile:
            doc = json.load(infile)
    except (OSError, json.JSONDecodeError) as ex:
        raise CorpusFormatError(f"Could not read manifest {path}: {ex}") from ex
    if doc.get("version") != MANIFEST_VERSION:
        raise CorpusFormatError(f"Unsupported manifest version {doc.get('version')}")
    entries = []
    try:
        for item in doc["entries"]:
            entry = CorpusEntry(str(item["class"]), str(item["variant"]), path.parent / item["ssg"])
            if load:
                entry.ssg = read_ssg(entry.ssg_path)
            entries.append(entry)
    except (KeyError, TypeError) as ex:
        raise CorpusFormatError(f"Malformed manifest {path}: {ex}") from ex
    _check_unique(entries)
    return entries

def corpus_graphs(entries):
    """Map each entry key to its Ssg"""
    return {entry.key: entry.ssg for entry in entries}

def write_pairs(path, pairs):
    """Write pairs as JSON lines"""
    atomic_write_text(path, "".join(json.dumps(pair.to_json(), sort_keys=True) + "\n" for pair in pairs))

def read_pairs(path):
    """Read a JSON lines pairs file"""
    pairs = []
    try:
        with open(path, "r", encoding="utf-8") as infile:
            for line_number, line in enumerate(infile, start=1):
                if not line.strip():
                    continue
                item = json.loads(line)
                if item["y"] not in (1, -1):
                    raise CorpusFormatError(f"{path} line {line_number}: label must be 1 or -1")
                pairs.append(LabeledPair(str(item["a"]), str(item["b"]), int(item["y"])))
    except OSError as ex:
        raise CorpusFormatError(f"Could not read pairs {path}: {ex}") from ex
    except (json.JSONDecodeError, KeyError, TypeError) as ex:
        raise CorpusFormatError(f"Malformed pairs file {path}: {ex}") from ex
    return pairs
