#!/usr/bin/env python3
"""Measure how well a model separates similar from dissimilar function pairs"""

from pathlib import Path

import numpy as np
from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, StrType, ItemList, PositiveNonZeroIntegerType
from pyapputil.logutil import GetLogger, logargs

from dataset import compute_auc, read_pairs
from embedding import load_model, prepare_pairs, score_pairs, siamese_loss
from train_model import load_corpus
from util import MetadataFile, add_global_args, run_command, write_csv

def score_histogram(scores, labels, bins):
    """
    Count positive and negative pair scores per bin over [-1, 1]

    Returns:
        A list of (bin_low, bin_high, positives, negatives) rows
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    positives, _ = np.histogram(scores[labels > 0], bins=edges)
    negatives, _ = np.histogram(scores[labels < 0], bins=edges)
    return [(f"{edges[idx]:.4f}", f"{edges[idx + 1]:.4f}", int(positives[idx]), int(negatives[idx]))
            for idx in range(bins)]

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "pairs" : (StrType(), None),
    "corpus" : (ItemList(StrType()), None),
    "model_file" : (StrType(), None),
    "out_file" : (StrType(), None),
    "bins" : (PositiveNonZeroIntegerType(), 20),
    "seed" : (int, 0),
})
def evaluate_model(pairs,
                   corpus,
                   model_file,
                   out_file,
                   bins,
                   seed):
    """
    Score every pair, print the AUC, and write the per-pair scores and a
    score histogram as CSV

    Args:
        pairs:      (str) Labeled pairs file
        corpus:     (list of str) Manifests holding every SSG the pairs name
        model_file: (str) Trained model
        out_file:   (str) Per-pair scores CSV, the histogram goes next to it
        bins:       (int) Histogram bins over [-1, 1]
        seed:       (int) Unused, accepted like every command
    """
    localargs = locals()
    log = GetLogger()

    labeled = read_pairs(pairs)
    model = load_model(model_file)
    tensors = prepare_pairs(model, labeled, load_corpus(corpus))
    scores = score_pairs(model, labeled, tensors)
    labels = [pair.y for pair in labeled]
    auc = compute_auc(scores, labels)
    loss = siamese_loss(scores, labels)

    out_file = Path(out_file)
    write_csv(out_file, ("a", "b", "y", "score"),
              [(pair.a, pair.b, pair.y, repr(score)) for pair, score in zip(labeled, scores)])
    histogram_file = out_file.with_suffix(".hist.csv")
    write_csv(histogram_file, ("bin_low", "bin_high", "positives", "negatives"), score_histogram(scores, labels, bins))
    metadata = MetadataFile(out_file)
    metadata.add("args", localargs)
    metadata.add("auc", auc)
    metadata.add("loss", loss)
    metadata.add("histogram", str(histogram_file))
    metadata.write()

    print(f"AUC {auc:.4f}")
    log.passed(f"Successfully evaluated {len(labeled)} pairs, loss {loss:.6f}, AUC {auc:.4f}")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Measure how well a model separates similar from dissimilar function pairs")
    parser.add_argument("-p", "--pairs", required=True, type=StrType(), metavar="FILENAME", help="Labeled pairs file")
    parser.add_argument("-c", "--corpus", required=True, type=StrType(), action="append", metavar="FILENAME", help="Corpus manifest, may be given more than once")
    parser.add_argument("-m", "--model", required=True, type=StrType(), dest="model_file", metavar="FILENAME", help="Trained model file")
    parser.add_argument("-o", "--out", required=True, type=StrType(), dest="out_file", metavar="FILENAME", help="Per-pair scores CSV to write")
    parser.add_argument("--bins", type=PositiveNonZeroIntegerType(), default=20, metavar="COUNT", help="Histogram bins")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(evaluate_model, args)
