#!/usr/bin/env python3
"""Train the SSG embedding network on labeled pairs"""

from pathlib import Path

from pyapputil.argutil import ArgumentParser
from pyapputil.typeutil import ValidateAndDefault, OptionalValueType, StrType, ItemList, PositiveIntegerType, PositiveNonZeroIntegerType
from pyapputil.logutil import GetLogger, logargs
from pyapputil.exceptutil import InvalidArgumentError

from dataset import corpus_graphs, read_manifest, read_pairs
from embedding import COMPONENTS, TrainingConfig, save_model, train
from util import MetadataFile, add_global_args, run_command, write_csv

LOG_HEADER = ("epoch", "train_loss", "val_loss", "val_auc")

def load_corpus(manifests):
    """Load the SSGs of one or more manifests keyed by class/variant"""
    graphs = {}
    for manifest in manifests:
        graphs.update(corpus_graphs(read_manifest(manifest)))
    return graphs

def format_log_value(value):
    return "" if value is None else repr(value)

@logargs
@ValidateAndDefault({
    # "arg_name" : (arg_type, arg_default)
    "pairs" : (StrType(), None),
    "corpus" : (ItemList(StrType()), None),
    "out_file" : (StrType(), None),
    "val_pairs" : (OptionalValueType(StrType()), None),
    "epochs" : (PositiveIntegerType(), 50),
    "lr" : (float, 0.001),
    "batch" : (PositiveNonZeroIntegerType(), 100),
    "embed_size" : (PositiveNonZeroIntegerType(), 64),
    "depth" : (PositiveIntegerType(), 1),
    "component" : (StrType(), "ssg"),
    "seed" : (int, 0),
})
def train_model(pairs,
                corpus,
                out_file,
                val_pairs,
                epochs,
                lr,
                batch,
                embed_size,
                depth,
                component,
                seed):
    """
    Train a model and write it with a training log CSV next to it

    Args:
        pairs:      (str) Training pairs file
        corpus:     (list of str) Manifests holding every SSG the pairs name
        out_file:   (str) Model file to write
        val_pairs:  (str) Validation pairs file used to keep the best epoch
        epochs:     (int) Training epochs
        lr:         (float) Adam learning rate
        batch:      (int) Pairs per mini-batch
        embed_size: (int) Embedding size
        depth:      (int) Message passing rounds
        component:  (str) "ssg", or "scfg" to train on control flow only
        seed:       (int) Seed for the init and shuffle random streams
    """
    localargs = locals()
    log = GetLogger()

    if component not in COMPONENTS:
        raise InvalidArgumentError(f"component must be one of {', '.join(COMPONENTS)}")
    if lr < 0:
        raise InvalidArgumentError("lr must not be negative")
    train_pairs = read_pairs(pairs)
    validation = read_pairs(val_pairs) if val_pairs else None
    graphs = load_corpus(corpus)
    log.info(f"Training on {len(train_pairs)} pairs over {len(graphs)} graphs")

    config = TrainingConfig(learning_rate=lr, batch_pairs=batch, epochs=epochs, embed_size=embed_size,
                            depth=depth, seed=seed, component=component)
    result = train(train_pairs, graphs, config, validation)

    out_file = Path(out_file)
    save_model(result.model, out_file)
    log_file = out_file.with_suffix(".log.csv")
    write_csv(log_file, LOG_HEADER, [[row["epoch"]] + [format_log_value(row[name]) for name in LOG_HEADER[1:]]
                                     for row in result.log])
    metadata = MetadataFile(out_file)
    metadata.add("args", localargs)
    metadata.add("best_epoch", result.best_epoch)
    metadata.add("training_log", str(log_file))
    metadata.write()

    log.passed(f"Successfully trained {out_file}, best epoch {result.best_epoch}")
    return True


if __name__ == '__main__':
    parser = ArgumentParser(description="Train the SSG embedding network on labeled pairs")
    parser.add_argument("-p", "--pairs", required=True, type=StrType(), metavar="FILENAME", help="Training pairs file")
    parser.add_argument("-c", "--corpus", required=True, type=StrType(), action="append", metavar="FILENAME", help="Corpus manifest, may be given more than once")
    parser.add_argument("-o", "--out", required=True, type=StrType(), dest="out_file", metavar="FILENAME", help="Model file to write")
    parser.add_argument("--val-pairs", type=StrType(), metavar="FILENAME", help="Validation pairs file used to keep the best epoch")
    parser.add_argument("--epochs", type=PositiveIntegerType(), default=50, metavar="COUNT", help="Training epochs")
    parser.add_argument("--lr", type=float, default=0.001, metavar="RATE", help="Adam learning rate")
    parser.add_argument("--batch", type=PositiveNonZeroIntegerType(), default=100, metavar="PAIRS", help="Pairs per mini-batch")
    parser.add_argument("--embed-size", type=PositiveNonZeroIntegerType(), default=64, metavar="SIZE", help="Embedding size")
    parser.add_argument("--depth", type=PositiveIntegerType(), default=1, metavar="ROUNDS", help="Message passing rounds")
    parser.add_argument("--component", type=StrType(), default="ssg", choices=COMPONENTS, help="Train on the whole SSG or on its control flow only")
    add_global_args(parser)
    args = parser.parse_args_to_dict()

    run_command(train_model, args)
